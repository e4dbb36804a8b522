#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <numeric>

#include "gpdm/dataio.hpp"
#include "gpdm/train.hpp"
#include "gpdm/util.hpp"
#include "support/oracles.hpp"
#include "support/tempdir.hpp"

using namespace gpdm;

namespace {

KernelSpec rbf_spec(double amp, double inv_len) {
  KernelSpec s;
  KernelTerm t;
  t.kind = KernelKind::Rbf;
  t.weight = 1.0;
  t.theta = {amp, inv_len};
  s.terms.push_back(t);
  return s;
}

// Dense per-entry Gram matrix without jitter, as an independent reference.
Eigen::MatrixXd dense_gram(const KernelSpec& spec, const Eigen::MatrixXd& rows) {
  Eigen::MatrixXd K(rows.rows(), rows.rows());
  for (Eigen::Index i = 0; i < rows.rows(); ++i)
    for (Eigen::Index j = 0; j < rows.rows(); ++j)
      K(i, j) = eval_kernel(spec, rows.row(i).transpose(),
                            rows.row(j).transpose(), i == j);
  return K;
}

// Attribute-only dataset for assembly-based tests.
BatteryDataset synthetic_dataset(const std::string& id, int n, Rng& rng) {
  BatteryDataset ds;
  ds.battery_id = id;
  ds.grid = 0;
  ds.attribute_names = {"midpoint_voltage", "energy"};
  ds.attributes.resize(n, 2);
  for (int i = 0; i < n; ++i) {
    CycleRecord rec;
    rec.index = i + 1;
    rec.raw_index = i + 1;
    rec.capacity = 2.0 - 0.004 * i;
    rec.soh = rec.capacity / 2.0;
    ds.cycles.push_back(rec);
    ds.attributes(i, 0) = 3.5 + 0.1 * ds.cycles[i].soh + 0.02 * rng.normal();
    ds.attributes(i, 1) = 300.0 + 40.0 * ds.cycles[i].soh + 2.0 * rng.normal();
  }
  for (int a = 0; a < 2; ++a)
    ds.attribute_ranges.push_back(fit_minmax(ds.attributes.col(a)));
  return ds;
}

TrainingSet plain_set(const Eigen::MatrixXd& Y) {
  TrainingSet ts;
  ts.Y = Y;
  ts.columns.resize(Y.cols());
  for (Eigen::Index d = 0; d < Y.cols(); ++d)
    ts.columns[d] = "col" + std::to_string(d);
  return ts;
}

}  // namespace

// ---------------------------------------------------------------------------
// pca_init
// ---------------------------------------------------------------------------

TEST_CASE("pca with a single varying column recovers that column") {
  const int T = 12;
  Eigen::MatrixXd Y(T, 3);
  Rng rng(11);
  for (int i = 0; i < T; ++i) {
    Y(i, 0) = 2.0;
    Y(i, 1) = rng.normal(0.0, 1.5);
    Y(i, 2) = -1.0;
  }
  PcaResult pca = pca_init(Y, 1);
  Eigen::VectorXd centered = Y.col(1).array() - Y.col(1).mean();
  CHECK((pca.X.col(0) - centered).cwiseAbs().maxCoeff() < 1e-8);
  double var = centered.squaredNorm() / (T - 1);
  CHECK(pca.variances(0) == doctest::Approx(var).epsilon(1e-10));
  CHECK(!pca.degenerate);
}

TEST_CASE("full-rank pca reconstructs the data") {
  Rng rng(29);
  Eigen::MatrixXd Y = oracle::random_matrix(rng, 20, 4, 2.0);
  PcaResult pca = pca_init(Y, 4);
  Eigen::MatrixXd recon =
      (pca.X * pca.W.transpose()).rowwise() + pca.mean.transpose();
  CHECK((recon - Y).cwiseAbs().maxCoeff() < 1e-8);
  Eigen::MatrixXd gramW = pca.W.transpose() * pca.W;
  CHECK((gramW - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("pca latent variances equal sample covariance eigenvalues") {
  Rng rng(31);
  const int T = 50, D = 4;
  Eigen::MatrixXd Y = oracle::random_matrix(rng, T, D, 1.0);
  Y.col(2) *= 3.0;  // spread the spectrum

  Eigen::MatrixXd Yc = Y.rowwise() - Y.colwise().mean();
  Eigen::MatrixXd C = Yc.transpose() * Yc / double(T - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C);

  PcaResult pca = pca_init(Y, D);
  for (int q = 0; q < D; ++q) {
    CHECK(pca.variances(q) ==
          doctest::Approx(es.eigenvalues()(D - 1 - q)).epsilon(1e-8));
    double col_var = pca.X.col(q).squaredNorm() / (T - 1);
    CHECK(col_var == doctest::Approx(pca.variances(q)).epsilon(1e-8));
  }
  // descending order
  for (int q = 0; q + 1 < D; ++q) CHECK(pca.variances(q) >= pca.variances(q + 1));
}

TEST_CASE("pca flags zero-variance data instead of failing") {
  Eigen::MatrixXd Y = Eigen::MatrixXd::Constant(6, 3, 4.2);
  PcaResult pca = pca_init(Y, 2);
  CHECK(pca.degenerate);
  CHECK(pca.X.rows() == 6);
  CHECK(pca.X.cols() == 2);
  CHECK(pca.X.cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(pca_init(Y, 4), std::invalid_argument);
  CHECK_THROWS_AS(pca_init(Y, 0), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// minimize
// ---------------------------------------------------------------------------

namespace {

// Convex quadratic with known minimizer, for optimizer checks.
struct Quadratic {
  Eigen::MatrixXd M;
  Eigen::VectorXd a;

  double operator()(const Eigen::VectorXd& x, Eigen::VectorXd* grad) const {
    Eigen::VectorXd r = x - a;
    Eigen::VectorXd Mr = M * r;
    if (grad) *grad = Mr;
    return 0.5 * r.dot(Mr);
  }
};

Quadratic make_quadratic(int n, uint64_t seed) {
  Rng rng(seed);
  Quadratic q;
  Eigen::MatrixXd B = oracle::random_matrix(rng, n, n, 1.0);
  q.M = B * B.transpose() + 0.5 * Eigen::MatrixXd::Identity(n, n);
  q.a = oracle::random_matrix(rng, n, 1, 2.0);
  return q;
}

}  // namespace

TEST_CASE("conjugate gradients solve a convex quadratic") {
  Quadratic q = make_quadratic(6, 101);
  MinimizeOptions opt;
  opt.rel_tol = 1e-9;
  MinimizeResult res = minimize(q, Eigen::VectorXd::Zero(6), opt);

  CHECK(res.converged);
  CHECK((res.x - q.a).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(res.grad_norm < opt.rel_tol * (1.0 + std::abs(res.trace.back())));
  REQUIRE(res.trace.size() >= 2);
  for (size_t i = 0; i + 1 < res.trace.size(); ++i)
    CHECK(res.trace[i + 1] <= res.trace[i]);
}

TEST_CASE("steepest descent also reaches the quadratic optimum") {
  Quadratic q = make_quadratic(4, 102);
  MinimizeOptions opt;
  opt.method = "gd";
  opt.max_iters = 5000;
  opt.rel_tol = 1e-8;
  MinimizeResult res = minimize(q, Eigen::VectorXd::Zero(4), opt);
  CHECK(res.converged);
  CHECK((res.x - q.a).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("zero-iteration minimize records the start and reports not converged") {
  Quadratic q = make_quadratic(3, 103);
  MinimizeOptions opt;
  opt.max_iters = 0;
  Eigen::VectorXd x0 = Eigen::VectorXd::Ones(3);
  MinimizeResult res = minimize(q, x0, opt);
  CHECK(res.x == x0);
  CHECK(res.iters == 0);
  REQUIRE(res.trace.size() == 1);
  CHECK(res.trace[0] == q(x0, nullptr));
  CHECK(!res.converged);
}

TEST_CASE("minimize is deterministic and validates its inputs") {
  Quadratic q = make_quadratic(5, 104);
  MinimizeOptions opt;
  opt.max_iters = 40;
  Eigen::VectorXd x0 = Eigen::VectorXd::Constant(5, 0.3);
  MinimizeResult a = minimize(q, x0, opt);
  MinimizeResult b = minimize(q, x0, opt);
  CHECK(a.trace == b.trace);
  CHECK(a.x == b.x);

  opt.method = "newton";
  CHECK_THROWS_AS(minimize(q, x0, opt), std::invalid_argument);
  opt.method = "cg";
  opt.rel_tol = 0.0;
  CHECK_THROWS_AS(minimize(q, x0, opt), std::invalid_argument);

  auto bad = [](const Eigen::VectorXd&, Eigen::VectorXd* g) {
    if (g) g->setZero();
    return std::numeric_limits<double>::quiet_NaN();
  };
  MinimizeOptions def;
  CHECK_THROWS_AS(minimize(bad, x0, def), DomainError);
}

// ---------------------------------------------------------------------------
// parameter packing
// ---------------------------------------------------------------------------

namespace {

GpdmParams small_params(uint64_t seed, int T, int D, int Q) {
  Rng rng(seed);
  GpdmParams p;
  p.X = oracle::random_matrix(rng, T, Q, 1.0);
  p.kernel_y = rbf_spec(rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0));
  p.kernel_x = rbf_spec(rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0));
  p.L_y.L = Eigen::MatrixXd::Zero(D, D);
  for (int i = 0; i < D; ++i) {
    p.L_y.L(i, i) = rng.uniform(0.5, 1.5);
    for (int j = 0; j < i; ++j) p.L_y.L(i, j) = rng.normal(0.0, 0.3);
  }
  p.L_x.L = Eigen::MatrixXd::Zero(Q, Q);
  for (int i = 0; i < Q; ++i) {
    p.L_x.L(i, i) = rng.uniform(0.5, 1.5);
    for (int j = 0; j < i; ++j) p.L_x.L(i, j) = rng.normal(0.0, 0.3);
  }
  p.sigma2_y = rng.uniform(0.05, 0.5);
  p.sigma2_x = rng.uniform(0.05, 0.5);
  return p;
}

}  // namespace

TEST_CASE("packing round-trips every trainable block") {
  GpdmParams p = small_params(7, 5, 3, 2);
  PackLayout layout;
  Eigen::VectorXd v = pack_params(p, layout);
  CHECK(v.size() == packed_size(p, layout));
  // X(5x2)=10, (weight,amp,scale) per kernel, L_y 6, L_x 3, two sigmas
  CHECK(v.size() == 10 + 3 + 3 + 6 + 3 + 2);

  GpdmParams back = small_params(99, 5, 3, 2);  // different values, same shapes
  unpack_params(v, layout, &back);
  CHECK((back.X - p.X).cwiseAbs().maxCoeff() == 0.0);
  auto hy = back.kernel_y.hyper_values();
  auto hy0 = p.kernel_y.hyper_values();
  for (size_t i = 0; i < hy.size(); ++i)
    CHECK(hy[i] == doctest::Approx(hy0[i]).epsilon(1e-12));
  CHECK((back.L_y.L - p.L_y.L).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((back.L_x.L - p.L_x.L).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(back.sigma2_y == doctest::Approx(p.sigma2_y).epsilon(1e-12));
  CHECK(back.sigma2_x == doctest::Approx(p.sigma2_x).epsilon(1e-12));

  Eigen::VectorXd short_v = v.head(v.size() - 1);
  CHECK_THROWS_AS(unpack_params(short_v, layout, &back), std::invalid_argument);
}

TEST_CASE("packed gradient matches finite differences of the packed objective") {
  Rng rng(41);
  const int T = 4, D = 2, Q = 2;
  GpdmParams p = small_params(13, T, D, Q);
  Eigen::MatrixXd Y = oracle::random_matrix(rng, T, D, 1.0);
  PackLayout layout;

  GpdmParams work = p;
  auto f = [&](const Eigen::VectorXd& v) {
    unpack_params(v, layout, &work);
    return neg_log_posterior(Y, work);
  };
  Eigen::VectorXd v0 = pack_params(p, layout);
  Eigen::VectorXd num = oracle::fd_grad(f, v0);

  unpack_params(v0, layout, &work);
  GpdmGradient g;
  neg_log_posterior_grad(Y, work, &g);
  Eigen::VectorXd ana = pack_gradient(work, g, layout);

  REQUIRE(ana.size() == num.size());
  for (Eigen::Index i = 0; i < ana.size(); ++i)
    CHECK(oracle::rel_err(ana(i), num(i)) < 1e-5);
}

TEST_CASE("partial layouts pack only the requested blocks") {
  GpdmParams p = small_params(17, 4, 3, 2);
  PackLayout layout;
  layout.with_x = false;
  layout.with_L_y = false;
  layout.with_L_x = false;
  Eigen::VectorXd v = pack_params(p, layout);
  CHECK(v.size() == 3 + 3 + 1 + 1);  // hypers + sigmas

  GpdmParams back = p;
  Eigen::VectorXd shifted = v.array() + 0.25;
  unpack_params(shifted, layout, &back);
  CHECK(back.X == p.X);          // untouched blocks pass through
  CHECK(back.L_y.L == p.L_y.L);
  CHECK(back.sigma2_y == doctest::Approx(p.sigma2_y * std::exp(0.5)).epsilon(1e-12));
}

// ---------------------------------------------------------------------------
// heuristic initialization
// ---------------------------------------------------------------------------

TEST_CASE("median squared distance and data-scale kernel defaults") {
  Eigen::MatrixXd rows(3, 1);
  rows << 0.0, 1.0, 3.0;  // pairwise squared distances {1, 9, 4}
  CHECK(median_squared_distance(rows) == 4.0);
  CHECK(median_squared_distance(Eigen::MatrixXd::Zero(5, 2)) == 0.0);
  CHECK(median_squared_distance(Eigen::MatrixXd::Zero(1, 2)) == 0.0);

  KernelSpec spec;
  KernelTerm t;
  t.kind = KernelKind::Rbf;
  t.weight = 3.0;
  t.theta = {2.0, 9.0};
  spec.terms.push_back(t);
  t.kind = KernelKind::Linear;
  t.theta = {5.0};
  spec.terms.push_back(t);
  heuristic_kernel_init(&spec, 4.0);
  CHECK(spec.terms[0].weight == 1.0);
  CHECK(spec.terms[0].theta[0] == 1.0);
  CHECK(spec.terms[0].theta[1] == 0.25);
  CHECK(spec.terms[1].weight == 1.0);
  CHECK(spec.terms[1].theta[0] == 1.0);

  heuristic_kernel_init(&spec, 0.0);  // coincident latents fall back to unit scale
  CHECK(spec.terms[0].theta[1] == 1.0);
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

TEST_CASE("fit reaches the quality of ground-truth parameters on its own prior") {
  const int T = 30, D = 2, Q = 1;
  GpdmParams truth;
  truth.kernel_y = rbf_spec(1.0, 0.8);
  truth.kernel_x = rbf_spec(1.0, 0.5);
  truth.L_y.L.resize(D, D);
  truth.L_y.L << 1.0, 0.0, 0.3, 0.8;
  truth.L_x.L = Eigen::MatrixXd::Constant(1, 1, 0.9);
  truth.sigma2_y = 0.01;
  truth.sigma2_x = 0.05;

  // Ancestral draw of the latent path: each next value is a noisy sample from
  // the transition process conditioned on all earlier (input -> next) pairs.
  Rng rng(2024);
  Eigen::MatrixXd X(T, Q);
  X(0, 0) = rng.normal();
  const double lx2 = truth.L_x.L(0, 0) * truth.L_x.L(0, 0);
  for (int t = 1; t < T; ++t) {
    double mean = 0.0, var = 0.0;
    if (t == 1) {
      var = lx2 * eval_kernel(truth.kernel_x, X.row(0).transpose(), X.row(0).transpose(), true);
    } else {
      Eigen::MatrixXd inputs = X.topRows(t - 1);
      Eigen::MatrixXd K = lx2 * dense_gram(truth.kernel_x, inputs);
      Eigen::VectorXd y = X.col(0).segment(1, t - 1);
      Eigen::VectorXd kstar(t - 1);
      for (int i = 0; i < t - 1; ++i)
        kstar(i) =
            lx2 * eval_kernel(truth.kernel_x, inputs.row(i).transpose(), X.row(t - 1).transpose(), false);
      double kss =
          lx2 * eval_kernel(truth.kernel_x, X.row(t - 1).transpose(), X.row(t - 1).transpose(), true);
      oracle::gp_conditional(K, truth.sigma2_x, y, kstar, kss, &mean, &var);
    }
    X(t, 0) = mean + std::sqrt(std::max(var, 0.0) + truth.sigma2_x) * rng.normal();
  }
  truth.X = X;

  // Observations: one joint Gaussian draw over all T*D entries.
  Eigen::MatrixXd Ky = dense_gram(truth.kernel_y, X);
  Eigen::MatrixXd Sy = truth.L_y.L * truth.L_y.L.transpose();
  Eigen::MatrixXd Sigma = oracle::dense_sigma(Ky, Sy, truth.sigma2_y);
  Eigen::LLT<Eigen::MatrixXd> llt(Sigma);
  REQUIRE(llt.info() == Eigen::Success);
  Eigen::VectorXd z(T * D);
  for (int i = 0; i < T * D; ++i) z(i) = rng.normal();
  Eigen::VectorXd yvec = Eigen::MatrixXd(llt.matrixL()) * z;
  Eigen::MatrixXd Y(T, D);
  for (int n = 0; n < T; ++n)
    for (int d = 0; d < D; ++d) Y(n, d) = yvec(n * D + d);

  double truth_obj = neg_log_posterior(Y, truth);

  TrainConfig cfg;
  cfg.q = Q;
  cfg.seed = 7;
  cfg.restarts = 2;
  cfg.max_iters = 2000;
  GpdmModel model = fit(plain_set(Y), rbf_spec(1, 1), rbf_spec(1, 1), cfg);

  CHECK(model.kind == "gpdm");
  CHECK(model.params.X.rows() == T);
  CHECK(model.params.X.cols() == Q);
  REQUIRE(!model.trace.empty());
  CHECK(model.trace.back() <= truth_obj + 1e-3);
}

TEST_CASE("zero-iteration fit returns the documented initial state") {
  Rng rng(55);
  Eigen::MatrixXd Y = oracle::random_matrix(rng, 6, 2, 1.0);
  TrainConfig cfg;
  cfg.q = 2;
  cfg.max_iters = 0;
  GpdmModel model = fit(plain_set(Y), rbf_spec(1, 1), rbf_spec(1, 1), cfg);

  PcaResult pca = pca_init(Y, 2);
  CHECK(model.params.X == pca.X);  // restart 0 starts unperturbed
  double med = median_squared_distance(pca.X);
  KernelSpec expect = rbf_spec(1, 1);
  heuristic_kernel_init(&expect, med);
  CHECK(model.params.kernel_y.hyper_values() == expect.hyper_values());
  CHECK(model.params.kernel_x.hyper_values() == expect.hyper_values());
  CHECK(model.params.L_y.L == Eigen::MatrixXd::Identity(2, 2));
  CHECK(model.params.L_x.L == Eigen::MatrixXd::Identity(2, 2));

  double mean = Y.mean();
  double var_y = (Y.array() - mean).square().sum() / Y.size();
  CHECK(model.params.sigma2_y == doctest::Approx(0.01 * var_y).epsilon(1e-12));

  REQUIRE(model.trace.size() == 1);
  CHECK(model.trace[0] ==
        doctest::Approx(neg_log_posterior(Y, model.params)).epsilon(1e-12));
  CHECK(!model.converged);
  CHECK(model.restart == 0);
}

TEST_CASE("equal seeds give bit-identical fits") {
  Rng rng(66);
  Eigen::MatrixXd Y = oracle::random_matrix(rng, 8, 2, 1.0);
  TrainConfig cfg;
  cfg.q = 1;
  cfg.max_iters = 30;
  cfg.restarts = 2;
  cfg.seed = 123;
  GpdmModel a = fit(plain_set(Y), rbf_spec(1, 1), rbf_spec(1, 1), cfg);
  GpdmModel b = fit(plain_set(Y), rbf_spec(1, 1), rbf_spec(1, 1), cfg);
  CHECK(a.trace == b.trace);
  CHECK(a.params.X == b.params.X);
  CHECK(a.params.sigma2_y == b.params.sigma2_y);
  CHECK(a.restart == b.restart);

  // Traces never increase, and the convergence flag implies the gradient bound.
  for (size_t i = 0; i + 1 < a.trace.size(); ++i)
    CHECK(a.trace[i + 1] <= a.trace[i]);
  if (a.converged)
    CHECK(a.final_grad_norm < cfg.rel_tol * (1.0 + std::abs(a.trace.back())));
  CHECK(a.seed == 123);
}

TEST_CASE("row order of an assembled training set does not change the fit") {
  Rng rng(77);
  std::vector<BatteryDataset> sets = {synthetic_dataset("cell-a", 14, rng),
                                      synthetic_dataset("cell-b", 14, rng)};
  AssembleResult asem = assemble_transfer(sets, "cell-b", 0.5);

  TrainingSet shuffled = asem.ts;
  std::vector<Eigen::Index> perm(shuffled.Y.rows());
  std::iota(perm.begin(), perm.end(), 0);
  Rng prng(5);
  for (size_t i = perm.size(); i > 1; --i)
    std::swap(perm[i - 1], perm[prng.below(i)]);
  Eigen::MatrixXd P(shuffled.Y.rows(), shuffled.Y.cols());
  for (Eigen::Index i = 0; i < P.rows(); ++i) P.row(i) = asem.ts.Y.row(perm[i]);
  shuffled.Y = P;

  TrainConfig cfg;
  cfg.q = 1;
  cfg.max_iters = 40;
  GpdmModel m1 = fit(asem.ts, rbf_spec(1, 1), rbf_spec(1, 1), cfg);
  GpdmModel m2 = fit(shuffled, rbf_spec(1, 1), rbf_spec(1, 1), cfg);
  REQUIRE(!m1.trace.empty());
  CHECK(std::abs(m1.trace.back() - m2.trace.back()) <= 1e-8);
  CHECK(m1.data.Y == m2.data.Y);  // canonical order is identical
}

TEST_CASE("fit validates its configuration and inputs") {
  Rng rng(88);
  Eigen::MatrixXd Y = oracle::random_matrix(rng, 5, 2, 1.0);
  TrainingSet ts = plain_set(Y);
  KernelSpec k = rbf_spec(1, 1);
  TrainConfig cfg;

  TrainingSet tiny = plain_set(Y.topRows(2));
  CHECK_THROWS_AS(fit(tiny, k, k, cfg), std::invalid_argument);

  TrainConfig bad = cfg;
  bad.q = 3;  // exceeds D=2
  CHECK_THROWS_AS(fit(ts, k, k, bad), std::invalid_argument);
  bad = cfg;
  bad.restarts = 0;
  CHECK_THROWS_AS(fit(ts, k, k, bad), std::invalid_argument);
  bad = cfg;
  bad.optimizer = "adam";
  CHECK_THROWS_AS(fit(ts, k, k, bad), std::invalid_argument);
  bad = cfg;
  bad.rel_tol = -1.0;
  CHECK_THROWS_AS(fit(ts, k, k, bad), std::invalid_argument);

  KernelSpec noisy = k;
  noisy.include_noise = true;
  CHECK_THROWS_AS(fit(ts, noisy, k, cfg), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// persistence
// ---------------------------------------------------------------------------

TEST_CASE("models survive a save/load round trip bit-for-bit") {
  Rng rng(99);
  Eigen::MatrixXd Y = oracle::random_matrix(rng, 6, 2, 1.0);
  TrainConfig cfg;
  cfg.q = 1;
  cfg.max_iters = 15;
  cfg.seed = 42;
  GpdmModel m = fit(plain_set(Y), rbf_spec(1, 1), rbf_spec(1, 1), cfg);
  m.warnings.push_back("synthetic note");

  testutil::TempDir tmp;
  auto path = tmp.file("model.gpdm");
  save_model(m, path);
  GpdmModel back = load_model(path);

  CHECK(back.kind == m.kind);
  CHECK(back.params.X == m.params.X);
  CHECK(back.params.kernel_y.hyper_values() == m.params.kernel_y.hyper_values());
  CHECK(back.params.kernel_x.hyper_values() == m.params.kernel_x.hyper_values());
  CHECK(back.params.L_y.L == m.params.L_y.L);
  CHECK(back.params.L_x.L == m.params.L_x.L);
  CHECK(back.params.sigma2_y == m.params.sigma2_y);
  CHECK(back.params.sigma2_x == m.params.sigma2_x);
  CHECK(back.data.Y == m.data.Y);
  CHECK(back.data.columns == m.data.columns);
  CHECK(back.trace == m.trace);
  CHECK(back.final_grad_norm == m.final_grad_norm);
  CHECK(back.converged == m.converged);
  CHECK(back.seed == m.seed);
  CHECK(back.restart == m.restart);
  CHECK(back.dimension_exponents == m.dimension_exponents);
  CHECK(back.warnings == m.warnings);

  // A second serialization of the loaded model is byte-identical.
  CHECK(model_to_text(back) == model_to_text(m));

  CHECK_THROWS_AS(model_from_text("{}"), DomainError);
  CHECK_THROWS_AS(model_from_text("not json"), DomainError);
  CHECK_THROWS_AS(load_model(tmp.file("missing.gpdm")), DomainError);
}
