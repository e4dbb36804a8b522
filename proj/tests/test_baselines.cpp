#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "gpdm/baselines.hpp"
#include "gpdm/dataio.hpp"
#include "gpdm/train.hpp"
#include "gpdm/util.hpp"
#include "support/oracles.hpp"

using namespace gpdm;

namespace {

KernelSpec one_term(KernelKind kind, std::vector<double> theta) {
  KernelSpec s;
  KernelTerm t;
  t.kind = kind;
  t.weight = 1.0;
  t.theta = std::move(theta);
  s.terms.push_back(t);
  return s;
}

KernelSpec matern_pair() {
  KernelSpec s = one_term(KernelKind::Matern32, {1.0, 1.0});
  KernelTerm t;
  t.kind = KernelKind::Matern52;
  t.weight = 1.0;
  t.theta = {1.0, 1.0};
  s.terms.push_back(t);
  return s;
}

// Battery whose SOH decays exactly linearly with cycle number.
BatteryDataset linear_battery(const std::string& id, int n, double slope) {
  BatteryDataset ds;
  ds.battery_id = id;
  ds.grid = 0;
  ds.attributes.resize(n, 0);
  for (int i = 0; i < n; ++i) {
    CycleRecord rec;
    rec.index = i + 1;
    rec.raw_index = i + 1;
    rec.soh = 1.0 - slope * i;
    rec.capacity = 2.0 * rec.soh;
    ds.cycles.push_back(rec);
  }
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

// Smooth one-dimensional manifold embedded in three columns; the third
// column is an exact affine function of the second.
Eigen::MatrixXd manifold_rows(const Eigen::VectorXd& t) {
  Eigen::MatrixXd Y(t.size(), 3);
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    Y(i, 0) = std::cos(t(i));
    Y(i, 1) = 0.5 * t(i);
    Y(i, 2) = 2.0 * Y(i, 1) - 0.5;
  }
  return Y;
}

// One trained latent variable model shared across the reconstruction cases.
const GpdmModel& manifold_model() {
  static GpdmModel model = [] {
    Eigen::VectorXd t = Eigen::VectorXd::LinSpaced(20, 0.0, 3.0);
    TrainConfig cfg;
    cfg.q = 1;
    cfg.max_iters = 1500;
    cfg.restarts = 2;
    cfg.seed = 3;
    return fit_gplvm(plain_set(manifold_rows(t)), one_term(KernelKind::Rbf, {1, 1}),
                     cfg);
  }();
  return model;
}

}  // namespace

// ---------------------------------------------------------------------------
// GP regression baseline
// ---------------------------------------------------------------------------

TEST_CASE("gp marginal likelihood agrees with the structured observation term") {
  Rng rng(5);
  Eigen::MatrixXd Z = oracle::random_matrix(rng, 6, 2, 1.0);
  Eigen::VectorXd y = oracle::random_matrix(rng, 6, 1, 1.0);
  KernelSpec spec = one_term(KernelKind::Rbf, {1.2, 0.7});
  KernelTerm lin;
  lin.kind = KernelKind::Linear;
  lin.weight = 0.6;
  lin.theta = {0.9};
  spec.terms.push_back(lin);
  const double sigma2 = 0.3;

  GpdmParams params;
  params.X = Z;
  params.kernel_y = spec;
  params.kernel_x = one_term(KernelKind::Linear, {1.0});
  params.L_y = CholeskyFactor::identity(1);
  params.L_x = CholeskyFactor::identity(2);
  params.sigma2_y = sigma2;
  params.sigma2_x = 1.0;

  double a = gp_marginal_nll(spec, Z, y, sigma2);
  double b = observation_nll(y, params);
  CHECK(oracle::rel_err(a, b) < 1e-10);
}

TEST_CASE("noiseless linear degradation is reproduced on held-out cycles") {
  std::vector<BatteryDataset> sets = {linear_battery("cell-lin", 40, 0.004)};
  AssembleResult asem = assemble_transfer(sets, "cell-lin", 0.6);
  REQUIRE(asem.ts.Y.rows() == 24);
  REQUIRE(asem.heldout_cycles.size() == 16);

  GpFitConfig cfg;
  cfg.max_iters = 3000;
  cfg.restarts = 2;
  GpRegressionModel gp = fit_gp(asem.ts, one_term(KernelKind::Linear, {1.0}), cfg);

  std::vector<double> cycles(asem.heldout_cycles.begin(), asem.heldout_cycles.end());
  Eigen::VectorXd mean, var;
  predict_gp(gp, cycles, 1.0, &mean, &var);
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    double truth = 1.0 - 0.004 * (cycles[i] - 1.0);
    CHECK(std::abs(mean(i) - truth) < 1e-6);
  }

  // Posterior contraction: variance at a training input is far below the
  // variance at an extrapolated cycle.
  Eigen::VectorXd m2, v2;
  predict_gp(gp, {1.0, 400.0}, 1.0, &m2, &v2);
  CHECK(v2(0) < v2(1));
}

TEST_CASE("a huge fixed noise variance pins predictions to the prior mean") {
  std::vector<BatteryDataset> sets = {linear_battery("cell-lin", 40, 0.004)};
  AssembleResult asem = assemble_transfer(sets, "cell-lin", 0.6);

  GpFitConfig cfg;
  cfg.fixed_sigma2 = 1e8;
  cfg.max_iters = 50;
  GpRegressionModel gp = fit_gp(asem.ts, matern_pair(), cfg);
  CHECK(gp.sigma2 == 1e8);

  Eigen::VectorXd mean, var;
  predict_gp(gp, {1.0, 12.0, 30.0, 39.0}, 1.0, &mean, &var);
  CHECK(mean.cwiseAbs().maxCoeff() < 1e-2);
}

TEST_CASE("gp predictions match the scalar conditional oracle") {
  std::vector<BatteryDataset> sets = {linear_battery("cell-a", 20, 0.003),
                                      linear_battery("cell-b", 20, 0.005)};
  AssembleResult asem = assemble_transfer(sets, "cell-b", 0.5);

  GpFitConfig cfg;
  cfg.max_iters = 0;  // keep the documented initial hyperparameters
  GpRegressionModel gp = fit_gp(asem.ts, matern_pair(), cfg);
  REQUIRE(gp.trace.size() == 1);
  CHECK(!gp.converged);

  Eigen::MatrixXd K = gram(gp.kernel, gp.Z, gp.jitter_rel).values;
  std::vector<double> cycles = {3.0, 11.5, 27.0};
  Eigen::VectorXd mean, var;
  predict_gp(gp, cycles, 2.0, &mean, &var);
  for (size_t c = 0; c < cycles.size(); ++c) {
    Eigen::VectorXd z(2);
    z << cycles[c], 2.0;
    Eigen::VectorXd kstar(gp.Z.rows());
    for (Eigen::Index i = 0; i < gp.Z.rows(); ++i)
      kstar(i) = eval_kernel(gp.kernel, z, gp.Z.row(i).transpose());
    double m_ref, v_ref;
    oracle::gp_conditional(K, gp.sigma2, gp.targets, kstar,
                           eval_kernel(gp.kernel, z, z, true), &m_ref, &v_ref);
    CHECK(oracle::rel_err(mean(c), m_ref) < 1e-10);
    CHECK(oracle::rel_err(var(c), v_ref + gp.sigma2) < 1e-10);
  }
}

TEST_CASE("gp baseline round-trips through the shared model container") {
  std::vector<BatteryDataset> sets = {linear_battery("cell-a", 20, 0.003),
                                      linear_battery("cell-b", 20, 0.005)};
  AssembleResult asem = assemble_transfer(sets, "cell-b", 0.5);
  GpFitConfig cfg;
  cfg.max_iters = 25;
  GpRegressionModel gp = fit_gp(asem.ts, matern_pair(), cfg);

  GpdmModel container = gp_to_model(gp, asem.ts);
  CHECK(container.kind == "gp");
  GpdmModel reloaded = model_from_text(model_to_text(container));
  GpRegressionModel back = gp_from_model(reloaded);

  CHECK(back.Z == gp.Z);
  CHECK(back.targets == gp.targets);
  CHECK(back.kernel.hyper_values() == gp.kernel.hyper_values());
  CHECK(back.sigma2 == gp.sigma2);

  Eigen::VectorXd m1, v1, m2, v2;
  predict_gp(gp, {4.0, 17.0, 33.0}, 2.0, &m1, &v1);
  predict_gp(back, {4.0, 17.0, 33.0}, 2.0, &m2, &v2);
  CHECK(m1 == m2);
  CHECK(v1 == v2);

  GpdmModel wrong = reloaded;
  wrong.kind = "gpdm";
  CHECK_THROWS_AS(gp_from_model(wrong), std::invalid_argument);
}

TEST_CASE("gp fit validates configuration and inputs") {
  std::vector<BatteryDataset> sets = {linear_battery("cell-lin", 12, 0.004)};
  AssembleResult asem = assemble_transfer(sets, "cell-lin", 1.0);
  KernelSpec k = matern_pair();

  GpFitConfig bad;
  bad.optimizer = "adam";
  CHECK_THROWS_AS(fit_gp(asem.ts, k, bad), std::invalid_argument);
  bad = GpFitConfig{};
  bad.restarts = 0;
  CHECK_THROWS_AS(fit_gp(asem.ts, k, bad), std::invalid_argument);
  bad = GpFitConfig{};
  bad.fixed_sigma2 = -1.0;
  CHECK_THROWS_AS(fit_gp(asem.ts, k, bad), std::invalid_argument);

  KernelSpec noisy = k;
  noisy.include_noise = true;
  CHECK_THROWS_AS(fit_gp(asem.ts, noisy, GpFitConfig{}), std::invalid_argument);

  // Non-assembled training sets are rejected.
  TrainingSet plain = plain_set(Eigen::MatrixXd::Zero(5, 3));
  CHECK_THROWS_AS(fit_gp(plain, k, GpFitConfig{}), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// GPLVM
// ---------------------------------------------------------------------------

TEST_CASE("gplvm objective is the full objective minus the transition terms") {
  Rng rng(21);
  Eigen::MatrixXd Y = oracle::random_matrix(rng, 8, 3, 1.0);
  TrainConfig cfg;
  cfg.q = 2;
  cfg.max_iters = 0;
  GpdmModel lvm = fit_gplvm(plain_set(Y), one_term(KernelKind::Rbf, {1, 1}), cfg);
  CHECK(lvm.kind == "gplvm");
  REQUIRE(lvm.trace.size() == 1);

  ObjectiveTerms terms = objective_terms(Y, lvm.params);
  CHECK(lvm.trace[0] == doctest::Approx(terms.observation_only()).epsilon(1e-12));
  double full = neg_log_posterior(Y, lvm.params);
  CHECK(lvm.trace[0] ==
        doctest::Approx(full - terms.dynamics - terms.prior_x).epsilon(1e-12));
}

TEST_CASE("gplvm reconstructs a curved manifold better than pca") {
  Eigen::VectorXd t = Eigen::VectorXd::LinSpaced(20, 0.0, 3.0);
  Eigen::MatrixXd Y = manifold_rows(t);
  const GpdmModel& lvm = manifold_model();

  PcaResult pca = pca_init(Y, 1);
  Eigen::MatrixXd pca_recon =
      (pca.X * pca.W.transpose()).rowwise() + pca.mean.transpose();
  double pca_err = (pca_recon - Y).norm();

  Eigen::MatrixXd S = lvm.params.L_y.L * lvm.params.L_y.L.transpose();
  KroneckerGpPosterior posterior(lvm.params.X, lvm.data.Y, lvm.params.kernel_y, S,
                                 lvm.params.sigma2_y);
  Eigen::MatrixXd lvm_recon(Y.rows(), Y.cols());
  for (Eigen::Index i = 0; i < Y.rows(); ++i) {
    Eigen::VectorXd mu;
    Eigen::MatrixXd cov;
    posterior.predict(lvm.params.X.row(i).transpose(), &mu, &cov);
    lvm_recon.row(i) = mu.transpose();
  }
  double lvm_err = (lvm_recon - lvm.data.Y).norm();
  CHECK(lvm_err < pca_err);
}

TEST_CASE("gplvm fits are deterministic for equal seeds") {
  Rng rng(31);
  Eigen::MatrixXd Y = oracle::random_matrix(rng, 10, 2, 1.0);
  TrainConfig cfg;
  cfg.q = 1;
  cfg.max_iters = 25;
  cfg.restarts = 2;
  cfg.seed = 9;
  GpdmModel a = fit_gplvm(plain_set(Y), one_term(KernelKind::Rbf, {1, 1}), cfg);
  GpdmModel b = fit_gplvm(plain_set(Y), one_term(KernelKind::Rbf, {1, 1}), cfg);
  CHECK(a.trace == b.trace);
  CHECK(a.params.X == b.params.X);
  for (size_t i = 0; i + 1 < a.trace.size(); ++i)
    CHECK(a.trace[i + 1] <= a.trace[i]);
}

// ---------------------------------------------------------------------------
// reconstruction
// ---------------------------------------------------------------------------

TEST_CASE("empty-mask reconstruction passes rows through and decodes the fit") {
  const GpdmModel& lvm = manifold_model();
  Eigen::MatrixXd rows = lvm.data.Y.topRows(4);
  std::vector<bool> masked = {false, false, false};
  ReconstructResult rec = gplvm_reconstruct(lvm, rows, masked);

  CHECK(rec.completed == rows);  // nothing masked, nothing replaced
  CHECK(rec.decoded.rows() == 4);
  CHECK(rec.latents.cols() == lvm.params.X.cols());
  // The decoded means track the (noiselessly fitted) training rows closely.
  CHECK((rec.decoded - rows).cwiseAbs().maxCoeff() < 1e-2);
  CHECK(rec.variances.minCoeff() > 0.0);
}

TEST_CASE("a linearly dependent column is recovered from the others") {
  const GpdmModel& lvm = manifold_model();
  Eigen::VectorXd t = Eigen::VectorXd::LinSpaced(20, 0.0, 3.0);
  Eigen::MatrixXd Y = manifold_rows(t);

  Eigen::MatrixXd rows(6, 3);
  for (int i = 0; i < 6; ++i) rows.row(i) = Y.row(2 + 3 * i);
  Eigen::VectorXd truth = rows.col(2);
  rows.col(2).setConstant(-777.0);  // masked input values must be ignored

  std::vector<bool> masked = {false, false, true};
  ReconstructResult rec = gplvm_reconstruct(lvm, rows, masked);
  for (int i = 0; i < 6; ++i) {
    CHECK(rec.completed(i, 0) == rows(i, 0));
    CHECK(rec.completed(i, 1) == rows(i, 1));
    CHECK(std::abs(rec.completed(i, 2) - truth(i)) < 1e-3);
  }

  // Reconstruction is deterministic: identical inputs, identical outputs.
  ReconstructResult rec2 = gplvm_reconstruct(lvm, rows, masked);
  CHECK(rec2.completed == rec.completed);
  CHECK(rec2.latents == rec.latents);
}

TEST_CASE("reconstruction rejects malformed requests") {
  const GpdmModel& lvm = manifold_model();
  Eigen::MatrixXd rows = lvm.data.Y.topRows(2);

  std::vector<bool> all_masked = {true, true, true};
  CHECK_THROWS_AS(gplvm_reconstruct(lvm, rows, all_masked), std::invalid_argument);

  std::vector<bool> short_mask = {false, true};
  CHECK_THROWS_AS(gplvm_reconstruct(lvm, rows, short_mask), std::invalid_argument);

  Eigen::MatrixXd wrong = Eigen::MatrixXd::Zero(2, 4);
  std::vector<bool> mask4 = {false, true, false, false};
  CHECK_THROWS_AS(gplvm_reconstruct(lvm, wrong, mask4), std::invalid_argument);

  GpdmModel gp_kind = lvm;
  gp_kind.kind = "gp";
  std::vector<bool> ok = {false, false, true};
  CHECK_THROWS_AS(gplvm_reconstruct(gp_kind, rows, ok), std::invalid_argument);
}
