#include "gpdm/baselines.hpp"

#include <algorithm>
#include <cmath>

#include "gpdm/util.hpp"
#include "fit_internal.hpp"

namespace gpdm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// Raw [cycle, label] inputs and SOH targets from an assembled training set.
void baseline_inputs(const TrainingSet& ts, Eigen::MatrixXd* Z,
                     Eigen::VectorXd* y) {
  if (ts.columns.size() < 3 || ts.columns[0] != "cycle" ||
      ts.columns[1] != "label" || ts.columns[2] != "soh")
    throw std::invalid_argument(
        "gp baseline: training set must be assembled (cycle, label, soh, ...)");
  if (ts.transforms.size() < 3)
    throw std::invalid_argument("gp baseline: training set lacks transforms");
  if (ts.Y.rows() < 1) throw std::invalid_argument("gp baseline: empty training set");
  Z->resize(ts.Y.rows(), 2);
  y->resize(ts.Y.rows());
  for (Eigen::Index i = 0; i < ts.Y.rows(); ++i) {
    (*Z)(i, 0) = ts.transforms[0].invert(ts.Y(i, 0));
    (*Z)(i, 1) = ts.transforms[1].invert(ts.Y(i, 1));
    (*y)(i) = ts.Y(i, 2);
  }
}

struct GpNllCache {
  Eigen::MatrixXd C_inv;
  Eigen::VectorXd alpha;
  double value = 0.0;
};

// Dense NLL with the pieces needed for gradients.
GpNllCache gp_nll_full(const KernelSpec& kernel, const Eigen::MatrixXd& Z,
                       const Eigen::VectorXd& y, double sigma2, double jitter_rel) {
  const Eigen::Index T = Z.rows();
  Eigen::MatrixXd C = gram(kernel, Z, jitter_rel).values;
  C.diagonal().array() += sigma2;
  Eigen::LLT<Eigen::MatrixXd> llt(C);
  if (llt.info() != Eigen::Success)
    throw DomainError("gp baseline: covariance is not positive definite");
  GpNllCache out;
  out.alpha = llt.solve(y);
  out.C_inv = llt.solve(Eigen::MatrixXd::Identity(T, T));
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < T; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
  out.value = 0.5 * y.dot(out.alpha) + 0.5 * logdet + 0.5 * T * kLog2Pi;
  return out;
}

double hyper_prior(const KernelSpec& kernel, double sigma2) {
  double p = 0.0;
  for (double h : kernel.hyper_values()) p += std::log(h);
  return p + std::log(sigma2);
}

}  // namespace

double gp_marginal_nll(const KernelSpec& kernel, const Eigen::MatrixXd& inputs,
                       const Eigen::VectorXd& targets, double sigma2,
                       double jitter_rel) {
  if (inputs.rows() != targets.size())
    throw std::invalid_argument("gp nll: inputs/targets length mismatch");
  Eigen::MatrixXd C = gram(kernel, inputs, jitter_rel).values;
  C.diagonal().array() += sigma2;
  Eigen::LLT<Eigen::MatrixXd> llt(C);
  if (llt.info() != Eigen::Success)
    throw DomainError("gp nll: covariance is not positive definite");
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < inputs.rows(); ++i)
    logdet += 2.0 * std::log(llt.matrixL()(i, i));
  return 0.5 * targets.dot(llt.solve(targets)) + 0.5 * logdet +
         0.5 * inputs.rows() * kLog2Pi;
}

void GpFitConfig::validate() const {
  if (optimizer != "cg" && optimizer != "gd")
    throw std::invalid_argument("gp fit: optimizer must be cg or gd");
  if (max_iters < 0) throw std::invalid_argument("gp fit: negative max_iters");
  if (!(rel_tol > 0)) throw std::invalid_argument("gp fit: rel_tol must be > 0");
  if (restarts < 1) throw std::invalid_argument("gp fit: restarts must be >= 1");
  if (init_jitter < 0) throw std::invalid_argument("gp fit: negative init_jitter");
  if (fixed_sigma2 && !(*fixed_sigma2 > 0))
    throw std::invalid_argument("gp fit: fixed sigma2 must be > 0");
}

GpRegressionModel fit_gp(const TrainingSet& ts, const KernelSpec& spec,
                         const GpFitConfig& cfg) {
  cfg.validate();
  spec.validate();
  if (spec.include_noise)
    throw std::invalid_argument(
        "gp fit: kernel delta terms are unsupported; noise enters via sigma2");

  GpRegressionModel model;
  model.seed = cfg.seed;
  model.jitter_rel = cfg.jitter_rel;
  baseline_inputs(ts, &model.Z, &model.targets);

  KernelSpec kernel = spec;
  if (cfg.heuristic_init)
    heuristic_kernel_init(&kernel, median_squared_distance(model.Z));
  double var_y =
      (model.targets.array() - model.targets.mean()).square().sum() /
      std::max<Eigen::Index>(model.targets.size(), 1);
  double sigma2 = cfg.fixed_sigma2.value_or(std::max(0.01 * var_y, 1e-8));

  // Packed coordinates: log kernel hypers, then (unless fixed) log sigma.
  const Eigen::Index nh = kernel.hyper_count();
  const bool opt_sigma = !cfg.fixed_sigma2.has_value();
  const Eigen::Index dim = nh + (opt_sigma ? 1 : 0);

  KernelSpec work = kernel;
  double work_sigma2 = sigma2;
  auto unpack = [&](const Eigen::VectorXd& v) {
    auto h = work.hyper_values();
    for (Eigen::Index i = 0; i < nh; ++i) h[i] = std::exp(v(i));
    work.set_hyper_values(h);
    if (opt_sigma) work_sigma2 = std::exp(2.0 * v(nh));
  };
  Objective obj = [&](const Eigen::VectorXd& v, Eigen::VectorXd* grad) {
    unpack(v);
    if (!grad)
      return gp_marginal_nll(work, model.Z, model.targets, work_sigma2,
                             cfg.jitter_rel) +
             hyper_prior(work, work_sigma2);
    GpNllCache cache =
        gp_nll_full(work, model.Z, model.targets, work_sigma2, cfg.jitter_rel);
    Eigen::MatrixXd M = 0.5 * (cache.C_inv - cache.alpha * cache.alpha.transpose());
    std::vector<Eigen::MatrixXd> dK = gram_hyper_grads(work, model.Z);
    grad->resize(dim);
    const double T = static_cast<double>(model.Z.rows());
    auto h = work.hyper_values();
    for (Eigen::Index i = 0; i < nh; ++i) {
      double d = (M.array() * dK[i].array()).sum() +
                 cfg.jitter_rel * (dK[i].trace() / T) * M.trace();
      (*grad)(i) = h[i] * d + 1.0;  // + d(log h)/d(log h) from the prior
    }
    if (opt_sigma)
      (*grad)(nh) = 2.0 * work_sigma2 * M.trace() + 2.0;
    return cache.value + hyper_prior(work, work_sigma2);
  };

  Eigen::VectorXd x0(dim);
  {
    auto h = kernel.hyper_values();
    for (Eigen::Index i = 0; i < nh; ++i) x0(i) = std::log(h[i]);
    if (opt_sigma) x0(nh) = 0.5 * std::log(sigma2);
  }

  MinimizeOptions mopt;
  mopt.method = cfg.optimizer;
  mopt.max_iters = cfg.max_iters;
  mopt.rel_tol = cfg.rel_tol;

  bool have_best = false;
  for (int r = 0; r < cfg.restarts; ++r) {
    Eigen::VectorXd start = x0;
    if (r > 0 && cfg.init_jitter > 0) {
      Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(r)));
      for (Eigen::Index i = 0; i < dim; ++i)
        start(i) += cfg.init_jitter * rng.normal();
    }
    MinimizeResult mr = minimize(obj, start, mopt);
    if (!have_best || mr.trace.back() < model.trace.back()) {
      have_best = true;
      unpack(mr.x);
      model.kernel = work;
      model.sigma2 = work_sigma2;
      model.trace = mr.trace;
      model.final_grad_norm = mr.grad_norm;
      model.converged = mr.converged;
      model.restart = r;
    }
  }

  // Cache the final factorization for predictions.
  Eigen::MatrixXd C = gram(model.kernel, model.Z, cfg.jitter_rel).values;
  C.diagonal().array() += model.sigma2;
  Eigen::LLT<Eigen::MatrixXd> llt(C);
  if (llt.info() != Eigen::Success)
    throw DomainError("gp fit: final covariance is not positive definite");
  model.chol = llt.matrixL();
  model.alpha = llt.solve(model.targets);
  return model;
}

void predict_gp(const GpRegressionModel& model, const std::vector<double>& cycles,
                double label, Eigen::VectorXd* mean, Eigen::VectorXd* var) {
  const Eigen::Index T = model.Z.rows();
  if (model.chol.rows() != T || model.alpha.size() != T)
    throw std::invalid_argument("gp predict: model has no cached factorization");
  mean->resize(cycles.size());
  var->resize(cycles.size());
  Eigen::VectorXd z(2), kstar(T);
  for (size_t c = 0; c < cycles.size(); ++c) {
    z << cycles[c], label;
    for (Eigen::Index i = 0; i < T; ++i)
      kstar(i) = eval_kernel(model.kernel, z, model.Z.row(i).transpose());
    double kss = eval_kernel(model.kernel, z, z, /*same_index=*/true);
    (*mean)(c) = kstar.dot(model.alpha);
    // Latent variance plus observation noise.
    Eigen::VectorXd w =
        model.chol.triangularView<Eigen::Lower>().solve(kstar);
    (*var)(c) = kss - w.squaredNorm() + model.sigma2;
  }
}

GpdmModel gp_to_model(const GpRegressionModel& gp, const TrainingSet& ts) {
  GpdmModel m;
  m.kind = "gp";
  m.data = ts;
  m.params.X = gp.Z;
  m.params.kernel_y = gp.kernel;
  m.params.L_y = CholeskyFactor::identity(1);
  m.params.sigma2_y = gp.sigma2;
  KernelSpec placeholder;
  KernelTerm t;
  t.kind = KernelKind::Linear;
  t.weight = 1.0;
  t.theta = {1.0};
  placeholder.terms.push_back(t);
  m.params.kernel_x = placeholder;
  m.params.L_x = CholeskyFactor::identity(1);
  m.params.sigma2_x = 1.0;
  m.trace = gp.trace;
  m.final_grad_norm = gp.final_grad_norm;
  m.converged = gp.converged;
  m.seed = gp.seed;
  m.restart = gp.restart;
  return m;
}

GpRegressionModel gp_from_model(const GpdmModel& model) {
  if (model.kind != "gp")
    throw std::invalid_argument("gp baseline: model kind is '" + model.kind + "'");
  if (model.params.X.cols() != 2)
    throw DomainError("gp baseline: stored inputs are not 2-dimensional");
  GpRegressionModel gp;
  gp.Z = model.params.X;
  gp.kernel = model.params.kernel_y;
  gp.sigma2 = model.params.sigma2_y;
  gp.trace = model.trace;
  gp.final_grad_norm = model.final_grad_norm;
  gp.converged = model.converged;
  gp.seed = model.seed;
  gp.restart = model.restart;

  // Targets are the SOH column of the stored training set.
  Eigen::MatrixXd Z_check;
  Eigen::VectorXd y;
  baseline_inputs(model.data, &Z_check, &y);
  gp.targets = y;

  Eigen::MatrixXd C = gram(gp.kernel, gp.Z, gp.jitter_rel).values;
  C.diagonal().array() += gp.sigma2;
  Eigen::LLT<Eigen::MatrixXd> llt(C);
  if (llt.info() != Eigen::Success)
    throw DomainError("gp baseline: stored covariance is not positive definite");
  gp.chol = llt.matrixL();
  gp.alpha = llt.solve(gp.targets);
  return gp;
}

// ------------------------------------------------------------------ GPLVM ---

GpdmModel fit_gplvm(const TrainingSet& ts, const KernelSpec& kernel_y,
                    const TrainConfig& cfg) {
  KernelSpec placeholder;
  KernelTerm t;
  t.kind = KernelKind::Linear;
  t.weight = 1.0;
  t.theta = {1.0};
  placeholder.terms.push_back(t);
  return internal::fit_impl(ts, kernel_y, placeholder, cfg,
                            /*with_dynamics=*/false);
}

ReconstructResult gplvm_reconstruct(const GpdmModel& model,
                                    const Eigen::MatrixXd& rows,
                                    const std::vector<bool>& masked,
                                    const ReconstructConfig& cfg) {
  if (model.kind != "gplvm" && model.kind != "gpdm")
    throw std::invalid_argument("reconstruct: model kind is '" + model.kind + "'");
  const Eigen::MatrixXd& X = model.params.X;
  const Eigen::MatrixXd& Y = model.data.Y;
  const Eigen::Index D = Y.cols(), Q = X.cols();
  if (X.rows() != Y.rows() || X.rows() < 1)
    throw std::invalid_argument("reconstruct: model latents do not match data");
  if (rows.cols() != D)
    throw std::invalid_argument("reconstruct: rows have wrong column count");
  if (static_cast<Eigen::Index>(masked.size()) != D)
    throw std::invalid_argument("reconstruct: mask length must equal columns");

  std::vector<Eigen::Index> known;
  for (Eigen::Index d = 0; d < D; ++d)
    if (!masked[d]) known.push_back(d);
  if (known.empty())
    throw std::invalid_argument("reconstruct: at least one column must be known");

  const double sigma2 = model.params.sigma2_y;
  Eigen::MatrixXd S = model.params.L_y.L * model.params.L_y.L.transpose();
  KroneckerGpPosterior posterior(X, Y, model.params.kernel_y, S, sigma2,
                                 cfg.jitter_rel);

  MinimizeOptions mopt;
  mopt.method = cfg.optimizer;
  mopt.max_iters = cfg.max_iters;
  mopt.rel_tol = cfg.rel_tol;

  ReconstructResult out;
  out.completed = rows;
  out.decoded.resize(rows.rows(), D);
  out.variances.resize(rows.rows(), D);
  out.latents.resize(rows.rows(), Q);

  const Eigen::Index nk = static_cast<Eigen::Index>(known.size());
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    // Start from the training latent nearest in known-column distance.
    Eigen::Index best = 0;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < Y.rows(); ++i) {
      double d2 = 0.0;
      for (Eigen::Index d : known) {
        double diff = Y(i, d) - rows(r, d);
        d2 += diff * diff;
      }
      if (d2 < best_d2) {
        best_d2 = d2;
        best = i;
      }
    }

    Eigen::VectorXd yk(nk);
    for (Eigen::Index j = 0; j < nk; ++j) yk(j) = rows(r, known[j]);

    // Negative predictive log likelihood of the known entries at latent x.
    auto value_at = [&](const Eigen::VectorXd& x) {
      Eigen::VectorXd mu;
      Eigen::MatrixXd cov;
      posterior.predict(x, &mu, &cov);
      Eigen::MatrixXd P(nk, nk);
      Eigen::VectorXd resid(nk);
      for (Eigen::Index a = 0; a < nk; ++a) {
        resid(a) = yk(a) - mu(known[a]);
        for (Eigen::Index b = 0; b < nk; ++b) P(a, b) = cov(known[a], known[b]);
      }
      P.diagonal().array() += sigma2;
      Eigen::LLT<Eigen::MatrixXd> llt(P);
      if (llt.info() != Eigen::Success)
        throw DomainError("reconstruct: predictive covariance not positive definite");
      double logdet = 0.0;
      for (Eigen::Index a = 0; a < nk; ++a)
        logdet += 2.0 * std::log(llt.matrixL()(a, a));
      return 0.5 * resid.dot(llt.solve(resid)) + 0.5 * logdet + 0.5 * nk * kLog2Pi;
    };
    Objective obj = [&](const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
      double f = value_at(x);
      if (grad) {  // deterministic central differences over Q coordinates
        grad->resize(x.size());
        for (Eigen::Index q = 0; q < x.size(); ++q) {
          double h = cfg.fd_step * std::max(1.0, std::abs(x(q)));
          Eigen::VectorXd xp = x, xm = x;
          xp(q) += h;
          xm(q) -= h;
          (*grad)(q) = (value_at(xp) - value_at(xm)) / (2.0 * h);
        }
      }
      return f;
    };

    MinimizeResult mr = minimize(obj, X.row(best).transpose(), mopt);
    Eigen::VectorXd mu;
    Eigen::MatrixXd cov;
    posterior.predict(mr.x, &mu, &cov);
    out.latents.row(r) = mr.x.transpose();
    out.decoded.row(r) = mu.transpose();
    out.variances.row(r) = (cov.diagonal().array() + sigma2).transpose();
    for (Eigen::Index d = 0; d < D; ++d)
      if (masked[d]) out.completed(r, d) = mu(d);
  }
  return out;
}

}  // namespace gpdm
