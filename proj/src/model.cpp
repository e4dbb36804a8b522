#include "gpdm/model.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

#include <json.hpp>

#include "gpdm/util.hpp"
#include "json_io.hpp"

namespace gpdm {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112353;

using RowMajorMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

Eigen::VectorXd to_stacked(const Eigen::MatrixXd& M) {
  Eigen::VectorXd v(M.size());
  for (Eigen::Index n = 0; n < M.rows(); ++n)
    for (Eigen::Index d = 0; d < M.cols(); ++d) v(n * M.cols() + d) = M(n, d);
  return v;
}

// Inverse-prior contribution: sum log theta over the spec's trainable
// hyperparameters plus log sigma^2 (equal to 2 log sigma).
double prior_terms(const KernelSpec& spec, double sigma2) {
  double s = 0.0;
  for (double h : spec.hyper_values()) s += std::log(h);
  return s + std::log(sigma2);
}

void require_no_internal_noise(const KernelSpec& spec, const char* where) {
  if (spec.include_noise)
    throw std::invalid_argument(std::string(where) +
                                ": kernel delta term is disabled here; model noise "
                                "enters only through sigma2");
}

}  // namespace

// ------------------------------------------------------- CholeskyFactor ---

CholeskyFactor CholeskyFactor::identity(int n) {
  return CholeskyFactor{Eigen::MatrixXd::Identity(n, n)};
}

void CholeskyFactor::validate() const {
  if (L.rows() != L.cols() || L.rows() == 0)
    throw std::invalid_argument("CholeskyFactor: square matrix required");
  for (Eigen::Index i = 0; i < L.rows(); ++i) {
    if (!(L(i, i) > 0.0))
      throw std::invalid_argument("CholeskyFactor: diagonal must be positive");
    for (Eigen::Index j = i + 1; j < L.cols(); ++j)
      if (L(i, j) != 0.0)
        throw std::invalid_argument("CholeskyFactor: upper triangle must be zero");
  }
}

void GpdmParams::validate(Eigen::Index T, Eigen::Index D) const {
  if (X.rows() != T) throw std::invalid_argument("params: latent row count mismatch");
  if (!X.allFinite()) throw std::invalid_argument("params: non-finite latent entry");
  kernel_y.validate();
  kernel_x.validate();
  require_no_internal_noise(kernel_y, "params.kernel_y");
  require_no_internal_noise(kernel_x, "params.kernel_x");
  L_y.validate();
  L_x.validate();
  if (L_y.L.rows() != D) throw std::invalid_argument("params: L_y dimension mismatch");
  if (L_x.L.rows() != X.cols()) throw std::invalid_argument("params: L_x dimension mismatch");
  if (!(sigma2_y > 0.0) || !(sigma2_x > 0.0))
    throw std::invalid_argument("params: variances must be strictly positive");
}

// -------------------------------------------------- StructuredCovariance ---

StructuredCovariance StructuredCovariance::make(const Eigen::MatrixXd& K,
                                                const Eigen::MatrixXd& S, double sigma2) {
  if (K.rows() != K.cols() || S.rows() != S.cols())
    throw std::invalid_argument("structured covariance: square factors required");
  StructuredCovariance out;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ek(K);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
  if (ek.info() != Eigen::Success || es.info() != Eigen::Success)
    throw DomainError("structured covariance: eigendecomposition failed");
  out.U_ = ek.eigenvectors();
  out.lam_ = ek.eigenvalues();
  out.V_ = es.eigenvectors();
  out.gam_ = es.eigenvalues();
  out.sigma2_ = sigma2;
  // PSD inputs can carry tiny negative rounding; clamp those, reject worse.
  auto clamp = [](Eigen::VectorXd& v, const char* name) {
    double scale = std::max(1.0, v.cwiseAbs().maxCoeff());
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      if (v(i) < -1e-10 * scale)
        throw DomainError(std::string("structured covariance: ") + name +
                          " is not positive semidefinite");
      if (v(i) < 0) v(i) = 0;
    }
  };
  clamp(out.lam_, "row gram");
  clamp(out.gam_, "column covariance");
  out.denom_ = (out.lam_ * out.gam_.transpose()).array() + sigma2;
  if ((out.denom_ <= 0.0).any())
    throw DomainError("structured covariance: singular (lam*gam + sigma2 <= 0)");
  return out;
}

Eigen::MatrixXd StructuredCovariance::solve_rows(const Eigen::MatrixXd& Y) const {
  if (Y.rows() != lam_.size() || Y.cols() != gam_.size())
    throw std::invalid_argument("structured solve: shape mismatch");
  Eigen::MatrixXd t = U_.transpose() * Y * V_;
  t.array() /= denom_;
  return U_ * t * V_.transpose();
}

Eigen::VectorXd StructuredCovariance::solve(const Eigen::VectorXd& v) const {
  if (v.size() != rows()) throw std::invalid_argument("structured solve: length mismatch");
  RowMajorMap m(v.data(), lam_.size(), gam_.size());
  return to_stacked(solve_rows(m));
}

double StructuredCovariance::logdet() const { return denom_.log().sum(); }

double StructuredCovariance::trace_inverse() const { return denom_.inverse().sum(); }

Eigen::MatrixXd StructuredCovariance::grad_row_gram(double w_logdet,
                                                    const Eigen::MatrixXd& alpha,
                                                    const Eigen::MatrixXd& S) const {
  // d/dK [w/2 log|Sigma| + 1/2 vec(Y)' Sigma^{-1} vec(Y)]
  //   = w/2 * U diag(c) U' - 1/2 * alpha S alpha',
  // where c_i = sum_j gam_j / (lam_i gam_j + sigma2).
  Eigen::VectorXd c = (denom_.inverse().matrix() * gam_);
  Eigen::MatrixXd logdet_part = U_ * c.asDiagonal() * U_.transpose();
  return 0.5 * (w_logdet * logdet_part - alpha * S * alpha.transpose());
}

Eigen::MatrixXd StructuredCovariance::grad_col_cov(double w_logdet,
                                                   const Eigen::MatrixXd& alpha,
                                                   const Eigen::MatrixXd& K) const {
  Eigen::VectorXd e = (denom_.inverse().matrix().transpose() * lam_);
  Eigen::MatrixXd logdet_part = V_ * e.asDiagonal() * V_.transpose();
  return 0.5 * (w_logdet * logdet_part - alpha.transpose() * K * alpha);
}

// -------------------------------------------------------- objective core ---

namespace {

// One Gaussian block: value terms and, optionally, gradients w.r.t. the
// kernel hyperparameters, the kernel inputs, L, and sigma2.
struct GaussianBlock {
  double nll = 0.0;          // w/2 log|Sigma| + quad/2 + dim/2 log 2pi
  Eigen::MatrixXd alpha;     // Sigma^{-1} targets (matrix shape)
  StructuredCovariance cov;
};

GaussianBlock gaussian_block(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets,
                             const KernelSpec& kernel, const CholeskyFactor& Lf,
                             double sigma2, double w_logdet, double jitter_rel) {
  GaussianBlock out;
  GramMatrix gm = gram(kernel, inputs, jitter_rel);
  Eigen::MatrixXd S = Lf.outer();
  out.cov = StructuredCovariance::make(gm.values, S, sigma2);
  out.alpha = out.cov.solve_rows(targets);
  double quad = (targets.array() * out.alpha.array()).sum();
  double dim = static_cast<double>(targets.size());
  out.nll = 0.5 * w_logdet * out.cov.logdet() + 0.5 * quad + 0.5 * dim * kLog2Pi;
  return out;
}

struct BlockGrads {
  std::vector<double> d_hyper;
  Eigen::MatrixXd d_inputs;  // via the kernel only (not via targets)
  Eigen::MatrixXd dL;
  double d_sigma2 = 0.0;
};

BlockGrads gaussian_block_grads(const GaussianBlock& block, const Eigen::MatrixXd& inputs,
                                const KernelSpec& kernel, const CholeskyFactor& Lf,
                                double w_logdet, double jitter_rel) {
  BlockGrads out;
  Eigen::MatrixXd S = Lf.outer();
  // Reconstruct the jittered K inside Sigma for the S-gradient quad term.
  GramMatrix gm = gram(kernel, inputs, jitter_rel);

  Eigen::MatrixXd Gk = block.cov.grad_row_gram(w_logdet, block.alpha, S);
  // Jitter is jitter_rel * mean(diag K_raw): fold its chain rule into the
  // contraction weights so hyper and coordinate gradients stay exact.
  const double T = static_cast<double>(inputs.rows());
  Eigen::MatrixXd Gk_eff = Gk;
  Gk_eff.diagonal().array() += jitter_rel * Gk.trace() / T;

  auto hyper_mats = gram_hyper_grads(kernel, inputs);
  out.d_hyper.resize(hyper_mats.size());
  for (size_t i = 0; i < hyper_mats.size(); ++i)
    out.d_hyper[i] = (Gk_eff.array() * hyper_mats[i].array()).sum();

  out.d_inputs = gram_input_grad(kernel, inputs, Gk_eff);

  Eigen::MatrixXd Gs = block.cov.grad_col_cov(w_logdet, block.alpha, gm.values);
  out.dL = 2.0 * Gs * Lf.L;
  out.dL = out.dL.triangularView<Eigen::Lower>();

  out.d_sigma2 =
      0.5 * (w_logdet * block.cov.trace_inverse() - block.alpha.squaredNorm());
  return out;
}

}  // namespace

double observation_nll(const Eigen::MatrixXd& Y, const GpdmParams& params,
                       const ObjectiveConfig& cfg) {
  params.validate(Y.rows(), Y.cols());
  double w = cfg.dimension_exponents ? static_cast<double>(Y.cols()) : 1.0;
  return gaussian_block(params.X, Y, params.kernel_y, params.L_y, params.sigma2_y, w,
                        cfg.jitter_rel)
      .nll;
}

double dynamics_nll(const GpdmParams& params, const ObjectiveConfig& cfg) {
  const Eigen::Index T = params.X.rows();
  if (T < 2) throw std::invalid_argument("dynamics_nll: needs at least two rows");
  const Eigen::Index Q = params.X.cols();
  double w = cfg.dimension_exponents ? static_cast<double>(Q) : 1.0;
  Eigen::MatrixXd Xin = params.X.topRows(T - 1);
  Eigen::MatrixXd Xout = params.X.bottomRows(T - 1);
  double nll = gaussian_block(Xin, Xout, params.kernel_x, params.L_x, params.sigma2_x, w,
                              cfg.jitter_rel)
                   .nll;
  return nll + 0.5 * params.X.row(0).squaredNorm();
}

ObjectiveTerms objective_terms(const Eigen::MatrixXd& Y, const GpdmParams& params,
                               const ObjectiveConfig& cfg) {
  ObjectiveTerms t;
  t.observation = observation_nll(Y, params, cfg);
  t.dynamics = dynamics_nll(params, cfg);
  t.prior_y = prior_terms(params.kernel_y, params.sigma2_y);
  t.prior_x = prior_terms(params.kernel_x, params.sigma2_x);
  return t;
}

double neg_log_posterior(const Eigen::MatrixXd& Y, const GpdmParams& params,
                         const ObjectiveConfig& cfg) {
  return objective_terms(Y, params, cfg).total();
}

double neg_log_posterior_grad(const Eigen::MatrixXd& Y, const GpdmParams& params,
                              GpdmGradient* grad, const ObjectiveConfig& cfg,
                              bool include_dynamics) {
  params.validate(Y.rows(), Y.cols());
  const Eigen::Index T = params.X.rows();
  const Eigen::Index Q = params.X.cols();
  const Eigen::Index D = Y.cols();

  double w_y = cfg.dimension_exponents ? static_cast<double>(D) : 1.0;
  GaussianBlock obs = gaussian_block(params.X, Y, params.kernel_y, params.L_y,
                                     params.sigma2_y, w_y, cfg.jitter_rel);
  double value = obs.nll + prior_terms(params.kernel_y, params.sigma2_y);

  GpdmGradient g;
  if (grad) {
    g.dX = Eigen::MatrixXd::Zero(T, Q);
    BlockGrads og = gaussian_block_grads(obs, params.X, params.kernel_y, params.L_y, w_y,
                                         cfg.jitter_rel);
    g.d_hyper_y = og.d_hyper;
    g.dX += og.d_inputs;
    g.dL_y = og.dL;
    g.d_sigma2_y = og.d_sigma2 + 1.0 / params.sigma2_y;
    auto hy = params.kernel_y.hyper_values();
    for (size_t i = 0; i < hy.size(); ++i) g.d_hyper_y[i] += 1.0 / hy[i];
    g.d_hyper_x.assign(params.kernel_x.hyper_values().size(), 0.0);
    g.dL_x = Eigen::MatrixXd::Zero(Q, Q);
  }

  if (include_dynamics) {
    if (T < 2) throw std::invalid_argument("dynamics: needs at least two rows");
    double w_x = cfg.dimension_exponents ? static_cast<double>(Q) : 1.0;
    Eigen::MatrixXd Xin = params.X.topRows(T - 1);
    Eigen::MatrixXd Xout = params.X.bottomRows(T - 1);
    GaussianBlock dyn = gaussian_block(Xin, Xout, params.kernel_x, params.L_x,
                                       params.sigma2_x, w_x, cfg.jitter_rel);
    value += dyn.nll + 0.5 * params.X.row(0).squaredNorm() +
             prior_terms(params.kernel_x, params.sigma2_x);
    if (grad) {
      BlockGrads dg = gaussian_block_grads(dyn, Xin, params.kernel_x, params.L_x, w_x,
                                           cfg.jitter_rel);
      g.d_hyper_x = dg.d_hyper;
      auto hx = params.kernel_x.hyper_values();
      for (size_t i = 0; i < hx.size(); ++i) g.d_hyper_x[i] += 1.0 / hx[i];
      g.dX.topRows(T - 1) += dg.d_inputs;   // through the transition gram
      g.dX.bottomRows(T - 1) += dyn.alpha;  // through the transition targets
      g.dX.row(0) += params.X.row(0);       // x1 prior
      g.dL_x = dg.dL;
      g.d_sigma2_x = dg.d_sigma2 + 1.0 / params.sigma2_x;
    }
  }

  if (grad) *grad = std::move(g);
  return value;
}

// ------------------------------------------------- posterior conditioning ---

KroneckerGpPosterior::KroneckerGpPosterior(const Eigen::MatrixXd& inputs,
                                           const Eigen::MatrixXd& targets,
                                           const KernelSpec& kernel,
                                           const Eigen::MatrixXd& S, double sigma2,
                                           double jitter_rel)
    : inputs_(inputs), kernel_(kernel), S_(S) {
  require_no_internal_noise(kernel, "posterior kernel");
  if (inputs.rows() != targets.rows())
    throw std::invalid_argument("posterior: inputs/targets row mismatch");
  if (S.rows() != targets.cols())
    throw std::invalid_argument("posterior: column covariance shape mismatch");
  GramMatrix gm = gram(kernel_, inputs_, jitter_rel);
  cov_ = StructuredCovariance::make(gm.values, S_, sigma2);
  alpha_ = cov_.solve_rows(targets);
}

void KroneckerGpPosterior::predict(const Eigen::VectorXd& x, Eigen::VectorXd* mean,
                                   Eigen::MatrixXd* cov) const {
  const Eigen::Index T = inputs_.rows();
  Eigen::VectorXd k(T);
  for (Eigen::Index n = 0; n < T; ++n)
    k(n) = eval_kernel(kernel_, x, inputs_.row(n).transpose());
  double kss = eval_kernel(kernel_, x, x);
  if (mean) *mean = S_ * (alpha_.transpose() * k);
  if (cov) {
    // (k (x) S)' Sigma^{-1} (k (x) S) = B' diag(w) B with a = U'k, B = V'S,
    // w_j = sum_i a_i^2 / (lam_i gam_j + sigma2).
    Eigen::VectorXd a = cov_.U().transpose() * k;
    Eigen::MatrixXd B = cov_.V().transpose() * S_;
    Eigen::MatrixXd inv_denom =
        ((cov_.lam() * cov_.gam().transpose()).array() + cov_.sigma2()).inverse();
    Eigen::VectorXd w = inv_denom.transpose() * a.cwiseAbs2();
    Eigen::MatrixXd reduce = B.transpose() * w.asDiagonal() * B;
    Eigen::MatrixXd out = kss * S_ - reduce;
    *cov = 0.5 * (out + out.transpose());
  }
}

// ----------------------------------------------------------- persistence ---

std::string params_to_text(const GpdmParams& params) {
  nlohmann::json j;
  j["format"] = "gpdm-params";
  j["version"] = 1;
  j["kernel_y"] = format_kernel(params.kernel_y);
  j["kernel_x"] = format_kernel(params.kernel_x);
  j["x"] = matrix_to_json(params.X);
  j["l_y"] = matrix_to_json(params.L_y.L);
  j["l_x"] = matrix_to_json(params.L_x.L);
  j["sigma2_y"] = params.sigma2_y;
  j["sigma2_x"] = params.sigma2_x;
  return j.dump(2) + "\n";
}

GpdmParams params_from_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DomainError(std::string("params: JSON parse failure: ") + e.what());
  }
  if (j.value("format", "") != "gpdm-params")
    throw DomainError("params: unrecognized format tag");
  if (j.value("version", 0) != 1) throw DomainError("params: unsupported version");
  GpdmParams p;
  p.kernel_y = parse_kernel(j.at("kernel_y").get<std::string>());
  p.kernel_x = parse_kernel(j.at("kernel_x").get<std::string>());
  p.X = matrix_from_json(j.at("x"));
  p.L_y.L = matrix_from_json(j.at("l_y"));
  p.L_x.L = matrix_from_json(j.at("l_x"));
  p.sigma2_y = j.at("sigma2_y").get<double>();
  p.sigma2_x = j.at("sigma2_x").get<double>();
  return p;
}

}  // namespace gpdm
