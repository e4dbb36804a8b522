#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "gpdm/kernels.hpp"

namespace gpdm {

/// Lower-triangular factor with positive diagonal; S = L L^T.
struct CholeskyFactor {
  Eigen::MatrixXd L;

  static CholeskyFactor identity(int n);
  Eigen::MatrixXd outer() const { return L * L.transpose(); }
  void validate() const;
};

/// Full parameter set of the latent dynamical model. X rows are per-cycle
/// latent coordinates; kernel_y/L_y/sigma2_y parameterize the latent-to-
/// observation map and kernel_x/L_x/sigma2_x the latent transition map.
struct GpdmParams {
  Eigen::MatrixXd X;  // T x Q
  KernelSpec kernel_y, kernel_x;
  CholeskyFactor L_y;  // D x D
  CholeskyFactor L_x;  // Q x Q
  double sigma2_y = 1.0;
  double sigma2_x = 1.0;

  void validate(Eigen::Index T, Eigen::Index D) const;
};

struct ObjectiveConfig {
  /// When set, the log-determinant terms are weighted by D (observation)
  /// and Q (dynamics) instead of the standard 1/2-consistent weight of 1.
  bool dimension_exponents = false;
  double jitter_rel = kDefaultJitterRel;
};

/// Sigma = K (x) S + sigma2 I held as paired eigendecompositions
/// K = U diag(lam) U^T and S = V diag(gam) V^T. Vectors follow row-major
/// stacking of a T x D matrix: index (n, d) -> n*D + d.
class StructuredCovariance {
 public:
  static StructuredCovariance make(const Eigen::MatrixXd& K, const Eigen::MatrixXd& S,
                                   double sigma2);

  Eigen::Index rows() const { return lam_.size() * gam_.size(); }

  /// Sigma^{-1} v for a stacked vector.
  Eigen::VectorXd solve(const Eigen::VectorXd& v) const;
  /// Sigma^{-1} vec(Y) returned in matrix shape (Y is T x D).
  Eigen::MatrixXd solve_rows(const Eigen::MatrixXd& Y) const;
  double logdet() const;
  /// tr(Sigma^{-1}).
  double trace_inverse() const;

  const Eigen::MatrixXd& U() const { return U_; }
  const Eigen::MatrixXd& V() const { return V_; }
  const Eigen::VectorXd& lam() const { return lam_; }
  const Eigen::VectorXd& gam() const { return gam_; }
  double sigma2() const { return sigma2_; }

  /// Gradient of w/2 log|Sigma| + 1/2 vec(Y)' Sigma^{-1} vec(Y) w.r.t. K,
  /// given alpha = solve_rows(Y) and the S actually inside Sigma.
  Eigen::MatrixXd grad_row_gram(double w_logdet, const Eigen::MatrixXd& alpha,
                                const Eigen::MatrixXd& S) const;
  /// Same gradient w.r.t. S, given the (jittered) K inside Sigma.
  Eigen::MatrixXd grad_col_cov(double w_logdet, const Eigen::MatrixXd& alpha,
                               const Eigen::MatrixXd& K) const;

 private:
  Eigen::MatrixXd U_, V_;
  Eigen::VectorXd lam_, gam_;
  double sigma2_ = 0.0;
  Eigen::ArrayXXd denom_;  // lam_i * gam_j + sigma2, T x D
};

/// Additive pieces of the negative joint log posterior.
struct ObjectiveTerms {
  double observation = 0.0;  // Gaussian NLL of Y given X
  double dynamics = 0.0;     // Gaussian NLL of transitions plus x1 prior
  double prior_y = 0.0;      // inverse-prior terms for kernel_y and sigma_y
  double prior_x = 0.0;      // inverse-prior terms for kernel_x and sigma_x

  double total() const { return observation + dynamics + prior_y + prior_x; }
  /// Observation-only objective (the dynamics-free latent variable model).
  double observation_only() const { return observation + prior_y; }
};

/// Gradient in natural (untransformed) parameter space.
struct GpdmGradient {
  Eigen::MatrixXd dX;
  std::vector<double> d_hyper_y, d_hyper_x;
  Eigen::MatrixXd dL_y, dL_x;  // lower-triangular entries populated
  double d_sigma2_y = 0.0;
  double d_sigma2_x = 0.0;
};

double observation_nll(const Eigen::MatrixXd& Y, const GpdmParams& params,
                       const ObjectiveConfig& cfg = {});
double dynamics_nll(const GpdmParams& params, const ObjectiveConfig& cfg = {});
/// observation_nll + dynamics_nll + sum log theta + 2 sum log sigma.
double neg_log_posterior(const Eigen::MatrixXd& Y, const GpdmParams& params,
                         const ObjectiveConfig& cfg = {});
ObjectiveTerms objective_terms(const Eigen::MatrixXd& Y, const GpdmParams& params,
                               const ObjectiveConfig& cfg = {});

/// Value plus analytic gradient; include_dynamics=false evaluates only the
/// observation term and its priors (latent-variable-model objective).
double neg_log_posterior_grad(const Eigen::MatrixXd& Y, const GpdmParams& params,
                              GpdmGradient* grad, const ObjectiveConfig& cfg = {},
                              bool include_dynamics = true);

/// Posterior conditioning machinery for a Kronecker-structured GP map from
/// `inputs` rows to `targets` rows. Used by both the forecaster and the
/// baselines; building one performs the eigendecompositions once.
class KroneckerGpPosterior {
 public:
  KroneckerGpPosterior(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets,
                       const KernelSpec& kernel, const Eigen::MatrixXd& S, double sigma2,
                       double jitter_rel = kDefaultJitterRel);

  /// Conditional mean and covariance of the D-dim output at a new input x.
  void predict(const Eigen::VectorXd& x, Eigen::VectorXd* mean,
               Eigen::MatrixXd* cov) const;

  Eigen::Index output_dim() const { return S_.rows(); }

 private:
  Eigen::MatrixXd inputs_;
  KernelSpec kernel_;
  Eigen::MatrixXd S_;
  StructuredCovariance cov_;
  Eigen::MatrixXd alpha_;  // Sigma^{-1} vec(targets), matrix shape
};

/// Versioned text serialization (JSON) with exact double round-trip.
std::string params_to_text(const GpdmParams& params);
GpdmParams params_from_text(const std::string& text);

}  // namespace gpdm
