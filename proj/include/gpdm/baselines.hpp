#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "gpdm/dataio.hpp"
#include "gpdm/train.hpp"

namespace gpdm {

// --------------------------------------------------------- GP regression ---

/// Single-output GP regression of SOH on [cycle, battery label], the
/// transfer-learning comparison method. Inputs are kept in raw units; the
/// label dimension doubles as a bias for linear kernels.
struct GpRegressionModel {
  Eigen::MatrixXd Z;        // T x 2 raw inputs [cycle n, label m]
  Eigen::VectorXd targets;  // SOH values
  KernelSpec kernel;
  double sigma2 = 1.0;
  double jitter_rel = kDefaultJitterRel;

  // Cached factorization of the training covariance C = K + sigma2 I.
  Eigen::MatrixXd chol;   // lower Cholesky factor of C
  Eigen::VectorXd alpha;  // C^{-1} targets

  std::vector<double> trace;
  double final_grad_norm = 0.0;
  bool converged = false;
  std::uint64_t seed = 0;
  int restart = 0;
};

struct GpFitConfig {
  std::string optimizer = "cg";
  int max_iters = 500;
  double rel_tol = 1e-6;
  std::uint64_t seed = 0;
  int restarts = 1;
  bool heuristic_init = true;
  double init_jitter = 0.05;  // log-space hyper perturbation for restarts >= 1
  std::optional<double> fixed_sigma2;  // hold the noise variance fixed
  double jitter_rel = kDefaultJitterRel;

  void validate() const;
};

/// Marginal negative log likelihood of a zero-mean GP with iid noise,
/// computed by dense Cholesky (independent of the Kronecker machinery).
double gp_marginal_nll(const KernelSpec& kernel, const Eigen::MatrixXd& inputs,
                       const Eigen::VectorXd& targets, double sigma2,
                       double jitter_rel = kDefaultJitterRel);

/// MAP fit of kernel hyperparameters and noise variance on an assembled
/// training set (columns cycle, label, soh, ...), maximizing the marginal
/// likelihood times the inverse hyperprior with the same optimizer stack as
/// the full model.
GpRegressionModel fit_gp(const TrainingSet& ts, const KernelSpec& spec,
                         const GpFitConfig& cfg = {});

/// Predictive mean and variance (including noise) at raw cycle indices for a
/// fixed battery label.
void predict_gp(const GpRegressionModel& model, const std::vector<double>& cycles,
                double label, Eigen::VectorXd* mean, Eigen::VectorXd* var);

/// Round-trip between the GP baseline and the shared model container
/// (kind == "gp"): inputs ride in params.X, the kernel and noise in the
/// observation block.
GpdmModel gp_to_model(const GpRegressionModel& gp, const TrainingSet& ts);
GpRegressionModel gp_from_model(const GpdmModel& model);

// ------------------------------------------------------------------ GPLVM ---

/// Latent variable model: the full fit with the transition side removed.
/// Returns kind == "gplvm"; the transition blocks in params are inert
/// placeholders (identity L, unit sigma2) excluded from the objective.
GpdmModel fit_gplvm(const TrainingSet& ts, const KernelSpec& kernel_y,
                    const TrainConfig& cfg);

struct ReconstructConfig {
  std::string optimizer = "cg";
  int max_iters = 200;
  double rel_tol = 1e-8;
  double fd_step = 1e-6;  // central-difference step for the latent gradient
  double jitter_rel = kDefaultJitterRel;
};

struct ReconstructResult {
  Eigen::MatrixXd completed;  // input rows with masked entries replaced
  Eigen::MatrixXd decoded;    // full decoded mean at the optimized latent
  Eigen::MatrixXd variances;  // per-column predictive variance (with noise)
  Eigen::MatrixXd latents;    // optimized test latents, one row per input row
};

/// Completes partially observed rows: per row, a test latent is optimized to
/// maximize the predictive likelihood of the known (unmasked) columns, then
/// masked entries are filled with the decoded conditional mean. The latent
/// starts at the training latent of the nearest row in known-column
/// Euclidean distance. Works for both "gplvm" and "gpdm" models.
ReconstructResult gplvm_reconstruct(const GpdmModel& model,
                                    const Eigen::MatrixXd& rows,
                                    const std::vector<bool>& masked,
                                    const ReconstructConfig& cfg = {});

}  // namespace gpdm
