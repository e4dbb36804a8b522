#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gpdm/dataio.hpp"
#include "gpdm/model.hpp"

namespace gpdm {

// ------------------------------------------------------------------ pca ---

struct PcaResult {
  Eigen::MatrixXd X;          // T x Q scores, components by descending variance
  Eigen::MatrixXd W;          // D x Q orthonormal loadings
  Eigen::VectorXd mean;       // column means removed before projection
  Eigen::VectorXd variances;  // sample variance captured per component
  bool degenerate = false;    // zero-variance input; X is all zeros
};

/// Principal-component projection to Q dimensions with a deterministic sign
/// convention (largest-magnitude loading entry positive).
PcaResult pca_init(const Eigen::MatrixXd& Y, int Q);

// -------------------------------------------------------------- optimizer ---

/// Objective callback: returns f(x) and, when grad != nullptr, fills the
/// gradient. Must be deterministic.
using Objective = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd*)>;

struct MinimizeOptions {
  std::string method = "cg";  // "cg" (Polak-Ribiere) or "gd"
  int max_iters = 500;
  double rel_tol = 1e-6;  // converged when |g| < rel_tol * (1 + |f|)
};

struct MinimizeResult {
  Eigen::VectorXd x;
  std::vector<double> trace;  // objective at start and after each accepted step
  double grad_norm = 0.0;
  bool converged = false;
  int iters = 0;
};

/// Deterministic first-order minimization with Armijo backtracking line
/// search; every accepted step strictly decreases the objective.
MinimizeResult minimize(const Objective& f, const Eigen::VectorXd& x0,
                        const MinimizeOptions& opt);

// ------------------------------------------------------ parameter packing ---

/// Which parameter blocks enter the optimization vector. Order is fixed:
/// X rows, kernel_y hypers, kernel_x hypers, L_y, L_x, sigma_y, sigma_x.
/// Positive quantities travel in log space (hypers, sigmas, L diagonals).
struct PackLayout {
  bool with_x = true;
  bool with_kernel_y = true;
  bool with_kernel_x = true;
  bool with_L_y = true;
  bool with_L_x = true;
  bool with_sigma_y = true;
  bool with_sigma_x = true;
};

Eigen::Index packed_size(const GpdmParams& params, const PackLayout& layout);
Eigen::VectorXd pack_params(const GpdmParams& params, const PackLayout& layout);
void unpack_params(const Eigen::VectorXd& v, const PackLayout& layout,
                   GpdmParams* params);
Eigen::VectorXd pack_gradient(const GpdmParams& params, const GpdmGradient& grad,
                              const PackLayout& layout);

// ------------------------------------------------------------------- fit ---

struct TrainConfig {
  int q = 0;  // latent dimension; 0 means "all" (Q = D)
  std::string optimizer = "cg";
  int max_iters = 500;
  double rel_tol = 1e-6;
  std::uint64_t seed = 0;
  int restarts = 1;
  bool dimension_exponents = false;
  bool heuristic_init = true;   // re-initialize kernel hypers from data scale
  double init_jitter = 0.05;    // latent perturbation sd for restarts >= 1
  double jitter_rel = kDefaultJitterRel;

  void validate() const;
};

/// A fitted model: parameters plus the training rows and normalization
/// metadata needed to forecast in raw units later.
struct GpdmModel {
  std::string kind = "gpdm";  // "gpdm" | "gplvm" | "gp"
  GpdmParams params;
  TrainingSet data;
  std::vector<double> trace;
  double final_grad_norm = 0.0;
  bool converged = false;
  std::uint64_t seed = 0;   // config seed
  int restart = 0;          // index of the winning restart
  bool dimension_exponents = false;
  std::vector<std::string> warnings;
};

/// MAP fit of the full latent dynamical model over cfg.restarts seeded
/// restarts, keeping the lowest final objective (ties: lowest restart).
/// Rows of an assembled set (columns cycle/label/...) are canonicalized by
/// (label, cycle) first, making the fit row-order invariant.
GpdmModel fit(const TrainingSet& ts, const KernelSpec& kernel_y,
              const KernelSpec& kernel_x, const TrainConfig& cfg);

/// Median pairwise squared distance between rows (0 when all rows coincide).
double median_squared_distance(const Eigen::MatrixXd& rows);

/// The documented data-scale initialization: amplitudes and weights 1,
/// inverse-lengthscales 1/median-squared-distance.
void heuristic_kernel_init(KernelSpec* spec, double med_sq_dist);

// ------------------------------------------------------------ persistence ---

std::string model_to_text(const GpdmModel& model);
GpdmModel model_from_text(const std::string& text);
void save_model(const GpdmModel& model, const std::string& path);
GpdmModel load_model(const std::string& path);

}  // namespace gpdm
