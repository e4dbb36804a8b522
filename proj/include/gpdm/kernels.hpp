#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace gpdm {

/// Covariance function families. Every family exposes an amplitude-style
/// first hyperparameter; width-style hyperparameters are inverse squared
/// lengthscales so that larger values mean faster decay.
enum class KernelKind {
  Rbf,                // a * exp(-g/2 * |x-x'|^2)             theta = (a, g)
  Linear,             // a * <x, x'>                          theta = (a)
  Matern32,           // a * (1+u) e^-u, u = sqrt(3 g) |x-x'| theta = (a, g)
  Matern52,           // a * (1+u+u^2/3) e^-u, u = sqrt(5 g) r theta = (a, g)
  RationalQuadratic,  // a * (1 + g r^2 / (2 s))^-s           theta = (a, g, s)
  Polynomial,         // a * (<x,x'> + c)^degree              theta = (a, c)
};

int kernel_theta_count(KernelKind kind);
std::string kernel_kind_name(KernelKind kind);

struct KernelTerm {
  KernelKind kind = KernelKind::Rbf;
  double weight = 1.0;              // mixture weight, strictly positive
  std::vector<double> theta;        // strictly positive hyperparameters
  int degree = 2;                   // Polynomial only
};

/// Weighted sum of up to six terms plus an optional observation-noise delta
/// keyed by point index (two points at equal coordinates are distinct unless
/// they carry the same index). noise_precision follows the precision
/// convention: the delta contributes 1/noise_precision to the diagonal.
struct KernelSpec {
  std::vector<KernelTerm> terms;
  bool include_noise = false;
  double noise_precision = 1.0;

  void validate() const;

  /// Flat trainable-parameter view, ordered per term as
  /// (weight, theta...), with noise_precision last when enabled.
  int hyper_count() const;
  std::vector<double> hyper_values() const;
  void set_hyper_values(const std::vector<double>& values);
  std::vector<std::string> hyper_names() const;
};

inline constexpr double kDefaultJitterRel = 1e-8;

/// Single kernel evaluation; same_index marks x and xp as the same indexed
/// point so the noise delta applies (when enabled).
double eval_kernel(const KernelSpec& spec, const Eigen::VectorXd& x,
                   const Eigen::VectorXd& xp, bool same_index = false);

struct GramMatrix {
  Eigen::MatrixXd values;  // includes the diagonal jitter
  double jitter = 0.0;     // amount added to each diagonal entry
};

/// Gram matrix over the rows of `rows` (T x Q). jitter_rel scales the mean
/// diagonal to produce the absolute jitter added to every diagonal entry.
GramMatrix gram(const KernelSpec& spec, const Eigen::MatrixXd& rows,
                double jitter_rel = kDefaultJitterRel);

/// dK/dh for each flat hyperparameter (same order as hyper_values).
/// Jitter is excluded: these are derivatives of the raw Gram entries.
std::vector<Eigen::MatrixXd> gram_hyper_grads(const KernelSpec& spec,
                                              const Eigen::MatrixXd& rows);

/// dK/dx(n,q) as one T x T matrix per latent coordinate, ordered row-major
/// over (n, q). The noise delta never depends on coordinates.
std::vector<Eigen::MatrixXd> gram_coord_grads(const KernelSpec& spec,
                                              const Eigen::MatrixXd& rows);

/// Chain-rule contraction: returns the T x Q matrix with entries
/// sum_{a,b} G(a,b) * dK(a,b)/dx(n,q). Equivalent to contracting
/// gram_coord_grads with G but computed without materializing per-coordinate
/// matrices.
Eigen::MatrixXd gram_input_grad(const KernelSpec& spec, const Eigen::MatrixXd& rows,
                                const Eigen::MatrixXd& G);

/// Text form: "w*rbf(a,g) + w*linear(a) + noise(s2)" where s2 is the noise
/// variance 1/noise_precision. parse_kernel accepts kind aliases
/// (rq/rational_quadratic, poly2/poly3/.../polynomial) and an optional
/// leading "kernel =".
KernelSpec parse_kernel(const std::string& text);
std::string format_kernel(const KernelSpec& spec);

}  // namespace gpdm
