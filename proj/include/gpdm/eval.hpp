#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "gpdm/baselines.hpp"
#include "gpdm/dataio.hpp"
#include "gpdm/forecast.hpp"
#include "gpdm/train.hpp"

namespace gpdm {

/// Root mean squared error between two equal-length series.
double rmse(const Eigen::VectorXd& pred, const Eigen::VectorXd& truth);

/// Capacity-fade curve shape: fade(n) = 1 - a*n - b*(exp(c*n) - 1)
/// + ripple*sin(2*pi*n/period).
struct FadeParams {
  double a = 0.0012;
  double b = 0.004;
  double c = 0.03;
  double ripple = 0.002;
  double period = 25.0;
};

struct SynthConfig {
  int batteries = 3;
  int cycles = 120;
  FadeParams fade;      // fleet-mean fade parameters
  double noise = 0.005; // sd of additive Gaussian noise on SOH and attributes
  double jitter = 0.10; // relative per-battery spread of the fade parameters
  std::uint64_t seed = 0;
  // Attribute construction coefficients (all correlate linearly with SOH).
  double v0 = 3.0, v1 = 0.8;    // midpoint_voltage = v0 + v1*soh
  double t0 = 45.0, t1 = 15.0;  // midpoint_temperature = t0 - t1*soh
  double e0 = 1.8;              // energy = e0*soh

  void validate() const;
};

struct SynthFleet {
  std::vector<BatteryDataset> batteries;
  std::vector<FadeParams> realized;  // per-battery fade parameters actually used
  Eigen::MatrixXd true_soh;          // cycles x batteries, noise-free, normalized
};

/// Deterministic synthetic degradation fleet with known ground truth.
/// Capacities follow the per-battery fade curve; SOH is capacity relative to
/// the first cycle, so soh(1) == 1 exactly. Throws DomainError if a realized
/// curve reaches zero or below within the horizon.
SynthFleet synth_fleet(const SynthConfig& cfg);

struct ExperimentConfig {
  std::vector<BatteryDataset> datasets;
  std::vector<std::string> targets;  // empty -> every dataset id
  std::vector<double> ratios{0.33, 0.50, 0.70};
  std::vector<std::string> methods{"gpdm", "gpdm_no_transfer", "gp"};
  int seeds = 5;
  double eol_threshold = 0.8;
  int jobs = 1;
  TrainConfig train;  // latent-model settings; per-run seeds derive from train.seed
  GpFitConfig gp;     // regression-baseline settings; seeds derive from gp.seed
  // Empty specs fall back to the module defaults below.
  KernelSpec kernel_y, kernel_x, kernel_gp;

  void validate() const;
};

KernelSpec default_observation_kernel();
KernelSpec default_dynamics_kernel();
KernelSpec default_regression_kernel();

/// One (battery, ratio, method) cell of the experiment matrix. Per-seed
/// failures are NaN entries with a reason in notes; means are arithmetic
/// means over exactly `seeds` values, so any failure propagates as NaN.
struct CellResult {
  std::string battery;
  double ratio = 0.0;
  std::string method;
  std::vector<double> seed_rmse;
  std::vector<double> seed_eol_error;  // forecast EOL minus true EOL
  std::vector<double> seed_coverage;   // held-out fraction inside the 95% band
  double mean_rmse = 0.0;
  double mean_eol_error = 0.0;
  double mean_coverage = 0.0;
  std::string status;  // "ok", "not-applicable", or "failed"
  std::vector<std::string> notes;
};

struct ReportTable {
  std::vector<CellResult> cells;
};

/// Full battery x ratio x method x seed matrix. Deterministic for equal
/// configs (independent of jobs); per-cell failures never abort the matrix.
ReportTable run_experiment(const ExperimentConfig& cfg);

/// Forecast band plus held-out truth for one (battery, ratio, method, seed)
/// cell, using the same dataset pooling and seed derivation as
/// run_experiment. Throws instead of degrading: intended for report plots.
struct CellForecast {
  std::vector<int> cycles;            // held-out cycle indices
  Eigen::VectorXd mean, lo, hi;       // natural-unit SOH band
  Eigen::VectorXd truth;              // held-out SOH
};
CellForecast cell_forecast(const ExperimentConfig& cfg, const std::string& battery,
                           double ratio, const std::string& method, int seed_index);

/// Machine-readable rendering: one row per cell, per-seed values
/// semicolon-joined inside their columns.
std::string report_to_csv(const ReportTable& table);
/// Human-readable side-by-side table.
std::string report_to_text(const ReportTable& table);

/// Single data series for the hand-rolled SVG renderer; when lo/hi are
/// populated (same length as x) a shaded band is drawn behind the line.
struct SvgSeries {
  std::string label;
  std::string color = "#1f77b4";
  std::vector<double> x, y;
  std::vector<double> lo, hi;
};

/// Self-contained SVG line plot (axes, ticks, legend, optional bands).
std::string line_plot_svg(const std::string& title, const std::string& x_label,
                          const std::string& y_label,
                          const std::vector<SvgSeries>& series, int width = 720,
                          int height = 440);

}  // namespace gpdm
