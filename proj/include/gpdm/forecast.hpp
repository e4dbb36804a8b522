#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "gpdm/train.hpp"

namespace gpdm {

struct ForecastConfig {
  /// Substitute the exactly known future cycle/label values into reported
  /// means (assembled training sets only).
  bool pin_deterministic_columns = true;
  /// Truncate the rollout when the latent norm exceeds this multiple of the
  /// training latent radius.
  double divergence_factor = 10.0;
  /// Confidence band half-width in standard deviations.
  double band_z = 1.96;
  double jitter_rel = kDefaultJitterRel;
};

struct ForecastResult {
  std::vector<int> cycles;             // forecast cycle indices T+1..H
  Eigen::MatrixXd y_mean;              // per-step channel means (normalized space)
  std::vector<Eigen::MatrixXd> y_var;  // per-step channel covariance
  Eigen::VectorXd soh_mean;            // natural units
  Eigen::VectorXd soh_lo, soh_hi;      // mean -/+ band_z standard deviations
  Eigen::MatrixXd latent_path;         // row j: latent driving cycle T+1+j
  std::optional<int> eol;              // first forecast cycle with soh <= threshold
  std::optional<int> rul;              // eol minus the current cycle T
  bool truncated = false;              // divergence bound hit before the horizon
  std::vector<std::string> warnings;
};

struct EolRul {
  std::optional<int> eol;
  std::optional<int> rul;
};

/// First-crossing scan: EOL is the smallest 1-based position n in the series
/// with soh(n) <= threshold (later recoveries are ignored); RUL = EOL -
/// current_cycle. Both absent when the series never crosses.
EolRul eol_rul(const Eigen::VectorXd& soh, double threshold, int current_cycle);

/// Read-only forecasting machinery over a trained dynamical model: builds the
/// transition and observation posteriors once, then serves conditioning
/// queries and mean rollouts.
class Forecaster {
 public:
  explicit Forecaster(const GpdmModel& model, const ForecastConfig& cfg = {});

  /// Conditional next-latent distribution at latent x.
  void latent_step(const Eigen::VectorXd& x, Eigen::VectorXd* mean,
                   Eigen::MatrixXd* cov) const;
  /// Conditional channel distribution at latent x.
  void observe(const Eigen::VectorXd& x, Eigen::VectorXd* mean,
               Eigen::MatrixXd* cov) const;

  /// Mean-propagation forecast of cycles current+1..horizon with confidence
  /// bands and EOL/RUL extraction at the given SOH threshold.
  ForecastResult rollout(int horizon, double threshold) const;

  /// The latent of the target battery's final training row (rollout anchor).
  const Eigen::VectorXd& anchor() const { return anchor_; }
  /// The anchor's cycle index (the "current" cycle the forecast starts after).
  int current_cycle() const { return current_cycle_; }

 private:
  GpdmModel model_;
  ForecastConfig cfg_;
  KroneckerGpPosterior dynamics_;
  KroneckerGpPosterior observation_;
  Eigen::VectorXd anchor_;
  int current_cycle_ = 0;
  double radius_ = 0.0;
  bool assembled_ = false;
};

/// One-shot conveniences mirroring the class methods.
void latent_step(const GpdmModel& model, const Eigen::VectorXd& x,
                 Eigen::VectorXd* mean, Eigen::MatrixXd* cov);
void observe(const GpdmModel& model, const Eigen::VectorXd& x,
             Eigen::VectorXd* mean, Eigen::MatrixXd* cov);
ForecastResult rollout(const GpdmModel& model, int horizon, double threshold,
                       const ForecastConfig& cfg = {});

/// CSV rendering: `cycle,soh_mean,soh_lo,soh_hi,<attr>_mean...` with attribute
/// channels converted back to natural units.
std::string forecast_to_csv(const GpdmModel& model, const ForecastResult& fc);
/// CSV rendering of the latent trajectory: `cycle,x0,x1,...`.
std::string latent_path_to_csv(const ForecastResult& fc);

}  // namespace gpdm
