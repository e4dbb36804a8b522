#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace gpdm {

/// One discharge cycle of raw measurements. Arrays are sample-aligned and
/// time is strictly increasing; capacity is the per-cycle discharge total.
struct RawCycle {
  int index = 0;  // as recorded in the source file
  Eigen::VectorXd t, voltage, current, temperature;
  double capacity = 0.0;
};

struct RawCycleSet {
  std::string battery_id;
  std::vector<RawCycle> cycles;
  std::vector<std::string> warnings;
};

/// Parse a canonical per-sample cycle CSV (header battery_id,cycle,t_s,
/// voltage_v,current_a,temperature_c,capacity_ah). One battery per file;
/// cycles with non-finite time/voltage/temperature/capacity are dropped
/// with a warning. Non-monotone time or mixed battery ids are errors.
RawCycleSet load_raw(const std::string& path);

/// Load every *.csv in a directory (sorted by filename), one battery each.
std::vector<RawCycleSet> load_raw_dir(const std::string& dir);

/// Natural cubic spline through (x, y), evaluated at query points inside
/// [x.front(), x.back()]. Needs at least two knots; x strictly increasing.
Eigen::VectorXd natural_spline(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                               const Eigen::VectorXd& xq);

struct PreprocessConfig {
  double cutoff = 2.7;  // discharge cut-off voltage
  int grid = 200;       // resampled points per cycle
};

/// Invertible affine column scaling: apply(x) = (x - offset) / span.
struct ColumnTransform {
  double offset = 0.0;
  double span = 1.0;

  double apply(double x) const { return (x - offset) / span; }
  double invert(double x) const { return x * span + offset; }
};

/// Min-max transform over the given values; degenerate ranges get span 1.
ColumnTransform fit_minmax(const Eigen::VectorXd& values);

struct CycleRecord {
  int index = 0;      // consecutive 1..n over kept cycles
  int raw_index = 0;  // source cycle number
  double capacity = 0.0;
  double soh = 0.0;  // capacity / capacity of first kept cycle
  double t0 = 0.0, t1 = 0.0;  // resampled window (t1 hits the cut-off crossing)
};

/// Preprocessed per-battery data: truncated and resampled grids plus scalar
/// attributes. Grids may be empty (synthetic data built directly from
/// attributes); attribute values are stored raw with their fitted ranges.
struct BatteryDataset {
  std::string battery_id;
  double cutoff = 0.0;
  int grid = 0;
  std::vector<CycleRecord> cycles;
  Eigen::MatrixXd voltage;      // n x grid (or 0 x 0)
  Eigen::MatrixXd temperature;  // n x grid (or 0 x 0)
  std::vector<std::string> attribute_names;
  Eigen::MatrixXd attributes;  // n x A, raw values
  std::vector<ColumnTransform> attribute_ranges;  // per attribute, min-max fit
  std::vector<std::string> warnings;

  Eigen::Index n_cycles() const { return static_cast<Eigen::Index>(cycles.size()); }
};

/// Truncate each cycle at the cut-off voltage (exact interpolated crossing
/// appended as the final knot), resample voltage and temperature onto a
/// uniform grid by natural cubic spline, and compute SOH. Cycles that never
/// reach the cut-off or have fewer than four usable samples are dropped.
BatteryDataset preprocess(const RawCycleSet& raw, const PreprocessConfig& cfg);

/// Fill in per-cycle scalar attributes from the resampled grids:
/// midpoint_temperature and midpoint_voltage read the middle grid entry;
/// energy integrates voltage over time by the trapezoidal rule.
void extract_attributes(BatteryDataset& ds, const std::vector<std::string>& which);

/// Directory persistence: meta.json plus grids.csv; bit-exact round trip.
void save_dataset(const BatteryDataset& ds, const std::string& dir);
BatteryDataset load_dataset(const std::string& dir);

/// Observation rows y_n = [cycle, label, soh, attributes...] pooled over a
/// fleet, with the target battery truncated to its first `target_rows`
/// cycles. Column transforms are fit on the assembled (training) rows only.
struct TrainingSet {
  Eigen::MatrixXd Y;  // normalized rows, battery-major then cycle-major
  std::vector<std::string> columns;
  std::vector<ColumnTransform> transforms;  // per column
  std::vector<std::string> battery_ids;     // label m is battery_ids[m-1]
  std::vector<int> counts;                  // rows contributed per battery
  int target_label = 1;                     // 1-based label of the target
  int target_rows = 0;                      // T for the target battery
  int target_total = 0;                     // full cycle count of the target
  int max_cycle = 0;                        // cycle-index normalizer

  Eigen::Index rows() const { return Y.rows(); }
  Eigen::Index dims() const { return Y.cols(); }
};

struct AssembleResult {
  TrainingSet ts;
  Eigen::VectorXd heldout_soh;     // target cycles target_rows+1..target_total
  std::vector<int> heldout_cycles;  // their consecutive cycle indices
};

/// Build the transfer training set: all cycles of every non-target battery
/// plus the first round(ratio * N) cycles of the target.
AssembleResult assemble_transfer(const std::vector<BatteryDataset>& sets,
                                 const std::string& target, double ratio);

/// Text persistence of a TrainingSet (embedded in model files).
std::string training_set_to_text(const TrainingSet& ts);
TrainingSet training_set_from_text(const std::string& text);

}  // namespace gpdm
