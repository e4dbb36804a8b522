#include "gpdm/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "gpdm/util.hpp"

namespace gpdm {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kPi = 3.14159265358979323846;

double fade_value(const FadeParams& p, double n) {
  return 1.0 - p.a * n - p.b * (std::exp(p.c * n) - 1.0) +
         p.ripple * std::sin(2.0 * kPi * n / p.period);
}

double vector_mean(const std::vector<double>& v) {
  if (v.empty()) return kNaN;
  double sum = 0.0;
  for (double x : v) sum += x;
  return sum / static_cast<double>(v.size());
}

std::string join(const std::vector<double>& v, char sep) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out.push_back(sep);
    out += format_double(v[i]);
  }
  return out;
}

// Keep free-form text CSV-safe without quoting rules.
std::string sanitize_field(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r') c = ' ';
  return s;
}

const BatteryDataset* find_dataset(const std::vector<BatteryDataset>& sets,
                                   const std::string& id) {
  for (const auto& ds : sets)
    if (ds.battery_id == id) return &ds;
  return nullptr;
}

}  // namespace

// ------------------------------------------------------------------ rmse ---

double rmse(const Eigen::VectorXd& pred, const Eigen::VectorXd& truth) {
  if (pred.size() != truth.size())
    throw std::invalid_argument("rmse: series length mismatch");
  if (pred.size() == 0) throw std::invalid_argument("rmse: empty series");
  return std::sqrt((pred - truth).squaredNorm() / static_cast<double>(pred.size()));
}

// -------------------------------------------------------- synthetic fleet ---

void SynthConfig::validate() const {
  if (batteries < 1) throw std::invalid_argument("synth: need at least one battery");
  if (cycles < 10) throw std::invalid_argument("synth: need at least 10 cycles");
  if (!(noise >= 0.0)) throw std::invalid_argument("synth: noise must be >= 0");
  if (!(jitter >= 0.0)) throw std::invalid_argument("synth: jitter must be >= 0");
  if (!(fade.period > 0.0)) throw std::invalid_argument("synth: period must be positive");
}

SynthFleet synth_fleet(const SynthConfig& cfg) {
  cfg.validate();
  SynthFleet fleet;
  fleet.true_soh.resize(cfg.cycles, cfg.batteries);
  const double base_capacity = 2.0;

  for (int m = 0; m < cfg.batteries; ++m) {
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(m)));
    FadeParams p = cfg.fade;
    p.a *= 1.0 + cfg.jitter * rng.normal();
    p.b *= 1.0 + cfg.jitter * rng.normal();
    p.c *= 1.0 + cfg.jitter * rng.normal();
    p.ripple *= 1.0 + cfg.jitter * rng.normal();
    fleet.realized.push_back(p);

    BatteryDataset ds;
    ds.battery_id = "SYN" + std::to_string(m);
    ds.grid = 0;
    ds.attribute_names = {"midpoint_voltage", "midpoint_temperature", "energy"};
    ds.attributes.resize(cfg.cycles, 3);

    const double fade1 = fade_value(p, 1.0);
    if (fade1 <= 0.0)
      throw DomainError("synth_fleet: fade curve non-positive at cycle 1");

    std::vector<double> capacity(static_cast<size_t>(cfg.cycles));
    for (int n = 1; n <= cfg.cycles; ++n) {
      const double fade = fade_value(p, static_cast<double>(n));
      const double noisy = fade + cfg.noise * rng.normal();
      if (fade <= 0.0 || noisy <= 0.0)
        throw DomainError("synth_fleet: battery " + ds.battery_id +
                          " reaches zero capacity by cycle " + std::to_string(n));
      capacity[static_cast<size_t>(n - 1)] = base_capacity * noisy;
      fleet.true_soh(n - 1, m) = fade / fade1;

      const double soh = noisy;  // attribute driver before first-cycle scaling
      ds.attributes(n - 1, 0) = cfg.v0 + cfg.v1 * soh + cfg.noise * rng.normal();
      ds.attributes(n - 1, 1) = cfg.t0 - cfg.t1 * soh + cfg.noise * rng.normal();
      ds.attributes(n - 1, 2) = cfg.e0 * soh + cfg.noise * rng.normal();
    }

    for (int n = 1; n <= cfg.cycles; ++n) {
      CycleRecord rec;
      rec.index = n;
      rec.raw_index = n;
      rec.capacity = capacity[static_cast<size_t>(n - 1)];
      rec.soh = rec.capacity / capacity[0];
      ds.cycles.push_back(rec);
    }
    for (Eigen::Index a = 0; a < ds.attributes.cols(); ++a)
      ds.attribute_ranges.push_back(fit_minmax(ds.attributes.col(a)));
    fleet.batteries.push_back(std::move(ds));
  }
  return fleet;
}

// --------------------------------------------------------- default kernels ---

namespace {

KernelTerm make_term(KernelKind kind, std::vector<double> theta) {
  KernelTerm t;
  t.kind = kind;
  t.weight = 1.0;
  t.theta = std::move(theta);
  return t;
}

}  // namespace

KernelSpec default_observation_kernel() {
  KernelSpec s;
  s.terms.push_back(make_term(KernelKind::Rbf, {1.0, 1.0}));
  return s;
}

KernelSpec default_dynamics_kernel() {
  KernelSpec s;
  s.terms.push_back(make_term(KernelKind::Rbf, {1.0, 1.0}));
  s.terms.push_back(make_term(KernelKind::Linear, {1.0}));
  return s;
}

KernelSpec default_regression_kernel() {
  KernelSpec s;
  s.terms.push_back(make_term(KernelKind::Rbf, {1.0, 1.0}));
  s.terms.push_back(make_term(KernelKind::Linear, {1.0}));
  return s;
}

// -------------------------------------------------------------- experiment ---

void ExperimentConfig::validate() const {
  if (datasets.empty()) throw std::invalid_argument("experiment: no datasets");
  if (seeds < 1) throw std::invalid_argument("experiment: seeds must be >= 1");
  if (jobs < 1) throw std::invalid_argument("experiment: jobs must be >= 1");
  if (!(eol_threshold > 0.0 && eol_threshold <= 1.0))
    throw std::invalid_argument("experiment: eol_threshold must lie in (0, 1]");
  if (ratios.empty()) throw std::invalid_argument("experiment: no ratios");
  for (double r : ratios)
    if (!(r > 0.0) || r > 1.0)
      throw std::invalid_argument("experiment: ratios must lie in (0, 1]");
  if (methods.empty()) throw std::invalid_argument("experiment: no methods");
  for (const auto& m : methods)
    if (m != "gpdm" && m != "gpdm_no_transfer" && m != "gp" && m != "gplvm")
      throw std::invalid_argument("experiment: unknown method '" + m + "'");
  for (const auto& t : targets)
    if (!find_dataset(datasets, t))
      throw std::invalid_argument("experiment: unknown target '" + t + "'");
  train.validate();
  gp.validate();
}

namespace {

struct CellJob {
  std::string battery;
  double ratio = 0.0;
  std::string method;
};

struct SeedPrediction {
  Eigen::VectorXd mean, lo, hi;  // natural-unit SOH over the held-out cycles
};

SeedPrediction predict_cell_seed(const ExperimentConfig& cfg, const CellJob& job,
                                 const AssembleResult& asm_result, int seed_index) {
  const TrainingSet& ts = asm_result.ts;
  const Eigen::Index H = asm_result.heldout_soh.size();
  const KernelSpec ky =
      cfg.kernel_y.terms.empty() ? default_observation_kernel() : cfg.kernel_y;
  const KernelSpec kx =
      cfg.kernel_x.terms.empty() ? default_dynamics_kernel() : cfg.kernel_x;
  const KernelSpec kg =
      cfg.kernel_gp.terms.empty() ? default_regression_kernel() : cfg.kernel_gp;
  const ColumnTransform soh_tf = ts.transforms[2];

  SeedPrediction out;
  if (job.method == "gpdm" || job.method == "gpdm_no_transfer") {
    TrainConfig tc = cfg.train;
    tc.seed = mix_seed(cfg.train.seed, static_cast<std::uint64_t>(seed_index));
    GpdmModel model = fit(ts, ky, kx, tc);
    Forecaster fore(model);
    ForecastResult fc = fore.rollout(ts.target_total, cfg.eol_threshold);
    if (static_cast<Eigen::Index>(fc.cycles.size()) != H)
      throw DomainError("forecast truncated before the horizon");
    out.mean = fc.soh_mean;
    out.lo = fc.soh_lo;
    out.hi = fc.soh_hi;
  } else if (job.method == "gp") {
    GpFitConfig gc = cfg.gp;
    gc.seed = mix_seed(cfg.gp.seed, static_cast<std::uint64_t>(seed_index));
    GpRegressionModel gp = fit_gp(ts, kg, gc);
    double label = 0.0;
    for (size_t m = 0; m < ts.battery_ids.size(); ++m)
      if (ts.battery_ids[m] == job.battery) label = static_cast<double>(m + 1);
    if (label == 0.0) throw DomainError("target label not found");
    std::vector<double> cycles;
    for (int c : asm_result.heldout_cycles) cycles.push_back(static_cast<double>(c));
    Eigen::VectorXd mean, var;
    predict_gp(gp, cycles, label, &mean, &var);
    out.mean.resize(H);
    out.lo.resize(H);
    out.hi.resize(H);
    for (Eigen::Index j = 0; j < H; ++j) {
      const double sd = std::sqrt(std::max(var(j), 0.0));
      out.mean(j) = soh_tf.invert(mean(j));
      out.lo(j) = soh_tf.invert(mean(j) - 1.96 * sd);
      out.hi(j) = soh_tf.invert(mean(j) + 1.96 * sd);
    }
  } else {  // gplvm
    TrainConfig tc = cfg.train;
    tc.seed = mix_seed(cfg.train.seed, static_cast<std::uint64_t>(seed_index));
    GpdmModel lvm = fit_gplvm(ts, ky, tc);
    const Eigen::Index D = ts.dims();
    Eigen::MatrixXd rows = Eigen::MatrixXd::Zero(H, D);
    double label = 0.0;
    for (size_t m = 0; m < ts.battery_ids.size(); ++m)
      if (ts.battery_ids[m] == job.battery) label = static_cast<double>(m + 1);
    if (label == 0.0) throw DomainError("target label not found");
    for (Eigen::Index j = 0; j < H; ++j) {
      rows(j, 0) = ts.transforms[0].apply(
          static_cast<double>(asm_result.heldout_cycles[static_cast<size_t>(j)]));
      rows(j, 1) = ts.transforms[1].apply(label);
    }
    std::vector<bool> masked(static_cast<size_t>(D), true);
    masked[0] = false;
    masked[1] = false;
    ReconstructResult rec = gplvm_reconstruct(lvm, rows, masked);
    out.mean.resize(H);
    out.lo.resize(H);
    out.hi.resize(H);
    for (Eigen::Index j = 0; j < H; ++j) {
      const double sd = std::sqrt(std::max(rec.variances(j, 2), 0.0));
      out.mean(j) = soh_tf.invert(rec.completed(j, 2));
      out.lo(j) = soh_tf.invert(rec.completed(j, 2) - 1.96 * sd);
      out.hi(j) = soh_tf.invert(rec.completed(j, 2) + 1.96 * sd);
    }
  }
  return out;
}

// Transfer runs place the target last so its truncated block ends the
// canonical row order: the transition map then never links the target's
// final (anchor) cycle to another battery's fresh first cycle.
std::vector<BatteryDataset> pool_datasets(const ExperimentConfig& cfg,
                                          const std::string& battery,
                                          const std::string& method) {
  std::vector<BatteryDataset> sets;
  if (method == "gpdm") {
    for (const auto& ds : cfg.datasets)
      if (ds.battery_id != battery) sets.push_back(ds);
    const BatteryDataset* target = find_dataset(cfg.datasets, battery);
    if (target) sets.push_back(*target);
  } else {
    const BatteryDataset* ds = find_dataset(cfg.datasets, battery);
    if (ds) sets = {*ds};
  }
  return sets;
}

CellResult evaluate_cell(const ExperimentConfig& cfg, const CellJob& job) {
  CellResult cell;
  cell.battery = job.battery;
  cell.ratio = job.ratio;
  cell.method = job.method;

  AssembleResult asm_result;
  try {
    asm_result = assemble_transfer(pool_datasets(cfg, job.battery, job.method),
                                   job.battery, job.ratio);
  } catch (const std::exception& e) {
    cell.status = "failed";
    cell.notes.push_back(std::string("assemble: ") + e.what());
    cell.seed_rmse.assign(static_cast<size_t>(cfg.seeds), kNaN);
    cell.seed_eol_error.assign(static_cast<size_t>(cfg.seeds), kNaN);
    cell.seed_coverage.assign(static_cast<size_t>(cfg.seeds), kNaN);
    cell.mean_rmse = cell.mean_eol_error = cell.mean_coverage = kNaN;
    return cell;
  }

  const Eigen::Index H = asm_result.heldout_soh.size();
  if (H == 0) {
    cell.status = "not-applicable";
    cell.mean_rmse = cell.mean_eol_error = cell.mean_coverage = kNaN;
    return cell;
  }

  // Ground-truth EOL over the target's complete soh history.
  const BatteryDataset* target_ds = find_dataset(cfg.datasets, job.battery);
  Eigen::VectorXd full_soh(target_ds->n_cycles());
  for (Eigen::Index i = 0; i < full_soh.size(); ++i)
    full_soh(i) = target_ds->cycles[static_cast<size_t>(i)].soh;
  const EolRul truth_eol =
      eol_rul(full_soh, cfg.eol_threshold, asm_result.ts.target_rows);

  for (int s = 0; s < cfg.seeds; ++s) {
    try {
      SeedPrediction pred = predict_cell_seed(cfg, job, asm_result, s);
      cell.seed_rmse.push_back(rmse(pred.mean, asm_result.heldout_soh));

      int inside = 0;
      for (Eigen::Index j = 0; j < H; ++j)
        if (asm_result.heldout_soh(j) >= pred.lo(j) &&
            asm_result.heldout_soh(j) <= pred.hi(j))
          ++inside;
      cell.seed_coverage.push_back(static_cast<double>(inside) /
                                   static_cast<double>(H));

      std::optional<int> pred_eol;
      for (Eigen::Index j = 0; j < H; ++j) {
        if (pred.mean(j) <= cfg.eol_threshold) {
          pred_eol = asm_result.heldout_cycles[static_cast<size_t>(j)];
          break;
        }
      }
      if (pred_eol && truth_eol.eol)
        cell.seed_eol_error.push_back(static_cast<double>(*pred_eol - *truth_eol.eol));
      else
        cell.seed_eol_error.push_back(kNaN);
    } catch (const std::exception& e) {
      cell.seed_rmse.push_back(kNaN);
      cell.seed_coverage.push_back(kNaN);
      cell.seed_eol_error.push_back(kNaN);
      cell.notes.push_back("seed " + std::to_string(s) + ": " + e.what());
    }
  }

  cell.mean_rmse = vector_mean(cell.seed_rmse);
  cell.mean_eol_error = vector_mean(cell.seed_eol_error);
  cell.mean_coverage = vector_mean(cell.seed_coverage);
  bool ok = true;
  for (double r : cell.seed_rmse)
    if (!std::isfinite(r)) ok = false;
  cell.status = ok ? "ok" : "failed";
  return cell;
}

}  // namespace

CellForecast cell_forecast(const ExperimentConfig& cfg, const std::string& battery,
                           double ratio, const std::string& method,
                           int seed_index) {
  cfg.validate();
  if (method != "gpdm" && method != "gpdm_no_transfer" && method != "gp" &&
      method != "gplvm")
    throw std::invalid_argument("cell_forecast: unknown method '" + method + "'");
  if (seed_index < 0 || seed_index >= cfg.seeds)
    throw std::invalid_argument("cell_forecast: seed index out of range");
  AssembleResult asm_result =
      assemble_transfer(pool_datasets(cfg, battery, method), battery, ratio);
  if (asm_result.heldout_soh.size() == 0)
    throw DomainError("cell_forecast: no held-out cycles at ratio " +
                      format_double(ratio));
  SeedPrediction pred =
      predict_cell_seed(cfg, CellJob{battery, ratio, method}, asm_result, seed_index);
  CellForecast out;
  out.cycles = asm_result.heldout_cycles;
  out.mean = pred.mean;
  out.lo = pred.lo;
  out.hi = pred.hi;
  out.truth = asm_result.heldout_soh;
  return out;
}

ReportTable run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  std::vector<std::string> targets = cfg.targets;
  if (targets.empty())
    for (const auto& ds : cfg.datasets) targets.push_back(ds.battery_id);

  std::vector<CellJob> jobs;
  for (const auto& battery : targets)
    for (double ratio : cfg.ratios)
      for (const auto& method : cfg.methods)
        jobs.push_back(CellJob{battery, ratio, method});

  ReportTable table;
  table.cells.resize(jobs.size());
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= jobs.size()) break;
      try {
        table.cells[i] = evaluate_cell(cfg, jobs[i]);
      } catch (const std::exception& e) {  // defensive: cells must never abort
        CellResult& cell = table.cells[i];
        cell.battery = jobs[i].battery;
        cell.ratio = jobs[i].ratio;
        cell.method = jobs[i].method;
        cell.status = "failed";
        cell.notes.push_back(e.what());
        cell.mean_rmse = cell.mean_eol_error = cell.mean_coverage = kNaN;
      }
    }
  };

  const int threads = std::min<int>(cfg.jobs, static_cast<int>(jobs.size()));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return table;
}

// ---------------------------------------------------------------- reports ---

std::string report_to_csv(const ReportTable& table) {
  std::ostringstream out;
  out << "battery,ratio,method,seeds,mean_rmse,rmse_per_seed,mean_eol_error,"
         "eol_error_per_seed,mean_coverage,coverage_per_seed,status,notes\n";
  for (const auto& c : table.cells) {
    std::string notes;
    for (size_t i = 0; i < c.notes.size(); ++i) {
      if (i) notes += "; ";
      notes += c.notes[i];
    }
    out << sanitize_field(c.battery) << "," << format_double(c.ratio) << ","
        << c.method << "," << c.seed_rmse.size() << "," << format_double(c.mean_rmse)
        << "," << join(c.seed_rmse, ';') << "," << format_double(c.mean_eol_error)
        << "," << join(c.seed_eol_error, ';') << "," << format_double(c.mean_coverage)
        << "," << join(c.seed_coverage, ';') << "," << c.status << ","
        << sanitize_field(notes) << "\n";
  }
  return out.str();
}

namespace {

std::string fixed4(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

}  // namespace

std::string report_to_text(const ReportTable& table) {
  std::ostringstream out;
  out << std::left << std::setw(12) << "battery" << std::setw(8) << "ratio"
      << std::setw(20) << "method" << std::setw(12) << "mean_rmse" << std::setw(12)
      << "eol_error" << std::setw(10) << "coverage" << "status\n";
  out << std::string(80, '-') << "\n";
  for (const auto& c : table.cells) {
    char ratio_buf[32];
    std::snprintf(ratio_buf, sizeof(ratio_buf), "%.2f", c.ratio);
    out << std::left << std::setw(12) << c.battery << std::setw(8) << ratio_buf
        << std::setw(20) << c.method << std::setw(12) << fixed4(c.mean_rmse)
        << std::setw(12) << fixed4(c.mean_eol_error) << std::setw(10)
        << fixed4(c.mean_coverage) << c.status << "\n";
  }
  return out.str();
}

// -------------------------------------------------------------- SVG plots ---

namespace {

std::string fmt2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string fmt_tick(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

void expand_range(double v, double* lo, double* hi) {
  if (!std::isfinite(v)) return;
  *lo = std::min(*lo, v);
  *hi = std::max(*hi, v);
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

}  // namespace

std::string line_plot_svg(const std::string& title, const std::string& x_label,
                          const std::string& y_label,
                          const std::vector<SvgSeries>& series, int width,
                          int height) {
  const double inf = std::numeric_limits<double>::infinity();
  double xmin = inf, xmax = -inf, ymin = inf, ymax = -inf;
  for (const auto& s : series) {
    const size_t n = std::min(s.x.size(), s.y.size());
    const bool band = s.lo.size() == s.x.size() && s.hi.size() == s.x.size();
    for (size_t i = 0; i < n; ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      expand_range(s.x[i], &xmin, &xmax);
      expand_range(s.y[i], &ymin, &ymax);
      if (band) {
        expand_range(s.lo[i], &ymin, &ymax);
        expand_range(s.hi[i], &ymin, &ymax);
      }
    }
  }
  if (!(xmin <= xmax)) {
    xmin = 0.0;
    xmax = 1.0;
  }
  if (!(ymin <= ymax)) {
    ymin = 0.0;
    ymax = 1.0;
  }
  if (xmax == xmin) {
    xmin -= 1.0;
    xmax += 1.0;
  }
  if (ymax == ymin) {
    ymin -= 1.0;
    ymax += 1.0;
  }
  const double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  const double px0 = 64.0, px1 = static_cast<double>(width) - 20.0;
  const double py0 = 44.0, py1 = static_cast<double>(height) - 52.0;
  auto px = [&](double x) { return px0 + (x - xmin) / (xmax - xmin) * (px1 - px0); };
  auto py = [&](double y) { return py1 - (y - ymin) / (ymax - ymin) * (py1 - py0); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " " << height
      << "\" font-family=\"Helvetica, Arial, sans-serif\">\n";
  svg << "<rect width=\"" << width << "\" height=\"" << height
      << "\" fill=\"#ffffff\"/>\n";
  svg << "<text x=\"" << width / 2 << "\" y=\"26\" text-anchor=\"middle\" "
         "font-size=\"15\" fill=\"#222222\">"
      << escape_xml(title) << "</text>\n";

  // Gridlines and ticks.
  for (int i = 0; i <= 4; ++i) {
    const double xv = xmin + (xmax - xmin) * i / 4.0;
    const double yv = ymin + (ymax - ymin) * i / 4.0;
    svg << "<line x1=\"" << fmt2(px(xv)) << "\" y1=\"" << fmt2(py0) << "\" x2=\""
        << fmt2(px(xv)) << "\" y2=\"" << fmt2(py1)
        << "\" stroke=\"#e0e0e0\" stroke-width=\"1\"/>\n";
    svg << "<line x1=\"" << fmt2(px0) << "\" y1=\"" << fmt2(py(yv)) << "\" x2=\""
        << fmt2(px1) << "\" y2=\"" << fmt2(py(yv))
        << "\" stroke=\"#e0e0e0\" stroke-width=\"1\"/>\n";
    svg << "<text x=\"" << fmt2(px(xv)) << "\" y=\"" << fmt2(py1 + 18.0)
        << "\" text-anchor=\"middle\" font-size=\"11\" fill=\"#444444\">"
        << fmt_tick(xv) << "</text>\n";
    svg << "<text x=\"" << fmt2(px0 - 8.0) << "\" y=\"" << fmt2(py(yv) + 4.0)
        << "\" text-anchor=\"end\" font-size=\"11\" fill=\"#444444\">"
        << fmt_tick(yv) << "</text>\n";
  }

  // Confidence bands first, so lines draw on top.
  for (const auto& s : series) {
    const size_t n = std::min(s.x.size(), s.y.size());
    if (s.lo.size() != s.x.size() || s.hi.size() != s.x.size() || n == 0) continue;
    std::string pts;
    for (size_t i = 0; i < n; ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.hi[i])) continue;
      pts += fmt2(px(s.x[i])) + "," + fmt2(py(s.hi[i])) + " ";
    }
    for (size_t i = n; i-- > 0;) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.lo[i])) continue;
      pts += fmt2(px(s.x[i])) + "," + fmt2(py(s.lo[i])) + " ";
    }
    if (!pts.empty())
      svg << "<polygon points=\"" << pts << "\" fill=\"" << s.color
          << "\" fill-opacity=\"0.15\" stroke=\"none\"/>\n";
  }

  for (const auto& s : series) {
    const size_t n = std::min(s.x.size(), s.y.size());
    std::string pts;
    for (size_t i = 0; i < n; ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      pts += fmt2(px(s.x[i])) + "," + fmt2(py(s.y[i])) + " ";
    }
    if (!pts.empty())
      svg << "<polyline points=\"" << pts << "\" fill=\"none\" stroke=\"" << s.color
          << "\" stroke-width=\"1.8\"/>\n";
  }

  // Frame, axis labels, legend.
  svg << "<rect x=\"" << fmt2(px0) << "\" y=\"" << fmt2(py0) << "\" width=\""
      << fmt2(px1 - px0) << "\" height=\"" << fmt2(py1 - py0)
      << "\" fill=\"none\" stroke=\"#555555\" stroke-width=\"1\"/>\n";
  svg << "<text x=\"" << (width / 2) << "\" y=\"" << (height - 14)
      << "\" text-anchor=\"middle\" font-size=\"12\" fill=\"#333333\">"
      << escape_xml(x_label) << "</text>\n";
  svg << "<text x=\"18\" y=\"" << (height / 2)
      << "\" text-anchor=\"middle\" font-size=\"12\" fill=\"#333333\" "
         "transform=\"rotate(-90 18 "
      << (height / 2) << ")\">" << escape_xml(y_label) << "</text>\n";

  double ly = py0 + 16.0;
  for (const auto& s : series) {
    if (s.label.empty()) continue;
    svg << "<line x1=\"" << fmt2(px1 - 150.0) << "\" y1=\"" << fmt2(ly - 4.0)
        << "\" x2=\"" << fmt2(px1 - 126.0) << "\" y2=\"" << fmt2(ly - 4.0)
        << "\" stroke=\"" << s.color << "\" stroke-width=\"2.5\"/>\n";
    svg << "<text x=\"" << fmt2(px1 - 120.0) << "\" y=\"" << fmt2(ly)
        << "\" font-size=\"11\" fill=\"#333333\">" << escape_xml(s.label)
        << "</text>\n";
    ly += 16.0;
  }

  svg << "</svg>\n";
  return svg.str();
}

}  // namespace gpdm
