// Command-line entry point: preprocess -> train/baseline -> forecast ->
// evaluate/compare, plus a synthetic-fleet generator. Every run writes a
// machine-readable manifest (arguments, seeds, output digests) next to its
// outputs, and all files are written atomically.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gpdm/baselines.hpp"
#include "gpdm/dataio.hpp"
#include "gpdm/eval.hpp"
#include "gpdm/forecast.hpp"
#include "gpdm/kernels.hpp"
#include "gpdm/train.hpp"
#include "gpdm/util.hpp"

namespace fs = std::filesystem;
using gpdm::DomainError;

namespace {

constexpr const char* kToolName = "gpdm";
constexpr const char* kToolVersion = "1.0.0";

struct GlobalOpts {
  int jobs = 1;
  bool verbose = false;
  std::uint64_t seed = 0;
};

void vlog(const GlobalOpts& g, const std::string& msg) {
  if (g.verbose) std::cerr << "[" << kToolName << "] " << msg << "\n";
}

// ------------------------------------------------------------- manifest ---

/// Collects the facts needed to reproduce a run bit-exactly: the exact
/// argv, the seed, and an FNV-1a digest of every file written.
class Manifest {
 public:
  Manifest(const std::string& command, int argc, char** argv,
           const GlobalOpts& g) {
    j_["tool"] = kToolName;
    j_["version"] = kToolVersion;
    j_["command"] = command;
    std::vector<std::string> args(argv, argv + argc);
    j_["argv"] = args;
    j_["seed"] = g.seed;
    j_["jobs"] = g.jobs;
    j_["outputs"] = nlohmann::json::object();
  }

  void record(const std::string& key, const std::string& bytes) {
    j_["outputs"][key] = gpdm::fnv1a_hex(bytes);
  }

  /// Atomic write + digest record in one step.
  void write_output(const fs::path& path, const std::string& content,
                    const std::string& key) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    gpdm::atomic_write_file(path, content);
    record(key, content);
  }

  /// Digest every file under root (sorted), keyed by its relative path.
  void record_tree(const fs::path& root, const std::string& skip_name) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(root))
      if (entry.is_regular_file() && entry.path().filename() != skip_name)
        files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& p : files)
      record(fs::relative(p, root).generic_string(), gpdm::read_file(p));
  }

  void save(const fs::path& path) const {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    gpdm::atomic_write_file(path, j_.dump(2) + "\n");
  }

 private:
  nlohmann::json j_;
};

// ------------------------------------------------------------- datasets ---

/// Load one dataset directory, or every dataset subdirectory (sorted by
/// name) when `dir` is a collection.
std::vector<gpdm::BatteryDataset> load_dataset_dir(const std::string& dir) {
  if (!fs::exists(dir)) throw DomainError("no such data directory: " + dir);
  if (fs::exists(fs::path(dir) / "meta.json"))
    return {gpdm::load_dataset(dir)};
  std::vector<std::string> subdirs;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_directory() && fs::exists(entry.path() / "meta.json"))
      subdirs.push_back(entry.path().string());
  std::sort(subdirs.begin(), subdirs.end());
  std::vector<gpdm::BatteryDataset> sets;
  for (const auto& sub : subdirs) sets.push_back(gpdm::load_dataset(sub));
  if (sets.empty()) throw DomainError("no datasets under: " + dir);
  return sets;
}

/// Training order: donors first (sorted as loaded), target last, so the
/// transition sequence ends inside the target's block and the forecast
/// anchor never abuts another battery's fresh first cycle.
std::vector<gpdm::BatteryDataset> order_for_training(
    std::vector<gpdm::BatteryDataset> sets, const std::string& target,
    bool transfer) {
  std::vector<gpdm::BatteryDataset> out;
  const gpdm::BatteryDataset* target_ds = nullptr;
  for (const auto& ds : sets)
    if (ds.battery_id == target) target_ds = &ds;
  if (!target_ds) throw DomainError("target battery not found: " + target);
  if (transfer)
    for (const auto& ds : sets)
      if (ds.battery_id != target) out.push_back(ds);
  out.push_back(*target_ds);
  return out;
}

gpdm::KernelSpec kernel_or(const std::string& text, gpdm::KernelSpec fallback) {
  if (gpdm::trim(text).empty()) return fallback;
  return gpdm::parse_kernel(text);
}

int parse_q(const std::string& text) {
  if (gpdm::lower(gpdm::trim(text)) == "all") return 0;
  long q = gpdm::parse_long(text);
  if (q < 0) throw std::invalid_argument("--q must be 'all' or a positive integer");
  return static_cast<int>(q);
}

bool parse_bool(const std::string& text, const std::string& where) {
  std::string t = gpdm::lower(gpdm::trim(text));
  if (t == "1" || t == "true" || t == "yes" || t == "on") return true;
  if (t == "0" || t == "false" || t == "no" || t == "off") return false;
  throw DomainError(where + ": expected a boolean, got '" + text + "'");
}

std::string sanitize_for_path(const std::string& s) {
  std::string out;
  for (char c : s)
    out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_')
               ? c
               : '_';
  return out;
}

// -------------------------------------------------------------- configs ---

/// Experiment description file (INI-style). Sections:
///   [experiment] data, targets, ratios, methods, seeds, eol_threshold
///   [synth]      batteries, cycles, noise, jitter, seed, a, b, c,
///                ripple, period (section present -> fleet appended)
///   [train]      q, iters, restarts, seed, optimizer, rel_tol,
///                dimension_exponents
///   [gp]         iters, restarts, seed, fixed_sigma2
///   [kernels]    y, x, gp
gpdm::ExperimentConfig experiment_from_config(const gpdm::ConfigFile& cf,
                                              const GlobalOpts& g) {
  gpdm::ExperimentConfig cfg;
  cfg.jobs = g.jobs;

  const std::string data = cf.get("experiment", "data", "");
  if (!data.empty()) {
    for (auto& ds : load_dataset_dir(data)) cfg.datasets.push_back(std::move(ds));
  }
  if (cf.sections().count("synth")) {
    gpdm::SynthConfig sc;
    sc.batteries = static_cast<int>(cf.get_long("synth", "batteries", sc.batteries));
    sc.cycles = static_cast<int>(cf.get_long("synth", "cycles", sc.cycles));
    sc.noise = cf.get_double("synth", "noise", sc.noise);
    sc.jitter = cf.get_double("synth", "jitter", sc.jitter);
    sc.seed = static_cast<std::uint64_t>(cf.get_long("synth", "seed", 0));
    sc.fade.a = cf.get_double("synth", "a", sc.fade.a);
    sc.fade.b = cf.get_double("synth", "b", sc.fade.b);
    sc.fade.c = cf.get_double("synth", "c", sc.fade.c);
    sc.fade.ripple = cf.get_double("synth", "ripple", sc.fade.ripple);
    sc.fade.period = cf.get_double("synth", "period", sc.fade.period);
    gpdm::SynthFleet fleet = gpdm::synth_fleet(sc);
    for (auto& ds : fleet.batteries) cfg.datasets.push_back(std::move(ds));
  }
  if (cfg.datasets.empty())
    throw DomainError("config: no data (set [experiment] data or a [synth] section)");

  cfg.targets = cf.get_list("experiment", "targets");
  if (cf.has("experiment", "ratios")) {
    cfg.ratios.clear();
    for (const auto& r : cf.get_list("experiment", "ratios"))
      cfg.ratios.push_back(gpdm::parse_double(r));
  }
  if (cf.has("experiment", "methods"))
    cfg.methods = cf.get_list("experiment", "methods");
  cfg.seeds = static_cast<int>(cf.get_long("experiment", "seeds", cfg.seeds));
  cfg.eol_threshold =
      cf.get_double("experiment", "eol_threshold", cfg.eol_threshold);

  cfg.train.q = parse_q(cf.get("train", "q", "all"));
  cfg.train.max_iters =
      static_cast<int>(cf.get_long("train", "iters", cfg.train.max_iters));
  cfg.train.restarts =
      static_cast<int>(cf.get_long("train", "restarts", cfg.train.restarts));
  cfg.train.seed = static_cast<std::uint64_t>(cf.get_long("train", "seed", 0));
  cfg.train.optimizer = cf.get("train", "optimizer", cfg.train.optimizer);
  cfg.train.rel_tol = cf.get_double("train", "rel_tol", cfg.train.rel_tol);
  if (cf.has("train", "dimension_exponents"))
    cfg.train.dimension_exponents = parse_bool(
        cf.get("train", "dimension_exponents", "false"), "[train] dimension_exponents");

  cfg.gp.max_iters = static_cast<int>(cf.get_long("gp", "iters", cfg.gp.max_iters));
  cfg.gp.restarts = static_cast<int>(cf.get_long("gp", "restarts", cfg.gp.restarts));
  cfg.gp.seed = static_cast<std::uint64_t>(cf.get_long("gp", "seed", 0));
  if (cf.has("gp", "fixed_sigma2"))
    cfg.gp.fixed_sigma2 = cf.get_double("gp", "fixed_sigma2", 0.0);

  if (cf.has("kernels", "y")) cfg.kernel_y = gpdm::parse_kernel(cf.get("kernels", "y", ""));
  if (cf.has("kernels", "x")) cfg.kernel_x = gpdm::parse_kernel(cf.get("kernels", "x", ""));
  if (cf.has("kernels", "gp"))
    cfg.kernel_gp = gpdm::parse_kernel(cf.get("kernels", "gp", ""));
  return cfg;
}

// --------------------------------------------------------- line writers ---

std::string band_csv(const std::vector<int>& cycles, const Eigen::VectorXd& mean,
                     const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  std::ostringstream out;
  out << "cycle,soh_mean,soh_lo,soh_hi\n";
  for (size_t j = 0; j < cycles.size(); ++j) {
    const Eigen::Index i = static_cast<Eigen::Index>(j);
    out << cycles[j] << ',' << gpdm::format_double(mean(i)) << ','
        << gpdm::format_double(lo(i)) << ',' << gpdm::format_double(hi(i)) << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------- subcommands ---

int run_preprocess(const GlobalOpts& g, Manifest& manifest,
                   const std::string& raw, const std::string& out,
                   double cutoff, int grid, const std::string& attributes) {
  std::vector<gpdm::RawCycleSet> raws;
  if (fs::is_directory(raw))
    raws = gpdm::load_raw_dir(raw);
  else
    raws = {gpdm::load_raw(raw)};

  std::vector<std::string> attrs;
  for (auto& a : gpdm::split(attributes, ','))
    if (!gpdm::trim(a).empty()) attrs.push_back(gpdm::trim(a));

  gpdm::PreprocessConfig pc;
  pc.cutoff = cutoff;
  pc.grid = grid;
  for (const auto& rc : raws) {
    vlog(g, "preprocessing " + rc.battery_id + " (" +
                std::to_string(rc.cycles.size()) + " cycles)");
    gpdm::BatteryDataset ds = gpdm::preprocess(rc, pc);
    gpdm::extract_attributes(ds, attrs);
    for (const auto& w : ds.warnings) vlog(g, rc.battery_id + ": " + w);
    gpdm::save_dataset(ds, (fs::path(out) / ds.battery_id).string());
  }
  manifest.record_tree(out, "manifest.json");
  manifest.save(fs::path(out) / "manifest.json");
  std::cout << "preprocessed " << raws.size() << " batteries -> " << out << "\n";
  return 0;
}

int run_synth(const GlobalOpts& g, Manifest& manifest, const gpdm::SynthConfig& sc,
              const std::string& out) {
  gpdm::SynthFleet fleet = gpdm::synth_fleet(sc);
  for (const auto& ds : fleet.batteries) {
    vlog(g, "writing " + ds.battery_id);
    gpdm::save_dataset(ds, (fs::path(out) / ds.battery_id).string());
  }

  nlohmann::json meta;
  meta["batteries"] = sc.batteries;
  meta["cycles"] = sc.cycles;
  meta["noise"] = sc.noise;
  meta["jitter"] = sc.jitter;
  meta["seed"] = sc.seed;
  meta["fade"] = {{"a", sc.fade.a},
                  {"b", sc.fade.b},
                  {"c", sc.fade.c},
                  {"ripple", sc.fade.ripple},
                  {"period", sc.fade.period}};
  meta["realized"] = nlohmann::json::array();
  for (const auto& p : fleet.realized)
    meta["realized"].push_back({{"a", p.a},
                                {"b", p.b},
                                {"c", p.c},
                                {"ripple", p.ripple},
                                {"period", p.period}});
  meta["true_soh"] = nlohmann::json::array();
  for (int m = 0; m < sc.batteries; ++m) {
    nlohmann::json col = nlohmann::json::array();
    for (Eigen::Index i = 0; i < fleet.true_soh.rows(); ++i)
      col.push_back(fleet.true_soh(i, m));
    meta["true_soh"].push_back(col);
  }
  manifest.write_output(fs::path(out) / "fleet.json", meta.dump(2) + "\n",
                        "fleet.json");
  manifest.record_tree(out, "manifest.json");
  manifest.save(fs::path(out) / "manifest.json");
  std::cout << "generated " << sc.batteries << " batteries x " << sc.cycles
            << " cycles -> " << out << "\n";
  return 0;
}

int run_train(const GlobalOpts& g, Manifest& manifest, const std::string& data,
              const std::string& target, double ratio, const std::string& kernel_y,
              const std::string& kernel_x, const std::string& q, int iters,
              int restarts, bool no_transfer, const std::string& out) {
  std::vector<gpdm::BatteryDataset> sets =
      order_for_training(load_dataset_dir(data), target, !no_transfer);
  gpdm::AssembleResult asm_result = gpdm::assemble_transfer(sets, target, ratio);

  gpdm::TrainConfig tc;
  tc.q = parse_q(q);
  tc.max_iters = iters;
  tc.restarts = restarts;
  tc.seed = g.seed;
  vlog(g, "fitting on " + std::to_string(asm_result.ts.rows()) + " rows, " +
              std::to_string(asm_result.ts.dims()) + " columns");
  gpdm::GpdmModel model =
      gpdm::fit(asm_result.ts, kernel_or(kernel_y, gpdm::default_observation_kernel()),
                kernel_or(kernel_x, gpdm::default_dynamics_kernel()), tc);
  for (const auto& w : model.warnings) vlog(g, "warning: " + w);

  gpdm::save_model(model, out);
  manifest.record(fs::path(out).filename().string(), gpdm::read_file(out));
  manifest.save(out + ".manifest.json");
  std::cout << "trained " << model.kind << " on " << asm_result.ts.rows()
            << " rows (target " << target << ", " << asm_result.ts.target_rows
            << "/" << asm_result.ts.target_total << " cycles); "
            << (model.converged ? "converged" : "iteration limit") << "; model -> "
            << out << "\n";
  return 0;
}

int run_forecast(const GlobalOpts& g, Manifest& manifest, const std::string& model_path,
                 int horizon, double threshold, const std::string& out,
                 const std::string& latent_out) {
  gpdm::GpdmModel model = gpdm::load_model(model_path);
  gpdm::Forecaster fore(model);
  vlog(g, "rolling out from cycle " + std::to_string(fore.current_cycle()) +
              " to " + std::to_string(horizon));
  gpdm::ForecastResult fc = fore.rollout(horizon, threshold);
  for (const auto& w : fc.warnings) vlog(g, "warning: " + w);

  manifest.write_output(out, gpdm::forecast_to_csv(model, fc),
                        fs::path(out).filename().string());
  if (!latent_out.empty())
    manifest.write_output(latent_out, gpdm::latent_path_to_csv(fc),
                          fs::path(latent_out).filename().string());
  manifest.save(out + ".manifest.json");

  std::cout << "forecast " << fc.cycles.size() << " cycles -> " << out;
  if (fc.truncated) std::cout << " (truncated: latent path diverged)";
  if (fc.eol)
    std::cout << "; eol cycle " << *fc.eol << ", rul " << *fc.rul;
  else
    std::cout << "; threshold " << gpdm::format_double(threshold)
              << " not crossed in horizon";
  std::cout << "\n";
  return 0;
}

int run_baseline_gp(const GlobalOpts& g, Manifest& manifest, const std::string& data,
                    const std::string& target, double ratio,
                    const std::string& kernel, int iters, int restarts, int horizon,
                    const std::string& out) {
  std::vector<gpdm::BatteryDataset> sets =
      order_for_training(load_dataset_dir(data), target, /*transfer=*/false);
  gpdm::AssembleResult asm_result = gpdm::assemble_transfer(sets, target, ratio);
  const gpdm::TrainingSet& ts = asm_result.ts;

  gpdm::GpFitConfig gc;
  gc.max_iters = iters;
  gc.restarts = restarts;
  gc.seed = g.seed;
  gpdm::GpRegressionModel gp =
      gpdm::fit_gp(ts, kernel_or(kernel, gpdm::default_regression_kernel()), gc);

  const int last = horizon > 0 ? horizon : ts.target_total;
  if (last <= ts.target_rows)
    throw DomainError("horizon " + std::to_string(last) +
                      " does not extend past the training cycles");
  std::vector<int> cycle_ids;
  std::vector<double> cycles;
  for (int c = ts.target_rows + 1; c <= last; ++c) {
    cycle_ids.push_back(c);
    cycles.push_back(static_cast<double>(c));
  }
  Eigen::VectorXd mean, var;
  gpdm::predict_gp(gp, cycles, static_cast<double>(ts.target_label), &mean, &var);

  const gpdm::ColumnTransform soh_tf = ts.transforms[2];
  Eigen::VectorXd m(mean.size()), lo(mean.size()), hi(mean.size());
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    const double sd = std::sqrt(std::max(var(i), 0.0));
    m(i) = soh_tf.invert(mean(i));
    lo(i) = soh_tf.invert(mean(i) - 1.96 * sd);
    hi(i) = soh_tf.invert(mean(i) + 1.96 * sd);
  }
  manifest.write_output(out, band_csv(cycle_ids, m, lo, hi),
                        fs::path(out).filename().string());
  manifest.save(out + ".manifest.json");
  std::cout << "gp baseline forecast " << cycle_ids.size() << " cycles -> " << out
            << "\n";
  return 0;
}

int run_baseline_gplvm(const GlobalOpts& g, Manifest& manifest,
                       const std::string& data, const std::string& target,
                       double ratio, const std::string& kernel_y,
                       const std::string& q, int iters, int restarts, int horizon,
                       const std::string& out) {
  std::vector<gpdm::BatteryDataset> sets =
      order_for_training(load_dataset_dir(data), target, /*transfer=*/false);
  gpdm::AssembleResult asm_result = gpdm::assemble_transfer(sets, target, ratio);
  const gpdm::TrainingSet& ts = asm_result.ts;

  gpdm::TrainConfig tc;
  tc.q = parse_q(q);
  tc.max_iters = iters;
  tc.restarts = restarts;
  tc.seed = g.seed;
  gpdm::GpdmModel lvm = gpdm::fit_gplvm(
      ts, kernel_or(kernel_y, gpdm::default_observation_kernel()), tc);

  const int last = horizon > 0 ? horizon : ts.target_total;
  if (last <= ts.target_rows)
    throw DomainError("horizon " + std::to_string(last) +
                      " does not extend past the training cycles");
  const Eigen::Index D = ts.dims();
  std::vector<int> cycle_ids;
  for (int c = ts.target_rows + 1; c <= last; ++c) cycle_ids.push_back(c);
  Eigen::MatrixXd rows =
      Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(cycle_ids.size()), D);
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    rows(i, 0) = ts.transforms[0].apply(static_cast<double>(cycle_ids[i]));
    rows(i, 1) = ts.transforms[1].apply(static_cast<double>(ts.target_label));
  }
  std::vector<bool> masked(static_cast<size_t>(D), true);
  masked[0] = false;
  masked[1] = false;
  gpdm::ReconstructResult rec = gpdm::gplvm_reconstruct(lvm, rows, masked);

  const gpdm::ColumnTransform soh_tf = ts.transforms[2];
  Eigen::VectorXd m(rows.rows()), lo(rows.rows()), hi(rows.rows());
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    const double sd = std::sqrt(std::max(rec.variances(i, 2), 0.0));
    m(i) = soh_tf.invert(rec.completed(i, 2));
    lo(i) = soh_tf.invert(rec.completed(i, 2) - 1.96 * sd);
    hi(i) = soh_tf.invert(rec.completed(i, 2) + 1.96 * sd);
  }
  vlog(g, "reconstructed " + std::to_string(rows.rows()) + " held-out rows");
  manifest.write_output(out, band_csv(cycle_ids, m, lo, hi),
                        fs::path(out).filename().string());
  manifest.save(out + ".manifest.json");
  std::cout << "gplvm baseline forecast " << cycle_ids.size() << " cycles -> "
            << out << "\n";
  return 0;
}

int run_evaluate(const GlobalOpts& g, Manifest& manifest, const std::string& config,
                 const std::string& out) {
  gpdm::ExperimentConfig cfg =
      experiment_from_config(gpdm::ConfigFile::load(config), g);
  vlog(g, "running experiment matrix with " + std::to_string(cfg.datasets.size()) +
              " datasets");
  gpdm::ReportTable table = gpdm::run_experiment(cfg);
  manifest.write_output(out, gpdm::report_to_csv(table),
                        fs::path(out).filename().string());
  manifest.save(out + ".manifest.json");
  std::cout << gpdm::report_to_text(table);
  return 0;
}

int run_compare(const GlobalOpts& g, Manifest& manifest, const std::string& config,
                const std::string& out, int seed_index) {
  gpdm::ExperimentConfig cfg =
      experiment_from_config(gpdm::ConfigFile::load(config), g);
  gpdm::ReportTable table = gpdm::run_experiment(cfg);
  manifest.write_output(fs::path(out) / "report.csv", gpdm::report_to_csv(table),
                        "report.csv");
  manifest.write_output(fs::path(out) / "report.txt", gpdm::report_to_text(table),
                        "report.txt");

  std::vector<std::string> targets = cfg.targets;
  if (targets.empty())
    for (const auto& ds : cfg.datasets) targets.push_back(ds.battery_id);

  const std::map<std::string, std::string> palette{
      {"gpdm", "#1f77b4"},
      {"gpdm_no_transfer", "#ff7f0e"},
      {"gp", "#2ca02c"},
      {"gplvm", "#d62728"}};

  for (const auto& battery : targets) {
    for (double ratio : cfg.ratios) {
      std::vector<gpdm::SvgSeries> series;
      for (const auto& method : cfg.methods) {
        gpdm::CellForecast cell;
        try {
          cell = gpdm::cell_forecast(cfg, battery, ratio, method, seed_index);
        } catch (const std::exception& e) {
          vlog(g, battery + " ratio " + gpdm::format_double(ratio) + " " + method +
                      ": " + e.what());
          continue;
        }
        const std::string stem = "forecast_" + sanitize_for_path(battery) + "_r" +
                                 std::to_string(static_cast<int>(std::lround(
                                     ratio * 100))) +
                                 "_" + sanitize_for_path(method) + ".csv";
        manifest.write_output(fs::path(out) / stem,
                              band_csv(cell.cycles, cell.mean, cell.lo, cell.hi),
                              stem);
        if (series.empty()) {
          gpdm::SvgSeries truth;
          truth.label = "observed";
          truth.color = "#333333";
          for (size_t j = 0; j < cell.cycles.size(); ++j) {
            truth.x.push_back(static_cast<double>(cell.cycles[j]));
            truth.y.push_back(cell.truth(static_cast<Eigen::Index>(j)));
          }
          series.push_back(std::move(truth));
        }
        gpdm::SvgSeries s;
        s.label = method;
        auto it = palette.find(method);
        s.color = it == palette.end() ? "#9467bd" : it->second;
        for (size_t j = 0; j < cell.cycles.size(); ++j) {
          const Eigen::Index i = static_cast<Eigen::Index>(j);
          s.x.push_back(static_cast<double>(cell.cycles[j]));
          s.y.push_back(cell.mean(i));
          s.lo.push_back(cell.lo(i));
          s.hi.push_back(cell.hi(i));
        }
        series.push_back(std::move(s));
      }
      if (series.empty()) continue;
      const std::string stem = "plot_" + sanitize_for_path(battery) + "_r" +
                               std::to_string(static_cast<int>(std::lround(
                                   ratio * 100))) +
                               ".svg";
      const std::string title =
          battery + " held-out state of health (train ratio " +
          gpdm::format_double(ratio) + ")";
      manifest.write_output(
          fs::path(out) / stem,
          gpdm::line_plot_svg(title, "cycle", "state of health", series), stem);
    }
  }
  manifest.save(fs::path(out) / "manifest.json");
  std::cout << "comparison report -> " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent dynamical forecasting toolkit for battery state of health"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--jobs", g.jobs, "Worker threads for the experiment matrix")
      ->capture_default_str();
  app.add_flag("--verbose", g.verbose, "Log progress to stderr");
  app.add_option("--seed", g.seed, "Base seed for fits and generators")
      ->capture_default_str();

  // ---- preprocess ----
  auto* prep = app.add_subcommand(
      "preprocess", "Truncate, resample, and normalize raw cycle CSVs");
  prep->fallthrough();
  std::string prep_raw, prep_out;
  double prep_cutoff = 2.7;
  int prep_grid = 200;
  std::string prep_attrs = "midpoint_voltage,midpoint_temperature,energy";
  prep->add_option("--raw", prep_raw, "Cycle CSV file or directory of them")
      ->required();
  prep->add_option("--out", prep_out, "Output dataset directory")->required();
  prep->add_option("--cutoff", prep_cutoff, "Discharge cut-off voltage (V)")
      ->capture_default_str();
  prep->add_option("--grid", prep_grid, "Resampled points per cycle")
      ->capture_default_str();
  prep->add_option("--attributes", prep_attrs, "Comma-separated attribute names")
      ->capture_default_str();

  // ---- synth ----
  auto* synth = app.add_subcommand(
      "synth", "Generate a synthetic degradation fleet with known ground truth");
  synth->fallthrough();
  gpdm::SynthConfig sc;
  std::string synth_out;
  synth->add_option("--batteries", sc.batteries, "Fleet size")->capture_default_str();
  synth->add_option("--cycles", sc.cycles, "Cycles per battery")->capture_default_str();
  synth->add_option("--noise", sc.noise, "Measurement noise sd")->capture_default_str();
  synth->add_option("--jitter", sc.jitter, "Per-battery fade-parameter spread")
      ->capture_default_str();
  synth->add_option("--fade-a", sc.fade.a, "Linear fade rate")->capture_default_str();
  synth->add_option("--fade-b", sc.fade.b, "Exponential fade weight")
      ->capture_default_str();
  synth->add_option("--fade-c", sc.fade.c, "Exponential fade rate")
      ->capture_default_str();
  synth->add_option("--ripple", sc.fade.ripple, "Seasonal ripple amplitude")
      ->capture_default_str();
  synth->add_option("--period", sc.fade.period, "Seasonal ripple period (cycles)")
      ->capture_default_str();
  synth->add_option("--out", synth_out, "Output fleet directory")->required();

  // ---- train ----
  auto* train = app.add_subcommand(
      "train", "Fit the latent dynamical model on an assembled fleet");
  train->fallthrough();
  std::string train_data, train_target, train_ky, train_kx, train_q = "all",
                                                            train_out;
  double train_ratio = 0.0;
  int train_iters = 500, train_restarts = 1;
  bool train_solo = false;
  train->add_option("--data", train_data, "Dataset directory (one or many)")
      ->required();
  train->add_option("--target", train_target, "Battery id to forecast")->required();
  train->add_option("--ratio", train_ratio, "Training fraction of the target")
      ->required();
  train->add_option("--kernel-y", train_ky,
                    "Observation kernel, e.g. 'rbf(1,1) + linear(1)'");
  train->add_option("--kernel-x", train_kx, "Transition kernel");
  train->add_option("--q", train_q, "Latent dimension or 'all'")
      ->capture_default_str();
  train->add_option("--iters", train_iters, "Optimizer iteration cap")
      ->capture_default_str();
  train->add_option("--restarts", train_restarts, "Seeded restarts (best kept)")
      ->capture_default_str();
  train->add_flag("--no-transfer", train_solo, "Use only the target battery");
  train->add_option("--out", train_out, "Model file path")->required();

  // ---- forecast ----
  auto* fore = app.add_subcommand(
      "forecast", "Roll a trained model forward and write the band CSV");
  fore->fallthrough();
  std::string fore_model, fore_out, fore_latent;
  int fore_horizon = 0;
  double fore_threshold = 0.8;
  fore->add_option("--model", fore_model, "Model file from train")->required();
  fore->add_option("--horizon", fore_horizon, "Last cycle index to forecast")
      ->required();
  fore->add_option("--threshold", fore_threshold, "End-of-life threshold")
      ->capture_default_str();
  fore->add_option("--out", fore_out, "Forecast CSV path")->required();
  fore->add_option("--latent-out", fore_latent, "Optional latent-path CSV");

  // ---- baseline ----
  auto* base = app.add_subcommand("baseline", "Comparison methods");
  base->require_subcommand(1);
  base->fallthrough();

  auto* bgp = base->add_subcommand(
      "gp", "Independent regression of state of health on the cycle index");
  bgp->fallthrough();
  std::string bgp_data, bgp_target, bgp_kernel, bgp_out;
  double bgp_ratio = 0.0;
  int bgp_iters = 500, bgp_restarts = 1, bgp_horizon = 0;
  bgp->add_option("--data", bgp_data, "Dataset directory")->required();
  bgp->add_option("--target", bgp_target, "Battery id to forecast")->required();
  bgp->add_option("--ratio", bgp_ratio, "Training fraction of the target")
      ->required();
  bgp->add_option("--kernel", bgp_kernel, "Kernel, e.g. 'matern32(1,1) + matern52(1,1)'");
  bgp->add_option("--iters", bgp_iters, "Optimizer iteration cap")
      ->capture_default_str();
  bgp->add_option("--restarts", bgp_restarts, "Seeded restarts")->capture_default_str();
  bgp->add_option("--horizon", bgp_horizon, "Last cycle (default: full history)");
  bgp->add_option("--out", bgp_out, "Forecast CSV path")->required();

  auto* blv = base->add_subcommand(
      "gplvm", "Latent variable model without dynamics, reconstruction forecast");
  blv->fallthrough();
  std::string blv_data, blv_target, blv_ky, blv_q = "all", blv_out;
  double blv_ratio = 0.0;
  int blv_iters = 500, blv_restarts = 1, blv_horizon = 0;
  blv->add_option("--data", blv_data, "Dataset directory")->required();
  blv->add_option("--target", blv_target, "Battery id to forecast")->required();
  blv->add_option("--ratio", blv_ratio, "Training fraction of the target")
      ->required();
  blv->add_option("--kernel-y", blv_ky, "Observation kernel");
  blv->add_option("--q", blv_q, "Latent dimension or 'all'")->capture_default_str();
  blv->add_option("--iters", blv_iters, "Optimizer iteration cap")
      ->capture_default_str();
  blv->add_option("--restarts", blv_restarts, "Seeded restarts")->capture_default_str();
  blv->add_option("--horizon", blv_horizon, "Last cycle (default: full history)");
  blv->add_option("--out", blv_out, "Forecast CSV path")->required();

  // ---- evaluate ----
  auto* eval = app.add_subcommand(
      "evaluate", "Run the battery x ratio x method experiment matrix");
  eval->fallthrough();
  std::string eval_config, eval_out;
  eval->add_option("--config", eval_config, "Experiment description file")
      ->required();
  eval->add_option("--out", eval_out, "Report CSV path")->required();

  // ---- compare ----
  auto* comp = app.add_subcommand(
      "compare", "Experiment matrix plus per-cell forecast CSVs and SVG plots");
  comp->fallthrough();
  std::string comp_config, comp_out;
  int comp_seed_index = 0;
  comp->add_option("--config", comp_config, "Experiment description file")
      ->required();
  comp->add_option("--out", comp_out, "Output directory")->required();
  comp->add_option("--seed-index", comp_seed_index,
                   "Which seed's fit to plot (0-based)")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (prep->parsed()) {
      Manifest m("preprocess", argc, argv, g);
      return run_preprocess(g, m, prep_raw, prep_out, prep_cutoff, prep_grid,
                            prep_attrs);
    }
    if (synth->parsed()) {
      sc.seed = g.seed;
      Manifest m("synth", argc, argv, g);
      return run_synth(g, m, sc, synth_out);
    }
    if (train->parsed()) {
      Manifest m("train", argc, argv, g);
      return run_train(g, m, train_data, train_target, train_ratio, train_ky,
                       train_kx, train_q, train_iters, train_restarts, train_solo,
                       train_out);
    }
    if (fore->parsed()) {
      Manifest m("forecast", argc, argv, g);
      return run_forecast(g, m, fore_model, fore_horizon, fore_threshold, fore_out,
                          fore_latent);
    }
    if (base->parsed()) {
      if (bgp->parsed()) {
        Manifest m("baseline gp", argc, argv, g);
        return run_baseline_gp(g, m, bgp_data, bgp_target, bgp_ratio, bgp_kernel,
                               bgp_iters, bgp_restarts, bgp_horizon, bgp_out);
      }
      Manifest m("baseline gplvm", argc, argv, g);
      return run_baseline_gplvm(g, m, blv_data, blv_target, blv_ratio, blv_ky,
                                blv_q, blv_iters, blv_restarts, blv_horizon,
                                blv_out);
    }
    if (eval->parsed()) {
      Manifest m("evaluate", argc, argv, g);
      return run_evaluate(g, m, eval_config, eval_out);
    }
    if (comp->parsed()) {
      Manifest m("compare", argc, argv, g);
      return run_compare(g, m, comp_config, comp_out, comp_seed_index);
    }
    std::cerr << "usage error: no subcommand selected\n";
    return 2;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
