#include "gpdm/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <sstream>

#include <json.hpp>

#include "gpdm/util.hpp"
#include "json_io.hpp"

namespace fs = std::filesystem;

namespace gpdm {

namespace {

const char* kCsvHeader[] = {"battery_id", "cycle",         "t_s",        "voltage_v",
                            "current_a",  "temperature_c", "capacity_ah"};

Eigen::VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), v.size());
}

}  // namespace

RawCycleSet load_raw(const std::string& path) {
  CsvTable table = read_csv(path);
  int col[7];
  for (int i = 0; i < 7; ++i) {
    col[i] = table.column(kCsvHeader[i]);
    if (col[i] < 0)
      throw DomainError(path + ": missing column '" + std::string(kCsvHeader[i]) + "'");
  }
  if (table.rows.empty()) throw DomainError(path + ": no data rows");

  RawCycleSet out;
  out.battery_id = table.rows[0][col[0]];

  struct Accum {
    std::vector<double> t, v, i, temp;
    double capacity = 0.0;
    bool bad = false;
  };
  std::vector<std::pair<long, Accum>> groups;  // insertion order
  for (const auto& row : table.rows) {
    if (row[col[0]] != out.battery_id)
      throw DomainError(path + ": multiple battery ids in one file");
    long cyc = parse_long(row[col[1]]);
    if (groups.empty() || groups.back().first != cyc) {
      for (const auto& g : groups)
        if (g.first >= cyc)
          throw DomainError(path + ": cycle indices must be strictly increasing");
      groups.emplace_back(cyc, Accum{});
    }
    Accum& a = groups.back().second;
    double t = parse_double(row[col[2]]);
    double v = parse_double(row[col[3]]);
    double cur = parse_double(row[col[4]]);  // may be non-finite; unused downstream
    double temp = parse_double(row[col[5]]);
    double cap = parse_double(row[col[6]]);
    if (!std::isfinite(t) || !std::isfinite(v) || !std::isfinite(temp) ||
        !std::isfinite(cap)) {
      a.bad = true;
      continue;
    }
    if (a.t.empty()) a.capacity = cap;
    a.t.push_back(t);
    a.v.push_back(v);
    a.i.push_back(cur);
    a.temp.push_back(temp);
  }

  int dropped = 0;
  for (auto& [cyc, a] : groups) {
    if (a.bad || a.t.empty()) {
      ++dropped;
      continue;
    }
    for (size_t k = 1; k < a.t.size(); ++k)
      if (!(a.t[k] > a.t[k - 1]))
        throw DomainError(path + ": non-monotone time in cycle " + std::to_string(cyc));
    RawCycle c;
    c.index = static_cast<int>(cyc);
    c.t = to_vector(a.t);
    c.voltage = to_vector(a.v);
    c.current = to_vector(a.i);
    c.temperature = to_vector(a.temp);
    c.capacity = a.capacity;
    out.cycles.push_back(std::move(c));
  }
  if (dropped > 0)
    out.warnings.push_back(std::to_string(dropped) +
                           " cycle(s) dropped: non-finite required fields");
  if (out.cycles.empty()) throw DomainError(path + ": no usable cycles");
  return out;
}

std::vector<RawCycleSet> load_raw_dir(const std::string& dir) {
  if (!fs::is_directory(dir)) throw DomainError(dir + ": not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DomainError(dir + ": no .csv files");
  std::vector<RawCycleSet> out;
  for (const auto& f : files) out.push_back(load_raw(f.string()));
  return out;
}

// ------------------------------------------------------------------ spline ---

Eigen::VectorXd natural_spline(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                               const Eigen::VectorXd& xq) {
  const Eigen::Index n = x.size();
  if (n < 2 || y.size() != n) throw std::invalid_argument("spline: need >= 2 knots");
  for (Eigen::Index i = 1; i < n; ++i)
    if (!(x(i) > x(i - 1))) throw std::invalid_argument("spline: knots must increase");

  // Second derivatives M with natural boundaries M(0) = M(n-1) = 0, via the
  // standard tridiagonal system solved by the Thomas algorithm.
  Eigen::VectorXd M = Eigen::VectorXd::Zero(n);
  const Eigen::Index m = n - 2;
  if (m > 0) {
    Eigen::VectorXd diag(m), upper(m), rhs(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      double h0 = x(i + 1) - x(i);
      double h1 = x(i + 2) - x(i + 1);
      diag(i) = 2.0 * (h0 + h1);
      upper(i) = h1;
      rhs(i) = 6.0 * ((y(i + 2) - y(i + 1)) / h1 - (y(i + 1) - y(i)) / h0);
    }
    for (Eigen::Index i = 1; i < m; ++i) {
      double lower = x(i + 1) - x(i);  // sub-diagonal element of row i
      double w = lower / diag(i - 1);
      diag(i) -= w * upper(i - 1);
      rhs(i) -= w * rhs(i - 1);
    }
    M(m) = rhs(m - 1) / diag(m - 1);
    for (Eigen::Index i = m - 1; i >= 1; --i)
      M(i) = (rhs(i - 1) - upper(i - 1) * M(i + 1)) / diag(i - 1);
  }

  Eigen::VectorXd out(xq.size());
  for (Eigen::Index k = 0; k < xq.size(); ++k) {
    double t = std::clamp(xq(k), x(0), x(n - 1));
    Eigen::Index j =
        std::upper_bound(x.data(), x.data() + n, t) - x.data();  // first knot > t
    j = std::clamp<Eigen::Index>(j - 1, 0, n - 2);
    double h = x(j + 1) - x(j);
    double a = (x(j + 1) - t) / h;
    double b = (t - x(j)) / h;
    out(k) = a * y(j) + b * y(j + 1) +
             ((a * a * a - a) * M(j) + (b * b * b - b) * M(j + 1)) * h * h / 6.0;
  }
  return out;
}

ColumnTransform fit_minmax(const Eigen::VectorXd& values) {
  if (values.size() == 0) throw std::invalid_argument("minmax: empty column");
  ColumnTransform t;
  t.offset = values.minCoeff();
  t.span = values.maxCoeff() - t.offset;
  if (!(t.span > 0.0)) t.span = 1.0;  // constant column maps to 0
  return t;
}

// -------------------------------------------------------------- preprocess ---

BatteryDataset preprocess(const RawCycleSet& raw, const PreprocessConfig& cfg) {
  if (cfg.grid < 2) throw std::invalid_argument("preprocess: grid must be >= 2");
  BatteryDataset ds;
  ds.battery_id = raw.battery_id;
  ds.cutoff = cfg.cutoff;
  ds.grid = cfg.grid;
  ds.warnings = raw.warnings;

  std::vector<Eigen::VectorXd> vrows, trows;
  for (const RawCycle& c : raw.cycles) {
    // First sample at or below the cut-off ends the usable window.
    Eigen::Index cross = -1;
    for (Eigen::Index k = 0; k < c.voltage.size(); ++k)
      if (c.voltage(k) <= cfg.cutoff) {
        cross = k;
        break;
      }
    if (cross == 0) {
      ds.warnings.push_back("cycle " + std::to_string(c.index) +
                            " dropped: starts at or below the cut-off voltage");
      continue;
    }
    if (cross < 0) {
      ds.warnings.push_back("cycle " + std::to_string(c.index) +
                            " dropped: never reaches the cut-off voltage");
      continue;
    }

    // Knots 0..cross-1 plus the exact interpolated crossing point.
    Eigen::Index keep = cross;
    Eigen::VectorXd t(keep + 1), v(keep + 1), temp(keep + 1);
    t.head(keep) = c.t.head(keep);
    v.head(keep) = c.voltage.head(keep);
    temp.head(keep) = c.temperature.head(keep);
    double t_star, temp_star;
    if (c.voltage(cross) == cfg.cutoff) {
      t_star = c.t(cross);
      temp_star = c.temperature(cross);
    } else {
      double frac = (cfg.cutoff - c.voltage(cross - 1)) /
                    (c.voltage(cross) - c.voltage(cross - 1));
      t_star = c.t(cross - 1) + frac * (c.t(cross) - c.t(cross - 1));
      temp_star = c.temperature(cross - 1) +
                  frac * (c.temperature(cross) - c.temperature(cross - 1));
    }
    t(keep) = t_star;
    v(keep) = cfg.cutoff;
    temp(keep) = temp_star;

    if (t.size() < 4) {
      ds.warnings.push_back("cycle " + std::to_string(c.index) +
                            " dropped: fewer than 4 samples before the cut-off");
      continue;
    }

    Eigen::VectorXd tq(cfg.grid);
    for (int j = 0; j < cfg.grid; ++j)
      tq(j) = t(0) + (t_star - t(0)) * static_cast<double>(j) / (cfg.grid - 1);
    tq(cfg.grid - 1) = t_star;

    vrows.push_back(natural_spline(t, v, tq));
    trows.push_back(natural_spline(t, temp, tq));
    CycleRecord rec;
    rec.raw_index = c.index;
    rec.capacity = c.capacity;
    rec.t0 = t(0);
    rec.t1 = t_star;
    ds.cycles.push_back(rec);
  }

  if (ds.cycles.empty()) throw DomainError(raw.battery_id + ": no cycles survive preprocessing");

  double base = ds.cycles.front().capacity;
  if (!(base > 0.0)) throw DomainError(raw.battery_id + ": first cycle capacity not positive");
  ds.voltage.resize(ds.n_cycles(), cfg.grid);
  ds.temperature.resize(ds.n_cycles(), cfg.grid);
  for (Eigen::Index i = 0; i < ds.n_cycles(); ++i) {
    ds.cycles[i].index = static_cast<int>(i) + 1;
    ds.cycles[i].soh = ds.cycles[i].capacity / base;
    ds.voltage.row(i) = vrows[i].transpose();
    ds.temperature.row(i) = trows[i].transpose();
  }
  return ds;
}

void extract_attributes(BatteryDataset& ds, const std::vector<std::string>& which) {
  if (which.empty()) throw std::invalid_argument("extract_attributes: empty selection");
  if (ds.voltage.size() == 0 || ds.temperature.size() == 0)
    throw DomainError(ds.battery_id + ": resampled grids required for attributes");
  const Eigen::Index n = ds.n_cycles();
  const int mid = ds.grid / 2;

  ds.attribute_names = which;
  ds.attributes.resize(n, static_cast<Eigen::Index>(which.size()));
  for (size_t a = 0; a < which.size(); ++a) {
    const std::string& name = which[a];
    for (Eigen::Index i = 0; i < n; ++i) {
      double value;
      if (name == "midpoint_temperature") {
        value = ds.temperature(i, mid);
      } else if (name == "midpoint_voltage") {
        value = ds.voltage(i, mid);
      } else if (name == "energy") {
        double h = (ds.cycles[i].t1 - ds.cycles[i].t0) / (ds.grid - 1);
        value = h * (ds.voltage.row(i).sum() -
                     0.5 * (ds.voltage(i, 0) + ds.voltage(i, ds.grid - 1)));
      } else {
        throw std::invalid_argument("unknown attribute '" + name + "'");
      }
      ds.attributes(i, static_cast<Eigen::Index>(a)) = value;
    }
  }
  if (!ds.attributes.allFinite())
    throw DomainError(ds.battery_id + ": non-finite attribute value");
  ds.attribute_ranges.clear();
  for (Eigen::Index a = 0; a < ds.attributes.cols(); ++a)
    ds.attribute_ranges.push_back(fit_minmax(ds.attributes.col(a)));
}

// ------------------------------------------------------------- persistence ---

void save_dataset(const BatteryDataset& ds, const std::string& dir) {
  fs::create_directories(dir);
  nlohmann::json j;
  j["format"] = "gpdm-dataset";
  j["version"] = 1;
  j["battery_id"] = ds.battery_id;
  j["cutoff"] = ds.cutoff;
  j["grid"] = ds.grid;
  nlohmann::json cyc = nlohmann::json::array();
  for (const auto& c : ds.cycles)
    cyc.push_back({{"index", c.index},
                   {"raw_index", c.raw_index},
                   {"capacity", c.capacity},
                   {"soh", c.soh},
                   {"t0", c.t0},
                   {"t1", c.t1}});
  j["cycles"] = std::move(cyc);
  j["attribute_names"] = ds.attribute_names;
  j["attributes"] = matrix_to_json(ds.attributes);
  nlohmann::json ranges = nlohmann::json::array();
  for (const auto& r : ds.attribute_ranges)
    ranges.push_back({{"offset", r.offset}, {"span", r.span}});
  j["attribute_ranges"] = std::move(ranges);
  j["warnings"] = ds.warnings;
  j["has_grids"] = ds.voltage.size() > 0;
  atomic_write_file(fs::path(dir) / "meta.json", j.dump(2) + "\n");

  if (ds.voltage.size() > 0) {
    std::string csv = "cycle,point,voltage_v,temperature_c\n";
    for (Eigen::Index i = 0; i < ds.n_cycles(); ++i)
      for (int g = 0; g < ds.grid; ++g)
        csv += std::to_string(ds.cycles[i].index) + "," + std::to_string(g) + "," +
               format_double(ds.voltage(i, g)) + "," +
               format_double(ds.temperature(i, g)) + "\n";
    atomic_write_file(fs::path(dir) / "grids.csv", csv);
  }
}

BatteryDataset load_dataset(const std::string& dir) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(fs::path(dir) / "meta.json"));
  } catch (const nlohmann::json::exception& e) {
    throw DomainError(dir + ": bad meta.json: " + e.what());
  }
  if (j.value("format", "") != "gpdm-dataset")
    throw DomainError(dir + ": not a dataset directory");
  if (j.value("version", 0) != 1) throw DomainError(dir + ": unsupported version");

  BatteryDataset ds;
  ds.battery_id = j.at("battery_id").get<std::string>();
  ds.cutoff = j.at("cutoff").get<double>();
  ds.grid = j.at("grid").get<int>();
  for (const auto& c : j.at("cycles")) {
    CycleRecord rec;
    rec.index = c.at("index").get<int>();
    rec.raw_index = c.at("raw_index").get<int>();
    rec.capacity = c.at("capacity").get<double>();
    rec.soh = c.at("soh").get<double>();
    rec.t0 = c.at("t0").get<double>();
    rec.t1 = c.at("t1").get<double>();
    ds.cycles.push_back(rec);
  }
  ds.attribute_names = j.at("attribute_names").get<std::vector<std::string>>();
  ds.attributes = matrix_from_json(j.at("attributes"));
  for (const auto& r : j.at("attribute_ranges")) {
    ColumnTransform t;
    t.offset = r.at("offset").get<double>();
    t.span = r.at("span").get<double>();
    ds.attribute_ranges.push_back(t);
  }
  ds.warnings = j.at("warnings").get<std::vector<std::string>>();

  if (j.value("has_grids", false)) {
    CsvTable table = read_csv(fs::path(dir) / "grids.csv");
    int ci = table.column("cycle"), cg = table.column("point");
    int cv = table.column("voltage_v"), ct = table.column("temperature_c");
    if (ci < 0 || cg < 0 || cv < 0 || ct < 0)
      throw DomainError(dir + ": grids.csv missing columns");
    ds.voltage.resize(ds.n_cycles(), ds.grid);
    ds.temperature.resize(ds.n_cycles(), ds.grid);
    std::map<int, Eigen::Index> by_index;
    for (Eigen::Index i = 0; i < ds.n_cycles(); ++i) by_index[ds.cycles[i].index] = i;
    for (const auto& row : table.rows) {
      auto it = by_index.find(static_cast<int>(parse_long(row[ci])));
      long g = parse_long(row[cg]);
      if (it == by_index.end() || g < 0 || g >= ds.grid)
        throw DomainError(dir + ": grids.csv row out of range");
      ds.voltage(it->second, g) = parse_double(row[cv]);
      ds.temperature(it->second, g) = parse_double(row[ct]);
    }
  }
  return ds;
}

// ---------------------------------------------------------------- assembly ---

AssembleResult assemble_transfer(const std::vector<BatteryDataset>& sets,
                                 const std::string& target, double ratio) {
  if (sets.empty()) throw std::invalid_argument("assemble: no datasets");
  if (!(ratio > 0.0) || ratio > 1.0)
    throw std::invalid_argument("assemble: ratio must lie in (0, 1]");
  int target_idx = -1;
  for (size_t m = 0; m < sets.size(); ++m) {
    if (sets[m].battery_id == target) target_idx = static_cast<int>(m);
    if (sets[m].attribute_names != sets[0].attribute_names)
      throw DomainError("assemble: attribute sets differ between batteries");
    if (sets[m].n_cycles() < 1) throw DomainError("assemble: empty dataset");
  }
  if (target_idx < 0) throw DomainError("assemble: unknown target '" + target + "'");

  const Eigen::Index N_t = sets[target_idx].n_cycles();
  const int T = static_cast<int>(std::lround(ratio * static_cast<double>(N_t)));
  if (T < 2) throw DomainError("assemble: ratio yields fewer than 2 target cycles");

  const int A = static_cast<int>(sets[0].attribute_names.size());
  AssembleResult out;
  TrainingSet& ts = out.ts;
  ts.columns = {"cycle", "label", "soh"};
  for (const auto& name : sets[0].attribute_names) ts.columns.push_back(name);

  Eigen::Index total = 0;
  for (size_t m = 0; m < sets.size(); ++m)
    total += (static_cast<int>(m) == target_idx) ? T : sets[m].n_cycles();

  Eigen::MatrixXd raw(total, 3 + A);
  Eigen::Index r = 0;
  for (size_t m = 0; m < sets.size(); ++m) {
    const BatteryDataset& ds = sets[m];
    Eigen::Index take = (static_cast<int>(m) == target_idx) ? T : ds.n_cycles();
    for (Eigen::Index i = 0; i < take; ++i, ++r) {
      raw(r, 0) = ds.cycles[i].index;
      raw(r, 1) = static_cast<double>(m + 1);
      raw(r, 2) = ds.cycles[i].soh;
      for (int a = 0; a < A; ++a) raw(r, 3 + a) = ds.attributes(i, a);
    }
    ts.battery_ids.push_back(ds.battery_id);
    ts.counts.push_back(static_cast<int>(take));
  }

  ts.max_cycle = static_cast<int>(raw.col(0).maxCoeff());
  ts.transforms.resize(3 + A);
  ts.transforms[0] = {0.0, static_cast<double>(ts.max_cycle)};
  ts.transforms[1] = {1.0, std::max<double>(static_cast<double>(sets.size()) - 1.0, 1.0)};
  ts.transforms[2] = {0.0, 1.0};  // SOH stays in its natural units
  for (int a = 0; a < A; ++a) ts.transforms[3 + a] = fit_minmax(raw.col(3 + a));

  ts.Y.resize(total, 3 + A);
  for (Eigen::Index i = 0; i < total; ++i)
    for (Eigen::Index c = 0; c < raw.cols(); ++c)
      ts.Y(i, c) = ts.transforms[c].apply(raw(i, c));

  ts.target_label = target_idx + 1;
  ts.target_rows = T;
  ts.target_total = static_cast<int>(N_t);

  const BatteryDataset& tgt = sets[target_idx];
  out.heldout_soh.resize(N_t - T);
  for (Eigen::Index i = T; i < N_t; ++i) {
    out.heldout_soh(i - T) = tgt.cycles[i].soh;
    out.heldout_cycles.push_back(tgt.cycles[i].index);
  }
  return out;
}

std::string training_set_to_text(const TrainingSet& ts) {
  nlohmann::json j;
  j["columns"] = ts.columns;
  nlohmann::json tr = nlohmann::json::array();
  for (const auto& t : ts.transforms)
    tr.push_back({{"offset", t.offset}, {"span", t.span}});
  j["transforms"] = std::move(tr);
  j["battery_ids"] = ts.battery_ids;
  j["counts"] = ts.counts;
  j["target_label"] = ts.target_label;
  j["target_rows"] = ts.target_rows;
  j["target_total"] = ts.target_total;
  j["max_cycle"] = ts.max_cycle;
  j["y"] = matrix_to_json(ts.Y);
  return j.dump();
}

TrainingSet training_set_from_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DomainError(std::string("training set: bad JSON: ") + e.what());
  }
  TrainingSet ts;
  ts.columns = j.at("columns").get<std::vector<std::string>>();
  for (const auto& t : j.at("transforms")) {
    ColumnTransform c;
    c.offset = t.at("offset").get<double>();
    c.span = t.at("span").get<double>();
    ts.transforms.push_back(c);
  }
  ts.battery_ids = j.at("battery_ids").get<std::vector<std::string>>();
  ts.counts = j.at("counts").get<std::vector<int>>();
  ts.target_label = j.at("target_label").get<int>();
  ts.target_rows = j.at("target_rows").get<int>();
  ts.target_total = j.at("target_total").get<int>();
  ts.max_cycle = j.at("max_cycle").get<int>();
  ts.Y = matrix_from_json(j.at("y"));
  return ts;
}

}  // namespace gpdm
