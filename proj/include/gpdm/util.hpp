#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace gpdm {

/// Raised for data/runtime failures (missing files, bad inputs, numeric
/// degeneracy). Precondition violations use std::invalid_argument instead.
struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------- random ---

/// Deterministic random stream: mt19937_64 plus an explicit Box-Muller
/// transform so normal draws are bit-identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 bits of randomness.
  double uniform();
  double uniform(double lo, double hi);
  /// Standard normal draw (Box-Muller, cached spare).
  double normal();
  double normal(double mean, double sd);
  /// Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n);

 private:
  std::mt19937_64 gen_;  // engine sequence is pinned by the standard
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// splitmix64-style combiner for deriving independent child seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

// --------------------------------------------------------------- numbers ---

/// Shortest decimal form that parses back to the identical double.
std::string format_double(double v);
/// Exact inverse of format_double; also accepts general decimal/hex floats.
double parse_double(const std::string& s);
long parse_long(const std::string& s);

// --------------------------------------------------------------- strings ---

std::string trim(const std::string& s);
std::vector<std::string> split(const std::string& s, char sep);
std::string lower(const std::string& s);
bool starts_with(const std::string& s, const std::string& prefix);

// ------------------------------------------------------------------ file ---

std::string read_file(const std::filesystem::path& path);
/// Writes via a temp file in the same directory followed by rename, so
/// readers never observe a partial file.
void atomic_write_file(const std::filesystem::path& path, const std::string& content);

/// FNV-1a 64-bit digest, returned as 16 hex chars.
std::string fnv1a_hex(const std::string& bytes);

// ------------------------------------------------------------------- csv ---

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;  // -1 when absent
};

CsvTable read_csv(const std::filesystem::path& path);
CsvTable parse_csv(const std::string& text, const std::string& origin);

// ---------------------------------------------------------------- config ---

/// Minimal INI-style config: [section] headers, key = value lines,
/// '#' or ';' comments. Duplicate keys keep the last value.
class ConfigFile {
 public:
  static ConfigFile parse(const std::string& text);
  static ConfigFile load(const std::filesystem::path& path);

  bool has(const std::string& section, const std::string& key) const;
  std::string get(const std::string& section, const std::string& key,
                  const std::string& fallback) const;
  std::string require(const std::string& section, const std::string& key) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  long get_long(const std::string& section, const std::string& key, long fallback) const;
  /// Comma-separated list value, trimmed entries, empty entries dropped.
  std::vector<std::string> get_list(const std::string& section, const std::string& key) const;

  const std::map<std::string, std::map<std::string, std::string>>& sections() const {
    return sections_;
  }

 private:
  std::map<std::string, std::map<std::string, std::string>> sections_;
};

}  // namespace gpdm
