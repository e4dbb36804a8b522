// End-to-end tests of the command-line tool: each case invokes the built
// binary as a subprocess and inspects exit codes, output files, and
// manifests.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gpdm/util.hpp"
#include "support/tempdir.hpp"

namespace fs = std::filesystem;
using testutil::TempDir;

namespace {

struct RunResult {
  int code = -1;
  std::string out, err;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

/// Run the CLI with the given argument string; capture exit code and streams.
RunResult run_cli(const TempDir& dir, const std::string& args) {
  const std::string out_f = dir.file("_stdout.txt");
  const std::string err_f = dir.file("_stderr.txt");
  const std::string cmd =
      std::string(GPDM_CLI_PATH) + " " + args + " >" + out_f + " 2>" + err_f;
  const int raw = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = slurp(out_f);
  r.err = slurp(err_f);
  return r;
}

int csv_row_count(const std::string& path) {
  return static_cast<int>(gpdm::read_csv(path).rows.size());
}

std::string small_experiment_config(const std::string& methods,
                                    const std::string& ratios, int seeds) {
  std::ostringstream cfg;
  cfg << "[experiment]\n"
      << "targets = SYN0\n"
      << "ratios = " << ratios << "\n"
      << "methods = " << methods << "\n"
      << "seeds = " << seeds << "\n"
      << "[synth]\n"
      << "batteries = 2\n"
      << "cycles = 24\n"
      << "noise = 0.005\n"
      << "seed = 3\n"
      << "[train]\n"
      << "q = 2\n"
      << "iters = 30\n"
      << "[gp]\n"
      << "iters = 30\n";
  return cfg.str();
}

}  // namespace

TEST_CASE("synth writes identical fleets for equal seeds") {
  TempDir dir;
  RunResult a = run_cli(dir, "synth --seed 7 --batteries 3 --cycles 12 --out " +
                                 dir.file("fleet_a"));
  RunResult b = run_cli(dir, "synth --seed 7 --batteries 3 --cycles 12 --out " +
                                 dir.file("fleet_b"));
  CHECK(a.code == 0);
  CHECK(b.code == 0);
  for (const char* name : {"SYN0/meta.json", "SYN1/meta.json",
                           "SYN2/meta.json", "fleet.json"}) {
    const std::string fa = slurp(dir.file(std::string("fleet_a/") + name));
    const std::string fb = slurp(dir.file(std::string("fleet_b/") + name));
    CHECK(!fa.empty());
    CHECK(fa == fb);
  }
  // Different seed, different bytes.
  RunResult c = run_cli(dir, "synth --seed 8 --batteries 3 --cycles 12 --out " +
                                 dir.file("fleet_c"));
  CHECK(c.code == 0);
  CHECK(slurp(dir.file("fleet_a/SYN0/meta.json")) !=
        slurp(dir.file("fleet_c/SYN0/meta.json")));
}

TEST_CASE("missing model file fails with the path in the message") {
  TempDir dir;
  const std::string missing = dir.file("nope.gpdm");
  RunResult r = run_cli(dir, "forecast --model " + missing +
                                 " --horizon 20 --out " + dir.file("fc.csv"));
  CHECK(r.code == 1);
  CHECK(r.err.find(missing) != std::string::npos);
  CHECK(!fs::exists(dir.file("fc.csv")));
}

TEST_CASE("unknown flags and missing required flags are usage errors") {
  TempDir dir;
  CHECK(run_cli(dir, "synth --bogus 1 --out " + dir.file("x")).code == 2);
  CHECK(run_cli(dir, "train --target SYN0").code == 2);
  CHECK(run_cli(dir, "").code == 2);          // no subcommand
  CHECK(run_cli(dir, "--help").code == 0);    // help is not an error
}

TEST_CASE("train, forecast, and baselines write band CSVs with manifests") {
  TempDir dir;
  const std::string fleet = dir.file("fleet");
  REQUIRE(run_cli(dir, "synth --seed 5 --batteries 2 --cycles 24 --out " + fleet)
              .code == 0);

  const std::string model = dir.file("model.gpdm");
  RunResult tr = run_cli(dir, "train --data " + fleet +
                                  " --target SYN0 --ratio 0.5 --q 2 --iters 30 "
                                  "--out " +
                                  model);
  CHECK(tr.code == 0);
  CHECK(fs::exists(model));
  CHECK(fs::exists(model + ".manifest.json"));
  CHECK(slurp(model + ".manifest.json").find("\"outputs\"") != std::string::npos);

  const std::string fc = dir.file("fc.csv");
  const std::string lat = dir.file("lat.csv");
  RunResult fo = run_cli(dir, "forecast --model " + model +
                                  " --horizon 24 --out " + fc +
                                  " --latent-out " + lat);
  CHECK(fo.code == 0);
  CHECK(csv_row_count(fc) == 12);  // cycles 13..24
  CHECK(csv_row_count(lat) == 12);
  CHECK(gpdm::read_csv(fc).header[0] == "cycle");
  CHECK(fs::exists(fc + ".manifest.json"));

  RunResult gp = run_cli(dir, "baseline gp --data " + fleet +
                                  " --target SYN0 --ratio 0.5 --iters 30 --out " +
                                  dir.file("gp.csv"));
  CHECK(gp.code == 0);
  CHECK(csv_row_count(dir.file("gp.csv")) == 12);

  RunResult lv = run_cli(dir, "baseline gplvm --data " + fleet +
                                  " --target SYN0 --ratio 0.5 --q 2 --iters 25 "
                                  "--out " +
                                  dir.file("lvm.csv"));
  CHECK(lv.code == 0);
  CHECK(csv_row_count(dir.file("lvm.csv")) == 12);

  // Horizon not past the training rows is a domain error.
  CHECK(run_cli(dir, "baseline gp --data " + fleet +
                         " --target SYN0 --ratio 0.5 --horizon 12 --out " +
                         dir.file("short.csv"))
            .code == 1);

  // Every file created lives under a requested output path.
  std::set<std::string> roots{"fleet",   "model.gpdm", "fc.csv", "lat.csv",
                              "gp.csv",  "lvm.csv",    "_stdout.txt",
                              "_stderr.txt"};
  for (const auto& entry : fs::directory_iterator(dir.path)) {
    std::string name = entry.path().filename().string();
    bool ok = false;
    for (const auto& root : roots)
      if (name == root || name.rfind(root + ".manifest", 0) == 0) ok = true;
    const std::string msg = "unexpected output: " + name;
    CHECK_MESSAGE(ok, msg);
  }
}

TEST_CASE("evaluate emits one report row per matrix cell, independent of jobs") {
  TempDir dir;
  const std::string cfg_path = dir.file("exp.ini");
  gpdm::atomic_write_file(cfg_path, small_experiment_config("gp", "0.5,0.75", 2));

  RunResult one = run_cli(dir, "evaluate --config " + cfg_path + " --out " +
                                   dir.file("report1.csv") + " --jobs 1");
  CHECK(one.code == 0);
  CHECK(csv_row_count(dir.file("report1.csv")) == 2);  // 1 battery x 2 ratios x 1 method
  CHECK(one.out.find("battery") != std::string::npos);  // text table on stdout

  RunResult two = run_cli(dir, "evaluate --config " + cfg_path + " --out " +
                                   dir.file("report2.csv") + " --jobs 2");
  CHECK(two.code == 0);
  CHECK(slurp(dir.file("report1.csv")) == slurp(dir.file("report2.csv")));
}

TEST_CASE("full pipeline report covers the whole matrix with a gpdm method") {
  TempDir dir;
  const std::string cfg_path = dir.file("exp.ini");
  gpdm::atomic_write_file(cfg_path,
                          small_experiment_config("gpdm,gp", "0.5", 1));
  RunResult r = run_cli(dir, "evaluate --config " + cfg_path + " --out " +
                                 dir.file("report.csv"));
  CHECK(r.code == 0);
  gpdm::CsvTable table = gpdm::read_csv(dir.file("report.csv"));
  CHECK(table.rows.size() == 2);
  const int method_col = table.column("method");
  const int status_col = table.column("status");
  REQUIRE(method_col >= 0);
  REQUIRE(status_col >= 0);
  for (const auto& row : table.rows) CHECK(row[status_col] == "ok");
}

TEST_CASE("compare renders report, per-cell forecasts, and plots") {
  TempDir dir;
  const std::string cfg_path = dir.file("exp.ini");
  gpdm::atomic_write_file(cfg_path, small_experiment_config("gp", "0.5", 1));
  const std::string out = dir.file("cmp");
  RunResult r = run_cli(dir, "compare --config " + cfg_path + " --out " + out);
  CHECK(r.code == 0);
  CHECK(fs::exists(out + "/report.csv"));
  CHECK(fs::exists(out + "/report.txt"));
  CHECK(fs::exists(out + "/forecast_SYN0_r50_gp.csv"));
  CHECK(fs::exists(out + "/manifest.json"));
  const std::string svg = slurp(out + "/plot_SYN0_r50.svg");
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("gp") != std::string::npos);
  CHECK(svg.find("observed") != std::string::npos);
}

TEST_CASE("config errors are reported as domain failures") {
  TempDir dir;
  const std::string cfg_path = dir.file("empty.ini");
  gpdm::atomic_write_file(cfg_path, "[experiment]\nseeds = 1\n");
  RunResult r = run_cli(dir, "evaluate --config " + cfg_path + " --out " +
                                 dir.file("report.csv"));
  CHECK(r.code == 1);
  CHECK(r.err.find("no data") != std::string::npos);

  CHECK(run_cli(dir, "evaluate --config " + dir.file("missing.ini") +
                         " --out " + dir.file("r.csv"))
            .code == 1);
}
