// End-to-end smoke test of the command-line driver: spawns the real binary
// (path injected at compile time) and checks exit codes and key artifacts.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "trendkit/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() / ("trendkit_cli_" + std::to_string(++counter));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// Runs the CLI with output captured to `log`, returning the exit code.
int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(TRENDKIT_CLI_PATH) + " " + args + " > " +
                          log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("cli: simulate, decompose, common-trends, report succeed end to end") {
  TempDir tmp;
  const fs::path conf = tmp.path / "run.conf";
  {
    std::ofstream out(conf);
    out << "input = " << (tmp.path / "input.csv").string() << "\n"
        << "out = " << (tmp.path / "out").string() << "\n"
        << "region.lat_min = 20\n"
        << "region.lat_max = 30\n"
        << "region.lon_min = 110\n"
        << "region.lon_max = 120\n"
        << "sim.months = 240\n"
        << "sim.depths = 10\n"
        << "sim.factor_sds = 0.1,0.05\n"
        << "rank.mode = fixed\n"
        << "rank.n = 1\n"
        << "recon.boxes = 20N_110E\n"
        << "workers = 1\n"
        << "seed = 11\n";
  }
  const std::string base = "--config " + conf.string();
  const fs::path log = tmp.path / "log.txt";

  CHECK(run_cli("simulate " + base, log) == 0);
  INFO(read_file(log));
  CHECK(fs::exists(tmp.path / "input.csv"));

  REQUIRE(run_cli("decompose " + base, log) == 0);
  INFO(read_file(log));
  const fs::path params = tmp.path / "out" / "10" / "params.csv";
  REQUIRE(fs::exists(params));
  const std::uint64_t first = trendkit::hash_file(params.string());

  // rerunning the same decomposition is deterministic down to the bytes
  CHECK(run_cli("decompose " + base, log) == 0);
  CHECK(trendkit::hash_file(params.string()) == first);

  CHECK(run_cli("common-trends " + base, log) == 0);
  CHECK(fs::exists(tmp.path / "out" / "10" / "trends" / "states.csv"));

  CHECK(run_cli("report " + base, log) == 0);
  CHECK(fs::exists(tmp.path / "out" / "reports" / "change_points.csv"));
  CHECK(fs::exists(tmp.path / "out" / "reports" / "stratification.csv"));
  CHECK(read_file(log).find("ok (") != std::string::npos);
}

TEST_CASE("cli: hard errors exit 1") {
  TempDir tmp;
  const fs::path log = tmp.path / "log.txt";

  const int missing = run_cli("decompose --input " + (tmp.path / "absent.csv").string() +
                                  " --out " + (tmp.path / "out").string(),
                              log);
  CHECK(missing == 1);
  CHECK(read_file(log).find("error:") != std::string::npos);

  const int badset = run_cli("simulate --input " + (tmp.path / "x.csv").string() +
                                 " --out " + (tmp.path / "out2").string() +
                                 " --set sim.months=banana",
                             log);
  CHECK(badset == 1);
}

TEST_CASE("cli: per-series failures exit 2 and name the series") {
  TempDir tmp;

  // two healthy correlated series plus one too sparse to fit
  std::mt19937_64 rng(5);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::ostringstream csv;
  csv << "box_id,depth_m,year,month,value\n";
  double w = 0.0;
  int year = 1958, month = 1;
  for (int t = 0; t < 120; ++t) {
    w += 0.1 * gauss(rng);
    csv << "A,10," << year << "," << month << "," << (w + 0.05 * gauss(rng)) << "\n";
    csv << "B,10," << year << "," << month << "," << (0.9 * w + 0.05 * gauss(rng)) << "\n";
    csv << "C,10," << year << "," << month << ",";
    if (t % 24 == 0) csv << 0.1 * gauss(rng);
    csv << "\n";
    if (++month > 12) { month = 1; ++year; }
  }
  const fs::path input = tmp.path / "panel.csv";
  std::ofstream(input) << csv.str();

  const fs::path log = tmp.path / "log.txt";
  const int rc = run_cli("decompose --input " + input.string() + " --format panel-csv --out " +
                             (tmp.path / "out").string() + " --workers 1",
                         log);
  CHECK(rc == 2);
  const std::string text = read_file(log);
  CHECK(text.find("C:") != std::string::npos);
  CHECK(text.find("see manifest.json") != std::string::npos);
  CHECK(fs::exists(tmp.path / "out" / "manifest.json"));
}

TEST_CASE("cli: unknown subcommand is rejected") {
  TempDir tmp;
  CHECK(run_cli("frobnicate", tmp.path / "log.txt") != 0);
}
