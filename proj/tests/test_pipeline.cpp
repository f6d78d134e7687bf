// Integration tests for the batch pipeline: simulate -> decompose ->
// common-trends -> report, exercised through the public run_* entry points
// against real files in a temporary directory.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "trendkit/errors.hpp"
#include "trendkit/pipeline.hpp"

using namespace trendkit;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() / ("trendkit_pipe_" + std::to_string(++counter));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::ordered_json read_manifest(const fs::path& out) {
  return nlohmann::ordered_json::parse(read_file(out / "manifest.json"));
}

bool has_note(const RunReport& r, const std::string& needle) {
  for (const auto& n : r.notes)
    if (n.find(needle) != std::string::npos) return true;
  return false;
}

int count_lines(const std::string& body) {
  int n = 0;
  for (char c : body)
    if (c == '\n') ++n;
  return n;
}

// Small two-depth synthetic run: 8 boxes per depth, two planted factors.
RunConfig small_run_config(const fs::path& dir, std::uint64_t seed) {
  RunConfig cfg = default_config();
  cfg.input_path = (dir / "input.csv").string();
  cfg.out_dir = (dir / "out").string();
  cfg.region = Region{20.0, 30.0, 110.0, 130.0};
  cfg.sim.months = 400;
  cfg.sim.depths = {10.0, 50.0};
  cfg.sim.factor_sds = {0.10, 0.05};
  // keep the planted factors well above the measurement noise so the rank-2
  // identification is comfortably positive-real at both depths
  cfg.sim.noise_sd = 0.1;
  cfg.rank.mode = RankSelection::Mode::fixed;
  cfg.rank.n = 2;
  cfg.recon_boxes = {"20N_110E", "25N_120E"};
  cfg.strat_shallow = 10.0;
  cfg.strat_deep = 50.0;
  cfg.workers = 1;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("full chain: simulate then report produces every artifact") {
  TempDir tmp;
  RunConfig cfg = small_run_config(tmp.path, 7);

  const RunReport sim = run_simulate(cfg);
  REQUIRE(sim.ok());
  const fs::path out(cfg.out_dir);
  CHECK(fs::exists(cfg.input_path));
  CHECK(fs::exists(out / "sim_truth" / "factors.csv"));
  CHECK(fs::exists(out / "sim_truth" / "loadings_10.csv"));
  CHECK(fs::exists(out / "sim_truth" / "loadings_50.csv"));

  // run_report rebuilds everything upstream on a cold output directory.
  const RunReport rep = run_report(cfg);
  CAPTURE(rep.failures.size());
  for (const auto& f : rep.failures) CAPTURE(f.depth + "/" + f.id + ": " + f.message);
  REQUIRE(rep.ok());
  CHECK(has_note(rep, "report: rebuilt common-trend products"));

  const nlohmann::ordered_json manifest = read_manifest(out);
  for (const std::string dir : {"10", "50"}) {
    INFO("depth dir " << dir);
    REQUIRE(manifest["decompose"].contains(dir));
    const auto& entry = manifest["decompose"][dir];
    CHECK(entry["boxes"].size() == 8);
    CHECK(entry["failed"].empty());
    CHECK(entry["dropped"].empty());
    CHECK(fs::exists(out / dir / "panel.csv"));
    CHECK(fs::exists(out / dir / "params.csv"));
    for (const auto& b : entry["boxes"])
      CHECK(fs::exists(out / dir / "decomp" / (b.get<std::string>() + ".csv")));

    REQUIRE(manifest["common_trends"].contains(dir));
    const auto& ct = manifest["common_trends"][dir];
    CHECK(ct["rank"].get<int>() == 2);
    CHECK(ct["series"].get<int>() == 8);
    CHECK(fs::exists(out / dir / "trends" / "states.csv"));
    CHECK(fs::exists(out / dir / "trends" / "offsets.csv"));
    CHECK(fs::exists(out / dir / "trends" / "singular_values.csv"));
    CHECK(fs::exists(out / dir / "trends" / "loadings.csv"));
    CHECK(fs::exists(out / dir / "maps" / "trend1.csv"));
    CHECK(fs::exists(out / dir / "maps" / "trend2.csv"));
    CHECK(fs::exists(out / dir / "recon" / "20N_110E.csv"));
    CHECK(fs::exists(out / dir / "recon" / "25N_120E.csv"));
  }

  // report artifacts
  const std::string cp = read_file(out / "reports" / "change_points.csv");
  CHECK(cp.rfind("series_id,depth_m,index,year,month,type,slope_before,slope_after\n", 0) == 0);
  const std::string strat = read_file(out / "reports" / "stratification.csv");
  CHECK(strat.rfind("box_id,shallow_m,deep_m,year,month,value\n", 0) == 0);
  // both featured boxes, full month range, no missing values simulated
  CHECK(count_lines(strat) == 1 + 2 * 400);

  REQUIRE(manifest.contains("report"));
  CHECK(manifest["report"]["change_point_rows"].is_number());
  std::vector<std::string> strat_boxes;
  for (const auto& b : manifest["report"]["stratification_boxes"])
    strat_boxes.push_back(b.get<std::string>());
  CHECK(strat_boxes == std::vector<std::string>{"20N_110E", "25N_120E"});

  // the effective config echo matches the in-memory rendering exactly
  CHECK(read_file(out / "config_effective.txt") == render_config(cfg));

  // a second identification pass reuses the cached decomposition ...
  const RunReport again = run_common_trends(cfg);
  REQUIRE(again.ok());
  CHECK(has_note(again, "common-trends: reusing decomposition products"));

  // ... while changing a decomposition-relevant setting forces a rebuild
  RunConfig changed = cfg;
  changed.structural.rho_min = 0.55;
  const RunReport rebuilt = run_common_trends(changed);
  REQUIRE(rebuilt.ok());
  CHECK(has_note(rebuilt, "common-trends: rebuilt decomposition products"));
}

TEST_CASE("identical seeds give byte-identical products") {
  TempDir tmp;
  auto make = [&](const std::string& leaf) {
    const fs::path dir = tmp.path / leaf;
    fs::create_directories(dir);
    RunConfig cfg = default_config();
    cfg.input_path = (dir / "input.csv").string();
    cfg.out_dir = (dir / "out").string();
    cfg.region = Region{20.0, 30.0, 110.0, 120.0};
    cfg.sim.months = 300;
    cfg.sim.depths = {10.0};
    cfg.sim.factor_sds = {0.10};
    cfg.rank.mode = RankSelection::Mode::fixed;
    cfg.rank.n = 1;
    cfg.recon_boxes = {"20N_110E"};
    cfg.workers = 1;
    cfg.seed = 42;
    REQUIRE(run_simulate(cfg).ok());
    const RunReport ct = run_common_trends(cfg);
    for (const auto& f : ct.failures) CAPTURE(f.id + ": " + f.message);
    REQUIRE(ct.ok());
    return cfg;
  };

  const RunConfig a = make("a");
  const RunConfig b = make("b");
  CHECK(hash_file(a.input_path) == hash_file(b.input_path));
  for (const std::string rel : {"10/params.csv", "10/trends/states.csv", "10/trends/loadings.csv"})
    CHECK(hash_file((fs::path(a.out_dir) / rel).string()) ==
          hash_file((fs::path(b.out_dir) / rel).string()));
}

TEST_CASE("per-series fit failures are recorded without aborting the run") {
  TempDir tmp;

  // Hand-written panel: two healthy series sharing a random-walk factor and
  // one series with too few observations to support the model.
  const int tau = 120;
  std::mt19937_64 rng(9);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> w(tau);
  double acc = 0.0;
  for (int t = 0; t < tau; ++t) {
    acc += 0.1 * gauss(rng);
    w[static_cast<std::size_t>(t)] = acc;
  }
  std::ostringstream csv;
  csv << "box_id,depth_m,year,month,value\n";
  int year = 1958, month = 1;
  for (int t = 0; t < tau; ++t) {
    const double a = w[static_cast<std::size_t>(t)] + 0.05 * gauss(rng);
    const double b = 0.9 * w[static_cast<std::size_t>(t)] + 0.05 * gauss(rng);
    csv << "A,10," << year << "," << month << "," << a << "\n";
    csv << "B,10," << year << "," << month << "," << b << "\n";
    csv << "C,10," << year << "," << month << ",";
    if (t % 24 == 0) csv << (0.2 * gauss(rng));  // 5 observed months < 6 free params
    csv << "\n";
    if (++month > 12) { month = 1; ++year; }
  }
  const fs::path input = tmp.path / "panel.csv";
  std::ofstream(input) << csv.str();

  RunConfig cfg = default_config();
  cfg.input_path = input.string();
  cfg.input_format = "panel-csv";
  cfg.out_dir = (tmp.path / "out").string();
  cfg.rank.mode = RankSelection::Mode::fixed;
  cfg.rank.n = 1;
  cfg.recon_boxes = {"A"};
  cfg.workers = 1;

  const RunReport dec = run_decompose(cfg);
  CHECK_FALSE(dec.ok());
  REQUIRE(dec.failures.size() == 1);
  CHECK(dec.failures[0].id == "C");
  CHECK(dec.failures[0].depth == "10");
  CHECK(has_note(dec, "1 failed"));

  const fs::path out(cfg.out_dir);
  const nlohmann::ordered_json manifest = read_manifest(out);
  const auto& entry = manifest["decompose"]["10"];
  CHECK(entry["boxes"].size() == 2);
  REQUIRE(entry["failed"].contains("C"));
  CHECK(fs::exists(out / "10" / "decomp" / "A.csv"));
  CHECK(fs::exists(out / "10" / "decomp" / "B.csv"));
  CHECK_FALSE(fs::exists(out / "10" / "decomp" / "C.csv"));
  // params.csv: header plus one row per successful series
  CHECK(count_lines(read_file(out / "10" / "params.csv")) == 3);

  // identification proceeds on the surviving pair and reports the cached gap
  const RunReport ct = run_common_trends(cfg);
  for (const auto& f : ct.failures) CAPTURE(f.id + ": " + f.message);
  REQUIRE(ct.ok());
  CHECK(has_note(ct, "reusing decomposition products"));
  CHECK(has_note(ct, "1 series failed in the cached run and are absent"));
  const nlohmann::ordered_json m2 = read_manifest(out);
  CHECK(m2["common_trends"]["10"]["series"].get<int>() == 2);
  CHECK(m2["common_trends"]["10"]["rank"].get<int>() == 1);
}

TEST_CASE("config rendering round-trips through a file") {
  TempDir tmp;
  RunConfig cfg = default_config();
  cfg.input_path = "data/input.csv";
  cfg.out_dir = "results";
  cfg.region = Region{25.0, 45.0, 120.0, 180.0};
  cfg.depths = {10.0, 150.0};
  cfg.box.cos_lat_weight = true;
  cfg.box.min_coverage = 0.25;
  cfg.structural.cycle_enabled = false;
  cfg.fit.simplex.max_evals = 777;
  cfg.hankel.demean = true;
  cfg.rank.mode = RankSelection::Mode::energy;
  cfg.rank.theta = 0.95;
  cfg.change_points.min_persist = 30;
  cfg.recon_boxes = {"25N_120E", "40N_175E"};
  cfg.strat_shallow = 10.0;
  cfg.strat_deep = 150.0;
  cfg.workers = 3;
  cfg.seed = 99;
  cfg.sim.months = 123;
  cfg.sim.factor_sds = {0.2, 0.1, 0.05};
  cfg.sim.missing_frac = 0.125;

  const std::string rendered = render_config(cfg);
  const fs::path file = tmp.path / "run.conf";
  std::ofstream(file) << "# comment line\n\n" << rendered;
  const RunConfig loaded = load_config_file(file.string());
  CHECK(render_config(loaded) == rendered);

  RunConfig scratch = default_config();
  CHECK_THROWS_AS(apply_config_setting(scratch, "no.such.key", "1"), DataError);
  CHECK_THROWS_AS(apply_config_setting(scratch, "sim.months", "banana"), DataError);
  CHECK_THROWS_AS(apply_config_setting(scratch, "workers", "1.5x"), DataError);
  apply_config_setting(scratch, "rank.n", "3");
  CHECK(scratch.rank.n == 3);
}

TEST_CASE("hashing: fnv1a64 chains over chunks and hash_file matches bytes") {
  const std::string text = "gridded climate panel";
  const std::uint64_t whole = fnv1a64(text.data(), text.size());
  const std::uint64_t part = fnv1a64(text.data() + 4, text.size() - 4,
                                     fnv1a64(text.data(), 4));
  CHECK(whole == part);

  TempDir tmp;
  const fs::path file = tmp.path / "blob.bin";
  std::ofstream(file, std::ios::binary) << text;
  CHECK(hash_file(file.string()) == whole);
  CHECK_THROWS_AS(hash_file((tmp.path / "absent.bin").string()), DataError);
}

TEST_CASE("run-level validation rejects unusable settings") {
  TempDir tmp;
  RunConfig cfg = default_config();
  cfg.input_path = (tmp.path / "input.csv").string();
  cfg.out_dir = (tmp.path / "out").string();
  cfg.sim.months = 0;
  CHECK_THROWS_AS(run_simulate(cfg), DataError);

  RunConfig dec = default_config();
  dec.input_path = (tmp.path / "missing.csv").string();
  dec.out_dir = (tmp.path / "out2").string();
  CHECK_THROWS_AS(run_decompose(dec), DataError);
}
