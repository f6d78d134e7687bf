#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "trendkit/analysis.hpp"
#include "trendkit/grid.hpp"
#include "trendkit/structural.hpp"
#include "trendkit/subspace.hpp"

namespace trendkit {

/// Geometry and magnitudes of the synthetic gridded dataset written by
/// run_simulate: a few slowly mean-reverting factors with smooth loading
/// fields, a deterministic seasonal pattern, and white measurement noise.
struct SimulateConfig {
  double cell_step = 2.5;  // degrees between cell centers
  int months = 564;
  std::vector<double> depths{10.0, 50.0, 100.0, 150.0, 250.0};
  std::vector<double> factor_sds{0.10, 0.05, 0.025, 0.0125};
  double factor_ar = 0.97;  // factor AR(1) coefficient; 1.0 = random walk
  double noise_sd = 0.3;
  double seasonal_amp = 1.5;             // amplitude at the southern edge
  double seasonal_amp_lat_slope = 0.02;  // amplitude growth per degree north
  double missing_frac = 0.0;             // chance a cell-month is dropped
};

/// Everything a batch run needs; parsed from `key = value` config lines and
/// echoed verbatim to <out>/config_effective.txt.
struct RunConfig {
  std::string input_path;
  std::string input_format = "grid-csv";  // "grid-csv" | "panel-csv"
  std::string out_dir = "out";

  Region region;
  BoxAverageOptions box;
  std::vector<double> depths;  // empty = every depth present in the input
  MonthStamp origin{1958, 1};  // start stamp used by simulate

  StructuralSpec structural;
  FitSettings fit;

  HankelSpec hankel;
  RankSelection rank;

  ChangePointOptions change_points;
  std::vector<std::string> recon_boxes{"50N_215E", "35N_185E", "35N_220E", "25N_220E"};
  double strat_shallow = 10.0;
  double strat_deep = 150.0;

  int workers = 0;  // 0 = all hardware threads
  std::uint64_t seed = 1958;
  SimulateConfig sim;
};

RunConfig default_config();

/// Apply one `key = value` setting; throws DataError on unknown keys or
/// unparsable values.
void apply_config_setting(RunConfig& config, const std::string& key, const std::string& value);

/// Read a config file of `key = value` lines ('#' comments, blank lines ok).
RunConfig load_config_file(const std::string& path);

/// Render every setting in a fixed order (the config_effective.txt content).
std::string render_config(const RunConfig& config);

struct SeriesFailure {
  std::string depth;  // depth directory name ("" for run-level failures)
  std::string id;     // series/box id or stage label
  std::string message;
};

struct RunReport {
  int series_total = 0;
  std::vector<SeriesFailure> failures;
  std::vector<std::string> notes;  // human-readable progress summary
  double wall_seconds = 0.0;
  [[nodiscard]] bool ok() const { return failures.empty(); }
};

/// Write a synthetic gridded CSV to config.input_path plus factor/loading
/// truth files under <out>/sim_truth/.
RunReport run_simulate(const RunConfig& config);

/// Box-average the input and fit every series, writing per-depth panels,
/// component CSVs, parameter tables, and the run manifest.
RunReport run_decompose(const RunConfig& config);

/// Identify the common trends per depth from the trend-plus-error partial
/// residuals.  Reuses decomposition outputs when the manifest hash matches
/// the current input and settings; otherwise recomputes them first.
RunReport run_common_trends(const RunConfig& config);

/// Change-point and stratification reports; reuses (or rebuilds) the
/// upstream products the same way run_common_trends does.
RunReport run_report(const RunConfig& config);

/// FNV-1a 64-bit hash, streamable by chaining the previous result as seed.
std::uint64_t fnv1a64(const void* data, std::size_t size,
                      std::uint64_t seed = 14695981039346656037ull);

/// FNV-1a of a file's bytes; throws DataError when it cannot be read.
std::uint64_t hash_file(const std::string& path);

}  // namespace trendkit
