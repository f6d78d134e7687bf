#include "trendkit/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "csv.hpp"
#include "trendkit/errors.hpp"

namespace trendkit {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

constexpr double kDepthTol = 1e-6;

// ---------------------------------------------------------------------------
// small string/parse helpers

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw DataError("config: cannot parse value '" + value + "' for key '" + key + "'");
}

double require_double(const std::string& key, const std::string& value) {
  double v = 0.0;
  if (value.empty() || !csv::parse_double(value, v) || !std::isfinite(v))
    bad_value(key, value);
  return v;
}

int require_int(const std::string& key, const std::string& value) {
  int v = 0;
  if (!csv::parse_int(value, v)) bad_value(key, value);
  return v;
}

std::uint64_t require_u64(const std::string& key, const std::string& value) {
  if (value.empty()) bad_value(key, value);
  std::uint64_t out = 0;
  for (char c : value) {
    if (c < '0' || c > '9') bad_value(key, value);
    out = out * 10u + static_cast<std::uint64_t>(c - '0');
  }
  return out;
}

bool require_bool(const std::string& key, const std::string& value) {
  std::string v;
  v.reserve(value.size());
  for (char c : value) v.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, value);
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  if (trim(value).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = value.find(',', start);
    out.push_back(trim(value.substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::vector<double> require_double_list(const std::string& key, const std::string& value) {
  std::vector<double> out;
  for (const std::string& item : split_list(value)) out.push_back(require_double(key, item));
  return out;
}

std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += csv::format_double(v[i]);
  }
  return out;
}

std::string join_strings(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += v[i];
  }
  return out;
}

std::string bool_str(bool b) { return b ? "true" : "false"; }

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

// "50N_215E" (southwest corner) back to coordinates; false when the id does
// not follow the generated naming scheme.
bool parse_box_id(const std::string& id, double& lat, double& lon) {
  const std::size_t sep = id.find("N_");
  if (sep == std::string::npos || id.empty() || id.back() != 'E') return false;
  const std::string lat_part = id.substr(0, sep);
  const std::string lon_part = id.substr(sep + 2, id.size() - sep - 3);
  if (lat_part.empty() || lon_part.empty()) return false;
  double la = 0.0, lo = 0.0;
  if (!csv::parse_double(lat_part, la) || !std::isfinite(la)) return false;
  if (!csv::parse_double(lon_part, lo) || !std::isfinite(lo)) return false;
  lat = la;
  lon = lo;
  return true;
}

// ---------------------------------------------------------------------------
// file helpers

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open for writing: " + path.string());
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
  f.flush();
  if (!f) throw DataError("write failed: " + path.string());
}

json read_manifest(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) return json::object();
  try {
    json j = json::parse(f);
    if (!j.is_object()) return json::object();
    return j;
  } catch (const json::exception&) {
    return json::object();
  }
}

void write_manifest(const fs::path& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

// ---------------------------------------------------------------------------
// worker pool: pull indices off an atomic counter; all file IO stays outside

void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& task) {
  std::size_t n_threads = 1;
  if (workers > 0) {
    n_threads = static_cast<std::size_t>(workers);
  } else {
    const unsigned hw = std::thread::hardware_concurrency();
    n_threads = hw > 0 ? hw : 1;
  }
  n_threads = std::min(n_threads, count);
  if (n_threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;
  auto body = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        task(i);
      } catch (...) {
        const std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(n_threads);
  for (std::size_t k = 0; k < n_threads; ++k) pool.emplace_back(body);
  for (std::thread& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

// ---------------------------------------------------------------------------
// config keys (apply + render share one list; keep both in sync)

void apply_setting(RunConfig& c, const std::string& key, const std::string& value) {
  if (key == "input") c.input_path = value;
  else if (key == "format") {
    if (value != "grid-csv" && value != "panel-csv")
      throw DataError("config: format must be grid-csv or panel-csv, got '" + value + "'");
    c.input_format = value;
  } else if (key == "out") c.out_dir = value;
  else if (key == "workers") c.workers = require_int(key, value);
  else if (key == "seed") c.seed = require_u64(key, value);
  else if (key == "origin.year") c.origin.year = require_int(key, value);
  else if (key == "origin.month") {
    const int m = require_int(key, value);
    if (m < 1 || m > 12) bad_value(key, value);
    c.origin.month = m;
  } else if (key == "region.lat_min") c.region.lat_min = require_double(key, value);
  else if (key == "region.lat_max") c.region.lat_max = require_double(key, value);
  else if (key == "region.lon_min") c.region.lon_min = require_double(key, value);
  else if (key == "region.lon_max") c.region.lon_max = require_double(key, value);
  else if (key == "box.size") c.box.box_size = require_double(key, value);
  else if (key == "box.min_coverage") c.box.min_coverage = require_double(key, value);
  else if (key == "box.min_valid_frac") c.box.min_valid_frac = require_double(key, value);
  else if (key == "box.cos_lat_weight") c.box.cos_lat_weight = require_bool(key, value);
  else if (key == "depths") c.depths = require_double_list(key, value);
  else if (key == "structural.trend_order") c.structural.trend_order = require_int(key, value);
  else if (key == "structural.seasonal") c.structural.seasonal_enabled = require_bool(key, value);
  else if (key == "structural.season_length") c.structural.season_length = require_int(key, value);
  else if (key == "structural.cycle") c.structural.cycle_enabled = require_bool(key, value);
  else if (key == "structural.rho_min") c.structural.rho_min = require_double(key, value);
  else if (key == "structural.rho_max") c.structural.rho_max = require_double(key, value);
  else if (key == "structural.lambda_min") c.structural.lambda_min = require_double(key, value);
  else if (key == "structural.lambda_max") c.structural.lambda_max = require_double(key, value);
  else if (key == "fit.estimate_rho_lambda") c.fit.estimate_rho_lambda = require_bool(key, value);
  else if (key == "fit.rho0") c.fit.rho0 = require_double(key, value);
  else if (key == "fit.lambda0") c.fit.lambda0 = require_double(key, value);
  else if (key == "fit.initial_step") c.fit.simplex.initial_step = require_double(key, value);
  else if (key == "fit.diameter_tol") c.fit.simplex.diameter_tol = require_double(key, value);
  else if (key == "fit.max_evals") c.fit.simplex.max_evals = require_int(key, value);
  else if (key == "hankel.past") c.hankel.past = require_int(key, value);
  else if (key == "hankel.future") c.hankel.future = require_int(key, value);
  else if (key == "hankel.demean") c.hankel.demean = require_bool(key, value);
  else if (key == "rank.mode") {
    if (value == "fixed") c.rank.mode = RankSelection::Mode::fixed;
    else if (value == "energy") c.rank.mode = RankSelection::Mode::energy;
    else throw DataError("config: rank.mode must be fixed or energy, got '" + value + "'");
  } else if (key == "rank.n") c.rank.n = require_int(key, value);
  else if (key == "rank.theta") c.rank.theta = require_double(key, value);
  else if (key == "cp.min_persist") c.change_points.min_persist = require_int(key, value);
  else if (key == "cp.slope_window") c.change_points.slope_window = require_int(key, value);
  else if (key == "cp.inflection_factor")
    c.change_points.inflection_factor = require_double(key, value);
  else if (key == "recon.boxes") c.recon_boxes = split_list(value);
  else if (key == "strat.shallow") c.strat_shallow = require_double(key, value);
  else if (key == "strat.deep") c.strat_deep = require_double(key, value);
  else if (key == "sim.cell_step") c.sim.cell_step = require_double(key, value);
  else if (key == "sim.months") c.sim.months = require_int(key, value);
  else if (key == "sim.depths") c.sim.depths = require_double_list(key, value);
  else if (key == "sim.factor_sds") c.sim.factor_sds = require_double_list(key, value);
  else if (key == "sim.factor_ar") c.sim.factor_ar = require_double(key, value);
  else if (key == "sim.noise_sd") c.sim.noise_sd = require_double(key, value);
  else if (key == "sim.seasonal_amp") c.sim.seasonal_amp = require_double(key, value);
  else if (key == "sim.seasonal_amp_lat_slope")
    c.sim.seasonal_amp_lat_slope = require_double(key, value);
  else if (key == "sim.missing_frac") c.sim.missing_frac = require_double(key, value);
  else throw DataError("config: unknown key '" + key + "'");
}

void render_pair(std::string& out, const std::string& key, const std::string& value) {
  out += key;
  out += " = ";
  out += value;
  out += '\n';
}

// The decomposition-relevant subset; anything here invalidates cached
// decomposition products when it changes.
std::string render_decomp_settings(const RunConfig& c) {
  std::string s;
  render_pair(s, "format", c.input_format);
  render_pair(s, "region.lat_min", csv::format_double(c.region.lat_min));
  render_pair(s, "region.lat_max", csv::format_double(c.region.lat_max));
  render_pair(s, "region.lon_min", csv::format_double(c.region.lon_min));
  render_pair(s, "region.lon_max", csv::format_double(c.region.lon_max));
  render_pair(s, "box.size", csv::format_double(c.box.box_size));
  render_pair(s, "box.min_coverage", csv::format_double(c.box.min_coverage));
  render_pair(s, "box.min_valid_frac", csv::format_double(c.box.min_valid_frac));
  render_pair(s, "box.cos_lat_weight", bool_str(c.box.cos_lat_weight));
  render_pair(s, "depths", join_doubles(c.depths));
  render_pair(s, "structural.trend_order", std::to_string(c.structural.trend_order));
  render_pair(s, "structural.seasonal", bool_str(c.structural.seasonal_enabled));
  render_pair(s, "structural.season_length", std::to_string(c.structural.season_length));
  render_pair(s, "structural.cycle", bool_str(c.structural.cycle_enabled));
  render_pair(s, "structural.rho_min", csv::format_double(c.structural.rho_min));
  render_pair(s, "structural.rho_max", csv::format_double(c.structural.rho_max));
  render_pair(s, "structural.lambda_min", csv::format_double(c.structural.lambda_min));
  render_pair(s, "structural.lambda_max", csv::format_double(c.structural.lambda_max));
  render_pair(s, "fit.estimate_rho_lambda", bool_str(c.fit.estimate_rho_lambda));
  render_pair(s, "fit.rho0", csv::format_double(c.fit.rho0));
  render_pair(s, "fit.lambda0", csv::format_double(c.fit.lambda0));
  render_pair(s, "fit.initial_step", csv::format_double(c.fit.simplex.initial_step));
  render_pair(s, "fit.diameter_tol", csv::format_double(c.fit.simplex.diameter_tol));
  render_pair(s, "fit.max_evals", std::to_string(c.fit.simplex.max_evals));
  return s;
}

std::string decomp_hash(const RunConfig& c) {
  const std::uint64_t input = hash_file(c.input_path);
  std::string s = "input_hash=" + hex64(input) + "\n" + render_decomp_settings(c);
  return hex64(fnv1a64(s.data(), s.size()));
}

// ---------------------------------------------------------------------------
// depth bookkeeping

std::string depth_dir_name(double depth) { return csv::format_double(depth); }

std::string month_csv(const MonthStamp& origin, Eigen::Index t) {
  const MonthStamp m = origin.advanced(t);
  return std::to_string(m.year) + "," + std::to_string(m.month);
}

struct DepthPanel {
  double depth = 0.0;
  std::string dir;
  SeriesPanel panel;
  std::vector<BoxDefinition> boxes;   // empty when ids are not grid-generated
  std::vector<std::string> dropped;
};

std::vector<double> match_requested_depths(const std::vector<double>& available,
                                           const std::vector<double>& requested) {
  if (requested.empty()) return available;
  std::vector<double> out;
  for (double want : requested) {
    bool found = false;
    for (double have : available) {
      if (std::abs(have - want) <= kDepthTol) {
        out.push_back(have);
        found = true;
        break;
      }
    }
    if (!found)
      throw DataError("requested depth " + csv::format_double(want) + " not present in input");
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<DepthPanel> load_depth_panels(const RunConfig& config) {
  std::vector<DepthPanel> out;
  if (config.input_format == "grid-csv") {
    const GriddedDataset ds = ingest_grid_csv(config.input_path);
    const std::vector<double> depths = match_requested_depths(ds.depths, config.depths);
    for (double depth : depths) {
      BoxAverageResult avg = box_average(ds, depth, config.region, config.box);
      DepthPanel dp;
      dp.depth = depth;
      dp.dir = depth_dir_name(depth);
      dp.panel = std::move(avg.panel);
      dp.boxes = std::move(avg.boxes);
      dp.dropped = std::move(avg.dropped);
      out.push_back(std::move(dp));
    }
  } else if (config.input_format == "panel-csv") {
    std::map<double, SeriesPanel> panels = ingest_panel_csv(config.input_path);
    std::vector<double> available;
    for (const auto& [d, _] : panels) available.push_back(d);
    const std::vector<double> depths = match_requested_depths(available, config.depths);
    for (double depth : depths) {
      DepthPanel dp;
      dp.depth = depth;
      dp.dir = depth_dir_name(depth);
      dp.panel = panels.at(depth);
      for (const std::string& id : dp.panel.ids) {
        double la = 0.0, lo = 0.0;
        if (parse_box_id(id, la, lo))
          dp.boxes.push_back(BoxDefinition{la, lo, config.box.box_size, id});
        else
          dp.boxes.push_back(BoxDefinition{std::nan(""), std::nan(""), config.box.box_size, id});
      }
      out.push_back(std::move(dp));
    }
  } else {
    throw DataError("unknown input format: " + config.input_format);
  }
  return out;
}

// Resolve the depth directory names this run works on without re-reading the
// input: when the config requests specific depths they name the dirs; when it
// requests all, trust the manifest (its hash already pins the input bytes).
std::vector<std::string> requested_dirs(const RunConfig& config, const json& manifest) {
  std::vector<std::string> dirs;
  if (!config.depths.empty()) {
    std::vector<double> sorted = config.depths;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    for (double d : sorted) dirs.push_back(depth_dir_name(d));
    return dirs;
  }
  if (manifest.contains("depths") && manifest["depths"].is_array())
    for (const auto& d : manifest["depths"]) dirs.push_back(d.get<std::string>());
  return dirs;
}

bool decompose_current(const RunConfig& config, const json& manifest, const std::string& hash,
                       std::vector<std::string>* dirs_out) {
  if (manifest.value("decomp_hash", std::string()) != hash) return false;
  const std::vector<std::string> dirs = requested_dirs(config, manifest);
  if (dirs.empty()) return false;
  if (!manifest.contains("decompose") || !manifest["decompose"].is_object()) return false;
  const fs::path out(config.out_dir);
  for (const std::string& dir : dirs) {
    if (!manifest["decompose"].contains(dir)) return false;
    const json& entry = manifest["decompose"][dir];
    if (!entry.contains("boxes") || !entry["boxes"].is_array()) return false;
    if (!fs::exists(out / dir / "panel.csv")) return false;
    for (const auto& b : entry["boxes"])
      if (!fs::exists(out / dir / "decomp" / (b.get<std::string>() + ".csv"))) return false;
  }
  if (dirs_out) *dirs_out = dirs;
  return true;
}

// ---------------------------------------------------------------------------
// readers for the per-series component files written by run_decompose

struct DecompColumns {
  MonthStamp origin;
  Eigen::VectorXd value, trend, seasonal, cycle;
};

DecompColumns read_decomp_csv(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read " + path.string());
  std::string line;
  if (!std::getline(f, line)) throw DataError("empty file: " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string_view> header = csv::split(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[std::string(header[i])] = i;
  for (const char* need : {"year", "month", "value", "trend", "seasonal", "cycle"})
    if (!col.count(need))
      throw DataError(path.string() + ": missing column '" + std::string(need) + "'");

  std::vector<double> value, trend, seasonal, cycle;
  MonthStamp origin{};
  bool first = true;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string_view> fields = csv::split(line);
    if (fields.size() != header.size())
      throw DataError(path.string() + ": ragged row with " + std::to_string(fields.size()) +
                      " fields");
    if (first) {
      int y = 0, m = 0;
      if (!csv::parse_int(fields[col["year"]], y) || !csv::parse_int(fields[col["month"]], m))
        throw DataError(path.string() + ": bad year/month");
      origin = MonthStamp{y, m};
      first = false;
    }
    double v = 0.0;
    auto grab = [&](const char* name, std::vector<double>& dst) {
      if (!csv::parse_double(fields[col[name]], v))
        throw DataError(path.string() + ": bad number in column " + std::string(name));
      dst.push_back(v);
    };
    grab("value", value);
    grab("trend", trend);
    grab("seasonal", seasonal);
    grab("cycle", cycle);
  }
  if (first) throw DataError(path.string() + ": no data rows");
  DecompColumns out;
  out.origin = origin;
  const auto n = static_cast<Eigen::Index>(value.size());
  out.value = Eigen::Map<const Eigen::VectorXd>(value.data(), n);
  out.trend = Eigen::Map<const Eigen::VectorXd>(trend.data(), n);
  out.seasonal = Eigen::Map<const Eigen::VectorXd>(seasonal.data(), n);
  out.cycle = Eigen::Map<const Eigen::VectorXd>(cycle.data(), n);
  return out;
}

// Generic reader: header plus year,month columns, every other column numeric.
struct TableColumns {
  MonthStamp origin;
  std::vector<std::string> names;  // excluding year/month
  Eigen::MatrixXd values;          // rows = time
};

TableColumns read_timed_table(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read " + path.string());
  std::string line;
  if (!std::getline(f, line)) throw DataError("empty file: " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string_view> header = csv::split(line);
  if (header.size() < 3 || header[0] != "year" || header[1] != "month")
    throw DataError(path.string() + ": expected year,month,... header");
  TableColumns out;
  for (std::size_t i = 2; i < header.size(); ++i) out.names.emplace_back(header[i]);
  std::vector<double> flat;
  Eigen::Index rows = 0;
  bool first = true;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string_view> fields = csv::split(line);
    if (fields.size() != header.size()) throw DataError(path.string() + ": ragged row");
    if (first) {
      int y = 0, m = 0;
      if (!csv::parse_int(fields[0], y) || !csv::parse_int(fields[1], m))
        throw DataError(path.string() + ": bad year/month");
      out.origin = MonthStamp{y, m};
      first = false;
    }
    for (std::size_t i = 2; i < fields.size(); ++i) {
      double v = 0.0;
      if (!csv::parse_double(fields[i], v)) throw DataError(path.string() + ": bad number");
      flat.push_back(v);
    }
    ++rows;
  }
  const auto cols = static_cast<Eigen::Index>(out.names.size());
  out.values.resize(rows, cols);
  for (Eigen::Index t = 0; t < rows; ++t)
    for (Eigen::Index j = 0; j < cols; ++j) out.values(t, j) = flat[static_cast<std::size_t>(t * cols + j)];
  return out;
}

// ---------------------------------------------------------------------------
// shared manifest/report plumbing

void append_failures(RunReport& into, const RunReport& from) {
  into.failures.insert(into.failures.end(), from.failures.begin(), from.failures.end());
  for (const std::string& n : from.notes) into.notes.push_back(n);
  into.series_total += from.series_total;
}

std::string effective_config_text(const RunConfig& c) { return render_config(c); }

}  // namespace

// ---------------------------------------------------------------------------
// public: hashing

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= static_cast<std::uint64_t>(p[i]);
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t hash_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read file for hashing: " + path);
  std::uint64_t h = 14695981039346656037ull;
  std::vector<char> buf(1 << 16);
  while (f) {
    f.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    const std::streamsize got = f.gcount();
    if (got > 0) h = fnv1a64(buf.data(), static_cast<std::size_t>(got), h);
  }
  return h;
}

// ---------------------------------------------------------------------------
// public: config

RunConfig default_config() { return RunConfig{}; }

void apply_config_setting(RunConfig& config, const std::string& key, const std::string& value) {
  apply_setting(config, trim(key), trim(value));
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read config file: " + path);
  RunConfig config;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos)
      throw DataError(path + ":" + std::to_string(line_no) + ": expected key = value");
    try {
      apply_config_setting(config, stripped.substr(0, eq), stripped.substr(eq + 1));
    } catch (const DataError& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return config;
}

std::string render_config(const RunConfig& c) {
  std::string s;
  render_pair(s, "input", c.input_path);
  render_pair(s, "format", c.input_format);
  render_pair(s, "out", c.out_dir);
  render_pair(s, "workers", std::to_string(c.workers));
  render_pair(s, "seed", std::to_string(c.seed));
  render_pair(s, "origin.year", std::to_string(c.origin.year));
  render_pair(s, "origin.month", std::to_string(c.origin.month));
  render_pair(s, "region.lat_min", csv::format_double(c.region.lat_min));
  render_pair(s, "region.lat_max", csv::format_double(c.region.lat_max));
  render_pair(s, "region.lon_min", csv::format_double(c.region.lon_min));
  render_pair(s, "region.lon_max", csv::format_double(c.region.lon_max));
  render_pair(s, "box.size", csv::format_double(c.box.box_size));
  render_pair(s, "box.min_coverage", csv::format_double(c.box.min_coverage));
  render_pair(s, "box.min_valid_frac", csv::format_double(c.box.min_valid_frac));
  render_pair(s, "box.cos_lat_weight", bool_str(c.box.cos_lat_weight));
  render_pair(s, "depths", join_doubles(c.depths));
  render_pair(s, "structural.trend_order", std::to_string(c.structural.trend_order));
  render_pair(s, "structural.seasonal", bool_str(c.structural.seasonal_enabled));
  render_pair(s, "structural.season_length", std::to_string(c.structural.season_length));
  render_pair(s, "structural.cycle", bool_str(c.structural.cycle_enabled));
  render_pair(s, "structural.rho_min", csv::format_double(c.structural.rho_min));
  render_pair(s, "structural.rho_max", csv::format_double(c.structural.rho_max));
  render_pair(s, "structural.lambda_min", csv::format_double(c.structural.lambda_min));
  render_pair(s, "structural.lambda_max", csv::format_double(c.structural.lambda_max));
  render_pair(s, "fit.estimate_rho_lambda", bool_str(c.fit.estimate_rho_lambda));
  render_pair(s, "fit.rho0", csv::format_double(c.fit.rho0));
  render_pair(s, "fit.lambda0", csv::format_double(c.fit.lambda0));
  render_pair(s, "fit.initial_step", csv::format_double(c.fit.simplex.initial_step));
  render_pair(s, "fit.diameter_tol", csv::format_double(c.fit.simplex.diameter_tol));
  render_pair(s, "fit.max_evals", std::to_string(c.fit.simplex.max_evals));
  render_pair(s, "hankel.past", std::to_string(c.hankel.past));
  render_pair(s, "hankel.future", std::to_string(c.hankel.future));
  render_pair(s, "hankel.demean", bool_str(c.hankel.demean));
  render_pair(s, "rank.mode", c.rank.mode == RankSelection::Mode::fixed ? "fixed" : "energy");
  render_pair(s, "rank.n", std::to_string(c.rank.n));
  render_pair(s, "rank.theta", csv::format_double(c.rank.theta));
  render_pair(s, "cp.min_persist", std::to_string(c.change_points.min_persist));
  render_pair(s, "cp.slope_window", std::to_string(c.change_points.slope_window));
  render_pair(s, "cp.inflection_factor", csv::format_double(c.change_points.inflection_factor));
  render_pair(s, "recon.boxes", join_strings(c.recon_boxes));
  render_pair(s, "strat.shallow", csv::format_double(c.strat_shallow));
  render_pair(s, "strat.deep", csv::format_double(c.strat_deep));
  render_pair(s, "sim.cell_step", csv::format_double(c.sim.cell_step));
  render_pair(s, "sim.months", std::to_string(c.sim.months));
  render_pair(s, "sim.depths", join_doubles(c.sim.depths));
  render_pair(s, "sim.factor_sds", join_doubles(c.sim.factor_sds));
  render_pair(s, "sim.factor_ar", csv::format_double(c.sim.factor_ar));
  render_pair(s, "sim.noise_sd", csv::format_double(c.sim.noise_sd));
  render_pair(s, "sim.seasonal_amp", csv::format_double(c.sim.seasonal_amp));
  render_pair(s, "sim.seasonal_amp_lat_slope", csv::format_double(c.sim.seasonal_amp_lat_slope));
  render_pair(s, "sim.missing_frac", csv::format_double(c.sim.missing_frac));
  return s;
}

// ---------------------------------------------------------------------------
// public: simulate

RunReport run_simulate(const RunConfig& config) {
  const auto t0 = std::chrono::steady_clock::now();
  RunReport report;
  const SimulateConfig& sim = config.sim;
  if (config.input_path.empty()) throw DataError("simulate: input path must be set");
  if (sim.months < 1) throw DataError("simulate: months must be positive");
  if (sim.cell_step <= 0.0) throw DataError("simulate: cell step must be positive");
  if (sim.depths.empty()) throw DataError("simulate: need at least one depth");
  if (sim.factor_sds.empty() || sim.factor_sds.size() > 4)
    throw DataError("simulate: between 1 and 4 factor innovation sds supported");
  if (sim.factor_ar <= 0.0 || sim.factor_ar > 1.0)
    throw DataError("simulate: factor autoregression must be in (0, 1]");
  if (sim.missing_frac < 0.0 || sim.missing_frac >= 1.0)
    throw DataError("simulate: missing fraction must be in [0, 1)");

  GriddedDataset ds;
  ds.origin = config.origin;
  ds.n_months = sim.months;
  const Region& r = config.region;
  const auto n_lat = static_cast<Eigen::Index>(
      std::floor((r.lat_max - r.lat_min) / sim.cell_step + 1e-9));
  const auto n_lon = static_cast<Eigen::Index>(
      std::floor((normalize_lon(r.lon_max - r.lon_min + 360.0)) / sim.cell_step + 1e-9));
  if (n_lat < 1 || n_lon < 1) throw DataError("simulate: region too small for the cell step");
  for (Eigen::Index i = 0; i < n_lat; ++i)
    ds.lats.push_back(r.lat_min + sim.cell_step * (static_cast<double>(i) + 0.5));
  for (Eigen::Index i = 0; i < n_lon; ++i)
    ds.lons.push_back(normalize_lon(r.lon_min + sim.cell_step * (static_cast<double>(i) + 0.5)));
  ds.depths = sim.depths;
  std::sort(ds.depths.begin(), ds.depths.end());
  ds.depths.erase(std::unique(ds.depths.begin(), ds.depths.end()), ds.depths.end());

  const auto n_f = static_cast<Eigen::Index>(sim.factor_sds.size());
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  // factor paths: independent AR(1) recursions from zero (random walks at
  // factor_ar = 1)
  Eigen::MatrixXd factors(sim.months, n_f);
  for (Eigen::Index t = 0; t < sim.months; ++t)
    for (Eigen::Index j = 0; j < n_f; ++j) {
      const double step = sim.factor_sds[static_cast<std::size_t>(j)] * normal(rng);
      factors(t, j) = (t == 0 ? 0.0 : sim.factor_ar * factors(t - 1, j)) + step;
    }

  // smooth loading fields, mutually near-orthogonal over the grid and
  // attenuated with depth
  const double lat_span = sim.cell_step * static_cast<double>(n_lat);
  const double lon_span = sim.cell_step * static_cast<double>(n_lon);
  const double two_pi = 2.0 * 3.14159265358979323846;
  auto loading = [&](Eigen::Index j, double lat, double lon, double depth) {
    const double att = 1.0 / (1.0 + depth / 200.0);
    const double u = (normalize_lon(lon - r.lon_min + 360.0)) / lon_span;
    const double v = (lat - r.lat_min) / lat_span;
    switch (j) {
      case 0: return att;
      case 1: return att * std::sin(two_pi * u);
      case 2: return att * std::sin(two_pi * v);
      default: return att * std::sin(two_pi * u) * std::sin(two_pi * v);
    }
  };

  ds.values.assign(ds.depths.size(), Eigen::MatrixXd(sim.months, ds.n_cells()));
  for (std::size_t di = 0; di < ds.depths.size(); ++di) {
    const double depth = ds.depths[di];
    Eigen::MatrixXd& sheet = ds.values[di];
    // per-cell loading rows cached once per depth
    Eigen::MatrixXd load(ds.n_cells(), n_f);
    for (Eigen::Index ilat = 0; ilat < n_lat; ++ilat)
      for (Eigen::Index ilon = 0; ilon < n_lon; ++ilon)
        for (Eigen::Index j = 0; j < n_f; ++j)
          load(ds.cell_index(ilat, ilon), j) =
              loading(j, ds.lats[static_cast<std::size_t>(ilat)],
                      ds.lons[static_cast<std::size_t>(ilon)], depth);
    for (Eigen::Index t = 0; t < sim.months; ++t) {
      const double season_phase = std::cos(two_pi * static_cast<double>(t % 12) / 12.0);
      for (Eigen::Index ilat = 0; ilat < n_lat; ++ilat) {
        const double lat = ds.lats[static_cast<std::size_t>(ilat)];
        const double amp = sim.seasonal_amp + sim.seasonal_amp_lat_slope * (lat - r.lat_min);
        for (Eigen::Index ilon = 0; ilon < n_lon; ++ilon) {
          const Eigen::Index cell = ds.cell_index(ilat, ilon);
          double value = amp * season_phase + load.row(cell).dot(factors.row(t));
          value += sim.noise_sd * normal(rng);
          if (sim.missing_frac > 0.0 && uniform(rng) < sim.missing_frac)
            value = std::numeric_limits<double>::quiet_NaN();
          sheet(t, cell) = value;
        }
      }
    }
  }

  const fs::path input_path(config.input_path);
  if (!input_path.parent_path().empty()) fs::create_directories(input_path.parent_path());
  export_grid_csv(ds, config.input_path);

  // truth files for validating recovery
  const fs::path out(config.out_dir);
  const fs::path truth = out / "sim_truth";
  fs::create_directories(truth);
  {
    std::string body = "year,month";
    for (Eigen::Index j = 0; j < n_f; ++j) body += ",factor" + std::to_string(j + 1);
    body += '\n';
    for (Eigen::Index t = 0; t < sim.months; ++t) {
      body += month_csv(ds.origin, t);
      for (Eigen::Index j = 0; j < n_f; ++j) body += "," + csv::format_double(factors(t, j));
      body += '\n';
    }
    write_file(truth / "factors.csv", body);
  }
  for (double depth : ds.depths) {
    std::string body = "lat,lon";
    for (Eigen::Index j = 0; j < n_f; ++j) body += ",loading" + std::to_string(j + 1);
    body += '\n';
    for (Eigen::Index ilat = 0; ilat < n_lat; ++ilat)
      for (Eigen::Index ilon = 0; ilon < n_lon; ++ilon) {
        const double lat = ds.lats[static_cast<std::size_t>(ilat)];
        const double lon = ds.lons[static_cast<std::size_t>(ilon)];
        body += csv::format_double(lat) + "," + csv::format_double(lon);
        for (Eigen::Index j = 0; j < n_f; ++j)
          body += "," + csv::format_double(loading(j, lat, lon, depth));
        body += '\n';
      }
    write_file(truth / ("loadings_" + depth_dir_name(depth) + ".csv"), body);
  }
  write_file(out / "config_effective.txt", effective_config_text(config));

  report.series_total = static_cast<int>(ds.depths.size()) * static_cast<int>(ds.n_cells());
  report.notes.push_back("simulate: wrote " + config.input_path + " (" +
                         std::to_string(ds.n_cells()) + " cells x " +
                         std::to_string(sim.months) + " months x " +
                         std::to_string(ds.depths.size()) + " depths)");
  report.notes.push_back("simulate: truth files under " + (truth).string());
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

// ---------------------------------------------------------------------------
// public: decompose

RunReport run_decompose(const RunConfig& config) {
  const auto t0 = std::chrono::steady_clock::now();
  RunReport report;
  if (config.input_path.empty()) throw DataError("decompose: input path must be set");

  const std::string hash = decomp_hash(config);
  const std::vector<DepthPanel> depths = load_depth_panels(config);

  const fs::path out(config.out_dir);
  fs::create_directories(out);
  write_file(out / "config_effective.txt", effective_config_text(config));

  json manifest = json::object();
  manifest["decomp_hash"] = hash;
  {
    json dirs = json::array();
    for (const DepthPanel& dp : depths) dirs.push_back(dp.dir);
    manifest["depths"] = std::move(dirs);
  }
  manifest["decompose"] = json::object();

  std::vector<double> fit_seconds;
  for (const DepthPanel& dp : depths) {
    const fs::path depth_dir = out / dp.dir;
    fs::create_directories(depth_dir / "decomp");
    export_panel_csv(dp.panel, dp.depth, (depth_dir / "panel.csv").string());

    const auto n_series = static_cast<std::size_t>(dp.panel.width());
    std::vector<DecompositionResult> results(n_series);
    std::vector<std::string> errors(n_series);
    std::vector<double> seconds(n_series, 0.0);
    parallel_for(n_series, config.workers, [&](std::size_t i) {
      const auto f0 = std::chrono::steady_clock::now();
      try {
        const ObservationSeries obs = dp.panel.series(static_cast<Eigen::Index>(i));
        results[i] = fit(obs, config.structural, config.fit);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
      seconds[i] = std::chrono::duration<double>(std::chrono::steady_clock::now() - f0).count();
    });
    fit_seconds.insert(fit_seconds.end(), seconds.begin(), seconds.end());

    std::string params =
        "box_id,var_trend,var_seasonal,var_cycle,var_error,rho,lambda,loglik,evaluations,"
        "converged\n";
    json ok_boxes = json::array();
    json failed = json::object();
    int n_failed = 0;
    for (std::size_t i = 0; i < n_series; ++i) {
      const std::string& id = dp.panel.ids[i];
      if (!errors[i].empty()) {
        failed[id] = errors[i];
        report.failures.push_back({dp.dir, id, errors[i]});
        ++n_failed;
        continue;
      }
      const DecompositionResult& d = results[i];
      std::string body =
          "year,month,value,trend,trend_var,seasonal,seasonal_var,cycle,cycle_var,error,"
          "error_var\n";
      for (Eigen::Index t = 0; t < d.observed.size(); ++t) {
        body += month_csv(d.origin, t);
        const double y =
            d.missing[static_cast<std::size_t>(t)] ? std::numeric_limits<double>::quiet_NaN()
                                                   : d.observed[t];
        body += "," + csv::format_double(y);
        body += "," + csv::format_double(d.trend[t]);
        body += "," + csv::format_double(d.trend_var[t]);
        body += "," + csv::format_double(d.seasonal[t]);
        body += "," + csv::format_double(d.seasonal_var[t]);
        body += "," + csv::format_double(d.cycle[t]);
        body += "," + csv::format_double(d.cycle_var[t]);
        body += "," + csv::format_double(d.error[t]);
        body += "," + csv::format_double(d.error_var[t]);
        body += '\n';
      }
      write_file(depth_dir / "decomp" / (id + ".csv"), body);

      params += id;
      params += "," + csv::format_double(d.params.var_trend);
      params += "," + csv::format_double(d.params.var_seasonal);
      params += "," + csv::format_double(d.params.var_cycle);
      params += "," + csv::format_double(d.params.var_error);
      params += "," + csv::format_double(d.params.rho);
      params += "," + csv::format_double(d.params.lambda);
      params += "," + csv::format_double(d.loglik);
      params += "," + std::to_string(d.evaluations);
      params += "," + bool_str(d.converged);
      params += '\n';
      ok_boxes.push_back(id);
    }
    write_file(depth_dir / "params.csv", params);

    json entry = json::object();
    entry["boxes"] = std::move(ok_boxes);
    entry["failed"] = std::move(failed);
    {
      json dropped = json::array();
      for (const std::string& id : dp.dropped) dropped.push_back(id);
      entry["dropped"] = std::move(dropped);
    }
    manifest["decompose"][dp.dir] = std::move(entry);

    report.series_total += static_cast<int>(n_series);
    report.notes.push_back("decompose: depth " + dp.dir + ": " +
                           std::to_string(n_series - static_cast<std::size_t>(n_failed)) +
                           " series fit, " + std::to_string(n_failed) + " failed, " +
                           std::to_string(dp.dropped.size()) + " boxes dropped");
  }
  write_manifest(out / "manifest.json", manifest);

  if (!fit_seconds.empty()) {
    std::vector<double> sorted = fit_seconds;
    std::sort(sorted.begin(), sorted.end());
    const double median = sorted[sorted.size() / 2];
    char buf[64];
    std::snprintf(buf, sizeof buf, "decompose: median fit %.3fs", median);
    report.notes.emplace_back(buf);
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

// ---------------------------------------------------------------------------
// public: common trends

RunReport run_common_trends(const RunConfig& config) {
  const auto t0 = std::chrono::steady_clock::now();
  RunReport report;
  const fs::path out(config.out_dir);
  const std::string hash = decomp_hash(config);

  json manifest = read_manifest(out / "manifest.json");
  std::vector<std::string> dirs;
  if (!decompose_current(config, manifest, hash, &dirs)) {
    const RunReport nested = run_decompose(config);
    append_failures(report, nested);
    manifest = read_manifest(out / "manifest.json");
    if (!decompose_current(config, manifest, hash, &dirs))
      throw DataError("decomposition products are still stale after a rebuild");
    report.notes.push_back("common-trends: rebuilt decomposition products");
  } else {
    int carried = 0;
    for (const std::string& dir : dirs)
      carried += static_cast<int>(manifest["decompose"][dir]["failed"].size());
    std::string note = "common-trends: reusing decomposition products (hash " + hash + ")";
    if (carried > 0)
      note += "; " + std::to_string(carried) + " series failed in the cached run and are absent";
    report.notes.push_back(note);
  }

  manifest["common_trends"] = json::object();
  manifest.erase("report");

  for (const std::string& dir : dirs) {
    const fs::path depth_dir = out / dir;
    std::size_t panel_series = 0;
    Eigen::Index panel_months = 0;
    try {
      std::vector<std::string> ids;
      for (const auto& b : manifest["decompose"][dir]["boxes"])
        ids.push_back(b.get<std::string>());
      if (ids.empty()) throw DataError("no decomposed series at depth " + dir);
      panel_series = ids.size();

      // assemble the trend panel and the trend-plus-error partial residuals;
      // missing observations fall back to the smoothed trend
      MonthStamp origin{};
      Eigen::MatrixXd resid, trend;
      for (std::size_t j = 0; j < ids.size(); ++j) {
        const DecompColumns d = read_decomp_csv(depth_dir / "decomp" / (ids[j] + ".csv"));
        if (j == 0) {
          origin = d.origin;
          resid.resize(d.value.size(), static_cast<Eigen::Index>(ids.size()));
          trend.resize(d.value.size(), static_cast<Eigen::Index>(ids.size()));
        } else if (d.value.size() != resid.rows() || !(d.origin == origin)) {
          throw DataError("decomposition files disagree on the time axis at depth " + dir);
        }
        for (Eigen::Index t = 0; t < d.value.size(); ++t) {
          const double y = d.value[t];
          resid(t, static_cast<Eigen::Index>(j)) =
              std::isfinite(y) ? y - d.seasonal[t] - d.cycle[t] : d.trend[t];
          trend(t, static_cast<Eigen::Index>(j)) = d.trend[t];
        }
      }
      SeriesPanel resid_panel{origin, ids, resid};
      SeriesPanel trend_panel{origin, ids, trend};
      panel_months = resid.rows();

      const HankelMatrices hm = build_hankel(resid_panel, config.hankel);
      const Eigen::BDCSVD<Eigen::MatrixXd> svd(hm.hankel);
      const int n = select_rank(svd.singularValues(), config.rank);
      const RealizationModel model = realize(hm.hankel, hm.lag0, hm.hankel_shift, n);
      const CommonTrendsResult trends = extract_trends(model, resid_panel);

      const fs::path trends_dir = depth_dir / "trends";
      const fs::path maps_dir = depth_dir / "maps";
      const fs::path recon_dir = depth_dir / "recon";
      fs::create_directories(trends_dir);
      fs::create_directories(maps_dir);
      fs::create_directories(recon_dir);

      {
        std::string body = "year,month";
        for (int j = 1; j <= n; ++j) body += ",trend" + std::to_string(j);
        body += '\n';
        for (Eigen::Index t = 0; t < trends.states.rows(); ++t) {
          body += month_csv(origin, t);
          for (Eigen::Index j = 0; j < trends.states.cols(); ++j)
            body += "," + csv::format_double(trends.states(t, j));
          body += '\n';
        }
        write_file(trends_dir / "states.csv", body);
      }
      {
        std::string body = "trend,offset\n";
        for (Eigen::Index j = 0; j < trends.relative_offsets.size(); ++j)
          body += std::to_string(j + 1) + "," +
                  csv::format_double(trends.relative_offsets[j]) + '\n';
        write_file(trends_dir / "offsets.csv", body);
      }
      {
        std::string body = "index,singular_value\n";
        for (Eigen::Index j = 0; j < model.singular_values.size(); ++j)
          body += std::to_string(j + 1) + "," +
                  csv::format_double(model.singular_values[j]) + '\n';
        write_file(trends_dir / "singular_values.csv", body);
      }
      {
        std::string body = "box_id";
        for (int j = 1; j <= n; ++j) body += ",loading" + std::to_string(j);
        body += '\n';
        for (std::size_t i = 0; i < ids.size(); ++i) {
          body += ids[i];
          for (Eigen::Index j = 0; j < trends.loadings.cols(); ++j)
            body += "," + csv::format_double(trends.loadings(static_cast<Eigen::Index>(i), j));
          body += '\n';
        }
        write_file(trends_dir / "loadings.csv", body);
      }

      // map for trend 1: correlation against the univariate smoothed trends;
      // maps for trends >= 2: the loading column
      for (int j = 1; j <= n; ++j) {
        const Eigen::VectorXd field = (j == 1) ? correlation_map(trend_panel, trends, 1)
                                               : loading_map(trends, j);
        std::string body = "box_id,sw_lat,sw_lon,";
        body += (j == 1) ? "correlation" : "loading";
        body += '\n';
        for (std::size_t i = 0; i < ids.size(); ++i) {
          double la = std::numeric_limits<double>::quiet_NaN();
          double lo = std::numeric_limits<double>::quiet_NaN();
          parse_box_id(ids[i], la, lo);
          body += ids[i];
          body += "," + csv::format_double(la);
          body += "," + csv::format_double(lo);
          body += "," + csv::format_double(field[static_cast<Eigen::Index>(i)]);
          body += '\n';
        }
        write_file(maps_dir / ("trend" + std::to_string(j) + ".csv"), body);
      }

      // cumulative reconstructions at the featured locations
      int recon_written = 0;
      for (const std::string& want : config.recon_boxes) {
        const auto it = std::find(ids.begin(), ids.end(), want);
        if (it == ids.end()) continue;
        const auto col = static_cast<Eigen::Index>(it - ids.begin());
        Eigen::VectorXd resid_centered = resid_panel.values.col(col);
        resid_centered.array() -= resid_centered.mean();
        std::string body = "year,month,residual";
        const int levels = std::min(4, n);
        for (int j = 1; j <= levels; ++j) {
          body += ",trends1";
          for (int k = 2; k <= j; ++k) body += "_" + std::to_string(k);
        }
        body += '\n';
        std::vector<Eigen::VectorXd> recon(static_cast<std::size_t>(levels));
        for (int j = 1; j <= levels; ++j) {
          std::vector<int> subset;
          for (int k = 1; k <= j; ++k) subset.push_back(k);
          recon[static_cast<std::size_t>(j - 1)] = reconstruct(trends, want, subset).values;
        }
        for (Eigen::Index t = 0; t < resid_centered.size(); ++t) {
          body += month_csv(origin, t);
          body += "," + csv::format_double(resid_centered[t]);
          for (int j = 0; j < levels; ++j)
            body += "," + csv::format_double(recon[static_cast<std::size_t>(j)][t]);
          body += '\n';
        }
        write_file(recon_dir / (want + ".csv"), body);
        ++recon_written;
      }

      json entry = json::object();
      entry["rank"] = n;
      entry["series"] = static_cast<int>(ids.size());
      entry["riccati_iterations"] = model.riccati.iterations;
      entry["riccati_regularized"] = model.riccati.regularized;
      entry["projected_eigenvalues"] = model.projected_eigenvalues;
      entry["reconstructions"] = recon_written;
      manifest["common_trends"][dir] = std::move(entry);

      std::string note = "common-trends: depth " + dir + ": rank " + std::to_string(n) +
                         " from " + std::to_string(ids.size()) + " series";
      if (model.riccati.regularized) note += " [innovation covariance regularized]";
      if (model.projected_eigenvalues > 0)
        note += " [" + std::to_string(model.projected_eigenvalues) +
                " eigenvalue(s) projected into the unit circle]";
      report.notes.push_back(note);
      ++report.series_total;
    } catch (const NumericalError& e) {
      report.failures.push_back({dir, "common-trends", e.what()});
      if (panel_months > 0 && panel_series * 5 >= static_cast<std::size_t>(panel_months))
        report.notes.push_back(
            "common-trends: depth " + dir + ": identification ran on " +
            std::to_string(panel_series) + " series over only " + std::to_string(panel_months) +
            " months; at this width-to-length ratio the sample covariance sequence is usually "
            "inconsistent with every positive-definite innovation model, so the gain solve "
            "fails. Coarser boxes (box.size), fewer series, or a longer record make the "
            "identification well-posed.");
    } catch (const std::exception& e) {
      report.failures.push_back({dir, "common-trends", e.what()});
    }
  }

  write_manifest(out / "manifest.json", manifest);
  write_file(out / "config_effective.txt", effective_config_text(config));
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

// ---------------------------------------------------------------------------
// public: report

RunReport run_report(const RunConfig& config) {
  const auto t0 = std::chrono::steady_clock::now();
  RunReport report;
  const fs::path out(config.out_dir);
  const std::string hash = decomp_hash(config);

  json manifest = read_manifest(out / "manifest.json");
  std::vector<std::string> dirs;
  auto trends_current = [&](const json& m, std::vector<std::string>* d) {
    if (!decompose_current(config, m, hash, d)) return false;
    if (!m.contains("common_trends") || !m["common_trends"].is_object()) return false;
    for (const std::string& dir : *d) {
      if (!m["common_trends"].contains(dir)) return false;
      if (!fs::exists(out / dir / "trends" / "states.csv")) return false;
    }
    return true;
  };
  if (!trends_current(manifest, &dirs)) {
    const RunReport nested = run_common_trends(config);
    append_failures(report, nested);
    manifest = read_manifest(out / "manifest.json");
    if (!trends_current(manifest, &dirs))
      throw DataError("common-trend products are still stale after a rebuild");
    report.notes.push_back("report: rebuilt common-trend products");
  } else {
    report.notes.push_back("report: reusing upstream products (hash " + hash + ")");
  }

  const fs::path reports_dir = out / "reports";
  fs::create_directories(reports_dir);

  // ---- change points: every box trend, then every common trend, per depth
  std::string cp_body = "series_id,depth_m,index,year,month,type,slope_before,slope_after\n";
  int cp_rows = 0;
  auto append_cp = [&](const std::string& series_id, const std::string& depth,
                       const ObservationSeries& series) {
    const std::vector<ChangePoint> points =
        detect_change_points(series, config.change_points);
    for (const ChangePoint& p : points) {
      cp_body += series_id;
      cp_body += "," + depth;
      cp_body += "," + std::to_string(p.index);
      cp_body += "," + std::to_string(p.when.year);
      cp_body += "," + std::to_string(p.when.month);
      cp_body += (p.type == ChangePointType::sign_change) ? ",sign_change" : ",inflection";
      cp_body += "," + csv::format_double(p.slope_before);
      cp_body += "," + csv::format_double(p.slope_after);
      cp_body += '\n';
      ++cp_rows;
    }
  };

  for (const std::string& dir : dirs) {
    const fs::path depth_dir = out / dir;
    try {
      for (const auto& b : manifest["decompose"][dir]["boxes"]) {
        const std::string id = b.get<std::string>();
        const DecompColumns d = read_decomp_csv(depth_dir / "decomp" / (id + ".csv"));
        ObservationSeries trend_series;
        trend_series.id = id;
        trend_series.origin = d.origin;
        trend_series.values = d.trend;
        append_cp(id, dir, trend_series);
      }
      const TableColumns states = read_timed_table(depth_dir / "trends" / "states.csv");
      for (std::size_t j = 0; j < states.names.size(); ++j) {
        ObservationSeries s;
        s.id = states.names[j];
        s.origin = states.origin;
        s.values = states.values.col(static_cast<Eigen::Index>(j));
        append_cp(states.names[j], dir, s);
      }
      ++report.series_total;
    } catch (const std::exception& e) {
      report.failures.push_back({dir, "report", e.what()});
    }
  }
  write_file(reports_dir / "change_points.csv", cp_body);

  // ---- stratification: shallow minus deep reconstruction at the featured
  // locations, using the fullest cumulative trend subset available
  std::string strat_body = "box_id,shallow_m,deep_m,year,month,value\n";
  int strat_rows = 0;
  std::vector<std::string> strat_boxes;
  const std::string shallow_dir = depth_dir_name(config.strat_shallow);
  const std::string deep_dir = depth_dir_name(config.strat_deep);
  const bool have_shallow = std::find(dirs.begin(), dirs.end(), shallow_dir) != dirs.end();
  const bool have_deep = std::find(dirs.begin(), dirs.end(), deep_dir) != dirs.end();
  if (have_shallow && have_deep) {
    for (const std::string& id : config.recon_boxes) {
      const fs::path shallow_path = out / shallow_dir / "recon" / (id + ".csv");
      const fs::path deep_path = out / deep_dir / "recon" / (id + ".csv");
      if (!fs::exists(shallow_path) || !fs::exists(deep_path)) {
        report.notes.push_back("report: stratification skipped for " + id +
                               " (missing reconstruction at one depth)");
        continue;
      }
      try {
        const TableColumns shallow = read_timed_table(shallow_path);
        const TableColumns deep = read_timed_table(deep_path);
        ObservationSeries a, b;
        a.id = b.id = id;
        a.origin = shallow.origin;
        b.origin = deep.origin;
        a.values = shallow.values.col(shallow.values.cols() - 1);
        b.values = deep.values.col(deep.values.cols() - 1);
        const ObservationSeries diff = stratification(a, b);
        for (Eigen::Index t = 0; t < diff.values.size(); ++t) {
          strat_body += id;
          strat_body += "," + csv::format_double(config.strat_shallow);
          strat_body += "," + csv::format_double(config.strat_deep);
          strat_body += "," + month_csv(diff.origin, t);
          strat_body += "," + csv::format_double(diff.values[t]);
          strat_body += '\n';
          ++strat_rows;
        }
        strat_boxes.push_back(id);
      } catch (const std::exception& e) {
        report.failures.push_back({"", id, std::string("stratification: ") + e.what()});
      }
    }
  } else {
    report.notes.push_back("report: stratification skipped (depths " + shallow_dir + " and " +
                           deep_dir + " not both in this run)");
  }
  write_file(reports_dir / "stratification.csv", strat_body);

  json entry = json::object();
  entry["change_point_rows"] = cp_rows;
  {
    json arr = json::array();
    for (const std::string& id : strat_boxes) arr.push_back(id);
    entry["stratification_boxes"] = std::move(arr);
  }
  manifest["report"] = std::move(entry);
  write_manifest(out / "manifest.json", manifest);
  write_file(out / "config_effective.txt", effective_config_text(config));

  report.notes.push_back("report: " + std::to_string(cp_rows) + " change-point rows, " +
                         std::to_string(strat_rows) + " stratification rows");
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace trendkit
