#include "trendkit/grid.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numbers>
#include <set>
#include <stdexcept>

#include "csv.hpp"
#include "trendkit/errors.hpp"

namespace trendkit {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kCoordTol = 1e-6;

std::string month_name(const MonthStamp& m) {
  std::string s = std::to_string(m.year) + "-";
  if (m.month < 10) s += "0";
  return s + std::to_string(m.month);
}

[[noreturn]] void line_error(const std::string& path, std::size_t line,
                             const std::string& what) {
  throw DataError(path + ":" + std::to_string(line) + ": " + what);
}

// indices of sorted coords falling in [lo, hi)
std::pair<std::size_t, std::size_t> coord_range(const std::vector<double>& coords,
                                                double lo, double hi) {
  const auto begin = std::lower_bound(coords.begin(), coords.end(), lo);
  const auto end = std::lower_bound(coords.begin(), coords.end(), hi);
  return {static_cast<std::size_t>(begin - coords.begin()),
          static_cast<std::size_t>(end - coords.begin())};
}

void check_regular_axis(const std::vector<double>& coords, const char* name) {
  if (coords.size() < 2) return;
  double step = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < coords.size(); ++i)
    step = std::min(step, coords[i] - coords[i - 1]);
  if (!(step > 0.0)) throw DataError(std::string(name) + " axis is not strictly increasing");
  for (std::size_t i = 1; i < coords.size(); ++i) {
    const double offset = (coords[i] - coords[0]) / step;
    if (std::abs(offset - std::round(offset)) > kCoordTol)
      throw DataError(std::string(name) + " axis is irregular near " +
                      csv::format_double(coords[i]) + " (step " + csv::format_double(step) +
                      ")");
  }
}

std::string coord_part(double v, char pos, char neg) {
  const char hemi = v < 0.0 ? neg : pos;
  return csv::format_double(std::abs(v)) + hemi;
}

}  // namespace

double normalize_lon(double lon) {
  double x = std::fmod(lon, 360.0);
  if (x < 0.0) x += 360.0;
  // collapse -0.0 and values that rounded onto 360
  if (x >= 360.0 || x == 0.0) x = 0.0;
  return x;
}

std::string box_id(double sw_lat, double sw_lon) {
  return coord_part(sw_lat, 'N', 'S') + "_" + coord_part(normalize_lon(sw_lon), 'E', 'E');
}

Eigen::Index GriddedDataset::depth_index(double depth) const {
  for (std::size_t i = 0; i < depths.size(); ++i)
    if (std::abs(depths[i] - depth) <= kCoordTol) return static_cast<Eigen::Index>(i);
  throw DataError("unknown depth " + csv::format_double(depth) + " m");
}

GriddedDataset ingest_grid_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");

  struct Row {
    double lat, lon, depth, value;
    std::int64_t month_serial;
  };
  std::vector<Row> rows;
  std::set<double> lat_set, lon_set, depth_set;
  std::int64_t serial_min = std::numeric_limits<std::int64_t>::max();
  std::int64_t serial_max = std::numeric_limits<std::int64_t>::min();

  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw DataError(path + ": empty file");
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "lat,lon,depth_m,year,month,value")
    line_error(path, lineno, "expected header 'lat,lon,depth_m,year,month,value'");

  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = csv::split(line);
    if (fields.size() != 6) line_error(path, lineno, "expected 6 fields");
    Row r{};
    int year = 0, month = 0;
    if (!csv::parse_double(fields[0], r.lat) || std::isnan(r.lat))
      line_error(path, lineno, "bad latitude");
    if (!csv::parse_double(fields[1], r.lon) || std::isnan(r.lon))
      line_error(path, lineno, "bad longitude");
    if (!csv::parse_double(fields[2], r.depth) || std::isnan(r.depth))
      line_error(path, lineno, "bad depth");
    if (!csv::parse_int(fields[3], year)) line_error(path, lineno, "bad year");
    if (!csv::parse_int(fields[4], month) || month < 1 || month > 12)
      line_error(path, lineno, "bad month");
    if (!csv::parse_double(fields[5], r.value)) line_error(path, lineno, "bad value");
    if (r.lat < -90.0 || r.lat > 90.0) line_error(path, lineno, "latitude out of range");
    r.lon = normalize_lon(r.lon);
    r.month_serial = MonthStamp{year, month}.serial();
    rows.push_back(r);
    lat_set.insert(r.lat);
    lon_set.insert(r.lon);
    depth_set.insert(r.depth);
    serial_min = std::min(serial_min, r.month_serial);
    serial_max = std::max(serial_max, r.month_serial);
  }
  if (rows.empty()) throw DataError(path + ": no data rows");

  GriddedDataset ds;
  ds.lats.assign(lat_set.begin(), lat_set.end());
  ds.lons.assign(lon_set.begin(), lon_set.end());
  ds.depths.assign(depth_set.begin(), depth_set.end());
  check_regular_axis(ds.lats, "latitude");
  check_regular_axis(ds.lons, "longitude");
  ds.n_months = static_cast<Eigen::Index>(serial_max - serial_min + 1);
  const std::int64_t y0 = serial_min >= 0 ? serial_min / 12 : -((-serial_min + 11) / 12);
  ds.origin = MonthStamp{static_cast<int>(y0), static_cast<int>(serial_min - y0 * 12) + 1};

  const Eigen::Index cells = ds.n_cells();
  ds.values.assign(ds.depths.size(),
                   Eigen::MatrixXd::Constant(ds.n_months, cells, kNaN));
  std::vector<std::vector<std::uint8_t>> seen(
      ds.depths.size(),
      std::vector<std::uint8_t>(static_cast<std::size_t>(ds.n_months * cells), 0));
  std::vector<std::int64_t> month_rows(static_cast<std::size_t>(ds.n_months), 0);

  auto axis_index = [](const std::vector<double>& coords, double v) {
    const auto it = std::lower_bound(coords.begin(), coords.end(), v);
    return static_cast<Eigen::Index>(it - coords.begin());
  };

  std::size_t row_no = 1;  // header consumed one line
  for (const Row& r : rows) {
    ++row_no;
    const Eigen::Index ilat = axis_index(ds.lats, r.lat);
    const Eigen::Index ilon = axis_index(ds.lons, r.lon);
    const Eigen::Index id = static_cast<Eigen::Index>(
        std::lower_bound(ds.depths.begin(), ds.depths.end(), r.depth) - ds.depths.begin());
    const Eigen::Index t = static_cast<Eigen::Index>(r.month_serial - serial_min);
    const Eigen::Index cell = ds.cell_index(ilat, ilon);
    auto& mark = seen[static_cast<std::size_t>(id)][static_cast<std::size_t>(t * cells + cell)];
    if (mark)
      throw DataError(path + ": duplicate cell (lat " + csv::format_double(r.lat) + ", lon " +
                      csv::format_double(r.lon) + ", depth " + csv::format_double(r.depth) +
                      ", month " + month_name(ds.origin.advanced(t)) + ")");
    mark = 1;
    ds.values[static_cast<std::size_t>(id)](t, cell) = r.value;
    ++month_rows[static_cast<std::size_t>(t)];
  }

  for (Eigen::Index t = 0; t < ds.n_months; ++t)
    if (month_rows[static_cast<std::size_t>(t)] == 0)
      throw DataError(path + ": time axis has a gap at " + month_name(ds.origin.advanced(t)));

  return ds;
}

void export_grid_csv(const GriddedDataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "lat,lon,depth_m,year,month,value\n";
  for (std::size_t d = 0; d < ds.depths.size(); ++d) {
    const std::string depth_str = csv::format_double(ds.depths[d]);
    for (Eigen::Index t = 0; t < ds.n_months; ++t) {
      const MonthStamp stamp = ds.origin.advanced(t);
      for (std::size_t ilat = 0; ilat < ds.lats.size(); ++ilat) {
        for (std::size_t ilon = 0; ilon < ds.lons.size(); ++ilon) {
          const Eigen::Index cell =
              ds.cell_index(static_cast<Eigen::Index>(ilat), static_cast<Eigen::Index>(ilon));
          out << csv::format_double(ds.lats[ilat]) << ',' << csv::format_double(ds.lons[ilon])
              << ',' << depth_str << ',' << stamp.year << ',' << stamp.month << ','
              << csv::format_double(ds.values[d](t, cell)) << '\n';
        }
      }
    }
  }
  if (!out) throw DataError("write failed for '" + path + "'");
}

BoxAverageResult box_average(const GriddedDataset& ds, double depth, const Region& region,
                             const BoxAverageOptions& opts) {
  if (!(opts.box_size > 0.0)) throw std::invalid_argument("box_size must be positive");
  const double lat_span = region.lat_max - region.lat_min;
  const double lon_lo = normalize_lon(region.lon_min);
  double lon_hi = normalize_lon(region.lon_max);
  if (lon_hi <= lon_lo) lon_hi += 360.0;
  const double lon_span = lon_hi - lon_lo;
  auto aligned = [&](double span) {
    const double k = span / opts.box_size;
    return span > 0.0 && std::abs(k - std::round(k)) < kCoordTol;
  };
  if (!aligned(lat_span) || !aligned(lon_span))
    throw std::invalid_argument("region is not aligned to the box size");

  const Eigen::Index d = ds.depth_index(depth);
  const Eigen::MatrixXd& vals = ds.values[static_cast<std::size_t>(d)];
  const Eigen::Index tau = ds.n_months;

  // a cell is "ocean" at this depth if it ever reports a value
  std::vector<std::uint8_t> live(static_cast<std::size_t>(ds.n_cells()), 0);
  for (Eigen::Index cell = 0; cell < ds.n_cells(); ++cell)
    for (Eigen::Index t = 0; t < tau; ++t)
      if (std::isfinite(vals(t, cell))) {
        live[static_cast<std::size_t>(cell)] = 1;
        break;
      }

  const int nlat = static_cast<int>(std::round(lat_span / opts.box_size));
  const int nlon = static_cast<int>(std::round(lon_span / opts.box_size));

  BoxAverageResult result;
  result.panel.origin = ds.origin;
  std::vector<Eigen::VectorXd> columns;

  const double min_months =
      opts.min_valid_frac * static_cast<double>(tau);

  for (int bi = 0; bi < nlat; ++bi) {
    const double sw_lat = region.lat_min + bi * opts.box_size;
    const auto [la, lb] = coord_range(ds.lats, sw_lat - kCoordTol,
                                      sw_lat + opts.box_size - kCoordTol);
    for (int bj = 0; bj < nlon; ++bj) {
      const double sw_lon = normalize_lon(lon_lo + bj * opts.box_size);
      const auto [oa, ob] = coord_range(ds.lons, sw_lon - kCoordTol,
                                        sw_lon + opts.box_size - kCoordTol);

      std::vector<std::pair<Eigen::Index, double>> members;  // (cell, weight)
      double live_weight = 0.0;
      for (std::size_t ilat = la; ilat < lb; ++ilat) {
        const double w = opts.cos_lat_weight
                             ? std::cos(ds.lats[ilat] * std::numbers::pi / 180.0)
                             : 1.0;
        for (std::size_t ilon = oa; ilon < ob; ++ilon) {
          const Eigen::Index cell = ds.cell_index(static_cast<Eigen::Index>(ilat),
                                                  static_cast<Eigen::Index>(ilon));
          if (!live[static_cast<std::size_t>(cell)]) continue;
          members.emplace_back(cell, w);
          live_weight += w;
        }
      }

      const std::string id = box_id(sw_lat, sw_lon);
      if (members.empty()) {
        result.dropped.push_back(id);
        continue;
      }

      Eigen::VectorXd series(tau);
      Eigen::Index valid = 0;
      for (Eigen::Index t = 0; t < tau; ++t) {
        double acc = 0.0, accw = 0.0;
        for (const auto& [cell, w] : members) {
          const double v = vals(t, cell);
          if (std::isfinite(v)) {
            acc += w * v;
            accw += w;
          }
        }
        if (accw >= opts.min_coverage * live_weight && accw > 0.0) {
          series[t] = acc / accw;
          ++valid;
        } else {
          series[t] = kNaN;
        }
      }

      if (static_cast<double>(valid) < min_months) {
        result.dropped.push_back(id);
        continue;
      }
      result.panel.ids.push_back(id);
      result.boxes.push_back(BoxDefinition{sw_lat, sw_lon, opts.box_size, id});
      columns.push_back(std::move(series));
    }
  }

  result.panel.values.resize(tau, static_cast<Eigen::Index>(columns.size()));
  for (std::size_t j = 0; j < columns.size(); ++j)
    result.panel.values.col(static_cast<Eigen::Index>(j)) = columns[j];
  return result;
}

void export_panel_csv(const SeriesPanel& panel, double depth, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "box_id,depth_m,year,month,value\n";
  const std::string depth_str = csv::format_double(depth);
  for (Eigen::Index j = 0; j < panel.width(); ++j) {
    for (Eigen::Index t = 0; t < panel.length(); ++t) {
      const MonthStamp stamp = panel.origin.advanced(t);
      out << panel.ids[static_cast<std::size_t>(j)] << ',' << depth_str << ',' << stamp.year
          << ',' << stamp.month << ',' << csv::format_double(panel.values(t, j)) << '\n';
    }
  }
  if (!out) throw DataError("write failed for '" + path + "'");
}

std::map<double, SeriesPanel> ingest_panel_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");

  struct Row {
    std::string id;
    double depth, value;
    std::int64_t serial;
  };
  std::vector<Row> rows;
  std::int64_t serial_min = std::numeric_limits<std::int64_t>::max();
  std::int64_t serial_max = std::numeric_limits<std::int64_t>::min();

  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw DataError(path + ": empty file");
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "box_id,depth_m,year,month,value")
    line_error(path, lineno, "expected header 'box_id,depth_m,year,month,value'");

  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = csv::split(line);
    if (fields.size() != 5) line_error(path, lineno, "expected 5 fields");
    Row r;
    int year = 0, month = 0;
    r.id = std::string(fields[0]);
    if (r.id.empty()) line_error(path, lineno, "empty box id");
    if (!csv::parse_double(fields[1], r.depth) || std::isnan(r.depth))
      line_error(path, lineno, "bad depth");
    if (!csv::parse_int(fields[2], year)) line_error(path, lineno, "bad year");
    if (!csv::parse_int(fields[3], month) || month < 1 || month > 12)
      line_error(path, lineno, "bad month");
    if (!csv::parse_double(fields[4], r.value)) line_error(path, lineno, "bad value");
    r.serial = MonthStamp{year, month}.serial();
    serial_min = std::min(serial_min, r.serial);
    serial_max = std::max(serial_max, r.serial);
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw DataError(path + ": no data rows");

  const Eigen::Index tau = static_cast<Eigen::Index>(serial_max - serial_min + 1);
  const std::int64_t y0 = serial_min >= 0 ? serial_min / 12 : -((-serial_min + 11) / 12);
  const MonthStamp origin{static_cast<int>(y0), static_cast<int>(serial_min - y0 * 12) + 1};

  // first-seen order of (depth, id) pairs
  std::map<double, SeriesPanel> out;
  std::map<double, std::map<std::string, Eigen::Index>> index;
  for (const Row& r : rows) {
    auto& panel = out[r.depth];
    auto& ids = index[r.depth];
    if (panel.ids.empty()) {
      panel.origin = origin;
      panel.values.resize(tau, 0);
    }
    if (ids.find(r.id) == ids.end()) {
      ids[r.id] = static_cast<Eigen::Index>(panel.ids.size());
      panel.ids.push_back(r.id);
      panel.values.conservativeResize(tau, panel.values.cols() + 1);
      panel.values.col(panel.values.cols() - 1).setConstant(kNaN);
    }
  }
  std::map<double, std::vector<std::uint8_t>> seen;
  for (auto& [depth, panel] : out)
    seen[depth].assign(static_cast<std::size_t>(tau * panel.width()), 0);
  for (const Row& r : rows) {
    auto& panel = out[r.depth];
    const Eigen::Index j = index[r.depth][r.id];
    const Eigen::Index t = static_cast<Eigen::Index>(r.serial - serial_min);
    auto& mark = seen[r.depth][static_cast<std::size_t>(t * panel.width() + j)];
    if (mark)
      throw DataError(path + ": duplicate entry for " + r.id + " at " +
                      month_name(origin.advanced(t)));
    mark = 1;
    panel.values(t, j) = r.value;
  }
  for (const auto& [depth, panel] : out) {
    const auto& marks = seen[depth];
    for (Eigen::Index t = 0; t < tau; ++t)
      for (Eigen::Index j = 0; j < panel.width(); ++j)
        if (!marks[static_cast<std::size_t>(t * panel.width() + j)])
          throw DataError(path + ": series " + panel.ids[static_cast<std::size_t>(j)] +
                          " has no row for " + month_name(origin.advanced(t)) +
                          " (panels must be rectangular)");
  }
  return out;
}

}  // namespace trendkit
