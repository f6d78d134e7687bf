#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "trendkit/series.hpp"

namespace trendkit {

/// Gridded monthly dataset on a regular lat/lon lattice of cell centers.
/// `values[d]` is months x cells with NaN for missing; the cell index is
/// ilat * lons.size() + ilon.
struct GriddedDataset {
  std::vector<double> lats;    // ascending cell centers, degrees north
  std::vector<double> lons;    // ascending cell centers, degrees east in [0, 360)
  std::vector<double> depths;  // ascending, meters
  MonthStamp origin;
  Eigen::Index n_months = 0;
  std::vector<Eigen::MatrixXd> values;

  [[nodiscard]] Eigen::Index n_cells() const {
    return static_cast<Eigen::Index>(lats.size() * lons.size());
  }
  [[nodiscard]] Eigen::Index cell_index(Eigen::Index ilat, Eigen::Index ilon) const {
    return ilat * static_cast<Eigen::Index>(lons.size()) + ilon;
  }
  /// Index of an exact depth value; throws DataError when absent.
  [[nodiscard]] Eigen::Index depth_index(double depth) const;
};

struct Region {
  double lat_min = 20.0;
  double lat_max = 65.0;
  double lon_min = 110.0;
  double lon_max = 250.0;
};

struct BoxDefinition {
  double sw_lat = 0.0;
  double sw_lon = 0.0;
  double size = 5.0;
  std::string id;  // "latN_lonE" from the southwest corner
};

struct BoxAverageOptions {
  double box_size = 5.0;
  // fraction of a box's ocean cells that must report a value for the
  // box-month to count
  double min_coverage = 0.5;
  // boxes observing fewer than this fraction of months are dropped
  double min_valid_frac = 0.5;
  bool cos_lat_weight = false;
};

struct BoxAverageResult {
  SeriesPanel panel;
  std::vector<BoxDefinition> boxes;     // aligned with panel.ids
  std::vector<std::string> dropped;     // box ids removed for sparse data
};

/// "50N_215E"-style id from a southwest corner (degrees; longitude is
/// normalized east).
std::string box_id(double sw_lat, double sw_lon);

/// Normalize a longitude into [0, 360).
double normalize_lon(double lon);

/// Read `lat,lon,depth_m,year,month,value` (missing = empty value field).
/// Rows may arrive in any order; the lattice and time axis are inferred and
/// validated.  Malformed content raises DataError with the line number.
GriddedDataset ingest_grid_csv(const std::string& path);

/// Write the full dataset back out (every cell x month x depth row, missing
/// as empty).  export -> ingest round-trips losslessly.
void export_grid_csv(const GriddedDataset& ds, const std::string& path);

/// Average one depth level into boxes over the region.  Boxes are emitted in
/// (lat, lon) ascending order of their southwest corners.
BoxAverageResult box_average(const GriddedDataset& ds, double depth, const Region& region,
                             const BoxAverageOptions& opts = {});

/// Read/write `box_id,depth_m,year,month,value` panels, one SeriesPanel per
/// depth.  Export preserves series order; ingest keeps first-seen order.
void export_panel_csv(const SeriesPanel& panel, double depth, const std::string& path);
std::map<double, SeriesPanel> ingest_panel_csv(const std::string& path);

}  // namespace trendkit
