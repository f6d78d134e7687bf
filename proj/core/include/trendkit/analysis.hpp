#pragma once

#include <vector>

#include "trendkit/series.hpp"

namespace trendkit {

struct ChangePointOptions {
  int min_persist = 24;        // months a new slope regime must hold
  int slope_window = 12;       // span of the centered OLS slope window
  double inflection_factor = 3.0;  // |slope| ratio declaring an inflection
};

enum class ChangePointType { sign_change, inflection };

struct ChangePoint {
  Eigen::Index index = 0;  // 0-based step within the series
  MonthStamp when;
  ChangePointType type = ChangePointType::sign_change;
  double slope_before = 0.0;  // mean slope over the preceding min_persist months
  double slope_after = 0.0;   // mean slope over the following min_persist months
  int persistence = 0;        // months the new regime's direction holds on
};

/// Slope-regime changes of a smoothed trend: sign changes and persistent
/// inflections (|slope| ratio >= inflection_factor).  Candidates closer than
/// min_persist collapse to the trend extremum.  The input must be complete
/// (smoothed products have no gaps).
std::vector<ChangePoint> detect_change_points(const ObservationSeries& trend,
                                              const ChangePointOptions& options = {});

/// Shift so the minimum (over non-missing steps) is exactly zero.
ObservationSeries relative_scale(const ObservationSeries& series);

/// Shift so the mean (over non-missing steps) is zero.
ObservationSeries standardize(const ObservationSeries& series);

/// Pointwise shallow minus deep; lengths and origins must agree.
ObservationSeries stratification(const ObservationSeries& shallow,
                                 const ObservationSeries& deep);

}  // namespace trendkit
