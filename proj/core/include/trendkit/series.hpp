#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace trendkit {

/// Calendar month used as a time axis label.  Comparisons and offsets treat
/// the pair as a single month counter, so `{1958, 13}` is not a valid stamp;
/// construction through `advanced()` always yields `month` in 1..12.
struct MonthStamp {
  int year = 1958;
  int month = 1;  // 1..12

  [[nodiscard]] std::int64_t serial() const {
    return static_cast<std::int64_t>(year) * 12 + (month - 1);
  }
  [[nodiscard]] MonthStamp advanced(std::int64_t steps) const {
    const std::int64_t s = serial() + steps;
    const std::int64_t y = s >= 0 ? s / 12 : -((-s + 11) / 12);
    return MonthStamp{static_cast<int>(y), static_cast<int>(s - y * 12) + 1};
  }
  friend bool operator==(const MonthStamp&, const MonthStamp&) = default;
};

/// Months from `a` to `b` (positive when `b` is later).
inline std::int64_t months_between(const MonthStamp& a, const MonthStamp& b) {
  return b.serial() - a.serial();
}

/// One univariate monthly series.  `values[t]` pairs with
/// `origin.advanced(t)`; missing entries are flagged in `missing` and the
/// stored value at a missing step is ignored (conventionally NaN).
struct ObservationSeries {
  std::string id;
  MonthStamp origin;
  Eigen::VectorXd values;
  std::vector<std::uint8_t> missing;  // empty means "none missing"

  [[nodiscard]] Eigen::Index length() const { return values.size(); }
  [[nodiscard]] bool is_missing(Eigen::Index t) const {
    if (t < static_cast<Eigen::Index>(missing.size()) && missing[t]) return true;
    return !std::isfinite(values[t]);
  }
  [[nodiscard]] Eigen::Index observed_count() const {
    Eigen::Index n = 0;
    for (Eigen::Index t = 0; t < length(); ++t)
      if (!is_missing(t)) ++n;
    return n;
  }
};

/// A panel of co-registered monthly series (shared origin and length).
/// Column j of `values` is the series `ids[j]`; NaN marks a missing entry.
struct SeriesPanel {
  MonthStamp origin;
  std::vector<std::string> ids;
  Eigen::MatrixXd values;  // time x series

  [[nodiscard]] Eigen::Index length() const { return values.rows(); }
  [[nodiscard]] Eigen::Index width() const { return values.cols(); }

  [[nodiscard]] ObservationSeries series(Eigen::Index j) const {
    ObservationSeries s;
    s.id = ids[static_cast<std::size_t>(j)];
    s.origin = origin;
    s.values = values.col(j);
    return s;
  }
};

}  // namespace trendkit
