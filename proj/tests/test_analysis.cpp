#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "trendkit/analysis.hpp"
#include "trendkit/errors.hpp"

using namespace trendkit;
using Eigen::VectorXd;

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

ObservationSeries series_from(const VectorXd& v) {
  ObservationSeries s;
  s.id = "t";
  s.origin = {1958, 1};
  s.values = v;
  return s;
}

// piecewise-linear trend: slope s1 until the apex, s2 afterwards
VectorXd hinge(Eigen::Index tau, Eigen::Index apex, double s1, double s2) {
  VectorXd v(tau);
  for (Eigen::Index t = 0; t < tau; ++t)
    v[t] = (t < apex) ? s1 * static_cast<double>(t)
                      : s1 * static_cast<double>(apex) + s2 * static_cast<double>(t - apex);
  return v;
}
}  // namespace

TEST_CASE("a clean slope reversal yields one sign change at the apex") {
  const Eigen::Index apex = 150;
  const ObservationSeries trend = series_from(hinge(300, apex, 0.02, -0.02));
  const auto points = detect_change_points(trend);
  REQUIRE(points.size() == 1);
  const ChangePoint& p = points[0];
  CHECK(p.type == ChangePointType::sign_change);
  CHECK(std::abs(static_cast<double>(p.index - apex)) <= 6.0);  // within the slope window
  CHECK(p.slope_before > 0.0);
  CHECK(p.slope_after < 0.0);
  CHECK(p.persistence >= 24);
  CHECK(p.when == trend.origin.advanced(p.index));

  // the mirrored series finds the mirrored reversal
  ObservationSeries down = trend;
  down.values = -down.values;
  const auto mirrored = detect_change_points(down);
  REQUIRE(mirrored.size() == 1);
  CHECK(mirrored[0].slope_before < 0.0);
  CHECK(mirrored[0].slope_after > 0.0);
}

TEST_CASE("monotone trends yield zero detections") {
  for (double slope : {0.01, -0.004, 0.3}) {
    VectorXd v(300);
    for (Eigen::Index t = 0; t < 300; ++t) v[t] = slope * static_cast<double>(t);
    CHECK(detect_change_points(series_from(v)).empty());
  }
  // gentle curvature below the inflection factor stays quiet too
  VectorXd soft(300);
  for (Eigen::Index t = 0; t < 300; ++t) {
    const double s = (t < 150) ? 0.010 : 0.014;  // 1.4x, below the 3x factor
    soft[t] = (t < 150) ? s * static_cast<double>(t)
                        : 0.010 * 150.0 + s * static_cast<double>(t - 150);
  }
  CHECK(detect_change_points(series_from(soft)).empty());
}

TEST_CASE("a persistent slope jump of the same sign is an inflection") {
  const ObservationSeries trend = series_from(hinge(300, 150, 0.002, 0.02));  // 10x speedup
  const auto points = detect_change_points(trend);
  REQUIRE(points.size() == 1);
  CHECK(points[0].type == ChangePointType::inflection);
  CHECK(std::abs(static_cast<double>(points[0].index - 150)) <= 6.0);
  CHECK(points[0].slope_before > 0.0);
  CHECK(points[0].slope_after > 0.0);
  CHECK(std::abs(points[0].slope_after) >= 3.0 * std::abs(points[0].slope_before));

  // slowdowns count as well
  const ObservationSeries slow = series_from(hinge(300, 150, 0.02, 0.002));
  const auto slow_points = detect_change_points(slow);
  REQUIRE(slow_points.size() == 1);
  CHECK(slow_points[0].type == ChangePointType::inflection);
}

TEST_CASE("nearby candidates collapse to the trend extremum") {
  // an M-shaped trend whose two apexes sit closer than min_persist would
  // *not* both persist; build one apex plus a small wiggle instead and make
  // sure only a single point survives, placed at the true maximum
  const Eigen::Index tau = 400, apex = 200;
  VectorXd v = hinge(tau, apex, 0.02, -0.02);
  for (Eigen::Index t = apex - 8; t <= apex + 8; ++t)
    v[t] += 0.01 * std::sin(0.7 * static_cast<double>(t - apex + 8));
  const auto points = detect_change_points(series_from(v));
  REQUIRE(points.size() == 1);
  CHECK(points[0].type == ChangePointType::sign_change);
  // representative lands near the global maximum of the trend
  Eigen::Index argmax = 0;
  v.maxCoeff(&argmax);
  CHECK(std::abs(static_cast<double>(points[0].index - argmax)) <= 12.0);
}

TEST_CASE("detector input validation") {
  VectorXd v = VectorXd::LinSpaced(30, 0.0, 1.0);
  CHECK_THROWS_AS(detect_change_points(series_from(v)), DataError);  // too short

  VectorXd gap = VectorXd::LinSpaced(300, 0.0, 1.0);
  ObservationSeries s = series_from(gap);
  s.values[5] = kNaN;
  CHECK_THROWS_AS(detect_change_points(s), std::invalid_argument);

  ChangePointOptions bad;
  bad.min_persist = 0;
  CHECK_THROWS_AS(detect_change_points(series_from(gap), bad), std::invalid_argument);
  bad = ChangePointOptions{};
  bad.inflection_factor = 1.0;
  CHECK_THROWS_AS(detect_change_points(series_from(gap), bad), std::invalid_argument);
}

TEST_CASE("relative scale zeroes the minimum and keeps gaps") {
  VectorXd v(5);
  v << 3.0, 1.5, kNaN, 7.0, 2.0;
  ObservationSeries s = series_from(v);
  s.missing = {0, 0, 1, 0, 0};
  const ObservationSeries r = relative_scale(s);
  CHECK(r.values[0] == 1.5);
  CHECK(r.values[1] == 0.0);
  CHECK(r.is_missing(2));
  CHECK(r.values[3] == 5.5);

  double lo = std::numeric_limits<double>::infinity();
  for (Eigen::Index t = 0; t < r.length(); ++t)
    if (!r.is_missing(t)) lo = std::min(lo, r.values[t]);
  CHECK(lo == 0.0);

  ObservationSeries none = series_from(VectorXd::Constant(3, kNaN));
  CHECK_THROWS_AS(relative_scale(none), DataError);
}

TEST_CASE("standardize centers the observed mean at zero") {
  VectorXd v(4);
  v << 2.0, 4.0, kNaN, 6.0;
  ObservationSeries s = series_from(v);
  const ObservationSeries z = standardize(s);
  CHECK(z.values[0] == -2.0);
  CHECK(z.values[1] == 0.0);
  CHECK(z.values[3] == 2.0);
  double acc = 0.0;
  int n = 0;
  for (Eigen::Index t = 0; t < z.length(); ++t)
    if (!z.is_missing(t)) {
      acc += z.values[t];
      ++n;
    }
  CHECK(std::abs(acc / n) < 1e-14);
}

TEST_CASE("stratification is the aligned pointwise difference") {
  VectorXd a(4), b(4);
  a << 5.0, 6.0, kNaN, 8.0;
  b << 1.0, kNaN, 2.0, 3.0;
  ObservationSeries shallow = series_from(a);
  ObservationSeries deep = series_from(b);
  const ObservationSeries d = stratification(shallow, deep);
  CHECK(d.values[0] == 4.0);
  CHECK(d.is_missing(1));
  CHECK(d.is_missing(2));
  CHECK(d.values[3] == 5.0);

  ObservationSeries misaligned = deep;
  misaligned.origin = {1960, 1};
  CHECK_THROWS_AS(stratification(shallow, misaligned), std::invalid_argument);

  ObservationSeries shorter = deep;
  shorter.values = VectorXd::Zero(3);
  CHECK_THROWS_AS(stratification(shallow, shorter), std::invalid_argument);
}
