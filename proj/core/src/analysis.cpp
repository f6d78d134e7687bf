#include "trendkit/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "trendkit/errors.hpp"

namespace trendkit {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

ObservationSeries shifted(const ObservationSeries& series, double offset) {
  ObservationSeries out = series;
  for (Eigen::Index t = 0; t < out.length(); ++t)
    if (!series.is_missing(t)) out.values[t] -= offset;
  return out;
}

}  // namespace

std::vector<ChangePoint> detect_change_points(const ObservationSeries& trend,
                                              const ChangePointOptions& options) {
  if (options.min_persist < 1 || options.slope_window < 2)
    throw std::invalid_argument("detect_change_points: bad window configuration");
  if (!(options.inflection_factor > 1.0))
    throw std::invalid_argument("detect_change_points: inflection factor must exceed 1");
  const Eigen::Index tau = trend.length();
  for (Eigen::Index t = 0; t < tau; ++t)
    if (trend.is_missing(t))
      throw std::invalid_argument("detect_change_points: trend series has missing values");
  if (tau < 2 * options.min_persist + options.slope_window)
    throw DataError("detect_change_points: series of length " + std::to_string(tau) +
                    " is shorter than 2*min_persist + slope_window");

  // centered OLS slope over [t-half, t+half]
  const Eigen::Index half = options.slope_window / 2;
  const Eigen::Index lo = half;
  const Eigen::Index hi = tau - 1 - half;  // inclusive
  Eigen::VectorXd slope = Eigen::VectorXd::Zero(tau);
  double sxx = 0.0;
  for (Eigen::Index i = -half; i <= half; ++i) sxx += static_cast<double>(i * i);
  for (Eigen::Index t = lo; t <= hi; ++t) {
    double sxy = 0.0;
    for (Eigen::Index i = -half; i <= half; ++i)
      sxy += static_cast<double>(i) * trend.values[t + i];
    slope[t] = sxy / sxx;
  }

  double scale = 0.0;
  for (Eigen::Index t = lo; t <= hi; ++t) scale = std::max(scale, std::abs(slope[t]));
  const double eps = 1e-12 * scale;
  auto sgn = [eps](double x) { return x > eps ? 1 : (x < -eps ? -1 : 0); };

  const Eigen::Index mp = options.min_persist;
  auto window_mean = [&](Eigen::Index first, Eigen::Index count) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < count; ++i) acc += slope[first + i];
    return acc / static_cast<double>(count);
  };

  struct Candidate {
    Eigen::Index t;
    ChangePointType type;
    double pre, post;
  };
  std::vector<Candidate> cands;
  for (Eigen::Index t = lo + mp; t + mp <= hi; ++t) {
    const double pre = window_mean(t - mp, mp);
    const double post = window_mean(t + 1, mp);
    const int s_pre = sgn(pre), s_post = sgn(post);
    if (s_pre == 0 || s_post == 0) continue;
    if (s_pre != s_post) {
      cands.push_back({t, ChangePointType::sign_change, pre, post});
    } else {
      const double hi_mag = std::max(std::abs(pre), std::abs(post));
      const double lo_mag = std::min(std::abs(pre), std::abs(post));
      if (hi_mag >= options.inflection_factor * lo_mag)
        cands.push_back({t, ChangePointType::inflection, pre, post});
    }
  }

  std::vector<ChangePoint> out;
  std::size_t i = 0;
  while (i < cands.size()) {
    std::size_t j = i;
    while (j + 1 < cands.size() && cands[j + 1].t - cands[j].t <= mp) ++j;

    // representative of the cluster: sign changes win, placed at the trend
    // extremum (the turning point); inflections at the sharpest slope change
    std::size_t pick = i;
    bool have_sign = false;
    for (std::size_t k = i; k <= j; ++k) {
      const Candidate& c = cands[k];
      if (c.type == ChangePointType::sign_change) {
        if (!have_sign) {
          have_sign = true;
          pick = k;
        } else {
          const Candidate& p = cands[pick];
          const bool rising = c.post > 0.0;
          const double cv = trend.values[c.t], pv = trend.values[p.t];
          if ((rising && cv < pv) || (!rising && cv > pv)) pick = k;
        }
      } else if (!have_sign) {
        if (std::abs(c.post - c.pre) > std::abs(cands[pick].post - cands[pick].pre)) pick = k;
      }
    }

    const Candidate& c = cands[pick];
    ChangePoint cp;
    cp.index = c.t;
    cp.when = trend.origin.advanced(c.t);
    cp.type = c.type;
    cp.slope_before = c.pre;
    cp.slope_after = c.post;
    const int s_post = sgn(c.post);
    Eigen::Index persist = mp;
    while (c.t + persist + 1 <= hi && sgn(window_mean(c.t + 1, persist + 1)) == s_post)
      ++persist;
    cp.persistence = static_cast<int>(persist);
    out.push_back(cp);
    i = j + 1;
  }
  return out;
}

ObservationSeries relative_scale(const ObservationSeries& series) {
  double lo = std::numeric_limits<double>::infinity();
  for (Eigen::Index t = 0; t < series.length(); ++t)
    if (!series.is_missing(t)) lo = std::min(lo, series.values[t]);
  if (!std::isfinite(lo)) throw DataError("relative_scale: series has no observed values");
  return shifted(series, lo);
}

ObservationSeries standardize(const ObservationSeries& series) {
  double acc = 0.0;
  Eigen::Index n = 0;
  for (Eigen::Index t = 0; t < series.length(); ++t)
    if (!series.is_missing(t)) {
      acc += series.values[t];
      ++n;
    }
  if (n == 0) throw DataError("standardize: series has no observed values");
  return shifted(series, acc / static_cast<double>(n));
}

ObservationSeries stratification(const ObservationSeries& shallow,
                                 const ObservationSeries& deep) {
  if (shallow.length() != deep.length() || !(shallow.origin == deep.origin))
    throw std::invalid_argument("stratification: series are not aligned");
  ObservationSeries out = shallow;
  out.missing.assign(static_cast<std::size_t>(out.length()), 0);
  for (Eigen::Index t = 0; t < out.length(); ++t) {
    if (shallow.is_missing(t) || deep.is_missing(t)) {
      out.values[t] = kNaN;
      out.missing[static_cast<std::size_t>(t)] = 1;
    } else {
      out.values[t] = shallow.values[t] - deep.values[t];
    }
  }
  return out;
}

}  // namespace trendkit
