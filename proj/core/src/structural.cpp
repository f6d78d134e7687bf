#include "trendkit/structural.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "trendkit/errors.hpp"

namespace trendkit {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kInf = std::numeric_limits<double>::infinity();

double logistic(double u) {
  if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

double bounded(double u, double lo, double hi) { return lo + (hi - lo) * logistic(u); }

double unbounded(double x, double lo, double hi) {
  const double p = std::clamp((x - lo) / (hi - lo), 1e-12, 1.0 - 1e-12);
  return logit(p);
}

double safe_exp(double u) { return std::exp(std::clamp(u, -700.0, 700.0)); }

double safe_log(double v) { return std::log(std::max(v, 1e-300)); }

}  // namespace

void StructuralSpec::validate() const {
  if (trend_order < 1) throw std::invalid_argument("trend_order must be >= 1");
  if (seasonal_enabled && season_length < 2)
    throw std::invalid_argument("season_length must be >= 2");
  if (cycle_enabled) {
    if (!(0.0 < rho_min && rho_min < rho_max && rho_max < 1.0))
      throw std::invalid_argument("cycle damping bounds must satisfy 0 < rho_min < rho_max < 1");
    if (!(0.0 < lambda_min && lambda_min < lambda_max &&
          lambda_max <= std::numbers::pi + 1e-15))
      throw std::invalid_argument("cycle frequency bounds must satisfy 0 < min < max <= pi");
  }
}

Eigen::Index StructuralSpec::state_dim() const {
  Eigen::Index m = trend_order;
  if (seasonal_enabled) m += season_length - 1;
  if (cycle_enabled) m += 2;
  return m;
}

int StructuralSpec::param_count() const {
  int n = 2;                      // trend + observation variances
  if (seasonal_enabled) ++n;      // seasonal variance
  if (cycle_enabled) n += 3;      // cycle variance, rho, lambda
  return n;
}

GaussianStateSpace assemble(const StructuralSpec& spec, const StructuralParams& params) {
  spec.validate();
  if (!(params.var_trend >= 0.0) || !(params.var_error >= 0.0) ||
      (spec.seasonal_enabled && !(params.var_seasonal >= 0.0)) ||
      (spec.cycle_enabled && !(params.var_cycle >= 0.0)))
    throw std::invalid_argument("assemble: variances must be nonnegative");
  if (spec.cycle_enabled) {
    if (!(params.rho >= spec.rho_min && params.rho <= spec.rho_max))
      throw std::invalid_argument("assemble: rho outside the configured bounds");
    if (!(params.lambda >= spec.lambda_min && params.lambda <= spec.lambda_max))
      throw std::invalid_argument("assemble: lambda outside the configured bounds");
  }

  const int k = spec.trend_order;
  const int s = spec.seasonal_enabled ? spec.season_length : 0;
  const Eigen::Index m = spec.state_dim();

  GaussianStateSpace model;
  model.transition = Eigen::MatrixXd::Zero(m, m);
  model.state_cov = Eigen::MatrixXd::Zero(m, m);
  model.obs_row = Eigen::VectorXd::Zero(m);
  model.init_mean = Eigen::VectorXd::Zero(m);
  model.init_cov = Eigen::MatrixXd::Zero(m, m);
  model.diffuse.assign(static_cast<std::size_t>(m), 0);
  model.obs_var = params.var_error;

  // trend block: states (T, dT, ..., d^{k-1}T); one shared disturbance drives
  // every order, so the k-th difference of T is white noise
  for (int i = 0; i < k; ++i) {
    for (int j = i; j < k; ++j) model.transition(i, j) = 1.0;
    for (int j = 0; j < k; ++j) model.state_cov(i, j) = params.var_trend;
    model.diffuse[static_cast<std::size_t>(i)] = 1;
  }
  model.obs_row[0] = 1.0;

  // seasonal block: states (S_t, ..., S_{t-s+2}); the new seasonal is minus
  // the sum of the previous s-1, plus noise, so 12-month sums are white
  if (spec.seasonal_enabled) {
    const int base = k;
    for (int j = 0; j < s - 1; ++j) model.transition(base, base + j) = -1.0;
    for (int i = 1; i < s - 1; ++i) model.transition(base + i, base + i - 1) = 1.0;
    model.state_cov(base, base) = params.var_seasonal;
    for (int i = 0; i < s - 1; ++i) model.diffuse[static_cast<std::size_t>(base + i)] = 1;
    model.obs_row[base] = 1.0;
  }

  if (spec.cycle_enabled) {
    const Eigen::Index base = m - 2;
    // at the Nyquist frequency the rotation degenerates to a pure AR(1);
    // sin(pi) evaluated on the nearest double would otherwise leave ~1e-16
    // off-diagonal leakage
    const bool nyquist = params.lambda == 3.14159265358979323846;
    const double c = nyquist ? -1.0 : std::cos(params.lambda);
    const double sn = nyquist ? 0.0 : std::sin(params.lambda);
    model.transition(base, base) = params.rho * c;
    model.transition(base, base + 1) = params.rho * sn;
    model.transition(base + 1, base) = -params.rho * sn;
    model.transition(base + 1, base + 1) = params.rho * c;
    model.state_cov(base, base) = params.var_cycle;
    model.state_cov(base + 1, base + 1) = params.var_cycle;
    const double denom = 1.0 - params.rho * params.rho;
    const double stat = denom > 0.0 ? params.var_cycle / denom : 0.0;
    model.init_cov(base, base) = stat;
    model.init_cov(base + 1, base + 1) = stat;
    model.obs_row[base] = 1.0;
  }

  return model;
}

namespace {

struct ComponentIndex {
  Eigen::Index trend = 0;
  Eigen::Index seasonal = -1;
  Eigen::Index cycle = -1;
};

ComponentIndex component_index(const StructuralSpec& spec) {
  ComponentIndex ix;
  if (spec.seasonal_enabled) ix.seasonal = spec.trend_order;
  if (spec.cycle_enabled) ix.cycle = spec.state_dim() - 2;
  return ix;
}

}  // namespace

DecompositionResult decompose(const ObservationSeries& obs, const StructuralSpec& spec,
                              const StructuralParams& params) {
  const GaussianStateSpace model = assemble(spec, params);
  const FilterOutput fwd = filter(model, obs);
  const SmootherOutput sm = smooth(model, fwd);
  const Eigen::Index tau = obs.length();
  const ComponentIndex ix = component_index(spec);

  DecompositionResult r;
  r.id = obs.id;
  r.origin = obs.origin;
  r.observed = obs.values;
  r.missing.assign(static_cast<std::size_t>(tau), 0);
  r.trend.resize(tau);
  r.seasonal = Eigen::VectorXd::Zero(tau);
  r.cycle = Eigen::VectorXd::Zero(tau);
  r.error.resize(tau);
  r.trend_var.resize(tau);
  r.seasonal_var = Eigen::VectorXd::Zero(tau);
  r.cycle_var = Eigen::VectorXd::Zero(tau);
  r.error_var.resize(tau);
  r.params = params;
  r.loglik = fwd.loglik;

  const Eigen::VectorXd& z = model.obs_row;
  for (Eigen::Index t = 0; t < tau; ++t) {
    const auto ut = static_cast<std::size_t>(t);
    const Eigen::MatrixXd& v = sm.smoothed_cov[ut];
    r.trend[t] = sm.smoothed_mean(t, ix.trend);
    r.trend_var[t] = std::max(0.0, v(ix.trend, ix.trend));
    if (ix.seasonal >= 0) {
      r.seasonal[t] = sm.smoothed_mean(t, ix.seasonal);
      r.seasonal_var[t] = std::max(0.0, v(ix.seasonal, ix.seasonal));
    }
    if (ix.cycle >= 0) {
      r.cycle[t] = sm.smoothed_mean(t, ix.cycle);
      r.cycle_var[t] = std::max(0.0, v(ix.cycle, ix.cycle));
    }
    if (obs.is_missing(t)) {
      r.missing[ut] = 1;
      r.observed[t] = kNaN;
      r.error[t] = kNaN;
      r.error_var[t] = kNaN;
    } else {
      r.error[t] = obs.values[t] - r.trend[t] - r.seasonal[t] - r.cycle[t];
      r.error_var[t] = std::max(0.0, z.dot(v * z));
    }
  }
  return r;
}

namespace {

struct Transform {
  const StructuralSpec& spec;
  bool estimate_shape;
  StructuralParams fixed;  // carries rho/lambda when not estimated

  [[nodiscard]] Eigen::Index size() const {
    Eigen::Index n = 2;
    if (spec.seasonal_enabled) ++n;
    if (spec.cycle_enabled) n += estimate_shape ? 3 : 1;
    return n;
  }

  [[nodiscard]] Eigen::VectorXd pack(const StructuralParams& p) const {
    Eigen::VectorXd th(size());
    Eigen::Index i = 0;
    th[i++] = safe_log(p.var_trend);
    if (spec.seasonal_enabled) th[i++] = safe_log(p.var_seasonal);
    if (spec.cycle_enabled) {
      th[i++] = safe_log(p.var_cycle);
      if (estimate_shape) {
        th[i++] = unbounded(p.rho, spec.rho_min, spec.rho_max);
        th[i++] = unbounded(p.lambda, spec.lambda_min, spec.lambda_max);
      }
    }
    th[i++] = safe_log(p.var_error);
    return th;
  }

  [[nodiscard]] StructuralParams unpack(const Eigen::VectorXd& th) const {
    StructuralParams p = fixed;
    Eigen::Index i = 0;
    p.var_trend = safe_exp(th[i++]);
    if (spec.seasonal_enabled) p.var_seasonal = safe_exp(th[i++]);
    if (spec.cycle_enabled) {
      p.var_cycle = safe_exp(th[i++]);
      if (estimate_shape) {
        p.rho = bounded(th[i++], spec.rho_min, spec.rho_max);
        p.lambda = bounded(th[i++], spec.lambda_min, spec.lambda_max);
      }
    }
    p.var_error = safe_exp(th[i++]);
    return p;
  }
};

}  // namespace

DecompositionResult fit(const ObservationSeries& obs, const StructuralSpec& spec,
                        const FitSettings& settings) {
  spec.validate();
  const Eigen::Index tau = obs.length();
  if (tau < 2) throw DataError("series '" + obs.id + "': need at least 2 observations");
  const Eigen::Index observed = obs.observed_count();
  if (observed == 0) throw DataError("series '" + obs.id + "' is entirely missing");
  const int free_params =
      settings.estimate_rho_lambda ? spec.param_count()
                                   : spec.param_count() - (spec.cycle_enabled ? 2 : 0);
  if (observed < free_params)
    throw DataError("series '" + obs.id + "': " + std::to_string(observed) +
                    " observed values cannot identify " + std::to_string(free_params) +
                    " parameters");

  // sample moments of the non-missing values drive the starting points
  double mean = 0.0;
  for (Eigen::Index t = 0; t < tau; ++t)
    if (!obs.is_missing(t)) mean += obs.values[t];
  mean /= static_cast<double>(observed);
  double var = 0.0;
  for (Eigen::Index t = 0; t < tau; ++t)
    if (!obs.is_missing(t)) var += (obs.values[t] - mean) * (obs.values[t] - mean);
  var = observed > 1 ? var / static_cast<double>(observed - 1) : 0.0;
  var = std::max(var, 1e-10);

  StructuralParams shape_defaults;
  shape_defaults.rho = std::clamp(settings.rho0, spec.rho_min + 1e-6, spec.rho_max - 1e-6);
  shape_defaults.lambda = settings.lambda0 > 0.0
                              ? std::clamp(settings.lambda0, spec.lambda_min, spec.lambda_max)
                              : std::sqrt(spec.lambda_min * spec.lambda_max);
  if (settings.start) {
    shape_defaults.rho = std::clamp(settings.start->rho, spec.rho_min, spec.rho_max);
    shape_defaults.lambda =
        std::clamp(settings.start->lambda, spec.lambda_min, spec.lambda_max);
  }

  const Transform tf{spec, settings.estimate_rho_lambda && spec.cycle_enabled,
                     shape_defaults};

  auto objective = [&](const Eigen::VectorXd& th) -> double {
    try {
      return -loglik(assemble(spec, tf.unpack(th)), obs);
    } catch (const NumericalError&) {
      return kInf;
    }
  };

  std::vector<StructuralParams> starts;
  if (settings.start) {
    starts.push_back(*settings.start);
  } else {
    for (const double q : {0.1, 1.0, 10.0}) {
      StructuralParams p = shape_defaults;
      p.var_trend = 0.01 * q * var;
      p.var_seasonal = 0.01 * q * var;
      p.var_cycle = 0.1 * q * var;
      p.var_error = 0.5 * var;
      starts.push_back(p);
    }
  }

  SimplexResult best;
  best.value = kInf;
  int total_evals = 0;
  bool best_converged = false;
  for (const StructuralParams& p : starts) {
    const SimplexResult r = minimize_simplex(objective, tf.pack(p), settings.simplex);
    total_evals += r.evaluations;
    if (r.value < best.value) {
      best = r;
      best_converged = r.converged;
    }
  }
  if (!std::isfinite(best.value))
    throw NumericalError("fit: no feasible likelihood found for series '" + obs.id + "'");

  DecompositionResult result = decompose(obs, spec, tf.unpack(best.x));
  result.evaluations = total_evals;
  result.converged = best_converged;
  return result;
}

ObservationSeries partial_residual(const ObservationSeries& obs,
                                   const DecompositionResult& d) {
  if (d.trend.size() != obs.length())
    throw std::invalid_argument("partial_residual: decomposition does not match the series");
  ObservationSeries out;
  out.id = obs.id;
  out.origin = obs.origin;
  out.values.resize(obs.length());
  out.missing.assign(static_cast<std::size_t>(obs.length()), 0);
  for (Eigen::Index t = 0; t < obs.length(); ++t) {
    if (obs.is_missing(t)) {
      out.values[t] = kNaN;
      out.missing[static_cast<std::size_t>(t)] = 1;
    } else {
      out.values[t] = obs.values[t] - d.seasonal[t] - d.cycle[t];
    }
  }
  return out;
}

}  // namespace trendkit
