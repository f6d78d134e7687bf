#pragma once

#include <optional>

#include <Eigen/Core>

#include "trendkit/optimize.hpp"
#include "trendkit/series.hpp"
#include "trendkit/statespace.hpp"

namespace trendkit {

/// Shape of the four-component structural model: an integrated trend of
/// order `trend_order`, a seasonal-dummy block whose 12-month running sum is
/// white noise, an optional damped stochastic cycle, and observation noise.
struct StructuralSpec {
  int trend_order = 1;
  bool seasonal_enabled = true;
  int season_length = 12;
  bool cycle_enabled = true;
  // damping is kept away from both endpoints: 1 is nonstationary, 0 folds
  // the cycle into the observation noise
  double rho_min = 0.10;
  double rho_max = 0.995;
  // cycle periods of 1.5-10 years by default, clear of seasonal and trend
  double lambda_min = 2.0 * 3.14159265358979323846 / 120.0;
  double lambda_max = 2.0 * 3.14159265358979323846 / 18.0;

  void validate() const;  // throws std::invalid_argument
  [[nodiscard]] Eigen::Index state_dim() const;
  [[nodiscard]] int param_count() const;  // free parameters under full estimation
};

struct StructuralParams {
  double var_trend = 0.0;     // sigma_T^2
  double var_seasonal = 0.0;  // sigma_S^2
  double var_cycle = 0.0;     // sigma_kappa^2
  double var_error = 1.0;     // sigma_e^2
  double rho = 0.9;
  double lambda = 2.0 * 3.14159265358979323846 / 60.0;  // radians per step
};

struct FitSettings {
  SimplexOptions simplex;
  // when false, rho/lambda stay at rho0/lambda0 and only variances move
  bool estimate_rho_lambda = true;
  double rho0 = 0.9;      // damping start (and its fixed value when pinned)
  double lambda0 = 0.0;   // frequency start; <= 0 picks the geometric mean of the bounds
  std::optional<StructuralParams> start;  // full override: single start point
};

struct DecompositionResult {
  std::string id;
  MonthStamp origin;
  Eigen::VectorXd observed;            // original y (NaN at missing)
  std::vector<std::uint8_t> missing;

  Eigen::VectorXd trend, seasonal, cycle, error;
  Eigen::VectorXd trend_var, seasonal_var, cycle_var, error_var;

  StructuralParams params;
  double loglik = 0.0;
  int evaluations = 0;
  bool converged = true;  // decompose() at fixed params sets true
};

/// Build the block-diagonal state-space form.  Trend and seasonal states are
/// diffuse; cycle states start at their stationary law.  Throws
/// std::invalid_argument when params violate the StructuralSpec bounds.
GaussianStateSpace assemble(const StructuralSpec& spec, const StructuralParams& params);

/// Filter+smooth at fixed parameters and read the components off the
/// smoothed state.  e(t) is the residual y - T - S - I at non-missing steps.
DecompositionResult decompose(const ObservationSeries& obs, const StructuralSpec& spec,
                              const StructuralParams& params);

/// Maximum-likelihood fit by Nelder-Mead on transformed parameters
/// (log variances, scaled logistic for rho and lambda) with three
/// deterministic starts at variance ratios 0.1/1/10 of the sample variance.
DecompositionResult fit(const ObservationSeries& obs, const StructuralSpec& spec,
                        const FitSettings& settings = {});

/// y - S - I with the original missing mask: the trend-plus-error series fed
/// to the common-trend identification.
ObservationSeries partial_residual(const ObservationSeries& obs,
                                   const DecompositionResult& d);

}  // namespace trendkit
