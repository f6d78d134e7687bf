#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "trendkit/series.hpp"

namespace trendkit {

/// Time-invariant linear-Gaussian state-space model with a univariate
/// observation:
///
///   y_t     = obs_row' alpha_t + eps_t,        eps_t ~ N(0, obs_var)
///   alpha_1 = init_mean + delta + eta_0,       eta_0 ~ N(0, init_cov)
///   alpha_t = transition alpha_{t-1} + eta_t,  eta_t ~ N(0, state_cov)
///
/// `diffuse[i] != 0` marks state i as having an improper (infinite-variance)
/// prior: delta_i is treated exactly, not as a large finite variance.
struct GaussianStateSpace {
  Eigen::MatrixXd transition;  // m x m
  Eigen::MatrixXd state_cov;   // m x m, PSD
  Eigen::VectorXd obs_row;     // m
  double obs_var = 0.0;
  Eigen::VectorXd init_mean;             // m (finite part)
  Eigen::MatrixXd init_cov;              // m x m, PSD (finite part)
  std::vector<std::uint8_t> diffuse;     // m flags; empty = none diffuse

  [[nodiscard]] Eigen::Index dim() const { return transition.rows(); }
  [[nodiscard]] bool any_diffuse() const {
    for (auto f : diffuse)
      if (f) return true;
    return false;
  }
  /// Throws std::invalid_argument on shape mismatch or non-finite entries.
  void validate() const;
};

/// Everything the forward pass produces.  Per-step predicted moments are
/// retained so the smoother can run without re-touching the observations.
struct FilterOutput {
  Eigen::Index dim = 0;
  Eigen::Index length = 0;

  Eigen::MatrixXd predicted_mean;        // time x m      (a_t = E[alpha_t | y_{1..t-1}])
  std::vector<Eigen::MatrixXd> predicted_cov;       // P_t   (finite part)
  std::vector<Eigen::MatrixXd> predicted_diffuse;   // Pinf_t (empty matrices once resolved)
  Eigen::MatrixXd filtered_mean;         // time x m      (E[alpha_t | y_{1..t}])
  std::vector<Eigen::MatrixXd> filtered_cov;

  Eigen::VectorXd innovations;       // v_t, NaN at skipped steps
  Eigen::VectorXd innovation_var;    // F_t used in the Gaussian update, NaN when skipped
  Eigen::VectorXd diffuse_var;       // Finf_t, 0 outside the diffuse phase
  std::vector<std::uint8_t> skipped;       // 1 = missing observation, no update
  std::vector<std::uint8_t> diffuse_step;  // 1 = update used the diffuse branch (Finf > 0)

  double loglik = 0.0;               // proper part of the Gaussian log likelihood
  Eigen::Index contributing_steps = 0;  // observed steps outside the diffuse phase
  Eigen::Index diffuse_length = 0;      // steps before the diffuse prior fully resolved
};

/// Smoothed (full-sample) moments.
struct SmootherOutput {
  Eigen::MatrixXd smoothed_mean;               // time x m
  std::vector<Eigen::MatrixXd> smoothed_cov;   // V_t
};

struct SimulationOutput {
  ObservationSeries observations;
  Eigen::MatrixXd states;  // time x m
};

/// Kalman forward pass with exact handling of the diffuse prior.
/// Throws DataError when the series is unusable and NumericalError when an
/// innovation variance degenerates irrecoverably.
FilterOutput filter(const GaussianStateSpace& model, const ObservationSeries& obs);

/// Fixed-interval smoother over a completed forward pass.
SmootherOutput smooth(const GaussianStateSpace& model, const FilterOutput& forward);

/// Log likelihood only: same recursion as `filter` minus all per-step storage.
/// Bitwise-identical contributions, materially faster on long series.
double loglik(const GaussianStateSpace& model, const ObservationSeries& obs);

/// Draw one trajectory + observation series.  A model with diffuse states
/// requires `initial_state`; otherwise the initial state is drawn from
/// N(init_mean, init_cov).  Same seed, same draw — across platforms with the
/// same IEEE double behaviour.
SimulationOutput simulate(const GaussianStateSpace& model, Eigen::Index length,
                          std::uint64_t seed,
                          const std::optional<Eigen::VectorXd>& initial_state = std::nullopt);

/// Symmetric PSD square root via eigendecomposition (negative eigenvalues
/// clamped to zero).  Shared by `simulate` and several tests.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& cov);

}  // namespace trendkit
