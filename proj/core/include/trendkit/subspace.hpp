#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "trendkit/series.hpp"

namespace trendkit {

/// Horizons of the block-Hankel covariance matrix.  With past horizon p and
/// future horizon f, block (i,j) of H is the lag-(i+j-1) covariance; the
/// shifted matrix uses lag (i+j) and feeds the transition estimate.
struct HankelSpec {
  int past = 1;
  int future = 1;
  // off: second moments about zero (the level of the series loads onto the
  // first component); on: series are centered first
  bool demean = false;
};

struct HankelMatrices {
  Eigen::MatrixXd hankel;         // (f*N) x (p*N), blocks Lambda_{i+j-1}
  Eigen::MatrixXd hankel_shift;   // (f*N) x (p*N), blocks Lambda_{i+j}
  Eigen::MatrixXd lag0;           // N x N, Lambda_0
};

struct RankSelection {
  enum class Mode { fixed, energy };
  Mode mode = Mode::fixed;
  int n = 4;           // fixed mode
  double theta = 0.9;  // energy mode: smallest n with cumulative fraction >= theta
};

struct RiccatiResult {
  Eigen::MatrixXd gain;   // K, n x N
  Eigen::MatrixXd state_cov;  // Pi, n x n
  int iterations = 0;
  bool regularized = false;  // innovation covariance nudged by +1e-10 I
};

/// Innovation-form system identified from the covariance Hankel matrix.
struct RealizationModel {
  int n = 0;
  Eigen::MatrixXd transition;    // A, n x n
  Eigen::MatrixXd loadings;      // C, N x n
  Eigen::MatrixXd gain;          // K, n x N
  Eigen::MatrixXd lag0;          // Lambda_0, N x N
  Eigen::VectorXd singular_values;  // full spectrum, for diagnostics
  int projected_eigenvalues = 0;    // count of |eig(A)| > 1 pulled inside the unit circle
  RiccatiResult riccati;
};

struct CommonTrendsResult {
  MonthStamp origin;
  std::vector<std::string> ids;   // series order of the identification panel
  Eigen::MatrixXd states;         // tau x n common-trend trajectories
  Eigen::MatrixXd loadings;       // C, N x n
  Eigen::VectorXd relative_offsets;  // per-trend minimum (zero reference)
};

/// Sample lag covariances stacked into the Hankel pair.  The panel must be
/// complete -- fill missing values first.  Throws std::invalid_argument on
/// missing data and DataError when the panel is too short.
HankelMatrices build_hankel(const SeriesPanel& panel, const HankelSpec& spec);

/// Model order from a descending singular-value spectrum.
int select_rank(const Eigen::VectorXd& singular_values, const RankSelection& policy);

/// Balanced stochastic realization of order n from the Hankel pair, with the
/// innovation gain completed by solve_riccati.  Eigenvalues of A outside the
/// unit circle are radially projected to modulus 1 - 1e-8 (counted in the
/// result).
RealizationModel realize(const Eigen::MatrixXd& hankel, const Eigen::MatrixXd& lag0,
                         const Eigen::MatrixXd& hankel_shift, int n);

/// Fixed-point iteration for the innovation-form Riccati equation
///   Pi = A Pi A' + (M - A Pi C')(Lambda_0 - C Pi C')^{-1}(M - A Pi C')'
/// from Pi = 0; K is evaluated at the fixed point.
RiccatiResult solve_riccati(const Eigen::MatrixXd& a, const Eigen::MatrixXd& c,
                            const Eigen::MatrixXd& m, const Eigen::MatrixXd& lag0);

/// Replay the innovation recursion x_{t+1} = A x_t + K (y_t - C x_t) from
/// x_1 = 0 over the identification panel.
CommonTrendsResult extract_trends(const RealizationModel& model, const SeriesPanel& panel);

/// Column j (1-based) of the loading matrix, aligned with result.ids.
Eigen::VectorXd loading_map(const CommonTrendsResult& result, int trend_index);

/// Pearson correlation of each series of `panel` (conventionally the
/// univariate smoothed trends) against common trend j.  Degenerate series
/// yield NaN, never zero.
Eigen::VectorXd correlation_map(const SeriesPanel& panel, const CommonTrendsResult& result,
                                int trend_index);

/// Sum of the selected trends mapped through the series' loadings, then
/// standardized to mean zero.  Trend indices are 1-based; duplicates are
/// ignored.
ObservationSeries reconstruct(const CommonTrendsResult& result, const std::string& series_id,
                              const std::vector<int>& trend_subset);

}  // namespace trendkit
