#pragma once

#include <functional>

#include <Eigen/Core>

namespace trendkit {

struct SimplexOptions {
  double initial_step = 1.0;   // per-coordinate simplex edge
  double diameter_tol = 1e-6;  // max-norm simplex diameter declaring convergence
  int max_evals = 2000;
  bool allow_restart = true;   // re-seed a shrunken simplex around the incumbent
};

struct SimplexResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int evaluations = 0;
  bool converged = false;
};

/// Derivative-free Nelder-Mead minimization.  Fully deterministic: ties are
/// broken by insertion order and the simplex construction has no randomness.
/// Objectives may return +inf (or NaN, treated as +inf) for infeasible points.
SimplexResult minimize_simplex(const std::function<double(const Eigen::VectorXd&)>& objective,
                               const Eigen::VectorXd& start,
                               const SimplexOptions& options = {});

}  // namespace trendkit
