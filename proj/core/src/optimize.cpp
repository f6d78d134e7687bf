#include "trendkit/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace trendkit {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double guarded(double v) { return std::isnan(v) ? kInf : v; }

struct Vertex {
  Eigen::VectorXd x;
  double f = kInf;
};

double diameter(const std::vector<Vertex>& simplex) {
  double d = 0.0;
  for (std::size_t i = 1; i < simplex.size(); ++i)
    d = std::max(d, (simplex[i].x - simplex[0].x).cwiseAbs().maxCoeff());
  return d;
}

}  // namespace

SimplexResult minimize_simplex(const std::function<double(const Eigen::VectorXd&)>& objective,
                               const Eigen::VectorXd& start, const SimplexOptions& options) {
  const Eigen::Index n = start.size();
  if (n == 0) throw std::invalid_argument("minimize_simplex: empty start point");
  if (options.max_evals < n + 2)
    throw std::invalid_argument("minimize_simplex: evaluation budget too small");

  int evals = 0;
  auto eval = [&](const Eigen::VectorXd& x) {
    ++evals;
    return guarded(objective(x));
  };

  Vertex best{start, eval(start)};
  bool converged = false;
  double step = options.initial_step;

  // outer loop: optional restarts with a tighter simplex around the incumbent
  for (int round = 0;; ++round) {
    std::vector<Vertex> s;
    s.reserve(static_cast<std::size_t>(n) + 1);
    s.push_back(best);
    for (Eigen::Index i = 0; i < n && evals < options.max_evals; ++i) {
      Eigen::VectorXd xi = best.x;
      xi[i] += step;
      s.push_back({xi, eval(xi)});
    }
    if (static_cast<Eigen::Index>(s.size()) < n + 1) break;  // budget exhausted mid-seed

    auto order = [&] {
      std::stable_sort(s.begin(), s.end(),
                       [](const Vertex& a, const Vertex& b) { return a.f < b.f; });
    };
    order();

    while (evals < options.max_evals) {
      if (diameter(s) < options.diameter_tol) {
        converged = true;
        break;
      }

      // centroid of all vertices but the worst
      Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
      for (Eigen::Index i = 0; i < n; ++i) centroid += s[static_cast<std::size_t>(i)].x;
      centroid /= static_cast<double>(n);
      Vertex& worst = s.back();

      const Eigen::VectorXd xr = centroid + (centroid - worst.x);
      const double fr = eval(xr);

      if (fr < s[0].f) {
        // try to expand
        const Eigen::VectorXd xe = centroid + 2.0 * (centroid - worst.x);
        const double fe = evals < options.max_evals ? eval(xe) : kInf;
        if (fe < fr)
          worst = {xe, fe};
        else
          worst = {xr, fr};
      } else if (fr < s[s.size() - 2].f) {
        worst = {xr, fr};
      } else {
        const bool outside = fr < worst.f;
        const Eigen::VectorXd xc =
            outside ? Eigen::VectorXd(centroid + 0.5 * (xr - centroid))
                    : Eigen::VectorXd(centroid - 0.5 * (centroid - worst.x));
        const double fc = evals < options.max_evals ? eval(xc) : kInf;
        if (fc < std::min(fr, worst.f)) {
          worst = {xc, fc};
        } else {
          // shrink toward the best vertex
          for (std::size_t i = 1; i < s.size() && evals < options.max_evals; ++i) {
            s[i].x = s[0].x + 0.5 * (s[i].x - s[0].x);
            s[i].f = eval(s[i].x);
          }
        }
      }
      order();
    }

    if (s[0].f < best.f || (s[0].f == best.f && converged)) best = s[0];
    if (converged || !options.allow_restart || evals >= options.max_evals) break;
    step = std::max(step * 0.25, 1e-3);
  }

  return SimplexResult{best.x, best.f, evals, converged};
}

}  // namespace trendkit
