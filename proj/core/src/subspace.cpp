#include "trendkit/subspace.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <set>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "trendkit/errors.hpp"

namespace trendkit {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kEigenMargin = 1e-8;   // unstable eigenvalues land at 1 - this
constexpr double kRiccatiTol = 1e-10;
constexpr int kRiccatiMaxIter = 10000;
constexpr double kRidge = 1e-10;

Eigen::MatrixXd lag_cov(const Eigen::MatrixXd& y, int k) {
  // mean of outer products y_{t+k} y_t' over the tau-k valid steps
  const Eigen::Index tau = y.rows();
  const Eigen::Index span = tau - k;
  return (y.bottomRows(span).transpose() * y.topRows(span)) / static_cast<double>(span);
}

}  // namespace

HankelMatrices build_hankel(const SeriesPanel& panel, const HankelSpec& spec) {
  if (spec.past < 1 || spec.future < 1)
    throw std::invalid_argument("build_hankel: horizons must be >= 1");
  const Eigen::Index tau = panel.length();
  const Eigen::Index n_series = panel.width();
  if (n_series < 1) throw std::invalid_argument("build_hankel: empty panel");
  if (tau <= spec.past + spec.future + 2)
    throw DataError("build_hankel: panel length " + std::to_string(tau) +
                    " too short for horizons p=" + std::to_string(spec.past) +
                    ", f=" + std::to_string(spec.future));
  if (!panel.values.allFinite())
    throw std::invalid_argument(
        "build_hankel: panel has missing values; fill them before identification");

  Eigen::MatrixXd y = panel.values;
  if (spec.demean) y.rowwise() -= y.colwise().mean();

  const int max_lag = spec.past + spec.future;
  std::vector<Eigen::MatrixXd> lambda(static_cast<std::size_t>(max_lag) + 1);
  for (int k = 0; k <= max_lag; ++k) lambda[static_cast<std::size_t>(k)] = lag_cov(y, k);

  HankelMatrices out;
  out.lag0 = 0.5 * (lambda[0] + lambda[0].transpose());
  out.hankel.resize(spec.future * n_series, spec.past * n_series);
  out.hankel_shift.resize(spec.future * n_series, spec.past * n_series);
  for (int i = 0; i < spec.future; ++i) {
    for (int j = 0; j < spec.past; ++j) {
      out.hankel.block(i * n_series, j * n_series, n_series, n_series) =
          lambda[static_cast<std::size_t>(i + j + 1)];
      out.hankel_shift.block(i * n_series, j * n_series, n_series, n_series) =
          lambda[static_cast<std::size_t>(i + j + 2)];
    }
  }
  return out;
}

int select_rank(const Eigen::VectorXd& singular_values, const RankSelection& policy) {
  const Eigen::Index count = singular_values.size();
  if (count == 0) throw std::invalid_argument("select_rank: empty spectrum");
  for (Eigen::Index i = 0; i < count; ++i) {
    if (!(singular_values[i] >= 0.0))
      throw std::invalid_argument("select_rank: singular values must be nonnegative");
    if (i > 0 && singular_values[i] > singular_values[i - 1] * (1.0 + 1e-12))
      throw std::invalid_argument("select_rank: spectrum must be descending");
  }

  if (policy.mode == RankSelection::Mode::fixed) {
    if (policy.n < 1) throw std::invalid_argument("select_rank: fixed order must be >= 1");
    const double cut = 1e-12 * singular_values[0];
    Eigen::Index nonzero = 0;
    while (nonzero < count && singular_values[nonzero] > cut) ++nonzero;
    return static_cast<int>(std::min<Eigen::Index>(policy.n, nonzero));
  }

  if (!(policy.theta > 0.0 && policy.theta <= 1.0))
    throw std::invalid_argument("select_rank: energy threshold must be in (0, 1]");
  const double total = singular_values.sum();
  if (total <= 0.0) throw std::invalid_argument("select_rank: zero spectrum");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < count; ++i) {
    acc += singular_values[i];
    if (acc / total >= policy.theta) return static_cast<int>(i + 1);
  }
  return static_cast<int>(count);
}

RiccatiResult solve_riccati(const Eigen::MatrixXd& a, const Eigen::MatrixXd& c,
                            const Eigen::MatrixXd& m, const Eigen::MatrixXd& lag0) {
  const Eigen::Index n = a.rows();
  const Eigen::Index width = c.rows();
  if (a.cols() != n || c.cols() != n || m.rows() != n || m.cols() != width ||
      lag0.rows() != width || lag0.cols() != width)
    throw std::invalid_argument("solve_riccati: inconsistent dimensions");

  // All per-iteration work is n x n via the Woodbury identity
  //   (Lambda0 - C Pi C')^{-1} = L0inv + L0inv C Pi (I - G Pi)^{-1} C' L0inv,
  // so the N x N factorization happens exactly once.
  for (int attempt = 0; attempt < 2; ++attempt) {
    const bool ridged = attempt == 1;
    Eigen::MatrixXd lam = lag0;
    if (ridged) lam += kRidge * Eigen::MatrixXd::Identity(width, width);

    Eigen::LDLT<Eigen::MatrixXd> ldlt(lam);
    if (ldlt.info() != Eigen::Success || (ldlt.vectorD().array() <= 0.0).any()) {
      if (!ridged) continue;
      throw NumericalError("solve_riccati: lag-0 covariance is not positive definite");
    }

    const Eigen::MatrixXd y0 = ldlt.solve(c);              // N x n
    const Eigen::MatrixXd g = c.transpose() * y0;          // n x n
    const Eigen::MatrixXd z0t = ldlt.solve(m.transpose()).transpose();  // n x N (= M L^-1)
    const Eigen::MatrixXd p0 = z0t * m.transpose();        // n x n
    const Eigen::MatrixXd q0 = m * y0;                     // n x n
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);

    Eigen::MatrixXd pi = Eigen::MatrixXd::Zero(n, n);
    bool indefinite = false;
    int iter = 0;
    for (; iter < kRiccatiMaxIter; ++iter) {
      // innovation covariance positive definite <=> spectral radius(G Pi) < 1
      const Eigen::VectorXcd ev = Eigen::EigenSolver<Eigen::MatrixXd>(g * pi, false).eigenvalues();
      if (ev.size() > 0 && ev.cwiseAbs().maxCoeff() >= 1.0 - 1e-12) {
        indefinite = true;
        break;
      }
      const Eigen::MatrixXd api = a * pi;
      const Eigen::MatrixXd dc = q0 - api * g;  // D L^-1 C, n x n
      const Eigen::MatrixXd pie = pi * (eye - g * pi).lu().solve(eye);
      Eigen::MatrixXd next = api * a.transpose() + p0 - q0 * api.transpose() -
                             api * q0.transpose() + api * g * api.transpose() +
                             dc * pie * dc.transpose();
      next = 0.5 * (next + next.transpose()).eval();
      if (!next.allFinite())
        throw NumericalError("solve_riccati: diverged at iteration " + std::to_string(iter));
      const double change = (next - pi).cwiseAbs().maxCoeff();
      pi = next;
      if (change < kRiccatiTol) {
        RiccatiResult out;
        out.state_cov = pi;
        out.iterations = iter + 1;
        out.regularized = ridged;
        const Eigen::MatrixXd dcf = q0 - a * pi * g;
        const Eigen::MatrixXd pief = pi * (eye - g * pi).lu().solve(eye);
        out.gain = (z0t - a * pi * y0.transpose()) + dcf * pief * y0.transpose();
        return out;
      }
    }
    if (indefinite && !ridged) continue;
    if (indefinite)
      throw NumericalError(
          "solve_riccati: innovation covariance lost positive definiteness at iteration " +
          std::to_string(iter) + " even after regularization");
    throw NumericalError("solve_riccati: no fixed point after " +
                         std::to_string(kRiccatiMaxIter) + " iterations");
  }
  throw NumericalError("solve_riccati: unreachable");
}

RealizationModel realize(const Eigen::MatrixXd& hankel, const Eigen::MatrixXd& lag0,
                         const Eigen::MatrixXd& hankel_shift, int n) {
  const Eigen::Index width = lag0.rows();
  if (width == 0 || lag0.cols() != width)
    throw std::invalid_argument("realize: lag-0 covariance must be square and nonempty");
  if (hankel.rows() == 0 || hankel.rows() % width != 0 || hankel.cols() % width != 0)
    throw std::invalid_argument("realize: Hankel shape is not a multiple of the panel width");
  if (hankel_shift.rows() != hankel.rows() || hankel_shift.cols() != hankel.cols())
    throw std::invalid_argument("realize: Hankel pair shapes differ");
  if (n < 1 || n > std::min(hankel.rows(), hankel.cols()))
    throw std::invalid_argument("realize: order out of range");

  Eigen::BDCSVD<Eigen::MatrixXd> svd(hankel, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  if (sv[n - 1] <= 0.0 || sv[0] / sv[n - 1] > 1e12)
    throw NumericalError("realize: Hankel singular values degenerate at order " +
                         std::to_string(n) + "; use a smaller order");

  const Eigen::VectorXd shalf = sv.head(n).cwiseSqrt();
  const Eigen::VectorXd shalf_inv = shalf.cwiseInverse();
  const Eigen::MatrixXd un = svd.matrixU().leftCols(n);
  const Eigen::MatrixXd vn = svd.matrixV().leftCols(n);

  RealizationModel model;
  model.n = n;
  model.singular_values = sv;
  model.lag0 = lag0;
  model.loadings = un.topRows(width) * shalf.asDiagonal();
  const Eigen::MatrixXd reach = shalf.asDiagonal() * vn.transpose();  // n x pN
  const Eigen::MatrixXd m = reach.leftCols(width);
  model.transition =
      shalf_inv.asDiagonal() * (un.transpose() * hankel_shift * vn) * shalf_inv.asDiagonal();

  // project unstable eigenvalues radially onto the unit circle
  Eigen::EigenSolver<Eigen::MatrixXd> es(model.transition);
  if (es.info() != Eigen::Success)
    throw NumericalError("realize: eigendecomposition of the transition failed");
  const double radius = es.eigenvalues().cwiseAbs().maxCoeff();
  if (radius > 1.0) {
    Eigen::VectorXcd vals = es.eigenvalues();
    int moved = 0;
    for (Eigen::Index i = 0; i < vals.size(); ++i) {
      if (std::abs(vals[i]) > 1.0) {
        vals[i] *= (1.0 - kEigenMargin) / std::abs(vals[i]);
        ++moved;
      }
    }
    const Eigen::MatrixXcd vecs = es.eigenvectors();
    const Eigen::MatrixXcd rebuilt =
        vecs * vals.asDiagonal() * vecs.fullPivLu().solve(
                                       Eigen::MatrixXcd::Identity(n, n));
    Eigen::MatrixXd candidate = rebuilt.real();
    if (candidate.allFinite() && rebuilt.imag().cwiseAbs().maxCoeff() <
                                     1e-6 * (1.0 + candidate.cwiseAbs().maxCoeff())) {
      model.transition = candidate;
      model.projected_eigenvalues = moved;
    } else {
      // defective eigenbasis: fall back to a uniform radial shrink
      model.transition *= (1.0 - kEigenMargin) / radius;
      model.projected_eigenvalues = moved;
    }
  }

  model.riccati = solve_riccati(model.transition, model.loadings, m, lag0);
  model.gain = model.riccati.gain;
  return model;
}

CommonTrendsResult extract_trends(const RealizationModel& model, const SeriesPanel& panel) {
  const Eigen::Index n_series = panel.width();
  const Eigen::Index tau = panel.length();
  if (model.loadings.rows() != n_series)
    throw std::invalid_argument("extract_trends: panel width does not match the realization");
  if (!panel.values.allFinite())
    throw std::invalid_argument("extract_trends: panel has missing values");

  CommonTrendsResult out;
  out.origin = panel.origin;
  out.ids = panel.ids;
  out.loadings = model.loadings;
  out.states.resize(tau, model.n);

  Eigen::VectorXd x = Eigen::VectorXd::Zero(model.n);
  for (Eigen::Index t = 0; t < tau; ++t) {
    out.states.row(t) = x.transpose();
    const Eigen::VectorXd innov = panel.values.row(t).transpose() - model.loadings * x;
    x = model.transition * x + model.gain * innov;
  }
  out.relative_offsets = out.states.colwise().minCoeff().transpose();
  return out;
}

namespace {

int checked_index(int trend_index, Eigen::Index n) {
  if (trend_index < 1 || trend_index > n)
    throw std::invalid_argument("trend index " + std::to_string(trend_index) +
                                " out of range 1.." + std::to_string(n));
  return trend_index - 1;
}

}  // namespace

Eigen::VectorXd loading_map(const CommonTrendsResult& result, int trend_index) {
  return result.loadings.col(checked_index(trend_index, result.loadings.cols()));
}

Eigen::VectorXd correlation_map(const SeriesPanel& panel, const CommonTrendsResult& result,
                                int trend_index) {
  const int j = checked_index(trend_index, result.states.cols());
  if (panel.length() != result.states.rows())
    throw std::invalid_argument("correlation_map: panel length does not match the states");
  const Eigen::Index tau = panel.length();
  const Eigen::VectorXd state = result.states.col(j);
  const Eigen::VectorXd sc = (state.array() - state.mean()).matrix();
  const double svar = sc.squaredNorm();

  Eigen::VectorXd out(panel.width());
  for (Eigen::Index i = 0; i < panel.width(); ++i) {
    const Eigen::VectorXd series = panel.values.col(i);
    if (!series.allFinite()) {
      out[i] = kNaN;
      continue;
    }
    const Eigen::VectorXd yc = (series.array() - series.mean()).matrix();
    const double yvar = yc.squaredNorm();
    const double denom = std::sqrt(svar * yvar);
    // degenerate variance: correlation undefined, reported missing
    if (denom <= 1e-30 * static_cast<double>(tau)) {
      out[i] = kNaN;
      continue;
    }
    out[i] = sc.dot(yc) / denom;
  }
  return out;
}

ObservationSeries reconstruct(const CommonTrendsResult& result, const std::string& series_id,
                              const std::vector<int>& trend_subset) {
  Eigen::Index row = -1;
  for (std::size_t i = 0; i < result.ids.size(); ++i)
    if (result.ids[i] == series_id) {
      row = static_cast<Eigen::Index>(i);
      break;
    }
  if (row < 0)
    throw std::invalid_argument("reconstruct: unknown series id '" + series_id + "'");

  std::set<int> subset;
  for (int j : trend_subset) {
    checked_index(j, result.states.cols());
    subset.insert(j);
  }

  ObservationSeries out;
  out.id = series_id;
  out.origin = result.origin;
  out.values = Eigen::VectorXd::Zero(result.states.rows());
  for (int j : subset)
    out.values += result.loadings(row, j - 1) * result.states.col(j - 1);
  out.values.array() -= out.values.mean();
  return out;
}

}  // namespace trendkit
