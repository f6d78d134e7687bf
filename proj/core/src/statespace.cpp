#include "trendkit/statespace.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "trendkit/errors.hpp"

namespace trendkit {
namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;
// Innovation variances this small are treated as exactly degenerate fits
// (zero-variance corner of the parameter space) rather than errors.
constexpr double kMinInnovationVar = 1e-12;
// Z Pinf Z' depends only on the transition/observation structure, never on
// the variance parameters, so an absolute cut is scale-safe.
constexpr double kDiffuseVarTol = 1e-8;
// Pinf entries below this are rounding residue of an exactly-resolved prior.
constexpr double kDiffuseResolved = 1e-10;
// Relative change of the predicted covariance below which the filter locks
// the Riccati recursion (re-opened by any missing observation).
constexpr double kSteadyTol = 1e-14;

double max_abs(const Eigen::MatrixXd& a) {
  return a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff();
}

// Row-sparse view of the transition matrix.  Structural models have ~15% fill
// and the filter spends nearly all its time in T*x and T*P*T' products.
class TransitionOps {
 public:
  explicit TransitionOps(const Eigen::MatrixXd& t) : dense_(t), m_(t.rows()) {
    rows_.resize(static_cast<std::size_t>(m_));
    Eigen::Index nnz = 0;
    for (Eigen::Index i = 0; i < m_; ++i) {
      for (Eigen::Index j = 0; j < m_; ++j) {
        if (t(i, j) != 0.0) {
          rows_[static_cast<std::size_t>(i)].emplace_back(j, t(i, j));
          ++nnz;
        }
      }
    }
    use_dense_ = nnz > (m_ * m_ * 3) / 5;
    scratch_.resize(m_, m_);
  }

  void apply_vec(const Eigen::VectorXd& x, Eigen::VectorXd& out) const {
    if (use_dense_) {
      out.noalias() = dense_ * x;
      return;
    }
    out.setZero();
    for (Eigen::Index i = 0; i < m_; ++i) {
      double acc = 0.0;
      for (const auto& [j, v] : rows_[static_cast<std::size_t>(i)]) acc += v * x[j];
      out[i] = acc;
    }
  }

  // out = T * b
  void apply_left(const Eigen::MatrixXd& b, Eigen::MatrixXd& out) const {
    if (use_dense_) {
      out.noalias() = dense_ * b;
      return;
    }
    out.setZero();
    for (Eigen::Index i = 0; i < m_; ++i) {
      for (const auto& [j, v] : rows_[static_cast<std::size_t>(i)])
        out.row(i) += v * b.row(j);
    }
  }

  // out = T * p * T' using `tmp` as scratch (both m x m).
  void sandwich(const Eigen::MatrixXd& p, Eigen::MatrixXd& tmp,
                Eigen::MatrixXd& out) const {
    apply_left(p, tmp);           // tmp = T P
    scratch_ = tmp.transpose();   // scratch = (T P)'
    apply_left(scratch_, out);    // out = T (T P)'
    out.transposeInPlace();       // out = T P T'
  }

 private:
  Eigen::MatrixXd dense_;
  Eigen::Index m_;
  std::vector<std::vector<std::pair<Eigen::Index, double>>> rows_;
  bool use_dense_ = false;
  mutable Eigen::MatrixXd scratch_;
};

void check_square(const Eigen::MatrixXd& a, Eigen::Index m, const char* name) {
  if (a.rows() != m || a.cols() != m)
    throw std::invalid_argument(std::string(name) +
                                ": expected square matrix of the state dimension");
  if (!a.allFinite())
    throw std::invalid_argument(std::string(name) + ": non-finite entries");
}

}  // namespace

void GaussianStateSpace::validate() const {
  const Eigen::Index m = transition.rows();
  if (m == 0) throw std::invalid_argument("state dimension must be positive");
  check_square(transition, m, "transition");
  check_square(state_cov, m, "state_cov");
  check_square(init_cov, m, "init_cov");
  if (obs_row.size() != m)
    throw std::invalid_argument("obs_row: expected length equal to the state dimension");
  if (init_mean.size() != m)
    throw std::invalid_argument("init_mean: expected length equal to the state dimension");
  if (!obs_row.allFinite() || !init_mean.allFinite())
    throw std::invalid_argument("obs_row/init_mean: non-finite entries");
  if (!(obs_var >= 0.0) || !std::isfinite(obs_var))
    throw std::invalid_argument("obs_var must be nonnegative and finite");
  if (!diffuse.empty() && static_cast<Eigen::Index>(diffuse.size()) != m)
    throw std::invalid_argument("diffuse: expected one flag per state");
}

namespace {

// One forward pass.  When `out` is null only the log likelihood accumulates;
// both modes run the identical arithmetic, so their results agree bitwise.
double run_filter(const GaussianStateSpace& model, const ObservationSeries& obs,
                  FilterOutput* out, Eigen::Index* contributing,
                  Eigen::Index* diffuse_len) {
  model.validate();
  const Eigen::Index m = model.dim();
  const Eigen::Index tau = obs.length();
  if (tau == 0) throw DataError("series '" + obs.id + "' is empty");

  const TransitionOps trans(model.transition);
  const Eigen::VectorXd& z = model.obs_row;
  const double h = model.obs_var;

  Eigen::VectorXd a = model.init_mean;
  Eigen::MatrixXd pstar = model.init_cov;
  Eigen::MatrixXd pinf = Eigen::MatrixXd::Zero(m, m);
  bool in_diffuse = false;
  if (model.any_diffuse()) {
    for (Eigen::Index i = 0; i < m; ++i)
      if (model.diffuse[static_cast<std::size_t>(i)]) {
        pinf(i, i) = 1.0;
        // the proper prior of a diffuse state is ignored
        pstar.row(i).setZero();
        pstar.col(i).setZero();
        a[i] = 0.0;
      }
    in_diffuse = true;
  }

  if (out) {
    out->dim = m;
    out->length = tau;
    out->predicted_mean.resize(tau, m);
    out->predicted_cov.assign(static_cast<std::size_t>(tau), Eigen::MatrixXd());
    out->predicted_diffuse.assign(static_cast<std::size_t>(tau), Eigen::MatrixXd());
    out->filtered_mean.resize(tau, m);
    out->filtered_cov.assign(static_cast<std::size_t>(tau), Eigen::MatrixXd());
    out->innovations =
        Eigen::VectorXd::Constant(tau, std::numeric_limits<double>::quiet_NaN());
    out->innovation_var = out->innovations;
    out->diffuse_var = Eigen::VectorXd::Zero(tau);
    out->skipped.assign(static_cast<std::size_t>(tau), 0);
    out->diffuse_step.assign(static_cast<std::size_t>(tau), 0);
  }

  double ll = 0.0;
  Eigen::Index n_contrib = 0;
  Eigen::Index d_len = 0;

  // steady-state lock
  bool frozen = false;
  double fro_f = 0.0, fro_logf = 0.0;
  Eigen::VectorXd fro_k, fro_m;
  Eigen::MatrixXd fro_p, fro_pfil;

  Eigen::VectorXd mstar(m), minf(m), k0(m), k1(m), tmstar(m), tminf(m), anew(m);
  Eigen::MatrixXd scratch(m, m), pnew(m, m), pinf_new(m, m);

  for (Eigen::Index t = 0; t < tau; ++t) {
    const bool miss = obs.is_missing(t);
    if (!miss && !std::isfinite(obs.values[t]))
      throw DataError("series '" + obs.id + "': non-finite value at step " +
                      std::to_string(t));
    if (in_diffuse) ++d_len;

    if (out) {
      out->predicted_mean.row(t) = a.transpose();
      out->predicted_cov[static_cast<std::size_t>(t)] = frozen ? fro_p : pstar;
      if (in_diffuse) out->predicted_diffuse[static_cast<std::size_t>(t)] = pinf;
      out->skipped[static_cast<std::size_t>(t)] = miss ? 1 : 0;
    }

    if (frozen && !miss) {
      const double v = obs.values[t] - z.dot(a);
      ll += -0.5 * (kLog2Pi + fro_logf + v * v / fro_f);
      ++n_contrib;
      if (out) {
        out->innovations[t] = v;
        out->innovation_var[t] = fro_f;
        out->filtered_mean.row(t) = (a + fro_m * (v / fro_f)).transpose();
        out->filtered_cov[static_cast<std::size_t>(t)] = fro_pfil;
      }
      trans.apply_vec(a, anew);
      a = anew + fro_k * v;
      continue;
    }
    if (frozen) {
      // a gap re-opens the covariance recursion
      pstar = fro_p;
      frozen = false;
    }

    if (miss) {
      if (out) {
        out->filtered_mean.row(t) = a.transpose();
        out->filtered_cov[static_cast<std::size_t>(t)] = pstar;
      }
      trans.apply_vec(a, anew);
      a = anew;
      trans.sandwich(pstar, scratch, pnew);
      pstar = 0.5 * (pnew + pnew.transpose()).eval() + model.state_cov;
      if (in_diffuse) {
        trans.sandwich(pinf, scratch, pinf_new);
        pinf = 0.5 * (pinf_new + pinf_new.transpose()).eval();
        if (max_abs(pinf) < kDiffuseResolved) {
          pinf.setZero();
          in_diffuse = false;
        }
      }
      continue;
    }

    const double y = obs.values[t];
    mstar.noalias() = pstar * z;
    const double fstar = z.dot(mstar) + h;
    const double v = y - z.dot(a);
    if (!std::isfinite(fstar) || !std::isfinite(v))
      throw NumericalError("filter: non-finite innovation at step " + std::to_string(t) +
                           " of series '" + obs.id + "'");

    double finf = 0.0;
    if (in_diffuse) {
      minf.noalias() = pinf * z;
      finf = z.dot(minf);
    }

    if (in_diffuse && finf > kDiffuseVarTol) {
      // exact-diffuse update: this observation pins down one direction of
      // the improper prior and carries no variance-dependent likelihood term
      const double f1 = 1.0 / finf;
      const double f2 = -fstar * f1 * f1;
      trans.apply_vec(minf, tminf);
      trans.apply_vec(mstar, tmstar);
      k0 = tminf * f1;
      k1 = tmstar * f1 + tminf * f2;

      if (out) {
        out->innovations[t] = v;
        out->innovation_var[t] = fstar;
        out->diffuse_var[t] = finf;
        out->diffuse_step[static_cast<std::size_t>(t)] = 1;
        out->filtered_mean.row(t) = (a + minf * (f1 * v)).transpose();
        Eigen::MatrixXd pfil =
            pstar - (mstar * minf.transpose() + minf * mstar.transpose()) * f1 +
            minf * minf.transpose() * (fstar * f1 * f1);
        out->filtered_cov[static_cast<std::size_t>(t)] = 0.5 * (pfil + pfil.transpose());
      }

      trans.apply_vec(a, anew);
      a = anew + k0 * v;
      trans.sandwich(pstar, scratch, pnew);
      pnew.noalias() -= (finf * k0) * k1.transpose();
      pnew.noalias() -= tmstar * k0.transpose();
      pstar = 0.5 * (pnew + pnew.transpose()).eval() + model.state_cov;
      trans.sandwich(pinf, scratch, pinf_new);
      pinf_new.noalias() -= (finf * k0) * k0.transpose();
      pinf = 0.5 * (pinf_new + pinf_new.transpose()).eval();
      if (max_abs(pinf) < kDiffuseResolved) {
        pinf.setZero();
        in_diffuse = false;
      }
      continue;
    }

    // standard Gaussian update (also used inside the diffuse phase whenever
    // the improper prior does not project onto this observation)
    double f = fstar;
    if (f < kMinInnovationVar) f = kMinInnovationVar;
    ll += -0.5 * (kLog2Pi + std::log(f) + v * v / f);
    ++n_contrib;

    if (out) {
      out->innovations[t] = v;
      out->innovation_var[t] = f;
      out->filtered_mean.row(t) = (a + mstar * (v / f)).transpose();
      Eigen::MatrixXd pfil = pstar - mstar * mstar.transpose() / f;
      out->filtered_cov[static_cast<std::size_t>(t)] = 0.5 * (pfil + pfil.transpose());
    }

    trans.apply_vec(mstar, tmstar);
    const Eigen::VectorXd k = tmstar / f;
    trans.apply_vec(a, anew);
    a = anew + k * v;

    const Eigen::MatrixXd pprev = pstar;
    trans.sandwich(pstar, scratch, pnew);
    pnew.noalias() -= (f * k) * k.transpose();
    pstar = 0.5 * (pnew + pnew.transpose()).eval() + model.state_cov;

    if (in_diffuse) {
      trans.sandwich(pinf, scratch, pinf_new);
      pinf = 0.5 * (pinf_new + pinf_new.transpose()).eval();
      if (max_abs(pinf) < kDiffuseResolved) {
        pinf.setZero();
        in_diffuse = false;
      }
    } else {
      const double scale = max_abs(pstar);
      if ((pstar - pprev).cwiseAbs().maxCoeff() <= kSteadyTol * (scale + 1e-300)) {
        frozen = true;
        fro_p = pstar;
        fro_m.noalias() = fro_p * z;
        fro_f = z.dot(fro_m) + h;
        if (fro_f < kMinInnovationVar) fro_f = kMinInnovationVar;
        fro_logf = std::log(fro_f);
        trans.apply_vec(fro_m, tmstar);
        fro_k = tmstar / fro_f;
        fro_pfil = fro_p - fro_m * fro_m.transpose() / fro_f;
        fro_pfil = 0.5 * (fro_pfil + fro_pfil.transpose()).eval();
      }
    }
  }

  if (!std::isfinite(ll))
    throw NumericalError("filter: log likelihood is not finite for series '" + obs.id + "'");
  if (contributing) *contributing = n_contrib;
  if (diffuse_len) *diffuse_len = d_len;
  return ll;
}

}  // namespace

FilterOutput filter(const GaussianStateSpace& model, const ObservationSeries& obs) {
  FilterOutput out;
  Eigen::Index contrib = 0, dlen = 0;
  out.loglik = run_filter(model, obs, &out, &contrib, &dlen);
  out.contributing_steps = contrib;
  out.diffuse_length = dlen;
  return out;
}

double loglik(const GaussianStateSpace& model, const ObservationSeries& obs) {
  return run_filter(model, obs, nullptr, nullptr, nullptr);
}

SmootherOutput smooth(const GaussianStateSpace& model, const FilterOutput& fwd) {
  const Eigen::Index m = fwd.dim;
  const Eigen::Index tau = fwd.length;
  if (m == 0 || tau == 0) throw std::invalid_argument("smooth: empty filter output");
  if (model.dim() != m) throw std::invalid_argument("smooth: model/filter dimension mismatch");

  const Eigen::MatrixXd& tr = model.transition;
  const Eigen::VectorXd& z = model.obs_row;

  SmootherOutput out;
  out.smoothed_mean.resize(tau, m);
  out.smoothed_cov.assign(static_cast<std::size_t>(tau), Eigen::MatrixXd());

  Eigen::VectorXd r0 = Eigen::VectorXd::Zero(m), r1 = Eigen::VectorXd::Zero(m);
  Eigen::MatrixXd n0 = Eigen::MatrixXd::Zero(m, m);
  Eigen::MatrixXd n1 = Eigen::MatrixXd::Zero(m, m);
  Eigen::MatrixXd n2 = Eigen::MatrixXd::Zero(m, m);

  auto set_plain = [&](Eigen::Index t, const Eigen::MatrixXd& pstar,
                       const Eigen::VectorXd& rprev, const Eigen::MatrixXd& nprev) {
    out.smoothed_mean.row(t) =
        (fwd.predicted_mean.row(t).transpose() + pstar * rprev).transpose();
    Eigen::MatrixXd vv = pstar - pstar * nprev * pstar;
    out.smoothed_cov[static_cast<std::size_t>(t)] = 0.5 * (vv + vv.transpose());
  };
  auto set_diffuse = [&](Eigen::Index t, const Eigen::MatrixXd& pstar,
                         const Eigen::MatrixXd& pinf, const Eigen::VectorXd& r0p,
                         const Eigen::VectorXd& r1p, const Eigen::MatrixXd& n0p,
                         const Eigen::MatrixXd& n1p, const Eigen::MatrixXd& n2p) {
    out.smoothed_mean.row(t) =
        (fwd.predicted_mean.row(t).transpose() + pstar * r0p + pinf * r1p).transpose();
    const Eigen::MatrixXd cross = pinf * n1p * pstar;
    Eigen::MatrixXd vv =
        pstar - pstar * n0p * pstar - cross - cross.transpose() - pinf * n2p * pinf;
    out.smoothed_cov[static_cast<std::size_t>(t)] = 0.5 * (vv + vv.transpose());
  };

  for (Eigen::Index t = tau - 1; t >= 0; --t) {
    const auto ut = static_cast<std::size_t>(t);
    const Eigen::MatrixXd& pstar = fwd.predicted_cov[ut];
    const Eigen::MatrixXd& pinf = fwd.predicted_diffuse[ut];
    const bool in_diffuse = pinf.size() > 0 && max_abs(pinf) > 0.0;
    const bool miss = fwd.skipped[ut] != 0;

    if (!in_diffuse) {
      if (miss) {
        const Eigen::VectorXd rprev = tr.transpose() * r0;
        Eigen::MatrixXd nprev = tr.transpose() * n0 * tr;
        nprev = 0.5 * (nprev + nprev.transpose()).eval();
        set_plain(t, pstar, rprev, nprev);
        r0 = rprev;
        n0 = nprev;
      } else {
        const double f = fwd.innovation_var[t];
        const double v = fwd.innovations[t];
        const Eigen::VectorXd k = tr * (pstar * z) / f;
        const Eigen::MatrixXd l = tr - k * z.transpose();
        const Eigen::VectorXd rprev = z * (v / f) + l.transpose() * r0;
        Eigen::MatrixXd nprev = (z * z.transpose()) / f + l.transpose() * n0 * l;
        nprev = 0.5 * (nprev + nprev.transpose()).eval();
        set_plain(t, pstar, rprev, nprev);
        r0 = rprev;
        n0 = nprev;
      }
      continue;
    }

    Eigen::VectorXd r0p, r1p;
    Eigen::MatrixXd n0p, n1p, n2p;
    if (miss) {
      r0p = tr.transpose() * r0;
      r1p = tr.transpose() * r1;
      n0p = tr.transpose() * n0 * tr;
      n1p = tr.transpose() * n1 * tr;
      n2p = tr.transpose() * n2 * tr;
    } else if (fwd.diffuse_step[ut]) {
      const double finf = fwd.diffuse_var[t];
      const double fstar = fwd.innovation_var[t];
      const double v = fwd.innovations[t];
      const double f1 = 1.0 / finf;
      const double f2 = -fstar * f1 * f1;
      const Eigen::VectorXd minf = pinf * z;
      const Eigen::VectorXd mstar = pstar * z;
      const Eigen::VectorXd k0 = tr * minf * f1;
      const Eigen::VectorXd k1 = tr * mstar * f1 + tr * minf * f2;
      const Eigen::MatrixXd l0 = tr - k0 * z.transpose();
      const Eigen::MatrixXd l1 = -(k1 * z.transpose());

      r0p = l0.transpose() * r0;
      r1p = z * (f1 * v) + l0.transpose() * r1 + l1.transpose() * r0;
      n0p = l0.transpose() * n0 * l0;
      n1p = (z * z.transpose()) * f1 + l0.transpose() * n1 * l0 +
            l1.transpose() * n0 * l0 + l0.transpose() * n0 * l1;
      n2p = (z * z.transpose()) * f2 + l0.transpose() * n2 * l0 +
            l1.transpose() * n1 * l0 + l0.transpose() * n1 * l1 +
            l1.transpose() * n0 * l1;
    } else {
      // inside the diffuse phase, but a standard update was applied
      const double f = fwd.innovation_var[t];
      const double v = fwd.innovations[t];
      const Eigen::VectorXd k = tr * (pstar * z) / f;
      const Eigen::MatrixXd l = tr - k * z.transpose();
      r0p = z * (v / f) + l.transpose() * r0;
      r1p = l.transpose() * r1;
      n0p = (z * z.transpose()) / f + l.transpose() * n0 * l;
      n1p = l.transpose() * n1 * l;
      n2p = l.transpose() * n2 * l;
    }
    n0p = 0.5 * (n0p + n0p.transpose()).eval();
    n1p = 0.5 * (n1p + n1p.transpose()).eval();
    n2p = 0.5 * (n2p + n2p.transpose()).eval();
    set_diffuse(t, pstar, pinf, r0p, r1p, n0p, n1p, n2p);
    r0 = r0p;
    r1 = r1p;
    n0 = n0p;
    n1 = n1p;
    n2 = n2p;
  }

  return out;
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& cov) {
  if (cov.rows() != cov.cols()) throw std::invalid_argument("psd_sqrt: matrix must be square");
  if (cov.size() == 0) return cov;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (cov + cov.transpose()));
  if (es.info() != Eigen::Success) throw NumericalError("psd_sqrt: eigendecomposition failed");
  const Eigen::VectorXd d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

SimulationOutput simulate(const GaussianStateSpace& model, Eigen::Index length,
                          std::uint64_t seed,
                          const std::optional<Eigen::VectorXd>& initial_state) {
  model.validate();
  if (length <= 0) throw std::invalid_argument("simulate: length must be positive");
  if (model.any_diffuse() && !initial_state)
    throw std::invalid_argument(
        "simulate: a model with diffuse states needs an explicit initial state");
  const Eigen::Index m = model.dim();
  if (initial_state && initial_state->size() != m)
    throw std::invalid_argument("simulate: initial state has wrong dimension");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto draw = [&](Eigen::Index n) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = gauss(rng);
    return v;
  };

  const Eigen::MatrixXd state_sqrt = psd_sqrt(model.state_cov);
  const double obs_sd = std::sqrt(model.obs_var);

  SimulationOutput out;
  out.states.resize(length, m);

  Eigen::VectorXd x = initial_state
                          ? *initial_state
                          : Eigen::VectorXd(model.init_mean + psd_sqrt(model.init_cov) * draw(m));

  Eigen::VectorXd y(length);
  for (Eigen::Index t = 0; t < length; ++t) {
    if (t > 0) x = (model.transition * x + state_sqrt * draw(m)).eval();
    out.states.row(t) = x.transpose();
    y[t] = model.obs_row.dot(x) + obs_sd * gauss(rng);
  }

  out.observations.id = "sim";
  out.observations.origin = MonthStamp{1958, 1};
  out.observations.values = std::move(y);
  return out;
}

}  // namespace trendkit
