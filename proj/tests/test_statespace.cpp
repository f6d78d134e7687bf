#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include <Eigen/Dense>

#include "oracles.hpp"
#include "trendkit/errors.hpp"
#include "trendkit/statespace.hpp"

using namespace trendkit;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Scalar AR(1)-plus-noise model, the workhorse for targeted checks.
GaussianStateSpace ar1_model(double phi, double q, double h) {
  GaussianStateSpace m;
  m.transition = MatrixXd::Constant(1, 1, phi);
  m.state_cov = MatrixXd::Constant(1, 1, q);
  m.obs_row = VectorXd::Constant(1, 1.0);
  m.obs_var = h;
  m.init_mean = VectorXd::Zero(1);
  m.init_cov = MatrixXd::Constant(1, 1, q / (1.0 - phi * phi));
  return m;
}

// Local level with a diffuse level state.
GaussianStateSpace local_level_diffuse(double q, double h) {
  GaussianStateSpace m = ar1_model(1.0, q, h);
  m.init_cov.setZero();
  m.diffuse = {1};
  return m;
}

}  // namespace

TEST_CASE("filter, smoother, and loglik match dense joint-Gaussian conditioning") {
  std::mt19937_64 rng(20260815u);
  double worst_moment = 0.0, worst_loglik = 0.0;
  for (int rep = 0; rep < 30; ++rep) {
    const oracle::RandomCase rc = oracle::random_proper_case(rng);
    const oracle::OracleDeviation dev = oracle::compare_case(rc);
    worst_moment = std::max(worst_moment, dev.moments);
    worst_loglik = std::max(worst_loglik, dev.loglik);
  }
  CHECK(worst_moment < 1e-8);
  CHECK(worst_loglik < 1e-8);
}

TEST_CASE("missing observations leave the filtered state at its prediction") {
  const GaussianStateSpace m = ar1_model(0.8, 0.5, 0.3);
  ObservationSeries obs;
  obs.id = "gap";
  obs.origin = {1958, 1};
  obs.values.resize(8);
  obs.values << 0.2, -0.4, 1.1, 0.0, 0.3, -0.2, 0.5, 0.1;
  obs.missing = {0, 0, 0, 1, 0, 0, 1, 0};
  obs.values[3] = std::numeric_limits<double>::quiet_NaN();
  obs.values[6] = std::numeric_limits<double>::quiet_NaN();

  const FilterOutput f = filter(m, obs);
  for (Eigen::Index t : {Eigen::Index(3), Eigen::Index(6)}) {
    CHECK(f.skipped[static_cast<std::size_t>(t)] == 1);
    CHECK(f.filtered_mean.row(t) == f.predicted_mean.row(t));
    CHECK(f.filtered_cov[static_cast<std::size_t>(t)] ==
          f.predicted_cov[static_cast<std::size_t>(t)]);
    CHECK(std::isnan(f.innovations[t]));
    CHECK(std::isnan(f.innovation_var[t]));
  }
  CHECK(f.contributing_steps == 6);
}

TEST_CASE("loglik-only path reproduces the filter's log likelihood bitwise") {
  // includes a series long enough to enter the steady-state regime, so both
  // code paths cover the frozen-gain branch
  std::mt19937_64 rng(7u);
  for (int rep = 0; rep < 4; ++rep) {
    const GaussianStateSpace m = ar1_model(0.9, 0.4, 0.7);
    const Eigen::Index tau = (rep < 2) ? 40 : 3000;
    auto sim = simulate(m, tau, 100 + static_cast<std::uint64_t>(rep));
    if (rep % 2 == 1) {
      sim.observations.missing.assign(static_cast<std::size_t>(tau), 0);
      sim.observations.missing[5] = 1;
      sim.observations.values[5] = std::numeric_limits<double>::quiet_NaN();
    }
    const double fast = loglik(m, sim.observations);
    const double full = filter(m, sim.observations).loglik;
    CHECK(fast == full);
  }
}

TEST_CASE("exact diffuse initialization agrees with the large-variance limit") {
  // same model twice: exact diffuse level vs a proper prior with a huge
  // variance; smoothed and filtered moments must agree to the O(1/kappa)
  // approximation error
  const double kappa = 1e10;
  GaussianStateSpace exact = local_level_diffuse(0.3, 1.0);
  GaussianStateSpace big = exact;
  big.diffuse.clear();
  big.init_cov(0, 0) = kappa;

  ObservationSeries obs;
  obs.id = "ll";
  obs.origin = {1958, 1};
  obs.values.resize(30);
  std::mt19937_64 rng(42u);
  std::normal_distribution<double> z;
  double level = 5.0;
  for (Eigen::Index t = 0; t < obs.values.size(); ++t) {
    level += 0.5 * z(rng);
    obs.values[t] = level + z(rng);
  }

  const FilterOutput fe = filter(exact, obs);
  const FilterOutput fb = filter(big, obs);
  const SmootherOutput se = smooth(exact, fe);
  const SmootherOutput sb = smooth(big, fb);

  CHECK(fe.diffuse_length == 1);
  CHECK(fe.contributing_steps == obs.values.size() - 1);
  double worst = 0.0;
  for (Eigen::Index t = 0; t < obs.values.size(); ++t) {
    worst = std::max(worst, std::abs(se.smoothed_mean(t, 0) - sb.smoothed_mean(t, 0)));
    worst = std::max(worst, std::abs(se.smoothed_cov[static_cast<std::size_t>(t)](0, 0) -
                                     sb.smoothed_cov[static_cast<std::size_t>(t)](0, 0)));
    if (t >= fe.diffuse_length) {
      worst = std::max(worst, std::abs(fe.filtered_mean(t, 0) - fb.filtered_mean(t, 0)));
      worst = std::max(worst, std::abs(fe.filtered_cov[static_cast<std::size_t>(t)](0, 0) -
                                       fb.filtered_cov[static_cast<std::size_t>(t)](0, 0)));
    }
  }
  CHECK(worst < 1e-4);

  // exact-diffuse update steps carry no likelihood contribution, so the
  // large-variance loglik matches once those steps' terms are removed
  double big_diffuse_part = 0.0;
  constexpr double kLog2Pi = 1.8378770664093454836;
  for (Eigen::Index t = 0; t < obs.values.size(); ++t) {
    if (!fe.diffuse_step[static_cast<std::size_t>(t)]) continue;
    big_diffuse_part += -0.5 * (kLog2Pi + std::log(fb.innovation_var[t]) +
                                fb.innovations[t] * fb.innovations[t] / fb.innovation_var[t]);
  }
  CHECK(std::abs((fb.loglik - big_diffuse_part) - fe.loglik) < 1e-4);
}

TEST_CASE("diffuse filtering with a leading gap resolves one step later") {
  const GaussianStateSpace m = local_level_diffuse(0.2, 0.5);
  ObservationSeries obs;
  obs.id = "lead-gap";
  obs.origin = {1958, 1};
  obs.values.resize(10);
  obs.values << 0, 1.0, 1.2, 0.9, 1.1, 1.0, 0.8, 1.3, 1.2, 1.0;
  obs.missing = {1, 0, 0, 0, 0, 0, 0, 0, 0, 0};
  obs.values[0] = std::numeric_limits<double>::quiet_NaN();

  const FilterOutput f = filter(m, obs);
  CHECK(f.diffuse_length == 2);  // skipped step cannot resolve the prior
  CHECK(f.contributing_steps == 8);
  CHECK(f.diffuse_step[1] == 1);
  CHECK(f.diffuse_step[2] == 0);
}

TEST_CASE("simulate is deterministic per seed and guards diffuse models") {
  const GaussianStateSpace proper = ar1_model(0.7, 0.3, 0.2);
  const auto a = simulate(proper, 50, 99u);
  const auto b = simulate(proper, 50, 99u);
  const auto c = simulate(proper, 50, 100u);
  CHECK(a.observations.values == b.observations.values);
  CHECK(a.states == b.states);
  CHECK(a.observations.values != c.observations.values);

  const GaussianStateSpace diffuse = local_level_diffuse(0.3, 1.0);
  CHECK_THROWS_AS(simulate(diffuse, 10, 1u), std::invalid_argument);
  const auto d = simulate(diffuse, 10, 1u, VectorXd::Zero(1));
  CHECK(d.observations.values.size() == 10);
}

TEST_CASE("model validation rejects malformed inputs") {
  GaussianStateSpace m = ar1_model(0.5, 0.1, 0.2);
  CHECK_NOTHROW(m.validate());

  GaussianStateSpace bad_obs = m;
  bad_obs.obs_var = -1.0;
  CHECK_THROWS_AS(bad_obs.validate(), std::invalid_argument);

  GaussianStateSpace bad_shape = m;
  bad_shape.obs_row.resize(2);
  CHECK_THROWS_AS(bad_shape.validate(), std::invalid_argument);

  GaussianStateSpace bad_flags = m;
  bad_flags.diffuse = {1, 0};
  CHECK_THROWS_AS(bad_flags.validate(), std::invalid_argument);

  ObservationSeries empty;
  empty.id = "none";
  CHECK_THROWS_AS(filter(m, empty), DataError);

  // non-finite values count as missing rather than poisoning the recursion
  ObservationSeries infinite;
  infinite.id = "inf";
  infinite.values.resize(3);
  infinite.values << 0.0, std::numeric_limits<double>::infinity(), 1.0;
  const FilterOutput f = filter(m, infinite);
  CHECK(f.skipped[1] == 1);
  CHECK(f.contributing_steps == 2);
}

TEST_CASE("psd_sqrt squares back to the input and clamps tiny negatives") {
  std::mt19937_64 rng(3u);
  std::normal_distribution<double> z;
  MatrixXd g(4, 4);
  for (Eigen::Index i = 0; i < 4; ++i)
    for (Eigen::Index j = 0; j < 4; ++j) g(i, j) = z(rng);
  const MatrixXd cov = g * g.transpose();
  const MatrixXd s = psd_sqrt(cov);
  CHECK((s * s - cov).cwiseAbs().maxCoeff() < 1e-10);

  MatrixXd nearly(2, 2);
  nearly << 1.0, 0.0, 0.0, -1e-13;
  const MatrixXd r = psd_sqrt(nearly);
  CHECK((r * r - (MatrixXd(2, 2) << 1, 0, 0, 0).finished()).cwiseAbs().maxCoeff() < 1e-10);
}
