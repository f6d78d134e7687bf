// Micro-benchmarks for the hot paths: the Kalman pass over a production-size
// structural model, a full maximum-likelihood fit, Hankel assembly over the
// full panel width, the steady-state gain solve, and box averaging.

#include <benchmark/benchmark.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "trendkit/grid.hpp"
#include "trendkit/series.hpp"
#include "trendkit/statespace.hpp"
#include "trendkit/structural.hpp"
#include "trendkit/subspace.hpp"

using Eigen::MatrixXd;
using Eigen::VectorXd;
using namespace trendkit;

namespace {

constexpr double kPi = 3.14159265358979323846;

ObservationSeries production_series(int tau, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  ObservationSeries obs;
  obs.id = "bench";
  obs.origin = {1958, 1};
  obs.values.resize(tau);
  double mu = 0.0;
  for (int t = 0; t < tau; ++t) {
    mu += 0.02 * z(rng);
    obs.values[t] = mu + 1.2 * std::sin(2 * kPi * (t % 12) / 12.0) + 0.3 * z(rng);
  }
  return obs;
}

StructuralParams typical_params() {
  StructuralParams p;
  p.var_trend = 4e-4;
  p.var_seasonal = 1e-6;
  p.var_cycle = 0.01;
  p.var_error = 0.09;
  return p;
}

SeriesPanel wide_panel(int n_series, int tau, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  MatrixXd f(tau, 2);
  for (int t = 0; t < tau; ++t)
    for (int j = 0; j < 2; ++j) f(t, j) = (t ? 0.97 * f(t - 1, j) : 0.0) + 0.1 * z(rng);
  SeriesPanel panel;
  panel.origin = {1958, 1};
  panel.values.resize(tau, n_series);
  for (int i = 0; i < n_series; ++i) {
    panel.ids.push_back("s" + std::to_string(i));
    const double l1 = std::sin(2 * kPi * (i + 0.5) / n_series);
    for (int t = 0; t < tau; ++t)
      panel.values(t, i) = f(t, 0) + l1 * f(t, 1) + 0.15 * z(rng);
  }
  return panel;
}

void bm_kalman_filter(benchmark::State& state) {
  const ObservationSeries obs = production_series(564, 1u);
  const GaussianStateSpace model = assemble(StructuralSpec{}, typical_params());
  for (auto _ : state) {
    const FilterOutput out = filter(model, obs);
    benchmark::DoNotOptimize(out.loglik);
  }
}
BENCHMARK(bm_kalman_filter);

void bm_loglik(benchmark::State& state) {
  const ObservationSeries obs = production_series(564, 1u);
  const GaussianStateSpace model = assemble(StructuralSpec{}, typical_params());
  for (auto _ : state) {
    const double ll = loglik(model, obs);
    benchmark::DoNotOptimize(ll);
  }
}
BENCHMARK(bm_loglik);

void bm_smoother(benchmark::State& state) {
  const ObservationSeries obs = production_series(564, 1u);
  const GaussianStateSpace model = assemble(StructuralSpec{}, typical_params());
  for (auto _ : state) {
    const FilterOutput fwd = filter(model, obs);
    const SmootherOutput out = smooth(model, fwd);
    benchmark::DoNotOptimize(out.smoothed_mean);
  }
}
BENCHMARK(bm_smoother);

void bm_full_fit(benchmark::State& state) {
  const ObservationSeries obs = production_series(564, 2u);
  for (auto _ : state) {
    const DecompositionResult d = fit(obs, StructuralSpec{}, FitSettings{});
    benchmark::DoNotOptimize(d.loglik);
  }
}
BENCHMARK(bm_full_fit)->Unit(benchmark::kMillisecond);

void bm_build_hankel(benchmark::State& state) {
  const SeriesPanel panel = wide_panel(252, 564, 3u);
  for (auto _ : state) {
    const HankelMatrices hm = build_hankel(panel, HankelSpec{});
    benchmark::DoNotOptimize(hm.hankel);
  }
}
BENCHMARK(bm_build_hankel)->Unit(benchmark::kMillisecond);

void bm_solve_riccati(benchmark::State& state) {
  // well-posed population system of moderate width
  const int n = 4, N = 24;
  std::mt19937_64 rng(4u);
  std::normal_distribution<double> z;
  MatrixXd a = MatrixXd::Zero(n, n);
  a.diagonal() << 0.97, 0.9, 0.8, 0.6;
  MatrixXd c(N, n);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < n; ++j) c(i, j) = z(rng);
  MatrixXd g(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) g(i, j) = 0.1 * z(rng);
  const MatrixXd qw = g * g.transpose();
  MatrixXd p = qw;
  for (int it = 0; it < 4000; ++it) p = a * p * a.transpose() + qw;
  const MatrixXd lag0 = c * p * c.transpose() + MatrixXd::Identity(N, N);
  const MatrixXd m = a * p * c.transpose();
  for (auto _ : state) {
    const RiccatiResult r = solve_riccati(a, c, m, lag0);
    benchmark::DoNotOptimize(r.gain);
  }
}
BENCHMARK(bm_solve_riccati);

void bm_box_average(benchmark::State& state) {
  GriddedDataset ds;
  for (int i = 0; i < 90; ++i) ds.lats.push_back(20.0 + 0.5 * (i + 0.5));
  for (int i = 0; i < 280; ++i) ds.lons.push_back(110.0 + 0.5 * (i + 0.5));
  ds.depths = {10.0};
  ds.origin = {1958, 1};
  ds.n_months = 564;
  std::mt19937_64 rng(5u);
  std::normal_distribution<double> z;
  MatrixXd vals(564, ds.n_cells());
  for (Eigen::Index t = 0; t < vals.rows(); ++t)
    for (Eigen::Index i = 0; i < vals.cols(); ++i) vals(t, i) = z(rng);
  ds.values = {vals};
  for (auto _ : state) {
    const BoxAverageResult res = box_average(ds, 10.0, Region{}, BoxAverageOptions{});
    benchmark::DoNotOptimize(res.panel.values);
  }
}
BENCHMARK(bm_box_average)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
