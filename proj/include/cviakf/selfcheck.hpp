#pragma once

// Numerical self-checks for the nonlinear update: the Monte Carlo gradient
// estimator against finite differences of its own sampled objective, and the
// positive-definiteness of the compensated precision step.

#include "cviakf/filters.hpp"
#include "cviakf/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>

namespace cviakf {

struct CheckReport {
  std::string name;
  bool passed = false;
  int trials = 0;
  int failures = 0;
  double worst = 0.0;  // largest error measure seen
};

namespace detail {

template <int N>
Matrix<N> random_spd(std::mt19937_64& rng, double min_eig, double max_eig) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Matrix<N> a;
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j) a(i, j) = normal(rng);
  const Eigen::HouseholderQR<Matrix<N>> qr(a);
  const Matrix<N> q = qr.householderQ();
  Vector<N> eig;
  // log-uniform spectrum
  for (int i = 0; i < N; ++i) eig(i) = min_eig * std::pow(max_eig / min_eig, unit(rng));
  return symmetrize<N>(q * eig.asDiagonal() * q.transpose());
}

// D(x, L) = (1/S) sum_s r_s^T W r_s, r_s = wrap(y - h(x + L eps_s)).
inline double sampled_objective(const MeasurementModel& model, const Measurement& y, const State& mean,
                                const StateMatrix& l, const MeasurementMatrix& w, const SampleSet<kStateDim>& eps) {
  double acc = 0.0;
  for (Eigen::Index s = 0; s < eps.cols(); ++s) {
    const Measurement r = model.wrap_residual(y - model.measure(mean + l * eps.col(s)));
    acc += r.dot(w * r);
  }
  return acc / static_cast<double>(eps.cols());
}

}  // namespace detail

/// Compares estimator gradients with central differences of the sampled
/// objective at random range/azimuth states. The covariance derivative is
/// taken through the factor: for each entry of L (as a free matrix),
/// then mapped with grad_P = sym(0.5 * dD/dL * L^{-1}).
template <class Estimator = ReparameterizedGradient>
CheckReport gradient_check(int states = 50, std::uint64_t seed = 1, int samples = 64,
                           double tolerance = 1e-5, const Estimator& estimator = {}) {
  CheckReport report{"gradient-vs-finite-difference", true, states, 0, 0.0};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  constexpr double pi = std::numbers::pi;
  MeasurementModel model{SensorKind::RangeAzimuth, {}};
  model.nominal_r << 100.0, 0.0, 0.0, 1e-6;

  for (int t = 0; t < states; ++t) {
    const double range = 1e3 + (1e6 - 1e3) * unit(rng);
    const double az = -pi + 2.0 * pi * unit(rng);
    State truth;
    truth << range * std::cos(az), 100.0 * normal(rng), range * std::sin(az), 100.0 * normal(rng);
    const StateMatrix p = detail::random_spd<kStateDim>(rng, 1.0, 1e4);
    const State mean = truth + 30.0 * Vector<kStateDim>::NullaryExpr([&] { return normal(rng); });
    const Measurement y = model.wrap_residual(
        model.measure(truth) + Measurement(10.0 * normal(rng), 1e-3 * normal(rng)));
    const MeasurementMatrix w =
        symmetrize<kMeasDim>(spd_inverse<kMeasDim>((0.5 + unit(rng)) * model.nominal_r, "noise"));
    const SampleSet<kStateDim> eps = draw_standard_normal<kStateDim>(samples, rng);
    const StateMatrix l = cholesky_lower<kStateDim>(p);

    const auto analytic = estimator.gradients(model, y, mean, l, w, eps);

    State fd_mean;
    for (int i = 0; i < kStateDim; ++i) {
      const double h = 1e-6 * (1.0 + std::abs(mean(i)));
      State lo = mean, hi = mean;
      lo(i) -= h;
      hi(i) += h;
      fd_mean(i) = (detail::sampled_objective(model, y, hi, l, w, eps) -
                    detail::sampled_objective(model, y, lo, l, w, eps)) / (hi(i) - lo(i));
    }
    // One step for every entry of L, scaled to the factor. Per-entry steps
    // on the (zero) upper triangle are too small once mapped through L^{-1}.
    const double h_l = 1e-4 * l.cwiseAbs().maxCoeff();
    StateMatrix fd_l;
    for (int i = 0; i < kStateDim; ++i) {
      for (int j = 0; j < kStateDim; ++j) {
        StateMatrix lo = l, hi = l;
        lo(i, j) -= h_l;
        hi(i, j) += h_l;
        fd_l(i, j) = (detail::sampled_objective(model, y, mean, hi, w, eps) -
                      detail::sampled_objective(model, y, mean, lo, w, eps)) / (hi(i, j) - lo(i, j));
      }
    }
    const StateMatrix linv = l.triangularView<Eigen::Lower>().solve(StateMatrix::Identity());
    const StateMatrix fd_cov = symmetrize<kStateDim>(0.5 * fd_l * linv);

    auto rel = [](const auto& a, const auto& b) {
      const double scale = std::max(b.cwiseAbs().maxCoeff(), 1e-300);
      return (a - b).cwiseAbs().maxCoeff() / scale;
    };
    const double e_mean = rel(analytic.mean, fd_mean);
    const double e_cov = rel(Vector<kStateDim>(analytic.cov.diagonal()), Vector<kStateDim>(fd_cov.diagonal()));
    const double err = std::max(e_mean, e_cov);
    report.worst = std::max(report.worst, err);
    if (!(err < tolerance)) ++report.failures;
  }
  report.passed = report.failures == 0;
  return report;
}

/// Fuzzes the compensated precision step with SPD precisions, arbitrary
/// symmetric (often indefinite) targets and beta in (0, 1].
inline CheckReport pd_preservation_check(int trials = 1000, std::uint64_t seed = 2) {
  CheckReport report{"pd-preservation", true, trials, 0, 0.0};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int t = 0; t < trials; ++t) {
    const StateMatrix precision = detail::random_spd<kStateDim>(rng, 1e-3, 1e3);
    StateMatrix target;
    const double spread = std::pow(10.0, -3.0 + 6.0 * unit(rng));
    for (int i = 0; i < kStateDim; ++i)
      for (int j = 0; j < kStateDim; ++j) target(i, j) = spread * normal(rng);
    target = symmetrize<kStateDim>(target);
    const double beta = 1.0 - unit(rng);  // (0, 1]
    const StateMatrix cov = spd_inverse<kStateDim>(precision, "fuzzed precision");
    const StateMatrix next = compensated_precision_step<kStateDim>(precision, cov, target, beta);
    const double lambda_min = smallest_eigenvalue<kStateDim>(next);
    if (!is_spd<kStateDim>(next)) {
      ++report.failures;
      report.worst = std::min(report.worst, lambda_min);
    }
  }
  report.passed = report.failures == 0;
  return report;
}

}  // namespace cviakf
