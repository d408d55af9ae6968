#pragma once

// State-space model descriptors: the nearly-constant-velocity transition and
// the two planar sensors (Cartesian position and range/azimuth radar).
// State layout is [x, vx, y, vy].

#include "cviakf/distributions.hpp"

#include <cmath>
#include <concepts>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>

namespace cviakf {

inline constexpr int kStateDim = 4;
inline constexpr int kMeasDim = 2;

using State = Vector<kStateDim>;
using StateMatrix = Matrix<kStateDim>;
using Measurement = Vector<kMeasDim>;
using MeasurementMatrix = Matrix<kMeasDim>;
using Jacobian = Matrix<kMeasDim, kStateDim>;

/// Maps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double r = std::remainder(a, two_pi);
  if (r <= -std::numbers::pi) r += two_pi;
  if (r > std::numbers::pi) r -= two_pi;
  return r;
}

struct ConstantVelocity {
  double period = 1.0;

  /// I2 (x) [[1, T], [0, 1]].
  StateMatrix transition_matrix() const {
    StateMatrix f = StateMatrix::Identity();
    f(0, 1) = period;
    f(2, 3) = period;
    return f;
  }

  /// I2 (x) [[T^3/3, T^2/2], [T^2/2, T]].
  StateMatrix nominal_q() const {
    const double t = period;
    Matrix<2> block;
    block << t * t * t / 3.0, t * t / 2.0, t * t / 2.0, t;
    StateMatrix q = StateMatrix::Zero();
    q.block<2, 2>(0, 0) = block;
    q.block<2, 2>(2, 2) = block;
    return q;
  }

  State apply(const State& x) const { return transition_matrix() * x; }
};

enum class SensorKind { LinearPosition, RangeAzimuth };

inline std::string_view to_string(SensorKind kind) {
  return kind == SensorKind::LinearPosition ? "linear" : "range-azimuth";
}

/// Planar sensor. Both built-in kinds measure two quantities of the 4-state.
struct MeasurementModel {
  static constexpr int state_dim = kStateDim;
  static constexpr int meas_dim = kMeasDim;

  SensorKind kind = SensorKind::LinearPosition;
  MeasurementMatrix nominal_r = MeasurementMatrix::Identity();

  bool is_linear() const { return kind == SensorKind::LinearPosition; }

  static Jacobian selector() {
    Jacobian h = Jacobian::Zero();
    h(0, 0) = 1.0;
    h(1, 2) = 1.0;
    return h;
  }

  Measurement measure(const State& x) const {
    if (kind == SensorKind::LinearPosition) return {x(0), x(2)};
    if (x(0) == 0.0 && x(2) == 0.0) {
      throw DomainError("azimuth undefined: target at sensor origin");
    }
    return {std::hypot(x(0), x(2)), std::atan2(x(2), x(0))};
  }

  Jacobian jacobian(const State& x) const {
    if (kind == SensorKind::LinearPosition) return selector();
    const double r2 = x(0) * x(0) + x(2) * x(2);
    if (r2 == 0.0) throw DomainError("range/azimuth Jacobian singular at sensor origin");
    const double r = std::sqrt(r2);
    Jacobian h = Jacobian::Zero();
    h(0, 0) = x(0) / r;
    h(0, 2) = x(2) / r;
    h(1, 0) = -x(2) / r2;
    h(1, 2) = x(0) / r2;
    return h;
  }

  Measurement wrap_residual(Measurement residual) const {
    if (kind == SensorKind::RangeAzimuth) residual(1) = wrap_angle(residual(1));
    return residual;
  }
};

/// y = H x with a constant H; used for generic-dimension problems and tests.
template <int N, int M>
struct LinearMeasurement {
  static constexpr int state_dim = N;
  static constexpr int meas_dim = M;

  Matrix<M, N> h;

  Vector<M> measure(const Vector<N>& x) const { return h * x; }
  Matrix<M, N> jacobian(const Vector<N>&) const { return h; }
  Vector<M> wrap_residual(const Vector<M>& r) const { return r; }
};

/// Anything the nonlinear update can linearize and sample through.
template <class Model>
concept SensorModel = requires(const Model& model, const Vector<Model::state_dim>& x,
                               const Vector<Model::meas_dim>& r) {
  { model.measure(x) } -> std::convertible_to<Vector<Model::meas_dim>>;
  { model.jacobian(x) } -> std::convertible_to<Matrix<Model::meas_dim, Model::state_dim>>;
  { model.wrap_residual(r) } -> std::convertible_to<Vector<Model::meas_dim>>;
};

/// Central-difference Jacobian of f at x, step 1e-6 * (1 + |x_i|).
template <int M, int N, class F>
Matrix<M, N> finite_difference_jacobian(F&& f, const Vector<N>& x) {
  Matrix<M, N> jac;
  for (int i = 0; i < N; ++i) {
    const double h = 1e-6 * (1.0 + std::abs(x(i)));
    Vector<N> lo = x;
    Vector<N> hi = x;
    lo(i) -= h;
    hi(i) += h;
    jac.col(i) = (Vector<M>(f(hi)) - Vector<M>(f(lo))) / (hi(i) - lo(i));
  }
  return jac;
}

/// Adapts a measurement function without an analytic Jacobian.
template <int N, int M, class F>
struct NumericSensor {
  static constexpr int state_dim = N;
  static constexpr int meas_dim = M;

  F function;

  Vector<M> measure(const Vector<N>& x) const { return function(x); }
  Matrix<M, N> jacobian(const Vector<N>& x) const {
    return finite_difference_jacobian<M, N>(function, x);
  }
  Vector<M> wrap_residual(const Vector<M>& r) const { return r; }
};

}  // namespace cviakf
