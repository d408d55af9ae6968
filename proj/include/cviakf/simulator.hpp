#pragma once

// Synthetic maneuvering-target scenarios and the Monte Carlo harness that
// compares CVIAKF against Kalman filters with true / nominal noise.

#include "cviakf/filters.hpp"
#include "cviakf/metrics.hpp"
#include "cviakf/models.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace cviakf {

using FilterConfig4x2 = FilterConfig<kStateDim, kMeasDim>;
using Belief4x2 = JointBelief<kStateDim, kMeasDim>;
using MeasurementSeries = Eigen::Matrix<double, Eigen::Dynamic, kMeasDim, Eigen::RowMajor>;

enum class ScenarioId { S1, S2, S3, S4 };

inline std::string_view to_string(ScenarioId id) {
  switch (id) {
    case ScenarioId::S1: return "s1";
    case ScenarioId::S2: return "s2";
    case ScenarioId::S3: return "s3";
    case ScenarioId::S4: return "s4";
  }
  return "?";
}

inline std::optional<ScenarioId> parse_scenario_id(std::string_view text) {
  if (text == "s1" || text == "S1") return ScenarioId::S1;
  if (text == "s2" || text == "S2") return ScenarioId::S2;
  if (text == "s3" || text == "S3") return ScenarioId::S3;
  if (text == "s4" || text == "S4") return ScenarioId::S4;
  return std::nullopt;
}

struct Scenario {
  ScenarioId id = ScenarioId::S1;
  int steps = 300;
  ConstantVelocity transition;
  MeasurementModel measurement;  // nominal_r holds the R0 template
  State x0;
  StateMatrix p0;                // spread of the filters' initial estimate

  bool linear() const { return measurement.is_linear(); }
  StateMatrix q0() const { return transition.nominal_q(); }
  const MeasurementMatrix& r0() const { return measurement.nominal_r; }
};

inline Scenario make_scenario(ScenarioId id) {
  Scenario sc;
  sc.id = id;
  sc.steps = 300;
  sc.transition.period = 1.0;
  sc.x0 << 5e5, -100.0, 5e5, -100.0;
  const bool linear = id == ScenarioId::S1 || id == ScenarioId::S2;
  if (linear) {
    sc.measurement.kind = SensorKind::LinearPosition;
    sc.measurement.nominal_r << 1e4, 100.0, 100.0, 1e4;
    sc.p0 = Vector<4>(100.0, 1.0, 100.0, 1.0).asDiagonal();
  } else {
    sc.measurement.kind = SensorKind::RangeAzimuth;
    sc.measurement.nominal_r << 100.0, 0.0, 0.0, 1e-6;
    sc.p0 = Vector<4>(1e4, 100.0, 1e4, 100.0).asDiagonal();
  }
  return sc;
}

struct NoisePair {
  StateMatrix q;
  MeasurementMatrix r;
};

/// True (Q_k, R_k) for 1 <= k <= steps.
inline NoisePair scenario_noise_at(const Scenario& sc, int k) {
  if (k < 1 || k > sc.steps) {
    throw std::out_of_range("scenario_noise_at: step " + std::to_string(k) + " outside [1, " +
                            std::to_string(sc.steps) + "]");
  }
  const double c = std::cos(std::numbers::pi * k / sc.steps);
  const StateMatrix q0 = sc.q0();
  const MeasurementMatrix& r0 = sc.r0();
  switch (sc.id) {
    case ScenarioId::S1: return {(10.0 + 5.0 * c) * q0, (1.0 + 0.5 * c) * r0};
    case ScenarioId::S2: return {(k >= 100 && k < 200 ? 5.0 : 1.0) * q0, (k >= 200 ? 5.0 : 1.0) * r0};
    case ScenarioId::S3: return {(100.0 + 50.0 * c) * q0, (1.0 + 0.5 * c) * r0};
    case ScenarioId::S4: return {(k >= 100 && k < 200 ? 100.0 : 1.0) * q0, (1.0 + 0.5 * c) * r0};
  }
  throw std::logic_error("unknown scenario");
}

/// Filter tuning used for the published comparisons.
inline FilterConfig4x2 default_config(const Scenario& sc) {
  FilterConfig4x2 cfg;
  cfg.tau_p = 3.0;
  cfg.rho_r = 1.0 - std::exp(-4.0);
  cfg.conv_threshold = 1e-7;
  cfg.max_iters = 500;
  if (sc.linear()) {
    cfg.tau_r = 3.0;
    cfg.nominal_q = 10.0 * StateMatrix::Identity();
    cfg.nominal_r = 100.0 * MeasurementMatrix::Identity();
  } else {
    cfg.tau_r = 6.0;
    cfg.nominal_q = 20.0 * StateMatrix::Identity();
    cfg.nominal_r = sc.r0();
  }
  cfg.learning_rate = 0.23;
  cfg.sample_count = 1000;
  return cfg;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent stream seed for (master, index, lane).
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index, std::uint64_t lane = 0) {
  return splitmix64(splitmix64(master ^ splitmix64(index)) + lane);
}

enum class RunStream : std::uint64_t { Trajectory = 0, InitialEstimate = 1, Filter = 2 };

inline std::uint64_t run_seed(std::uint64_t master, int run, RunStream stream) {
  return derive_seed(master, static_cast<std::uint64_t>(run), static_cast<std::uint64_t>(stream));
}

struct SimulatedRun {
  Trajectory truth;                // rows k = 1..N
  MeasurementSeries measurements;  // rows k = 1..N
};

template <int N>
Vector<N> draw_gaussian(const Matrix<N>& cov, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector<N> z;
  for (int i = 0; i < N; ++i) z(i) = normal(rng);
  return cholesky_lower<N>(cov, "noise covariance") * z;
}

/// zero_noise disables both process and measurement noise.
inline SimulatedRun simulate_run(const Scenario& sc, std::mt19937_64& rng, bool zero_noise = false) {
  SimulatedRun out{Trajectory(sc.steps, kStateDim), MeasurementSeries(sc.steps, kMeasDim)};
  const StateMatrix f = sc.transition.transition_matrix();
  State x = sc.x0;
  for (int k = 1; k <= sc.steps; ++k) {
    const NoisePair noise = scenario_noise_at(sc, k);
    x = f * x;
    if (!zero_noise) x += draw_gaussian<kStateDim>(noise.q, rng);
    Measurement y = sc.measurement.measure(x);
    if (!zero_noise) y += draw_gaussian<kMeasDim>(noise.r, rng);
    y = sc.measurement.wrap_residual(y);
    out.truth.row(k - 1) = x.transpose();
    out.measurements.row(k - 1) = y.transpose();
  }
  return out;
}

enum class Method { KFTCM, KFNCM, CVIAKF };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::KFTCM: return "kftcm";
    case Method::KFNCM: return "kfncm";
    case Method::CVIAKF: return "cviakf";
  }
  return "?";
}

inline std::optional<Method> parse_method(std::string_view text) {
  if (text == "kftcm" || text == "KFTCM") return Method::KFTCM;
  if (text == "kfncm" || text == "KFNCM") return Method::KFNCM;
  if (text == "cviakf" || text == "CVIAKF") return Method::CVIAKF;
  return std::nullopt;
}

struct TrackResult {
  Trajectory estimates;  // rows k = 1..N
  Trajectory cov_diag;
  std::vector<int> iterations;
  int nonconverged_steps = 0;

  double mean_iterations() const {
    if (iterations.empty()) return 0.0;
    double acc = 0.0;
    for (int it : iterations) acc += it;
    return acc / static_cast<double>(iterations.size());
  }
};

using StepObserver = std::function<void(int k, const Belief4x2& pred, const UpdateResult<kStateDim, kMeasDim>& post)>;

/// Per-step generator for the Monte Carlo gradient at step k.
inline std::mt19937_64 step_rng(std::uint64_t filter_seed, int k) {
  return std::mt19937_64(derive_seed(filter_seed, static_cast<std::uint64_t>(k), 7));
}

/// Runs CVIAKF over a measurement series. Row i is step i + 1 unless `steps`
/// gives strictly increasing step indices; a gap of g steps runs g
/// predictions before the update.
inline TrackResult run_cviakf(const ConstantVelocity& transition, const MeasurementModel& sensor,
                              const MeasurementSeries& measurements, const State& x_init, const StateMatrix& p_init,
                              const FilterConfig4x2& config, std::uint64_t filter_seed,
                              const StepObserver& observer = {}, std::span<const int> steps = {}) {
  config.validate();
  const auto rows = measurements.rows();
  if (!steps.empty() && static_cast<Eigen::Index>(steps.size()) != rows) {
    throw std::invalid_argument("run_cviakf: step index count differs from measurement rows");
  }
  TrackResult out{Trajectory(rows, kStateDim), Trajectory(rows, kStateDim), {}, 0};
  out.iterations.reserve(static_cast<std::size_t>(rows));
  const StateMatrix f = transition.transition_matrix();
  Belief4x2 belief = initial_belief<kStateDim, kMeasDim>(x_init, p_init, config);
  const Jacobian h = MeasurementModel::selector();
  int k_prev = steps.empty() ? 0 : steps.front() - 1;
  for (Eigen::Index i = 0; i < rows; ++i) {
    const int k = steps.empty() ? static_cast<int>(i) + 1 : steps[static_cast<std::size_t>(i)];
    if (k <= k_prev) throw std::invalid_argument("run_cviakf: step indices must increase strictly");
    Belief4x2 pred = belief;
    for (int j = k_prev; j < k; ++j) pred = predict<kStateDim, kMeasDim>(pred, f, config);
    k_prev = k;
    const Measurement y = measurements.row(i).transpose();
    UpdateResult<kStateDim, kMeasDim> post;
    if (sensor.is_linear()) {
      post = update_linear<kStateDim, kMeasDim>(pred, y, h, config);
    } else {
      std::mt19937_64 rng = step_rng(filter_seed, k);
      post = update_nonlinear(pred, y, sensor, config, rng);
    }
    if (observer) observer(k, pred, post);
    belief = post.belief;
    out.estimates.row(i) = belief.state.mean.transpose();
    out.cov_diag.row(i) = belief.state.covariance.diagonal().transpose();
    out.iterations.push_back(post.iterations);
    if (!post.converged) ++out.nonconverged_steps;
  }
  return out;
}

/// Kalman filter with a given noise schedule; extended (linearized at the
/// prediction) for nonlinear sensors.
inline TrackResult run_kalman(const ConstantVelocity& transition, const MeasurementModel& sensor,
                              const MeasurementSeries& measurements, const State& x_init, const StateMatrix& p_init,
                              const std::function<NoisePair(int)>& noise_at) {
  const auto steps = measurements.rows();
  TrackResult out{Trajectory(steps, kStateDim), Trajectory(steps, kStateDim), {}, 0};
  const StateMatrix f = transition.transition_matrix();
  GaussianBelief<kStateDim> belief{x_init, p_init};
  for (Eigen::Index i = 0; i < steps; ++i) {
    const int k = static_cast<int>(i) + 1;
    const NoisePair noise = noise_at(k);
    const State x_pred = f * belief.mean;
    const StateMatrix p_pred = symmetrize<kStateDim>(f * belief.covariance * f.transpose() + noise.q);
    const Measurement y = measurements.row(i).transpose();
    const Jacobian h = sensor.jacobian(x_pred);
    const Measurement innovation = sensor.wrap_residual(y - sensor.measure(x_pred));
    belief = kf_update_gain_form<kStateDim, kMeasDim>(x_pred, p_pred, h * x_pred + innovation, h, noise.r);
    out.estimates.row(i) = belief.mean.transpose();
    out.cov_diag.row(i) = belief.covariance.diagonal().transpose();
    out.iterations.push_back(1);
  }
  return out;
}

struct MethodSummary {
  Method method = Method::CVIAKF;
  std::vector<double> position_rmse;
  std::vector<double> velocity_rmse;
  double position_armse = 0.0;
  double velocity_armse = 0.0;
  double mean_iterations = 0.0;
  int nonconverged_steps = 0;
};

struct RunDump {
  int run = 0;
  SimulatedRun data;
  State x_init;
  std::uint64_t filter_seed = 0;
  std::vector<TrackResult> tracks;  // parallel to the method list
};

struct MonteCarloResult {
  std::vector<MethodSummary> methods;
  int runs = 0;
  int steps = 0;
  std::uint64_t seed = 0;
  std::optional<RunDump> dump;

  MetricTable table() const {
    MetricTable t;
    for (const auto& m : methods) {
      t.push_back({std::string(to_string(m.method)), m.position_armse, m.velocity_armse, m.mean_iterations});
    }
    return t;
  }
};

struct MonteCarloOptions {
  unsigned workers = 0;  // 0: hardware concurrency
  std::optional<int> dump_run;
};

inline TrackResult run_method(Method method, const Scenario& sc, const SimulatedRun& data, const State& x_init,
                              const FilterConfig4x2& config, std::uint64_t filter_seed) {
  switch (method) {
    case Method::CVIAKF:
      return run_cviakf(sc.transition, sc.measurement, data.measurements, x_init, sc.p0, config, filter_seed);
    case Method::KFTCM:
      return run_kalman(sc.transition, sc.measurement, data.measurements, x_init, sc.p0,
                        [&sc](int k) { return scenario_noise_at(sc, k); });
    case Method::KFNCM: {
      // Same nominal covariances CVIAKF starts from.
      const NoisePair nominal{config.nominal_q, config.nominal_r};
      return run_kalman(sc.transition, sc.measurement, data.measurements, x_init, sc.p0,
                        [nominal](int) { return nominal; });
    }
  }
  throw std::logic_error("unknown method");
}

/// Every run draws its own trajectory and initial estimate from seeds derived
/// from (seed, run index); all methods filter the same measurements. Results
/// are reduced in run order, so they do not depend on the worker count.
inline MonteCarloResult run_monte_carlo(const Scenario& sc, const std::vector<Method>& methods, int runs,
                                        const FilterConfig4x2& config, std::uint64_t seed,
                                        const MonteCarloOptions& options = {}) {
  if (runs < 1) throw std::invalid_argument("run_monte_carlo: runs must be >= 1");
  if (methods.empty()) throw std::invalid_argument("run_monte_carlo: no methods");
  config.validate();

  struct RunOutput {
    Trajectory truth;
    State x_init;
    std::vector<TrackResult> tracks;
    SimulatedRun data;
  };
  std::vector<RunOutput> outputs(static_cast<std::size_t>(runs));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(runs));

  auto do_run = [&](int i) {
    std::mt19937_64 traj_rng(run_seed(seed, i, RunStream::Trajectory));
    std::mt19937_64 init_rng(run_seed(seed, i, RunStream::InitialEstimate));
    RunOutput& out = outputs[static_cast<std::size_t>(i)];
    out.data = simulate_run(sc, traj_rng);
    out.x_init = sc.x0 + draw_gaussian<kStateDim>(sc.p0, init_rng);
    const std::uint64_t filter_seed = run_seed(seed, i, RunStream::Filter);
    for (Method m : methods) out.tracks.push_back(run_method(m, sc, out.data, out.x_init, config, filter_seed));
    out.truth = out.data.truth;
    if (!(options.dump_run && *options.dump_run == i)) out.data = {};
  };

  unsigned workers = options.workers ? options.workers : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, static_cast<unsigned>(runs));
  if (workers <= 1) {
    for (int i = 0; i < runs; ++i) do_run(i);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (int i = next++; i < runs; i = next++) {
          try {
            do_run(i);
          } catch (...) {
            errors[static_cast<std::size_t>(i)] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  MonteCarloResult result;
  result.runs = runs;
  result.steps = sc.steps;
  result.seed = seed;
  std::vector<Trajectory> truths;
  truths.reserve(outputs.size());
  for (const auto& o : outputs) truths.push_back(o.truth);

  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    std::vector<Trajectory> estimates;
    MethodSummary summary;
    summary.method = methods[mi];
    double iter_acc = 0.0;
    for (const auto& o : outputs) {
      estimates.push_back(o.tracks[mi].estimates);
      iter_acc += o.tracks[mi].mean_iterations();
      summary.nonconverged_steps += o.tracks[mi].nonconverged_steps;
    }
    summary.position_rmse = rmse_series(estimates, truths, kPositionComponents);
    summary.velocity_rmse = rmse_series(estimates, truths, kVelocityComponents);
    summary.position_armse = armse(summary.position_rmse);
    summary.velocity_armse = armse(summary.velocity_rmse);
    summary.mean_iterations = iter_acc / static_cast<double>(runs);
    result.methods.push_back(std::move(summary));
  }

  if (options.dump_run && *options.dump_run >= 0 && *options.dump_run < runs) {
    const int i = *options.dump_run;
    auto& o = outputs[static_cast<std::size_t>(i)];
    result.dump = RunDump{i, std::move(o.data), o.x_init, run_seed(seed, i, RunStream::Filter), std::move(o.tracks)};
  }
  return result;
}

}  // namespace cviakf
