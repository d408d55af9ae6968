#pragma once

#include "cviakf/models.hpp"

#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cviakf {

/// One row per time step, one column per state component.
using Trajectory = Eigen::Matrix<double, Eigen::Dynamic, kStateDim, Eigen::RowMajor>;

using ComponentPair = std::pair<int, int>;
inline constexpr ComponentPair kPositionComponents{0, 2};
inline constexpr ComponentPair kVelocityComponents{1, 3};

/// RMSE(k) = sqrt((1/M) sum_i (a_i(k) - b_i(k))^2 + (c_i(k) - d_i(k))^2) over
/// the two selected components.
inline std::vector<double> rmse_series(std::span<const Trajectory> estimates, std::span<const Trajectory> truths,
                                       ComponentPair components) {
  if (estimates.empty() || estimates.size() != truths.size()) {
    throw std::invalid_argument("rmse_series: run counts differ or are zero");
  }
  const auto steps = estimates.front().rows();
  for (std::size_t i = 0; i < estimates.size(); ++i) {
    if (estimates[i].rows() != steps || truths[i].rows() != steps) {
      throw std::invalid_argument("rmse_series: trajectory lengths differ");
    }
  }
  const auto [c0, c1] = components;
  std::vector<double> out(static_cast<std::size_t>(steps), 0.0);
  for (Eigen::Index k = 0; k < steps; ++k) {
    double acc = 0.0;
    for (std::size_t i = 0; i < estimates.size(); ++i) {
      const double e0 = estimates[i](k, c0) - truths[i](k, c0);
      const double e1 = estimates[i](k, c1) - truths[i](k, c1);
      acc += e0 * e0 + e1 * e1;
    }
    out[static_cast<std::size_t>(k)] = std::sqrt(acc / static_cast<double>(estimates.size()));
  }
  return out;
}

/// Time average of an RMSE series, transient included.
inline double armse(std::span<const double> series) {
  if (series.empty()) throw std::invalid_argument("armse: empty series");
  return std::accumulate(series.begin(), series.end(), 0.0) / static_cast<double>(series.size());
}

struct MetricRow {
  std::string method;
  double position_armse = 0.0;
  double velocity_armse = 0.0;
  double mean_iterations = 0.0;
};

using MetricTable = std::vector<MetricRow>;

}  // namespace cviakf
