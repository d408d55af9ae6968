#pragma once

// Adaptive Kalman filtering with joint identification of the predicted state
// covariance and the measurement noise covariance. The posterior is the
// mean-field product q(x) q(P_{k|k-1}) q(R_k) of a Gaussian and two
// inverse-Wishart factors; each measurement update runs a fixed-point loop
// over the three factors. For linear sensors the state factor has a closed
// form. For nonlinear sensors it is refined by stochastic mirror descent in
// expectation-parameter space with reparameterized Monte Carlo gradients.

#include "cviakf/distributions.hpp"
#include "cviakf/models.hpp"

#include <cmath>
#include <optional>
#include <random>
#include <sstream>
#include <string>

namespace cviakf {

template <int N, int M>
struct JointBelief {
  GaussianBelief<N> state;
  InverseWishartBelief<N> pred_cov;    // belief over P_{k|k-1}
  InverseWishartBelief<M> meas_noise;  // belief over R_k
};

/// What the per-update fixed-point loop watches to stop.
enum class ConvergenceTest {
  StateMean,   // relative change of the state mean only
  AllFactors,  // mean, covariance and both inverse-Wishart scales
};

template <int N, int M>
struct FilterConfig {
  double tau_p = 3.0;
  double tau_r = 3.0;
  double rho_r = 1.0 - std::exp(-4.0);
  Matrix<N> nominal_q = Matrix<N>::Identity();
  Matrix<M> nominal_r = Matrix<M>::Identity();
  double conv_threshold = 1e-7;
  int max_iters = 500;
  double learning_rate = 0.23;
  int sample_count = 1000;
  std::uint64_t seed = 0;
  // Draw a fresh sample set every mirror-descent iteration instead of once per
  // measurement update. The fixed-point test rarely fires with this enabled.
  bool resample_each_iteration = false;
  ConvergenceTest stop_rule = ConvergenceTest::StateMean;

  void validate() const {
    auto fail = [](const std::string& what) { throw DomainError("invalid filter config: " + what); };
    if (!(tau_p > 0.0)) fail("tau_p must be > 0");
    if (!(tau_r > 0.0)) fail("tau_r must be > 0");
    if (!(rho_r > 0.0 && rho_r <= 1.0)) fail("rho_r must lie in (0, 1]");
    if (!(conv_threshold > 0.0)) fail("conv_threshold must be > 0");
    if (max_iters < 1) fail("max_iters must be >= 1");
    if (!(learning_rate > 0.0 && learning_rate <= 1.0)) fail("learning_rate must lie in (0, 1]");
    if (sample_count < 1) fail("sample_count must be >= 1");
    if (!is_spd<N>(nominal_q)) fail("nominal_q must be SPD");
    if (!is_spd<M>(nominal_r)) fail("nominal_r must be SPD");
  }
};

template <int N, int M>
struct UpdateResult {
  JointBelief<N, M> belief;
  int iterations = 0;
  bool converged = false;
};

/// Prior belief at k = 0: the IW factors are centred on the nominal
/// covariances, i.e. E[P^{-1}] = p0^{-1} and E[R^{-1}] = nominal_r^{-1}.
template <int N, int M>
JointBelief<N, M> initial_belief(const Vector<N>& mean, const Matrix<N>& p0,
                                 const FilterConfig<N, M>& config) {
  return {{mean, p0},
          {N + config.tau_p + 1.0, config.tau_p * p0},
          {config.tau_r + M + 1.0, config.tau_r * config.nominal_r}};
}

template <int N, int M>
JointBelief<N, M> predict(const JointBelief<N, M>& prior, const Matrix<N>& transition,
                          const FilterConfig<N, M>& config) {
  JointBelief<N, M> pred;
  pred.state.mean = transition * prior.state.mean;
  pred.state.covariance =
      symmetrize<N>(transition * prior.state.covariance * transition.transpose() + config.nominal_q);
  pred.pred_cov.dof = N + config.tau_p + 1.0;
  pred.pred_cov.scale = config.tau_p * pred.state.covariance;
  pred.meas_noise.dof = config.rho_r * (prior.meas_noise.dof - M - 1.0) + M + 1.0;
  pred.meas_noise.scale = config.rho_r * prior.meas_noise.scale;
  return pred;
}

template <int M>
JointBelief<kStateDim, M> predict(const JointBelief<kStateDim, M>& prior, const ConstantVelocity& transition,
                                  const FilterConfig<kStateDim, M>& config) {
  return predict<kStateDim, M>(prior, transition.transition_matrix(), config);
}

/// Relative change of mean (Euclidean), covariance and both IW scales
/// (Frobenius), each against 1 + norm of the previous value.
template <int N, int M>
bool converged(const JointBelief<N, M>& prev, const JointBelief<N, M>& next, double threshold) {
  auto rel = [](const auto& a, const auto& b) { return (b - a).norm() / (1.0 + a.norm()); };
  return rel(prev.state.mean, next.state.mean) < threshold &&
         rel(prev.state.covariance, next.state.covariance) < threshold &&
         rel(prev.pred_cov.scale, next.pred_cov.scale) < threshold &&
         rel(prev.meas_noise.scale, next.meas_noise.scale) < threshold;
}

template <int N, int M>
bool mean_converged(const JointBelief<N, M>& prev, const JointBelief<N, M>& next, double threshold) {
  const auto& a = prev.state.mean;
  return (next.state.mean - a).norm() / (1.0 + a.norm()) < threshold;
}

template <int N, int M>
bool should_stop(const FilterConfig<N, M>& config, const JointBelief<N, M>& prev,
                 const JointBelief<N, M>& next) {
  return config.stop_rule == ConvergenceTest::AllFactors
             ? converged<N, M>(prev, next, config.conv_threshold)
             : mean_converged<N, M>(prev, next, config.conv_threshold);
}

/// Closed-form state factor for a linear sensor given the current noise
/// expectations: information matrix E[P^{-1}] + H^T E[R^{-1}] H and
/// information vector E[P^{-1}] x_pred + H^T E[R^{-1}] y.
template <int N, int M>
GaussianBelief<N> linear_state_step(const Vector<N>& pred_mean, const Matrix<N>& expected_pred_precision,
                                    const Vector<M>& y, const Matrix<M, N>& h,
                                    const Matrix<M>& expected_noise_precision) {
  const Matrix<M, N> weighted = expected_noise_precision * h;
  Matrix<N> information = symmetrize<N>(expected_pred_precision + h.transpose() * weighted);
  Vector<N> info_vector =
      expected_pred_precision * pred_mean + h.transpose() * (expected_noise_precision * y);
  auto llt = detail::checked_llt<N>(information, "posterior information matrix");
  return {llt.solve(info_vector), symmetrize<N>(llt.solve(Matrix<N>::Identity()))};
}

/// Known-noise information filter update.
template <int N, int M>
GaussianBelief<N> kf_update_known_noise(const Vector<N>& pred_mean, const Matrix<N>& pred_cov,
                                        const Vector<M>& y, const Matrix<M, N>& h, const Matrix<M>& r) {
  return linear_state_step<N, M>(pred_mean, spd_inverse<N>(pred_cov, "predicted covariance"), y, h,
                                 spd_inverse<M>(r, "measurement noise covariance"));
}

/// Same update in Kalman gain form: K = P H^T (R + H P H^T)^{-1}.
template <int N, int M>
GaussianBelief<N> kf_update_gain_form(const Vector<N>& pred_mean, const Matrix<N>& pred_cov,
                                      const Vector<M>& y, const Matrix<M, N>& h, const Matrix<M>& r) {
  const Matrix<M> innovation_cov = symmetrize<M>(r + h * pred_cov * h.transpose());
  auto llt = detail::checked_llt<M>(innovation_cov, "innovation covariance");
  const Matrix<N, M> gain = llt.solve(h * pred_cov).transpose();
  GaussianBelief<N> out;
  out.mean = pred_mean + gain * (y - h * pred_mean);
  // Joseph form keeps the result symmetric and SPD.
  const Matrix<N> i_kh = Matrix<N>::Identity() - gain * h;
  out.covariance = symmetrize<N>(i_kh * pred_cov * i_kh.transpose() + gain * r * gain.transpose());
  return out;
}

/// Fixed noise expectations for the linear update; with these set the state
/// step reduces to the known-noise information filter.
template <int N, int M>
struct PinnedExpectations {
  Matrix<N> pred_precision;
  Matrix<M> noise_precision;
};

template <int N, int M>
UpdateResult<N, M> update_linear(const JointBelief<N, M>& pred, const Vector<M>& y, const Matrix<M, N>& h,
                                 const FilterConfig<N, M>& config,
                                 const std::optional<PinnedExpectations<N, M>>& pinned = std::nullopt) {
  UpdateResult<N, M> result{pred, 0, false};
  JointBelief<N, M>& post = result.belief;
  const Vector<N>& x_pred = pred.state.mean;

  // Each sweep refreshes both noise factors from the current state factor
  // (the prediction on the first sweep) and then solves for the state factor.
  for (int iter = 1; iter <= config.max_iters; ++iter) {
    const JointBelief<N, M> prev = post;
    const Vector<N> dx = post.state.mean - x_pred;
    post.pred_cov.dof = pred.pred_cov.dof + 1.0;
    post.pred_cov.scale = symmetrize<N>(pred.pred_cov.scale + dx * dx.transpose() + post.state.covariance);

    const Vector<M> innov = y - h * post.state.mean;
    post.meas_noise.dof = pred.meas_noise.dof + 1.0;
    post.meas_noise.scale = symmetrize<M>(pred.meas_noise.scale + innov * innov.transpose() +
                                          h * post.state.covariance * h.transpose());

    const Matrix<N> e_p = pinned ? pinned->pred_precision : iw_expected_precision<N>(post.pred_cov);
    const Matrix<M> e_r = pinned ? pinned->noise_precision : iw_expected_precision<M>(post.meas_noise);
    post.state = linear_state_step<N, M>(x_pred, e_p, y, h, e_r);

    result.iterations = iter;
    if (should_stop<N, M>(config, prev, post)) {
      result.converged = true;
      break;
    }
  }
  return result;
}

/// Gradients of D = E_q[(y - h(x))^T E[R^{-1}] (y - h(x))] w.r.t. the mean and
/// the covariance of q(x).
template <int N>
struct LikelihoodGradients {
  Vector<N> mean;
  Matrix<N> cov;
};

template <int N>
using SampleSet = Eigen::Matrix<double, N, Eigen::Dynamic>;

/// Monte Carlo estimator through x = mean + L * eps. Per sample, with
/// w = J(x)^T E[R^{-1}] wrap(y - h(x)):
///   grad_mean = -(2/S) sum w,  grad_cov = -(1/S) sum w eps^T L^{-1}
/// and grad_cov is symmetrized.
struct ReparameterizedGradient {
  template <SensorModel Model>
  LikelihoodGradients<Model::state_dim> gradients(const Model& model, const Vector<Model::meas_dim>& y,
                                                  const Vector<Model::state_dim>& mean,
                                                  const Matrix<Model::state_dim>& chol,
                                                  const Matrix<Model::meas_dim>& noise_precision,
                                                  const SampleSet<Model::state_dim>& eps) const {
    constexpr int n = Model::state_dim;
    const auto count = static_cast<double>(eps.cols());
    Vector<n> sum_w = Vector<n>::Zero();
    Matrix<n> sum_w_eps = Matrix<n>::Zero();
    for (Eigen::Index s = 0; s < eps.cols(); ++s) {
      const Vector<n> e = eps.col(s);
      const Vector<n> x = mean + chol * e;
      const auto residual = model.wrap_residual(y - model.measure(x));
      const Vector<n> w = model.jacobian(x).transpose() * (noise_precision * residual);
      sum_w += w;
      sum_w_eps.noalias() += w * e.transpose();
    }
    LikelihoodGradients<n> g;
    g.mean = (-2.0 / count) * sum_w;
    // X = W L^{-1}  <=>  L^T X^T = W^T
    const Matrix<n> w_linv =
        chol.template triangularView<Eigen::Lower>().transpose().solve(sum_w_eps.transpose()).transpose();
    g.cov = symmetrize<n>((-1.0 / count) * w_linv);
    return g;
  }

  /// (1/S) sum wrap(y - h(mean + L eps))(.)^T
  template <SensorModel Model>
  Matrix<Model::meas_dim> residual_moment(const Model& model, const Vector<Model::meas_dim>& y,
                                          const Vector<Model::state_dim>& mean,
                                          const Matrix<Model::state_dim>& chol,
                                          const SampleSet<Model::state_dim>& eps) const {
    constexpr int m = Model::meas_dim;
    Matrix<m> acc = Matrix<m>::Zero();
    for (Eigen::Index s = 0; s < eps.cols(); ++s) {
      const Vector<m> r = model.wrap_residual(y - model.measure(mean + chol * eps.col(s)));
      acc.noalias() += r * r.transpose();
    }
    return symmetrize<m>(acc / static_cast<double>(eps.cols()));
  }
};

/// Exact expectations for a linear sensor (the S -> infinity limit of the
/// reparameterized estimator). Ignores the sample set.
struct ExactLinearGradient {
  template <int N, int M>
  LikelihoodGradients<N> gradients(const LinearMeasurement<N, M>& model, const Vector<M>& y,
                                   const Vector<N>& mean, const Matrix<N>&, const Matrix<M>& noise_precision,
                                   const SampleSet<N>&) const {
    return {-2.0 * model.h.transpose() * (noise_precision * (y - model.h * mean)),
            symmetrize<N>(model.h.transpose() * noise_precision * model.h)};
  }

  template <int N, int M>
  Matrix<M> residual_moment(const LinearMeasurement<N, M>& model, const Vector<M>& y, const Vector<N>& mean,
                            const Matrix<N>& chol, const SampleSet<N>&) const {
    const Vector<M> r = y - model.h * mean;
    return symmetrize<M>(r * r.transpose() + model.h * chol * chol.transpose() * model.h.transpose());
  }
};

/// Mirror-descent precision step with the positive-definiteness compensation:
///   G = prec - target
///   prec' = 0.5 beta^2 G cov G + (1 - beta) prec + beta target
/// where cov = prec^{-1}. prec' = 0.5 prec + 0.5 (prec - beta G) cov (prec - beta G)
/// so the result is SPD for any symmetric target and beta in (0, 1].
template <int N>
Matrix<N> compensated_precision_step(const Matrix<N>& precision, const Matrix<N>& covariance,
                                     const Matrix<N>& target, double beta) {
  const Matrix<N> g = precision - target;
  return symmetrize<N>(0.5 * beta * beta * g * covariance * g + (1.0 - beta) * precision + beta * target);
}

template <int N>
SampleSet<N> draw_standard_normal(int count, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  SampleSet<N> eps(N, count);
  for (int s = 0; s < count; ++s) {
    for (int i = 0; i < N; ++i) eps(i, s) = normal(rng);
  }
  return eps;
}

template <SensorModel Model, class Estimator = ReparameterizedGradient>
UpdateResult<Model::state_dim, Model::meas_dim> update_nonlinear(
    const JointBelief<Model::state_dim, Model::meas_dim>& pred, const Vector<Model::meas_dim>& y,
    const Model& model, const FilterConfig<Model::state_dim, Model::meas_dim>& config, std::mt19937_64& rng,
    const Estimator& estimator = {}) {
  constexpr int n = Model::state_dim;
  constexpr int m = Model::meas_dim;
  const double beta = config.learning_rate;

  UpdateResult<n, m> result{pred, 0, false};
  JointBelief<n, m>& post = result.belief;
  const Vector<n>& x_pred = pred.state.mean;
  Matrix<n> precision = spd_inverse<n>(pred.state.covariance, "predicted covariance");
  SampleSet<n> eps = draw_standard_normal<n>(config.sample_count, rng);

  for (int iter = 1; iter <= config.max_iters; ++iter) {
    try {
      const JointBelief<n, m> prev = post;
      if (config.resample_each_iteration && iter > 1) eps = draw_standard_normal<n>(config.sample_count, rng);

      const Matrix<n> e_p = iw_expected_precision<n>(post.pred_cov);
      const Matrix<m> e_r = iw_expected_precision<m>(post.meas_noise);
      const Matrix<n> chol = cholesky_lower<n>(post.state.covariance, "posterior covariance");
      const auto grad = estimator.gradients(model, y, post.state.mean, chol, e_r, eps);

      const Matrix<n> target = symmetrize<n>(e_p + grad.cov);
      precision = compensated_precision_step<n>(precision, post.state.covariance, target, beta);
      const Matrix<n> cov = spd_inverse<n>(precision, "updated precision");
      const Vector<n> mean = post.state.mean + beta * cov * (e_p * (x_pred - post.state.mean)) -
                             0.5 * beta * cov * grad.mean;
      post.state = {mean, cov};

      const Vector<n> dx = mean - x_pred;
      post.pred_cov.dof = pred.pred_cov.dof + 1.0;
      post.pred_cov.scale = symmetrize<n>(pred.pred_cov.scale + dx * dx.transpose() + cov);

      const Matrix<n> new_chol = cholesky_lower<n>(cov, "posterior covariance");
      post.meas_noise.dof = pred.meas_noise.dof + 1.0;
      post.meas_noise.scale =
          symmetrize<m>(pred.meas_noise.scale + estimator.residual_moment(model, y, mean, new_chol, eps));

      result.iterations = iter;
      if (should_stop<n, m>(config, prev, post)) {
        result.converged = true;
        break;
      }
    } catch (const DomainError& e) {
      std::ostringstream os;
      os << "nonlinear update, iteration " << iter << ": " << e.what();
      throw DomainError(os.str());
    }
  }
  return result;
}

}  // namespace cviakf
