#pragma once

// Exponential-family beliefs used by the filter: the Gaussian over the state
// and the inverse-Wishart over covariance matrices, together with their
// natural-parameter views.

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace cviakf {

template <int N>
using Vector = Eigen::Matrix<double, N, 1>;

template <int R, int C = R>
using Matrix = Eigen::Matrix<double, R, C>;

/// Raised when a numerical precondition (SPD-ness, degrees of freedom, ...)
/// does not hold. Carries a human readable description of the offending value.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

template <int N>
Matrix<N> symmetrize(const Matrix<N>& m) {
  return 0.5 * (m + m.transpose());
}

template <int N>
double smallest_eigenvalue(const Matrix<N>& m) {
  Eigen::SelfAdjointEigenSolver<Matrix<N>> solver(symmetrize<N>(m), Eigen::EigenvaluesOnly);
  return solver.eigenvalues().minCoeff();
}

namespace detail {

template <int N>
[[noreturn]] void throw_not_spd(std::string_view what, const Matrix<N>& m) {
  std::ostringstream os;
  os << what << " is not symmetric positive definite (smallest eigenvalue "
     << smallest_eigenvalue<N>(m) << ")";
  throw DomainError(os.str());
}

template <int N>
Eigen::LLT<Matrix<N>> checked_llt(const Matrix<N>& m, std::string_view what) {
  if (!m.allFinite()) {
    throw DomainError(std::string(what) + " has non-finite entries");
  }
  Eigen::LLT<Matrix<N>> llt(m);
  if (llt.info() != Eigen::Success) throw_not_spd<N>(what, m);
  // Eigen only checks pivots; a vanishing pivot still slips through.
  if ((llt.matrixL().toDenseMatrix().diagonal().array() <= 0.0).any()) throw_not_spd<N>(what, m);
  return llt;
}

}  // namespace detail

/// Lower Cholesky factor L with L * L^T = p. Throws DomainError (reporting the
/// smallest eigenvalue) when p is not SPD.
template <int N>
Matrix<N> cholesky_lower(const Matrix<N>& p, std::string_view what = "matrix") {
  return detail::checked_llt<N>(p, what).matrixL();
}

template <int N>
bool is_spd(const Matrix<N>& p) {
  if (!p.allFinite()) return false;
  Eigen::LLT<Matrix<N>> llt(p);
  return llt.info() == Eigen::Success &&
         (llt.matrixL().toDenseMatrix().diagonal().array() > 0.0).all();
}

/// Inverse of an SPD matrix, symmetrized.
template <int N>
Matrix<N> spd_inverse(const Matrix<N>& p, std::string_view what = "matrix") {
  auto llt = detail::checked_llt<N>(p, what);
  return symmetrize<N>(llt.solve(Matrix<N>::Identity()));
}

template <int N>
struct GaussianBelief {
  Vector<N> mean;
  Matrix<N> covariance;
};

/// Natural parameters (P^{-1} m, -0.5 P^{-1}).
template <int N>
struct GaussianNatural {
  Vector<N> eta;
  Matrix<N> lambda;
};

template <int N>
GaussianNatural<N> gaussian_to_natural(const Vector<N>& mean, const Matrix<N>& covariance) {
  Matrix<N> precision = spd_inverse<N>(covariance, "Gaussian covariance");
  return {precision * mean, -0.5 * precision};
}

template <int N>
GaussianNatural<N> gaussian_to_natural(const GaussianBelief<N>& belief) {
  return gaussian_to_natural<N>(belief.mean, belief.covariance);
}

template <int N>
GaussianBelief<N> natural_to_gaussian(const Vector<N>& eta, const Matrix<N>& lambda) {
  Matrix<N> precision = symmetrize<N>(-2.0 * lambda);
  auto llt = detail::checked_llt<N>(precision, "-2 * natural matrix parameter");
  Matrix<N> covariance = symmetrize<N>(llt.solve(Matrix<N>::Identity()));
  return {llt.solve(eta), covariance};
}

template <int N>
GaussianBelief<N> natural_to_gaussian(const GaussianNatural<N>& natural) {
  return natural_to_gaussian<N>(natural.eta, natural.lambda);
}

/// IW(S | dof, scale) over P x P covariance matrices. Stored in moment form;
/// natural views are computed on demand.
template <int P>
struct InverseWishartBelief {
  double dof = 0.0;
  Matrix<P> scale;

  static constexpr int dimension = P;
};

template <int P>
void validate(const InverseWishartBelief<P>& belief, std::string_view what = "inverse-Wishart belief") {
  if (!(belief.dof > P + 1)) {
    std::ostringstream os;
    os << what << ": degrees of freedom " << belief.dof << " must exceed " << P + 1;
    throw DomainError(os.str());
  }
  detail::checked_llt<P>(belief.scale, std::string(what) + " scale");
}

/// E[S^{-1}] = (dof - p - 1) * scale^{-1}.
template <int P>
Matrix<P> iw_expected_precision(const InverseWishartBelief<P>& belief) {
  if (!(belief.dof > P + 1)) {
    std::ostringstream os;
    os << "inverse-Wishart degrees of freedom " << belief.dof << " must exceed " << P + 1;
    throw DomainError(os.str());
  }
  return (belief.dof - P - 1) * spd_inverse<P>(belief.scale, "inverse-Wishart scale");
}

template <int P>
struct IwNatural {
  double eta = 0.0;
  Matrix<P> lambda;
};

template <int P>
IwNatural<P> iw_to_natural(const InverseWishartBelief<P>& belief) {
  return {-0.5 * (belief.dof + P + 1), -0.5 * belief.scale};
}

template <int P>
InverseWishartBelief<P> iw_from_natural(const IwNatural<P>& natural) {
  return {-2.0 * natural.eta - P - 1, -2.0 * natural.lambda};
}

}  // namespace cviakf
