#include "cviakf/distributions.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace cviakf;

namespace {

template <int N>
Matrix<N> random_spd(std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix<N> a;
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j) a(i, j) = normal(rng);
  return a * a.transpose() + 0.1 * Matrix<N>::Identity();
}

double rel_err(const auto& a, const auto& b) { return (a - b).norm() / b.norm(); }

}  // namespace

TEST(GaussianNatural, IdentityCase) {
  const auto nat = gaussian_to_natural<2>(Vector<2>::Zero(), Matrix<2>::Identity());
  EXPECT_EQ(nat.eta, Vector<2>::Zero());
  EXPECT_TRUE(nat.lambda.isApprox(-0.5 * Matrix<2>::Identity(), 1e-15));

  const auto back = natural_to_gaussian<2>(Vector<2>::Zero(), -0.5 * Matrix<2>::Identity());
  EXPECT_EQ(back.mean, Vector<2>::Zero());
  EXPECT_TRUE(back.covariance.isApprox(Matrix<2>::Identity(), 1e-15));
}

TEST(GaussianNatural, ScalarCase) {
  const auto nat = gaussian_to_natural<1>(Vector<1>(1.0), Matrix<1>::Constant(2.0));
  EXPECT_DOUBLE_EQ(nat.eta(0), 0.5);
  EXPECT_DOUBLE_EQ(nat.lambda(0, 0), -0.25);

  const auto back = natural_to_gaussian<1>(Vector<1>(0.5), Matrix<1>::Constant(-0.25));
  EXPECT_DOUBLE_EQ(back.mean(0), 1.0);
  EXPECT_DOUBLE_EQ(back.covariance(0, 0), 2.0);
}

TEST(GaussianNatural, FuzzedRoundTrip) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int t = 0; t < 200; ++t) {
    const Matrix<4> p = random_spd<4>(rng);
    const Vector<4> m = Vector<4>::NullaryExpr([&] { return 10.0 * normal(rng); });
    const auto back = natural_to_gaussian(gaussian_to_natural<4>(m, p));
    EXPECT_LT(rel_err(back.mean, m), 1e-12);
    EXPECT_LT(rel_err(back.covariance, p), 1e-12);
  }
}

TEST(GaussianNatural, RejectsNonSpd) {
  Matrix<2> bad;
  bad << 1.0, 2.0, 2.0, 1.0;
  EXPECT_THROW(gaussian_to_natural<2>(Vector<2>::Zero(), bad), DomainError);
  EXPECT_THROW(natural_to_gaussian<2>(Vector<2>::Zero(), 0.5 * Matrix<2>::Identity()), DomainError);
  try {
    gaussian_to_natural<2>(Vector<2>::Zero(), bad);
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("covariance"), std::string::npos) << e.what();
  }
}

TEST(InverseWishart, ExpectedPrecision) {
  EXPECT_TRUE(iw_expected_precision<2>({6.0, 3.0 * Matrix<2>::Identity()}).isApprox(Matrix<2>::Identity(), 1e-15));

  std::mt19937_64 rng(3);
  const Matrix<4> p = random_spd<4>(rng);
  EXPECT_LT(rel_err(iw_expected_precision<4>({8.0, 3.0 * p}), Matrix<4>(p.inverse())), 1e-12);

  const Matrix<2> e = iw_expected_precision<2>({10.0, Vector<2>(2.0, 4.0).asDiagonal()});
  EXPECT_DOUBLE_EQ(e(0, 0), 3.5);
  EXPECT_DOUBLE_EQ(e(1, 1), 1.75);
  EXPECT_DOUBLE_EQ(e(0, 1), 0.0);
}

TEST(InverseWishart, ExpectedPrecisionSymmetricSpd) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> dof(5.01, 50.0);
  for (int t = 0; t < 200; ++t) {
    const Matrix<4> e = iw_expected_precision<4>({dof(rng), random_spd<4>(rng)});
    EXPECT_LE((e - e.transpose()).norm(), 1e-12 * e.norm());
    EXPECT_TRUE(is_spd<4>(e));
  }
}

TEST(InverseWishart, ExpectedPrecisionNeedsDof) {
  EXPECT_THROW(iw_expected_precision<2>({3.0, Matrix<2>::Identity()}), DomainError);
  EXPECT_THROW(iw_expected_precision<2>({2.5, Matrix<2>::Identity()}), DomainError);
}

TEST(InverseWishart, NaturalParameters) {
  const auto a = iw_to_natural<2>({6.0, Matrix<2>::Identity()});
  EXPECT_DOUBLE_EQ(a.eta, -4.5);
  EXPECT_TRUE(a.lambda.isApprox(-0.5 * Matrix<2>::Identity()));

  const auto b = iw_to_natural<4>({8.0, 3.0 * Matrix<4>::Identity()});
  EXPECT_DOUBLE_EQ(b.eta, -6.5);
  EXPECT_TRUE(b.lambda.isApprox(-1.5 * Matrix<4>::Identity()));
}

TEST(InverseWishart, NaturalRoundTrip) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> dof(5.5, 40.0);
  for (int t = 0; t < 100; ++t) {
    const InverseWishartBelief<4> iw{dof(rng), random_spd<4>(rng)};
    const auto back = iw_from_natural<4>(iw_to_natural<4>(iw));
    EXPECT_DOUBLE_EQ(back.dof, iw.dof);
    EXPECT_EQ(back.scale, iw.scale);
  }
}

TEST(Cholesky, KnownFactors) {
  EXPECT_EQ(cholesky_lower<4>(Matrix<4>::Identity()), Matrix<4>::Identity());

  Matrix<2> p;
  p << 4.0, 2.0, 2.0, 5.0;
  Matrix<2> expected;
  expected << 2.0, 0.0, 1.0, 2.0;
  const Matrix<2> l = cholesky_lower<2>(p);
  EXPECT_TRUE(l.isApprox(expected, 1e-15));
  EXPECT_LT(rel_err(Matrix<2>(l * l.transpose()), p), 1e-15);

  const Matrix<2> d = cholesky_lower<2>(Vector<2>(9.0, 16.0).asDiagonal());
  EXPECT_DOUBLE_EQ(d(0, 0), 3.0);
  EXPECT_DOUBLE_EQ(d(1, 1), 4.0);
  EXPECT_DOUBLE_EQ(d(1, 0), 0.0);
}

TEST(Cholesky, FuzzedReconstruction) {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 500; ++t) {
    const Matrix<4> p = random_spd<4>(rng);
    const Matrix<4> l = cholesky_lower<4>(p);
    EXPECT_TRUE(l.isLowerTriangular());
    EXPECT_TRUE((l.diagonal().array() > 0.0).all());
    EXPECT_LT(rel_err(Matrix<4>(l * l.transpose()), p), 1e-12);
  }
}

TEST(Cholesky, NonSpdReportsEigenvalue) {
  Matrix<2> bad;
  bad << 1.0, 0.0, 0.0, -2.0;
  try {
    cholesky_lower<2>(bad, "test matrix");
    FAIL() << "expected DomainError";
  } catch (const DomainError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("test matrix"), std::string::npos) << msg;
    EXPECT_NE(msg.find("-2"), std::string::npos) << msg;
  }
}
