#include "almreg/index_functions.hpp"

#include <gtest/gtest.h>

using namespace almreg;

TEST(IndexFunctions, SquareRootCase) {
  // Phi = sqrt(s): Psi(s) = s^2 / 4, Psi^{-1}(1) = 2, t*(0.1) = 5.
  const IndexFunction f(1.0, 0.5);
  EXPECT_DOUBLE_EQ(psi(f, 3.0), 2.25);
  EXPECT_DOUBLE_EQ(psi_inv(f, 1.0), 2.0);
  EXPECT_NEAR(apriori_total_time(f, 0.1), 5.0, 1e-12);
}

TEST(IndexFunctions, PsiOracleValues) {
  // Numerical sup of s t - (t/2)^4 from a bounded scalar optimiser.
  const IndexFunction f(2.0, 0.25);
  EXPECT_NEAR(psi(f, 1.0), 1.1905507889761497, 1e-12);
  EXPECT_NEAR(psi(f, 3.0), 5.151214091489994, 1e-11);
}

TEST(IndexFunctions, PhiAndInverse) {
  const IndexFunction f(0.7, 0.3);
  for (const Scalar s : {1e-4, 0.5, 3.0, 1e3})
    EXPECT_NEAR(phi_inv(f, phi(f, s)), s, 1e-12 * s);
  EXPECT_THROW(phi(f, -1.0), std::domain_error);
  EXPECT_THROW(phi_inv(f, -1.0), std::domain_error);
  EXPECT_THROW(psi(f, -1.0), std::domain_error);
}

TEST(IndexFunctions, PsiInverseRoundTrip) {
  const IndexFunction f(1.5, 0.2);
  for (const Scalar t : {1e-6, 0.1, 2.0, 50.0})
    EXPECT_NEAR(psi(f, psi_inv(f, t)), t, 1e-12 * t);
}

TEST(IndexFunctions, RejectsExponentAboveHalf) {
  EXPECT_THROW(IndexFunction(1.0, 0.7), std::invalid_argument);
  EXPECT_THROW(IndexFunction(0.0, 0.3), std::invalid_argument);
  EXPECT_THROW(IndexFunction(1.0, 0.0), std::invalid_argument);
  EXPECT_NO_THROW(IndexFunction::unchecked_for_testing(1.0, 0.7));
  EXPECT_THROW(IndexFunction::unchecked_for_testing(1.0, 1.0), std::invalid_argument);
}

TEST(IndexFunctions, GridOracleAgrees) {
  for (const Scalar c : {0.5, 1.0, 2.0})
    for (const Scalar p : {0.1, 0.25, 0.5}) {
      const IndexFunction f(c, p);
      const Scalar s = 0.8;
      const Scalar t_star = c * std::pow(s * p * c, p / (1.0 - p));
      const Scalar oracle = psi_oracle(f, s, GridRange{4.0 * t_star, 100'001});
      EXPECT_NEAR(oracle, psi(f, s), 1e-8 * psi(f, s)) << c << " " << p;
    }
}

TEST(IndexFunctions, GridTooSmallIsReported) {
  const IndexFunction f(1.0, 0.5);
  // Maximiser of 3t - t^2 is t = 1.5.
  EXPECT_THROW(psi_oracle(f, 3.0, GridRange{1.0, 1001}), GridTooSmall);
}

TEST(IndexFunctions, PsiConvexAndYoung) {
  Rng rng(4);
  std::uniform_real_distribution<Scalar> u(0.0, 10.0);
  const IndexFunction f(1.3, 0.35);
  for (int i = 0; i < 1000; ++i) {
    const Scalar a = u(rng), b = u(rng);
    EXPECT_LE(psi(f, 0.5 * (a + b)), 0.5 * (psi(f, a) + psi(f, b)) + 1e-10);
    EXPECT_LE(a * phi(f, b), psi(f, a) + b + 1e-10);
  }
}

TEST(IndexFunctions, MonotonicityEquivalence) {
  const auto grid = log_grid(1e-4, 1e4, 100);
  for (const Scalar p : {0.05, 0.2, 0.5}) {
    const IndexFunction f(2.0, p);
    EXPECT_TRUE(check_phi_ratio_monotone(f, grid));
    EXPECT_TRUE(check_psi_growth_monotone(f, grid));
  }
  const auto bad = IndexFunction::unchecked_for_testing(1.0, 0.6);
  EXPECT_FALSE(check_phi_ratio_monotone(bad, grid));
  EXPECT_FALSE(check_psi_growth_monotone(bad, grid));
}

TEST(IndexFunctions, AprioriTimeScaling) {
  // t* ~ delta^{-2(1-p)}.
  const IndexFunction f(0.9, 0.25);
  const Scalar ratio = apriori_total_time(f, 1e-3) / apriori_total_time(f, 1e-2);
  EXPECT_NEAR(ratio, std::pow(10.0, 1.5), 1e-9);
  EXPECT_THROW(apriori_total_time(f, 0.0), std::domain_error);
}

TEST(IndexFunctions, LogGrid) {
  const auto g = log_grid(1e-4, 1e-1, 4);
  ASSERT_EQ(g.size(), 4u);
  EXPECT_DOUBLE_EQ(g.front(), 1e-4);
  EXPECT_DOUBLE_EQ(g.back(), 1e-1);
  EXPECT_NEAR(g[1], 1e-3, 1e-15);
  EXPECT_THROW(log_grid(1.0, 1.0, 3), std::invalid_argument);
}
