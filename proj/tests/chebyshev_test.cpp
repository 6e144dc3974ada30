#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "sdml/chebyshev.hpp"

namespace cheb = sdml::chebyshev;

namespace {

// Coefficients of cos(arccos x + 0.3) from a 10,000-node Chebyshev-Gauss
// quadrature at 40 significant digits (tests/oracles/compute_oracles.py).
const std::vector<double> kDenseOracleM03 = {
    -0.37626801493686538016, 0.95533648912560601964, 0.12542266958250148903, 0.0,
    0.02508453267862794415,  0.0,                    0.010750513120931479107, 0.0,
    0.0059725066016990390219, 0.0,                   0.0038006854565930734515};

// Truncation tails sum_{k > K} |a_k| for m = 0.3 (even terms telescope).
constexpr double kTailK5 = 0.037626801338952519198;
constexpr double kTailK10 = 0.017103091517705690544;
constexpr double kTailK20 = 0.0089587622235601236185;

double uniform_error(const cheb::ChebSeries& s, double m) {
  double worst = 0.0;
  for (int i = 0; i <= 10000; ++i) {
    const double x = std::clamp(-1.0 + 2.0 * i / 10000.0, -1.0, 1.0);
    worst = std::max(worst, std::abs(cheb::eval_clenshaw(s, x).value - cheb::exact_target(x, m)));
  }
  return worst;
}

}  // namespace

TEST(ExactTarget, ClosedFormValues) {
  EXPECT_NEAR(cheb::exact_target(1.0, 0.3), 0.95533648912560601964, 1e-15);
  EXPECT_NEAR(cheb::exact_target(std::cos(std::numbers::pi / 3), 0.0), 0.5, 1e-15);
  EXPECT_NEAR(cheb::exact_target(0.0, std::numbers::pi / 2), -1.0, 1e-15);
  EXPECT_NEAR(cheb::exact_target(0.5, 0.3), 0.22174023826245564877, 1e-15);
}

TEST(ExactTarget, RejectsOutsideInterval) {
  EXPECT_THROW(cheb::exact_target(1.0 + 1e-12, 0.3), sdml::DomainError);
  EXPECT_THROW(cheb::exact_target(-2.0, 0.3), sdml::DomainError);
}

TEST(ComputeCoeffs, ZeroMarginIsFirstChebyshevPolynomial) {
  const auto s = cheb::compute_coeffs(0.0, 10);
  ASSERT_EQ(s.coeffs().size(), 11u);
  for (int k = 0; k <= 10; ++k) {
    if (k == 1)
      EXPECT_NEAR(s.coeffs()[k], 1.0, 1e-10);
    else
      EXPECT_LE(std::abs(s.coeffs()[k]), 1e-10) << "k=" << k;
  }
}

TEST(ComputeCoeffs, MatchesDenseQuadratureOracle) {
  const auto s = cheb::compute_coeffs(0.3, 10);
  for (int k = 0; k <= 10; ++k) EXPECT_NEAR(s.coeffs()[k], kDenseOracleM03[k], 1e-6) << "k=" << k;
}

TEST(ComputeCoeffs, OddCoefficientsVanishBeyondFirst) {
  const auto s = cheb::compute_coeffs(0.3, 20);
  for (int k = 3; k <= 20; k += 2) EXPECT_LE(std::abs(s.coeffs()[k]), 1e-10) << "k=" << k;
}

TEST(ComputeCoeffs, Deterministic) {
  const auto a = cheb::compute_coeffs(0.3, 10);
  const auto b = cheb::compute_coeffs(0.3, 10);
  EXPECT_EQ(a.coeffs(), b.coeffs());
}

TEST(ComputeCoeffs, Preconditions) {
  EXPECT_THROW(cheb::compute_coeffs(0.3, 0), sdml::InvalidArgument);
  EXPECT_THROW(cheb::compute_coeffs(0.3, 10, 39), sdml::InvalidArgument);
  EXPECT_NO_THROW(cheb::compute_coeffs(0.3, 10, 40));
}

TEST(EvalClenshaw, FirstPolynomial) {
  const cheb::ChebSeries s(0.0, {0.0, 1.0});
  EXPECT_DOUBLE_EQ(cheb::eval_clenshaw(s, 0.5).value, 0.5);
  EXPECT_DOUBLE_EQ(cheb::eval_clenshaw(s, 0.5).slope, 1.0);
}

TEST(EvalClenshaw, ApproximatesTargetAtSixtyDegrees) {
  const auto s = cheb::compute_coeffs(0.3, 10);
  const double x = std::cos(std::numbers::pi / 3);
  EXPECT_NEAR(cheb::eval_clenshaw(s, x).value, cheb::exact_target(x, 0.3), 0.01);
}

TEST(EvalClenshaw, EndpointsAreFinite) {
  const auto s = cheb::compute_coeffs(0.3, 10);
  for (double x : {-1.0, 1.0}) {
    const auto r = cheb::eval_clenshaw(s, x);
    EXPECT_TRUE(std::isfinite(r.value));
    EXPECT_TRUE(std::isfinite(r.slope));
    EXPECT_LT(std::abs(r.slope), 10.0);
  }
  EXPECT_THROW(cheb::eval_clenshaw(s, 1.5), sdml::DomainError);
}

TEST(EvalClenshaw, EqualsDirectChebyshevSum) {
  const auto s = cheb::compute_coeffs(0.3, 20);
  for (int i = 1; i < 1000; ++i) {
    const double x = -1.0 + 2.0 * i / 1000.0;
    double direct = 0.5 * s.coeffs()[0];
    for (int k = 1; k <= 20; ++k) direct += s.coeffs()[k] * std::cos(k * std::acos(x));
    EXPECT_NEAR(cheb::eval_clenshaw(s, x).value, direct, 1e-12);
  }
}

TEST(EvalClenshaw, DerivativeMatchesFiniteDifferences) {
  const auto s = cheb::compute_coeffs(0.3, 10);
  for (int i = 1; i < 100; ++i) {
    const double x = -0.99 + 1.98 * i / 100.0;
    const double h = 1e-6;
    const double fd = (cheb::eval_clenshaw(s, x + h).value - cheb::eval_clenshaw(s, x - h).value) / (2 * h);
    EXPECT_NEAR(cheb::eval_clenshaw(s, x).slope, fd, 1e-7);
  }
}

TEST(Approximation, UniformErrorShrinksWithDegree) {
  const double e5 = uniform_error(cheb::compute_coeffs(0.3, 5), 0.3);
  const double e10 = uniform_error(cheb::compute_coeffs(0.3, 10), 0.3);
  const double e20 = uniform_error(cheb::compute_coeffs(0.3, 20), 0.3);
  EXPECT_GE(e5, e10);
  EXPECT_GE(e10, e20);
  // All even-order terms share a sign, so the sup error sits at x = +-1 and
  // equals the truncation tail.
  EXPECT_NEAR(e5, kTailK5, 0.1 * kTailK5);
  EXPECT_NEAR(e10, kTailK10, 0.1 * kTailK10);
  EXPECT_NEAR(e20, kTailK20, 0.1 * kTailK20);
}

TEST(Approximation, SlopeBoundedWhileExactSlopeDiverges) {
  const auto s = cheb::compute_coeffs(0.3, 10);
  double sup = 0.0;
  for (int i = 0; i <= 2000; ++i) sup = std::max(sup, std::abs(cheb::eval_clenshaw(s, -1.0 + i / 1000.0).slope));
  EXPECT_LT(sup, 10.0);
  EXPECT_GT(std::abs(cheb::exact_target_derivative(1.0 - 1e-12, 0.3)), 1e5);
}
