#pragma once

// Degree-K Chebyshev surrogate of the additive angular margin
//   f(x) = cos(arccos(x) + m),  x in [-1, 1],
// whose derivative stays bounded at the endpoints where arccos' blows up.

#include <cmath>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "sdml/errors.hpp"

namespace sdml::chebyshev {

inline constexpr int kDefaultQuadNodes = 512;

inline void require_unit_interval(double x, const char* who) {
  if (!(std::abs(x) <= 1.0)) throw DomainError(std::string(who) + ": |x| > 1 (x = " + std::to_string(x) + ")");
}

/// cos(arccos(x) + m) in closed form.
inline double exact_target(double x, double m) {
  require_unit_interval(x, "exact_target");
  return x * std::cos(m) - std::sin(m) * std::sqrt(1.0 - x * x);
}

/// Derivative of exact_target; diverges as x -> +-1 whenever sin(m) != 0.
inline double exact_target_derivative(double x, double m) {
  require_unit_interval(x, "exact_target_derivative");
  return std::cos(m) + std::sin(m) * x / std::sqrt(1.0 - x * x);
}

/// Value and first derivative of a series at one point.
struct ValueAndSlope {
  double value;
  double slope;
};

/// Coefficients a_0..a_K of  a_0/2 + sum_k a_k T_k(x), plus the derivative
/// series computed once at construction. Immutable.
class ChebSeries {
 public:
  ChebSeries(double margin, std::vector<double> coeffs) : margin_(margin), coeffs_(std::move(coeffs)) {
    if (coeffs_.size() < 2) throw InvalidArgument("ChebSeries needs degree >= 1");
    for (double a : coeffs_)
      if (!std::isfinite(a)) throw InvalidArgument("ChebSeries: non-finite coefficient");
    // d_{k-1} = d_{k+1} + 2 k a_k, same a_0/2 convention.
    const std::size_t n = coeffs_.size();
    deriv_.assign(n, 0.0);
    for (std::size_t k = n - 1; k >= 1; --k) {
      const double upper = (k + 1 < n) ? deriv_[k + 1] : 0.0;
      deriv_[k - 1] = upper + 2.0 * static_cast<double>(k) * coeffs_[k];
    }
  }

  double margin() const noexcept { return margin_; }
  int degree() const noexcept { return static_cast<int>(coeffs_.size()) - 1; }
  const std::vector<double>& coeffs() const noexcept { return coeffs_; }
  const std::vector<double>& derivative_coeffs() const noexcept { return deriv_; }

 private:
  double margin_;
  std::vector<double> coeffs_;
  std::vector<double> deriv_;
};

/// Clenshaw backward recurrence for a_0/2 + sum_{k>=1} a_k T_k(x).
inline double clenshaw(const std::vector<double>& a, double x) {
  double b1 = 0.0, b2 = 0.0;
  const double x2 = 2.0 * x;
  for (std::size_t k = a.size() - 1; k >= 1; --k) {
    const double b0 = a[k] + x2 * b1 - b2;
    b2 = b1;
    b1 = b0;
  }
  return 0.5 * a[0] + x * b1 - b2;
}

/// Chebyshev-Gauss quadrature with N nodes theta_j = pi (j - 1/2) / N.
inline ChebSeries compute_coeffs(double m, int K, int quad_nodes = kDefaultQuadNodes) {
  if (K < 1) throw InvalidArgument("compute_coeffs: K must be >= 1");
  if (quad_nodes < 4 * K) throw InvalidArgument("compute_coeffs: need quad_nodes >= 4K");
  if (!std::isfinite(m)) throw InvalidArgument("compute_coeffs: non-finite margin");
  const int n = quad_nodes;
  std::vector<double> f(n), theta(n);
  for (int j = 0; j < n; ++j) {
    theta[j] = std::numbers::pi * (j + 0.5) / n;
    // arccos(cos theta) = theta on (0, pi), so the target is cos(theta + m).
    f[j] = std::cos(theta[j] + m);
  }
  std::vector<double> a(K + 1);
  for (int k = 0; k <= K; ++k) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += f[j] * std::cos(k * theta[j]);
    a[k] = 2.0 * s / n;
  }
  return {m, std::move(a)};
}

inline ValueAndSlope eval_clenshaw(const ChebSeries& series, double x) {
  require_unit_interval(x, "eval_clenshaw");
  return {clenshaw(series.coeffs(), x), clenshaw(series.derivative_coeffs(), x)};
}

}  // namespace sdml::chebyshev
