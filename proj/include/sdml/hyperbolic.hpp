#pragma once

// Poincare-ball geometry: exponential map at the origin, Mobius addition and
// the geodesic distance, each with a vector-Jacobian product for backprop.
//
// The ball of curvature -c is { x : sqrt(c) * |x| < 1 }.

#include <cmath>
#include <string>
#include <utility>

#include "sdml/errors.hpp"
#include "sdml/linalg.hpp"

namespace sdml::hyperbolic {

/// Largest admissible sqrt(c) * |x| for a point produced by this module.
inline constexpr double kMaxScaledNorm = 1.0 - 1e-7;
/// Upper clamp on the artanh argument inside the distance.
inline constexpr double kMaxArtanhArg = 1.0 - 1e-7;

class Curvature {
 public:
  explicit Curvature(double c) : c_(c) {
    if (!(c > 0.0) || !std::isfinite(c))
      throw InvalidArgument("curvature must be positive and finite, got " + std::to_string(c));
  }
  double value() const noexcept { return c_; }
  double sqrt() const noexcept { return std::sqrt(c_); }
  /// Ball radius 1/sqrt(c).
  double radius() const noexcept { return 1.0 / std::sqrt(c_); }
  friend bool operator==(Curvature a, Curvature b) noexcept { return a.c_ == b.c_; }

 private:
  double c_;
};

class PoincarePoint {
 public:
  PoincarePoint(Vec coords, Curvature c) : coords_(std::move(coords)), c_(c) {
    if (!coords_.allFinite()) throw InvalidArgument("Poincare point has non-finite coordinates");
    if (!(c_.sqrt() * coords_.norm() < 1.0))
      throw InvalidArgument("point lies outside the Poincare ball");
  }
  static PoincarePoint origin(Eigen::Index dim, Curvature c) { return {Vec::Zero(dim), c}; }

  const Vec& coords() const noexcept { return coords_; }
  Curvature curvature() const noexcept { return c_; }
  Eigen::Index dim() const noexcept { return coords_.size(); }

 private:
  Vec coords_;
  Curvature c_;
};

// ---------------------------------------------------------------------------
// Raw kernels on plain vectors; c is the curvature magnitude. These skip
// validation and are what the losses call in their inner loops.

namespace raw {

/// tanh(s r) / (s r) and its derivative in r divided by r, with the series
/// branch near zero where both expressions cancel catastrophically.
inline std::pair<double, double> exp_gain(double r, double sqrt_c) {
  const double z = sqrt_c * r;
  if (z < 1e-4) {
    const double z2 = z * z;
    const double g = 1.0 - z2 / 3.0 + 2.0 * z2 * z2 / 15.0;
    // g'(r)/r = c * (-2/3 + 8 z^2/15)
    const double dg_over_r = sqrt_c * sqrt_c * (-2.0 / 3.0 + 8.0 * z2 / 15.0);
    return {g, dg_over_r};
  }
  const double t = std::tanh(z);
  const double sech2 = 1.0 - t * t;
  const double g = t / z;
  const double dg_over_r = (z * sech2 - t) / (sqrt_c * r * r * r);
  return {g, dg_over_r};
}

inline Vec exp_map0(const Eigen::Ref<const Vec>& v, double c) {
  const double sc = std::sqrt(c);
  const double r = v.norm();
  if (r == 0.0) return Vec::Zero(v.size());
  const double rmax = kMaxScaledNorm / sc;
  const auto [g, dg] = exp_gain(r, sc);
  if (g * r > rmax) return v * (rmax / r);
  return v * g;
}

/// Gradient of <grad_out, exp_map0(v)> with respect to v.
inline Vec exp_map0_vjp(const Eigen::Ref<const Vec>& v, double c,
                        const Eigen::Ref<const Vec>& grad_out) {
  const double sc = std::sqrt(c);
  const double r = v.norm();
  if (r == 0.0) return grad_out;  // Jacobian at the origin is the identity
  const double rmax = kMaxScaledNorm / sc;
  const auto [g, dg_over_r] = exp_gain(r, sc);
  if (g * r > rmax) {
    // Radial component frozen by the clamp.
    const Vec u = v / r;
    return (rmax / r) * (grad_out - u * u.dot(grad_out));
  }
  return g * grad_out + dg_over_r * v.dot(grad_out) * v;
}

/// Mobius addition without the ball clamp on the result.
inline Vec mobius_add(const Eigen::Ref<const Vec>& x, const Eigen::Ref<const Vec>& y, double c) {
  const double xy = x.dot(y);
  const double xx = x.squaredNorm();
  const double yy = y.squaredNorm();
  const double a = 1.0 + 2.0 * c * xy + c * yy;
  const double b = 1.0 - c * xx;
  const double d = 1.0 + 2.0 * c * xy + c * c * xx * yy;
  return (a * x + b * y) / d;
}

/// Returns (d/dx, d/dy) of <grad_out, x (+) y>.
inline std::pair<Vec, Vec> mobius_add_vjp(const Eigen::Ref<const Vec>& x,
                                          const Eigen::Ref<const Vec>& y, double c,
                                          const Eigen::Ref<const Vec>& grad_out) {
  const double xy = x.dot(y);
  const double xx = x.squaredNorm();
  const double yy = y.squaredNorm();
  const double a = 1.0 + 2.0 * c * xy + c * yy;
  const double b = 1.0 - c * xx;
  const double d = 1.0 + 2.0 * c * xy + c * c * xx * yy;
  const Vec num = a * x + b * y;

  const Vec gn = grad_out / d;                    // through numerator
  const double gd = -grad_out.dot(num) / (d * d);  // through denominator
  const double xgn = x.dot(gn);
  const double ygn = y.dot(gn);

  Vec gx = a * gn + (2.0 * c * xgn) * y - (2.0 * c * ygn) * x;
  Vec gy = b * gn + (2.0 * c * xgn) * (x + y);
  gx += gd * (2.0 * c * y + 2.0 * c * c * yy * x);
  gy += gd * (2.0 * c * x + 2.0 * c * c * xx * y);
  return {std::move(gx), std::move(gy)};
}

/// 1 - c |(-x) (+) y|^2 evaluated from the product identity
///   (1 - c|x|^2)(1 - c|y|^2) / (1 - 2c<x,y> + c^2 |x|^2 |y|^2),
/// which keeps full relative precision near the boundary where the direct
/// form cancels.
inline double one_minus_scaled_sq(const Eigen::Ref<const Vec>& x, const Eigen::Ref<const Vec>& y, double c) {
  const double xx = x.squaredNorm(), yy = y.squaredNorm(), xy = x.dot(y);
  return (1.0 - c * xx) * (1.0 - c * yy) / (1.0 - 2.0 * c * xy + c * c * xx * yy);
}

inline double distance(const Eigen::Ref<const Vec>& x, const Eigen::Ref<const Vec>& y, double c) {
  const double sc = std::sqrt(c);
  const Vec w = mobius_add(-x, y, c);
  const double t = sc * w.norm();
  if (t >= kMaxArtanhArg) return 2.0 / sc * std::atanh(kMaxArtanhArg);
  // artanh(t) = 1/2 log((1 + t)^2 / (1 - t^2))
  const double q = std::max(one_minus_scaled_sq(x, y, c), 1.0 - kMaxArtanhArg * kMaxArtanhArg);
  return 1.0 / sc * std::log((1.0 + t) * (1.0 + t) / q);
}

/// Returns (d/dx, d/dy) of grad_out * distance(x, y). Zero at x == y (subgradient)
/// and inside the artanh clamp.
inline std::pair<Vec, Vec> distance_vjp(const Eigen::Ref<const Vec>& x,
                                        const Eigen::Ref<const Vec>& y, double c,
                                        double grad_out) {
  const double sc = std::sqrt(c);
  const Vec neg_x = -x;
  const Vec w = mobius_add(neg_x, y, c);
  const double n = w.norm();
  const double t = sc * n;
  if (n == 0.0 || t >= kMaxArtanhArg) return {Vec::Zero(x.size()), Vec::Zero(y.size())};
  // d/dt (2/sc) artanh(t) = (2/sc) / (1 - t^2); dt/dw = sc * w / n
  const Vec gw = (grad_out * 2.0 / one_minus_scaled_sq(x, y, c) / n) * w;
  auto [g_negx, gy] = mobius_add_vjp(neg_x, y, c, gw);
  return {-g_negx, std::move(gy)};
}

}  // namespace raw

// ---------------------------------------------------------------------------
// Checked API on PoincarePoint.

inline void require_same_ball(const PoincarePoint& x, const PoincarePoint& y) {
  if (!(x.curvature() == y.curvature())) throw InvalidArgument("points lie in balls of different curvature");
  if (x.dim() != y.dim()) throw InvalidArgument("points have different dimensions");
}

inline PoincarePoint exp_map_origin(const Vec& v, Curvature c) {
  if (!v.allFinite()) throw InvalidArgument("exp_map_origin: non-finite input");
  return {raw::exp_map0(v, c.value()), c};
}

inline PoincarePoint mobius_add(const PoincarePoint& x, const PoincarePoint& y) {
  require_same_ball(x, y);
  const double c = x.curvature().value();
  Vec z = raw::mobius_add(x.coords(), y.coords(), c);
  const double rmax = kMaxScaledNorm / std::sqrt(c);
  const double n = z.norm();
  if (n > rmax) z *= rmax / n;
  return {std::move(z), x.curvature()};
}

inline double hyperbolic_distance(const PoincarePoint& x, const PoincarePoint& y) {
  require_same_ball(x, y);
  return raw::distance(x.coords(), y.coords(), x.curvature().value());
}

}  // namespace sdml::hyperbolic
