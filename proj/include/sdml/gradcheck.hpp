#pragma once

// Finite-difference verification of the analytic loss gradients.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "sdml/hyperbolic.hpp"
#include "sdml/linalg.hpp"
#include "sdml/losses.hpp"

namespace sdml::gradcheck {

inline constexpr double kStep = 1e-6;
inline constexpr double kTolerance = 1e-6;

/// Block-wise relative error  max|a - n| / max(max|a|, max|n|).
inline double relative_error(const Mat& analytic, const Mat& numeric) {
  const double scale = std::max(analytic.cwiseAbs().maxCoeff(), numeric.cwiseAbs().maxCoeff());
  const double diff = (analytic - numeric).cwiseAbs().maxCoeff();
  if (scale == 0.0) return diff;
  return diff / scale;
}

/// Central differences of the mean loss with respect to every entry of `target`.
template <class LossFn>
Mat central_differences(Mat& target, LossFn&& loss, double step = kStep) {
  Mat grad(target.rows(), target.cols());
  for (Eigen::Index r = 0; r < target.rows(); ++r)
    for (Eigen::Index c = 0; c < target.cols(); ++c) {
      const double keep = target(r, c);
      target(r, c) = keep + step;
      const double up = loss();
      target(r, c) = keep - step;
      const double down = loss();
      target(r, c) = keep;
      grad(r, c) = (up - down) / (2.0 * step);
    }
  return grad;
}

inline Vec random_unit(Eigen::Index dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec v(dim);
  for (auto& x : v) x = n(rng);
  return v / v.norm();
}

inline Mat random_unit_rows(Eigen::Index rows, Eigen::Index dim, std::mt19937_64& rng) {
  Mat m(rows, dim);
  for (Eigen::Index i = 0; i < rows; ++i) m.row(i) = random_unit(dim, rng).transpose();
  return m;
}

struct Instance {
  LossConfig cfg;
  Mat protos;
  Mat src;
  Mat spk;
  std::vector<int> labels;
};

/// Distance of the instance from every hinge kink and clamp boundary; finite
/// differences are meaningless within a step of those.
inline double kink_clearance(const Instance& in) {
  double clear = 1.0;
  const auto& cfg = in.cfg;
  for (Eigen::Index i = 0; i < in.src.rows(); ++i) {
    const Vec f = in.src.row(i).transpose();
    const Vec s = in.spk.row(i).transpose();
    if (cfg.kind == LossKind::ChebySD) {
      const double dot = f.dot(s);
      clear = std::min({clear, std::abs(std::abs(dot) - cfg.tau), std::abs(dot)});
    }
    if (cfg.kind == LossKind::RiemannSD) {
      const double c = cfg.curvature;
      const double d = hyperbolic::raw::distance(hyperbolic::raw::exp_map0(f, c), hyperbolic::raw::exp_map0(s, c), c);
      clear = std::min(clear, std::abs(cfg.gamma - d));
    }
    if (cfg.kind == LossKind::AAM) {
      const double cy = in.protos.row(in.labels[i]).dot(in.src.row(i));
      clear = std::min(clear, kAamCosClamp - std::abs(cy));
    }
  }
  return clear;
}

/// Random configuration and batch for one loss kind; hyperparameters are
/// drawn around the defaults so both hinge states occur.
inline Instance random_instance(LossKind kind, std::mt19937_64& rng, Eigen::Index B = 4, Eigen::Index C = 5,
                                Eigen::Index D = 8) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> label(0, static_cast<int>(C) - 1);
  const int degrees[] = {5, 10, 20};
  for (;;) {
    Instance in;
    in.cfg.kind = kind;
    in.cfg.scale = 5.0 + 25.0 * u(rng);
    in.cfg.margin = 0.1 + 0.4 * u(rng);
    in.cfg.lambda = 2.0 * u(rng);
    in.cfg.tau = 0.3 * u(rng);
    in.cfg.gamma = 0.5 + 2.5 * u(rng);
    in.cfg.curvature = 0.5 + 5.5 * u(rng);
    in.cfg.cheb_K = degrees[std::uniform_int_distribution<int>(0, 2)(rng)];
    in.protos = random_unit_rows(C, D, rng);
    in.src = random_unit_rows(B, D, rng);
    in.spk = random_unit_rows(B, D, rng);
    for (Eigen::Index i = 0; i < B; ++i) {
      // Pull some speaker vectors toward the source so the hinges engage.
      if (u(rng) < 0.5) {
        Vec mixed = in.src.row(i).transpose() + 0.7 * in.spk.row(i).transpose();
        in.spk.row(i) = (mixed / mixed.norm()).transpose();
      }
      in.labels.push_back(label(rng));
    }
    if (kink_clearance(in) > 1e-3) return in;
  }
}

/// Optional corruption of the analytic gradient, used as a negative control.
enum class Fault { None, SourceBlock, PrototypeBlock };

struct InstanceError {
  double src = 0.0;
  double protos = 0.0;
};

inline InstanceError check_instance(const Instance& in, Fault fault = Fault::None) {
  const Loss loss(in.cfg);
  auto analytic = loss.evaluate(in.protos, in.src, in.spk, in.labels, true);
  if (fault == Fault::SourceBlock) analytic.grad_src(0, 0) *= 1.01;
  if (fault == Fault::PrototypeBlock) analytic.grad_protos(0, 0) += 1e-3;

  Mat src = in.src, protos = in.protos;
  auto value = [&] { return loss.evaluate(protos, src, in.spk, in.labels, false).loss; };
  const Mat num_src = central_differences(src, value);
  const Mat num_protos = central_differences(protos, value);
  return {relative_error(analytic.grad_src, num_src), relative_error(analytic.grad_protos, num_protos)};
}

struct KindReport {
  LossKind kind = LossKind::AAM;
  int instances = 0;
  double max_err_src = 0.0;
  double max_err_protos = 0.0;
  int worst_instance = -1;
  std::string worst_block;  ///< "src" or "protos"
  LossConfig worst_cfg;

  double max_error() const { return std::max(max_err_src, max_err_protos); }
  bool passed(double tol = kTolerance) const { return max_error() <= tol; }
};

inline KindReport check_kind(LossKind kind, int instances, std::uint64_t seed, Fault fault = Fault::None) {
  std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(kind)));
  KindReport rep;
  rep.kind = kind;
  rep.instances = instances;
  double worst = -1.0;
  for (int t = 0; t < instances; ++t) {
    const Instance in = random_instance(kind, rng);
    const InstanceError e = check_instance(in, fault);
    rep.max_err_src = std::max(rep.max_err_src, e.src);
    rep.max_err_protos = std::max(rep.max_err_protos, e.protos);
    if (std::max(e.src, e.protos) > worst) {
      worst = std::max(e.src, e.protos);
      rep.worst_instance = t;
      rep.worst_block = e.src >= e.protos ? "src" : "protos";
      rep.worst_cfg = in.cfg;
    }
  }
  return rep;
}

/// Target-logit slope of plain AAM without the clamp, i.e. s * d/dx cos(arccos x + m).
inline double aam_unclamped_slope(double cos_y, double scale, double margin) {
  return scale * chebyshev::exact_target_derivative(cos_y, margin);
}

inline double cheby_slope(double cos_y, double scale, double margin, int K) {
  const auto series = chebyshev::compute_coeffs(margin, K);
  return scale * chebyshev::eval_clenshaw(series, cos_y).slope;
}

}  // namespace sdml::gradcheck
