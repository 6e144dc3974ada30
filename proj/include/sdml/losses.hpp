#pragma once

// Margin-softmax losses for source embeddings, with optional speaker
// disentanglement penalties:
//
//   AAM        target s cos(theta_y + m),            non-target s cos(theta_j)
//   ChebyAAM   target s F_cheb(cos theta_y, m),      non-target s cos(theta_j)
//   ChebySD    target s F_cheb(cos theta_y, m),      non-target s (cos(theta_j) + lambda M_spk)
//   HAM        target -s (d_y + m),                  non-target -s d_j
//   RiemannSD  target -s (d_y + m),                  non-target -s d_j + lambda M_H
//
// with M_spk = max(0, |<f_src, f_spk>| - tau) and
//      M_H   = max(0, gamma - d_H(exp0(f_src), exp0(f_spk))).
// Note the asymmetry: lambda M_spk sits inside the scale, lambda M_H outside.
//
// Gradients are hand-derived per primitive and checked against finite
// differences in tests/losses_test.cpp and the gradcheck command.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sdml/chebyshev.hpp"
#include "sdml/errors.hpp"
#include "sdml/hyperbolic.hpp"
#include "sdml/linalg.hpp"

namespace sdml {

enum class LossKind { AAM, ChebyAAM, ChebySD, HAM, RiemannSD };

inline constexpr LossKind kAllLossKinds[] = {LossKind::AAM, LossKind::ChebyAAM, LossKind::ChebySD,
                                             LossKind::HAM, LossKind::RiemannSD};

/// CLI spelling: aam | cheby | cheby-sd | ham | riemann-sd.
inline std::string_view to_string(LossKind k) {
  switch (k) {
    case LossKind::AAM: return "aam";
    case LossKind::ChebyAAM: return "cheby";
    case LossKind::ChebySD: return "cheby-sd";
    case LossKind::HAM: return "ham";
    case LossKind::RiemannSD: return "riemann-sd";
  }
  return "?";
}

inline std::string_view display_name(LossKind k) {
  switch (k) {
    case LossKind::AAM: return "AAM-Softmax";
    case LossKind::ChebyAAM: return "ChebyAAM";
    case LossKind::ChebySD: return "ChebySD-AAM";
    case LossKind::HAM: return "HAM-Softmax";
    case LossKind::RiemannSD: return "RiemannSD-AAM";
  }
  return "?";
}

inline LossKind parse_loss_kind(std::string_view s) {
  for (LossKind k : kAllLossKinds)
    if (to_string(k) == s) return k;
  throw ConfigError("unknown loss kind '" + std::string(s) + "'");
}

inline bool is_hyperbolic(LossKind k) { return k == LossKind::HAM || k == LossKind::RiemannSD; }

struct LossConfig {
  LossKind kind = LossKind::AAM;
  double scale = 30.0;
  double margin = 0.3;
  double lambda = 1.0;
  double tau = 0.1;
  double gamma = 2.0;
  double curvature = 6.0;
  int cheb_K = 10;

  void validate() const {
    auto bad = [](const std::string& what) { throw ConfigError("loss config: " + what); };
    if (!(scale > 0.0) || !std::isfinite(scale)) bad("scale must be positive");
    if (!(margin >= 0.0) || !std::isfinite(margin)) bad("margin must be >= 0");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) bad("lambda must be >= 0");
    if (!(tau >= 0.0 && tau <= 1.0)) bad("tau must lie in [0, 1]");
    if (!(gamma > 0.0) || !std::isfinite(gamma)) bad("gamma must be positive");
    if (!(curvature > 0.0) || !std::isfinite(curvature)) bad("curvature must be positive");
    if (cheb_K < 1) bad("K must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Validated containers.

inline constexpr double kUnitNormTol = 1e-9;

inline void require_unit_rows(const Mat& m, const char* what) {
  if (!m.allFinite()) throw InvalidArgument(std::string(what) + ": non-finite entries");
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    if (std::abs(m.row(i).norm() - 1.0) > kUnitNormTol)
      throw InvalidArgument(std::string(what) + ": row " + std::to_string(i) + " is not unit-norm");
}

/// C class prototypes (one unit-norm row each).
class PrototypeBank {
 public:
  explicit PrototypeBank(Mat weights) : w_(std::move(weights)) {
    if (w_.rows() < 1) throw InvalidArgument("PrototypeBank needs at least one class");
    require_unit_rows(w_, "PrototypeBank");
  }
  const Mat& weights() const noexcept { return w_; }
  Eigen::Index classes() const noexcept { return w_.rows(); }
  Eigen::Index dim() const noexcept { return w_.cols(); }

 private:
  Mat w_;
};

class LossBatch {
 public:
  LossBatch(Mat src, Mat spk, std::vector<int> labels)
      : src_(std::move(src)), spk_(std::move(spk)), labels_(std::move(labels)) {
    if (src_.rows() != spk_.rows() || src_.cols() != spk_.cols())
      throw InvalidArgument("LossBatch: source and speaker embeddings differ in shape");
    if (static_cast<std::size_t>(src_.rows()) != labels_.size())
      throw InvalidArgument("LossBatch: label count does not match batch size");
    require_unit_rows(src_, "LossBatch source embeddings");
    require_unit_rows(spk_, "LossBatch speaker embeddings");
  }
  const Mat& src() const noexcept { return src_; }
  const Mat& spk() const noexcept { return spk_; }
  const std::vector<int>& labels() const noexcept { return labels_; }

 private:
  Mat src_, spk_;
  std::vector<int> labels_;
};

// ---------------------------------------------------------------------------
// Speaker margins.

inline double speaker_margin_euclidean(const Vec& f_src, const Vec& f_spk, double tau) {
  if (f_src.size() != f_spk.size()) throw InvalidArgument("speaker margin: dimension mismatch");
  return std::max(0.0, std::abs(f_src.dot(f_spk)) - tau);
}

inline double speaker_margin_hyperbolic(const Vec& f_src, const Vec& f_spk, double gamma,
                                        hyperbolic::Curvature c) {
  if (f_src.size() != f_spk.size()) throw InvalidArgument("speaker margin: dimension mismatch");
  const double d = hyperbolic::raw::distance(hyperbolic::raw::exp_map0(f_src, c.value()),
                                             hyperbolic::raw::exp_map0(f_spk, c.value()), c.value());
  return std::max(0.0, gamma - d);
}

// ---------------------------------------------------------------------------

struct LossResult {
  double loss = 0.0;        ///< mean over the batch
  Vec per_sample;           ///< B
  Mat logits;               ///< B x C
  Mat grad_src;             ///< B x D, empty unless gradients were requested
  Mat grad_protos;          ///< C x D, empty unless gradients were requested
};

/// AAM evaluates its target slope with cos(theta_y) clamped into this band.
inline constexpr double kAamCosClamp = 1.0 - 1e-7;

/// Loss evaluator for one configuration. Holds the Chebyshev series so it is
/// built once per training run rather than per call.
class Loss {
 public:
  explicit Loss(const LossConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    if (cfg_.kind == LossKind::ChebyAAM || cfg_.kind == LossKind::ChebySD)
      series_.emplace(chebyshev::compute_coeffs(cfg_.margin, cfg_.cheb_K));
  }

  const LossConfig& config() const noexcept { return cfg_; }

  /// Raw entry point: no unit-norm checks, so finite-difference probes can
  /// perturb inputs freely. Rejects NaN and malformed labels.
  LossResult evaluate(const Mat& protos, const Mat& src, const Mat& spk, std::span<const int> labels,
                      bool want_grad) const {
    check_shapes(protos, src, spk, labels);
    const Eigen::Index B = src.rows(), C = protos.rows(), D = src.cols();
    LossResult out;
    out.per_sample = Vec::Zero(B);
    out.logits = Mat::Zero(B, C);
    if (want_grad) {
      out.grad_src = Mat::Zero(B, D);
      out.grad_protos = Mat::Zero(C, D);
    }
    if (B == 0) return out;

    const bool hyp = is_hyperbolic(cfg_.kind);
    const double c = cfg_.curvature;
    Mat proj_protos;
    Mat grad_proj_protos;
    if (hyp) {
      proj_protos.resize(C, D);
      for (Eigen::Index j = 0; j < C; ++j) proj_protos.row(j) = hyperbolic::raw::exp_map0(protos.row(j).transpose(), c).transpose();
      if (want_grad) grad_proj_protos = Mat::Zero(C, D);
    }

    const double s = cfg_.scale;
    const double inv_b = 1.0 / static_cast<double>(B);
    Vec logit(C);
    for (Eigen::Index i = 0; i < B; ++i) {
      const int y = labels[i];
      const Vec f = src.row(i).transpose();
      const Vec spk_i = spk.row(i).transpose();

      // ---- forward ---------------------------------------------------------
      double target_slope = 0.0;  // d logit_y / d cos_y   (Euclidean kinds)
      double penalty = 0.0;       // M_spk or M_H
      Vec penalty_grad;           // d M / d f (ChebySD) or d M / d exp0(f) (RiemannSD)
      Vec cosines, dists, proj_f, proj_spk;
      if (!hyp) {
        cosines = protos * f;
        if (cfg_.kind == LossKind::ChebySD) {
          const double dot = f.dot(spk_i);
          if (std::abs(dot) > cfg_.tau) {
            penalty = std::abs(dot) - cfg_.tau;
            penalty_grad = (dot > 0.0 ? 1.0 : -1.0) * spk_i;
          }
        }
        for (Eigen::Index j = 0; j < C; ++j) logit[j] = s * (cosines[j] + cfg_.lambda * penalty);
        const auto [val, slope] = target_logit(cosines[y]);
        logit[y] = val;
        target_slope = slope;
      } else {
        proj_f = hyperbolic::raw::exp_map0(f, c);
        dists.resize(C);
        for (Eigen::Index j = 0; j < C; ++j) dists[j] = hyperbolic::raw::distance(proj_f, proj_protos.row(j).transpose(), c);
        if (cfg_.kind == LossKind::RiemannSD) {
          proj_spk = hyperbolic::raw::exp_map0(spk_i, c);
          const double d_spk = hyperbolic::raw::distance(proj_f, proj_spk, c);
          penalty = std::max(0.0, cfg_.gamma - d_spk);
        }
        for (Eigen::Index j = 0; j < C; ++j) logit[j] = -s * dists[j] + cfg_.lambda * penalty;
        logit[y] = -s * (dists[y] + cfg_.margin);
      }
      out.logits.row(i) = logit.transpose();
      out.per_sample[i] = neg_log_softmax(logit, y);
      if (!want_grad) continue;

      // ---- backward --------------------------------------------------------
      const Vec prob = softmax(logit);
      Vec g_logit = prob * inv_b;
      g_logit[y] -= inv_b;
      const double g_nontarget = g_logit.sum() - g_logit[y];

      if (!hyp) {
        Vec g_cos = s * g_logit;
        g_cos[y] = g_logit[y] * target_slope;
        out.grad_src.row(i) += (protos.transpose() * g_cos).transpose();
        out.grad_protos.noalias() += g_cos * f.transpose();
        if (penalty > 0.0)
          out.grad_src.row(i) += (s * cfg_.lambda * g_nontarget) * penalty_grad.transpose();
      } else {
        Vec g_proj_f = Vec::Zero(D);
        for (Eigen::Index j = 0; j < C; ++j) {
          auto [gf, gw] = hyperbolic::raw::distance_vjp(proj_f, proj_protos.row(j).transpose(), c, -s * g_logit[j]);
          g_proj_f += gf;
          grad_proj_protos.row(j) += gw.transpose();
        }
        if (penalty > 0.0) {
          // dM_H / d d_spk = -1
          auto [gf, unused] = hyperbolic::raw::distance_vjp(proj_f, proj_spk, c, -cfg_.lambda * g_nontarget);
          g_proj_f += gf;
        }
        out.grad_src.row(i) = hyperbolic::raw::exp_map0_vjp(f, c, g_proj_f).transpose();
      }
    }
    if (hyp && want_grad)
      for (Eigen::Index j = 0; j < C; ++j)
        out.grad_protos.row(j) = hyperbolic::raw::exp_map0_vjp(protos.row(j).transpose(), c, grad_proj_protos.row(j).transpose()).transpose();

    out.loss = out.per_sample.mean();
    return out;
  }

  /// Target logit and its slope in cos(theta_y); Euclidean kinds only.
  std::pair<double, double> target_logit(double cos_y) const {
    const double s = cfg_.scale;
    if (cfg_.kind == LossKind::AAM) {
      // The value is exact up to the endpoints; the slope's 1/sin(theta)
      // factor is evaluated at cos(theta) clamped into the band.
      const double cm = std::cos(cfg_.margin), sm = std::sin(cfg_.margin);
      const double sin_t = std::sqrt(std::max(0.0, 1.0 - cos_y * cos_y));
      const double x = std::clamp(cos_y, -kAamCosClamp, kAamCosClamp);
      const double slope = s * (cm + sm * x / std::sqrt(1.0 - x * x));
      return {s * (cos_y * cm - sm * sin_t), slope};
    }
    // The polynomial is evaluated as-is slightly outside [-1, 1] so that
    // probes at cos = 1 +- h stay smooth.
    return {s * chebyshev::clenshaw(series_->coeffs(), cos_y),
            s * chebyshev::clenshaw(series_->derivative_coeffs(), cos_y)};
  }

 private:
  static double neg_log_softmax(const Vec& logit, int y) {
    // log(1 + sum_{j != y} exp(l_j - l_y)), accurate when the loss is tiny.
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < logit.size(); ++j)
      if (j != y) mx = std::max(mx, logit[j] - logit[y]);
    if (logit.size() == 1) return 0.0;
    if (mx <= 0.0) {
      double acc = 0.0;
      for (Eigen::Index j = 0; j < logit.size(); ++j)
        if (j != y) acc += std::exp(logit[j] - logit[y]);
      return std::log1p(acc);
    }
    double acc = std::exp(-mx);
    for (Eigen::Index j = 0; j < logit.size(); ++j)
      if (j != y) acc += std::exp(logit[j] - logit[y] - mx);
    return mx + std::log(acc);
  }

  static Vec softmax(const Vec& logit) {
    Vec p = (logit.array() - logit.maxCoeff()).exp();
    return p / p.sum();
  }

  static void check_shapes(const Mat& protos, const Mat& src, const Mat& spk, std::span<const int> labels) {
    if (protos.rows() < 1) throw InvalidArgument("loss: need at least one prototype");
    if (protos.cols() != src.cols() || spk.cols() != src.cols() || spk.rows() != src.rows())
      throw InvalidArgument("loss: embedding dimensions disagree");
    if (static_cast<std::size_t>(src.rows()) != labels.size())
      throw InvalidArgument("loss: label count does not match batch size");
    if (protos.hasNaN() || src.hasNaN() || spk.hasNaN()) throw InvalidArgument("loss: NaN in inputs");
    for (int y : labels)
      if (y < 0 || y >= protos.rows()) throw InvalidArgument("loss: label out of range: " + std::to_string(y));
  }

  LossConfig cfg_;
  std::optional<chebyshev::ChebSeries> series_;
};

// ---------------------------------------------------------------------------
// Free-function surface on validated types.

struct LossValue {
  double loss;
  Mat logits;
};

struct LossGradients {
  Mat grad_src;
  Mat grad_protos;
};

inline LossValue loss_forward(const LossConfig& cfg, const PrototypeBank& protos, const LossBatch& batch) {
  auto r = Loss(cfg).evaluate(protos.weights(), batch.src(), batch.spk(), batch.labels(), false);
  return {r.loss, std::move(r.logits)};
}

inline LossGradients loss_backward(const LossConfig& cfg, const PrototypeBank& protos, const LossBatch& batch) {
  auto r = Loss(cfg).evaluate(protos.weights(), batch.src(), batch.spk(), batch.labels(), true);
  return {std::move(r.grad_src), std::move(r.grad_protos)};
}

}  // namespace sdml
