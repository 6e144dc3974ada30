#pragma once

// Deterministic mini-batch training of a 2-layer encoder plus class
// prototypes under one of the margin losses.
//
//   h = tanh(W1 x + b1),  z = W2 h + b2,  f = z / |z|
//
// Prototypes are stored unnormalized and length-normalized on every forward
// pass, so Adam never has to respect the sphere constraint.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sdml/errors.hpp"
#include "sdml/linalg.hpp"
#include "sdml/losses.hpp"
#include "sdml/synthdata.hpp"

namespace sdml {

struct EncoderParams {
  Mat w1;  ///< hidden x input
  Vec b1;  ///< hidden
  Mat w2;  ///< embed x hidden
  Vec b2;  ///< embed

  Eigen::Index input_dim() const { return w1.cols(); }
  Eigen::Index hidden_dim() const { return w1.rows(); }
  Eigen::Index embed_dim() const { return w2.rows(); }
  Eigen::Index size() const { return w1.size() + b1.size() + w2.size() + b2.size(); }
  bool finite() const { return w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite(); }

  static EncoderParams zeros(Eigen::Index in, Eigen::Index hidden, Eigen::Index embed) {
    return {Mat::Zero(hidden, in), Vec::Zero(hidden), Mat::Zero(embed, hidden), Vec::Zero(embed)};
  }
  friend bool operator==(const EncoderParams& a, const EncoderParams& b) {
    return a.w1 == b.w1 && a.b1 == b.b1 && a.w2 == b.w2 && a.b2 == b.b2;
  }
};

struct TrainConfig {
  double base_lr = 1e-3;
  double decay_per_epoch = 0.9;
  long warmup_steps = 2000;
  double weight_decay = 1e-7;
  int batch_size = 200;
  int epochs = 20;
  int hidden_dim = 64;
  std::uint64_t seed = 1;
  LossConfig loss;

  /// Desk-scale schedule used by the acceptance experiments.
  static TrainConfig desk_scale() {
    TrainConfig c;
    c.warmup_steps = 200;
    c.batch_size = 64;
    c.epochs = 20;
    return c;
  }

  void validate() const {
    auto bad = [](const std::string& m) { throw ConfigError("train config: " + m); };
    if (!(base_lr > 0.0) || !std::isfinite(base_lr)) bad("base_lr must be positive");
    if (!(decay_per_epoch > 0.0 && decay_per_epoch <= 1.0)) bad("decay_per_epoch must lie in (0, 1]");
    if (warmup_steps < 0) bad("warmup_steps must be >= 0");
    if (!(weight_decay >= 0.0)) bad("weight_decay must be >= 0");
    if (batch_size < 1) bad("batch_size must be >= 1");
    if (epochs < 1) bad("epochs must be >= 1");
    if (hidden_dim < 1) bad("hidden_dim must be >= 1");
    loss.validate();
  }
};

struct TrainReport {
  std::vector<double> epoch_loss;
  EncoderParams encoder;
  Mat prototypes;  ///< C x D, unit rows
  long steps = 0;
  double wall_seconds = 0.0;
};

/// base_lr * decay^epoch * min(1, (step + 1) / warmup); `step` is the global step.
inline double lr_at(long step, long epoch, const TrainConfig& cfg) {
  if (step < 0 || epoch < 0) throw InvalidArgument("lr_at: step and epoch must be >= 0");
  const double warm =
      cfg.warmup_steps == 0 ? 1.0 : std::min(1.0, static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps));
  return cfg.base_lr * std::pow(cfg.decay_per_epoch, static_cast<double>(epoch)) * warm;
}

// ---------------------------------------------------------------------------
// Adam with decoupled weight decay.

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

struct AdamState {
  std::vector<double> m, v;
  long t = 0;  ///< completed steps
};

inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr,
                      double weight_decay) {
  if (params.size() != grads.size()) throw InvalidArgument("adam_step: params/grads size mismatch");
  if (state.m.empty() && state.v.empty() && state.t == 0) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw InvalidArgument("adam_step: state size mismatch");
  for (double g : grads)
    if (!std::isfinite(g)) throw TrainingDiverged("non-finite gradient", -1, state.t);

  ++state.t;
  const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.t));
  const double shrink = 1.0 - lr * weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = kAdamBeta1 * state.m[i] + (1.0 - kAdamBeta1) * g;
    state.v[i] = kAdamBeta2 * state.v[i] + (1.0 - kAdamBeta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] = params[i] * shrink - lr * mhat / (std::sqrt(vhat) + kAdamEps);
  }
}

// ---------------------------------------------------------------------------
// Encoder forward/backward.

struct EncoderCache {
  Mat x, h, z;
  Vec z_norm;
};

inline Mat encoder_forward(const EncoderParams& p, const Mat& x, EncoderCache* cache = nullptr) {
  if (x.cols() != p.input_dim())
    throw InvalidArgument("encoder: input has " + std::to_string(x.cols()) + " columns, expected " +
                          std::to_string(p.input_dim()));
  Mat h = ((x * p.w1.transpose()).rowwise() + p.b1.transpose()).array().tanh().matrix();
  Mat z = (h * p.w2.transpose()).rowwise() + p.b2.transpose();
  Vec n = z.rowwise().norm();
  Mat f = z;
  for (Eigen::Index i = 0; i < f.rows(); ++i) f.row(i) /= n[i];
  if (cache) *cache = {x, std::move(h), std::move(z), std::move(n)};
  return f;
}

/// Unit-norm source embeddings for a feature matrix.
inline Mat embed(const EncoderParams& p, const Mat& x) { return encoder_forward(p, x); }

/// Backprop through v / |v| row by row.
inline Mat normalize_rows_vjp(const Mat& raw, const Mat& grad_unit) {
  Mat g(raw.rows(), raw.cols());
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    const double n = raw.row(i).norm();
    const auto u = raw.row(i) / n;
    g.row(i) = (grad_unit.row(i) - u.dot(grad_unit.row(i)) * u) / n;
  }
  return g;
}

inline EncoderParams encoder_backward(const EncoderParams& p, const EncoderCache& c, const Mat& grad_f) {
  Mat gz(c.z.rows(), c.z.cols());
  for (Eigen::Index i = 0; i < gz.rows(); ++i) {
    const auto u = c.z.row(i) / c.z_norm[i];
    gz.row(i) = (grad_f.row(i) - u.dot(grad_f.row(i)) * u) / c.z_norm[i];
  }
  EncoderParams g;
  g.w2 = gz.transpose() * c.h;
  g.b2 = gz.colwise().sum().transpose();
  const Mat gh = gz * p.w2;
  const Mat gpre = (gh.array() * (1.0 - c.h.array().square())).matrix();
  g.w1 = gpre.transpose() * c.x;
  g.b1 = gpre.colwise().sum().transpose();
  return g;
}

struct StepResult {
  double loss = 0.0;
  EncoderParams grad_encoder;
  Mat grad_protos;  ///< w.r.t. the raw (unnormalized) prototypes
};

/// Loss and gradients of one batch through loss, normalization and both layers.
inline StepResult forward_backward(const Loss& loss, const EncoderParams& p, const Mat& raw_protos, const Mat& x,
                                   const Mat& spk, std::span<const int> labels) {
  EncoderCache cache;
  const Mat f = encoder_forward(p, x, &cache);
  Mat w = raw_protos;
  normalize_rows(w);
  LossResult r = loss.evaluate(w, f, spk, labels, true);
  StepResult out;
  out.loss = r.loss;
  out.grad_encoder = encoder_backward(p, cache, r.grad_src);
  out.grad_protos = normalize_rows_vjp(raw_protos, r.grad_protos);
  return out;
}

// Flat parameter vector layout: w1, b1, w2, b2, prototypes.
inline std::vector<double> pack(const EncoderParams& p, const Mat& protos) {
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(p.size() + protos.size()));
  auto put = [&](const auto& m) { v.insert(v.end(), m.data(), m.data() + m.size()); };
  put(p.w1), put(p.b1), put(p.w2), put(p.b2), put(protos);
  return v;
}

inline void unpack(std::span<const double> v, EncoderParams& p, Mat& protos) {
  std::size_t off = 0;
  auto take = [&](auto& m) {
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(off), m.size(), m.data());
    off += static_cast<std::size_t>(m.size());
  };
  take(p.w1), take(p.b1), take(p.w2), take(p.b2), take(protos);
}

inline EncoderParams init_encoder(Eigen::Index in, Eigen::Index hidden, Eigen::Index embed, std::mt19937_64& rng) {
  auto p = EncoderParams::zeros(in, hidden, embed);
  std::normal_distribution<double> n1(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
  std::normal_distribution<double> n2(0.0, 1.0 / std::sqrt(static_cast<double>(hidden)));
  for (Eigen::Index i = 0; i < p.w1.size(); ++i) p.w1.data()[i] = n1(rng);
  for (Eigen::Index i = 0; i < p.w2.size(); ++i) p.w2.data()[i] = n2(rng);
  return p;
}

/// Called after every epoch with (epoch, encoder, unit prototypes).
using EpochHook = std::function<void(int, const EncoderParams&, const Mat&)>;

/// Trains on the corpus's train split. Classes are the seen sources in
/// ascending id order.
inline TrainReport train(const SyntheticCorpus& corpus, const TrainConfig& cfg, const EpochHook& hook = {}) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  const auto train_idx = corpus.indices(Split::Train);
  if (train_idx.empty()) throw ConfigError("corpus has no training utterances");
  const auto classes = corpus.seen_sources();
  if (classes.size() < 2) throw ConfigError("training needs at least 2 source classes");
  std::vector<int> label_of(corpus.source_seen.size(), -1);
  for (std::size_t k = 0; k < classes.size(); ++k) label_of[static_cast<std::size_t>(classes[k])] = static_cast<int>(k);

  const Eigen::Index F = corpus.features.cols();
  const Eigen::Index D = corpus.speaker_embeddings.cols();
  const auto C = static_cast<Eigen::Index>(classes.size());

  std::mt19937_64 rng(cfg.seed);
  EncoderParams enc = init_encoder(F, cfg.hidden_dim, D, rng);
  Mat protos = detail::gaussian_rows(C, D, rng);
  normalize_rows(protos);

  const Loss loss(cfg.loss);
  AdamState adam;
  std::vector<double> theta = pack(enc, protos);
  TrainReport report;
  std::vector<std::size_t> order = train_idx;
  const auto B = static_cast<std::size_t>(cfg.batch_size);
  long step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    for (std::size_t lo = 0; lo < order.size(); lo += B) {
      const std::size_t hi = std::min(order.size(), lo + B);
      const auto nb = static_cast<Eigen::Index>(hi - lo);
      Mat x(nb, F), spk(nb, D);
      std::vector<int> labels(static_cast<std::size_t>(nb));
      for (Eigen::Index r = 0; r < nb; ++r) {
        const std::size_t u = order[lo + static_cast<std::size_t>(r)];
        x.row(r) = corpus.features.row(static_cast<Eigen::Index>(u));
        spk.row(r) = corpus.speaker_embeddings.row(static_cast<Eigen::Index>(u));
        labels[static_cast<std::size_t>(r)] = label_of[static_cast<std::size_t>(corpus.source[u])];
      }
      const StepResult sr = forward_backward(loss, enc, protos, x, spk, labels);
      if (!std::isfinite(sr.loss)) throw TrainingDiverged("non-finite loss", epoch, step);
      sum += sr.loss * static_cast<double>(nb);

      const std::vector<double> grads = pack(sr.grad_encoder, sr.grad_protos);
      try {
        adam_step(theta, grads, adam, lr_at(step, epoch, cfg), cfg.weight_decay);
      } catch (const TrainingDiverged&) {
        throw TrainingDiverged("non-finite gradient", epoch, step);
      }
      if (!std::all_of(theta.begin(), theta.end(), [](double v) { return std::isfinite(v); }))
        throw TrainingDiverged("non-finite parameters", epoch, step);
      unpack(theta, enc, protos);
      ++step;
    }
    report.epoch_loss.push_back(sum / static_cast<double>(order.size()));
    if (hook) {
      Mat unit = protos;
      normalize_rows(unit);
      hook(epoch, enc, unit);
    }
  }

  report.encoder = std::move(enc);
  normalize_rows(protos);
  report.prototypes = std::move(protos);
  report.steps = step;
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

/// Mean |<f_src, f_spk>| over the given utterances.
inline double mean_abs_alignment(const EncoderParams& p, const SyntheticCorpus& corpus,
                                 const std::vector<std::size_t>& idx) {
  if (idx.empty()) return 0.0;
  Mat x(static_cast<Eigen::Index>(idx.size()), corpus.features.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) x.row(static_cast<Eigen::Index>(r)) = corpus.features.row(static_cast<Eigen::Index>(idx[r]));
  const Mat f = embed(p, x);
  double s = 0.0;
  for (std::size_t r = 0; r < idx.size(); ++r)
    s += std::abs(f.row(static_cast<Eigen::Index>(r)).dot(corpus.speaker_embeddings.row(static_cast<Eigen::Index>(idx[r]))));
  return s / static_cast<double>(idx.size());
}

// ---------------------------------------------------------------------------
// Checkpoint: "SDMLCKPT", u32 version, u32 input/hidden/embed/classes, then
// w1, b1, w2, b2, prototypes as row-major little-endian float64.

inline constexpr char kCheckpointMagic[8] = {'S', 'D', 'M', 'L', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  EncoderParams encoder;
  Mat prototypes;
};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_f64(std::ostream& os, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline std::uint64_t get_le(std::istream& is, int bytes, const std::string& path) {
  unsigned char buf[8];
  if (!is.read(reinterpret_cast<char*>(buf), bytes)) throw ConfigError("truncated checkpoint '" + path + "'");
  std::uint64_t v = 0;
  for (int i = bytes - 1; i >= 0; --i) v = (v << 8) | buf[i];
  return v;
}

}  // namespace detail

inline void write_checkpoint(const std::string& path, const EncoderParams& p, const Mat& protos) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write checkpoint '" + path + "'");
  os.write(kCheckpointMagic, 8);
  detail::put_u32(os, kCheckpointVersion);
  for (auto d : {p.input_dim(), p.hidden_dim(), p.embed_dim(), protos.rows()}) detail::put_u32(os, static_cast<std::uint32_t>(d));
  for (double d : pack(p, protos)) detail::put_f64(os, d);
}

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open checkpoint '" + path + "'");
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw ConfigError("'" + path + "' is not an sdml checkpoint");
  const auto version = detail::get_le(is, 4, path);
  if (version != kCheckpointVersion) throw ConfigError("unsupported checkpoint version " + std::to_string(version));
  const auto in = static_cast<Eigen::Index>(detail::get_le(is, 4, path));
  const auto hidden = static_cast<Eigen::Index>(detail::get_le(is, 4, path));
  const auto emb = static_cast<Eigen::Index>(detail::get_le(is, 4, path));
  const auto classes = static_cast<Eigen::Index>(detail::get_le(is, 4, path));
  Checkpoint ck{EncoderParams::zeros(in, hidden, emb), Mat::Zero(classes, emb)};
  std::vector<double> theta(static_cast<std::size_t>(ck.encoder.size() + ck.prototypes.size()));
  for (double& d : theta) d = std::bit_cast<double>(detail::get_le(is, 8, path));
  if (is.peek() != std::char_traits<char>::eof()) throw ConfigError("trailing bytes in checkpoint '" + path + "'");
  unpack(theta, ck.encoder, ck.prototypes);
  return ck;
}

inline void write_loss_curve(const std::string& path, const TrainReport& r) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write '" + path + "'");
  os << std::setprecision(17) << "epoch,mean_loss\n";
  for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) os << e << ',' << r.epoch_loss[e] << '\n';
}

}  // namespace sdml
