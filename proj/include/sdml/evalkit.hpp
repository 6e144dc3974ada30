#pragma once

// Cosine scoring, EER/AUC, bootstrap confidence intervals and report
// writers. Higher scores mean "more likely the same source".

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sdml/errors.hpp"
#include "sdml/linalg.hpp"
#include "sdml/protocol.hpp"

namespace sdml {

struct ScoreRecord {
  Trial trial;
  double score = 0.0;
};

struct ScoreReport {
  double eer = 0.0;
  double auc = 0.0;
  double eer_ci_halfwidth = 0.0;
  double auc_ci_halfwidth = 0.0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  std::uint64_t seed = 0;
  int replicates = 0;
  int skipped = 0;
};

using EmbeddingMap = std::unordered_map<std::string, Vec>;

inline constexpr double kScoreTol = 1e-9;

inline std::vector<ScoreRecord> score_trials(const EmbeddingMap& embeddings, const std::vector<Trial>& trials) {
  auto get = [&](const std::string& id) -> const Vec& {
    auto it = embeddings.find(id);
    if (it == embeddings.end()) throw LookupError("no embedding for utterance '" + id + "'");
    return it->second;
  };
  std::vector<ScoreRecord> out;
  out.reserve(trials.size());
  for (const auto& t : trials) {
    const Vec& a = get(t.enrol_id);
    const Vec& b = get(t.test_id);
    if (a.size() != b.size()) throw InvalidArgument("embeddings of '" + t.enrol_id + "' and '" + t.test_id + "' differ in dimension");
    const double s = a.dot(b);
    if (!std::isfinite(s) || std::abs(s) > 1.0 + kScoreTol)
      throw InvalidArgument("score for " + t.enrol_id + " " + t.test_id + " is not a cosine; are the embeddings unit-norm?");
    out.push_back({t, s});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics on (score, key) pairs.

struct LabeledScore {
  double score;
  bool positive;
};

inline std::vector<LabeledScore> labeled(const std::vector<ScoreRecord>& recs) {
  std::vector<LabeledScore> out;
  out.reserve(recs.size());
  for (const auto& r : recs) out.push_back({r.score, r.trial.key});
  return out;
}

namespace detail {

inline std::pair<std::size_t, std::size_t> class_counts(const std::vector<LabeledScore>& s) {
  std::size_t p = 0;
  for (const auto& x : s) p += x.positive;
  return {p, s.size() - p};
}

inline void require_both_classes(std::size_t p, std::size_t n) {
  if (p == 0 || n == 0) throw UndefinedMetric("metric needs at least one positive and one negative trial");
}

}  // namespace detail

/// One operating point per distinct threshold, from "accept nothing" to
/// "accept everything".
struct RocPoint {
  double threshold;
  double far;  ///< negatives accepted
  double frr;  ///< positives rejected
};

inline std::vector<RocPoint> roc_points(std::vector<LabeledScore> s) {
  const auto [np, nn] = detail::class_counts(s);
  detail::require_both_classes(np, nn);
  std::sort(s.begin(), s.end(), [](const LabeledScore& a, const LabeledScore& b) { return a.score > b.score; });
  std::vector<RocPoint> pts;
  pts.push_back({std::numeric_limits<double>::infinity(), 0.0, 1.0});
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < s.size();) {
    const double t = s[i].score;
    for (; i < s.size() && s[i].score == t; ++i) (s[i].positive ? tp : fp) += 1;
    pts.push_back({t, static_cast<double>(fp) / static_cast<double>(nn),
                   1.0 - static_cast<double>(tp) / static_cast<double>(np)});
  }
  return pts;
}

/// Equal error rate, linearly interpolated between the two ROC points that
/// bracket FAR = FRR.
inline double compute_eer(const std::vector<LabeledScore>& s) {
  const auto pts = roc_points(s);
  for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
    const double d1 = pts[k].frr - pts[k].far;
    const double d2 = pts[k + 1].frr - pts[k + 1].far;
    if (d1 == 0.0) return pts[k].far;
    if (d2 <= 0.0) {
      const double t = d1 / (d1 - d2);
      return pts[k].far + t * (pts[k + 1].far - pts[k].far);
    }
  }
  return pts.back().far;  // unreachable: the last point has frr = 0, far = 1
}

/// Mann-Whitney AUC with ties counted one half.
inline double compute_auc(std::vector<LabeledScore> s) {
  const auto [np, nn] = detail::class_counts(s);
  detail::require_both_classes(np, nn);
  std::sort(s.begin(), s.end(), [](const LabeledScore& a, const LabeledScore& b) { return a.score < b.score; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < s.size();) {
    std::size_t j = i;
    while (j < s.size() && s[j].score == s[i].score) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1..j averaged
    for (std::size_t k = i; k < j; ++k)
      if (s[k].positive) rank_sum += mid_rank;
    i = j;
  }
  const double p = static_cast<double>(np), n = static_cast<double>(nn);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

inline double compute_eer(const std::vector<ScoreRecord>& r) { return compute_eer(labeled(r)); }
inline double compute_auc(const std::vector<ScoreRecord>& r) { return compute_auc(labeled(r)); }

// ---------------------------------------------------------------------------
// Bootstrap.

inline constexpr double kMaxSkippedShare = 0.10;

/// Point estimates plus +-2 sigma half-widths from trial-level resampling.
/// Replicate r draws from its own generator seeded by mix_seed(seed, r), so
/// the result does not depend on `workers`.
inline ScoreReport bootstrap_ci(const std::vector<ScoreRecord>& recs, int n_replicates, std::uint64_t seed,
                                int workers = 1) {
  if (n_replicates < 1) throw InvalidArgument("bootstrap needs at least one replicate");
  const auto base = labeled(recs);
  ScoreReport rep;
  std::tie(rep.n_pos, rep.n_neg) = detail::class_counts(base);
  rep.eer = compute_eer(base);
  rep.auc = compute_auc(base);
  rep.seed = seed;
  rep.replicates = n_replicates;

  struct Sample {
    bool ok = false;
    double eer = 0.0, auc = 0.0;
  };
  std::vector<Sample> out(static_cast<std::size_t>(n_replicates));
  auto run = [&](int r) {
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(r)));
    std::uniform_int_distribution<std::size_t> pick(0, base.size() - 1);
    std::vector<LabeledScore> draw(base.size());
    for (auto& d : draw) d = base[pick(rng)];
    const auto [p, n] = detail::class_counts(draw);
    if (p == 0 || n == 0) return;
    out[static_cast<std::size_t>(r)] = {true, compute_eer(draw), compute_auc(draw)};
  };
  workers = std::max(1, std::min(workers, n_replicates));
  if (workers == 1) {
    for (int r = 0; r < n_replicates; ++r) run(r);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (int r = w; r < n_replicates; r += workers) run(r);
      });
    for (auto& t : pool) t.join();
  }

  // Reduce in replicate order.
  double se = 0.0, sa = 0.0;
  int kept = 0;
  for (const auto& s : out)
    if (s.ok) se += s.eer, sa += s.auc, ++kept;
  rep.skipped = n_replicates - kept;
  if (static_cast<double>(rep.skipped) > kMaxSkippedShare * n_replicates)
    throw UndefinedMetric(std::to_string(rep.skipped) + " of " + std::to_string(n_replicates) +
                          " bootstrap replicates drew a single class");
  if (kept >= 2) {
    const double me = se / kept, ma = sa / kept;
    double ve = 0.0, va = 0.0;
    for (const auto& s : out)
      if (s.ok) ve += (s.eer - me) * (s.eer - me), va += (s.auc - ma) * (s.auc - ma);
    rep.eer_ci_halfwidth = 2.0 * std::sqrt(ve / (kept - 1));
    rep.auc_ci_halfwidth = 2.0 * std::sqrt(va / (kept - 1));
  }
  return rep;
}

inline bool operator==(const ScoreReport& a, const ScoreReport& b) {
  return a.eer == b.eer && a.auc == b.auc && a.eer_ci_halfwidth == b.eer_ci_halfwidth &&
         a.auc_ci_halfwidth == b.auc_ci_halfwidth && a.n_pos == b.n_pos && a.n_neg == b.n_neg && a.seed == b.seed &&
         a.replicates == b.replicates && a.skipped == b.skipped;
}

// ---------------------------------------------------------------------------
// Cross-task table: rows are extractors (source, speaker), columns are tasks
// (source verification, speaker verification). Matched cells lie on the
// diagonal.

struct CrossTaskTable {
  std::array<std::array<ScoreReport, 2>, 2> cell;
};

inline CrossTaskTable cross_task_report(const EmbeddingMap& source_embeds, const EmbeddingMap& speaker_embeds,
                                        const std::vector<Trial>& source_trials,
                                        const std::vector<Trial>& speaker_trials, int n_replicates,
                                        std::uint64_t seed, int workers = 1) {
  CrossTaskTable t;
  const EmbeddingMap* emb[2] = {&source_embeds, &speaker_embeds};
  const std::vector<Trial>* trials[2] = {&source_trials, &speaker_trials};
  for (int e = 0; e < 2; ++e)
    for (int k = 0; k < 2; ++k)
      t.cell[static_cast<std::size_t>(e)][static_cast<std::size_t>(k)] =
          bootstrap_ci(score_trials(*emb[e], *trials[k]), n_replicates, mix_seed(seed, static_cast<std::uint64_t>(2 * e + k)), workers);
  return t;
}

// ---------------------------------------------------------------------------
// Writers. Numbers use fixed precision so reports are byte-stable.

inline std::string fmt(double v, int prec = 6) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

inline void write_scores(const std::string& path, const std::vector<ScoreRecord>& recs) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write '" + path + "'");
  for (const auto& r : recs) os << r.trial.enrol_id << ' ' << r.trial.test_id << ' ' << fmt(r.score, 9) << '\n';
}

struct ProtocolReports {
  std::array<ScoreReport, kNumProtocols> reports;

  double mean_eer() const {
    double s = 0.0;
    for (const auto& r : reports) s += r.eer;
    return s / kNumProtocols;
  }
  double mean_auc() const {
    double s = 0.0;
    for (const auto& r : reports) s += r.auc;
    return s / kNumProtocols;
  }
};

/// Fixed column order: protocol, eer, eer_ci, auc, auc_ci, n_pos, n_neg; metrics in percent.
inline void write_table_csv(std::ostream& os, const ProtocolReports& pr) {
  os << "protocol,eer,eer_ci,auc,auc_ci,n_pos,n_neg\n";
  double ci_e = 0.0, ci_a = 0.0;
  std::size_t np = 0, nn = 0;
  for (int p = 0; p < kNumProtocols; ++p) {
    const auto& r = pr.reports[static_cast<std::size_t>(p)];
    os << kProtocolNames[static_cast<std::size_t>(p)] << ',' << fmt(100 * r.eer, 4) << ',' << fmt(100 * r.eer_ci_halfwidth, 4)
       << ',' << fmt(100 * r.auc, 4) << ',' << fmt(100 * r.auc_ci_halfwidth, 4) << ',' << r.n_pos << ',' << r.n_neg
       << '\n';
    ci_e += r.eer_ci_halfwidth, ci_a += r.auc_ci_halfwidth, np += r.n_pos, nn += r.n_neg;
  }
  os << "Average," << fmt(100 * pr.mean_eer(), 4) << ',' << fmt(100 * ci_e / kNumProtocols, 4) << ','
     << fmt(100 * pr.mean_auc(), 4) << ',' << fmt(100 * ci_a / kNumProtocols, 4) << ',' << np << ',' << nn << '\n';
}

inline void write_report_text(std::ostream& os, const std::string& prefix, const ScoreReport& r) {
  os << prefix << ".eer = " << fmt(r.eer) << '\n'
     << prefix << ".eer_ci_halfwidth = " << fmt(r.eer_ci_halfwidth) << '\n'
     << prefix << ".auc = " << fmt(r.auc) << '\n'
     << prefix << ".auc_ci_halfwidth = " << fmt(r.auc_ci_halfwidth) << '\n'
     << prefix << ".n_pos = " << r.n_pos << '\n'
     << prefix << ".n_neg = " << r.n_neg << '\n'
     << prefix << ".bootstrap_replicates = " << r.replicates << '\n'
     << prefix << ".bootstrap_skipped = " << r.skipped << '\n'
     << prefix << ".seed = " << r.seed << '\n';
}

inline void write_cross_task_text(std::ostream& os, const CrossTaskTable& t) {
  const char* rows[2] = {"source_extractor", "speaker_extractor"};
  const char* cols[2] = {"source_task", "speaker_task"};
  for (int e = 0; e < 2; ++e)
    for (int k = 0; k < 2; ++k)
      write_report_text(os, std::string("cross.") + rows[e] + "." + cols[k],
                        t.cell[static_cast<std::size_t>(e)][static_cast<std::size_t>(k)]);
}

/// Per-protocol ROC points for plotting: protocol, threshold, far, frr.
inline void write_roc_csv(std::ostream& os, const std::array<std::vector<ScoreRecord>, kNumProtocols>& scores) {
  os << "protocol,threshold,far,frr\n";
  for (int p = 0; p < kNumProtocols; ++p)
    for (const auto& pt : roc_points(labeled(scores[static_cast<std::size_t>(p)]))) {
      os << kProtocolNames[static_cast<std::size_t>(p)] << ',';
      if (std::isinf(pt.threshold))
        os << "inf";
      else
        os << fmt(pt.threshold, 9);
      os << ',' << fmt(pt.far, 9) << ',' << fmt(pt.frr, 9) << '\n';
    }
}

}  // namespace sdml
