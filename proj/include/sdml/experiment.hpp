#pragma once

// Glue for the gen -> train -> eval pipeline shared by the CLI and the
// acceptance runner.

#include <cstdint>
#include <ostream>
#include <string>

#include "sdml/evalkit.hpp"
#include "sdml/protocol.hpp"
#include "sdml/synthdata.hpp"
#include "sdml/trainer.hpp"

namespace sdml {

struct EvalOptions {
  std::size_t pairs_per_protocol = 500;
  std::size_t task_pairs = 1000;
  double speaker_threshold = 0.5;
  int bootstrap_runs = 1000;
  std::uint64_t seed = 1;
  int workers = 1;
};

/// Source embeddings of the eval split.
inline EmbeddingMap source_embeddings(const EncoderParams& enc, const SyntheticCorpus& corpus) {
  if (enc.input_dim() != corpus.features.cols())
    throw ConfigError("checkpoint expects " + std::to_string(enc.input_dim()) + "-dim features, corpus has " +
                      std::to_string(corpus.features.cols()));
  const auto idx = corpus.indices(Split::Eval);
  Mat x(static_cast<Eigen::Index>(idx.size()), corpus.features.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) x.row(static_cast<Eigen::Index>(r)) = corpus.features.row(static_cast<Eigen::Index>(idx[r]));
  const Mat f = embed(enc, x);
  EmbeddingMap out;
  for (std::size_t r = 0; r < idx.size(); ++r) out.emplace(corpus.ids[idx[r]], f.row(static_cast<Eigen::Index>(r)).transpose());
  return out;
}

inline EmbeddingMap oracle_embeddings(const SyntheticCorpus& corpus) {
  EmbeddingMap out;
  for (std::size_t i : corpus.indices(Split::Eval))
    out.emplace(corpus.ids[i], corpus.speaker_embeddings.row(static_cast<Eigen::Index>(i)).transpose());
  return out;
}

/// Mean |<f_src, f_spk>| over the eval utterances present in `src`.
inline double mean_abs_alignment(const EmbeddingMap& src, const SyntheticCorpus& corpus) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i : corpus.indices(Split::Eval)) {
    auto it = src.find(corpus.ids[i]);
    if (it == src.end()) continue;
    if (it->second.size() != corpus.speaker_embeddings.cols()) return std::nan("");
    s += std::abs(it->second.dot(corpus.speaker_embeddings.row(static_cast<Eigen::Index>(i)).transpose()));
    ++n;
  }
  return n ? s / static_cast<double>(n) : 0.0;
}

/// Everything that depends only on the corpus and the evaluation seed.
struct EvalPlan {
  PseudoSpeakers pseudo;
  ProtocolSet protocols;
  std::vector<Trial> source_trials, speaker_trials;
  double pseudo_agreement = 0.0;
};

inline EvalPlan plan_evaluation(const SyntheticCorpus& corpus, const EvalOptions& o) {
  EvalPlan p;
  p.pseudo = assign_pseudo_speakers(eval_speaker_embeddings(corpus), o.speaker_threshold);
  p.pseudo_agreement = pseudo_speaker_agreement(corpus, p.pseudo);
  p.protocols = build_protocols(corpus, p.pseudo, o.pairs_per_protocol, o.seed);
  p.source_trials = build_task_trials(corpus, Task::Source, o.task_pairs, o.seed);
  p.speaker_trials = build_task_trials(corpus, Task::Speaker, o.task_pairs, o.seed);
  return p;
}

struct EvalResult {
  std::array<std::vector<ScoreRecord>, kNumProtocols> scores;
  ProtocolReports reports;
  CrossTaskTable cross;
  double alignment = 0.0;
};

/// Scores `src` on the four protocols and the cross-task table. With
/// bootstrap_runs == 0 only point estimates are computed.
inline EvalResult run_evaluation(const SyntheticCorpus& corpus, const EvalPlan& plan, const EmbeddingMap& src,
                                 const EvalOptions& o) {
  EvalResult r;
  const int runs = std::max(1, o.bootstrap_runs);
  for (int p = 0; p < kNumProtocols; ++p) {
    const auto k = static_cast<std::size_t>(p);
    r.scores[k] = score_trials(src, plan.protocols.lists[k]);
    if (o.bootstrap_runs > 0) {
      r.reports.reports[k] = bootstrap_ci(r.scores[k], runs, mix_seed(o.seed, 1000 + k), o.workers);
    } else {
      auto& rep = r.reports.reports[k];
      rep.eer = compute_eer(r.scores[k]);
      rep.auc = compute_auc(r.scores[k]);
      rep.n_pos = plan.protocols.positives(p);
      rep.n_neg = plan.protocols.negatives(p);
      rep.seed = o.seed;
    }
  }
  r.cross = cross_task_report(src, oracle_embeddings(corpus), plan.source_trials, plan.speaker_trials,
                              o.bootstrap_runs > 0 ? runs : 1, mix_seed(o.seed, 2000), o.workers);
  r.alignment = mean_abs_alignment(src, corpus);
  return r;
}

inline void write_eval_report(std::ostream& os, const std::string& label, const EvalPlan& plan, const EvalResult& r,
                              const EvalOptions& o) {
  os << "# sdml evaluation report\n";
  os << "embeddings = " << label << '\n';
  os << "seed = " << o.seed << '\n';
  os << "speaker_threshold = " << fmt(o.speaker_threshold, 3) << '\n';
  os << "pairs_per_protocol = " << o.pairs_per_protocol << '\n';
  os << "bootstrap_runs = " << o.bootstrap_runs << '\n';
  os << "pseudo_speaker_agreement = " << fmt(plan.pseudo_agreement) << '\n';
  for (int p = 0; p < kNumProtocols; ++p)
    write_report_text(os, kProtocolNames[static_cast<std::size_t>(p)], r.reports.reports[static_cast<std::size_t>(p)]);
  os << "average.eer = " << fmt(r.reports.mean_eer()) << '\n';
  os << "average.auc = " << fmt(r.reports.mean_auc()) << '\n';
  write_cross_task_text(os, r.cross);
  os << "mean_abs_source_speaker_alignment = " << fmt(r.alignment) << '\n';
}

}  // namespace sdml
