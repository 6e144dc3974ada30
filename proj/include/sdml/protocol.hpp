#pragma once

// Evaluation protocols P-I..P-IV: seen/unseen source x same/different
// pseudo-speaker, each with exactly as many same-source (positive) as
// different-source (negative) trials.
//
//   P-I   seen sources,   same pseudo-speaker
//   P-II  seen sources,   different pseudo-speaker
//   P-III unseen sources, same pseudo-speaker
//   P-IV  unseen sources, different pseudo-speaker
//
// Pseudo-speakers are the connected components of the graph joining
// utterances whose speaker embeddings have cosine >= threshold.

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sdml/errors.hpp"
#include "sdml/linalg.hpp"
#include "sdml/synthdata.hpp"

namespace sdml {

struct Trial {
  std::string enrol_id;
  std::string test_id;
  bool key = false;  ///< true = same source
  friend bool operator==(const Trial&, const Trial&) = default;
};

inline constexpr int kNumProtocols = 4;
inline constexpr std::array<const char*, kNumProtocols> kProtocolNames = {"P-I", "P-II", "P-III", "P-IV"};
inline constexpr std::array<const char*, kNumProtocols> kProtocolFiles = {"P1.trials", "P2.trials", "P3.trials",
                                                                          "P4.trials"};

inline bool protocol_seen(int p) { return p < 2; }
inline bool protocol_same_speaker(int p) { return p % 2 == 0; }

struct ProtocolSet {
  std::array<std::vector<Trial>, kNumProtocols> lists;
  std::uint64_t seed = 0;

  std::size_t positives(int p) const {
    std::size_t n = 0;
    for (const auto& t : lists[static_cast<std::size_t>(p)]) n += t.key;
    return n;
  }
  std::size_t negatives(int p) const { return lists[static_cast<std::size_t>(p)].size() - positives(p); }
  friend bool operator==(const ProtocolSet&, const ProtocolSet&) = default;
};

/// Ordered (id, unit vector) pairs; order fixes the component numbering.
using EmbeddingList = std::vector<std::pair<std::string, Vec>>;
using PseudoSpeakers = std::unordered_map<std::string, int>;

// ---------------------------------------------------------------------------
// Pseudo-speaker labelling.

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), std::size_t{0}); }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) x = parent_[x] = parent_[parent_[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a), b = find(b);
    if (a != b) parent_[std::max(a, b)] = std::min(a, b);
  }

 private:
  std::vector<std::size_t> parent_;
};

inline PseudoSpeakers assign_pseudo_speakers(const EmbeddingList& embeddings, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw InvalidArgument("pseudo-speaker threshold must lie in (0, 1)");
  PseudoSpeakers out;
  if (embeddings.empty()) return out;
  const std::size_t n = embeddings.size();
  const auto dim = embeddings[0].second.size();
  Mat e(static_cast<Eigen::Index>(n), dim);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec& v = embeddings[i].second;
    if (v.size() != dim) throw InvalidArgument("pseudo-speaker embeddings differ in dimension");
    if (!v.allFinite() || std::abs(v.norm() - 1.0) > 1e-9)
      throw InvalidArgument("pseudo-speaker embedding '" + embeddings[i].first + "' is not unit-norm");
    e.row(static_cast<Eigen::Index>(i)) = v.transpose();
  }
  UnionFind uf(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Index ii = static_cast<Eigen::Index>(i);
    const Vec sims = e.bottomRows(e.rows() - ii - 1) * e.row(ii).transpose();
    for (Eigen::Index k = 0; k < sims.size(); ++k)
      if (sims[k] >= threshold) uf.unite(i, i + 1 + static_cast<std::size_t>(k));
  }
  std::unordered_map<std::size_t, int> number;
  for (std::size_t i = 0; i < n; ++i) {
    const auto root = uf.find(i);
    out[embeddings[i].first] = number.emplace(root, static_cast<int>(number.size())).first->second;
  }
  return out;
}

/// Oracle speaker embeddings of the eval split, in corpus order.
inline EmbeddingList eval_speaker_embeddings(const SyntheticCorpus& corpus) {
  EmbeddingList out;
  for (std::size_t i : corpus.indices(Split::Eval))
    out.emplace_back(corpus.ids[i], corpus.speaker_embeddings.row(static_cast<Eigen::Index>(i)).transpose());
  return out;
}

/// Share of utterances whose component and true speaker are each other's
/// majority match (1.0 for a perfect partition).
inline double pseudo_speaker_agreement(const SyntheticCorpus& corpus, const PseudoSpeakers& pseudo) {
  std::map<std::pair<int, int>, std::size_t> joint;  // (component, speaker) -> count
  std::vector<std::size_t> members;
  for (const auto& [id, comp] : pseudo) {
    const auto i = corpus.index_of(id);
    ++joint[{comp, corpus.speaker[i]}];
    members.push_back(i);
  }
  if (members.empty()) return 1.0;
  std::map<int, std::pair<int, std::size_t>> best_spk, best_comp;  // comp -> (speaker, n); speaker -> (comp, n)
  for (const auto& [key, n] : joint) {
    auto& bs = best_spk[key.first];
    if (n > bs.second) bs = {key.second, n};
    auto& bc = best_comp[key.second];
    if (n > bc.second) bc = {key.first, n};
  }
  std::size_t agree = 0;
  for (const auto& [id, comp] : pseudo) {
    const int spk = corpus.speaker[corpus.index_of(id)];
    agree += best_spk[comp].first == spk && best_comp[spk].first == comp;
  }
  return static_cast<double>(agree) / static_cast<double>(members.size());
}

// ---------------------------------------------------------------------------
// Trial sampling.

namespace detail {

/// Draws k of the n candidates without replacement (partial Fisher-Yates).
template <class T>
std::vector<T> sample_without_replacement(std::vector<T> pool, std::size_t k, std::mt19937_64& rng) {
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace detail

/// Trials for one condition. `same_group` selects pairs whose `group` values
/// match (or differ); positives share `label`, negatives do not.
inline std::vector<Trial> sample_balanced_trials(const SyntheticCorpus& corpus, const std::vector<std::size_t>& utts,
                                                 const std::vector<int>& label, const std::vector<int>* group,
                                                 bool same_group, std::size_t pairs, std::uint64_t seed,
                                                 const std::string& cell) {
  using Pair = std::pair<std::uint32_t, std::uint32_t>;
  std::vector<Pair> pos, neg;
  for (std::size_t a = 0; a < utts.size(); ++a)
    for (std::size_t b = a + 1; b < utts.size(); ++b) {
      if (group && (((*group)[a] == (*group)[b]) != same_group)) continue;
      (label[a] == label[b] ? pos : neg).emplace_back(static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b));
    }
  if (pos.size() < pairs || neg.size() < pairs)
    throw ProtocolInfeasible(cell + ": need " + std::to_string(pairs) + " positive and negative pairs, have " +
                             std::to_string(pos.size()) + " positive / " + std::to_string(neg.size()) + " negative");
  std::mt19937_64 rng(seed);
  std::vector<Trial> out;
  out.reserve(2 * pairs);
  for (const auto& [a, b] : detail::sample_without_replacement(std::move(pos), pairs, rng))
    out.push_back({corpus.ids[utts[a]], corpus.ids[utts[b]], true});
  for (const auto& [a, b] : detail::sample_without_replacement(std::move(neg), pairs, rng))
    out.push_back({corpus.ids[utts[a]], corpus.ids[utts[b]], false});
  return out;
}

/// Eval-split utterances of seen (or unseen) sources, in corpus order.
inline std::vector<std::size_t> eval_utterances(const SyntheticCorpus& corpus, bool seen) {
  std::vector<std::size_t> out;
  for (std::size_t i : corpus.indices(Split::Eval))
    if (corpus.seen(i) == seen) out.push_back(i);
  return out;
}

inline ProtocolSet build_protocols(const SyntheticCorpus& corpus, const PseudoSpeakers& pseudo,
                                   std::size_t pairs_per_protocol, std::uint64_t seed) {
  const auto seen_sources = corpus.seen_sources();
  const auto n_unseen = corpus.source_seen.size() - seen_sources.size();
  if (seen_sources.size() < 2 || n_unseen < 2)
    throw ProtocolInfeasible("protocols need >= 2 seen and >= 2 unseen sources");
  if (pairs_per_protocol < 1) throw ConfigError("pairs_per_protocol must be >= 1");

  ProtocolSet set;
  set.seed = seed;
  for (int p = 0; p < kNumProtocols; ++p) {
    const auto utts = eval_utterances(corpus, protocol_seen(p));
    std::vector<int> source, spk;
    for (std::size_t i : utts) {
      source.push_back(corpus.source[i]);
      auto it = pseudo.find(corpus.ids[i]);
      if (it == pseudo.end()) throw LookupError("no pseudo-speaker label for '" + corpus.ids[i] + "'");
      spk.push_back(it->second);
    }
    set.lists[static_cast<std::size_t>(p)] =
        sample_balanced_trials(corpus, utts, source, &spk, protocol_same_speaker(p), pairs_per_protocol,
                               mix_seed(seed, static_cast<std::uint64_t>(p)), kProtocolNames[static_cast<std::size_t>(p)]);
  }
  return set;
}

enum class Task { Source, Speaker };

/// Cross-task trials over all eval utterances: same source (or same true
/// speaker) is positive, with no condition on the other factor.
inline std::vector<Trial> build_task_trials(const SyntheticCorpus& corpus, Task task, std::size_t pairs,
                                            std::uint64_t seed) {
  const auto utts = corpus.indices(Split::Eval);
  std::vector<int> label;
  for (std::size_t i : utts) label.push_back(task == Task::Source ? corpus.source[i] : corpus.speaker[i]);
  return sample_balanced_trials(corpus, utts, label, nullptr, true, pairs,
                                mix_seed(seed, task == Task::Source ? 100 : 101),
                                task == Task::Source ? "source task" : "speaker task");
}

/// Throws unless every trial satisfies its protocol's conditions and the
/// counts balance. Speaker condition checked against `pseudo`, source
/// condition against ground-truth labels.
inline void verify_protocols(const SyntheticCorpus& corpus, const PseudoSpeakers& pseudo, const ProtocolSet& set) {
  for (int p = 0; p < kNumProtocols; ++p) {
    const std::string name = kProtocolNames[static_cast<std::size_t>(p)];
    if (set.positives(p) != set.negatives(p)) throw ProtocolInfeasible(name + " is unbalanced");
    std::set<std::pair<std::string, std::string>> unique;
    for (const auto& t : set.lists[static_cast<std::size_t>(p)]) {
      const auto a = corpus.index_of(t.enrol_id), b = corpus.index_of(t.test_id);
      if (a == b) throw ProtocolInfeasible(name + ": self-pair " + t.enrol_id);
      if (corpus.seen(a) != protocol_seen(p) || corpus.seen(b) != protocol_seen(p))
        throw ProtocolInfeasible(name + ": trial " + t.enrol_id + " " + t.test_id + " violates the seen condition");
      if (corpus.split[a] != Split::Eval || corpus.split[b] != Split::Eval)
        throw ProtocolInfeasible(name + ": trial uses a training utterance");
      if ((pseudo.at(t.enrol_id) == pseudo.at(t.test_id)) != protocol_same_speaker(p))
        throw ProtocolInfeasible(name + ": trial " + t.enrol_id + " " + t.test_id + " violates the speaker condition");
      if ((corpus.source[a] == corpus.source[b]) != t.key)
        throw ProtocolInfeasible(name + ": trial " + t.enrol_id + " " + t.test_id + " has a wrong key");
      if (!unique.insert(std::minmax(t.enrol_id, t.test_id)).second)
        throw ProtocolInfeasible(name + ": duplicate pair " + t.enrol_id + " " + t.test_id);
    }
  }
}

// ---------------------------------------------------------------------------
// Trial files: one `enrol_id test_id key` line per trial, key in {0, 1}.

inline void write_trials(const std::string& path, const std::vector<Trial>& trials) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write '" + path + "'");
  for (const auto& t : trials) os << t.enrol_id << ' ' << t.test_id << ' ' << (t.key ? 1 : 0) << '\n';
}

inline Trial parse_trial(const std::string& line, std::size_t lineno) {
  std::istringstream is(line);
  Trial t;
  std::string key, extra;
  if (!(is >> t.enrol_id >> t.test_id >> key) || (is >> extra))
    throw ParseError("expected 'enrol_id test_id key'", lineno);
  if (key != "0" && key != "1") throw ParseError("key must be 0 or 1, got '" + key + "'", lineno);
  if (t.enrol_id == t.test_id) throw ParseError("self-pair '" + t.enrol_id + "'", lineno);
  t.key = key == "1";
  return t;
}

inline std::vector<Trial> read_trials(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::vector<Trial> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    out.push_back(parse_trial(line, lineno));
  }
  return out;
}

/// Writes P1..P4.trials and a `protocols.manifest` sidecar with counts and seed.
inline void write_protocols(const std::string& dir, const ProtocolSet& set, double threshold) {
  for (int p = 0; p < kNumProtocols; ++p)
    write_trials(dir + "/" + kProtocolFiles[static_cast<std::size_t>(p)], set.lists[static_cast<std::size_t>(p)]);
  std::ofstream os(dir + "/protocols.manifest");
  if (!os) throw ConfigError("cannot write '" + dir + "/protocols.manifest'");
  os << "seed = " << set.seed << "\nspeaker_threshold = " << threshold << '\n';
  for (int p = 0; p < kNumProtocols; ++p)
    os << kProtocolFiles[static_cast<std::size_t>(p)] << " = " << kProtocolNames[static_cast<std::size_t>(p)]
       << " positives " << set.positives(p) << " negatives " << set.negatives(p) << '\n';
}

inline ProtocolSet read_protocols(const std::string& dir) {
  ProtocolSet set;
  for (int p = 0; p < kNumProtocols; ++p)
    set.lists[static_cast<std::size_t>(p)] = read_trials(dir + "/" + kProtocolFiles[static_cast<std::size_t>(p)]);
  std::ifstream in(dir + "/protocols.manifest");
  std::string line;
  while (std::getline(in, line))
    if (line.rfind("seed = ", 0) == 0) set.seed = std::stoull(line.substr(7));
  return set;
}

}  // namespace sdml
