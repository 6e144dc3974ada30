#pragma once

// Synthetic corpus with a controllable source/speaker confound.
//
//   x = alpha * u_source + beta * v_speaker + eps,   eps ~ N(0, sigma^2 I)
//
// u and v are fixed seeded unit directions; speaker directions are drawn
// orthonormal when n_speakers <= feature_dim. A frozen speaker oracle stands
// in for a pretrained speaker model: it returns normalize(v_speaker + noise)
// with the noise fixed per utterance.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "sdml/errors.hpp"
#include "sdml/linalg.hpp"

namespace sdml {

struct SynthConfig {
  int n_sources = 12;
  int n_speakers = 20;
  int utterances_per_pair = 25;
  int feature_dim = 32;
  double source_strength = 1.0;   // alpha
  double speaker_strength = 1.0;  // beta
  double noise_sigma = 0.3;
  double unseen_source_fraction = 1.0 / 3.0;
  /// Share of each seen (source, speaker) cell held out for evaluation.
  double eval_fraction = 0.3;
  /// Per-dimension std of the speaker oracle's observation noise.
  double oracle_noise = 0.05;
  std::uint64_t seed = 1;

  int n_unseen() const { return static_cast<int>(std::lround(n_sources * unseen_source_fraction)); }
  int eval_per_cell() const { return static_cast<int>(std::lround(utterances_per_pair * eval_fraction)); }

  void validate() const {
    auto bad = [](const std::string& m) { throw ConfigError("synth config: " + m); };
    // Split feasibility first: it is the failure users hit when shrinking a corpus.
    if (!(unseen_source_fraction > 0.0 && unseen_source_fraction < 1.0))
      bad("unseen_source_fraction must lie in (0, 1)");
    const int unseen = n_unseen();
    if (unseen < 2 || n_sources - unseen < 2)
      bad("infeasible split: " + std::to_string(n_sources) + " sources with unseen fraction " +
          std::to_string(unseen_source_fraction) + " leaves " + std::to_string(n_sources - unseen) + " seen / " +
          std::to_string(unseen) + " unseen (need >= 2 of each; protocols P-I..P-IV are infeasible)");
    if (n_sources < 4) bad("n_sources must be >= 4");
    if (n_speakers < 4) bad("n_speakers must be >= 4");
    if (utterances_per_pair < 2) bad("utterances_per_pair must be >= 2");
    if (feature_dim < 2) bad("feature_dim must be >= 2");
    if (!(source_strength >= 0.0 && speaker_strength >= 0.0)) bad("strengths must be >= 0");
    if (!(source_strength > 0.0 || speaker_strength > 0.0)) bad("at least one strength must be positive");
    if (!(noise_sigma >= 0.0) || !(oracle_noise >= 0.0)) bad("noise levels must be >= 0");
    if (!(eval_fraction > 0.0 && eval_fraction < 1.0)) bad("eval_fraction must lie in (0, 1)");
    const int held = eval_per_cell();
    if (held < 1 || held >= utterances_per_pair) bad("eval_fraction leaves an empty train or eval share per cell");
  }
};

enum class Split { Train, Eval };

struct SyntheticCorpus {
  SynthConfig config;
  std::vector<std::string> ids;
  Mat features;              ///< N x feature_dim
  std::vector<int> source;   ///< N
  std::vector<int> speaker;  ///< N
  std::vector<Split> split;  ///< N
  std::vector<bool> source_seen;  ///< n_sources
  Mat speaker_embeddings;    ///< N x feature_dim, unit rows; the frozen oracle's output
  Mat source_latents;        ///< n_sources x feature_dim
  Mat speaker_latents;       ///< n_speakers x feature_dim

  std::size_t size() const { return ids.size(); }
  bool seen(std::size_t utt) const { return source_seen[static_cast<std::size_t>(source[utt])]; }

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < size(); ++i)
      if (split[i] == s) out.push_back(i);
    return out;
  }

  std::size_t index_of(const std::string& id) const {
    if (index_.size() != ids.size()) {
      index_.clear();
      for (std::size_t i = 0; i < ids.size(); ++i) index_.emplace(ids[i], i);
    }
    auto it = index_.find(id);
    if (it == index_.end()) throw LookupError("unknown utterance '" + id + "'");
    return it->second;
  }

  /// Seen sources in ascending id order; position = training class label.
  std::vector<int> seen_sources() const {
    std::vector<int> out;
    for (int s = 0; s < static_cast<int>(source_seen.size()); ++s)
      if (source_seen[s]) out.push_back(s);
    return out;
  }

 private:
  mutable std::unordered_map<std::string, std::size_t> index_;
};

inline std::string utterance_id(std::size_t i) {
  std::ostringstream os;
  os << 'u' << std::setw(6) << std::setfill('0') << i;
  return os.str();
}

namespace detail {

inline Mat gaussian_rows(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = n(rng);
  return m;
}

}  // namespace detail

inline SyntheticCorpus generate_corpus(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  const int F = cfg.feature_dim;

  SyntheticCorpus out;
  out.config = cfg;
  out.source_latents = detail::gaussian_rows(cfg.n_sources, F, rng);
  normalize_rows(out.source_latents);
  Mat spk = detail::gaussian_rows(cfg.n_speakers, F, rng);
  if (cfg.n_speakers <= F) {
    // Orthonormal speaker directions: rows of Q from a QR of the transpose.
    Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(spk.transpose()).householderQ();
    spk = q.leftCols(cfg.n_speakers).transpose();
  }
  normalize_rows(spk);
  out.speaker_latents = spk;

  std::vector<int> order(cfg.n_sources);
  for (int s = 0; s < cfg.n_sources; ++s) order[s] = s;
  std::shuffle(order.begin(), order.end(), rng);
  out.source_seen.assign(cfg.n_sources, true);
  for (int i = 0; i < cfg.n_unseen(); ++i) out.source_seen[order[i]] = false;

  const std::size_t N = static_cast<std::size_t>(cfg.n_sources) * cfg.n_speakers * cfg.utterances_per_pair;
  out.features.resize(static_cast<Eigen::Index>(N), F);
  out.speaker_embeddings.resize(static_cast<Eigen::Index>(N), F);
  std::normal_distribution<double> noise(0.0, 1.0);
  const int eval_from = cfg.utterances_per_pair - cfg.eval_per_cell();
  std::size_t i = 0;
  for (int s = 0; s < cfg.n_sources; ++s)
    for (int k = 0; k < cfg.n_speakers; ++k)
      for (int r = 0; r < cfg.utterances_per_pair; ++r, ++i) {
        const auto row = static_cast<Eigen::Index>(i);
        out.ids.push_back(utterance_id(i));
        out.source.push_back(s);
        out.speaker.push_back(k);
        out.split.push_back(!out.source_seen[s] || r >= eval_from ? Split::Eval : Split::Train);
        for (int d = 0; d < F; ++d)
          out.features(row, d) = cfg.source_strength * out.source_latents(s, d) +
                                 cfg.speaker_strength * spk(k, d) + cfg.noise_sigma * noise(rng);
        for (int d = 0; d < F; ++d) out.speaker_embeddings(row, d) = spk(k, d) + cfg.oracle_noise * noise(rng);
        out.speaker_embeddings.row(row).normalize();
      }

  for (std::size_t u = 0; u < N; ++u)
    if (!out.seen(u) && out.split[u] == Split::Train) throw ConfigError("split hygiene violated");
  return out;
}

/// Frozen speaker embedding of one utterance.
inline Vec speaker_oracle_embed(const SyntheticCorpus& corpus, const std::string& id) {
  return corpus.speaker_embeddings.row(static_cast<Eigen::Index>(corpus.index_of(id))).transpose();
}

/// Same, looked up by the utterance's feature vector (exact match).
inline Vec speaker_oracle_embed(const Vec& features, const SyntheticCorpus& corpus) {
  for (Eigen::Index i = 0; i < corpus.features.rows(); ++i)
    if (corpus.features.row(i).transpose() == features) return corpus.speaker_embeddings.row(i).transpose();
  throw LookupError("feature vector does not belong to this corpus");
}

// ---------------------------------------------------------------------------
// Text manifests. One row per utterance, tab separated:
//   utt_id  source_id  speaker_id  train|eval  seen|unseen  v1,v2,...,vD
// Lines starting with '#' are header/comments. Values use 17 significant
// digits so files round-trip exactly.

struct ManifestRow {
  std::string id;
  int source = -1;
  int speaker = -1;
  Split split = Split::Eval;
  bool seen = true;
  std::vector<double> values;
};

inline void write_manifest_row(std::ostream& os, const ManifestRow& r) {
  os << r.id << '\t' << r.source << '\t' << r.speaker << '\t' << (r.split == Split::Train ? "train" : "eval") << '\t'
     << (r.seen ? "seen" : "unseen") << '\t';
  for (std::size_t d = 0; d < r.values.size(); ++d) {
    if (d) os << ',';
    os << r.values[d];
  }
  os << '\n';
}

inline ManifestRow parse_manifest_row(const std::string& line, std::size_t lineno) {
  std::istringstream is(line);
  ManifestRow r;
  std::string split, seen, values;
  if (!(is >> r.id >> r.source >> r.speaker >> split >> seen >> values))
    throw ParseError("expected 6 fields: id source speaker split seen values", lineno);
  if (split == "train")
    r.split = Split::Train;
  else if (split == "eval")
    r.split = Split::Eval;
  else
    throw ParseError("split must be train|eval, got '" + split + "'", lineno);
  if (seen == "seen")
    r.seen = true;
  else if (seen == "unseen")
    r.seen = false;
  else
    throw ParseError("flag must be seen|unseen, got '" + seen + "'", lineno);
  std::istringstream vs(values);
  std::string tok;
  while (std::getline(vs, tok, ',')) {
    try {
      std::size_t used = 0;
      r.values.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ParseError("bad numeric value '" + tok + "'", lineno);
    }
  }
  return r;
}

/// Reads rows of a manifest/embedding file; `header` collects '# key=value' lines.
inline std::vector<ManifestRow> read_rows(const std::string& path, std::map<std::string, std::string>* header = nullptr) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::vector<ManifestRow> rows;
  std::string line;
  std::size_t lineno = 0;
  std::size_t dim = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (header && eq != std::string::npos) {
        std::string key = line.substr(1, eq - 1);
        key.erase(0, key.find_first_not_of(' '));
        (*header)[key] = line.substr(eq + 1);
      }
      continue;
    }
    rows.push_back(parse_manifest_row(line, lineno));
    if (dim == 0) dim = rows.back().values.size();
    if (rows.back().values.size() != dim) throw ParseError("inconsistent vector dimension", lineno);
  }
  return rows;
}

inline void write_config_header(std::ostream& os, const SynthConfig& c) {
  os << "# n_sources=" << c.n_sources << "\n# n_speakers=" << c.n_speakers
     << "\n# utterances_per_pair=" << c.utterances_per_pair << "\n# feature_dim=" << c.feature_dim
     << "\n# source_strength=" << c.source_strength << "\n# speaker_strength=" << c.speaker_strength
     << "\n# noise_sigma=" << c.noise_sigma << "\n# unseen_source_fraction=" << c.unseen_source_fraction
     << "\n# eval_fraction=" << c.eval_fraction << "\n# oracle_noise=" << c.oracle_noise << "\n# seed=" << c.seed
     << '\n';
}

inline SynthConfig config_from_header(const std::map<std::string, std::string>& h) {
  SynthConfig c;
  auto get = [&](const char* k) -> const std::string* {
    auto it = h.find(k);
    return it == h.end() ? nullptr : &it->second;
  };
  if (auto v = get("n_sources")) c.n_sources = std::stoi(*v);
  if (auto v = get("n_speakers")) c.n_speakers = std::stoi(*v);
  if (auto v = get("utterances_per_pair")) c.utterances_per_pair = std::stoi(*v);
  if (auto v = get("feature_dim")) c.feature_dim = std::stoi(*v);
  if (auto v = get("source_strength")) c.source_strength = std::stod(*v);
  if (auto v = get("speaker_strength")) c.speaker_strength = std::stod(*v);
  if (auto v = get("noise_sigma")) c.noise_sigma = std::stod(*v);
  if (auto v = get("unseen_source_fraction")) c.unseen_source_fraction = std::stod(*v);
  if (auto v = get("eval_fraction")) c.eval_fraction = std::stod(*v);
  if (auto v = get("oracle_noise")) c.oracle_noise = std::stod(*v);
  if (auto v = get("seed")) c.seed = std::stoull(*v);
  return c;
}

inline void write_embedding_rows(const std::string& path, const SyntheticCorpus& corpus, const Mat& values,
                                 const std::string& kind, const std::vector<std::size_t>* subset = nullptr) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write '" + path + "'");
  os << std::setprecision(17);
  os << "# sdml " << kind << " v1\n";
  write_config_header(os, corpus.config);
  auto emit = [&](std::size_t i, Eigen::Index row) {
    ManifestRow r{corpus.ids[i], corpus.source[i], corpus.speaker[i], corpus.split[i], corpus.seen(i), {}};
    r.values.assign(values.row(row).data(), values.row(row).data() + values.cols());
    write_manifest_row(os, r);
  };
  if (subset) {
    for (std::size_t k = 0; k < subset->size(); ++k) emit((*subset)[k], static_cast<Eigen::Index>(k));
  } else {
    for (std::size_t i = 0; i < corpus.size(); ++i) emit(i, static_cast<Eigen::Index>(i));
  }
}

/// Writes `<dir>/corpus.manifest` (features) and `<dir>/speaker.embeddings` (oracle).
inline void write_corpus(const std::string& dir, const SyntheticCorpus& corpus) {
  write_embedding_rows(dir + "/corpus.manifest", corpus, corpus.features, "corpus");
  write_embedding_rows(dir + "/speaker.embeddings", corpus, corpus.speaker_embeddings, "speaker-embeddings");
}

inline SyntheticCorpus read_corpus(const std::string& dir) {
  std::map<std::string, std::string> header;
  const auto rows = read_rows(dir + "/corpus.manifest", &header);
  const auto spk_rows = read_rows(dir + "/speaker.embeddings");
  if (rows.empty()) throw ConfigError("corpus manifest is empty");
  if (spk_rows.size() != rows.size()) throw ConfigError("speaker embeddings do not match the corpus manifest");

  SyntheticCorpus c;
  c.config = config_from_header(header);
  const auto N = static_cast<Eigen::Index>(rows.size());
  const auto F = static_cast<Eigen::Index>(rows[0].values.size());
  const auto Fs = static_cast<Eigen::Index>(spk_rows[0].values.size());
  c.features.resize(N, F);
  c.speaker_embeddings.resize(N, Fs);
  int max_source = -1;
  std::map<int, bool> seen;
  for (Eigen::Index i = 0; i < N; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    const auto& s = spk_rows[static_cast<std::size_t>(i)];
    if (s.id != r.id) throw ParseError("speaker embedding row id '" + s.id + "' != '" + r.id + "'", static_cast<std::size_t>(i) + 1);
    c.ids.push_back(r.id);
    c.source.push_back(r.source);
    c.speaker.push_back(r.speaker);
    c.split.push_back(r.split);
    max_source = std::max(max_source, r.source);
    seen[r.source] = r.seen;
    for (Eigen::Index d = 0; d < F; ++d) c.features(i, d) = r.values[static_cast<std::size_t>(d)];
    for (Eigen::Index d = 0; d < Fs; ++d) c.speaker_embeddings(i, d) = s.values[static_cast<std::size_t>(d)];
  }
  c.source_seen.assign(static_cast<std::size_t>(max_source + 1), true);
  for (auto [s, flag] : seen) c.source_seen[static_cast<std::size_t>(s)] = flag;
  for (std::size_t u = 0; u < c.size(); ++u)
    if (!c.seen(u) && c.split[u] == Split::Train) throw ConfigError("manifest puts an unseen source in the train split");
  return c;
}

/// External embeddings keyed by utterance id (same row format as the manifest).
inline std::unordered_map<std::string, Vec> import_embeddings(const std::string& path) {
  std::unordered_map<std::string, Vec> out;
  for (const auto& r : read_rows(path)) {
    Vec v = Eigen::Map<const Vec>(r.values.data(), static_cast<Eigen::Index>(r.values.size()));
    const double n = v.norm();
    if (!(n > 0.0)) throw ConfigError("embedding for '" + r.id + "' has zero norm");
    out.emplace(r.id, v / n);
  }
  return out;
}

}  // namespace sdml
