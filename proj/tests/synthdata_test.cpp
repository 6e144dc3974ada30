#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "sdml/synthdata.hpp"

using sdml::Mat;
using sdml::Split;
using sdml::SynthConfig;
using sdml::Vec;

namespace {

/// In-sample nearest-centroid accuracy for one label set.
double nearest_centroid_accuracy(const Mat& x, const std::vector<int>& labels, int n_classes) {
  Mat centroids = Mat::Zero(n_classes, x.cols());
  std::vector<int> count(n_classes, 0);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    centroids.row(labels[i]) += x.row(i);
    ++count[labels[i]];
  }
  for (int k = 0; k < n_classes; ++k) centroids.row(k) /= count[k];
  int hits = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Eigen::Index best = 0;
    (centroids.rowwise() - x.row(i)).rowwise().squaredNorm().minCoeff(&best);
    hits += best == labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(x.rows());
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("sdml_synth_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST(SynthConfig, DefaultsAreDeskScale) {
  const SynthConfig c;
  EXPECT_EQ(c.n_sources, 12);
  EXPECT_EQ(c.n_unseen(), 4);
  EXPECT_EQ(c.n_speakers, 20);
  EXPECT_EQ(c.utterances_per_pair, 25);
  EXPECT_EQ(c.feature_dim, 32);
  EXPECT_NO_THROW(c.validate());
}

TEST(SynthConfig, RejectsInfeasibleSplits) {
  SynthConfig c;
  c.n_sources = 4;
  c.unseen_source_fraction = 0.9;
  EXPECT_THROW(c.validate(), sdml::ConfigError);
  c.unseen_source_fraction = 0.1;
  EXPECT_THROW(c.validate(), sdml::ConfigError);
  c.unseen_source_fraction = 0.5;
  EXPECT_NO_THROW(c.validate());
}

TEST(SynthConfig, RejectsBadInvariants) {
  SynthConfig c;
  c.source_strength = 0.0;
  c.speaker_strength = 0.0;
  EXPECT_THROW(c.validate(), sdml::ConfigError);
  c = SynthConfig{};
  c.n_speakers = 3;
  EXPECT_THROW(c.validate(), sdml::ConfigError);
  c = SynthConfig{};
  c.speaker_strength = -1.0;
  EXPECT_THROW(c.validate(), sdml::ConfigError);
}

TEST(GenerateCorpus, TenSourcesThirtyPercentUnseen) {
  SynthConfig c;
  c.n_sources = 10;
  c.unseen_source_fraction = 0.3;
  const auto corpus = sdml::generate_corpus(c);
  EXPECT_EQ(std::count(corpus.source_seen.begin(), corpus.source_seen.end(), false), 3);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (!corpus.seen(i)) {
      EXPECT_EQ(corpus.split[i], Split::Eval);
    }
  }
}

TEST(GenerateCorpus, CellsAreFullAndLabelsInRange) {
  const SynthConfig c;
  const auto corpus = sdml::generate_corpus(c);
  std::map<std::pair<int, int>, int> cells;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    ASSERT_GE(corpus.source[i], 0);
    ASSERT_LT(corpus.source[i], c.n_sources);
    ASSERT_GE(corpus.speaker[i], 0);
    ASSERT_LT(corpus.speaker[i], c.n_speakers);
    ++cells[{corpus.source[i], corpus.speaker[i]}];
  }
  EXPECT_EQ(cells.size(), static_cast<std::size_t>(c.n_sources * c.n_speakers));
  for (const auto& [cell, n] : cells) EXPECT_EQ(n, c.utterances_per_pair);
  EXPECT_EQ(corpus.features.rows(), static_cast<Eigen::Index>(corpus.size()));
  EXPECT_EQ(corpus.features.cols(), c.feature_dim);
}

TEST(GenerateCorpus, DegenerateSharesVectorIffSameSource) {
  SynthConfig c;
  c.noise_sigma = 0.0;
  c.speaker_strength = 0.0;
  const auto corpus = sdml::generate_corpus(c);
  for (std::size_t i = 0; i < corpus.size(); i += 37)
    for (std::size_t j = 0; j < corpus.size(); j += 41) {
      const bool same = corpus.features.row(i) == corpus.features.row(j);
      EXPECT_EQ(same, corpus.source[i] == corpus.source[j]);
    }
}

TEST(GenerateCorpus, BitIdenticalForSameSeed) {
  const auto a = sdml::generate_corpus(SynthConfig{});
  const auto b = sdml::generate_corpus(SynthConfig{});
  EXPECT_EQ(a.features, b.features);
  EXPECT_EQ(a.speaker_embeddings, b.speaker_embeddings);
  EXPECT_EQ(a.split, b.split);
  EXPECT_EQ(a.source_seen, b.source_seen);
  SynthConfig other;
  other.seed = 2;
  EXPECT_NE(sdml::generate_corpus(other).features, a.features);
}

TEST(GenerateCorpus, EntanglementDial) {
  SynthConfig speaker_heavy;
  speaker_heavy.source_strength = 0.05;
  speaker_heavy.speaker_strength = 3.0;
  const auto a = sdml::generate_corpus(speaker_heavy);
  SynthConfig source_only;
  source_only.speaker_strength = 0.0;
  const auto b = sdml::generate_corpus(source_only);

  const double src_a = nearest_centroid_accuracy(a.features, a.source, 12);
  const double spk_a = nearest_centroid_accuracy(a.features, a.speaker, 20);
  const double src_b = nearest_centroid_accuracy(b.features, b.source, 12);
  const double spk_b = nearest_centroid_accuracy(b.features, b.speaker, 20);
  EXPECT_LT(src_a, 0.5);
  EXPECT_GT(spk_a, 0.95);
  EXPECT_GT(src_b, 0.85);
  EXPECT_LT(spk_b, 0.2);
}

TEST(SpeakerOracle, ZeroNoiseSameSpeakerIdenticalAndOrthogonalOtherwise) {
  SynthConfig c;
  c.oracle_noise = 0.0;
  const auto corpus = sdml::generate_corpus(c);
  // index = (source * n_speakers + speaker) * utterances_per_pair + rep.
  const Vec a = sdml::speaker_oracle_embed(corpus, "u000000");
  const Vec same = sdml::speaker_oracle_embed(corpus, sdml::utterance_id(3 * 20 * 25 + 7));  // source 3, speaker 0
  const Vec other = sdml::speaker_oracle_embed(corpus, sdml::utterance_id(25));              // source 0, speaker 1
  EXPECT_NEAR(a.dot(same), 1.0, 1e-15);
  EXPECT_NEAR(a.dot(other), 0.0, 1e-12);
}

TEST(SpeakerOracle, ValleySeparatesSameAndDifferentSpeakers) {
  const auto corpus = sdml::generate_corpus(SynthConfig{});
  double min_same = 1.0, max_diff = -1.0;
  for (std::size_t i = 0; i < corpus.size(); i += 7)
    for (std::size_t j = i + 1; j < corpus.size(); j += 13) {
      const double cs = corpus.speaker_embeddings.row(i).dot(corpus.speaker_embeddings.row(j));
      if (corpus.speaker[i] == corpus.speaker[j])
        min_same = std::min(min_same, cs);
      else
        max_diff = std::max(max_diff, cs);
    }
  EXPECT_GT(min_same, 0.8);
  EXPECT_LT(max_diff, 0.4);
}

TEST(SpeakerOracle, FrozenAndLookupErrors) {
  const auto corpus = sdml::generate_corpus(SynthConfig{});
  const Vec a = sdml::speaker_oracle_embed(corpus, "u000123");
  const Vec b = sdml::speaker_oracle_embed(corpus, "u000123");
  EXPECT_EQ(a, b);
  EXPECT_NEAR(a.norm(), 1.0, 1e-12);
  EXPECT_EQ(sdml::speaker_oracle_embed(Vec(corpus.features.row(123).transpose()), corpus), a);
  EXPECT_THROW(sdml::speaker_oracle_embed(corpus, "nope"), sdml::LookupError);
  EXPECT_THROW(sdml::speaker_oracle_embed(Vec::Zero(32), corpus), sdml::LookupError);
}

TEST(Manifest, RoundTripsExactly) {
  const auto dir = scratch_dir("roundtrip");
  SynthConfig c;
  c.seed = 9;
  const auto corpus = sdml::generate_corpus(c);
  sdml::write_corpus(dir.string(), corpus);
  const auto back = sdml::read_corpus(dir.string());
  EXPECT_EQ(back.ids, corpus.ids);
  EXPECT_EQ(back.features, corpus.features);
  EXPECT_EQ(back.speaker_embeddings, corpus.speaker_embeddings);
  EXPECT_EQ(back.source, corpus.source);
  EXPECT_EQ(back.speaker, corpus.speaker);
  EXPECT_EQ(back.split, corpus.split);
  EXPECT_EQ(back.source_seen, corpus.source_seen);
  EXPECT_EQ(back.config.seed, 9u);

  // Writing twice gives identical bytes.
  const auto dir2 = scratch_dir("roundtrip2");
  sdml::write_corpus(dir2.string(), sdml::generate_corpus(c));
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  EXPECT_EQ(slurp(dir / "corpus.manifest"), slurp(dir2 / "corpus.manifest"));
}

TEST(Manifest, MalformedLineReportsLineNumber) {
  const auto dir = scratch_dir("bad");
  {
    std::ofstream os(dir / "bad.embeddings");
    os << "# header\n";
    os << "u000001\t0\t0\teval\tseen\t0.1,0.2\n";
    os << "u000002\t0\t0\teval\tmaybe\t0.1,0.2\n";
  }
  try {
    sdml::import_embeddings((dir / "bad.embeddings").string());
    FAIL() << "expected a parse error";
  } catch (const sdml::ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(Manifest, ImportNormalizesExternalEmbeddings) {
  const auto dir = scratch_dir("import");
  {
    std::ofstream os(dir / "ext.embeddings");
    os << "a\t0\t0\teval\tunseen\t3,4\n";
  }
  const auto m = sdml::import_embeddings((dir / "ext.embeddings").string());
  ASSERT_EQ(m.size(), 1u);
  EXPECT_NEAR(m.at("a")[0], 0.6, 1e-15);
  EXPECT_NEAR(m.at("a")[1], 0.8, 1e-15);
}
