#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "sdml/cli.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run sdml_run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = sdml::cli::run(std::move(args), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("sdml_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

/// One small corpus shared by the train and eval tests.
const fs::path& small_corpus() {
  static const fs::path dir = [] {
    auto d = scratch_dir("corpus");
    const auto r = sdml_run({"gen", "--seed", "3", "--out", d.string(), "--sources", "6", "--speakers", "8",
                             "--utterances", "12", "--unseen-fraction", "0.34"});
    EXPECT_EQ(r.code, 0) << r.err;
    return d;
  }();
  return dir;
}

}  // namespace

TEST(CliGen, DefaultConfigWritesTwelveSourceCorpus) {
  const auto dir = scratch_dir("gen_default");
  const auto r = sdml_run({"gen", "--seed", "1", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("sources 12 (seen 8, unseen 4)"), std::string::npos) << r.out;
  const auto corpus = sdml::read_corpus(dir.string());
  EXPECT_EQ(corpus.source_seen.size(), 12u);
}

TEST(CliGen, SameSeedGivesByteIdenticalFiles) {
  const auto a = scratch_dir("gen_a"), b = scratch_dir("gen_b");
  ASSERT_EQ(sdml_run({"gen", "--seed", "9", "--out", a.string()}).code, 0);
  ASSERT_EQ(sdml_run({"gen", "--seed", "9", "--out", b.string()}).code, 0);
  for (const char* f : {"corpus.manifest", "speaker.embeddings"}) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
}

TEST(CliGen, InfeasibleSplitExitsWithConfigError) {
  const auto dir = scratch_dir("gen_bad");
  const auto r = sdml_run({"gen", "--seed", "1", "--out", (dir / "x").string(), "--sources", "2",
                           "--unseen-fraction", "0.9"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("infeasible"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir / "x"));
}

TEST(CliGen, SeedIsRequired) {
  const auto dir = scratch_dir("gen_noseed");
  EXPECT_EQ(sdml_run({"gen", "--out", dir.string()}).code, 2);
}

TEST(CliUsage, BadInvocationsExitTwo) {
  EXPECT_EQ(sdml_run({}).code, 2);
  EXPECT_EQ(sdml_run({"frobnicate"}).code, 2);
  EXPECT_EQ(sdml_run({"train", "--seed", "1", "--loss", "softmax"}).code, 2);
  EXPECT_EQ(sdml_run({"gen", "--seed", "notanumber"}).code, 2);
  const auto help = sdml_run({"--help"});
  EXPECT_EQ(help.code, 0);
  EXPECT_NE(help.out.find("--speaker-threshold"), std::string::npos);
  EXPECT_EQ(help.out.find("inject-fault"), std::string::npos);
}

TEST(CliTrain, MissingCorpusIsUsageError) {
  const auto out = scratch_dir("train_missing");
  EXPECT_EQ(sdml_run({"train", "--seed", "1", "--out", out.string()}).code, 2);
  const auto r = sdml_run({"train", "--seed", "1", "--out", out.string(), "--corpus", (out / "absent").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("absent"), std::string::npos);
}

TEST(CliTrain, PaperFlagsMatchBuiltInDefaults) {
  const auto a = scratch_dir("train_flags"), b = scratch_dir("train_plain");
  const auto c = small_corpus().string();
  ASSERT_EQ(sdml_run({"train", "--seed", "2", "--corpus", c, "--out", a.string(), "--epochs", "2", "--loss",
                      "riemann-sd", "--lambda", "1", "--curvature", "6"})
                .code,
            0);
  ASSERT_EQ(sdml_run({"train", "--seed", "2", "--corpus", c, "--out", b.string(), "--epochs", "2", "--loss",
                      "riemann-sd"})
                .code,
            0);
  EXPECT_EQ(slurp(a / "model.ckpt"), slurp(b / "model.ckpt"));

  ASSERT_EQ(sdml_run({"train", "--seed", "2", "--corpus", c, "--out", a.string(), "--epochs", "2", "--loss",
                      "cheby-sd", "--K", "10"})
                .code,
            0);
  ASSERT_EQ(sdml_run({"train", "--seed", "2", "--corpus", c, "--out", b.string(), "--epochs", "2", "--loss",
                      "cheby-sd"})
                .code,
            0);
  EXPECT_EQ(slurp(a / "model.ckpt"), slurp(b / "model.ckpt"));
}

TEST(CliTrain, FlagsOverrideConfigFileOverrideDefaults) {
  const auto dir = scratch_dir("train_config");
  const auto c = small_corpus().string();
  {
    std::ofstream cfg(dir / "run.cfg");
    cfg << "# key = value\nepochs = 2\nloss = cheby\nseed = 4\n";
  }
  const auto cfg = (dir / "run.cfg").string();
  auto r = sdml_run({"train", "--config", cfg, "--corpus", c, "--out", (dir / "file").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("training ChebyAAM for 2 epochs"), std::string::npos) << r.out;
  EXPECT_EQ(count_lines(slurp(dir / "file" / "loss.csv")), 3u);

  r = sdml_run({"train", "--config", cfg, "--corpus", c, "--out", (dir / "flag").string(), "--epochs", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(slurp(dir / "flag" / "loss.csv")), 4u);

  r = sdml_run({"train", "--seed", "4", "--corpus", c, "--out", (dir / "default").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(slurp(dir / "default" / "loss.csv")), 1u + sdml::TrainConfig::desk_scale().epochs);
}

TEST(CliTrain, DivergenceNamesTheStep) {
  const auto dir = scratch_dir("train_diverge");
  const auto r = sdml_run({"train", "--seed", "1", "--corpus", small_corpus().string(), "--out", dir.string(),
                           "--lr", "1e300", "--epochs", "1"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("step"), std::string::npos) << r.err;
}

TEST(CliEval, ReportHasFourProtocolsAndAverageAndIsReproducible) {
  const auto dir = scratch_dir("eval");
  const auto c = small_corpus().string();
  ASSERT_EQ(sdml_run({"train", "--seed", "1", "--corpus", c, "--out", (dir / "m").string(), "--epochs", "2"}).code,
            0);
  const std::vector<std::string> args = {"eval", "--seed", "5", "--corpus", c, "--checkpoint",
                                         (dir / "m" / "model.ckpt").string(), "--pairs-per-protocol", "40",
                                         "--task-pairs", "60", "--bootstrap-runs", "50"};
  auto first = args, second = args;
  first.insert(first.end(), {"--out", (dir / "e1").string(), "--workers", "1"});
  second.insert(second.end(), {"--out", (dir / "e2").string(), "--workers", "4"});
  const auto r1 = sdml_run(first);
  ASSERT_EQ(r1.code, 0) << r1.err;
  ASSERT_EQ(sdml_run(second).code, 0);

  const std::string table = slurp(dir / "e1" / "table.csv");
  std::istringstream is(table);
  std::string line;
  std::vector<std::string> rows;
  while (std::getline(is, line)) rows.push_back(line.substr(0, line.find(',')));
  EXPECT_EQ(rows, (std::vector<std::string>{"protocol", "P-I", "P-II", "P-III", "P-IV", "Average"}));
  for (const char* f : {"report.txt", "table.csv", "roc.csv", "P1.trials", "P4.scores", "source.embeddings"})
    EXPECT_EQ(slurp(dir / "e1" / f), slurp(dir / "e2" / f)) << f;
  EXPECT_NE(slurp(dir / "e1" / "report.txt").find("average.eer = "), std::string::npos);
  EXPECT_NE(slurp(dir / "e1" / "report.txt").find("cross.source_extractor.speaker_task.eer"), std::string::npos);

  // Reusing the written protocols reproduces the table.
  auto reuse = args;
  reuse.insert(reuse.end(), {"--out", (dir / "e3").string(), "--protocols", (dir / "e1").string()});
  ASSERT_EQ(sdml_run(reuse).code, 0);
  EXPECT_EQ(slurp(dir / "e1" / "table.csv"), slurp(dir / "e3" / "table.csv"));
}

TEST(CliEval, ImportedEmbeddingsNeedNoCheckpoint) {
  const auto dir = scratch_dir("eval_import");
  const auto c = small_corpus();
  const auto r = sdml_run({"eval", "--seed", "1", "--corpus", c.string(), "--import-embeddings",
                           (c / "speaker.embeddings").string(), "--out", dir.string(), "--pairs-per-protocol", "40",
                           "--task-pairs", "60", "--bootstrap-runs", "0"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(slurp(dir / "report.txt").find("embeddings = imported"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "source.embeddings"));
}

TEST(CliEval, RequiresExactlyOneEmbeddingSource) {
  const auto dir = scratch_dir("eval_both");
  const auto c = small_corpus();
  EXPECT_EQ(sdml_run({"eval", "--seed", "1", "--corpus", c.string(), "--out", dir.string()}).code, 2);
}

TEST(CliEval, CheckpointCorpusDimensionMismatchFails) {
  const auto dir = scratch_dir("eval_mismatch");
  ASSERT_EQ(sdml_run({"gen", "--seed", "1", "--out", (dir / "c16").string(), "--sources", "6", "--speakers", "8",
                      "--utterances", "12", "--unseen-fraction", "0.34", "--feature-dim", "16"})
                .code,
            0);
  ASSERT_EQ(sdml_run({"train", "--seed", "1", "--corpus", small_corpus().string(), "--out", (dir / "m").string(),
                      "--epochs", "1"})
                .code,
            0);
  const auto r = sdml_run({"eval", "--seed", "1", "--corpus", (dir / "c16").string(), "--checkpoint",
                           (dir / "m" / "model.ckpt").string(), "--out", (dir / "e").string()});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("16"), std::string::npos) << r.err;
}

TEST(CliGradcheck, DefaultRunPrintsFivePassLines) {
  const auto r = sdml_run({"gradcheck", "--instances", "20"});
  EXPECT_EQ(r.code, 0) << r.out;
  std::istringstream is(r.out);
  std::string line;
  int pass = 0;
  while (std::getline(is, line)) pass += line.rfind("PASS ", 0) == 0;
  EXPECT_EQ(pass, 5);
  EXPECT_NE(r.out.find("boundary cos=1-1e-8"), std::string::npos);
}

TEST(CliGradcheck, InjectedFaultFailsNamingTheBlock) {
  auto r = sdml_run({"gradcheck", "--instances", "3", "--inject-fault", "src"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("FAIL aam"), std::string::npos);
  EXPECT_NE(r.out.find("block src"), std::string::npos);
  r = sdml_run({"gradcheck", "--instances", "3", "--inject-fault", "protos"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("block protos"), std::string::npos);
}

TEST(CliSweep, GridsAndReductionRows) {
  const auto rows = sdml::cli::sweep_rows(sdml::LossConfig{});
  std::set<int> K;
  std::set<double> lambda_cheb, curv;
  for (const auto& r : rows) {
    if (r.loss.kind == sdml::LossKind::ChebySD) K.insert(r.loss.cheb_K), lambda_cheb.insert(r.loss.lambda);
    if (r.loss.kind == sdml::LossKind::RiemannSD) curv.insert(r.loss.curvature);
  }
  EXPECT_EQ(K, (std::set<int>{5, 10, 20}));
  EXPECT_EQ(lambda_cheb, (std::set<double>{0.0, 0.1, 1.0, 10.0}));
  EXPECT_EQ(curv, (std::set<double>{0.5, 3.0, 6.0, 10.0}));

  const auto dir = scratch_dir("sweep");
  const auto r = sdml_run({"sweep", "--seed", "1", "--corpus", small_corpus().string(), "--out", dir.string(),
                           "--epochs", "1", "--pairs-per-protocol", "40", "--task-pairs", "60", "--bootstrap-runs",
                           "0"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(slurp(dir / "sweep.csv")), 1 + rows.size());
  EXPECT_NE(r.out.find("reduction ChebySD-AAM(lambda=0) vs ChebyAAM: identical"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("reduction RiemannSD-AAM(lambda=0) vs HAM-Softmax: identical"), std::string::npos) << r.out;
}
