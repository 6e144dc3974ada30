#pragma once

// The `sdml` command line: gen, train, eval, gradcheck and sweep over one
// shared option set. Precedence is flag > `--config` file > built-in default.
// Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "sdml/errors.hpp"
#include "sdml/experiment.hpp"
#include "sdml/gradcheck.hpp"
#include "sdml/losses.hpp"

namespace sdml::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Bad invocation: missing or conflicting arguments, unusable paths.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::optional<std::uint64_t> seed;
  std::string out, corpus, checkpoint, import_embeddings, protocols;

  SynthConfig synth;

  std::string preset = "desk";
  std::string loss = "aam";
  LossConfig loss_cfg;
  std::optional<int> epochs, batch, hidden;
  std::optional<long> warmup;
  std::optional<double> lr, decay, weight_decay;

  EvalOptions eval;

  int instances = 100;
  std::string inject_fault = "none";
};

inline TrainConfig train_config(const Options& o) {
  TrainConfig c = o.preset == "paper" ? TrainConfig{} : TrainConfig::desk_scale();
  if (o.epochs) c.epochs = *o.epochs;
  if (o.batch) c.batch_size = *o.batch;
  if (o.hidden) c.hidden_dim = *o.hidden;
  if (o.warmup) c.warmup_steps = *o.warmup;
  if (o.lr) c.base_lr = *o.lr;
  if (o.decay) c.decay_per_epoch = *o.decay;
  if (o.weight_decay) c.weight_decay = *o.weight_decay;
  c.loss = o.loss_cfg;
  c.loss.kind = parse_loss_kind(o.loss);
  if (o.seed) c.seed = *o.seed;
  return c;
}

namespace detail {

inline std::uint64_t require_seed(const Options& o, const char* cmd) {
  if (!o.seed) throw UsageError(std::string(cmd) + ": --seed is required");
  return *o.seed;
}

inline void require_dir(const std::string& path, const char* flag, const char* cmd) {
  if (path.empty()) throw UsageError(std::string(cmd) + ": " + flag + " is required");
  if (!std::filesystem::is_directory(path))
    throw UsageError(std::string(cmd) + ": " + flag + " '" + path + "' is not a directory");
}

inline void require_file(const std::string& path, const char* flag, const char* cmd) {
  if (!std::filesystem::is_regular_file(path))
    throw UsageError(std::string(cmd) + ": " + flag + " '" + path + "' does not exist");
}

inline std::string make_out_dir(const std::string& out, const char* cmd) {
  if (out.empty()) throw UsageError(std::string(cmd) + ": --out is required");
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec || !std::filesystem::is_directory(out))
    throw UsageError(std::string(cmd) + ": cannot create output directory '" + out + "'");
  return out;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write '" + path + "'");
  os << text;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands.

inline int cmd_gen(Options o, std::ostream& out) {
  o.synth.seed = detail::require_seed(o, "gen");
  o.synth.validate();
  const auto dir = detail::make_out_dir(o.out, "gen");
  const auto corpus = generate_corpus(o.synth);
  write_corpus(dir, corpus);
  const auto n_seen = corpus.seen_sources().size();
  out << "utterances " << corpus.size() << " (train " << corpus.indices(Split::Train).size() << ", eval "
      << corpus.indices(Split::Eval).size() << ")\n"
      << "sources " << corpus.source_seen.size() << " (seen " << n_seen << ", unseen "
      << corpus.source_seen.size() - n_seen << ")\n"
      << "speakers " << o.synth.n_speakers << "\nfeature_dim " << o.synth.feature_dim << '\n'
      << "wrote " << dir << "/corpus.manifest and " << dir << "/speaker.embeddings\n";
  return kExitOk;
}

inline int cmd_train(const Options& o, std::ostream& out) {
  detail::require_dir(o.corpus, "--corpus", "train");
  detail::require_seed(o, "train");
  const TrainConfig cfg = train_config(o);
  cfg.validate();
  const auto corpus = read_corpus(o.corpus);
  const auto dir = detail::make_out_dir(o.out, "train");
  out << "training " << display_name(cfg.loss.kind) << " for " << cfg.epochs << " epochs\n";
  const auto rep = train(corpus, cfg);
  write_checkpoint(dir + "/model.ckpt", rep.encoder, rep.prototypes);
  write_loss_curve(dir + "/loss.csv", rep);
  for (std::size_t e = 0; e < rep.epoch_loss.size(); ++e)
    out << "epoch " << e << " loss " << fmt(rep.epoch_loss[e]) << '\n';
  out << "steps " << rep.steps << "\nwrote " << dir << "/model.ckpt and " << dir << "/loss.csv\n";
  return kExitOk;
}

inline int cmd_eval(Options o, std::ostream& out) {
  detail::require_dir(o.corpus, "--corpus", "eval");
  o.eval.seed = detail::require_seed(o, "eval");
  if (o.checkpoint.empty() == o.import_embeddings.empty())
    throw UsageError("eval: give exactly one of --checkpoint or --import-embeddings");
  if (!o.checkpoint.empty()) detail::require_file(o.checkpoint, "--checkpoint", "eval");
  if (!o.import_embeddings.empty()) detail::require_file(o.import_embeddings, "--import-embeddings", "eval");
  if (!o.protocols.empty()) detail::require_dir(o.protocols, "--protocols", "eval");
  if (o.eval.bootstrap_runs < 0) throw ConfigError("eval: --bootstrap-runs must be >= 0");
  if (!(o.eval.speaker_threshold > 0.0 && o.eval.speaker_threshold < 1.0))
    throw ConfigError("eval: --speaker-threshold must lie in (0, 1)");

  const auto corpus = read_corpus(o.corpus);
  EmbeddingMap src;
  std::string label;
  if (!o.checkpoint.empty()) {
    src = source_embeddings(read_checkpoint(o.checkpoint).encoder, corpus);
    label = "checkpoint " + o.checkpoint;
  } else {
    src = import_embeddings(o.import_embeddings);
    label = "imported " + o.import_embeddings;
  }
  auto plan = plan_evaluation(corpus, o.eval);
  if (!o.protocols.empty()) plan.protocols = read_protocols(o.protocols);
  const auto dir = detail::make_out_dir(o.out, "eval");
  const auto result = run_evaluation(corpus, plan, src, o.eval);

  std::ostringstream report, table, roc;
  write_eval_report(report, label, plan, result, o.eval);
  write_table_csv(table, result.reports);
  write_roc_csv(roc, result.scores);
  detail::write_text(dir + "/report.txt", report.str());
  detail::write_text(dir + "/table.csv", table.str());
  detail::write_text(dir + "/roc.csv", roc.str());
  for (int p = 0; p < kNumProtocols; ++p) {
    const std::string stem = std::string(kProtocolFiles[static_cast<std::size_t>(p)]).substr(0, 2);
    write_scores(dir + "/" + stem + ".scores", result.scores[static_cast<std::size_t>(p)]);
  }
  if (o.protocols.empty()) write_protocols(dir, plan.protocols, o.eval.speaker_threshold);
  if (!o.checkpoint.empty()) {
    const auto idx = corpus.indices(Split::Eval);
    Mat f(static_cast<Eigen::Index>(idx.size()), src.begin()->second.size());
    for (std::size_t r = 0; r < idx.size(); ++r) f.row(static_cast<Eigen::Index>(r)) = src.at(corpus.ids[idx[r]]).transpose();
    write_embedding_rows(dir + "/source.embeddings", corpus, f, "source-embeddings", &idx);
  }
  out << table.str();
  return kExitOk;
}

inline int cmd_gradcheck(const Options& o, std::ostream& out) {
  if (o.instances < 1) throw ConfigError("gradcheck: --instances must be >= 1");
  const std::uint64_t seed = o.seed.value_or(1);
  gradcheck::Fault fault = gradcheck::Fault::None;
  if (o.inject_fault == "src") fault = gradcheck::Fault::SourceBlock;
  if (o.inject_fault == "protos") fault = gradcheck::Fault::PrototypeBlock;
  bool all = true;
  for (LossKind k : kAllLossKinds) {
    const auto rep = gradcheck::check_kind(k, o.instances, seed, fault);
    const bool ok = rep.passed();
    all = all && ok;
    out << (ok ? "PASS " : "FAIL ") << to_string(k) << " instances=" << rep.instances
        << " max_rel_err=" << std::scientific << std::setprecision(3) << rep.max_error() << " (src "
        << rep.max_err_src << ", protos " << rep.max_err_protos << ")" << std::defaultfloat;
    if (!ok) {
      const auto& c = rep.worst_cfg;
      out << " worst instance " << rep.worst_instance << " block " << rep.worst_block << " [s=" << c.scale
          << " m=" << c.margin << " lambda=" << c.lambda << " tau=" << c.tau << " gamma=" << c.gamma
          << " c=" << c.curvature << " K=" << c.cheb_K << "]";
    }
    out << std::setprecision(6) << '\n';
  }
  const double x = 1.0 - 1e-8;
  const LossConfig d;
  const double exact = gradcheck::aam_unclamped_slope(x, d.scale, d.margin);
  const double cheb = gradcheck::cheby_slope(x, d.scale, d.margin, d.cheb_K);
  out << std::scientific << std::setprecision(6) << "boundary cos=1-1e-8 aam_slope=" << std::abs(exact)
      << " cheby_slope=" << std::abs(cheb) << " ratio=" << std::abs(exact) / std::abs(cheb) << '\n'
      << "boundary cheby_slope(+1)=" << gradcheck::cheby_slope(1.0, d.scale, d.margin, d.cheb_K)
      << " cheby_slope(-1)=" << gradcheck::cheby_slope(-1.0, d.scale, d.margin, d.cheb_K) << std::defaultfloat
      << '\n';
  return all ? kExitOk : kExitFailure;
}

struct SweepRow {
  std::string method;
  LossConfig loss;
};

/// Method rows: baselines, the K / lambda / c grids and the lambda = 0 rows.
inline std::vector<SweepRow> sweep_rows(const LossConfig& base) {
  std::vector<SweepRow> rows;
  auto add = [&](LossKind k, int K, double lambda, double c) {
    LossConfig l = base;
    l.kind = k, l.cheb_K = K, l.lambda = lambda, l.curvature = c;
    rows.push_back({std::string(display_name(k)), l});
  };
  add(LossKind::AAM, 10, 1.0, 6.0);
  add(LossKind::ChebyAAM, 10, 1.0, 6.0);
  for (int K : {5, 10, 20}) add(LossKind::ChebySD, K, 1.0, 6.0);
  for (double l : {0.1, 10.0}) add(LossKind::ChebySD, 10, l, 6.0);
  add(LossKind::ChebySD, 10, 0.0, 6.0);
  add(LossKind::HAM, 10, 1.0, 6.0);
  for (double c : {0.5, 3.0, 6.0, 10.0}) add(LossKind::RiemannSD, 10, 1.0, c);
  for (double l : {0.1, 10.0}) add(LossKind::RiemannSD, 10, l, 6.0);
  add(LossKind::RiemannSD, 10, 0.0, 6.0);
  return rows;
}

inline int cmd_sweep(Options o, std::ostream& out) {
  const auto seed = detail::require_seed(o, "sweep");
  o.eval.seed = seed;
  SyntheticCorpus corpus;
  if (!o.corpus.empty()) {
    detail::require_dir(o.corpus, "--corpus", "sweep");
    corpus = read_corpus(o.corpus);
  } else {
    o.synth.seed = seed;
    o.synth.validate();
    corpus = generate_corpus(o.synth);
  }
  const TrainConfig base = train_config(o);
  base.validate();
  const auto dir = detail::make_out_dir(o.out, "sweep");
  const auto plan = plan_evaluation(corpus, o.eval);

  struct Outcome {
    bool ok = false;
    TrainReport train;
    EvalResult eval;
    std::string error;
  };
  const auto rows = sweep_rows(base.loss);
  std::vector<Outcome> results(rows.size());
  std::ostringstream csv;
  csv << "method,K,lambda,curvature,p1_eer,p2_eer,p3_eer,p4_eer,avg_eer,avg_auc,alignment,status\n";
  int ok_count = 0;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    auto& res = results[r];
    TrainConfig cfg = base;
    cfg.loss = rows[r].loss;
    try {
      res.train = train(corpus, cfg);
      res.eval = run_evaluation(corpus, plan, source_embeddings(res.train.encoder, corpus), o.eval);
      res.ok = true;
      ++ok_count;
    } catch (const std::exception& e) {
      res.error = e.what();
    }
    const auto& l = rows[r].loss;
    csv << rows[r].method << ',' << l.cheb_K << ',' << fmt(l.lambda, 1) << ',' << fmt(l.curvature, 1);
    if (res.ok) {
      for (const auto& rep : res.eval.reports.reports) csv << ',' << fmt(100 * rep.eer, 2);
      csv << ',' << fmt(100 * res.eval.reports.mean_eer(), 2) << ',' << fmt(100 * res.eval.reports.mean_auc(), 2)
          << ',' << fmt(res.eval.alignment, 4) << ",ok\n";
    } else {
      csv << ",,,,,,,,\"failed: " << res.error << "\"\n";
    }
  }
  detail::write_text(dir + "/sweep.csv", csv.str());
  out << csv.str();

  // lambda = 0 must retrace the matching baseline exactly.
  auto find = [&](LossKind k, double lambda) {
    for (std::size_t r = 0; r < rows.size(); ++r)
      if (rows[r].loss.kind == k && rows[r].loss.lambda == lambda && rows[r].loss.cheb_K == 10 &&
          rows[r].loss.curvature == 6.0)
        return r;
    return rows.size();
  };
  for (auto [sd, plain] : {std::pair{LossKind::ChebySD, LossKind::ChebyAAM}, std::pair{LossKind::RiemannSD, LossKind::HAM}}) {
    const auto a = find(sd, 0.0), b = find(plain, 1.0);
    if (!results[a].ok || !results[b].ok) continue;
    const bool same = results[a].train.encoder == results[b].train.encoder &&
                      results[a].train.epoch_loss == results[b].train.epoch_loss;
    out << "reduction " << display_name(sd) << "(lambda=0) vs " << display_name(plain) << ": "
        << (same ? "identical" : "DIFFERENT") << '\n';
  }
  return ok_count > 0 ? kExitOk : kExitFailure;
}

// ---------------------------------------------------------------------------
// Parsing and dispatch.

inline void add_options(CLI::App& app, Options& o) {
  app.set_config("--config", "", "key = value file; flags given on the command line take precedence");
  app.add_option("--seed", o.seed, "global seed (required by gen, train, eval, sweep)");
  app.add_option("--out", o.out, "output directory");
  app.add_option("--corpus", o.corpus, "corpus directory written by gen");
  app.add_option("--checkpoint", o.checkpoint, "checkpoint written by train");
  app.add_option("--import-embeddings", o.import_embeddings, "external embeddings in manifest row format");
  app.add_option("--protocols", o.protocols, "directory with P1..P4.trials to reuse");

  auto* g = "Corpus";
  app.add_option("--sources", o.synth.n_sources, "number of sources")->group(g)->capture_default_str();
  app.add_option("--speakers", o.synth.n_speakers, "number of speakers")->group(g)->capture_default_str();
  app.add_option("--utterances", o.synth.utterances_per_pair, "utterances per (source, speaker)")->group(g)->capture_default_str();
  app.add_option("--feature-dim", o.synth.feature_dim, "feature dimension")->group(g)->capture_default_str();
  app.add_option("--alpha", o.synth.source_strength, "source strength")->group(g)->capture_default_str();
  app.add_option("--beta", o.synth.speaker_strength, "speaker strength")->group(g)->capture_default_str();
  app.add_option("--noise", o.synth.noise_sigma, "feature noise std")->group(g)->capture_default_str();
  app.add_option("--unseen-fraction", o.synth.unseen_source_fraction, "share of unseen sources")->group(g)->capture_default_str();
  app.add_option("--eval-fraction", o.synth.eval_fraction, "held-out share of seen cells")->group(g)->capture_default_str();
  app.add_option("--oracle-noise", o.synth.oracle_noise, "speaker oracle noise std")->group(g)->capture_default_str();

  g = "Training";
  app.add_option("--loss", o.loss, "loss kind")->group(g)->capture_default_str()
      ->check(CLI::IsMember({"aam", "cheby", "cheby-sd", "ham", "riemann-sd"}));
  app.add_option("--scale", o.loss_cfg.scale, "logit scale s")->group(g)->capture_default_str();
  app.add_option("--margin", o.loss_cfg.margin, "angular margin m")->group(g)->capture_default_str();
  app.add_option("--lambda", o.loss_cfg.lambda, "speaker margin weight")->group(g)->capture_default_str();
  app.add_option("--tau", o.loss_cfg.tau, "ChebySD cosine threshold")->group(g)->capture_default_str();
  app.add_option("--gamma", o.loss_cfg.gamma, "RiemannSD distance threshold")->group(g)->capture_default_str();
  app.add_option("--curvature", o.loss_cfg.curvature, "Poincare ball curvature c")->group(g)->capture_default_str();
  app.add_option("--K", o.loss_cfg.cheb_K, "Chebyshev degree")->group(g)->capture_default_str();
  app.add_option("--preset", o.preset, "schedule defaults: desk (warmup 200, batch 64) or paper (warmup 2000, batch 200)")
      ->group(g)->capture_default_str()->check(CLI::IsMember({"desk", "paper"}));
  app.add_option("--epochs", o.epochs, "epochs")->group(g);
  app.add_option("--batch", o.batch, "batch size")->group(g);
  app.add_option("--warmup", o.warmup, "linear warmup steps")->group(g);
  app.add_option("--lr", o.lr, "base learning rate")->group(g);
  app.add_option("--decay", o.decay, "learning-rate factor per epoch")->group(g);
  app.add_option("--weight-decay", o.weight_decay, "decoupled weight decay")->group(g);
  app.add_option("--hidden", o.hidden, "encoder hidden width")->group(g);

  g = "Evaluation";
  app.add_option("--pairs-per-protocol", o.eval.pairs_per_protocol, "positives (and negatives) per protocol")->group(g)->capture_default_str();
  app.add_option("--task-pairs", o.eval.task_pairs, "positives (and negatives) per cross-task list")->group(g)->capture_default_str();
  app.add_option("--speaker-threshold", o.eval.speaker_threshold, "pseudo-speaker cosine threshold")->group(g)->capture_default_str();
  app.add_option("--bootstrap-runs", o.eval.bootstrap_runs, "bootstrap replicates (0 = point estimates)")->group(g)->capture_default_str();
  app.add_option("--workers", o.eval.workers, "bootstrap threads (results do not depend on it)")->group(g);

  g = "Gradient check";
  app.add_option("--instances", o.instances, "random instances per loss kind")->group(g)->capture_default_str();
  app.add_option("--inject-fault", o.inject_fault, "")->group("")->check(CLI::IsMember({"none", "src", "protos"}));
}

inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Speaker-disentangled metric learning on a synthetic source/speaker corpus", "sdml"};
  Options o;
  o.eval.workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  add_options(app, o);
  auto* gen = app.add_subcommand("gen", "generate a synthetic corpus");
  auto* tr = app.add_subcommand("train", "train a source encoder");
  auto* ev = app.add_subcommand("eval", "score P-I..P-IV and the cross-task table");
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every loss kind");
  auto* sw = app.add_subcommand("sweep", "train and evaluate the K, lambda and c grids");
  for (auto* s : {gen, tr, ev, gc, sw}) s->fallthrough();
  app.require_subcommand(1);

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "sdml: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen(o, out);
    if (tr->parsed()) return cmd_train(o, out);
    if (ev->parsed()) return cmd_eval(o, out);
    if (gc->parsed()) return cmd_gradcheck(o, out);
    return cmd_sweep(o, out);
  } catch (const UsageError& e) {
    err << "sdml: usage: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "sdml: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ProtocolInfeasible& e) {
    err << "sdml: protocol infeasible: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ParseError& e) {
    err << "sdml: parse error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const TrainingDiverged& e) {
    err << "sdml: training diverged: " << e.what() << '\n';
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "sdml: " << e.what() << '\n';
    return kExitFailure;
  }
}

inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return run(std::vector<std::string>(argv + 1, argv + argc), out, err);
}

}  // namespace sdml::cli
