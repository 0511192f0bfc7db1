// Command-line driver: corpus generation, teacher pretraining, student
// distillation, evaluation and collapse diagnostics. Every command is
// config-driven and reproducible; rerunning with the same config and seed
// yields byte-identical numeric outputs.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "rdcd/config.hpp"
#include "rdcd/io.hpp"
#include "rdcd/pipeline.hpp"
#include "rdcd/trainer.hpp"

namespace fs = std::filesystem;
using namespace rdcd;

namespace {

// Exit-code contract: 0 ok, 2 config, 3 I/O, 4 missing artifact, 5 numeric.
int exit_code_for(const Error& e) {
  switch (e.code()) {
    case Errc::config_error:
      return 2;
    case Errc::io_error:
      return 3;
    case Errc::missing_artifact:
      return 4;
    default:
      return 5;
  }
}

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = 1;
  bool force = false;
};

RunConfig effective_config(const CommonArgs& args) {
  RunConfig cfg =
      args.config_path.empty() ? RunConfig{} : RunConfig::parse_file(args.config_path);
  if (args.seed_set) cfg.set_seed(args.seed);
  cfg.train.threads = args.threads;
  return cfg;
}

void add_common(CLI::App* cmd, CommonArgs& args, bool out_required = true) {
  cmd->add_option("--config", args.config_path, "run configuration file (key = value)");
  auto* seed = cmd->add_option("--seed", args.seed, "override the config seed");
  cmd->parse_complete_callback([&args, seed]() { args.seed_set = seed->count() > 0; });
  auto* out = cmd->add_option("--out", args.out_dir, "output directory");
  if (out_required) out->required();
  cmd->add_option("--threads", args.threads, "worker threads (results are thread-invariant)");
  cmd->add_flag("--force", args.force, "overwrite an existing experiment directory");
}

int finish_training(const fs::path& out, const EncoderParams& params, const TrainReport& report,
                    const RunConfig& cfg, const std::string& checkpoint_name) {
  save_checkpoint(out / checkpoint_name, params);
  save_train_report(out, report, cfg.serialize());
  if (report.aborted) {
    std::cerr << "numeric failure during training (flagged, outputs written): "
              << report.abort_reason << "\n";
    return 5;
  }
  std::cout << "wrote " << (out / checkpoint_name).string() << " (" << report.epochs.size()
            << " epochs, " << report.steps.size() << " steps)\n";
  return 0;
}

int run_gen_data(const CommonArgs& args) {
  RunConfig cfg = effective_config(args);
  CopyCorpus corpus = generate_corpus(cfg.data, cfg.seed);
  save_corpus(args.out_dir, corpus, cfg.serialize(), args.force);
  std::cout << "corpus written to " << args.out_dir << ": train=" << corpus.train.size()
            << " refs=" << corpus.references.size() << " queries=" << corpus.queries.size()
            << " background=" << corpus.background.size()
            << " twin-confusion=" << hn_confusion_rate(corpus) << "\n";
  return 0;
}

int run_train_teacher(const CommonArgs& args, const std::string& data_dir) {
  RunConfig cfg = effective_config(args);
  LoadedCorpus loaded = load_corpus(data_dir);
  prepare_out_dir(args.out_dir, "teacher.json", args.force);
  auto [teacher, report] = pretrain_teacher(loaded.corpus, cfg.train);
  return finish_training(args.out_dir, teacher, report, cfg, "teacher.json");
}

int run_distill(const CommonArgs& args, const std::string& data_dir,
                const std::string& teacher_path, const std::string& ablate,
                const std::string& loss_mode, const std::string& distill_mode) {
  RunConfig cfg = effective_config(args);
  if (!ablate.empty()) {
    if (ablate == "no-hn") {
      cfg.train.weights.lambda_hn = 0.0;
    } else if (ablate == "no-rel") {
      cfg.train.weights.lambda_rel = 0.0;
    } else if (ablate == "contrastive-only") {
      cfg.train.weights.lambda_rel = 0.0;
      cfg.train.weights.lambda_hn = 0.0;
    } else {
      fail(Errc::config_error, "--ablate must be no-hn, no-rel or contrastive-only");
    }
  }
  if (!loss_mode.empty()) {
    if (loss_mode == "literal-eq7")
      cfg.train.hn_mode = HnMode::literal;
    else if (loss_mode == "default")
      cfg.train.hn_mode = HnMode::hardest;
    else
      fail(Errc::config_error, "--loss-mode must be default or literal-eq7");
  }
  if (!distill_mode.empty()) {
    if (distill_mode == "rsd")
      cfg.train.distill_mode = DistillMode::rsd;
    else if (distill_mode == "fkd")
      cfg.train.distill_mode = DistillMode::fkd;
    else
      fail(Errc::config_error, "--distill-mode must be rsd or fkd");
  }

  LoadedCorpus loaded = load_corpus(data_dir);
  EncoderParams teacher = load_checkpoint(teacher_path);
  prepare_out_dir(args.out_dir, "student.json", args.force);
  auto [student, report] = distill_student(loaded.corpus, teacher, cfg.train);
  return finish_training(args.out_dir, student, report, cfg, "student.json");
}

EvalOptions eval_options(const RunConfig& cfg, const CommonArgs& args, const std::string& head,
                         std::size_t pca_dim, bool score_normalize) {
  EvalOptions opts;
  opts.top_k = cfg.eval.top_k;
  opts.sn_k = cfg.eval.sn_k;
  opts.sn_beta = cfg.eval.sn_beta;
  opts.spectrum_tol_rel = cfg.eval.spectrum_tol_rel;
  opts.threads = args.threads;
  opts.pca_dim = pca_dim;
  opts.score_normalize = score_normalize;
  if (head == "projector")
    opts.head = Head::projector;
  else if (head == "matcher")
    opts.head = Head::matcher;
  else
    fail(Errc::config_error, "--head must be projector or matcher");
  return opts;
}

nlohmann::json outcome_to_json(const EvalOutcome& outcome, const RunConfig& cfg,
                               const EvalOptions& opts) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["uap"] = outcome.uap;
  if (outcome.has_uap_sn) j["uap_sn"] = outcome.uap_sn;
  j["map"] = outcome.map;
  j["rpr"] = outcome.spectrum.rpr;
  j["mean_gap"] = outcome.gaps.mean;
  j["total_gt"] = outcome.total_gt;
  j["config_echo"] = cfg.serialize();
  j["options"] = {{"head", opts.head == Head::matcher ? "matcher" : "projector"},
                  {"top_k", opts.top_k},
                  {"pca_dim", opts.pca_dim},
                  {"score_normalize", opts.score_normalize},
                  {"sn_k", opts.sn_k},
                  {"sn_beta", opts.sn_beta},
                  {"spectrum_tol_rel", opts.spectrum_tol_rel}};
  return j;
}

int run_evaluate(const CommonArgs& args, const std::string& data_dir, const std::string& ckpt,
                 const std::string& head, std::size_t pca_dim, bool score_normalize) {
  RunConfig cfg = effective_config(args);
  LoadedCorpus loaded = load_corpus(data_dir);
  EncoderParams params = load_checkpoint(ckpt);
  EvalOptions opts = eval_options(cfg, args, head, pca_dim, score_normalize);

  prepare_out_dir(args.out_dir, "eval.json", args.force);
  EvalOutcome outcome = run_evaluation(params, loaded.corpus, opts);
  iodetail::write_text(fs::path(args.out_dir) / "eval.json",
                       outcome_to_json(outcome, cfg, opts).dump(2) + "\n");
  save_ranked_pairs_csv(fs::path(args.out_dir) / "ranked_pairs.csv", outcome.pairs);
  std::cout << "uap=" << outcome.uap;
  if (outcome.has_uap_sn) std::cout << " uap_sn=" << outcome.uap_sn;
  std::cout << " map=" << outcome.map << " rpr=" << outcome.spectrum.rpr
            << " mean_gap=" << outcome.gaps.mean << "\n";
  return 0;
}

int run_diagnose(const CommonArgs& args, const std::string& data_dir, const std::string& ckpt,
                 const std::string& head, std::size_t pca_dim) {
  RunConfig cfg = effective_config(args);
  LoadedCorpus loaded = load_corpus(data_dir);
  EncoderParams params = load_checkpoint(ckpt);
  EvalOptions opts = eval_options(cfg, args, head, pca_dim, /*score_normalize=*/false);

  prepare_out_dir(args.out_dir, "diagnose.json", args.force);
  EvalOutcome outcome = run_evaluation(params, loaded.corpus, opts);
  nlohmann::json j = outcome_to_json(outcome, cfg, opts);
  j["rank"] = outcome.spectrum.rank;
  j["gap_count"] = outcome.gaps.gaps.size();
  j["gap_skipped"] = outcome.gaps.skipped;
  iodetail::write_text(fs::path(args.out_dir) / "diagnose.json", j.dump(2) + "\n");
  save_spectrum_csv(fs::path(args.out_dir) / "spectrum.csv", outcome.spectrum);
  save_gap_histogram_csv(fs::path(args.out_dir) / "gap_hist.csv", outcome.gaps);
  std::cout << "rank=" << outcome.spectrum.rank << " rpr=" << outcome.spectrum.rpr
            << " mean_gap=" << outcome.gaps.mean << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale copy-detection distillation toolkit"};
  app.require_subcommand(1);
  int rc = 0;

  CommonArgs gen_args;
  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic copy corpus");
  add_common(gen, gen_args);
  gen->callback([&]() { rc = run_gen_data(gen_args); });

  CommonArgs teach_args;
  std::string teach_data;
  CLI::App* teach = app.add_subcommand("train-teacher", "pretrain the frozen teacher encoder");
  add_common(teach, teach_args);
  teach->add_option("--data", teach_data, "corpus directory")->required();
  teach->callback([&]() { rc = run_train_teacher(teach_args, teach_data); });

  CommonArgs dist_args;
  std::string dist_data, dist_teacher, dist_ablate, dist_loss_mode, dist_mode;
  CLI::App* dist = app.add_subcommand("distill", "train the student against a frozen teacher");
  add_common(dist, dist_args);
  dist->add_option("--data", dist_data, "corpus directory")->required();
  dist->add_option("--teacher", dist_teacher, "teacher checkpoint")->required();
  dist->add_option("--ablate", dist_ablate, "no-hn | no-rel | contrastive-only");
  dist->add_option("--loss-mode", dist_loss_mode, "default | literal-eq7");
  dist->add_option("--distill-mode", dist_mode, "rsd | fkd");
  dist->callback([&]() {
    rc = run_distill(dist_args, dist_data, dist_teacher, dist_ablate, dist_loss_mode, dist_mode);
  });

  CommonArgs eval_args;
  std::string eval_data, eval_ckpt, eval_head = "projector";
  std::size_t eval_pca = 0;
  bool eval_sn = false;
  CLI::App* eval = app.add_subcommand("evaluate", "descriptor search and retrieval metrics");
  add_common(eval, eval_args);
  eval->add_option("--data", eval_data, "corpus directory")->required();
  eval->add_option("--checkpoint", eval_ckpt, "encoder checkpoint")->required();
  eval->add_option("--head", eval_head, "projector | matcher");
  eval->add_option("--pca", eval_pca, "whiten to this dimension before search");
  eval->add_flag("--score-normalize", eval_sn, "also report background-normalized uap_sn");
  eval->callback(
      [&]() { rc = run_evaluate(eval_args, eval_data, eval_ckpt, eval_head, eval_pca, eval_sn); });

  CommonArgs diag_args;
  std::string diag_data, diag_ckpt, diag_head = "projector";
  std::size_t diag_pca = 0;
  CLI::App* diag = app.add_subcommand("diagnose", "collapse diagnostics (spectrum, gaps)");
  add_common(diag, diag_args);
  diag->add_option("--data", diag_data, "corpus directory")->required();
  diag->add_option("--checkpoint", diag_ckpt, "encoder checkpoint")->required();
  diag->add_option("--head", diag_head, "projector | matcher");
  diag->add_option("--pca", diag_pca, "whiten to this dimension before search");
  diag->callback([&]() { rc = run_diagnose(diag_args, diag_data, diag_ckpt, diag_head, diag_pca); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 5;
  }
  return rc;
}
