// Command-line front end: synthetic benchmark generation, source and
// transfer training, protocol evaluation, the method matrix and the
// gradient audit.  Every command is deterministic given its inputs.

#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ft/detail/bytes.hpp"
#include "ft/experiment.hpp"
#include "ft/synthgen.hpp"

namespace {

struct SynthArgs {
  std::string spec_path;
  std::string preset = "default";
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out_dir;
};

int run_synth(const SynthArgs& args) {
  ft::SynthSpec spec;
  if (!args.spec_path.empty() && args.preset != "default")
    throw std::invalid_argument("--spec and --preset are mutually exclusive");
  if (args.preset == "recovery") spec = ft::SynthSpec::recovery_preset();
  if (!args.spec_path.empty())
    spec = ft::SynthSpec::from_json(
        ft::detail::read_file_bytes(args.spec_path));
  if (args.seed_given) spec.seed = args.seed;
  const ft::Benchmark bench = ft::generate_benchmark(spec);
  ft::write_benchmark(bench, args.out_dir);
  std::printf("benchmark written to %s\n", args.out_dir.c_str());
  std::printf("  classes: %zu (%zu seen / %zu val-extra / %zu unseen)\n",
              spec.class_count(), spec.seen_classes, spec.val_extra_classes,
              spec.unseen_classes);
  std::printf("  train: %zu images, %zu tracks; val: %zu tracks; "
              "test: %zu tracks\n",
              bench.train.images.size(), bench.train.tracks.size(),
              bench.val.tracks.size(), bench.test.tracks.size());
  return 0;
}

int run_train_source_cmd(const std::string& data_dir,
                         const ft::ExperimentConfig& cfg,
                         const std::string& out_path) {
  const ft::ExperimentData data = ft::load_experiment_data(data_dir);
  const ft::SourceClassifier clf = ft::run_train_source(data, cfg);
  ft::save_classifier(clf, out_path);
  std::printf("classifier written to %s\n", out_path.c_str());
  std::printf("  dim %zu, %zu classes, train-image accuracy %.4f\n",
              clf.dim(), clf.class_count(),
              ft::image_accuracy(clf, data.train));
  return 0;
}

int run_train_transfer_cmd(const std::string& data_dir,
                           const std::string& clf_path,
                           const std::string& method_name,
                           std::uint64_t seed, const ft::TrainConfig& cfg,
                           const std::string& out_dir) {
  const ft::ExperimentData data = ft::load_experiment_data(data_dir);
  const ft::SourceClassifier clf = ft::load_classifier(clf_path);
  const ft::MethodSpec method = ft::MethodSpec::parse(method_name);
  const ft::SeedOutcome outcome =
      ft::run_seed(method, data, clf, cfg, seed);
  ft::save_bundle(outcome.bundle, out_dir);
  ft::write_trace(outcome.trace, std::filesystem::path(out_dir) /
                                     "trace.json");
  ft::detail::atomic_write_file(
      std::filesystem::path(out_dir) / "report.json",
      outcome.test_report.to_json());
  std::printf("bundle written to %s\n", out_dir.c_str());
  if (outcome.trace.best_epoch != 0)
    std::printf("  best val-h %.4f at epoch %zu (%s)\n",
                outcome.trace.best_val_h, outcome.trace.best_epoch,
                ft::stop_reason_name(outcome.trace.stop).c_str());
  std::printf("  test: seen %.4f, unseen %.4f, harmonic %.4f\n",
              outcome.test_report.seen_acc, outcome.test_report.unseen_acc,
              outcome.test_report.harmonic);
  return 0;
}

int run_eval_cmd(const std::string& data_dir, const std::string& bundle_dir,
                 const std::string& split, const std::string& out_path) {
  const ft::ExperimentData data = ft::load_experiment_data(data_dir);
  const ft::ModelBundle bundle = ft::load_bundle(bundle_dir);
  if (split == "val") {
    ft::TrackTruth truth;
    for (const ft::FaceTrack& t : data.val.tracks) truth[t.id] = t.class_id;
    const double h = ft::validation_harmonic(
        ft::predict_tracks(data.val.tracks, bundle.model,
                           bundle.classifier),
        truth, data.partition);
    std::printf("val-h %.4f\n", h);
    if (!out_path.empty())
      ft::detail::atomic_write_file(
          out_path, "{\n  \"val_h\": " + std::to_string(h) + "\n}\n");
    return 0;
  }
  const ft::EvalReport report =
      ft::evaluate_bundle(bundle, data.test, data.partition);
  std::printf("method %s seed %llu\n", report.method.c_str(),
              static_cast<unsigned long long>(report.seed));
  std::printf("  seen %.4f, unseen %.4f, harmonic %.4f\n", report.seen_acc,
              report.unseen_acc, report.harmonic);
  if (!out_path.empty()) {
    ft::detail::atomic_write_file(out_path, report.to_json());
    std::printf("report written to %s\n", out_path.c_str());
  }
  return 0;
}

int run_matrix_cmd(ft::ExperimentConfig cfg, const std::string& clf_path) {
  if (cfg.data_dir.empty())
    throw std::invalid_argument("matrix needs --data (or \"data\" in the "
                                "config file)");
  if (cfg.out_dir.empty())
    throw std::invalid_argument("matrix needs --out (or \"out\" in the "
                                "config file)");
  cfg.validate();
  const ft::ExperimentData data = ft::load_experiment_data(cfg.data_dir);
  const ft::SourceClassifier clf =
      clf_path.empty() ? ft::run_train_source(data, cfg)
                       : ft::load_classifier(clf_path);
  const ft::MatrixResult result = ft::run_matrix(data, clf, cfg);
  ft::write_matrix_outputs(result, cfg.out_dir);
  std::fputs(result.table.c_str(), stdout);
  std::printf("outputs written to %s\n", cfg.out_dir.c_str());
  return 0;
}

int run_gradcheck_cmd(std::uint64_t seed, std::size_t points) {
  const auto results = ft::gradcheck_all(seed, points);
  std::size_t failures = 0;
  for (const auto& r : results) {
    if (r.pass) {
      std::printf("[ok]   %-44s rel err %.3e\n", r.name.c_str(), r.rel_err);
    } else {
      ++failures;
      std::printf("[FAIL] %-44s rel err %.3e  %s\n", r.name.c_str(),
                  r.rel_err, r.detail.c_str());
    }
  }
  std::printf("%zu/%zu gradient checks passed\n", results.size() - failures,
              results.size());
  return failures == 0 ? 0 : 1;
}

void add_transfer_flags(CLI::App* cmd, ft::TrainConfig& cfg) {
  cmd->add_option("--learning-rate", cfg.learning_rate,
                  "SGD learning rate");
  cmd->add_option("--momentum", cfg.momentum, "SGD momentum");
  cmd->add_option("--batch-size", cfg.batch_size, "examples per batch");
  cmd->add_option("--epochs", cfg.max_epochs, "maximum training epochs");
  cmd->add_option("--lambda-tau", cfg.lambda_tau,
                  "L2 penalty on transfer-layer parameters");
  cmd->add_option("--lambda-attention", cfg.lambda_attention,
                  "L2 penalty on attention / encoder parameters");
  cmd->add_option("--dropout", cfg.dropout,
                  "inverted-dropout rate on the transfer input");
  cmd->add_option("--patience", cfg.patience,
                  "non-improving validation evaluations tolerated");
  cmd->add_option("--eval-every", cfg.eval_every,
                  "epochs between validation evaluations");
  cmd->add_option("--atp-modes", cfg.atp_modes, "attention modes K");
  cmd->add_option("--key-dim", cfg.key_dim, "self-attention key width");
  cmd->add_option("--ff-dim", cfg.ff_dim,
                  "self-attention feed-forward width");
  cmd->add_option("--heads", cfg.heads, "self-attention heads");
  cmd->add_option("--encoder-layers", cfg.encoder_layers,
                  "self-attention encoder depth");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "feature-space transfer of a still-image face classifier to video "
      "tracks, with a seen/unseen harmonic-mean protocol"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  auto* synth = app.add_subcommand(
      "synth", "generate a synthetic benchmark with known ground truth");
  synth->add_option("--spec", synth_args.spec_path,
                    "spec JSON file (defaults apply to missing keys)");
  synth->add_option("--preset", synth_args.preset,
                    "named preset: default or recovery")
      ->check(CLI::IsMember({"default", "recovery"}));
  auto* seed_opt =
      synth->add_option("--seed", synth_args.seed, "generation seed");
  synth->add_option("--out", synth_args.out_dir, "output directory")
      ->required();

  ft::ExperimentConfig source_cfg;
  std::string ts_data, ts_out;
  auto* tsrc = app.add_subcommand(
      "train-source", "train (and freeze) the still-image classifier");
  tsrc->add_option("--data", ts_data, "benchmark directory")->required();
  tsrc->add_option("--out", ts_out, "classifier output file")->required();
  tsrc->add_option("--learning-rate", source_cfg.source.learning_rate,
                   "SGD learning rate");
  tsrc->add_option("--momentum", source_cfg.source.momentum, "SGD momentum");
  tsrc->add_option("--batch-size", source_cfg.source.batch_size,
                   "images per batch");
  tsrc->add_option("--epochs", source_cfg.source.max_epochs,
                   "training epochs");
  tsrc->add_option("--lambda", source_cfg.source.lambda, "L2 penalty on W");
  tsrc->add_option("--seed", source_cfg.source.seed, "training seed");
  tsrc->add_flag("--finetune", source_cfg.finetune_source,
                 "continue on the train split's track frames");
  tsrc->add_option("--finetune-epochs", source_cfg.finetune_epochs,
                   "epochs of track-frame fine-tuning");

  std::string tt_data, tt_clf, tt_method = "affine+avgpool", tt_out;
  std::uint64_t tt_seed = 0;
  ft::TrainConfig tt_cfg;
  auto* ttr = app.add_subcommand(
      "train-transfer", "train one transfer method for one seed");
  ttr->add_option("--data", tt_data, "benchmark directory")->required();
  ttr->add_option("--classifier", tt_clf, "frozen classifier file")
      ->required();
  ttr->add_option("--method", tt_method,
                  "<transfer>+<pooling>, e.g. affine+atp");
  ttr->add_option("--seed", tt_seed, "training seed");
  ttr->add_option("--out", tt_out, "bundle output directory")->required();
  add_transfer_flags(ttr, tt_cfg);

  std::string ev_data, ev_bundle, ev_split = "test", ev_out;
  auto* ev = app.add_subcommand("eval",
                                "score a trained bundle on a split");
  ev->add_option("--data", ev_data, "benchmark directory")->required();
  ev->add_option("--bundle", ev_bundle, "bundle directory")->required();
  ev->add_option("--split", ev_split, "test or val")
      ->check(CLI::IsMember({"test", "val"}));
  ev->add_option("--out", ev_out, "report JSON output path");

  std::string mx_config, mx_clf;
  ft::ExperimentConfig mx_cfg;
  std::vector<std::string> mx_methods;
  std::vector<std::uint64_t> mx_seeds;
  std::string mx_data, mx_out;
  auto* mx = app.add_subcommand(
      "matrix", "run a method grid over several seeds and aggregate");
  mx->add_option("--config", mx_config, "experiment config JSON file");
  mx->add_option("--data", mx_data, "benchmark directory");
  mx->add_option("--out", mx_out, "output directory");
  mx->add_option("--classifier", mx_clf,
                 "frozen classifier file (trained in-process when absent)");
  mx->add_option("--methods", mx_methods, "methods to run")
      ->delimiter(',');
  mx->add_option("--seeds", mx_seeds, "training seeds")->delimiter(',');
  add_transfer_flags(mx, mx_cfg.transfer);

  std::uint64_t gc_seed = 0;
  std::size_t gc_points = 10;
  auto* gc = app.add_subcommand(
      "gradcheck", "audit every analytic gradient against finite "
                   "differences");
  gc->add_option("--seed", gc_seed, "evaluation-point seed");
  gc->add_option("--points", gc_points, "points per gradient family");

  try {
    app.parse(argc, argv);
    if (*synth) {
      synth_args.seed_given = seed_opt->count() > 0;
      return run_synth(synth_args);
    }
    if (*tsrc) return run_train_source_cmd(ts_data, source_cfg, ts_out);
    if (*ttr)
      return run_train_transfer_cmd(tt_data, tt_clf, tt_method, tt_seed,
                                    tt_cfg, tt_out);
    if (*ev) return run_eval_cmd(ev_data, ev_bundle, ev_split, ev_out);
    if (*mx) {
      ft::ExperimentConfig cfg;
      if (!mx_config.empty())
        cfg = ft::ExperimentConfig::from_json(
            ft::detail::read_file_bytes(mx_config));
      // flag overrides beat the config file
      if (mx->count("--data")) cfg.data_dir = mx_data;
      if (mx->count("--out")) cfg.out_dir = mx_out;
      if (mx->count("--methods")) cfg.methods = mx_methods;
      if (mx->count("--seeds")) cfg.seeds = mx_seeds;
      if (mx->count("--learning-rate"))
        cfg.transfer.learning_rate = mx_cfg.transfer.learning_rate;
      if (mx->count("--momentum"))
        cfg.transfer.momentum = mx_cfg.transfer.momentum;
      if (mx->count("--batch-size"))
        cfg.transfer.batch_size = mx_cfg.transfer.batch_size;
      if (mx->count("--epochs"))
        cfg.transfer.max_epochs = mx_cfg.transfer.max_epochs;
      if (mx->count("--lambda-tau"))
        cfg.transfer.lambda_tau = mx_cfg.transfer.lambda_tau;
      if (mx->count("--lambda-attention"))
        cfg.transfer.lambda_attention = mx_cfg.transfer.lambda_attention;
      if (mx->count("--dropout"))
        cfg.transfer.dropout = mx_cfg.transfer.dropout;
      if (mx->count("--patience"))
        cfg.transfer.patience = mx_cfg.transfer.patience;
      if (mx->count("--eval-every"))
        cfg.transfer.eval_every = mx_cfg.transfer.eval_every;
      if (mx->count("--atp-modes"))
        cfg.transfer.atp_modes = mx_cfg.transfer.atp_modes;
      if (mx->count("--key-dim"))
        cfg.transfer.key_dim = mx_cfg.transfer.key_dim;
      if (mx->count("--ff-dim"))
        cfg.transfer.ff_dim = mx_cfg.transfer.ff_dim;
      if (mx->count("--heads")) cfg.transfer.heads = mx_cfg.transfer.heads;
      if (mx->count("--encoder-layers"))
        cfg.transfer.encoder_layers = mx_cfg.transfer.encoder_layers;
      return run_matrix_cmd(std::move(cfg), mx_clf);
    }
    if (*gc) return run_gradcheck_cmd(gc_seed, gc_points);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
