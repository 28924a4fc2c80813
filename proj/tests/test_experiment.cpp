#include "ft/experiment.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "doctest.h"
#include "ft/synthgen.hpp"

using ft::ExperimentConfig;
using ft::ExperimentData;
using ft::MethodSpec;
using ft::Pooling;
using ft::SourceClassifier;
using ft::TransferKind;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// A small but real benchmark: 3 seen / 1 val-extra / 2 unseen classes.
ExperimentData small_data() {
  ft::SynthSpec spec;
  spec.dim = 8;
  spec.seen_classes = 3;
  spec.val_extra_classes = 1;
  spec.unseen_classes = 2;
  spec.images_per_class = 10;
  spec.train_tracks_per_class = 6;
  spec.eval_tracks_per_class = 4;
  spec.min_frames = 3;
  spec.max_frames = 5;
  spec.sigma_video = 0.05;
  spec.corruption_rate = 0.2;
  spec.seed = 60;
  const ft::Benchmark b = ft::generate_benchmark(spec);
  return ExperimentData{b.partition, b.train, b.val, b.test};
}

ExperimentConfig small_config() {
  ExperimentConfig cfg;
  cfg.methods = {"none+avgpool", "affine+avgpool"};
  cfg.seeds = {0, 1};
  cfg.source.learning_rate = 0.05;
  cfg.source.max_epochs = 200;
  cfg.transfer.max_epochs = 40;
  return cfg;
}

struct Fixture {
  ExperimentData data = small_data();
  ExperimentConfig cfg = small_config();
  SourceClassifier clf;
  Fixture() { clf = ft::run_train_source(data, cfg); }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

}  // namespace

TEST_SUITE_BEGIN("experiment");

TEST_CASE("method names parse and print consistently") {
  for (const char* name :
       {"none+avgpool", "fc+avgpool", "affine+atp", "stacked+majvote",
        "rsa+selfatt", "none+atp"}) {
    const MethodSpec m = MethodSpec::parse(name);
    CHECK(m.name() == name);
  }
  const MethodSpec rsa_atp = MethodSpec::parse("rsa+atp");
  CHECK(rsa_atp.kind == TransferKind::residual_stacked_affine);
  CHECK(rsa_atp.pooling == Pooling::atp);
  CHECK(MethodSpec::parse("none+avgpool").trains_nothing());
  CHECK(MethodSpec::parse("none+majvote").trains_nothing());
  CHECK_FALSE(MethodSpec::parse("none+atp").trains_nothing());
  CHECK_FALSE(MethodSpec::parse("affine+avgpool").trains_nothing());

  CHECK_THROWS_AS(MethodSpec::parse("affine"), std::invalid_argument);
  CHECK_THROWS_AS(MethodSpec::parse("affine+warp"), std::invalid_argument);
  CHECK_THROWS_AS(MethodSpec::parse("conv+atp"), std::invalid_argument);
  CHECK_THROWS_AS(MethodSpec::parse("+atp"), std::invalid_argument);
}

TEST_CASE("experiment config JSON round-trips and rejects junk") {
  ExperimentConfig cfg;
  cfg.data_dir = "bench";
  cfg.out_dir = "results";
  cfg.methods = {"affine+atp", "rsa+selfatt"};
  cfg.seeds = {3, 4, 5};
  cfg.finetune_source = true;
  cfg.transfer.learning_rate = 0.001;
  cfg.transfer.atp_modes = 2;
  const ExperimentConfig back = ExperimentConfig::from_json(cfg.to_json());
  CHECK(back.to_json() == cfg.to_json());
  CHECK(back.transfer.learning_rate == 0.001);
  CHECK(back.transfer.atp_modes == 2);
  CHECK(back.finetune_source);

  const ExperimentConfig partial =
      ExperimentConfig::from_json(R"({"methods": ["fc+avgpool"]})");
  CHECK(partial.methods.size() == 1);
  CHECK(partial.seeds == std::vector<std::uint64_t>{0});
  CHECK(partial.transfer.learning_rate == 0.005);
  CHECK(partial.transfer.patience == 10);

  CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(R"({"methodz": []})"),
                       doctest::Contains("unknown"), std::invalid_argument);
  CHECK_THROWS_AS(
      ExperimentConfig::from_json(R"({"transfer": {"lr": 0.1}})"),
      std::invalid_argument);
  CHECK_THROWS_AS(ExperimentConfig::from_json(R"({"methods": []})"),
                  std::invalid_argument);
  CHECK_THROWS_AS(ExperimentConfig::from_json(R"({"seeds": [1, 1]})"),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      ExperimentConfig::from_json(R"({"methods": ["affine+warp"]})"),
      std::invalid_argument);
}

TEST_CASE("the trained source classifier is frozen and accurate") {
  const Fixture& f = fixture();
  CHECK(f.clf.frozen);
  CHECK(f.clf.class_count() == 6);
  CHECK(ft::image_accuracy(f.clf, f.data.train) >= 0.95);
}

TEST_CASE("untrainable baselines keep their identity parameters") {
  const Fixture& f = fixture();
  const auto outcome = ft::run_seed(MethodSpec::parse("none+avgpool"),
                                    f.data, f.clf, f.cfg.transfer, 7);
  CHECK(outcome.trace.epochs.empty());
  CHECK(outcome.bundle.model.tau.kind == TransferKind::identity);
  CHECK(outcome.test_report.method == "none+avgpool");
  CHECK(outcome.test_report.seed == 7);
  // baseline predictions equal direct argmax over the mean frame
  for (const ft::FaceTrack& t : f.data.test.tracks) {
    const ft::Vec scores = ft::score(f.clf, ft::avg_pool(t));
    std::size_t best = 0;
    for (std::size_t j = 1; j < scores.size(); ++j)
      if (scores[j] > scores[best]) best = j;
    CHECK(outcome.bundle.model.predict(t, f.clf) ==
          f.clf.class_order[best]);
  }
}

TEST_CASE("self-attention methods compose tau only with a real transfer") {
  const Fixture& f = fixture();
  ft::TrainConfig cfg = f.cfg.transfer;
  cfg.max_epochs = 0;
  cfg.key_dim = 8;
  cfg.ff_dim = 16;
  const auto composed = ft::train_method(MethodSpec::parse("affine+selfatt"),
                                         f.data, f.clf, cfg, 0);
  CHECK(composed.model.compose_tau);
  CHECK(composed.model.tau.kind == TransferKind::affine);
  const auto bare = ft::train_method(MethodSpec::parse("none+selfatt"),
                                     f.data, f.clf, cfg, 0);
  CHECK_FALSE(bare.model.compose_tau);
  CHECK(bare.model.tau.kind == TransferKind::identity);
  CHECK(bare.model.encoder.has_value());
}

TEST_CASE("the method matrix aggregates per-seed runs deterministically") {
  const Fixture& f = fixture();
  const ft::MatrixResult run1 = ft::run_matrix(f.data, f.clf, f.cfg);

  REQUIRE(run1.aggregates.size() == 2);
  CHECK(run1.aggregates[0].method == "none+avgpool");
  CHECK(run1.aggregates[1].method == "affine+avgpool");
  CHECK(run1.aggregates[1].runs == 2);
  CHECK(run1.outcomes.at("affine+avgpool").size() == 2);
  CHECK(run1.outcomes.at("affine+avgpool")[0].bundle.seed == 0);
  CHECK(run1.outcomes.at("affine+avgpool")[1].bundle.seed == 1);
  // adapting to the shift beats scoring raw video features
  CHECK(run1.aggregates[1].harmonic_mean_value >=
        run1.aggregates[0].harmonic_mean_value);
  CHECK(run1.table.find("none+avgpool") != std::string::npos);
  CHECK(run1.table.find("affine+avgpool") != std::string::npos);

  // a rerun — even single-threaded — reproduces every byte
  setenv("FACETRANSFER_THREADS", "1", 1);
  const ft::MatrixResult run2 = ft::run_matrix(f.data, f.clf, f.cfg);
  unsetenv("FACETRANSFER_THREADS");
  CHECK(run2.table == run1.table);
  REQUIRE(run2.aggregates.size() == run1.aggregates.size());
  for (std::size_t i = 0; i < run1.aggregates.size(); ++i)
    CHECK(run2.aggregates[i].to_json() == run1.aggregates[i].to_json());
  for (const auto& [name, outs] : run1.outcomes)
    for (std::size_t s = 0; s < outs.size(); ++s)
      CHECK(run2.outcomes.at(name)[s].test_report.to_json() ==
            outs[s].test_report.to_json());
}

TEST_CASE("matrix outputs land on disk and round-trip") {
  const Fixture& f = fixture();
  ExperimentConfig cfg = f.cfg;
  cfg.methods = {"affine+atp"};
  cfg.seeds = {0};
  cfg.transfer.max_epochs = 5;
  const ft::MatrixResult result = ft::run_matrix(f.data, f.clf, cfg);

  const auto dir1 = std::filesystem::temp_directory_path() / "ft-mx-1";
  const auto dir2 = std::filesystem::temp_directory_path() / "ft-mx-2";
  std::filesystem::remove_all(dir1);
  std::filesystem::remove_all(dir2);
  ft::write_matrix_outputs(result, dir1);
  ft::write_matrix_outputs(result, dir2);

  const auto seed_dir = dir1 / "affine+atp" / "seed-0";
  for (const char* name : {"meta.json", "classifier.wcls", "tau.wtau",
                           "attention.watp", "trace.json", "report.json"}) {
    CAPTURE(name);
    REQUIRE(std::filesystem::exists(seed_dir / name));
    CHECK(slurp(seed_dir / name) ==
          slurp(dir2 / "affine+atp" / "seed-0" / name));
  }
  CHECK(std::filesystem::exists(dir1 / "aggregate.json"));
  CHECK(std::filesystem::exists(dir1 / "table.txt"));
  CHECK(slurp(dir1 / "table.txt") == result.table);

  // bundles reload, re-save byte-identically, and still score tracks
  const ft::ModelBundle loaded = ft::load_bundle(seed_dir);
  CHECK(loaded.method.name() == "affine+atp");
  CHECK(loaded.seed == 0);
  CHECK(loaded.classifier.frozen);
  const auto dir3 = std::filesystem::temp_directory_path() / "ft-mx-3";
  std::filesystem::remove_all(dir3);
  ft::save_bundle(loaded, dir3);
  for (const char* name :
       {"meta.json", "classifier.wcls", "tau.wtau", "attention.watp"})
    CHECK(slurp(seed_dir / name) == slurp(dir3 / name));
  const ft::EvalReport report =
      ft::evaluate_bundle(loaded, f.data.test, f.data.partition);
  CHECK(report.method == "affine+atp");
  CHECK(report.partition_fingerprint == f.data.partition.fingerprint());
  std::filesystem::remove_all(dir1);
  std::filesystem::remove_all(dir2);
  std::filesystem::remove_all(dir3);
}

TEST_CASE("benchmark directories feed experiments directly") {
  ft::SynthSpec spec;
  spec.dim = 8;
  spec.seen_classes = 2;
  spec.val_extra_classes = 1;
  spec.unseen_classes = 1;
  spec.images_per_class = 4;
  spec.train_tracks_per_class = 2;
  spec.eval_tracks_per_class = 2;
  spec.min_frames = 3;
  spec.max_frames = 4;
  spec.seed = 61;
  const auto dir = std::filesystem::temp_directory_path() / "ft-exp-data";
  std::filesystem::remove_all(dir);
  ft::write_benchmark(ft::generate_benchmark(spec), dir);
  const ExperimentData data = ft::load_experiment_data(dir);
  CHECK(data.partition.classes.size() == 4);
  CHECK(data.train.images.size() == 16);
  CHECK(data.train.tracks.size() == 4);
  CHECK(data.val.tracks.size() == 6);
  CHECK(data.test.tracks.size() == 8);
  std::filesystem::remove_all(dir);
  CHECK_THROWS(ft::load_experiment_data(dir));
}

TEST_CASE("every analytic gradient in the system matches finite "
          "differences") {
  const auto results = ft::gradcheck_all(0, 3);
  // 1 source + 4 tau kinds x 2 + atp + encoder + 2 joint = 13 families
  CHECK(results.size() == 13 * 3);
  std::set<std::string> names;
  for (const auto& r : results) {
    CAPTURE(r.name);
    CAPTURE(r.rel_err);
    CAPTURE(r.detail);
    CHECK(r.pass);
    names.insert(r.name);
  }
  CHECK(names.size() == results.size());
}

TEST_SUITE_END();
