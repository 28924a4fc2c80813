#include "ft/synthgen.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "doctest.h"
#include "ft/eval.hpp"

using ft::Benchmark;
using ft::ClassId;
using ft::FaceTrack;
using ft::GroundTruth;
using ft::Role;
using ft::SynthSpec;
using ft::Vec;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

double track_accuracy(const ft::FeatureDataset& ds, const GroundTruth& truth) {
  const auto preds = ft::oracle_predictions(ds, truth);
  std::size_t hits = 0;
  for (const FaceTrack& t : ds.tracks)
    if (preds.at(t.id) == t.class_id) ++hits;
  return double(hits) / double(ds.tracks.size());
}

}  // namespace

TEST_SUITE_BEGIN("synthgen");

TEST_CASE("the default benchmark has the protocol shape") {
  SynthSpec spec;
  spec.seed = 1;
  const Benchmark b = ft::generate_benchmark(spec);

  CHECK(b.partition.classes.size() == 20);
  CHECK(b.partition.count(Role::seen) == 10);
  CHECK(b.partition.count(Role::val_extra) == 4);
  CHECK(b.partition.count(Role::unseen) == 6);

  CHECK(b.train.images.size() == 20 * 30);
  CHECK(b.train.tracks.size() == 10 * 20);
  CHECK(b.val.images.empty());
  CHECK(b.val.tracks.size() == 14 * 10);
  CHECK(b.test.tracks.size() == 20 * 10);

  for (const ft::FeatureDataset* ds : {&b.train, &b.val, &b.test}) {
    CHECK(ds->dim == 32);
    CHECK(ft::validate_dataset(*ds, b.partition).ok());
    for (const FaceTrack& t : ds->tracks) {
      CHECK(t.frames.size() >= 5);
      CHECK(t.frames.size() <= 15);
      REQUIRE(b.truth.corruption.count(t.id) == 1);
      CHECK(b.truth.corruption.at(t.id).size() == t.frames.size());
    }
  }
  for (const FaceTrack& t : b.train.tracks)
    CHECK(b.partition.role_of(t.class_id) == Role::seen);
  for (const FaceTrack& t : b.val.tracks)
    CHECK(b.partition.role_of(t.class_id) != Role::unseen);
}

TEST_CASE("generation is a pure function of the spec") {
  SynthSpec spec;
  spec.seed = 77;
  const Benchmark a = ft::generate_benchmark(spec);
  const Benchmark b = ft::generate_benchmark(spec);
  CHECK(ft::encode_feature_file(a.train) == ft::encode_feature_file(b.train));
  CHECK(ft::encode_feature_file(a.val) == ft::encode_feature_file(b.val));
  CHECK(ft::encode_feature_file(a.test) == ft::encode_feature_file(b.test));
  CHECK(a.truth.to_json() == b.truth.to_json());
  CHECK(ft::encode_partition(a.partition) == ft::encode_partition(b.partition));

  spec.seed = 78;
  const Benchmark c = ft::generate_benchmark(spec);
  CHECK(ft::encode_feature_file(a.train) != ft::encode_feature_file(c.train));
}

TEST_CASE("every emitted feature is float32-exact") {
  SynthSpec spec;
  spec.seed = 5;
  spec.images_per_class = 3;
  spec.train_tracks_per_class = 2;
  spec.eval_tracks_per_class = 2;
  const Benchmark b = ft::generate_benchmark(spec);
  auto is_f32 = [](double v) {
    return v == static_cast<double>(static_cast<float>(v));
  };
  for (const auto& img : b.train.images)
    for (double v : img.features) CHECK(is_f32(v));
  for (const ft::FeatureDataset* ds : {&b.train, &b.val, &b.test})
    for (const FaceTrack& t : ds->tracks)
      for (const Vec& f : t.frames)
        for (double v : f) CHECK(is_f32(v));
  for (const auto& [id, p] : b.truth.prototypes)
    for (double v : p) CHECK(is_f32(v));
}

TEST_CASE("the noiseless limit collapses onto the shifted prototypes") {
  SynthSpec spec;
  spec.seed = 9;
  spec.sigma_image = 0.0;
  spec.sigma_video = 0.0;
  spec.corruption_rate = 0.0;
  spec.min_frames = spec.max_frames = 3;
  spec.images_per_class = 2;
  spec.train_tracks_per_class = 2;
  spec.eval_tracks_per_class = 1;
  const Benchmark b = ft::generate_benchmark(spec);

  for (const auto& img : b.train.images) {
    const Vec& proto = b.truth.prototypes.at(img.class_id);
    for (std::size_t i = 0; i < proto.size(); ++i)
      CHECK(img.features[i] == proto[i]);
  }
  for (const FaceTrack& t : b.test.tracks) {
    const Vec& proto = b.truth.prototypes.at(t.class_id);
    Vec center(proto.size());
    for (std::size_t i = 0; i < proto.size(); ++i) {
      center[i] = static_cast<double>(static_cast<float>(
          b.truth.alpha_star[i] * proto[i] + b.truth.beta_star[i]));
    }
    for (const Vec& frame : t.frames)
      for (std::size_t i = 0; i < frame.size(); ++i)
        CHECK(frame[i] == center[i]);
  }
}

TEST_CASE("the oracle saturates easy benchmarks") {
  const Benchmark recovery = ft::generate_benchmark([] {
    SynthSpec s = SynthSpec::recovery_preset();
    s.seed = 4;
    return s;
  }());
  CHECK(recovery.spec.sigma_video == 0.01);
  CHECK(recovery.spec.corruption_rate == 0.0);
  CHECK(track_accuracy(recovery.test, recovery.truth) == 1.0);
  CHECK(track_accuracy(recovery.val, recovery.truth) == 1.0);

  SynthSpec spec;  // half the frames corrupted
  spec.seed = 4;
  const Benchmark noisy = ft::generate_benchmark(spec);
  CHECK(track_accuracy(noisy.test, noisy.truth) >= 0.98);
}

TEST_CASE("full corruption still yields a prediction per track") {
  SynthSpec spec;
  spec.seed = 13;
  spec.corruption_rate = 1.0;
  spec.images_per_class = 2;
  spec.train_tracks_per_class = 2;
  spec.eval_tracks_per_class = 2;
  const Benchmark b = ft::generate_benchmark(spec);
  for (const auto& [id, flags] : b.truth.corruption)
    for (int f : flags) CHECK(f == 1);
  const auto preds = ft::oracle_predictions(b.test, b.truth);
  CHECK(preds.size() == b.test.tracks.size());
}

TEST_CASE("corruption frequency tracks the configured rate") {
  SynthSpec spec;
  spec.seed = 21;
  spec.corruption_rate = 0.3;
  const Benchmark b = ft::generate_benchmark(spec);
  std::size_t corrupted = 0, total = 0;
  for (const auto& [id, flags] : b.truth.corruption) {
    total += flags.size();
    for (int f : flags) corrupted += static_cast<std::size_t>(f);
  }
  const double rate = double(corrupted) / double(total);
  CHECK(rate >= 0.25);
  CHECK(rate <= 0.35);
}

TEST_CASE("spec JSON round-trips, fills defaults, rejects unknown keys") {
  SynthSpec spec;
  spec.dim = 16;
  spec.tanh_distortion = true;
  spec.seed = 3;
  const SynthSpec back = SynthSpec::from_json(spec.to_json());
  CHECK(back.to_json() == spec.to_json());

  const SynthSpec partial = SynthSpec::from_json(R"({"dim": 8})");
  CHECK(partial.dim == 8);
  CHECK(partial.seen_classes == 10);
  CHECK(partial.corruption_rate == 0.5);

  CHECK_THROWS_WITH_AS(SynthSpec::from_json(R"({"dims": 8})"),
                       doctest::Contains("unknown spec key"),
                       std::invalid_argument);
  CHECK_THROWS_AS(SynthSpec::from_json(R"({"min_frames": 0})"),
                  std::invalid_argument);
  CHECK_THROWS_AS(SynthSpec::from_json(R"({"corruption_rate": 1.5})"),
                  std::invalid_argument);
}

TEST_CASE("ground truth JSON round-trips") {
  SynthSpec spec;
  spec.seed = 31;
  spec.images_per_class = 2;
  spec.train_tracks_per_class = 2;
  spec.eval_tracks_per_class = 1;
  const Benchmark b = ft::generate_benchmark(spec);
  const GroundTruth back = GroundTruth::from_json(b.truth.to_json());
  CHECK(back.to_json() == b.truth.to_json());
  CHECK(back.alpha_star == b.truth.alpha_star);
  CHECK(back.prototypes == b.truth.prototypes);
  CHECK(back.corruption == b.truth.corruption);
}

TEST_CASE("benchmark directories round-trip byte for byte") {
  SynthSpec spec;
  spec.seed = 55;
  spec.images_per_class = 3;
  spec.train_tracks_per_class = 2;
  spec.eval_tracks_per_class = 2;
  const Benchmark b = ft::generate_benchmark(spec);

  const auto dir1 = std::filesystem::temp_directory_path() / "ft-synth-1";
  const auto dir2 = std::filesystem::temp_directory_path() / "ft-synth-2";
  std::filesystem::remove_all(dir1);
  std::filesystem::remove_all(dir2);
  ft::write_benchmark(b, dir1);
  const Benchmark back = ft::read_benchmark(dir1);
  ft::write_benchmark(back, dir2);

  for (const char* name : {"train.ftrs", "val.ftrs", "test.ftrs",
                           "partition.txt", "ground_truth.json",
                           "spec.json"})
    CHECK(slurp(dir1 / name) == slurp(dir2 / name));
  CHECK(back.partition.fingerprint() == b.partition.fingerprint());
  std::filesystem::remove_all(dir1);
  std::filesystem::remove_all(dir2);
}

TEST_SUITE_END();
