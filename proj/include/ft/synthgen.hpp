#pragma once

// Synthetic clean-to-degraded benchmark generator with known ground truth.
//
// World model: every class owns a prototype on the unit sphere of R^dim.
// Still images are the prototype plus isotropic Gaussian noise
// (sigma_image).  Video frames live in a shifted feature space: a fixed
// elementwise affine map g(x) = alpha* .* x + beta* (optionally followed
// by tanh) moves the prototype, and clean frames scatter around g(proto)
// with sigma_video noise.  With probability corruption_rate a frame is
// degraded instead: it collapses toward the global mean of the shifted
// prototypes,
//     (1 - lambda) * g(proto) + lambda * mean_shifted_proto + noise,
// with lambda ~ U(0.7, 1) and noise scale 3 * sigma_video — a stand-in
// for frames where identity evidence is mostly destroyed.
//
// Splits follow the partial-supervision protocol: still images cover every
// class (train split), labeled tracks exist only for seen-role classes
// (train split), the validation split holds tracks of seen and val-extra
// classes, and the test split holds tracks of every class.
//
// All emitted features are quantized to float32 at generation time, so
// in-memory data and the serialized containers agree bit for bit.
// Generation is a pure function of the spec (including its seed).

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ft/data.hpp"
#include "ft/eval.hpp"
#include "ft/numerics.hpp"

namespace ft {

struct SynthSpec {
  std::size_t dim = 32;
  std::size_t seen_classes = 10;
  std::size_t val_extra_classes = 4;
  std::size_t unseen_classes = 6;
  std::size_t images_per_class = 30;
  std::size_t train_tracks_per_class = 20;  // seen classes only
  std::size_t eval_tracks_per_class = 10;   // val and test splits
  std::size_t min_frames = 5;
  std::size_t max_frames = 15;
  double sigma_image = 0.05;
  double sigma_video = 0.1;
  double corruption_rate = 0.5;  // per-frame degradation probability
  double alpha_min = 0.5;
  double alpha_max = 1.5;
  double beta_min = -0.5;
  double beta_max = 0.5;
  bool tanh_distortion = false;  // squash g through tanh
  std::uint64_t seed = 0;

  // Nearly noiseless, corruption-free variant for map-recovery studies.
  static SynthSpec recovery_preset();

  std::size_t class_count() const {
    return seen_classes + val_extra_classes + unseen_classes;
  }

  void validate() const;
  std::string to_json() const;
  // Unknown keys are rejected; missing keys keep their defaults.
  static SynthSpec from_json(const std::string& text);
};

// Everything the generator knows that a model must rediscover.
struct GroundTruth {
  Vec alpha_star;
  Vec beta_star;
  bool tanh_distortion = false;
  std::map<ClassId, Vec> prototypes;
  // Per-frame degradation flags (0 clean, 1 corrupted) for every track.
  std::map<std::string, std::vector<int>> corruption;

  std::string to_json() const;
  static GroundTruth from_json(const std::string& text);
};

struct Benchmark {
  SynthSpec spec;
  ClassPartition partition;
  FeatureDataset train;
  FeatureDataset val;
  FeatureDataset test;
  GroundTruth truth;
};

Benchmark generate_benchmark(const SynthSpec& spec);

// Cheating predictor: nearest shifted prototype of the mean over a track's
// clean frames (all frames when none are clean).  Calibrates the ceiling
// any learned model could reach.
Predictions oracle_predictions(const FeatureDataset& ds,
                               const GroundTruth& truth);

// Writes train.ftrs / val.ftrs / test.ftrs / partition.txt /
// ground_truth.json / spec.json into `dir` (created if needed).
void write_benchmark(const Benchmark& bench,
                     const std::filesystem::path& dir);
Benchmark read_benchmark(const std::filesystem::path& dir);

}  // namespace ft
