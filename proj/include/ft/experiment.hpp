#pragma once

// Experiment orchestration: named method grid, bundle persistence, per-seed
// runs with a shared frozen classifier, multi-seed aggregation and
// end-to-end gradient checks.
//
// A method is "<transfer>+<pooling>", e.g. "affine+atp" or "none+avgpool".
// For selfatt methods the transfer layer is composed after the encoder
// when the transfer kind is not "none".  Methods with kind "none" and a
// fixed pooling (avgpool / majvote) have nothing to train and evaluate the
// frozen classifier directly.
//
// Outputs are deterministic: every trained artifact is a pure function of
// (data bytes, classifier bytes, config, seed), files are written
// atomically, and reruns produce byte-identical directories.  Independent
// (method, seed) tasks may run in parallel; the worker count is capped by
// the FACETRANSFER_THREADS environment variable (default: hardware
// concurrency), and results never depend on scheduling order.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ft/data.hpp"
#include "ft/eval.hpp"
#include "ft/source.hpp"
#include "ft/training.hpp"

namespace ft {

struct MethodSpec {
  TransferKind kind = TransferKind::identity;
  Pooling pooling = Pooling::avgpool;

  std::string name() const;  // "<kind>+<pooling>", kind "identity" -> "none"
  static MethodSpec parse(const std::string& text);
  bool trains_nothing() const {
    return kind == TransferKind::identity &&
           (pooling == Pooling::avgpool || pooling == Pooling::majvote);
  }
};

// The splits an experiment consumes; ground truth is never required.
struct ExperimentData {
  ClassPartition partition;
  FeatureDataset train;
  FeatureDataset val;
  FeatureDataset test;
};

// Loads train.ftrs / val.ftrs / test.ftrs / partition.txt from `dir` and
// cross-validates every split against the partition.
ExperimentData load_experiment_data(const std::filesystem::path& dir);

struct ExperimentConfig {
  std::string data_dir;
  std::string out_dir;
  std::vector<std::string> methods = {"none+avgpool"};
  std::vector<std::uint64_t> seeds = {0};
  bool finetune_source = false;    // continue source SGD on target frames
  std::size_t finetune_epochs = 5;
  SourceTrainConfig source;
  TrainConfig transfer;

  void validate() const;
  std::string to_json() const;
  // Missing keys keep defaults; unknown keys are rejected.
  static ExperimentConfig from_json(const std::string& text);
};

// Trains the source classifier on the train split's images, optionally
// continues on the train split's track frames, and returns it frozen.
SourceClassifier run_train_source(const ExperimentData& data,
                                  const ExperimentConfig& config);

// One trained method for one seed, with everything needed to score tracks.
struct ModelBundle {
  MethodSpec method;
  std::uint64_t seed = 0;
  SourceClassifier classifier;
  TransferModel model;
};

// Directory layout: meta.json, classifier.wcls, tau.wtau and, depending on
// the pooling, attention.watp / encoder.wsat.
void save_bundle(const ModelBundle& bundle,
                 const std::filesystem::path& dir);
ModelBundle load_bundle(const std::filesystem::path& dir);

// Dispatches to the right trainer for the method's pooling.  The returned
// model uses the best validation epoch; methods with nothing to train
// return their deterministic initial parameters untouched.
TransferTrainResult train_method(const MethodSpec& method,
                                 const ExperimentData& data,
                                 const SourceClassifier& clf,
                                 const TrainConfig& config,
                                 std::uint64_t seed);

// Protocol report of a bundle over a split's tracks (truth taken from the
// tracks' own labels).
EvalReport evaluate_bundle(const ModelBundle& bundle,
                           const FeatureDataset& split,
                           const ClassPartition& partition);

struct SeedOutcome {
  ModelBundle bundle;
  TrainTrace trace;
  EvalReport test_report;
};

SeedOutcome run_seed(const MethodSpec& method, const ExperimentData& data,
                     const SourceClassifier& clf, const TrainConfig& config,
                     std::uint64_t seed);

struct MatrixResult {
  // Keyed by method name; seeds appear in config order.
  std::map<std::string, std::vector<SeedOutcome>> outcomes;
  std::vector<AggregateReport> aggregates;  // in config method order
  std::string table;                        // rendered summary
};

// Runs every (method, seed) pair; parallel workers are capped by
// FACETRANSFER_THREADS.
MatrixResult run_matrix(const ExperimentData& data,
                        const SourceClassifier& clf,
                        const ExperimentConfig& config);

// Persists a matrix run: <out>/<method>/seed-<s>/{meta.json, *.w*,
// trace.json, report.json}, plus aggregate.json and table.txt at the top.
void write_matrix_outputs(const MatrixResult& result,
                          const std::filesystem::path& out_dir);

// Finite-difference audit of every gradient path: the source objective,
// each transfer kind (parameters and input), attentive pooling, the
// self-attention encoder, and the joint training objectives; `points`
// random evaluation points per family.  Results come back in a fixed
// order; `pass` on every entry is the release gate.
std::vector<GradCheckResult> gradcheck_all(std::uint64_t seed = 0,
                                           std::size_t points = 10);

}  // namespace ft
