#pragma once

// Scoring protocol for partially-supervised transfer.
//
// Accuracy is always averaged per class first, so heavily represented
// people cannot mask failures on rare ones.  The headline metric is the
// harmonic mean
//     h(a, b) = 2ab / (a + b)        (defined as 0 when a + b == 0)
// of the mean per-class accuracy over seen-role classes and over
// unseen-role classes, computed over predictions that scored the *full*
// label space.  A predictor that only ever answers with seen classes earns
// unseen accuracy 0 and therefore h = 0; a declared restriction of the
// label space is rejected outright.
//
// Validation during training uses the same machinery with val-extra-role
// classes standing in for the unseen group (their videos are never used
// for gradient steps, so they behave like unseen people at val time).
//
// Report JSON:
//   {"method": ..., "seed": ..., "seen_acc": ..., "unseen_acc": ...,
//    "harmonic": ..., "per_class": {"<id>": acc, ...},
//    "excluded_classes": [ids with no scored tracks]}

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ft/data.hpp"

namespace ft {

// track id -> predicted / true class
using Predictions = std::map<std::string, ClassId>;
using TrackTruth = std::map<std::string, ClassId>;

double harmonic_mean(double a, double b);

// Per-class accuracy over the classes present in `truth`.  Every predicted
// track must carry a truth label and a class known to the partition.
std::map<ClassId, double> per_class_accuracy(const Predictions& preds,
                                             const TrackTruth& truth,
                                             const ClassPartition& partition);

struct EvalReport {
  std::string method;
  std::uint64_t seed = 0;
  double seen_acc = 0.0;    // mean per-class accuracy, seen-role classes
  double unseen_acc = 0.0;  // mean per-class accuracy, unseen-role classes
  double harmonic = 0.0;
  std::map<ClassId, double> per_class;
  std::map<ClassId, std::size_t> class_counts;  // scored tracks per class
  std::vector<ClassId> excluded_classes;  // seen/unseen classes w/o tracks
  std::uint64_t partition_fingerprint = 0;

  std::string to_json() const;
  static EvalReport from_json(const std::string& text);
};

// Full protocol over a scored test split.  `label_space`, when given, must
// cover every partition class: scoring a deliberately restricted label
// space is not a valid run.  Classes of seen/unseen role with zero tracks
// in `truth` are excluded from their group mean and listed in the report.
EvalReport gzsl_report(const Predictions& preds, const TrackTruth& truth,
                       const ClassPartition& partition,
                       const std::optional<std::vector<ClassId>>& label_space
                           = std::nullopt);

/// Validation-time harmonic: seen-role vs val-extra-role group means over a
// validation split.  Degenerates to the single present group's mean when
// the other group has no tracks.
double validation_harmonic(const Predictions& preds, const TrackTruth& truth,
                           const ClassPartition& partition);

struct AggregateReport {
  std::string method;
  std::size_t runs = 0;
  double seen_mean = 0.0, seen_std = 0.0;
  double unseen_mean = 0.0, unseen_std = 0.0;
  double harmonic_mean_value = 0.0, harmonic_std = 0.0;
  bool degenerate = false;  // single run: stds are zero by convention

  std::string to_json() const;
};

// Mean and sample standard deviation (n-1) across per-seed reports.  All
// reports must share one method string and one partition fingerprint.
AggregateReport multi_seed_aggregate(const std::vector<EvalReport>& reports);

// Fixed-width text table, one row per aggregated method, accuracies in
// percent with one decimal.
struct TableRow {
  std::string label;
  double seen = 0.0, unseen = 0.0, harmonic = 0.0;
  std::optional<double> val_h;
};
std::string render_table(const std::vector<TableRow>& rows);

}  // namespace ft
