#pragma once

// The source-domain classifier: a linear map W (d_x by number of classes)
// trained with softmax cross-entropy plus an L2 penalty on still-image
// features.  After source training (and optional fine-tuning on target
// video frames) the classifier is frozen; every transfer-phase trainer
// requires the frozen flag and never writes to W.  Scores are raw logits
// W^T x; column j corresponds to class_order[j].
//
// Checkpoint container (binary, little-endian, magic "WCLS"):
//   "WCLS" | version u16 (=1) | d_x u32 | class_count u32
//   | class ids u32 each | W float32 column-major | frozen u8

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ft/data.hpp"
#include "ft/numerics.hpp"
#include "ft/transfer.hpp"

namespace ft {

struct SourceClassifier {
  Matrix w;                          // d_x rows, one column per class
  std::vector<ClassId> class_order;  // column j scores class_order[j]
  bool frozen = false;

  std::size_t dim() const { return w.rows; }
  std::size_t class_count() const { return w.cols; }
  std::size_t column_of(ClassId id) const;  // throws for unknown ids

  // FNV-1a digest of the raw W bytes; lets callers assert that training
  // paths which promise not to touch W really leave it bit-identical.
  std::uint64_t weight_checksum() const;
};

struct SourceTrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 30;
  double lambda = 1e-4;  // L2 penalty weight on W
  std::uint64_t seed = 0;
};

// Mini-batch SGD (with momentum) on
//   mean cross_entropy(W^T x_i, y_i) + lambda * ||W||^2
// over the still images of `images`.  Every partition class needs at least
// one image.  W starts from Xavier init.  Returns an unfrozen classifier;
// epoch_losses (if given) receives the mean training loss per epoch.
SourceClassifier train_source_classifier(const FeatureDataset& images,
                                         const ClassPartition& partition,
                                         const SourceTrainConfig& config,
                                         std::vector<double>* epoch_losses
                                             = nullptr);

// Raw logits W^T x over all classes, in class_order.
Vec score(const SourceClassifier& clf, const Vec& features);

// Classifies every frame independently (optionally through a transfer
// layer) and returns the majority class.  Ties break toward the class with
// the highest softmax confidence summed across the track, then toward the
// lowest class id.
ClassId majority_vote_track(const FaceTrack& track,
                            const SourceClassifier& clf,
                            const TransferLayer* tau = nullptr);

// Continues classifier training, treating every frame of every track as a
// labeled still image.  Tracks must belong to seen or val-extra classes.
// Requires an unfrozen classifier; zero epochs returns W bit-identical.
SourceClassifier finetune_source_on_target_frames(
    SourceClassifier clf, const std::vector<FaceTrack>& tracks,
    const ClassPartition& partition, const SourceTrainConfig& config,
    std::vector<double>* epoch_losses = nullptr);

// Fraction of images whose argmax score matches their label.
double image_accuracy(const SourceClassifier& clf,
                      const FeatureDataset& images);

std::string encode_classifier(const SourceClassifier& clf);
SourceClassifier decode_classifier(const std::string& bytes);
void save_classifier(const SourceClassifier& clf,
                     const std::filesystem::path& path);
SourceClassifier load_classifier(const std::filesystem::path& path);

}  // namespace ft
