#pragma once

// Transfer-phase training: fits a transfer layer (and optionally a temporal
// aggregator) on labeled video tracks so that a frozen still-image
// classifier can score video, then early-stops on a validation harmonic.
//
// The trainable pieces depend on the pooling mode:
//   avgpool   mean frame -> tau -> W            trains tau
//   atp       attentive pooling -> tau -> W     trains tau and A jointly
//   selfatt   encoder + max -> [tau ->] W       trains the encoder (and tau
//                                               when compose_tau is set)
//   majvote   per frame: tau -> W, vote at      trains tau on frames as
//             prediction time                   independent examples
//
// The source classifier must be frozen and is never written to; its weight
// checksum is bit-identical before and after every trainer here.
//
// Batches are drawn by balanced sampling with replacement: first a uniform
// class among the classes that own at least one example, then a uniform
// example of that class.  One epoch is ceil(N / batch_size) batches, N the
// number of training examples (tracks, or frames for majvote).
//
// Initialization is deliberately conservative: tau starts at its identity
// parameters, attentive pooling starts at A = 0 (exactly average pooling)
// and the self-attention encoder starts at the passthrough configuration
// (exactly max pooling), so a run with max_epochs = 0 reproduces the
// untrained baseline bit for bit.
//
// Every random decision derives from TrainConfig::seed through named child
// streams, so a rerun with the same inputs is byte-identical.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ft/data.hpp"
#include "ft/eval.hpp"
#include "ft/numerics.hpp"
#include "ft/source.hpp"
#include "ft/temporal.hpp"
#include "ft/transfer.hpp"

namespace ft {

// How a face track is reduced to classifier scores.
enum class Pooling : std::uint8_t {
  avgpool = 0,
  atp = 1,
  selfatt = 2,
  majvote = 3,
};

std::string pooling_name(Pooling p);
Pooling parse_pooling(const std::string& name);

struct TrainConfig {
  double learning_rate = 0.005;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 60;
  double lambda_tau = 1e-4;        // L2 on transfer-layer parameters
  double lambda_attention = 1e-4;  // L2 on A / encoder parameters
  double dropout = 0.0;            // inverted dropout on tau's input
  std::size_t patience = 10;       // non-improving evaluations tolerated
  std::size_t eval_every = 1;      // epochs between validation evaluations
  std::uint64_t seed = 0;
  std::size_t atp_modes = 4;       // attention modes K
  std::size_t key_dim = 64;        // self-attention d_k
  std::size_t ff_dim = 256;        // self-attention feed-forward width
  std::size_t heads = 1;
  std::size_t encoder_layers = 1;
  bool compose_tau = false;  // selfatt: apply tau after the encoder
};

enum class StopReason : std::uint8_t {
  completed = 0,   // ran all max_epochs
  early_stop = 1,  // patience exhausted on the validation harmonic
};
std::string stop_reason_name(StopReason r);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  std::optional<double> val_h;
};

struct TrainTrace {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 0 when validation never ran
  double best_val_h = 0.0;
  StopReason stop = StopReason::completed;

  std::string to_json() const;
};

void write_trace(const TrainTrace& trace, const std::filesystem::path& path);

// A trained (or freshly initialized) transfer model: everything needed to
// score a track against a frozen source classifier.
struct TransferModel {
  Pooling pooling = Pooling::avgpool;
  TransferLayer tau;                            // identity kind when unused
  std::optional<AtpParams> attention;           // pooling == atp
  std::optional<SelfAttentionParams> encoder;   // pooling == selfatt
  bool compose_tau = false;                     // selfatt: tau after encoder

  // Pooled-and-transferred feature in the classifier's input space.  Not
  // defined for majvote, which has no single track embedding.
  Vec embed(const FaceTrack& track) const;

  // Predicted class: argmax of W^T embed for the pooled modes (first
  // column wins a tie), majority vote over frames for majvote.
  ClassId predict(const FaceTrack& track, const SourceClassifier& clf) const;
};

Predictions predict_tracks(const std::vector<FaceTrack>& tracks,
                           const TransferModel& model,
                           const SourceClassifier& clf);

// `count` indices drawn with replacement: a uniform class among classes
// owning at least one entry of `labels`, then a uniform entry.  A class
// with one example is sampled as often as a class with a hundred.
std::vector<std::size_t> balanced_sample(const std::vector<ClassId>& labels,
                                         std::size_t count, Rng& rng);

// Inverted dropout: zeroes each coordinate with probability `rate`, scales
// survivors by 1/(1-rate).  rate 0 draws nothing and leaves x untouched.
void apply_dropout(Vec& x, double rate, Rng& rng);

// Flat spans over the model's trainable scalars (tau blocks first, then
// attention / encoder blocks).  The spans alias live storage.
std::vector<std::span<double>> trainable_parameters(TransferModel& model);
std::vector<std::span<const double>> trainable_parameters(
    const TransferModel& model);

// The batch objective the trainers minimize: mean cross-entropy of the
// model's scores over `batch` (for majvote: over every frame of every
// batch track) plus the two L2 penalties.  When `grad` is non-null it
// receives the analytic gradient, flattened in trainable_parameters
// order.  No dropout is applied.
double transfer_objective(const TransferModel& model,
                          const SourceClassifier& clf,
                          const std::vector<const FaceTrack*>& batch,
                          double lambda_tau, double lambda_attention,
                          Vec* grad = nullptr);

struct TransferTrainResult {
  TransferModel model;  // parameters of the best validation epoch
  TrainTrace trace;
};

// Trains tau alone: on mean-pooled track features (avgpool) or on every
// frame as an independent example (majvote).
TransferTrainResult train_transfer(const FeatureDataset& train,
                                   const FeatureDataset* val,
                                   const SourceClassifier& clf,
                                   const ClassPartition& partition,
                                   TransferKind kind, Pooling pooling,
                                   const TrainConfig& config);

// Joint training of tau and the attentive-pooling matrix A.  With
// freeze_attention the matrix stays clamped at zero, which must reproduce
// the avgpool trajectory of train_transfer.
TransferTrainResult train_joint_atp(const FeatureDataset& train,
                                    const FeatureDataset* val,
                                    const SourceClassifier& clf,
                                    const ClassPartition& partition,
                                    TransferKind kind,
                                    const TrainConfig& config,
                                    bool freeze_attention = false);

// Joint training of the self-attention encoder, plus tau when
// config.compose_tau is set (kind is ignored otherwise).
TransferTrainResult train_joint_selfattention(const FeatureDataset& train,
                                              const FeatureDataset* val,
                                              const SourceClassifier& clf,
                                              const ClassPartition& partition,
                                              TransferKind kind,
                                              const TrainConfig& config);

}  // namespace ft
