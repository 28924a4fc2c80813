#include "ft/training.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <utility>

#include "ft/detail/bytes.hpp"
#include "json.hpp"

namespace ft {

namespace {

// Gradient storage shaped exactly like a model's trainable pieces.
struct GradAccum {
  TransferLayer tau;
  std::optional<AtpParams> attention;
  std::optional<SelfAttentionParams> encoder;
};

void zero_blocks(std::vector<std::span<double>> blocks) {
  for (auto& b : blocks) std::fill(b.begin(), b.end(), 0.0);
}

GradAccum zero_like(const TransferModel& model) {
  GradAccum g;
  g.tau = model.tau;
  zero_blocks(g.tau.param_blocks());
  if (model.attention)
    g.attention =
        AtpParams::zeros(model.attention->dim(), model.attention->modes());
  if (model.encoder) {
    g.encoder = *model.encoder;
    zero_blocks(g.encoder->param_blocks());
  }
  return g;
}

void zero(GradAccum& g) {
  zero_blocks(g.tau.param_blocks());
  if (g.attention) std::fill(g.attention->a.data.begin(),
                             g.attention->a.data.end(), 0.0);
  if (g.encoder) zero_blocks(g.encoder->param_blocks());
}

// dst += scale * src, block by block.
void axpy_blocks(const std::vector<std::span<const double>>& src,
                 std::vector<std::span<double>> dst, double scale = 1.0) {
  for (std::size_t b = 0; b < src.size(); ++b)
    for (std::size_t i = 0; i < src[b].size(); ++i)
      dst[b][i] += scale * src[b][i];
}

std::vector<std::span<const double>> const_blocks(const TransferLayer& tau) {
  return tau.param_blocks();
}

bool uses_tau(const TransferModel& m) {
  return m.pooling != Pooling::selfatt || m.compose_tau;
}

// Loss contribution of one example (a track, or a single-frame track for
// majvote) and, when `g` is given, its gradient accumulated into `g`.
// `weight` is the example's share of the batch mean.  Dropout draws happen
// iff `drop_rng` is non-null and rate > 0, in example order.
double example_backward(const FaceTrack& track, std::size_t label_col,
                        const TransferModel& m, const SourceClassifier& clf,
                        double weight, double rate, Rng* drop_rng,
                        GradAccum* g) {
  Vec pooled;
  switch (m.pooling) {
    case Pooling::avgpool:
    case Pooling::majvote:
      pooled = avg_pool(track);
      break;
    case Pooling::atp:
      pooled = atp_pool(track, *m.attention);
      break;
    case Pooling::selfatt:
      pooled = self_attention_encode(track, *m.encoder);
      break;
  }

  Vec mask;  // empty means no dropout this example
  Vec psi = pooled;
  if (drop_rng != nullptr && rate > 0.0) {
    const double keep = 1.0 - rate;
    mask.resize(psi.size());
    for (std::size_t i = 0; i < psi.size(); ++i) {
      mask[i] = drop_rng->uniform() < rate ? 0.0 : 1.0 / keep;
      psi[i] *= mask[i];
    }
  }

  const bool tau_on = uses_tau(m);
  const Vec z = tau_on ? tau_forward(m.tau, psi) : psi;
  const Vec scores = matvec_transposed(clf.w, z);
  const double loss = weight * cross_entropy(scores, label_col);
  if (g == nullptr) return loss;

  Vec upstream = cross_entropy_grad(scores, label_col);
  for (double& u : upstream) u *= weight;
  Vec dz = matvec(clf.w, upstream);

  Vec dpsi;
  if (tau_on) {
    TauGrad tg = tau_backward(m.tau, psi, dz);
    axpy_blocks(const_blocks(tg.params), g->tau.param_blocks());
    dpsi = std::move(tg.psi);
  } else {
    dpsi = std::move(dz);
  }
  if (!mask.empty())
    for (std::size_t i = 0; i < dpsi.size(); ++i) dpsi[i] *= mask[i];

  switch (m.pooling) {
    case Pooling::atp: {
      const Matrix da = atp_backward(track, *m.attention, dpsi);
      for (std::size_t i = 0; i < da.data.size(); ++i)
        g->attention->a.data[i] += da.data[i];
      break;
    }
    case Pooling::selfatt: {
      const SelfAttentionParams ge =
          self_attention_backward(track, *m.encoder, dpsi);
      axpy_blocks(ge.param_blocks(), g->encoder->param_blocks());
      break;
    }
    default:
      break;  // frames are data below the pooled feature
  }
  return loss;
}

std::vector<std::span<const double>> attention_blocks(
    const TransferModel& m) {
  std::vector<std::span<const double>> out;
  if (m.attention)
    out.push_back(std::span<const double>(m.attention->a.data));
  if (m.encoder)
    for (auto s : m.encoder->param_blocks()) out.push_back(s);
  return out;
}

// Mean example loss over the batch plus both L2 penalties; gradients (data
// term and penalties) land in `g` when given.
double batch_objective(const TransferModel& m, const SourceClassifier& clf,
                       const std::vector<const FaceTrack*>& batch,
                       const std::vector<std::size_t>& label_cols,
                       double lambda_tau, double lambda_attention,
                       double rate, Rng* drop_rng, GradAccum* g) {
  if (batch.empty())
    throw std::invalid_argument("transfer objective needs a non-empty batch");
  double loss = 0.0;
  const double weight = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i)
    loss += example_backward(*batch[i], label_cols[i], m, clf, weight, rate,
                             drop_rng, g);

  loss += l2_penalty(const_blocks(m.tau), lambda_tau);
  loss += l2_penalty(attention_blocks(m), lambda_attention);
  if (g != nullptr) {
    axpy_blocks(const_blocks(m.tau), g->tau.param_blocks(),
                2.0 * lambda_tau);
    if (m.attention)
      for (std::size_t i = 0; i < m.attention->a.data.size(); ++i)
        g->attention->a.data[i] += 2.0 * lambda_attention *
                                   m.attention->a.data[i];
    if (m.encoder)
      axpy_blocks(m.encoder->param_blocks(), g->encoder->param_blocks(),
                  2.0 * lambda_attention);
  }
  return loss;
}

// Spans over the scalars the optimizer may move, with matching gradient
// spans.  freeze_attention clamps the attentive-pooling matrix.
struct ParamRefs {
  std::vector<std::span<double>> params;
  std::vector<std::span<double>> grads;
  std::size_t total = 0;
};

ParamRefs make_refs(TransferModel& m, GradAccum& g, bool freeze_attention) {
  ParamRefs r;
  for (auto s : m.tau.param_blocks()) r.params.push_back(s);
  for (auto s : g.tau.param_blocks()) r.grads.push_back(s);
  if (m.attention && !freeze_attention) {
    r.params.push_back(std::span<double>(m.attention->a.data));
    r.grads.push_back(std::span<double>(g.attention->a.data));
  }
  if (m.encoder) {
    for (auto s : m.encoder->param_blocks()) r.params.push_back(s);
    for (auto s : g.encoder->param_blocks()) r.grads.push_back(s);
  }
  for (const auto& s : r.params) r.total += s.size();
  return r;
}

void check_config(const TrainConfig& cfg) {
  if (cfg.batch_size == 0)
    throw std::invalid_argument("batch_size must be at least 1");
  if (cfg.eval_every == 0)
    throw std::invalid_argument("eval_every must be at least 1");
  if (cfg.dropout < 0.0 || cfg.dropout >= 1.0)
    throw std::invalid_argument("dropout rate must lie in [0, 1)");
  if (!(cfg.learning_rate >= 0.0) || !(cfg.momentum >= 0.0) ||
      cfg.momentum >= 1.0)
    throw std::invalid_argument(
        "learning_rate must be >= 0 and momentum in [0, 1)");
}

void check_inputs(const FeatureDataset& train, const SourceClassifier& clf,
                  const ClassPartition& partition) {
  if (!clf.frozen)
    throw std::invalid_argument(
        "transfer training requires a frozen source classifier");
  if (train.dim != clf.dim())
    throw std::invalid_argument(
        "training features have dimensionality " +
        std::to_string(train.dim) + " but the classifier expects " +
        std::to_string(clf.dim()));
  if (train.tracks.empty())
    throw std::invalid_argument(
        "transfer training needs at least one labeled track");
  for (const FaceTrack& t : train.tracks)
    if (partition.role_of(t.class_id) == Role::unseen)
      throw std::invalid_argument(
          "track '" + t.id +
          "' belongs to an unseen-role class and cannot be trained on");
}

TransferTrainResult run_training(const FeatureDataset& train,
                                 const FeatureDataset* val,
                                 const SourceClassifier& clf,
                                 const ClassPartition& partition,
                                 TransferModel model, const TrainConfig& cfg,
                                 bool freeze_attention) {
  check_config(cfg);
  check_inputs(train, clf, partition);

  // Example pool: tracks, or every frame as a single-frame track.
  std::vector<FaceTrack> frame_storage;
  std::vector<const FaceTrack*> examples;
  if (model.pooling == Pooling::majvote) {
    std::size_t frames = 0;
    for (const FaceTrack& t : train.tracks) frames += t.frames.size();
    frame_storage.reserve(frames);
    for (const FaceTrack& t : train.tracks)
      for (const Vec& f : t.frames)
        frame_storage.push_back(FaceTrack{t.id, t.class_id, {f}});
    for (const FaceTrack& t : frame_storage) examples.push_back(&t);
  } else {
    for (const FaceTrack& t : train.tracks) examples.push_back(&t);
  }
  std::vector<ClassId> labels;
  std::vector<std::size_t> label_cols;
  labels.reserve(examples.size());
  label_cols.reserve(examples.size());
  for (const FaceTrack* e : examples) {
    labels.push_back(e->class_id);
    label_cols.push_back(clf.column_of(e->class_id));
  }

  const bool has_val = val != nullptr && !val->tracks.empty();
  TrackTruth val_truth;
  if (has_val)
    for (const FaceTrack& t : val->tracks) val_truth[t.id] = t.class_id;

  Rng root(cfg.seed);
  Rng sample_rng = root.child(1);
  Rng dropout_rng = root.child(2);

  const std::size_t steps =
      (examples.size() + cfg.batch_size - 1) / cfg.batch_size;

  GradAccum grad = zero_like(model);
  ParamRefs refs = make_refs(model, grad, freeze_attention);
  Vec velocity(refs.total, 0.0);

  TrainTrace trace;
  std::optional<TransferModel> best;
  std::size_t since_best = 0;
  bool stop_early = false;

  std::vector<const FaceTrack*> batch(cfg.batch_size);
  std::vector<std::size_t> batch_cols(cfg.batch_size);

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs && !stop_early;
       ++epoch) {
    double loss_sum = 0.0;
    for (std::size_t step = 0; step < steps; ++step) {
      const std::vector<std::size_t> picks =
          balanced_sample(labels, cfg.batch_size, sample_rng);
      for (std::size_t i = 0; i < picks.size(); ++i) {
        batch[i] = examples[picks[i]];
        batch_cols[i] = label_cols[picks[i]];
      }
      zero(grad);
      loss_sum += batch_objective(model, clf, batch, batch_cols,
                                  cfg.lambda_tau, cfg.lambda_attention,
                                  cfg.dropout, &dropout_rng, &grad);
      std::size_t off = 0;
      for (std::size_t b = 0; b < refs.params.size(); ++b) {
        auto p = refs.params[b];
        auto gb = refs.grads[b];
        for (std::size_t i = 0; i < p.size(); ++i, ++off) {
          velocity[off] = cfg.momentum * velocity[off] -
                          cfg.learning_rate * gb[i];
          p[i] += velocity[off];
        }
      }
    }
    const double epoch_loss = loss_sum / static_cast<double>(steps);
    if (!std::isfinite(epoch_loss))
      throw std::runtime_error(
          "transfer training diverged (non-finite loss at epoch " +
          std::to_string(epoch) + "); lower the learning rate");

    EpochRecord rec{epoch, epoch_loss, std::nullopt};
    if (has_val && epoch % cfg.eval_every == 0) {
      const Predictions preds = predict_tracks(val->tracks, model, clf);
      const double h = validation_harmonic(preds, val_truth, partition);
      rec.val_h = h;
      if (trace.best_epoch == 0 || h > trace.best_val_h) {
        trace.best_epoch = epoch;
        trace.best_val_h = h;
        best = model;
        since_best = 0;
      } else if (++since_best >= cfg.patience) {
        stop_early = true;
        trace.stop = StopReason::early_stop;
      }
    }
    trace.epochs.push_back(rec);
  }

  TransferTrainResult result;
  result.model = best.has_value() ? std::move(*best) : std::move(model);
  result.trace = std::move(trace);
  return result;
}

}  // namespace

std::string pooling_name(Pooling p) {
  switch (p) {
    case Pooling::avgpool: return "avgpool";
    case Pooling::atp: return "atp";
    case Pooling::selfatt: return "selfatt";
    case Pooling::majvote: return "majvote";
  }
  throw std::invalid_argument("unknown pooling value");
}

Pooling parse_pooling(const std::string& name) {
  if (name == "avgpool") return Pooling::avgpool;
  if (name == "atp") return Pooling::atp;
  if (name == "selfatt") return Pooling::selfatt;
  if (name == "majvote") return Pooling::majvote;
  throw std::invalid_argument("unknown pooling '" + name +
                              "' (expected avgpool, atp, selfatt or "
                              "majvote)");
}

std::string stop_reason_name(StopReason r) {
  switch (r) {
    case StopReason::completed: return "completed";
    case StopReason::early_stop: return "early_stop";
  }
  throw std::invalid_argument("unknown stop reason");
}

std::string TrainTrace::to_json() const {
  nlohmann::ordered_json j;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const EpochRecord& r : epochs) {
    nlohmann::ordered_json row;
    row["epoch"] = r.epoch;
    row["train_loss"] = r.train_loss;
    if (r.val_h.has_value()) row["val_h"] = *r.val_h;
    rows.push_back(row);
  }
  j["epochs"] = rows;
  j["best_epoch"] = best_epoch;
  j["best_val_h"] = best_val_h;
  j["stop"] = stop_reason_name(stop);
  return j.dump(2) + "\n";
}

void write_trace(const TrainTrace& trace,
                 const std::filesystem::path& path) {
  detail::atomic_write_file(path, trace.to_json());
}

Vec TransferModel::embed(const FaceTrack& track) const {
  switch (pooling) {
    case Pooling::avgpool:
      return tau_forward(tau, avg_pool(track));
    case Pooling::atp:
      if (!attention.has_value())
        throw std::logic_error("attentive model carries no attention matrix");
      return tau_forward(tau, atp_pool(track, *attention));
    case Pooling::selfatt: {
      if (!encoder.has_value())
        throw std::logic_error("self-attention model carries no encoder");
      Vec e = self_attention_encode(track, *encoder);
      return compose_tau ? tau_forward(tau, e) : e;
    }
    case Pooling::majvote:
      throw std::logic_error(
          "majority voting has no single track embedding");
  }
  throw std::logic_error("unknown pooling value");
}

ClassId TransferModel::predict(const FaceTrack& track,
                               const SourceClassifier& clf) const {
  if (pooling == Pooling::majvote)
    return majority_vote_track(track, clf, &tau);
  const Vec scores = score(clf, embed(track));
  std::size_t best = 0;
  for (std::size_t j = 1; j < scores.size(); ++j)
    if (scores[j] > scores[best]) best = j;
  return clf.class_order[best];
}

Predictions predict_tracks(const std::vector<FaceTrack>& tracks,
                           const TransferModel& model,
                           const SourceClassifier& clf) {
  Predictions preds;
  for (const FaceTrack& t : tracks) preds[t.id] = model.predict(t, clf);
  return preds;
}

std::vector<std::size_t> balanced_sample(const std::vector<ClassId>& labels,
                                         std::size_t count, Rng& rng) {
  if (labels.empty())
    throw std::invalid_argument(
        "balanced sampling needs a non-empty example pool");
  std::map<ClassId, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i)
    by_class[labels[i]].push_back(i);
  std::vector<const std::vector<std::size_t>*> buckets;
  buckets.reserve(by_class.size());
  for (const auto& [id, members] : by_class) buckets.push_back(&members);

  std::vector<std::size_t> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    const auto& bucket = *buckets[rng.uniform_index(buckets.size())];
    out.push_back(bucket[rng.uniform_index(bucket.size())]);
  }
  return out;
}

void apply_dropout(Vec& x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw std::invalid_argument("dropout rate must lie in [0, 1)");
  if (rate == 0.0) return;
  const double keep = 1.0 - rate;
  for (double& v : x) v = rng.uniform() < rate ? 0.0 : v / keep;
}

std::vector<std::span<double>> trainable_parameters(TransferModel& model) {
  std::vector<std::span<double>> out;
  for (auto s : model.tau.param_blocks()) out.push_back(s);
  if (model.attention)
    out.push_back(std::span<double>(model.attention->a.data));
  if (model.encoder)
    for (auto s : model.encoder->param_blocks()) out.push_back(s);
  return out;
}

std::vector<std::span<const double>> trainable_parameters(
    const TransferModel& model) {
  std::vector<std::span<const double>> out;
  for (auto s : model.tau.param_blocks()) out.push_back(s);
  if (model.attention)
    out.push_back(std::span<const double>(model.attention->a.data));
  if (model.encoder)
    for (auto s : model.encoder->param_blocks()) out.push_back(s);
  return out;
}

double transfer_objective(const TransferModel& model,
                          const SourceClassifier& clf,
                          const std::vector<const FaceTrack*>& batch,
                          double lambda_tau, double lambda_attention,
                          Vec* grad) {
  // majvote scores frames independently, so its objective does too.
  std::vector<FaceTrack> frame_storage;
  std::vector<const FaceTrack*> examples;
  if (model.pooling == Pooling::majvote) {
    std::size_t frames = 0;
    for (const FaceTrack* t : batch) frames += t->frames.size();
    frame_storage.reserve(frames);
    for (const FaceTrack* t : batch)
      for (const Vec& f : t->frames)
        frame_storage.push_back(FaceTrack{t->id, t->class_id, {f}});
    for (const FaceTrack& t : frame_storage) examples.push_back(&t);
  } else {
    examples = batch;
  }
  std::vector<std::size_t> cols;
  cols.reserve(examples.size());
  for (const FaceTrack* e : examples)
    cols.push_back(clf.column_of(e->class_id));

  GradAccum g = zero_like(model);
  const double loss =
      batch_objective(model, clf, examples, cols, lambda_tau,
                      lambda_attention, 0.0, nullptr,
                      grad != nullptr ? &g : nullptr);
  if (grad != nullptr) {
    grad->clear();
    for (auto s : const_blocks(g.tau)) grad->insert(grad->end(), s.begin(), s.end());
    if (g.attention)
      grad->insert(grad->end(), g.attention->a.data.begin(),
                   g.attention->a.data.end());
    if (g.encoder)
      for (auto s : std::as_const(*g.encoder).param_blocks())
        grad->insert(grad->end(), s.begin(), s.end());
  }
  return loss;
}

TransferTrainResult train_transfer(const FeatureDataset& train,
                                   const FeatureDataset* val,
                                   const SourceClassifier& clf,
                                   const ClassPartition& partition,
                                   TransferKind kind, Pooling pooling,
                                   const TrainConfig& config) {
  if (pooling == Pooling::atp || pooling == Pooling::selfatt)
    throw std::invalid_argument(
        "learned pooling needs train_joint_atp / "
        "train_joint_selfattention");
  TransferModel model;
  model.pooling = pooling;
  model.tau = TransferLayer::identity_params(kind, train.dim);
  return run_training(train, val, clf, partition, std::move(model), config,
                      false);
}

TransferTrainResult train_joint_atp(const FeatureDataset& train,
                                    const FeatureDataset* val,
                                    const SourceClassifier& clf,
                                    const ClassPartition& partition,
                                    TransferKind kind,
                                    const TrainConfig& config,
                                    bool freeze_attention) {
  if (config.atp_modes == 0)
    throw std::invalid_argument("attentive pooling needs at least one mode");
  TransferModel model;
  model.pooling = Pooling::atp;
  model.tau = TransferLayer::identity_params(kind, train.dim);
  model.attention = AtpParams::zeros(train.dim, config.atp_modes);
  return run_training(train, val, clf, partition, std::move(model), config,
                      freeze_attention);
}

TransferTrainResult train_joint_selfattention(const FeatureDataset& train,
                                              const FeatureDataset* val,
                                              const SourceClassifier& clf,
                                              const ClassPartition& partition,
                                              TransferKind kind,
                                              const TrainConfig& config) {
  if (config.encoder_layers == 0)
    throw std::invalid_argument("the encoder needs at least one layer");
  TransferModel model;
  model.pooling = Pooling::selfatt;
  model.compose_tau = config.compose_tau;
  model.tau = TransferLayer::identity_params(
      config.compose_tau ? kind : TransferKind::identity, train.dim);
  Rng init = Rng(config.seed).child(0);
  model.encoder = SelfAttentionParams::passthrough(
      train.dim, config.key_dim, config.ff_dim, config.heads,
      config.encoder_layers, init);
  model.encoder->validate();
  return run_training(train, val, clf, partition, std::move(model), config,
                      false);
}

}  // namespace ft
