#include "ft/source.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <stdexcept>

#include "ft/detail/bytes.hpp"

namespace ft {

namespace {

constexpr char kMagic[4] = {'W', 'C', 'L', 'S'};
constexpr std::uint16_t kVersion = 1;

struct Example {
  const Vec* features;
  std::size_t label_col;
};

// One pass of mini-batch SGD with momentum over the given examples,
// minimizing mean cross-entropy + lambda * ||W||^2.  Returns the mean
// batch objective for the epoch.
double sgd_epoch(Matrix& w, Matrix& velocity, std::vector<Example>& examples,
                 const SourceTrainConfig& cfg, Rng& rng) {
  // in-place Fisher-Yates shuffle
  for (std::size_t i = examples.size(); i > 1; --i)
    std::swap(examples[i - 1], examples[rng.uniform_index(i)]);

  const std::size_t d = w.rows, C = w.cols;
  double epoch_loss = 0.0;
  std::size_t batches = 0;
  Matrix grad(d, C, 0.0);
  for (std::size_t start = 0; start < examples.size();
       start += cfg.batch_size) {
    const std::size_t end =
        std::min(examples.size(), start + cfg.batch_size);
    const double inv_b = 1.0 / static_cast<double>(end - start);
    std::fill(grad.data.begin(), grad.data.end(), 0.0);
    double ce_sum = 0.0;
    for (std::size_t e = start; e < end; ++e) {
      const Vec& x = *examples[e].features;
      const Vec logits = matvec_transposed(w, x);
      ce_sum += cross_entropy(logits, examples[e].label_col);
      const Vec g = cross_entropy_grad(logits, examples[e].label_col);
      for (std::size_t row = 0; row < d; ++row) {
        const double xr = x[row] * inv_b;
        for (std::size_t c = 0; c < C; ++c) grad.at(row, c) += xr * g[c];
      }
    }
    double penalty = 0.0;
    for (std::size_t i = 0; i < w.data.size(); ++i) {
      penalty += w.data[i] * w.data[i];
      grad.data[i] += 2.0 * cfg.lambda * w.data[i];
    }
    epoch_loss += ce_sum * inv_b + cfg.lambda * penalty;
    ++batches;
    for (std::size_t i = 0; i < w.data.size(); ++i) {
      velocity.data[i] =
          cfg.momentum * velocity.data[i] - cfg.learning_rate * grad.data[i];
      w.data[i] += velocity.data[i];
    }
  }
  if (!w.all_finite())
    throw std::runtime_error(
        "source training diverged to non-finite weights; lower the "
        "learning rate");
  return batches == 0 ? 0.0 : epoch_loss / static_cast<double>(batches);
}

std::vector<Example> image_examples(const FeatureDataset& images,
                                    const SourceClassifier& clf) {
  std::vector<Example> out;
  out.reserve(images.images.size());
  for (const ImageExample& im : images.images)
    out.push_back({&im.features, clf.column_of(im.class_id)});
  return out;
}

}  // namespace

std::size_t SourceClassifier::column_of(ClassId id) const {
  for (std::size_t j = 0; j < class_order.size(); ++j)
    if (class_order[j] == id) return j;
  throw std::invalid_argument("class id " + std::to_string(id) +
                              " is not scored by this classifier");
}

std::uint64_t SourceClassifier::weight_checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double v : w.data) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

SourceClassifier train_source_classifier(const FeatureDataset& images,
                                         const ClassPartition& partition,
                                         const SourceTrainConfig& config,
                                         std::vector<double>* epoch_losses) {
  partition.validate();
  if (config.batch_size == 0)
    throw std::invalid_argument("batch_size must be positive");
  if (images.images.empty())
    throw std::invalid_argument("no still images to train on");

  std::map<ClassId, std::size_t> per_class;
  for (const ImageExample& im : images.images) {
    if (!partition.contains(im.class_id))
      throw std::invalid_argument("image '" + im.id + "' has class " +
                                  std::to_string(im.class_id) +
                                  " outside the partition");
    if (im.features.size() != images.dim)
      throw std::invalid_argument("image '" + im.id +
                                  "' feature width mismatch");
    ++per_class[im.class_id];
  }
  for (const auto& entry : partition.classes)
    if (per_class[entry.id] == 0)
      throw std::invalid_argument("class " + std::to_string(entry.id) + " ('" +
                                  entry.name + "') has no training images");

  SourceClassifier clf;
  clf.class_order = partition.all_ids();
  Rng rng(config.seed);
  clf.w = xavier_init(images.dim, clf.class_order.size(), rng);
  clf.frozen = false;

  Matrix velocity(clf.w.rows, clf.w.cols, 0.0);
  std::vector<Example> examples = image_examples(images, clf);
  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    const double loss = sgd_epoch(clf.w, velocity, examples, config, rng);
    if (epoch_losses) epoch_losses->push_back(loss);
  }
  return clf;
}

Vec score(const SourceClassifier& clf, const Vec& features) {
  if (features.size() != clf.dim())
    throw std::invalid_argument("score: feature length " +
                                std::to_string(features.size()) +
                                " != classifier dim " +
                                std::to_string(clf.dim()));
  return matvec_transposed(clf.w, features);
}

ClassId majority_vote_track(const FaceTrack& track,
                            const SourceClassifier& clf,
                            const TransferLayer* tau) {
  if (track.frames.empty())
    throw std::invalid_argument("majority_vote_track: track '" + track.id +
                                "' has no frames");
  const std::size_t C = clf.class_count();
  std::vector<std::size_t> votes(C, 0);
  Vec confidence(C, 0.0);  // summed softmax probability per class
  for (const Vec& frame : track.frames) {
    const Vec logits =
        tau ? score(clf, tau_forward(*tau, frame)) : score(clf, frame);
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c)
      if (logits[c] > logits[best]) best = c;
    ++votes[best];
    const Vec p = softmax(logits);
    for (std::size_t c = 0; c < C; ++c) confidence[c] += p[c];
  }
  std::size_t winner = 0;
  for (std::size_t c = 1; c < C; ++c) {
    if (votes[c] > votes[winner]) {
      winner = c;
    } else if (votes[c] == votes[winner]) {
      if (confidence[c] > confidence[winner]) {
        winner = c;
      } else if (confidence[c] == confidence[winner] &&
                 clf.class_order[c] < clf.class_order[winner]) {
        winner = c;
      }
    }
  }
  return clf.class_order[winner];
}

SourceClassifier finetune_source_on_target_frames(
    SourceClassifier clf, const std::vector<FaceTrack>& tracks,
    const ClassPartition& partition, const SourceTrainConfig& config,
    std::vector<double>* epoch_losses) {
  if (clf.frozen)
    throw std::invalid_argument(
        "classifier is frozen; fine-tuning would mutate W");
  if (config.batch_size == 0)
    throw std::invalid_argument("batch_size must be positive");
  std::vector<Example> examples;
  for (const FaceTrack& tr : tracks) {
    const Role role = partition.role_of(tr.class_id);
    if (role == Role::unseen)
      throw std::invalid_argument(
          "track '" + tr.id +
          "' belongs to an unseen-role class; fine-tuning may only use "
          "seen or val-extra tracks");
    const std::size_t col = clf.column_of(tr.class_id);
    for (const Vec& frame : tr.frames) {
      if (frame.size() != clf.dim())
        throw std::invalid_argument("track '" + tr.id +
                                    "' frame width mismatch");
      examples.push_back({&frame, col});
    }
  }
  if (examples.empty() && config.max_epochs > 0)
    throw std::invalid_argument("no frames to fine-tune on");

  Rng rng(config.seed);
  Matrix velocity(clf.w.rows, clf.w.cols, 0.0);
  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    const double loss = sgd_epoch(clf.w, velocity, examples, config, rng);
    if (epoch_losses) epoch_losses->push_back(loss);
  }
  return clf;
}

double image_accuracy(const SourceClassifier& clf,
                      const FeatureDataset& images) {
  if (images.images.empty())
    throw std::invalid_argument("image_accuracy: no images");
  std::size_t correct = 0;
  for (const ImageExample& im : images.images) {
    const Vec logits = score(clf, im.features);
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.size(); ++c)
      if (logits[c] > logits[best]) best = c;
    if (clf.class_order[best] == im.class_id) ++correct;
  }
  return static_cast<double>(correct) /
         static_cast<double>(images.images.size());
}

std::string encode_classifier(const SourceClassifier& clf) {
  std::string out;
  out.append(kMagic, 4);
  detail::put_u16(out, kVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(clf.w.rows));
  detail::put_u32(out, static_cast<std::uint32_t>(clf.w.cols));
  for (ClassId id : clf.class_order) detail::put_u32(out, id);
  for (std::size_t c = 0; c < clf.w.cols; ++c)
    for (std::size_t r = 0; r < clf.w.rows; ++r)
      detail::put_f32(out, static_cast<float>(clf.w.at(r, c)));
  out.push_back(clf.frozen ? '\x01' : '\x00');
  return out;
}

SourceClassifier decode_classifier(const std::string& bytes) {
  detail::ByteReader r(bytes);
  auto fail = [&r](const std::string& msg) {
    return std::runtime_error(msg + " (byte offset " +
                              std::to_string(r.offset()) + ")");
  };
  try {
    if (r.str(4) != std::string(kMagic, 4))
      throw fail("bad magic, expected 'WCLS'");
    if (r.u16() != kVersion) throw fail("unsupported WCLS version");
    const std::uint32_t d = r.u32();
    const std::uint32_t C = r.u32();
    if (d == 0 || C == 0) throw fail("WCLS has a zero shape field");
    SourceClassifier clf;
    for (std::uint32_t j = 0; j < C; ++j) clf.class_order.push_back(r.u32());
    clf.w = Matrix(d, C);
    for (std::uint32_t c = 0; c < C; ++c)
      for (std::uint32_t row = 0; row < d; ++row)
        clf.w.at(row, c) = static_cast<double>(r.f32());
    const std::uint8_t frozen = r.u8();
    if (frozen > 1) throw fail("bad frozen flag");
    clf.frozen = frozen == 1;
    if (!r.exhausted()) throw fail("trailing bytes after WCLS payload");
    return clf;
  } catch (const std::out_of_range&) {
    throw std::runtime_error("WCLS checkpoint truncated");
  }
}

void save_classifier(const SourceClassifier& clf,
                     const std::filesystem::path& path) {
  detail::atomic_write_file(path, encode_classifier(clf));
}

SourceClassifier load_classifier(const std::filesystem::path& path) {
  return decode_classifier(detail::read_file_bytes(path));
}

}  // namespace ft
