#include "ft/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "ft/detail/bytes.hpp"
#include "json.hpp"

namespace ft {

namespace {

// Features ride through float32 containers; quantizing at generation time
// makes the in-memory benchmark equal to its serialized form bit for bit.
double q32(double v) { return static_cast<double>(static_cast<float>(v)); }

Vec unit_prototype(std::size_t dim, Rng& rng) {
  Vec p(dim);
  double norm = 0.0;
  for (double& v : p) {
    v = rng.normal();
    norm += v * v;
  }
  norm = std::sqrt(norm);
  if (norm == 0.0) norm = 1.0;
  for (double& v : p) v = q32(v / norm);
  return p;
}

Vec apply_shift(const Vec& x, const GroundTruth& truth) {
  Vec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = truth.alpha_star[i] * x[i] + truth.beta_star[i];
    if (truth.tanh_distortion) y[i] = std::tanh(y[i]);
  }
  return y;
}

FaceTrack make_track(const std::string& id, ClassId cls, const Vec& center,
                     const Vec& global_mean, const SynthSpec& spec,
                     Rng& rng, std::vector<int>& flags) {
  FaceTrack t;
  t.id = id;
  t.class_id = cls;
  const std::size_t count =
      spec.min_frames +
      rng.uniform_index(spec.max_frames - spec.min_frames + 1);
  flags.assign(count, 0);
  for (std::size_t f = 0; f < count; ++f) {
    const bool corrupted = rng.uniform() < spec.corruption_rate;
    Vec frame(spec.dim);
    if (corrupted) {
      flags[f] = 1;
      const double lambda = rng.uniform(0.7, 1.0);
      for (std::size_t i = 0; i < spec.dim; ++i)
        frame[i] = q32((1.0 - lambda) * center[i] +
                       lambda * global_mean[i] +
                       3.0 * spec.sigma_video * rng.normal());
    } else {
      for (std::size_t i = 0; i < spec.dim; ++i)
        frame[i] = q32(center[i] + spec.sigma_video * rng.normal());
    }
    t.frames.push_back(std::move(frame));
  }
  return t;
}

const std::set<std::string>& spec_keys() {
  static const std::set<std::string> keys = {
      "dim",          "seen_classes",      "val_extra_classes",
      "unseen_classes", "images_per_class", "train_tracks_per_class",
      "eval_tracks_per_class", "min_frames", "max_frames",
      "sigma_image",  "sigma_video",       "corruption_rate",
      "alpha_min",    "alpha_max",         "beta_min",
      "beta_max",     "tanh_distortion",   "seed"};
  return keys;
}

}  // namespace

SynthSpec SynthSpec::recovery_preset() {
  SynthSpec s;
  s.sigma_video = 0.01;
  s.corruption_rate = 0.0;
  return s;
}

void SynthSpec::validate() const {
  if (dim == 0) throw std::invalid_argument("dim must be positive");
  if (seen_classes == 0)
    throw std::invalid_argument("seen_classes must be positive");
  if (unseen_classes == 0)
    throw std::invalid_argument("unseen_classes must be positive");
  if (images_per_class == 0)
    throw std::invalid_argument("images_per_class must be positive");
  if (train_tracks_per_class == 0 || eval_tracks_per_class == 0)
    throw std::invalid_argument("track counts must be positive");
  if (min_frames == 0 || min_frames > max_frames)
    throw std::invalid_argument(
        "frame counts need 1 <= min_frames <= max_frames");
  if (sigma_image < 0.0 || sigma_video < 0.0)
    throw std::invalid_argument("noise scales must be non-negative");
  if (corruption_rate < 0.0 || corruption_rate > 1.0)
    throw std::invalid_argument("corruption_rate must lie in [0, 1]");
  if (alpha_min > alpha_max || beta_min > beta_max)
    throw std::invalid_argument("shift ranges must be non-empty");
}

std::string SynthSpec::to_json() const {
  nlohmann::ordered_json j;
  j["dim"] = dim;
  j["seen_classes"] = seen_classes;
  j["val_extra_classes"] = val_extra_classes;
  j["unseen_classes"] = unseen_classes;
  j["images_per_class"] = images_per_class;
  j["train_tracks_per_class"] = train_tracks_per_class;
  j["eval_tracks_per_class"] = eval_tracks_per_class;
  j["min_frames"] = min_frames;
  j["max_frames"] = max_frames;
  j["sigma_image"] = sigma_image;
  j["sigma_video"] = sigma_video;
  j["corruption_rate"] = corruption_rate;
  j["alpha_min"] = alpha_min;
  j["alpha_max"] = alpha_max;
  j["beta_min"] = beta_min;
  j["beta_max"] = beta_max;
  j["tanh_distortion"] = tanh_distortion;
  j["seed"] = seed;
  return j.dump(2) + "\n";
}

SynthSpec SynthSpec::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  if (!j.is_object())
    throw std::invalid_argument("spec JSON must be an object");
  for (const auto& [key, value] : j.items())
    if (spec_keys().count(key) == 0)
      throw std::invalid_argument("unknown spec key '" + key + "'");
  SynthSpec s;
  s.dim = j.value("dim", s.dim);
  s.seen_classes = j.value("seen_classes", s.seen_classes);
  s.val_extra_classes = j.value("val_extra_classes", s.val_extra_classes);
  s.unseen_classes = j.value("unseen_classes", s.unseen_classes);
  s.images_per_class = j.value("images_per_class", s.images_per_class);
  s.train_tracks_per_class =
      j.value("train_tracks_per_class", s.train_tracks_per_class);
  s.eval_tracks_per_class =
      j.value("eval_tracks_per_class", s.eval_tracks_per_class);
  s.min_frames = j.value("min_frames", s.min_frames);
  s.max_frames = j.value("max_frames", s.max_frames);
  s.sigma_image = j.value("sigma_image", s.sigma_image);
  s.sigma_video = j.value("sigma_video", s.sigma_video);
  s.corruption_rate = j.value("corruption_rate", s.corruption_rate);
  s.alpha_min = j.value("alpha_min", s.alpha_min);
  s.alpha_max = j.value("alpha_max", s.alpha_max);
  s.beta_min = j.value("beta_min", s.beta_min);
  s.beta_max = j.value("beta_max", s.beta_max);
  s.tanh_distortion = j.value("tanh_distortion", s.tanh_distortion);
  s.seed = j.value("seed", s.seed);
  s.validate();
  return s;
}

std::string GroundTruth::to_json() const {
  nlohmann::ordered_json j;
  j["alpha_star"] = alpha_star;
  j["beta_star"] = beta_star;
  j["tanh_distortion"] = tanh_distortion;
  nlohmann::ordered_json protos = nlohmann::ordered_json::object();
  for (const auto& [id, p] : prototypes) protos[std::to_string(id)] = p;
  j["prototypes"] = protos;
  nlohmann::ordered_json corr = nlohmann::ordered_json::object();
  for (const auto& [id, flags] : corruption) corr[id] = flags;
  j["corruption"] = corr;
  return j.dump(2) + "\n";
}

GroundTruth GroundTruth::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  GroundTruth t;
  t.alpha_star = j.at("alpha_star").get<Vec>();
  t.beta_star = j.at("beta_star").get<Vec>();
  t.tanh_distortion = j.at("tanh_distortion").get<bool>();
  for (const auto& [key, value] : j.at("prototypes").items())
    t.prototypes[static_cast<ClassId>(std::stoul(key))] = value.get<Vec>();
  for (const auto& [key, value] : j.at("corruption").items())
    t.corruption[key] = value.get<std::vector<int>>();
  return t;
}

Benchmark generate_benchmark(const SynthSpec& spec) {
  spec.validate();
  Benchmark b;
  b.spec = spec;

  // Partition: seen ids first, then val-extra, then unseen.
  ClassId next = 0;
  for (std::size_t i = 0; i < spec.seen_classes; ++i, ++next)
    b.partition.classes.push_back(
        {next, "s" + std::to_string(i), Role::seen});
  for (std::size_t i = 0; i < spec.val_extra_classes; ++i, ++next)
    b.partition.classes.push_back(
        {next, "v" + std::to_string(i), Role::val_extra});
  for (std::size_t i = 0; i < spec.unseen_classes; ++i, ++next)
    b.partition.classes.push_back(
        {next, "u" + std::to_string(i), Role::unseen});
  b.partition.validate();

  const Rng root(spec.seed);

  Rng proto_rng = root.child(1);
  for (const auto& entry : b.partition.classes)
    b.truth.prototypes[entry.id] = unit_prototype(spec.dim, proto_rng);

  Rng shift_rng = root.child(2);
  b.truth.alpha_star.resize(spec.dim);
  b.truth.beta_star.resize(spec.dim);
  b.truth.tanh_distortion = spec.tanh_distortion;
  for (std::size_t i = 0; i < spec.dim; ++i)
    b.truth.alpha_star[i] = shift_rng.uniform(spec.alpha_min, spec.alpha_max);
  for (std::size_t i = 0; i < spec.dim; ++i)
    b.truth.beta_star[i] = shift_rng.uniform(spec.beta_min, spec.beta_max);

  // Shifted class centers and their global mean (the corruption sink).
  std::map<ClassId, Vec> centers;
  Vec global_mean(spec.dim, 0.0);
  for (const auto& [id, proto] : b.truth.prototypes) {
    centers[id] = apply_shift(proto, b.truth);
    for (std::size_t i = 0; i < spec.dim; ++i)
      global_mean[i] += centers[id][i];
  }
  for (double& v : global_mean)
    v /= static_cast<double>(b.partition.classes.size());

  b.train.dim = b.val.dim = b.test.dim = spec.dim;
  b.train.split = Split::train;
  b.val.split = Split::val;
  b.test.split = Split::test;

  Rng image_rng = root.child(3);
  for (const auto& entry : b.partition.classes) {
    const Vec& proto = b.truth.prototypes.at(entry.id);
    for (std::size_t i = 0; i < spec.images_per_class; ++i) {
      ImageExample img;
      img.id = "img-" + std::to_string(entry.id) + "-" + std::to_string(i);
      img.class_id = entry.id;
      img.features.resize(spec.dim);
      for (std::size_t d = 0; d < spec.dim; ++d)
        img.features[d] =
            q32(proto[d] + spec.sigma_image * image_rng.normal());
      b.train.images.push_back(std::move(img));
    }
  }

  auto fill_tracks = [&](FeatureDataset& ds, const char* tag,
                         bool include_val_extra, bool include_unseen,
                         std::size_t per_class, Rng rng) {
    for (const auto& entry : b.partition.classes) {
      if (entry.role == Role::val_extra && !include_val_extra) continue;
      if (entry.role == Role::unseen && !include_unseen) continue;
      for (std::size_t i = 0; i < per_class; ++i) {
        const std::string id = std::string(tag) + "-" +
                               std::to_string(entry.id) + "-" +
                               std::to_string(i);
        std::vector<int> flags;
        ds.tracks.push_back(make_track(id, entry.id, centers.at(entry.id),
                                       global_mean, spec, rng, flags));
        b.truth.corruption[id] = std::move(flags);
      }
    }
  };
  // train: seen only; val: seen + val-extra; test: everything.
  fill_tracks(b.train, "tr", false, false, spec.train_tracks_per_class,
              root.child(4));
  fill_tracks(b.val, "va", true, false, spec.eval_tracks_per_class,
              root.child(5));
  fill_tracks(b.test, "te", true, true, spec.eval_tracks_per_class,
              root.child(6));

  return b;
}

Predictions oracle_predictions(const FeatureDataset& ds,
                               const GroundTruth& truth) {
  std::map<ClassId, Vec> centers;
  for (const auto& [id, proto] : truth.prototypes)
    centers[id] = apply_shift(proto, truth);

  Predictions out;
  for (const FaceTrack& t : ds.tracks) {
    const auto flag_it = truth.corruption.find(t.id);
    if (flag_it == truth.corruption.end())
      throw std::invalid_argument("no corruption record for track '" +
                                  t.id + "'");
    const std::vector<int>& flags = flag_it->second;
    if (flags.size() != t.frames.size())
      throw std::invalid_argument("corruption record for track '" + t.id +
                                  "' does not match its frame count");
    Vec mean(t.frames[0].size(), 0.0);
    std::size_t used = 0;
    for (std::size_t f = 0; f < t.frames.size(); ++f) {
      if (flags[f] != 0) continue;
      for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += t.frames[f][i];
      ++used;
    }
    if (used == 0) {  // every frame degraded: fall back to all of them
      for (const Vec& frame : t.frames)
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += frame[i];
      used = t.frames.size();
    }
    for (double& v : mean) v /= static_cast<double>(used);

    ClassId best = 0;
    double best_dist = 0.0;
    bool first = true;
    for (const auto& [id, center] : centers) {
      double dist = 0.0;
      for (std::size_t i = 0; i < mean.size(); ++i) {
        const double diff = mean[i] - center[i];
        dist += diff * diff;
      }
      if (first || dist < best_dist) {
        best = id;
        best_dist = dist;
        first = false;
      }
    }
    out[t.id] = best;
  }
  return out;
}

void write_benchmark(const Benchmark& bench,
                     const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_feature_file(bench.train, dir / "train.ftrs");
  write_feature_file(bench.val, dir / "val.ftrs");
  write_feature_file(bench.test, dir / "test.ftrs");
  save_partition(bench.partition, dir / "partition.txt");
  detail::atomic_write_file(dir / "ground_truth.json",
                            bench.truth.to_json());
  detail::atomic_write_file(dir / "spec.json", bench.spec.to_json());
}

Benchmark read_benchmark(const std::filesystem::path& dir) {
  Benchmark b;
  b.spec = SynthSpec::from_json(
      detail::read_file_bytes(dir / "spec.json"));
  b.partition = load_partition(dir / "partition.txt");
  b.train = read_feature_file(dir / "train.ftrs", Split::train);
  b.val = read_feature_file(dir / "val.ftrs", Split::val);
  b.test = read_feature_file(dir / "test.ftrs", Split::test);
  b.truth = GroundTruth::from_json(
      detail::read_file_bytes(dir / "ground_truth.json"));
  return b;
}

}  // namespace ft
