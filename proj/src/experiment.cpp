#include "ft/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <set>
#include <stdexcept>
#include <thread>
#include <utility>

#include "ft/detail/bytes.hpp"
#include "ft/temporal.hpp"
#include "ft/transfer.hpp"
#include "json.hpp"

namespace ft {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                         const std::string& where) {
  if (!j.is_object())
    throw std::invalid_argument(where + " must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (allowed.count(key) == 0)
      throw std::invalid_argument("unknown " + where + " key '" + key + "'");
}

ordered_json source_config_json(const SourceTrainConfig& c) {
  ordered_json j;
  j["learning_rate"] = c.learning_rate;
  j["momentum"] = c.momentum;
  j["batch_size"] = c.batch_size;
  j["max_epochs"] = c.max_epochs;
  j["lambda"] = c.lambda;
  j["seed"] = c.seed;
  return j;
}

SourceTrainConfig source_config_from_json(const json& j) {
  reject_unknown_keys(j,
                      {"learning_rate", "momentum", "batch_size",
                       "max_epochs", "lambda", "seed"},
                      "source config");
  SourceTrainConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.momentum = j.value("momentum", c.momentum);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.lambda = j.value("lambda", c.lambda);
  c.seed = j.value("seed", c.seed);
  return c;
}

ordered_json transfer_config_json(const TrainConfig& c) {
  ordered_json j;
  j["learning_rate"] = c.learning_rate;
  j["momentum"] = c.momentum;
  j["batch_size"] = c.batch_size;
  j["max_epochs"] = c.max_epochs;
  j["lambda_tau"] = c.lambda_tau;
  j["lambda_attention"] = c.lambda_attention;
  j["dropout"] = c.dropout;
  j["patience"] = c.patience;
  j["eval_every"] = c.eval_every;
  j["atp_modes"] = c.atp_modes;
  j["key_dim"] = c.key_dim;
  j["ff_dim"] = c.ff_dim;
  j["heads"] = c.heads;
  j["encoder_layers"] = c.encoder_layers;
  return j;
}

TrainConfig transfer_config_from_json(const json& j) {
  reject_unknown_keys(j,
                      {"learning_rate", "momentum", "batch_size",
                       "max_epochs", "lambda_tau", "lambda_attention",
                       "dropout", "patience", "eval_every", "atp_modes",
                       "key_dim", "ff_dim", "heads", "encoder_layers"},
                      "transfer config");
  TrainConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.momentum = j.value("momentum", c.momentum);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.lambda_tau = j.value("lambda_tau", c.lambda_tau);
  c.lambda_attention = j.value("lambda_attention", c.lambda_attention);
  c.dropout = j.value("dropout", c.dropout);
  c.patience = j.value("patience", c.patience);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.atp_modes = j.value("atp_modes", c.atp_modes);
  c.key_dim = j.value("key_dim", c.key_dim);
  c.ff_dim = j.value("ff_dim", c.ff_dim);
  c.heads = j.value("heads", c.heads);
  c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
  return c;
}

std::size_t worker_cap() {
  if (const char* env = std::getenv("FACETRANSFER_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1)
      return static_cast<std::size_t>(v);
    throw std::invalid_argument(
        "FACETRANSFER_THREADS must be a positive integer");
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : hc;
}

}  // namespace

std::string MethodSpec::name() const {
  return transfer_kind_name(kind) + "+" + pooling_name(pooling);
}

MethodSpec MethodSpec::parse(const std::string& text) {
  const auto plus = text.find('+');
  if (plus == std::string::npos || plus == 0 || plus + 1 >= text.size())
    throw std::invalid_argument(
        "method '" + text + "' is not of the form <transfer>+<pooling>");
  MethodSpec m;
  m.kind = parse_transfer_kind(text.substr(0, plus));
  m.pooling = parse_pooling(text.substr(plus + 1));
  return m;
}

ExperimentData load_experiment_data(const std::filesystem::path& dir) {
  ExperimentData d;
  d.partition = load_partition(dir / "partition.txt");
  d.partition.validate();
  d.train = read_feature_file(dir / "train.ftrs", Split::train);
  d.val = read_feature_file(dir / "val.ftrs", Split::val);
  d.test = read_feature_file(dir / "test.ftrs", Split::test);
  for (const auto& [name, ds] :
       {std::pair<const char*, const FeatureDataset*>{"train", &d.train},
        {"val", &d.val},
        {"test", &d.test}}) {
    const ValidationReport report = validate_dataset(*ds, d.partition);
    if (!report.ok()) {
      std::string msg = std::string(name) + " split fails validation:";
      for (const auto& v : report.violations) msg += "\n  - " + v.message;
      throw std::invalid_argument(msg);
    }
  }
  return d;
}

void ExperimentConfig::validate() const {
  if (methods.empty())
    throw std::invalid_argument("config needs at least one method");
  for (const std::string& m : methods) MethodSpec::parse(m);
  if (seeds.empty())
    throw std::invalid_argument("config needs at least one seed");
  std::set<std::uint64_t> unique(seeds.begin(), seeds.end());
  if (unique.size() != seeds.size())
    throw std::invalid_argument("config seeds must be distinct");
}

std::string ExperimentConfig::to_json() const {
  ordered_json j;
  j["data"] = data_dir;
  j["out"] = out_dir;
  j["methods"] = methods;
  j["seeds"] = seeds;
  j["finetune_source"] = finetune_source;
  j["finetune_epochs"] = finetune_epochs;
  j["source"] = source_config_json(source);
  j["transfer"] = transfer_config_json(transfer);
  return j.dump(2) + "\n";
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  const json j = json::parse(text);
  reject_unknown_keys(j,
                      {"data", "out", "methods", "seeds", "finetune_source",
                       "finetune_epochs", "source", "transfer"},
                      "experiment config");
  ExperimentConfig c;
  c.data_dir = j.value("data", c.data_dir);
  c.out_dir = j.value("out", c.out_dir);
  if (j.contains("methods"))
    c.methods = j.at("methods").get<std::vector<std::string>>();
  if (j.contains("seeds"))
    c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  c.finetune_source = j.value("finetune_source", c.finetune_source);
  c.finetune_epochs = j.value("finetune_epochs", c.finetune_epochs);
  if (j.contains("source"))
    c.source = source_config_from_json(j.at("source"));
  if (j.contains("transfer"))
    c.transfer = transfer_config_from_json(j.at("transfer"));
  c.validate();
  return c;
}

SourceClassifier run_train_source(const ExperimentData& data,
                                  const ExperimentConfig& config) {
  SourceClassifier clf =
      train_source_classifier(data.train, data.partition, config.source);
  if (config.finetune_source && !data.train.tracks.empty()) {
    SourceTrainConfig fine = config.source;
    fine.max_epochs = config.finetune_epochs;
    clf = finetune_source_on_target_frames(std::move(clf), data.train.tracks,
                                           data.partition, fine);
  }
  clf.frozen = true;
  return clf;
}

void save_bundle(const ModelBundle& bundle,
                 const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  ordered_json meta;
  meta["method"] = bundle.method.name();
  meta["seed"] = bundle.seed;
  meta["compose_tau"] = bundle.model.compose_tau;
  detail::atomic_write_file(dir / "meta.json", meta.dump(2) + "\n");
  save_classifier(bundle.classifier, dir / "classifier.wcls");
  save_transfer(bundle.model.tau, dir / "tau.wtau");
  if (bundle.model.attention)
    save_atp(*bundle.model.attention, dir / "attention.watp");
  if (bundle.model.encoder)
    save_selfattention(*bundle.model.encoder, dir / "encoder.wsat");
}

ModelBundle load_bundle(const std::filesystem::path& dir) {
  const json meta = json::parse(detail::read_file_bytes(dir / "meta.json"));
  reject_unknown_keys(meta, {"method", "seed", "compose_tau"},
                      "bundle meta");
  ModelBundle b;
  b.method = MethodSpec::parse(meta.at("method").get<std::string>());
  b.seed = meta.at("seed").get<std::uint64_t>();
  b.classifier = load_classifier(dir / "classifier.wcls");
  b.model.pooling = b.method.pooling;
  b.model.compose_tau = meta.at("compose_tau").get<bool>();
  b.model.tau = load_transfer(dir / "tau.wtau");
  if (b.method.pooling == Pooling::atp)
    b.model.attention = load_atp(dir / "attention.watp");
  if (b.method.pooling == Pooling::selfatt)
    b.model.encoder = load_selfattention(dir / "encoder.wsat");

  const TransferKind expected_kind =
      (b.method.pooling == Pooling::selfatt && !b.model.compose_tau)
          ? TransferKind::identity
          : b.method.kind;
  if (b.model.tau.kind != expected_kind)
    throw std::invalid_argument(
        "bundle meta names method '" + b.method.name() +
        "' but tau.wtau holds a '" + transfer_kind_name(b.model.tau.kind) +
        "' layer");
  if (b.model.tau.dim != b.classifier.dim())
    throw std::invalid_argument(
        "bundle transfer layer and classifier disagree on dimensionality");
  return b;
}

TransferTrainResult train_method(const MethodSpec& method,
                                 const ExperimentData& data,
                                 const SourceClassifier& clf,
                                 const TrainConfig& config,
                                 std::uint64_t seed) {
  TrainConfig cfg = config;
  cfg.seed = seed;
  if (method.trains_nothing()) cfg.max_epochs = 0;
  switch (method.pooling) {
    case Pooling::avgpool:
    case Pooling::majvote:
      return train_transfer(data.train, &data.val, clf, data.partition,
                            method.kind, method.pooling, cfg);
    case Pooling::atp:
      return train_joint_atp(data.train, &data.val, clf, data.partition,
                             method.kind, cfg);
    case Pooling::selfatt:
      cfg.compose_tau = method.kind != TransferKind::identity;
      return train_joint_selfattention(data.train, &data.val, clf,
                                       data.partition, method.kind, cfg);
  }
  throw std::logic_error("unknown pooling value");
}

EvalReport evaluate_bundle(const ModelBundle& bundle,
                           const FeatureDataset& split,
                           const ClassPartition& partition) {
  TrackTruth truth;
  for (const FaceTrack& t : split.tracks) truth[t.id] = t.class_id;
  const Predictions preds =
      predict_tracks(split.tracks, bundle.model, bundle.classifier);
  EvalReport report = gzsl_report(preds, truth, partition);
  report.method = bundle.method.name();
  report.seed = bundle.seed;
  return report;
}

SeedOutcome run_seed(const MethodSpec& method, const ExperimentData& data,
                     const SourceClassifier& clf, const TrainConfig& config,
                     std::uint64_t seed) {
  TransferTrainResult trained =
      train_method(method, data, clf, config, seed);
  SeedOutcome outcome;
  outcome.bundle.method = method;
  outcome.bundle.seed = seed;
  outcome.bundle.classifier = clf;
  outcome.bundle.model = std::move(trained.model);
  outcome.trace = std::move(trained.trace);
  outcome.test_report = evaluate_bundle(outcome.bundle, data.test,
                                        data.partition);
  return outcome;
}

MatrixResult run_matrix(const ExperimentData& data,
                        const SourceClassifier& clf,
                        const ExperimentConfig& config) {
  config.validate();
  std::vector<MethodSpec> methods;
  for (const std::string& m : config.methods)
    methods.push_back(MethodSpec::parse(m));

  struct Task {
    std::size_t method_index;
    std::size_t seed_index;
  };
  std::vector<Task> tasks;
  for (std::size_t m = 0; m < methods.size(); ++m)
    for (std::size_t s = 0; s < config.seeds.size(); ++s)
      tasks.push_back({m, s});

  std::vector<std::optional<SeedOutcome>> slots(tasks.size());
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;

  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      try {
        slots[i] = run_seed(methods[tasks[i].method_index], data, clf,
                            config.transfer,
                            config.seeds[tasks[i].seed_index]);
      } catch (...) {
        const std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };

  const std::size_t workers =
      std::min(worker_cap(), std::max<std::size_t>(tasks.size(), 1));
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);

  MatrixResult result;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (!slots[i].has_value())
      throw std::runtime_error("matrix task was never completed");
    result.outcomes[methods[tasks[i].method_index].name()].push_back(
        std::move(*slots[i]));
  }

  std::vector<TableRow> rows;
  for (const MethodSpec& m : methods) {
    const std::vector<SeedOutcome>& outs = result.outcomes.at(m.name());
    std::vector<EvalReport> reports;
    for (const SeedOutcome& o : outs) reports.push_back(o.test_report);
    AggregateReport agg = multi_seed_aggregate(reports);
    TableRow row;
    row.label = m.name();
    row.seen = agg.seen_mean;
    row.unseen = agg.unseen_mean;
    row.harmonic = agg.harmonic_mean_value;
    bool all_validated = true;
    double val_sum = 0.0;
    for (const SeedOutcome& o : outs) {
      if (o.trace.best_epoch == 0) {
        all_validated = false;
        break;
      }
      val_sum += o.trace.best_val_h;
    }
    if (all_validated && !outs.empty())
      row.val_h = val_sum / static_cast<double>(outs.size());
    rows.push_back(row);
    result.aggregates.push_back(std::move(agg));
  }
  result.table = render_table(rows);
  return result;
}

void write_matrix_outputs(const MatrixResult& result,
                          const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  for (const auto& [name, outcomes] : result.outcomes)
    for (const SeedOutcome& o : outcomes) {
      const auto dir =
          out_dir / name / ("seed-" + std::to_string(o.bundle.seed));
      save_bundle(o.bundle, dir);
      write_trace(o.trace, dir / "trace.json");
      detail::atomic_write_file(dir / "report.json",
                                o.test_report.to_json());
    }
  ordered_json aggregates = ordered_json::array();
  for (const AggregateReport& a : result.aggregates)
    aggregates.push_back(ordered_json::parse(a.to_json()));
  detail::atomic_write_file(out_dir / "aggregate.json",
                            aggregates.dump(2) + "\n");
  detail::atomic_write_file(out_dir / "table.txt", result.table);
}

namespace {

Vec random_vec(std::size_t n, Rng& rng, double scale = 1.0) {
  Vec v(n);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

FaceTrack random_track(const std::string& id, ClassId cls, std::size_t dim,
                       std::size_t frames, Rng& rng) {
  FaceTrack t;
  t.id = id;
  t.class_id = cls;
  for (std::size_t f = 0; f < frames; ++f)
    t.frames.push_back(random_vec(dim, rng));
  return t;
}

// Keeps stacked / residual pre-activations away from the relu kink so the
// central difference stays on one branch.
bool tau_point_is_safe(const TransferLayer& layer, const Vec& psi) {
  if (layer.kind != TransferKind::stacked_affine &&
      layer.kind != TransferKind::residual_stacked_affine)
    return true;
  for (std::size_t i = 0; i < psi.size(); ++i)
    if (std::abs(layer.alpha1[i] * psi[i] + layer.beta1[i]) < 1e-3)
      return false;
  return true;
}

GradCheckResult run_check(const std::string& name,
                          const std::function<double(const Vec&)>& fn,
                          const Vec& point, const Vec& analytic) {
  return check_gradient(name, fn, point, analytic);
}

}  // namespace

std::vector<GradCheckResult> gradcheck_all(std::uint64_t seed,
                                           std::size_t points) {
  std::vector<GradCheckResult> results;
  const Rng root(seed);
  constexpr std::size_t kDim = 6;
  constexpr std::size_t kClasses = 4;

  // Source objective: mean cross-entropy over a handful of images plus an
  // L2 penalty, differentiated with respect to W.
  for (std::size_t p = 0; p < points; ++p) {
    Rng rng = root.child(100 + p);
    const Matrix w0 = xavier_init(kDim, kClasses, rng);
    std::vector<Vec> xs;
    std::vector<std::size_t> ys;
    for (int i = 0; i < 5; ++i) {
      xs.push_back(random_vec(kDim, rng));
      ys.push_back(rng.uniform_index(kClasses));
    }
    const double lambda = 1e-3;
    const auto fn = [&](const Vec& flat) {
      Matrix w(kDim, kClasses);
      w.data = flat;
      double loss = 0.0;
      for (std::size_t i = 0; i < xs.size(); ++i)
        loss += cross_entropy(matvec_transposed(w, xs[i]), ys[i]);
      loss /= static_cast<double>(xs.size());
      for (double v : flat) loss += lambda * v * v;
      return loss;
    };
    Matrix g(kDim, kClasses);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const Vec up = cross_entropy_grad(matvec_transposed(w0, xs[i]), ys[i]);
      for (std::size_t r = 0; r < kDim; ++r)
        for (std::size_t c = 0; c < kClasses; ++c)
          g.at(r, c) += xs[i][r] * up[c] / static_cast<double>(xs.size());
    }
    for (std::size_t i = 0; i < g.data.size(); ++i)
      g.data[i] += 2.0 * lambda * w0.data[i];
    results.push_back(run_check(
        "source objective point " + std::to_string(p), fn, w0.data, g.data));
  }

  // Every transfer kind: parameter gradient and input gradient of a linear
  // probe u . tau(psi).
  const TransferKind kinds[] = {TransferKind::fc, TransferKind::affine,
                                TransferKind::stacked_affine,
                                TransferKind::residual_stacked_affine};
  for (std::size_t k = 0; k < 4; ++k) {
    for (std::size_t p = 0; p < points; ++p) {
      Rng rng = root.child(200 + 1000 * k + p);
      TransferLayer layer =
          TransferLayer::random_params(kinds[k], kDim, rng);
      Vec psi = random_vec(kDim, rng);
      int guard = 0;
      while (!tau_point_is_safe(layer, psi) && ++guard < 100)
        psi = random_vec(kDim, rng);
      const Vec upstream = random_vec(kDim, rng);
      const TauGrad grad = tau_backward(layer, psi, upstream);
      const std::string label =
          "tau[" + transfer_kind_name(kinds[k]) + "] point " +
          std::to_string(p);

      Vec flat_params;
      for (auto s : std::as_const(layer).param_blocks())
        flat_params.insert(flat_params.end(), s.begin(), s.end());
      Vec flat_grad;
      for (auto s : std::as_const(grad.params).param_blocks())
        flat_grad.insert(flat_grad.end(), s.begin(), s.end());
      const auto param_fn = [&](const Vec& x) {
        TransferLayer probe = layer;
        std::size_t off = 0;
        for (auto s : probe.param_blocks())
          for (double& v : s) v = x[off++];
        const Vec out = tau_forward(probe, psi);
        double dot = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i)
          dot += upstream[i] * out[i];
        return dot;
      };
      results.push_back(run_check(label + " (parameters)", param_fn,
                                  flat_params, flat_grad));

      const auto input_fn = [&](const Vec& x) {
        const Vec out = tau_forward(layer, x);
        double dot = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i)
          dot += upstream[i] * out[i];
        return dot;
      };
      results.push_back(
          run_check(label + " (input)", input_fn, psi, grad.psi));
    }
  }

  // Attentive pooling: u . atp_pool(track, A) with respect to A.
  for (std::size_t p = 0; p < points; ++p) {
    Rng rng = root.child(300 + p);
    const AtpParams params = AtpParams::xavier(kDim, 2, rng);
    const FaceTrack track = random_track("g", 0, kDim, 3, rng);
    const Vec upstream = random_vec(kDim, rng);
    const Matrix grad = atp_backward(track, params, upstream);
    const auto fn = [&](const Vec& x) {
      AtpParams probe = params;
      probe.a.data = x;
      const Vec out = atp_pool(track, probe);
      double dot = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i)
        dot += upstream[i] * out[i];
      return dot;
    };
    results.push_back(run_check(
        "attentive pooling point " + std::to_string(p), fn, params.a.data,
        grad.data));
  }

  // Self-attention encoder: u . encode(track) for every tensor at once.
  for (std::size_t p = 0; p < points; ++p) {
    Rng rng = root.child(400 + p);
    const SelfAttentionParams params =
        SelfAttentionParams::xavier(kDim, 4, 8, 2, 1, rng);
    const FaceTrack track = random_track("g", 0, kDim, 3, rng);
    const Vec upstream = random_vec(kDim, rng);
    const SelfAttentionParams grad =
        self_attention_backward(track, params, upstream);
    Vec flat_params;
    for (auto s : params.param_blocks())
      flat_params.insert(flat_params.end(), s.begin(), s.end());
    Vec flat_grad;
    for (auto s : grad.param_blocks())
      flat_grad.insert(flat_grad.end(), s.begin(), s.end());
    const auto fn = [&](const Vec& x) {
      SelfAttentionParams probe = params;
      std::size_t off = 0;
      for (auto s : probe.param_blocks())
        for (double& v : s) v = x[off++];
      const Vec out = self_attention_encode(track, probe);
      double dot = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i)
        dot += upstream[i] * out[i];
      return dot;
    };
    results.push_back(
        run_check("self-attention encoder point " + std::to_string(p), fn,
                  flat_params, flat_grad));
  }

  // Joint training objectives through a frozen classifier.
  const auto joint_family = [&](const char* label, std::uint64_t stream,
                                auto make_model) {
    for (std::size_t p = 0; p < points; ++p) {
      Rng rng = root.child(stream + p);
      SourceClassifier clf;
      clf.w = xavier_init(kDim, kClasses, rng);
      for (ClassId c = 0; c < kClasses; ++c) clf.class_order.push_back(c);
      clf.frozen = true;
      std::vector<FaceTrack> tracks;
      for (std::size_t i = 0; i < 3; ++i)
        tracks.push_back(random_track("t" + std::to_string(i),
                                      static_cast<ClassId>(i), kDim, 3,
                                      rng));
      std::vector<const FaceTrack*> batch;
      for (const FaceTrack& t : tracks) batch.push_back(&t);

      const TransferModel model = make_model(rng);
      Vec analytic;
      transfer_objective(model, clf, batch, 1e-3, 1e-3, &analytic);
      Vec point;
      for (auto s : trainable_parameters(model))
        point.insert(point.end(), s.begin(), s.end());
      const auto fn = [&](const Vec& x) {
        TransferModel probe = model;
        std::size_t off = 0;
        for (auto s : trainable_parameters(probe))
          for (double& v : s) v = x[off++];
        return transfer_objective(probe, clf, batch, 1e-3, 1e-3);
      };
      results.push_back(run_check(std::string("joint objective [") + label +
                                      "] point " + std::to_string(p),
                                  fn, point, analytic));
    }
  };
  joint_family("affine+atp", 500, [&](Rng& rng) {
    TransferModel m;
    m.pooling = Pooling::atp;
    m.tau = TransferLayer::random_params(TransferKind::affine, kDim, rng);
    m.attention = AtpParams::xavier(kDim, 2, rng);
    return m;
  });
  joint_family("rsa+selfatt", 600, [&](Rng& rng) {
    TransferModel m;
    m.pooling = Pooling::selfatt;
    m.compose_tau = true;
    m.tau = TransferLayer::random_params(
        TransferKind::residual_stacked_affine, kDim, rng);
    m.encoder = SelfAttentionParams::xavier(kDim, 4, 8, 2, 1, rng);
    return m;
  });

  return results;
}

}  // namespace ft
