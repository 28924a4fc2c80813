#include "ft/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <stdexcept>

#include "json.hpp"

namespace ft {

double harmonic_mean(double a, double b) {
  if (a < 0.0 || b < 0.0)
    throw std::invalid_argument("harmonic_mean: negative input");
  const double sum = a + b;
  if (sum == 0.0) return 0.0;
  return 2.0 * a * b / sum;
}

namespace {

struct PerClassCounts {
  std::map<ClassId, std::size_t> total;
  std::map<ClassId, std::size_t> correct;
};

PerClassCounts tally(const Predictions& preds, const TrackTruth& truth,
                     const ClassPartition& partition) {
  if (preds.empty()) throw std::invalid_argument("no predictions to score");
  PerClassCounts counts;
  for (const auto& [track_id, predicted] : preds) {
    const auto it = truth.find(track_id);
    if (it == truth.end())
      throw std::invalid_argument("prediction for unknown track '" +
                                  track_id + "'");
    const ClassId actual = it->second;
    if (!partition.contains(actual))
      throw std::invalid_argument("track '" + track_id +
                                  "' has truth class " +
                                  std::to_string(actual) +
                                  " outside the partition");
    if (!partition.contains(predicted))
      throw std::invalid_argument("track '" + track_id +
                                  "' predicted class " +
                                  std::to_string(predicted) +
                                  " outside the partition");
    ++counts.total[actual];
    if (predicted == actual) ++counts.correct[actual];
  }
  return counts;
}

// Mean per-class accuracy over the given role's classes; classes with no
// scored tracks are reported in `excluded` and skipped.
double role_mean(const PerClassCounts& counts,
                 const ClassPartition& partition, Role role,
                 std::vector<ClassId>* excluded) {
  double sum = 0.0;
  std::size_t n = 0;
  for (ClassId id : partition.ids_with_role(role)) {
    const auto it = counts.total.find(id);
    if (it == counts.total.end() || it->second == 0) {
      if (excluded) excluded->push_back(id);
      continue;
    }
    const auto correct_it = counts.correct.find(id);
    const std::size_t correct =
        correct_it == counts.correct.end() ? 0 : correct_it->second;
    sum += static_cast<double>(correct) / static_cast<double>(it->second);
    ++n;
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

}  // namespace

std::map<ClassId, double> per_class_accuracy(const Predictions& preds,
                                             const TrackTruth& truth,
                                             const ClassPartition& partition) {
  const PerClassCounts counts = tally(preds, truth, partition);
  std::map<ClassId, double> out;
  for (const auto& [id, total] : counts.total) {
    const auto it = counts.correct.find(id);
    const std::size_t correct = it == counts.correct.end() ? 0 : it->second;
    out[id] = static_cast<double>(correct) / static_cast<double>(total);
  }
  return out;
}

EvalReport gzsl_report(const Predictions& preds, const TrackTruth& truth,
                       const ClassPartition& partition,
                       const std::optional<std::vector<ClassId>>& label_space) {
  partition.validate();
  if (label_space) {
    // The protocol scores the full label space; refuse a declared subset.
    std::set<ClassId> declared(label_space->begin(), label_space->end());
    for (const auto& entry : partition.classes)
      if (!declared.count(entry.id))
        throw std::invalid_argument(
            "scoring was restricted to a subset of the label space (class " +
            std::to_string(entry.id) + " missing); the protocol requires "
            "every class to be scorable");
  }
  const PerClassCounts counts = tally(preds, truth, partition);

  EvalReport report;
  report.partition_fingerprint = partition.fingerprint();
  report.per_class = per_class_accuracy(preds, truth, partition);
  for (const auto& [id, total] : counts.total) report.class_counts[id] = total;
  report.seen_acc =
      role_mean(counts, partition, Role::seen, &report.excluded_classes);
  report.unseen_acc =
      role_mean(counts, partition, Role::unseen, &report.excluded_classes);
  report.harmonic = harmonic_mean(report.seen_acc, report.unseen_acc);

  bool any_seen = false, any_unseen = false;
  for (const auto& [id, total] : counts.total) {
    if (total == 0) continue;
    const Role r = partition.role_of(id);
    any_seen |= r == Role::seen;
    any_unseen |= r == Role::unseen;
  }
  if (!any_seen || !any_unseen)
    throw std::invalid_argument(
        "scored tracks cover no " +
        std::string(!any_seen ? "seen" : "unseen") +
        "-role class; the harmonic protocol needs both groups");
  return report;
}

double validation_harmonic(const Predictions& preds, const TrackTruth& truth,
                           const ClassPartition& partition) {
  const PerClassCounts counts = tally(preds, truth, partition);
  bool any_seen = false, any_extra = false;
  for (const auto& [id, total] : counts.total) {
    if (total == 0) continue;
    const Role r = partition.role_of(id);
    any_seen |= r == Role::seen;
    any_extra |= r == Role::val_extra;
  }
  const double seen = role_mean(counts, partition, Role::seen, nullptr);
  const double extra = role_mean(counts, partition, Role::val_extra, nullptr);
  if (any_seen && any_extra) return harmonic_mean(seen, extra);
  if (any_seen) return seen;  // no val-extra tracks: plain seen mean
  if (any_extra) return extra;
  throw std::invalid_argument("validation split has no scorable tracks");
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["method"] = method;
  j["seed"] = seed;
  j["seen_acc"] = seen_acc;
  j["unseen_acc"] = unseen_acc;
  j["harmonic"] = harmonic;
  nlohmann::ordered_json pc = nlohmann::ordered_json::object();
  for (const auto& [id, acc] : per_class) pc[std::to_string(id)] = acc;
  j["per_class"] = pc;
  nlohmann::ordered_json cc = nlohmann::ordered_json::object();
  for (const auto& [id, n] : class_counts) cc[std::to_string(id)] = n;
  j["class_counts"] = cc;
  j["excluded_classes"] = excluded_classes;
  j["partition_fingerprint"] = partition_fingerprint;
  return j.dump(2) + "\n";
}

EvalReport EvalReport::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  EvalReport r;
  r.method = j.at("method").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.seen_acc = j.at("seen_acc").get<double>();
  r.unseen_acc = j.at("unseen_acc").get<double>();
  r.harmonic = j.at("harmonic").get<double>();
  for (const auto& [key, value] : j.at("per_class").items())
    r.per_class[static_cast<ClassId>(std::stoul(key))] = value.get<double>();
  for (const auto& [key, value] : j.at("class_counts").items())
    r.class_counts[static_cast<ClassId>(std::stoul(key))] =
        value.get<std::size_t>();
  r.excluded_classes = j.at("excluded_classes").get<std::vector<ClassId>>();
  r.partition_fingerprint = j.at("partition_fingerprint").get<std::uint64_t>();
  return r;
}

std::string AggregateReport::to_json() const {
  nlohmann::ordered_json j;
  j["method"] = method;
  j["runs"] = runs;
  j["seen_mean"] = seen_mean;
  j["seen_std"] = seen_std;
  j["unseen_mean"] = unseen_mean;
  j["unseen_std"] = unseen_std;
  j["harmonic_mean"] = harmonic_mean_value;
  j["harmonic_std"] = harmonic_std;
  j["degenerate"] = degenerate;
  return j.dump(2) + "\n";
}

AggregateReport multi_seed_aggregate(const std::vector<EvalReport>& reports) {
  if (reports.empty())
    throw std::invalid_argument("multi_seed_aggregate: no reports");
  AggregateReport agg;
  agg.method = reports.front().method;
  agg.runs = reports.size();
  for (const EvalReport& r : reports) {
    if (r.method != agg.method)
      throw std::invalid_argument(
          "multi_seed_aggregate: mixed methods '" + agg.method + "' and '" +
          r.method + "'");
    if (r.partition_fingerprint != reports.front().partition_fingerprint)
      throw std::invalid_argument(
          "multi_seed_aggregate: reports were scored against different "
          "partitions");
  }
  auto stats = [&](auto pick) {
    double mean = 0.0;
    for (const EvalReport& r : reports) mean += pick(r);
    mean /= static_cast<double>(reports.size());
    double var = 0.0;
    if (reports.size() > 1) {
      for (const EvalReport& r : reports) {
        const double d = pick(r) - mean;
        var += d * d;
      }
      var /= static_cast<double>(reports.size() - 1);
    }
    return std::pair<double, double>(mean, std::sqrt(var));
  };
  std::tie(agg.seen_mean, agg.seen_std) =
      stats([](const EvalReport& r) { return r.seen_acc; });
  std::tie(agg.unseen_mean, agg.unseen_std) =
      stats([](const EvalReport& r) { return r.unseen_acc; });
  std::tie(agg.harmonic_mean_value, agg.harmonic_std) =
      stats([](const EvalReport& r) { return r.harmonic; });
  agg.degenerate = reports.size() == 1;
  return agg;
}

std::string render_table(const std::vector<TableRow>& rows) {
  std::size_t label_width = std::string("method").size();
  for (const TableRow& r : rows)
    label_width = std::max(label_width, r.label.size());
  const bool any_val =
      std::any_of(rows.begin(), rows.end(),
                  [](const TableRow& r) { return r.val_h.has_value(); });
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-*s  %6s  %6s  %6s", (int)label_width,
                "method", "seen", "unseen", "h");
  out += buf;
  if (any_val) out += "   val-h";
  out += "\n";
  out += std::string(out.size() - 1, '-') + "\n";
  for (const TableRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-*s  %6.1f  %6.1f  %6.1f",
                  (int)label_width, r.label.c_str(), 100.0 * r.seen,
                  100.0 * r.unseen, 100.0 * r.harmonic);
    out += buf;
    if (any_val) {
      if (r.val_h) {
        std::snprintf(buf, sizeof(buf), "  %6.1f", 100.0 * *r.val_h);
        out += buf;
      } else {
        out += "       -";
      }
    }
    out += "\n";
  }
  return out;
}

}  // namespace ft
