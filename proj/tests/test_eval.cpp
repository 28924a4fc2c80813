#include "ft/eval.hpp"

#include <cmath>
#include <stdexcept>

#include "doctest.h"

using ft::ClassId;
using ft::ClassPartition;
using ft::EvalReport;
using ft::Predictions;
using ft::Role;
using ft::TrackTruth;

namespace {

// 2 seen, 1 val-extra, 2 unseen classes.
ClassPartition partition5() {
  ClassPartition p;
  p.classes = {{0, "s0", Role::seen},
               {1, "s1", Role::seen},
               {2, "v0", Role::val_extra},
               {3, "u0", Role::unseen},
               {4, "u1", Role::unseen}};
  return p;
}

}  // namespace

TEST_SUITE_BEGIN("eval");

TEST_CASE("harmonic mean reproduces published-style accuracy pairs") {
  CHECK(ft::harmonic_mean(29.3, 25.5) == doctest::Approx(27.3).epsilon(0.002));
  CHECK(ft::harmonic_mean(2.5, 4.1) == doctest::Approx(3.1).epsilon(0.02));
  CHECK(ft::harmonic_mean(39.6, 32.2) == doctest::Approx(35.52).epsilon(1e-3));
}

TEST_CASE("harmonic mean: zero annihilates, equal inputs pass through") {
  CHECK(ft::harmonic_mean(0.0, 0.0) == 0.0);
  CHECK(ft::harmonic_mean(50.0, 0.0) == 0.0);
  CHECK(ft::harmonic_mean(0.0, 12.5) == 0.0);
  CHECK(ft::harmonic_mean(33.3, 33.3) == doctest::Approx(33.3));
  CHECK(ft::harmonic_mean(1.0, 1.0) == doctest::Approx(1.0));
  CHECK_THROWS_AS(ft::harmonic_mean(-1.0, 2.0), std::invalid_argument);
}

TEST_CASE("harmonic mean never exceeds the arithmetic mean") {
  for (double a = 0; a <= 1.0; a += 0.13)
    for (double b = 0; b <= 1.0; b += 0.17)
      CHECK(ft::harmonic_mean(a, b) <= (a + b) / 2 + 1e-12);
}

TEST_CASE("per-class accuracy averages classes, not tracks") {
  const ClassPartition p = partition5();
  Predictions preds;
  TrackTruth truth;
  // class 0: 10 tracks, all correct; class 3: 1 track, wrong
  for (int i = 0; i < 10; ++i) {
    preds["a" + std::to_string(i)] = 0;
    truth["a" + std::to_string(i)] = 0;
  }
  preds["b0"] = 0;
  truth["b0"] = 3;
  const auto acc = ft::per_class_accuracy(preds, truth, p);
  CHECK(acc.at(0) == doctest::Approx(1.0));
  CHECK(acc.at(3) == doctest::Approx(0.0));
  // pooled accuracy would be 10/11; the class mean is 0.5
  const EvalReport report = ft::gzsl_report(preds, truth, p);
  CHECK(report.seen_acc == doctest::Approx(1.0));
  CHECK(report.unseen_acc == doctest::Approx(0.0));
  CHECK(report.harmonic == doctest::Approx(0.0));
}

TEST_CASE("a seen-only predictor scores harmonic zero") {
  const ClassPartition p = partition5();
  Predictions preds;
  TrackTruth truth;
  // perfect on seen classes...
  preds["s0"] = 0; truth["s0"] = 0;
  preds["s1"] = 1; truth["s1"] = 1;
  // ...but answers a seen class for every unseen track
  preds["u0"] = 0; truth["u0"] = 3;
  preds["u1"] = 1; truth["u1"] = 4;
  const EvalReport report = ft::gzsl_report(preds, truth, p);
  CHECK(report.seen_acc == doctest::Approx(1.0));
  CHECK(report.unseen_acc == doctest::Approx(0.0));
  CHECK(report.harmonic == 0.0);
}

TEST_CASE("a balanced predictor is rewarded by the harmonic") {
  const ClassPartition p = partition5();
  Predictions preds;
  TrackTruth truth;
  int n = 0;
  auto add = [&](ClassId actual, ClassId predicted) {
    const std::string id = "t" + std::to_string(n++);
    preds[id] = predicted;
    truth[id] = actual;
  };
  // seen: 3/4 correct; unseen: 1/2 correct per class
  add(0, 0); add(0, 0); add(1, 1); add(1, 0);
  add(3, 3); add(3, 0); add(4, 4); add(4, 1);
  const EvalReport r = ft::gzsl_report(preds, truth, p);
  CHECK(r.seen_acc == doctest::Approx(0.75));
  CHECK(r.unseen_acc == doctest::Approx(0.5));
  CHECK(r.harmonic == doctest::Approx(0.6));
  CHECK(r.class_counts.at(0) == 2);
  CHECK(r.excluded_classes.empty());
}

TEST_CASE("classes without scored tracks are excluded and listed") {
  const ClassPartition p = partition5();
  Predictions preds;
  TrackTruth truth;
  preds["a"] = 0; truth["a"] = 0;
  preds["b"] = 3; truth["b"] = 3;  // class 4 never appears
  const EvalReport r = ft::gzsl_report(preds, truth, p);
  CHECK(r.seen_acc == doctest::Approx(1.0));   // class 1 excluded
  CHECK(r.unseen_acc == doctest::Approx(1.0)); // class 4 excluded
  REQUIRE(r.excluded_classes.size() == 2);
  CHECK(r.excluded_classes[0] == 1);
  CHECK(r.excluded_classes[1] == 4);
}

TEST_CASE("report errors: unknown tracks, foreign classes, one-sided data") {
  const ClassPartition p = partition5();
  Predictions preds;
  TrackTruth truth;
  preds["x"] = 0;
  CHECK_THROWS_WITH_AS(ft::gzsl_report(preds, truth, p),
                       doctest::Contains("unknown track"),
                       std::invalid_argument);
  truth["x"] = 99;
  CHECK_THROWS_AS(ft::gzsl_report(preds, truth, p), std::invalid_argument);
  truth["x"] = 0;
  // only seen tracks scored: no unseen coverage
  CHECK_THROWS_WITH_AS(ft::gzsl_report(preds, truth, p),
                       doctest::Contains("unseen"), std::invalid_argument);
}

TEST_CASE("a declared label-space restriction is rejected") {
  const ClassPartition p = partition5();
  Predictions preds;
  TrackTruth truth;
  preds["a"] = 0; truth["a"] = 0;
  preds["b"] = 3; truth["b"] = 3;
  const std::vector<ClassId> subset = {0, 1, 2};  // missing unseen ids
  CHECK_THROWS_WITH_AS(ft::gzsl_report(preds, truth, p, subset),
                       doctest::Contains("restricted"),
                       std::invalid_argument);
  const std::vector<ClassId> full = {0, 1, 2, 3, 4};
  CHECK_NOTHROW(ft::gzsl_report(preds, truth, p, full));
}

TEST_CASE("metrics are invariant under a relabeling bijection") {
  const ClassPartition p = partition5();
  Predictions preds;
  TrackTruth truth;
  int n = 0;
  auto add = [&](ClassId actual, ClassId predicted) {
    const std::string id = "t" + std::to_string(n++);
    preds[id] = predicted;
    truth[id] = actual;
  };
  add(0, 0); add(1, 0); add(3, 3); add(4, 0); add(2, 2);
  const EvalReport base = ft::gzsl_report(preds, truth, p);

  auto relabel = [](ClassId id) { return static_cast<ClassId>(7 * id + 3); };
  ClassPartition p2;
  for (const auto& e : p.classes)
    p2.classes.push_back({relabel(e.id), e.name, e.role});
  Predictions preds2;
  TrackTruth truth2;
  for (const auto& [k, v] : preds) preds2[k] = relabel(v);
  for (const auto& [k, v] : truth) truth2[k] = relabel(v);
  const EvalReport mapped = ft::gzsl_report(preds2, truth2, p2);
  CHECK(mapped.seen_acc == doctest::Approx(base.seen_acc).epsilon(1e-12));
  CHECK(mapped.unseen_acc == doctest::Approx(base.unseen_acc).epsilon(1e-12));
  CHECK(mapped.harmonic == doctest::Approx(base.harmonic).epsilon(1e-12));
}

TEST_CASE("validation harmonic pairs seen with val-extra classes") {
  const ClassPartition p = partition5();
  Predictions preds;
  TrackTruth truth;
  preds["a"] = 0; truth["a"] = 0;   // seen correct
  preds["b"] = 1; truth["b"] = 1;   // seen correct
  preds["c"] = 0; truth["c"] = 2;   // val-extra wrong
  preds["d"] = 2; truth["d"] = 2;   // val-extra correct
  const double h = ft::validation_harmonic(preds, truth, p);
  CHECK(h == doctest::Approx(ft::harmonic_mean(1.0, 0.5)).epsilon(1e-12));
  // without val-extra tracks the signal falls back to the seen mean
  Predictions seen_only{{"a", ClassId(0)}, {"b", ClassId(0)}};
  TrackTruth seen_truth{{"a", ClassId(0)}, {"b", ClassId(1)}};
  CHECK(ft::validation_harmonic(seen_only, seen_truth, p) ==
        doctest::Approx(0.5));
}

TEST_CASE("aggregate: identical runs have zero spread") {
  const ClassPartition p = partition5();
  EvalReport r;
  r.method = "affine+avgpool";
  r.seen_acc = 0.4;
  r.unseen_acc = 0.3;
  r.harmonic = ft::harmonic_mean(0.4, 0.3);
  r.partition_fingerprint = p.fingerprint();
  const auto agg = ft::multi_seed_aggregate({r, r, r});
  CHECK(agg.runs == 3);
  CHECK(agg.seen_mean == doctest::Approx(0.4));
  CHECK(agg.seen_std == doctest::Approx(0.0));
  CHECK_FALSE(agg.degenerate);
}

TEST_CASE("aggregate: hand-worked mean and n-1 standard deviation") {
  EvalReport a, b;
  a.method = b.method = "m";
  a.harmonic = 0.30;
  b.harmonic = 0.40;
  const auto agg = ft::multi_seed_aggregate({a, b});
  CHECK(agg.harmonic_mean_value == doctest::Approx(0.35));
  CHECK(agg.harmonic_std ==
        doctest::Approx(std::sqrt(2 * 0.05 * 0.05 / 1.0)).epsilon(1e-9));
}

TEST_CASE("aggregate: single report is flagged degenerate") {
  EvalReport r;
  r.method = "m";
  const auto agg = ft::multi_seed_aggregate({r});
  CHECK(agg.degenerate);
  CHECK(agg.harmonic_std == 0.0);
}

TEST_CASE("aggregate refuses mixed methods or partitions") {
  EvalReport a, b;
  a.method = "m1";
  b.method = "m2";
  CHECK_THROWS_AS(ft::multi_seed_aggregate({a, b}), std::invalid_argument);
  b.method = "m1";
  b.partition_fingerprint = 1;
  CHECK_THROWS_WITH_AS(ft::multi_seed_aggregate({a, b}),
                       doctest::Contains("partition"), std::invalid_argument);
}

TEST_CASE("report JSON round-trips and keeps its schema keys") {
  EvalReport r;
  r.method = "rsa+atp";
  r.seed = 7;
  r.seen_acc = 0.353;
  r.unseen_acc = 0.303;
  r.harmonic = ft::harmonic_mean(r.seen_acc, r.unseen_acc);
  r.per_class = {{0, 1.0}, {3, 0.25}};
  r.class_counts = {{0, 4}, {3, 8}};
  r.excluded_classes = {4};
  r.partition_fingerprint = 12345;
  const std::string text = r.to_json();
  for (const char* key :
       {"method", "seed", "seen_acc", "unseen_acc", "harmonic", "per_class",
        "excluded_classes"})
    CHECK(text.find(key) != std::string::npos);
  const EvalReport back = EvalReport::from_json(text);
  CHECK(back.method == r.method);
  CHECK(back.seed == r.seed);
  CHECK(back.harmonic == doctest::Approx(r.harmonic).epsilon(1e-12));
  CHECK(back.per_class == r.per_class);
  CHECK(back.excluded_classes == r.excluded_classes);
  CHECK(back.partition_fingerprint == r.partition_fingerprint);
}

TEST_CASE("rendered table formats percentages with one decimal") {
  std::vector<ft::TableRow> rows;
  rows.push_back({"none+avgpool", 0.293, 0.255, 0.27268, std::nullopt});
  rows.push_back({"affine+avgpool", 0.396, 0.322, 0.3552, 0.365});
  const std::string table = ft::render_table(rows);
  CHECK(table.find("none+avgpool") != std::string::npos);
  CHECK(table.find("29.3") != std::string::npos);
  CHECK(table.find("27.3") != std::string::npos);
  CHECK(table.find("35.5") != std::string::npos);
  CHECK(table.find("36.5") != std::string::npos);
  CHECK(table.find("val-h") != std::string::npos);
}

TEST_SUITE_END();
