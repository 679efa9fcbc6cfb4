#include <doctest.h>

#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "../support/oracles.hpp"
#include "somno/error.hpp"
#include "somno/eval.hpp"

using namespace somno;

namespace {

// Feature-only dataset: `classes` Gaussian clusters, `groups` recordings per class.
Dataset feature_dataset(std::size_t per_class, std::size_t classes, std::uint64_t seed, std::size_t groups = 1,
                        double spread = 0.5) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, spread);
  Dataset ds;
  for (std::size_t k = 0; k < classes; ++k) {
    for (std::size_t i = 0; i < per_class; ++i) {
      std::vector<double> x(6);
      for (auto& v : x) v = g(rng);
      x[k % 6] += 3.0;
      if (k >= 6) x[(k + 1) % 6] += 3.0;
      const auto label = kDataClasses[k];
      const std::string group = std::string(class_code(label)) + "-" + std::to_string(i % groups);
      ds.samples.push_back({group + ":" + std::to_string(i), group, label});
      ds.features.push_back(std::move(x));
    }
  }
  return ds;
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::InvariantBreach;
}

}  // namespace

TEST_CASE("100 epochs per class split into 20 test and 16 per fold") {
  const auto ds = feature_dataset(100, 8, 1);
  const auto plan = make_split(ds, 3);
  const auto counts_test = ds.class_counts(plan.test_rows());
  for (std::size_t k = 0; k < 8; ++k) CHECK(counts_test[k] == 20);
  for (std::size_t f = 0; f < 5; ++f) {
    const auto fold = plan.fold_rows(f);
    const auto counts = ds.class_counts(fold);
    for (std::size_t k = 0; k < 8; ++k) CHECK(counts[k] == 16);
    CHECK(plan.fold_train_rows(f).size() == 8 * 64);
  }
  std::set<std::size_t> all;
  for (auto r : plan.test_rows()) CHECK(all.insert(r).second);
  for (std::size_t f = 0; f < 5; ++f)
    for (auto r : plan.fold_rows(f)) CHECK(all.insert(r).second);
  CHECK(all.size() == ds.size());
}

TEST_CASE("splits are seeded") {
  const auto ds = feature_dataset(30, 3, 2);
  CHECK(make_split(ds, 5).assignment == make_split(ds, 5).assignment);
  CHECK(make_split(ds, 5).assignment != make_split(ds, 6).assignment);
}

TEST_CASE("recording-wise split never shares a recording") {
  const auto ds = feature_dataset(40, 4, 3, 5);
  SplitOptions o;
  o.mode = SplitMode::Recording;
  const auto plan = make_split(ds, 1, o);
  std::set<std::string> test_groups;
  for (auto r : plan.test_rows()) test_groups.insert(ds.samples[r].group);
  CHECK_FALSE(test_groups.empty());
  for (auto r : plan.train_rows()) CHECK(test_groups.count(ds.samples[r].group) == 0);
  const auto single = feature_dataset(40, 3, 3, 1);
  CHECK(kind_of([&] { make_split(single, 1, o); }) == ErrorKind::StratificationError);
}

TEST_CASE("tiny classes cannot be stratified") {
  auto ds = feature_dataset(30, 3, 4);
  ds.samples.resize(65);
  ds.features.resize(65);
  CHECK(kind_of([&] { make_split(ds, 1); }) == ErrorKind::StratificationError);
  SplitOptions bad;
  bad.test_fraction = 1.0;
  CHECK(kind_of([&] { make_split(feature_dataset(30, 3, 4), 1, bad); }) == ErrorKind::ConfigError);
}

TEST_CASE("two-class confusion matrix reference values") {
  ConfusionMatrix m;
  m.add(DisorderClass::Bru, DisorderClass::Bru, 8);
  m.add(DisorderClass::Bru, DisorderClass::Ins, 2);
  m.add(DisorderClass::Ins, DisorderClass::Bru, 1);
  m.add(DisorderClass::Ins, DisorderClass::Ins, 9);
  CHECK(sensitivity(m, DisorderClass::Bru).value == doctest::Approx(0.8));
  CHECK(specificity(m, DisorderClass::Bru).value == doctest::Approx(0.9));
  const auto absent = sensitivity(m, DisorderClass::Sbd);
  CHECK_FALSE(absent.defined);
  CHECK(std::isnan(absent.value));
  CHECK(specificity(m, DisorderClass::Sbd).value == 1.0);
}

TEST_CASE("per-class rates equal exact rational oracles") {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<std::uint64_t> cell(0, 40);
  for (int trial = 0; trial < 100; ++trial) {
    ConfusionMatrix m;
    for (auto& row : m.counts)
      for (auto& v : row) v = trial % 5 == 0 && cell(rng) < 15 ? 0 : cell(rng);
    for (std::size_t c = 0; c < kClassCount; ++c) {
      const auto cls = static_cast<DisorderClass>(c);
      const auto s = oracle::sensitivity(m.counts, c);
      const auto p = oracle::specificity(m.counts, c);
      const auto gs = sensitivity(m, cls);
      const auto gp = specificity(m, cls);
      CHECK(gs.defined == (s.den > 0));
      CHECK(gp.defined == (p.den > 0));
      if (s.den > 0) CHECK(gs.value == static_cast<double>(s.num) / static_cast<double>(s.den));
      if (p.den > 0) CHECK(gp.value == static_cast<double>(p.num) / static_cast<double>(p.den));
    }
  }
}

TEST_CASE("uniform random predictions give macro sensitivity near 1/9") {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<std::size_t> any(0, kClassCount - 1);
  const std::size_t per_class = 2000;
  std::vector<DisorderClass> truth, pred;
  for (std::size_t k = 0; k < kClassCount; ++k)
    for (std::size_t i = 0; i < per_class; ++i) {
      truth.push_back(static_cast<DisorderClass>(k));
      pred.push_back(static_cast<DisorderClass>(any(rng)));
    }
  EvalReport r;
  r.confusion = confusion_of(truth, pred);
  summarize(r);
  const double p = 1.0 / 9.0;
  const double sigma = std::sqrt(p * (1 - p) / static_cast<double>(per_class) / 9.0);
  CHECK(std::abs(r.macro_sensitivity - p) < 3.0 * sigma);
}

TEST_CASE("reports list every class slot and write NaN as null") {
  EvalReport r;
  r.model_id = "m";
  r.confusion.add(DisorderClass::Bru, DisorderClass::Bru, 3);
  r.confusion.add(DisorderClass::Nrm, DisorderClass::Bru, 1);
  summarize(r);
  CHECK(r.classes.size() == kClassCount);
  CHECK(r.find(DisorderClass::Nrm)->sensitivity.value == 0.0);
  CHECK_FALSE(r.find(DisorderClass::Plm)->sensitivity.defined);
  CHECK(r.macro_sensitivity == doctest::Approx(0.5));
  CHECK(r.macro_specificity == doctest::Approx((0.0 + 1.0) / 2.0));
  std::ostringstream js, csv, table;
  write_report_json(js, r);
  write_class_csv(csv, r);
  write_report_table(table, r);
  CHECK(js.str().find("null") != std::string::npos);
  std::size_t lines = 0;
  for (char ch : csv.str()) lines += ch == '\n' ? 1 : 0;
  CHECK(lines == kClassCount + 1);
  CHECK(csv.str().find("Plm,NaN,1.000000") != std::string::npos);
  CHECK(table.str().find("n/a") != std::string::npos);
}

TEST_CASE("protocol runs folds, retrains and is reproducible") {
  const auto ds = feature_dataset(40, 8, 5, 1, 0.6);
  ProtocolOptions o;
  o.model.kind = ModelKind::Rf;
  o.model.rf.trees = 20;
  o.seed = 2;
  const auto a = run_protocol(ds, o);
  const auto b = run_protocol(ds, o);
  CHECK(a.report.folds.size() == 5);
  CHECK(a.report.test_size == 8 * 8);
  CHECK(a.report.train_size == 8 * 32);
  CHECK(a.report.accuracy > 0.9);
  std::ostringstream ja, jb;
  write_report_json(ja, a.report);
  write_report_json(jb, b.report);
  CHECK(ja.str() == jb.str());
  REQUIRE(a.final_model);
  const auto again = evaluate_model(*a.final_model, ds, a.plan.test_rows());
  CHECK(again.confusion.counts == a.report.confusion.counts);
}

TEST_CASE("protocol without cross-validation skips the folds") {
  const auto ds = feature_dataset(20, 3, 6);
  ProtocolOptions o;
  o.model.kind = ModelKind::Svm;
  o.cross_validate = false;
  const auto r = run_protocol(ds, o);
  CHECK(r.report.folds.empty());
  CHECK(r.report.accuracy > 0.9);
}

TEST_CASE("split and model names parse") {
  CHECK(parse_split_mode("recording") == SplitMode::Recording);
  CHECK(parse_model_kind("dl-r") == ModelKind::DlR);
  CHECK(parse_model_kind("svm") == ModelKind::Svm);
  CHECK_THROWS_AS(parse_model_kind("cnn"), Error);
  CHECK_THROWS_AS(parse_split_mode("subject-ish"), Error);
}
