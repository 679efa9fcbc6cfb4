#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "somno/error.hpp"
#include "somno/forest.hpp"

using namespace somno;

namespace {

struct Blobs {
  std::vector<std::vector<double>> rows;
  std::vector<DisorderClass> labels;
};

// Three Gaussian classes separated along the first two of `d` features.
Blobs blobs(std::size_t per_class, std::size_t d, double spread, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, spread);
  const double centres[3][2] = {{0, 0}, {3, 0}, {0, 3}};
  Blobs b;
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t i = 0; i < per_class; ++i) {
      std::vector<double> x(d);
      for (auto& v : x) v = g(rng);
      x[0] += centres[k][0];
      x[1] += centres[k][1];
      b.rows.push_back(std::move(x));
      b.labels.push_back(static_cast<DisorderClass>(k * 3));
    }
  }
  return b;
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

double gini(const std::array<double, kClassCount>& w) {
  double total = 0.0, sq = 0.0;
  for (double v : w) {
    total += v;
    sq += v * v;
  }
  return total > 0.0 ? 1.0 - sq / (total * total) : 0.0;
}

}  // namespace

TEST_CASE("unbagged full-depth forest memorises distinct training points") {
  const auto b = blobs(30, 5, 1.5, 3);
  ForestParams p;
  p.trees = 5;
  p.bootstrap = false;
  p.max_features = 5;
  const auto f = RandomForest::train(b.rows, b.labels, p);
  for (std::size_t i = 0; i < b.rows.size(); ++i) CHECK(f.predict(b.rows[i]).label == b.labels[i]);
}

TEST_CASE("forest generalises on separated blobs and votes sum to one") {
  const auto train = blobs(60, 6, 0.6, 1);
  const auto test = blobs(30, 6, 0.6, 2);
  ForestParams p;
  p.trees = 40;
  const auto f = RandomForest::train(train.rows, train.labels, p);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < test.rows.size(); ++i) {
    const auto pr = f.predict(test.rows[i]);
    double s = 0.0;
    for (double v : pr.vote_share) s += v;
    CHECK(s == doctest::Approx(1.0));
    ok += pr.label == test.labels[i] ? 1 : 0;
  }
  CHECK(static_cast<double>(ok) / static_cast<double>(test.rows.size()) >= 0.95);
}

TEST_CASE("training is reproducible for a seed") {
  const auto b = blobs(20, 4, 1.0, 5);
  ForestParams p;
  p.trees = 10;
  p.seed = 9;
  const auto a = RandomForest::train(b.rows, b.labels, p);
  const auto c = RandomForest::train(b.rows, b.labels, p);
  CHECK(a.to_json() == c.to_json());
  p.seed = 10;
  CHECK(RandomForest::train(b.rows, b.labels, p).to_json() != a.to_json());
}

TEST_CASE("importance equals the total weighted impurity decrease") {
  // Telescoping: summed node decreases of a tree equal root impurity minus
  // the weight-averaged leaf impurities.
  const auto b = blobs(40, 8, 1.2, 7);
  ForestParams p;
  p.trees = 12;
  p.max_depth = 6;
  const auto f = RandomForest::train(b.rows, b.labels, p);
  double expected = 0.0;
  for (const auto& tree : f.trees()) {
    std::array<double, kClassCount> root{};
    double leaf_term = 0.0;
    for (const auto& node : tree.nodes) {
      if (node.feature >= 0) continue;
      std::array<double, kClassCount> w{};
      double total = 0.0;
      for (std::size_t k = 0; k < kClassCount; ++k) {
        w[k] = node.counts[k] * f.class_weights()[k];
        root[k] += w[k];
        total += w[k];
      }
      leaf_term += total * gini(w);
    }
    double root_total = 0.0;
    for (double v : root) root_total += v;
    expected += (root_total * gini(root) - leaf_term) / root_total;
  }
  expected /= static_cast<double>(f.trees().size());
  double sum = 0.0;
  for (double v : f.importance()) {
    CHECK(v >= 0.0);
    sum += v;
  }
  CHECK(sum == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("importance concentrates on informative features") {
  const auto b = blobs(50, 10, 0.8, 11);
  ForestParams p;
  p.trees = 30;
  const auto f = RandomForest::train(b.rows, b.labels, p);
  const auto& imp = f.importance();
  for (std::size_t j = 2; j < imp.size(); ++j) {
    CHECK(imp[0] > imp[j]);
    CHECK(imp[1] > imp[j]);
  }
}

TEST_CASE("out-of-bag error is non-increasing within 2 percent as trees grow") {
  for (std::uint64_t seed : {13u, 14u, 15u}) {
    const auto b = blobs(300, 6, 1.0, seed);
    ForestParams p;
    p.trees = 50;
    p.seed = seed;
    const auto f = RandomForest::train(b.rows, b.labels, p);
    double prev = f.oob_error(b.rows, b.labels, 1);
    for (std::size_t t : {5u, 10u, 20u, 30u, 40u, 50u}) {
      const double e = f.oob_error(b.rows, b.labels, t);
      CHECK_MESSAGE(e <= prev + 0.02, "seed " << seed << " trees " << t);
      prev = e;
    }
    CHECK(prev < 0.25);
  }
}

TEST_CASE("OOB needs bootstrap records") {
  const auto b = blobs(10, 3, 1.0, 1);
  ForestParams p;
  p.trees = 3;
  p.bootstrap = false;
  const auto f = RandomForest::train(b.rows, b.labels, p);
  CHECK(kind_of([&] { f.oob_error(b.rows, b.labels, 3); }) == ErrorKind::StateError);
}

TEST_CASE("invalid training input is rejected") {
  auto b = blobs(5, 3, 1.0, 1);
  std::vector<DisorderClass> one(b.labels.size(), DisorderClass::Nrm);
  CHECK(kind_of([&] { RandomForest::train(b.rows, one, {}); }) == ErrorKind::DegenerateLabels);
  b.rows[3][1] = std::numeric_limits<double>::quiet_NaN();
  CHECK(kind_of([&] { RandomForest::train(b.rows, b.labels, {}); }) == ErrorKind::InvalidFeature);
  auto c = blobs(5, 3, 1.0, 1);
  c.rows[2].pop_back();
  CHECK(kind_of([&] { RandomForest::train(c.rows, c.labels, {}); }) == ErrorKind::ShapeError);
}

TEST_CASE("JSON round trip preserves predictions and importance") {
  const auto b = blobs(20, 5, 1.0, 17);
  ForestParams p;
  p.trees = 8;
  const auto f = RandomForest::train(b.rows, b.labels, p);
  const auto g = RandomForest::from_json(f.to_json());
  CHECK(g.importance() == f.importance());
  CHECK(g.feature_count() == 5);
  for (const auto& x : b.rows) CHECK(g.predict(x).vote_share == f.predict(x).vote_share);
  CHECK_THROWS_AS(RandomForest::from_json("{\"trees\": 3}"), Error);
}

TEST_CASE("class weighting lifts the minority class") {
  std::mt19937_64 rng(19);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<std::vector<double>> rows;
  std::vector<DisorderClass> labels;
  for (int i = 0; i < 400; ++i) {
    const bool minority = i % 10 == 0;
    rows.push_back({g(rng) + (minority ? 1.2 : 0.0), g(rng)});
    labels.push_back(minority ? DisorderClass::Plm : DisorderClass::Nrm);
  }
  ForestParams p;
  p.trees = 30;
  p.min_leaf = 10;
  auto recall = [&](bool weighted) {
    p.class_weighting = weighted;
    const auto f = RandomForest::train(rows, labels, p);
    int hit = 0, n = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (labels[i] != DisorderClass::Plm) continue;
      ++n;
      hit += f.predict(rows[i]).label == DisorderClass::Plm ? 1 : 0;
    }
    return static_cast<double>(hit) / n;
  };
  CHECK(recall(true) > recall(false));
}
