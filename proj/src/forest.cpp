#include "somno/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <json.hpp>

#include "somno/error.hpp"
#include "somno/hash.hpp"
#include "somno/parallel.hpp"

namespace somno {

using nlohmann::json;

const TreeNode& DecisionTree::leaf_for(std::span<const double> x) const {
  std::size_t n = 0;
  while (nodes[n].feature >= 0) {
    n = x[static_cast<std::size_t>(nodes[n].feature)] <= nodes[n].threshold ? nodes[n].left : nodes[n].right;
  }
  return nodes[n];
}

std::size_t DecisionTree::depth() const {
  if (nodes.empty()) return 0;
  std::vector<std::size_t> d(nodes.size(), 0);
  std::size_t best = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    best = std::max(best, d[i]);
    if (nodes[i].feature >= 0) {
      d[nodes[i].left] = d[i] + 1;
      d[nodes[i].right] = d[i] + 1;
    }
  }
  return best;
}

namespace {

struct TreeBuilder {
  std::span<const std::vector<double>> rows;
  std::span<const std::size_t> labels;
  const std::array<double, kClassCount>& weights;
  const ForestParams& params;
  std::size_t d;
  std::size_t mtry;
  double root_weight = 0.0;
  std::mt19937_64 rng;
  DecisionTree tree;
  std::vector<double> importance;
  std::vector<std::uint32_t> idx;
  std::vector<std::size_t> feature_order;
  std::vector<std::pair<double, std::uint32_t>> scratch;

  static double gini(const std::array<double, kClassCount>& w, double total) {
    if (total <= 0.0) return 0.0;
    double s = 0.0;
    for (double v : w) s += v * v;
    return 1.0 - s / (total * total);
  }

  std::uint32_t make_leaf(std::size_t begin, std::size_t end) {
    TreeNode leaf;
    leaf.counts.assign(kClassCount, 0);
    for (std::size_t i = begin; i < end; ++i) ++leaf.counts[labels[idx[i]]];
    std::size_t best = 0;
    double best_w = -1.0;
    for (std::size_t k = 0; k < kClassCount; ++k) {
      const double w = static_cast<double>(leaf.counts[k]) * weights[k];
      if (w > best_w) {
        best_w = w;
        best = k;
      }
    }
    leaf.leaf_class = static_cast<std::uint8_t>(best);
    tree.nodes.push_back(std::move(leaf));
    return static_cast<std::uint32_t>(tree.nodes.size() - 1);
  }

  std::uint32_t build(std::size_t begin, std::size_t end, std::size_t depth) {
    const std::size_t count = end - begin;
    std::array<double, kClassCount> wc{};
    std::size_t classes = 0;
    for (std::size_t i = begin; i < end; ++i) wc[labels[idx[i]]] += weights[labels[idx[i]]];
    double total = 0.0;
    for (double v : wc) {
      total += v;
      classes += v > 0.0 ? 1 : 0;
    }
    if (classes <= 1 || count < 2 * params.min_leaf || (params.max_depth > 0 && depth >= params.max_depth)) {
      return make_leaf(begin, end);
    }
    const double parent = gini(wc, total);

    double best_imp = std::numeric_limits<double>::infinity();
    std::size_t best_feature = 0;
    double best_thr = 0.0;
    bool found = false;
    // Partial Fisher-Yates: keep drawing until mtry features were tried and a valid split exists.
    std::size_t tried = 0;
    for (std::size_t f = 0; f < d; ++f) {
      if (tried >= mtry && found) break;
      std::uniform_int_distribution<std::size_t> pick(f, d - 1);
      std::swap(feature_order[f], feature_order[pick(rng)]);
      const std::size_t feat = feature_order[f];
      ++tried;
      scratch.clear();
      for (std::size_t i = begin; i < end; ++i) scratch.emplace_back(rows[idx[i]][feat], idx[i]);
      std::sort(scratch.begin(), scratch.end());
      if (scratch.front().first == scratch.back().first) continue;
      std::array<double, kClassCount> left{};
      double wl = 0.0;
      double sql = 0.0;
      double sqr = 0.0;
      for (double v : wc) sqr += v * v;
      std::array<double, kClassCount> right = wc;
      for (std::size_t i = 0; i + 1 < count; ++i) {
        const std::size_t k = labels[scratch[i].second];
        const double w = weights[k];
        sql += 2.0 * left[k] * w + w * w;
        sqr += -2.0 * right[k] * w + w * w;
        left[k] += w;
        right[k] -= w;
        wl += w;
        if (scratch[i].first == scratch[i + 1].first) continue;
        if (i + 1 < params.min_leaf || count - i - 1 < params.min_leaf) continue;
        const double wr = total - wl;
        const double gl = wl > 0.0 ? 1.0 - sql / (wl * wl) : 0.0;
        const double gr = wr > 0.0 ? 1.0 - sqr / (wr * wr) : 0.0;
        const double imp = (wl * gl + wr * gr) / total;
        if (imp < best_imp) {
          best_imp = imp;
          best_feature = feat;
          const double lo = scratch[i].first;
          const double hi = scratch[i + 1].first;
          double mid = lo + (hi - lo) / 2.0;
          if (!(mid < hi)) mid = lo;
          best_thr = mid;
          found = true;
        }
      }
    }
    if (!found) return make_leaf(begin, end);

    const auto mid_it = std::partition(idx.begin() + static_cast<std::ptrdiff_t>(begin),
                                       idx.begin() + static_cast<std::ptrdiff_t>(end),
                                       [&](std::uint32_t r) { return rows[r][best_feature] <= best_thr; });
    const std::size_t split = static_cast<std::size_t>(mid_it - idx.begin());
    importance[best_feature] += (total / root_weight) * std::max(0.0, parent - best_imp);

    const std::uint32_t self = static_cast<std::uint32_t>(tree.nodes.size());
    TreeNode node;
    node.feature = static_cast<std::int32_t>(best_feature);
    node.threshold = best_thr;
    tree.nodes.push_back(node);
    const std::uint32_t l = build(begin, split, depth + 1);
    const std::uint32_t r = build(split, end, depth + 1);
    tree.nodes[self].left = l;
    tree.nodes[self].right = r;
    return self;
  }
};

}  // namespace

RandomForest RandomForest::train(std::span<const std::vector<double>> rows, std::span<const DisorderClass> labels,
                                 const ForestParams& params) {
  require(rows.size() == labels.size(), ErrorKind::ShapeError, "one label per row required");
  require(!rows.empty(), ErrorKind::EmptyDataset, "no training rows");
  require(params.trees >= 1, ErrorKind::ConfigError, "forest needs at least one tree");
  require(params.min_leaf >= 1, ErrorKind::ConfigError, "min_leaf must be at least 1");
  const std::size_t d = rows.front().size();
  require(d >= 1, ErrorKind::ShapeError, "feature vectors are empty");
  for (const auto& r : rows) {
    require(r.size() == d, ErrorKind::ShapeError, "feature vectors differ in length");
    for (double v : r) require(std::isfinite(v), ErrorKind::InvalidFeature, "non-finite feature value");
  }
  std::vector<std::size_t> y(labels.size());
  std::array<std::size_t, kClassCount> counts{};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    y[i] = index_of(labels[i]);
    ++counts[y[i]];
  }
  std::size_t present = 0;
  for (auto c : counts) present += c > 0 ? 1 : 0;
  require(present >= 2, ErrorKind::DegenerateLabels, "random forest needs at least two classes");

  RandomForest forest;
  forest.params_ = params;
  forest.n_features_ = d;
  for (std::size_t k = 0; k < kClassCount; ++k) {
    if (counts[k] == 0) continue;
    forest.class_weights_[k] = params.class_weighting
                                   ? static_cast<double>(rows.size()) / (static_cast<double>(present) * static_cast<double>(counts[k]))
                                   : 1.0;
  }
  const std::size_t mtry = params.max_features > 0
                               ? std::min(params.max_features, d)
                               : std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(d)))));

  forest.trees_.resize(params.trees);
  forest.bag_counts_.resize(params.trees);
  std::vector<std::vector<double>> per_tree_importance(params.trees);
  parallel_for(params.trees, [&](std::size_t t) {
    TreeBuilder b{rows, y, forest.class_weights_, params, d, mtry, 0.0, {}, {}, {}, {}, {}, {}};
    b.rng.seed(mix_seed({params.seed, t, 0x524647ULL}));
    b.importance.assign(d, 0.0);
    b.feature_order.resize(d);
    std::iota(b.feature_order.begin(), b.feature_order.end(), std::size_t{0});
    auto& bag = forest.bag_counts_[t];
    bag.assign(rows.size(), 0);
    if (params.bootstrap) {
      std::uniform_int_distribution<std::size_t> draw(0, rows.size() - 1);
      for (std::size_t i = 0; i < rows.size(); ++i) ++bag[draw(b.rng)];
    } else {
      std::fill(bag.begin(), bag.end(), 1u);
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::uint32_t c = 0; c < bag[i]; ++c) b.idx.push_back(static_cast<std::uint32_t>(i));
    }
    for (auto i : b.idx) b.root_weight += forest.class_weights_[y[i]];
    b.build(0, b.idx.size(), 0);
    forest.trees_[t] = std::move(b.tree);
    per_tree_importance[t] = std::move(b.importance);
  });

  forest.importance_.assign(d, 0.0);
  for (const auto& imp : per_tree_importance) {
    for (std::size_t f = 0; f < d; ++f) forest.importance_[f] += imp[f];
  }
  for (auto& v : forest.importance_) v /= static_cast<double>(params.trees);
  return forest;
}

ForestPrediction RandomForest::predict(std::span<const double> x) const {
  require(!trees_.empty(), ErrorKind::StateError, "forest is not trained");
  require(x.size() == n_features_, ErrorKind::ShapeError,
          "expected " + std::to_string(n_features_) + " features, got " + std::to_string(x.size()));
  ForestPrediction p;
  for (const auto& t : trees_) p.vote_share[t.leaf_for(x).leaf_class] += 1.0;
  std::size_t best = 0;
  for (std::size_t k = 0; k < kClassCount; ++k) {
    p.vote_share[k] /= static_cast<double>(trees_.size());
    if (p.vote_share[k] > p.vote_share[best]) best = k;
  }
  p.label = static_cast<DisorderClass>(best);
  return p;
}

double RandomForest::oob_error(std::span<const std::vector<double>> rows, std::span<const DisorderClass> labels,
                               std::size_t tree_count) const {
  require(!bag_counts_.empty() && params_.bootstrap, ErrorKind::StateError,
          "out-of-bag error needs a bootstrapped forest trained in this session");
  require(rows.size() == bag_counts_.front().size() && labels.size() == rows.size(), ErrorKind::ShapeError,
          "out-of-bag error must use the training rows");
  tree_count = std::min(tree_count, trees_.size());
  std::size_t scored = 0;
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::array<std::size_t, kClassCount> votes{};
    std::size_t n = 0;
    for (std::size_t t = 0; t < tree_count; ++t) {
      if (bag_counts_[t][i] != 0) continue;
      ++votes[trees_[t].leaf_for(rows[i]).leaf_class];
      ++n;
    }
    if (n == 0) continue;
    ++scored;
    const auto best = static_cast<std::size_t>(std::max_element(votes.begin(), votes.end()) - votes.begin());
    wrong += best != index_of(labels[i]) ? 1 : 0;
  }
  require(scored > 0, ErrorKind::StateError, "no out-of-bag rows for this tree count");
  return static_cast<double>(wrong) / static_cast<double>(scored);
}

std::string RandomForest::to_json() const {
  json j;
  j["kind"] = "rf";
  j["params"] = {{"trees", params_.trees},           {"max_depth", params_.max_depth},
                 {"min_leaf", params_.min_leaf},     {"max_features", params_.max_features},
                 {"bootstrap", params_.bootstrap},   {"class_weighting", params_.class_weighting},
                 {"seed", params_.seed}};
  j["n_features"] = n_features_;
  j["class_weights"] = class_weights_;
  j["importance"] = importance_;
  json trees = json::array();
  for (const auto& t : trees_) {
    json jt;
    std::vector<std::int32_t> feature;
    std::vector<double> threshold;
    std::vector<std::uint32_t> left;
    std::vector<std::uint32_t> right;
    std::vector<std::uint32_t> leaf_class;
    json counts = json::array();
    for (const auto& n : t.nodes) {
      feature.push_back(n.feature);
      threshold.push_back(n.threshold);
      left.push_back(n.left);
      right.push_back(n.right);
      leaf_class.push_back(n.leaf_class);
      counts.push_back(n.counts);
    }
    jt["feature"] = feature;
    jt["threshold"] = threshold;
    jt["left"] = left;
    jt["right"] = right;
    jt["leaf_class"] = leaf_class;
    jt["counts"] = counts;
    trees.push_back(std::move(jt));
  }
  j["trees"] = std::move(trees);
  return j.dump();
}

RandomForest RandomForest::from_json(const std::string& text) {
  RandomForest f;
  try {
    const json j = json::parse(text);
    require(j.at("kind") == "rf", ErrorKind::FormatError, "not a random forest model");
    const auto& p = j.at("params");
    f.params_.trees = p.at("trees");
    f.params_.max_depth = p.at("max_depth");
    f.params_.min_leaf = p.at("min_leaf");
    f.params_.max_features = p.at("max_features");
    f.params_.bootstrap = p.at("bootstrap");
    f.params_.class_weighting = p.at("class_weighting");
    f.params_.seed = p.at("seed");
    f.n_features_ = j.at("n_features");
    f.class_weights_ = j.at("class_weights").get<std::array<double, kClassCount>>();
    f.importance_ = j.at("importance").get<std::vector<double>>();
    for (const auto& jt : j.at("trees")) {
      DecisionTree t;
      const auto feature = jt.at("feature").get<std::vector<std::int32_t>>();
      const auto threshold = jt.at("threshold").get<std::vector<double>>();
      const auto left = jt.at("left").get<std::vector<std::uint32_t>>();
      const auto right = jt.at("right").get<std::vector<std::uint32_t>>();
      const auto leaf_class = jt.at("leaf_class").get<std::vector<std::uint32_t>>();
      const auto counts = jt.at("counts").get<std::vector<std::vector<std::uint32_t>>>();
      const std::size_t n = feature.size();
      require(n >= 1 && threshold.size() == n && left.size() == n && right.size() == n && leaf_class.size() == n &&
                  counts.size() == n,
              ErrorKind::FormatError, "tree arrays differ in length");
      for (std::size_t i = 0; i < n; ++i) {
        TreeNode node{feature[i], threshold[i], left[i], right[i], static_cast<std::uint8_t>(leaf_class[i]), counts[i]};
        if (node.feature >= 0) {
          require(static_cast<std::size_t>(node.feature) < f.n_features_ && node.left > i && node.right > i &&
                      node.left < n && node.right < n,
                  ErrorKind::FormatError, "tree node out of range");
        } else {
          require(leaf_class[i] < kClassCount, ErrorKind::FormatError, "leaf class out of range");
        }
        t.nodes.push_back(std::move(node));
      }
      f.trees_.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::FormatError, std::string("malformed forest: ") + e.what());
  }
  require(!f.trees_.empty(), ErrorKind::FormatError, "forest has no trees");
  return f;
}

}  // namespace somno
