#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "somno/signals.hpp"

namespace somno {

struct ForestParams {
  std::size_t trees = 100;
  std::size_t max_depth = 0;     // 0 = unlimited
  std::size_t min_leaf = 1;
  std::size_t max_features = 0;  // 0 = floor(sqrt(d))
  bool bootstrap = true;
  bool class_weighting = true;   // inverse-frequency weights in split impurity and leaf votes
  std::uint64_t seed = 1;
};

struct TreeNode {
  std::int32_t feature = -1;  // -1 marks a leaf
  double threshold = 0.0;     // x[feature] <= threshold goes left
  std::uint32_t left = 0;
  std::uint32_t right = 0;
  std::uint8_t leaf_class = 0;
  std::vector<std::uint32_t> counts;  // leaf only: raw training counts per class slot
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  const TreeNode& leaf_for(std::span<const double> x) const;
  std::size_t depth() const;
};

struct ForestPrediction {
  DisorderClass label = DisorderClass::Nrm;
  std::array<double, kClassCount> vote_share{};
};

class RandomForest {
 public:
  RandomForest() = default;

  // rows: feature vectors; labels: class slot per row. Throws DegenerateLabels
  // for fewer than two classes, InvalidFeature for non-finite values.
  static RandomForest train(std::span<const std::vector<double>> rows, std::span<const DisorderClass> labels,
                            const ForestParams& params);

  ForestPrediction predict(std::span<const double> x) const;
  std::size_t feature_count() const { return n_features_; }
  const std::vector<DecisionTree>& trees() const { return trees_; }
  const ForestParams& params() const { return params_; }
  const std::array<double, kClassCount>& class_weights() const { return class_weights_; }

  // Per feature: sum over splitting nodes of p(node) * Gini decrease, where
  // p(node) is the node's share of the tree's (class-weighted) bootstrap
  // weight; averaged over trees and not normalised.
  const std::vector<double>& importance() const { return importance_; }
  bool has_importance() const { return !importance_.empty(); }

  // Out-of-bag error of the first `tree_count` trees on the training data.
  // Needs the bag records kept from training; throws StateError otherwise.
  double oob_error(std::span<const std::vector<double>> rows, std::span<const DisorderClass> labels,
                   std::size_t tree_count) const;

  std::string to_json() const;
  static RandomForest from_json(const std::string& text);

 private:
  ForestParams params_;
  std::size_t n_features_ = 0;
  std::array<double, kClassCount> class_weights_{};
  std::vector<DecisionTree> trees_;
  std::vector<double> importance_;
  std::vector<std::vector<std::uint32_t>> bag_counts_;  // per tree, per training row
};

}  // namespace somno
