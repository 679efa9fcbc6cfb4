#pragma once

// Central finite-difference check of the autodiff engine. A random linear
// functional of the op output turns every op into a scalar loss.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "somno/autodiff.hpp"

namespace gradcheck {

using somno::ad::Graph;
using somno::ad::NodeId;
using somno::ad::Tensor;

using Builder = std::function<NodeId(Graph&, const std::vector<NodeId>&)>;

struct Result {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

inline Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> g(0.0, scale);
  for (auto& v : t.storage()) v = g(rng);
  return t;
}

// Evaluates sum(w * op(operands)) with a fresh graph per call so that
// training-mode randomness (dropout) repeats exactly.
inline double evaluate(const Builder& build, const std::vector<Tensor>& operands, const Tensor& w, bool training,
                       std::uint64_t seed) {
  Graph g(training, seed);
  std::vector<NodeId> ids;
  for (const auto& t : operands) ids.push_back(g.input(t, true));
  const NodeId out = build(g, ids);
  const NodeId loss = g.weighted_sum(out, w);
  return g.value(loss)[0];
}

// Compares analytic gradients of every operand element with central
// differences. Relative error uses max(|a|, |n|, floor) as denominator.
inline Result check(const Builder& build, std::vector<Tensor> operands, std::mt19937_64& rng, bool training = false,
                    double h = 1e-6, double floor = 1e-4) {
  const std::uint64_t seed = rng();
  Tensor w;
  std::vector<std::vector<double>> analytic;
  {
    Graph g(training, seed);
    std::vector<NodeId> ids;
    for (const auto& t : operands) ids.push_back(g.input(t, true));
    const NodeId out = build(g, ids);
    w = random_tensor(g.value(out).shape(), rng);
    const NodeId loss = g.weighted_sum(out, w);
    g.backward(loss);
    for (auto id : ids) analytic.push_back(g.grad(id).storage());
  }
  Result r;
  for (std::size_t k = 0; k < operands.size(); ++k) {
    for (std::size_t i = 0; i < operands[k].size(); ++i) {
      const double orig = operands[k][i];
      operands[k][i] = orig + h;
      const double up = evaluate(build, operands, w, training, seed);
      operands[k][i] = orig - h;
      const double down = evaluate(build, operands, w, training, seed);
      operands[k][i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      r.max_rel_error = std::max(r.max_rel_error, std::abs(a - numeric) / denom);
      ++r.checked;
    }
  }
  return r;
}

struct Case {
  Builder build;
  std::vector<Tensor> operands;
  bool training = false;
  std::string shape;
};

using CaseFactory = std::function<Case(std::mt19937_64&)>;

struct Layer {
  std::string name;
  CaseFactory make;
};

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Every differentiable op of the engine with a random-shape generator.
inline std::vector<Layer> layers() {
  using somno::ad::Conv2dSpec;
  using somno::ad::Pool2dSpec;
  using somno::ad::PoolRounding;
  std::vector<Layer> out;
  out.push_back({"conv2d", [](std::mt19937_64& rng) {
    const std::size_t n = pick(rng, 1, 2), c = pick(rng, 1, 3), co = pick(rng, 1, 3);
    const std::size_t kh = pick(rng, 1, 3), kw = pick(rng, 1, 3);
    const std::size_t h = pick(rng, kh, 6), w = pick(rng, kw, 6);
    const Conv2dSpec spec{pick(rng, 1, 2), pick(rng, 1, 2), pick(rng, 0, kh - 1), pick(rng, 0, kw - 1)};
    Case k;
    k.operands = {random_tensor({n, c, h, w}, rng), random_tensor({co, c, kh, kw}, rng), random_tensor({co}, rng)};
    k.build = [spec](Graph& g, const std::vector<NodeId>& id) { return g.conv2d(id[0], id[1], id[2], spec); };
    k.shape = somno::ad::shape_string(k.operands[0].shape()) + " k" + somno::ad::shape_string(k.operands[1].shape());
    return k;
  }});
  out.push_back({"conv1d", [](std::mt19937_64& rng) {
    const std::size_t n = pick(rng, 1, 2), c = pick(rng, 1, 3), co = pick(rng, 1, 3), kl = pick(rng, 1, 5);
    const std::size_t l = pick(rng, kl, 12), stride = pick(rng, 1, 2), pad = pick(rng, 0, kl - 1);
    Case k;
    k.operands = {random_tensor({n, c, l}, rng), random_tensor({co, c, kl}, rng), random_tensor({co}, rng)};
    k.build = [stride, pad](Graph& g, const std::vector<NodeId>& id) { return g.conv1d(id[0], id[1], id[2], stride, pad); };
    k.shape = somno::ad::shape_string(k.operands[0].shape()) + " k" + somno::ad::shape_string(k.operands[1].shape());
    return k;
  }});
  out.push_back({"maxpool2d", [](std::mt19937_64& rng) {
    Pool2dSpec spec;
    spec.window_h = spec.stride_h = pick(rng, 1, 3);
    spec.window_w = spec.stride_w = pick(rng, 1, 3);
    spec.round_h = pick(rng, 0, 1) ? PoolRounding::Ceil : PoolRounding::Floor;
    spec.round_w = pick(rng, 0, 1) ? PoolRounding::Ceil : PoolRounding::Floor;
    Case k;
    k.operands = {random_tensor({pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, spec.window_h, 7), pick(rng, spec.window_w, 7)}, rng)};
    k.build = [spec](Graph& g, const std::vector<NodeId>& id) { return g.maxpool2d(id[0], spec); };
    k.shape = somno::ad::shape_string(k.operands[0].shape());
    return k;
  }});
  out.push_back({"maxpool1d", [](std::mt19937_64& rng) {
    const std::size_t win = pick(rng, 1, 4);
    const PoolRounding r = pick(rng, 0, 1) ? PoolRounding::Ceil : PoolRounding::Floor;
    Case k;
    k.operands = {random_tensor({pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, win, 13)}, rng)};
    k.build = [win, r](Graph& g, const std::vector<NodeId>& id) { return g.maxpool1d(id[0], win, win, r); };
    k.shape = somno::ad::shape_string(k.operands[0].shape());
    return k;
  }});
  out.push_back({"relu", [](std::mt19937_64& rng) {
    Case k;
    k.operands = {random_tensor({pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 5)}, rng)};
    k.build = [](Graph& g, const std::vector<NodeId>& id) { return g.relu(id[0]); };
    k.shape = somno::ad::shape_string(k.operands[0].shape());
    return k;
  }});
  out.push_back({"flatten", [](std::mt19937_64& rng) {
    Case k;
    k.operands = {random_tensor({pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 4)}, rng)};
    k.build = [](Graph& g, const std::vector<NodeId>& id) { return g.flatten(id[0]); };
    k.shape = somno::ad::shape_string(k.operands[0].shape());
    return k;
  }});
  out.push_back({"linear", [](std::mt19937_64& rng) {
    const std::size_t n = pick(rng, 1, 4), in = pick(rng, 1, 8), o = pick(rng, 1, 6);
    Case k;
    k.operands = {random_tensor({n, in}, rng), random_tensor({o, in}, rng), random_tensor({o}, rng)};
    k.build = [](Graph& g, const std::vector<NodeId>& id) { return g.linear(id[0], id[1], id[2]); };
    k.shape = somno::ad::shape_string(k.operands[0].shape()) + " w" + somno::ad::shape_string(k.operands[1].shape());
    return k;
  }});
  out.push_back({"concat", [](std::mt19937_64& rng) {
    const std::size_t n = pick(rng, 1, 3), parts = pick(rng, 2, 4);
    Case k;
    for (std::size_t p = 0; p < parts; ++p) k.operands.push_back(random_tensor({n, pick(rng, 1, 5)}, rng));
    k.build = [](Graph& g, const std::vector<NodeId>& id) { return g.concat(id); };
    k.shape = std::to_string(parts) + " parts";
    return k;
  }});
  out.push_back({"dropout", [](std::mt19937_64& rng) {
    const double rate = 0.1 + 0.7 * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    Case k;
    k.operands = {random_tensor({pick(rng, 1, 4), pick(rng, 1, 8)}, rng)};
    k.training = true;
    k.build = [rate](Graph& g, const std::vector<NodeId>& id) { return g.dropout(id[0], rate); };
    k.shape = somno::ad::shape_string(k.operands[0].shape());
    return k;
  }});
  out.push_back({"softmax_cross_entropy", [](std::mt19937_64& rng) {
    const std::size_t n = pick(rng, 1, 5), classes = pick(rng, 2, 9);
    std::vector<std::size_t> labels(n);
    for (auto& l : labels) l = pick(rng, 0, classes - 1);
    std::vector<double> weights;
    if (pick(rng, 0, 1)) {
      for (std::size_t c = 0; c < classes; ++c) weights.push_back(0.2 + std::uniform_real_distribution<double>(0.0, 2.0)(rng));
    }
    Case k;
    k.operands = {random_tensor({n, classes}, rng, 2.0)};
    k.build = [labels, weights](Graph& g, const std::vector<NodeId>& id) {
      return g.softmax_cross_entropy(id[0], labels, weights);
    };
    k.shape = somno::ad::shape_string(k.operands[0].shape()) + (weights.empty() ? "" : " weighted");
    return k;
  }});
  return out;
}

}  // namespace gradcheck
