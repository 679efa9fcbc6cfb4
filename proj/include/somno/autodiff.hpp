#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace somno::ad {

// Dense row-major float64 tensor.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  void fill(double v);
  void reshape(std::vector<std::size_t> shape);  // element count must match

  bool operator==(const Tensor&) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::size_t element_count(const std::vector<std::size_t>& shape);
std::string shape_string(const std::vector<std::size_t>& shape, const char* sep = "x");

enum class PoolRounding { Floor, Ceil };

struct Conv2dSpec {
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;
  std::size_t pad_h = 0;
  std::size_t pad_w = 0;

  // Output size equals input size at stride 1 for odd kernels.
  static Conv2dSpec same(std::size_t kh, std::size_t kw) { return {1, 1, (kh - 1) / 2, (kw - 1) / 2}; }
};

struct Pool2dSpec {
  std::size_t window_h = 2;
  std::size_t window_w = 2;
  std::size_t stride_h = 2;
  std::size_t stride_w = 2;
  PoolRounding round_h = PoolRounding::Floor;
  PoolRounding round_w = PoolRounding::Floor;
};

std::size_t conv_out(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad);
std::size_t pool_out(std::size_t in, std::size_t window, std::size_t stride, PoolRounding rounding);

using NodeId = std::size_t;

// Tape-based reverse-mode graph. Nodes are appended in evaluation order, so
// the node list is already topologically sorted; backward walks it in
// reverse. A Graph is single-threaded; run separate Graphs for parallelism.
//
// Layouts: 2D activations [N, C, H, W], conv2d kernels [Cout, Cin, kh, kw];
// 1D activations [N, C, L], conv1d kernels [Cout, Cin, k]; dense [N, D],
// linear weights [Out, In].
class Graph {
 public:
  explicit Graph(bool training = false, std::uint64_t dropout_seed = 0);
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool training() const { return training_; }
  std::size_t size() const { return nodes_.size(); }

  NodeId input(Tensor value, bool requires_grad = false);
  // The tensor is referenced, not copied; it must outlive the graph.
  NodeId parameter(const Tensor& value);

  NodeId conv2d(NodeId x, NodeId kernel, NodeId bias, const Conv2dSpec& spec);
  NodeId conv1d(NodeId x, NodeId kernel, NodeId bias, std::size_t stride, std::size_t pad);
  NodeId maxpool2d(NodeId x, const Pool2dSpec& spec);
  NodeId maxpool1d(NodeId x, std::size_t window, std::size_t stride, PoolRounding rounding);
  NodeId relu(NodeId x);
  NodeId flatten(NodeId x);
  NodeId linear(NodeId x, NodeId weight, NodeId bias);
  NodeId concat(std::span<const NodeId> parts);
  // Inverted dropout: active only in training mode, survivors scaled by 1/(1-rate).
  NodeId dropout(NodeId x, double rate);
  // Class-weighted mean cross-entropy of softmax(logits); scalar output.
  NodeId softmax_cross_entropy(NodeId logits, std::span<const std::size_t> labels,
                               std::span<const double> class_weights = {});
  // Scalar sum_i weights[i] * x[i].
  NodeId weighted_sum(NodeId x, const Tensor& weights);

  void backward(NodeId root);  // root must hold a single element
  void backward(NodeId root, const Tensor& seed);

  const Tensor& value(NodeId id) const;
  const Tensor& grad(NodeId id) const;
  bool requires_grad(NodeId id) const;

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Tensor grad;
    bool requires_grad = false;
    std::function<void(Graph&, NodeId)> backward_fn;
  };

  NodeId push(Tensor value, bool requires_grad, std::function<void(Graph&, NodeId)> backward_fn);
  Node& node(NodeId id);
  const Node& node(NodeId id) const;
  Tensor& grad_mut(NodeId id) { return node(id).grad; }

  NodeId conv_impl(NodeId x, NodeId kernel, NodeId bias, std::size_t h, std::size_t w, std::size_t kh,
                   std::size_t kw, const Conv2dSpec& spec, bool one_d);
  NodeId pool_impl(NodeId x, std::size_t h, std::size_t w, const Pool2dSpec& spec, bool one_d);

  std::vector<Node> nodes_;
  bool training_;
  bool backward_done_ = false;
  std::mt19937_64 rng_;
};

// Row-wise softmax of [N, K] logits (or a single [K] vector).
Tensor softmax(const Tensor& logits);

}  // namespace somno::ad
