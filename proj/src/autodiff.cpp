#include "somno/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "somno/error.hpp"

namespace somno::ad {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

std::size_t element_count(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const std::vector<std::size_t>& shape, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += sep;
    out += std::to_string(shape[i]);
  }
  return out;
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  require(data_.size() == element_count(shape_), ErrorKind::ShapeError,
          "data length does not match shape " + shape_string(shape_));
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::reshape(std::vector<std::size_t> shape) {
  require(element_count(shape) == data_.size(), ErrorKind::ShapeError,
          "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  shape_ = std::move(shape);
}

std::size_t conv_out(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  require(stride >= 1, ErrorKind::ShapeError, "stride must be positive");
  require(kernel >= 1 && kernel <= in + 2 * pad, ErrorKind::ShapeError, "kernel larger than padded input");
  return (in + 2 * pad - kernel) / stride + 1;
}

std::size_t pool_out(std::size_t in, std::size_t window, std::size_t stride, PoolRounding rounding) {
  require(stride >= 1 && window >= 1, ErrorKind::ShapeError, "pool window and stride must be positive");
  if (rounding == PoolRounding::Floor) {
    require(window <= in, ErrorKind::ShapeError, "pool window larger than input");
    return (in - window) / stride + 1;
  }
  if (in <= window) return 1;
  std::size_t out = (in - window + stride - 1) / stride + 1;
  // The last window has to start inside the input.
  if ((out - 1) * stride >= in) --out;
  return out;
}

Graph::Graph(bool training, std::uint64_t dropout_seed) : training_(training), rng_(dropout_seed) {}

Graph::Node& Graph::node(NodeId id) {
  require(id < nodes_.size(), ErrorKind::StateError, "unknown node id " + std::to_string(id));
  return nodes_[id];
}

const Graph::Node& Graph::node(NodeId id) const {
  require(id < nodes_.size(), ErrorKind::StateError, "unknown node id " + std::to_string(id));
  return nodes_[id];
}

const Tensor& Graph::value(NodeId id) const {
  const Node& n = node(id);
  return n.external ? *n.external : n.value;
}

const Tensor& Graph::grad(NodeId id) const {
  require(backward_done_, ErrorKind::StateError, "gradients requested before backward");
  const Node& n = node(id);
  require(n.requires_grad, ErrorKind::StateError, "node does not track gradients");
  return n.grad;
}

bool Graph::requires_grad(NodeId id) const { return node(id).requires_grad; }

NodeId Graph::push(Tensor value, bool requires_grad, std::function<void(Graph&, NodeId)> backward_fn) {
  require(!backward_done_, ErrorKind::StateError, "graph already differentiated");
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward_fn = std::move(backward_fn);
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

NodeId Graph::input(Tensor value, bool requires_grad) { return push(std::move(value), requires_grad, {}); }

NodeId Graph::parameter(const Tensor& value) {
  const NodeId id = push(Tensor{}, true, {});
  nodes_[id].external = &value;
  return id;
}

// ---------------------------------------------------------------------------
// Convolution via im2col + GEMM over the whole batch.

NodeId Graph::conv_impl(NodeId x, NodeId kernel, NodeId bias, std::size_t h, std::size_t w, std::size_t kh,
                        std::size_t kw, const Conv2dSpec& spec, bool one_d) {
  const Tensor& xv = value(x);
  const Tensor& kv = value(kernel);
  const Tensor& bv = value(bias);
  const std::size_t n = xv.dim(0);
  const std::size_t cin = xv.dim(1);
  const std::size_t cout = kv.dim(0);
  require(kv.dim(1) == cin, ErrorKind::ShapeError,
          "kernel expects " + std::to_string(kv.dim(1)) + " input channels, got " + std::to_string(cin));
  require(bv.rank() == 1 && bv.dim(0) == cout, ErrorKind::ShapeError, "bias length must equal filter count");
  const std::size_t ho = conv_out(h, kh, spec.stride_h, spec.pad_h);
  const std::size_t wo = conv_out(w, kw, spec.stride_w, spec.pad_w);
  const std::size_t k = cin * kh * kw;
  const std::size_t p = ho * wo;
  const std::size_t np = n * p;

  auto cols = std::make_shared<std::vector<double>>(k * np, 0.0);
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t i = 0; i < kh; ++i) {
      for (std::size_t j = 0; j < kw; ++j) {
        double* row = cols->data() + ((c * kh + i) * kw + j) * np;
        for (std::size_t b = 0; b < n; ++b) {
          const double* plane = xv.data().data() + (b * cin + c) * h * w;
          for (std::size_t oh = 0; oh < ho; ++oh) {
            const long ih = static_cast<long>(oh * spec.stride_h + i) - static_cast<long>(spec.pad_h);
            if (ih < 0 || ih >= static_cast<long>(h)) continue;
            double* dst = row + b * p + oh * wo;
            for (std::size_t ow = 0; ow < wo; ++ow) {
              const long iw = static_cast<long>(ow * spec.stride_w + j) - static_cast<long>(spec.pad_w);
              if (iw >= 0 && iw < static_cast<long>(w)) dst[ow] = plane[ih * static_cast<long>(w) + iw];
            }
          }
        }
      }
    }
  }

  RowMat y = ConstMapMat(kv.data().data(), static_cast<long>(cout), static_cast<long>(k)) *
             ConstMapMat(cols->data(), static_cast<long>(k), static_cast<long>(np));
  std::vector<std::size_t> out_shape = one_d ? std::vector<std::size_t>{n, cout, wo}
                                             : std::vector<std::size_t>{n, cout, ho, wo};
  Tensor out(out_shape);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t co = 0; co < cout; ++co) {
      const double* src = y.data() + co * np + b * p;
      double* dst = out.data().data() + (b * cout + co) * p;
      const double bias_v = bv[co];
      for (std::size_t q = 0; q < p; ++q) dst[q] = src[q] + bias_v;
    }
  }

  const bool needs = requires_grad(x) || requires_grad(kernel) || requires_grad(bias);
  return push(std::move(out), needs,
              [=](Graph& g, NodeId self) {
                const Tensor& dy = g.grad(self);
                RowMat gm(static_cast<long>(cout), static_cast<long>(np));
                for (std::size_t b = 0; b < n; ++b) {
                  for (std::size_t co = 0; co < cout; ++co) {
                    const double* src = dy.data().data() + (b * cout + co) * p;
                    std::copy(src, src + p, gm.data() + co * np + b * p);
                  }
                }
                const ConstMapMat colm(cols->data(), static_cast<long>(k), static_cast<long>(np));
                if (g.requires_grad(kernel)) {
                  MapMat dk(g.grad_mut(kernel).data().data(), static_cast<long>(cout), static_cast<long>(k));
                  dk.noalias() += gm * colm.transpose();
                }
                if (g.requires_grad(bias)) {
                  Tensor& db = g.grad_mut(bias);
                  for (std::size_t co = 0; co < cout; ++co) db[co] += gm.row(static_cast<long>(co)).sum();
                }
                if (g.requires_grad(x)) {
                  const ConstMapMat km(g.value(kernel).data().data(), static_cast<long>(cout), static_cast<long>(k));
                  RowMat dcols = km.transpose() * gm;
                  Tensor& dx = g.grad_mut(x);
                  for (std::size_t c = 0; c < cin; ++c) {
                    for (std::size_t i = 0; i < kh; ++i) {
                      for (std::size_t j = 0; j < kw; ++j) {
                        const double* row = dcols.data() + ((c * kh + i) * kw + j) * np;
                        for (std::size_t b = 0; b < n; ++b) {
                          double* plane = dx.data().data() + (b * cin + c) * h * w;
                          for (std::size_t oh = 0; oh < ho; ++oh) {
                            const long ih = static_cast<long>(oh * spec.stride_h + i) - static_cast<long>(spec.pad_h);
                            if (ih < 0 || ih >= static_cast<long>(h)) continue;
                            const double* src = row + b * p + oh * wo;
                            for (std::size_t ow = 0; ow < wo; ++ow) {
                              const long iw = static_cast<long>(ow * spec.stride_w + j) - static_cast<long>(spec.pad_w);
                              if (iw >= 0 && iw < static_cast<long>(w)) plane[ih * static_cast<long>(w) + iw] += src[ow];
                            }
                          }
                        }
                      }
                    }
                  }
                }
              });
}

NodeId Graph::conv2d(NodeId x, NodeId kernel, NodeId bias, const Conv2dSpec& spec) {
  const Tensor& xv = value(x);
  const Tensor& kv = value(kernel);
  require(xv.rank() == 4, ErrorKind::ShapeError, "conv2d input must be [N, C, H, W]");
  require(kv.rank() == 4, ErrorKind::ShapeError, "conv2d kernel must be [Cout, Cin, kh, kw]");
  return conv_impl(x, kernel, bias, xv.dim(2), xv.dim(3), kv.dim(2), kv.dim(3), spec, false);
}

NodeId Graph::conv1d(NodeId x, NodeId kernel, NodeId bias, std::size_t stride, std::size_t pad) {
  const Tensor& xv = value(x);
  const Tensor& kv = value(kernel);
  require(xv.rank() == 3, ErrorKind::ShapeError, "conv1d input must be [N, C, L]");
  require(kv.rank() == 3, ErrorKind::ShapeError, "conv1d kernel must be [Cout, Cin, k]");
  return conv_impl(x, kernel, bias, 1, xv.dim(2), 1, kv.dim(2), Conv2dSpec{1, stride, 0, pad}, true);
}

// ---------------------------------------------------------------------------

NodeId Graph::pool_impl(NodeId x, std::size_t h, std::size_t w, const Pool2dSpec& spec, bool one_d) {
  const Tensor& xv = value(x);
  const std::size_t n = xv.dim(0);
  const std::size_t c = xv.dim(1);
  const std::size_t ho = pool_out(h, spec.window_h, spec.stride_h, spec.round_h);
  const std::size_t wo = pool_out(w, spec.window_w, spec.stride_w, spec.round_w);
  std::vector<std::size_t> out_shape = one_d ? std::vector<std::size_t>{n, c, wo}
                                             : std::vector<std::size_t>{n, c, ho, wo};
  Tensor out(out_shape);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const double* src = xv.data().data() + plane * h * w;
    for (std::size_t oh = 0; oh < ho; ++oh) {
      const std::size_t h0 = oh * spec.stride_h;
      const std::size_t h1 = std::min(h0 + spec.window_h, h);
      for (std::size_t ow = 0; ow < wo; ++ow) {
        const std::size_t w0 = ow * spec.stride_w;
        const std::size_t w1 = std::min(w0 + spec.window_w, w);
        std::size_t best = h0 * w + w0;
        for (std::size_t ih = h0; ih < h1; ++ih) {
          for (std::size_t iw = w0; iw < w1; ++iw) {
            if (src[ih * w + iw] > src[best]) best = ih * w + iw;
          }
        }
        const std::size_t o = (plane * ho + oh) * wo + ow;
        out[o] = src[best];
        (*argmax)[o] = plane * h * w + best;
      }
    }
  }
  return push(std::move(out), requires_grad(x), [=](Graph& g, NodeId self) {
    const Tensor& dy = g.grad(self);
    Tensor& dx = g.grad_mut(x);
    for (std::size_t o = 0; o < dy.size(); ++o) dx[(*argmax)[o]] += dy[o];
  });
}

NodeId Graph::maxpool2d(NodeId x, const Pool2dSpec& spec) {
  const Tensor& xv = value(x);
  require(xv.rank() == 4, ErrorKind::ShapeError, "maxpool2d input must be [N, C, H, W]");
  return pool_impl(x, xv.dim(2), xv.dim(3), spec, false);
}

NodeId Graph::maxpool1d(NodeId x, std::size_t window, std::size_t stride, PoolRounding rounding) {
  const Tensor& xv = value(x);
  require(xv.rank() == 3, ErrorKind::ShapeError, "maxpool1d input must be [N, C, L]");
  return pool_impl(x, 1, xv.dim(2), Pool2dSpec{1, window, 1, stride, PoolRounding::Floor, rounding}, true);
}

NodeId Graph::relu(NodeId x) {
  Tensor out = value(x);
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return push(std::move(out), requires_grad(x), [=](Graph& g, NodeId self) {
    const Tensor& y = g.value(self);
    const Tensor& dy = g.grad(self);
    Tensor& dx = g.grad_mut(x);
    for (std::size_t i = 0; i < dy.size(); ++i) {
      if (y[i] > 0.0) dx[i] += dy[i];
    }
  });
}

NodeId Graph::flatten(NodeId x) {
  Tensor out = value(x);
  require(out.rank() >= 1, ErrorKind::ShapeError, "flatten needs a batch dimension");
  const std::size_t n = out.dim(0);
  out.reshape({n, n == 0 ? 0 : out.size() / n});
  return push(std::move(out), requires_grad(x), [=](Graph& g, NodeId self) {
    const Tensor& dy = g.grad(self);
    Tensor& dx = g.grad_mut(x);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
  });
}

NodeId Graph::linear(NodeId x, NodeId weight, NodeId bias) {
  const Tensor& xv = value(x);
  const Tensor& wv = value(weight);
  const Tensor& bv = value(bias);
  require(xv.rank() == 2 && wv.rank() == 2, ErrorKind::ShapeError, "linear expects [N, D] input and [O, D] weight");
  require(wv.dim(1) == xv.dim(1), ErrorKind::ShapeError,
          "linear weight expects " + std::to_string(wv.dim(1)) + " inputs, got " + std::to_string(xv.dim(1)));
  require(bv.rank() == 1 && bv.dim(0) == wv.dim(0), ErrorKind::ShapeError, "bias length must equal output width");
  const auto n = static_cast<long>(xv.dim(0));
  const auto d = static_cast<long>(xv.dim(1));
  const auto o = static_cast<long>(wv.dim(0));
  Tensor out({xv.dim(0), wv.dim(0)});
  MapMat ym(out.data().data(), n, o);
  ym.noalias() = ConstMapMat(xv.data().data(), n, d) * ConstMapMat(wv.data().data(), o, d).transpose();
  for (long r = 0; r < n; ++r) {
    for (long c = 0; c < o; ++c) ym(r, c) += bv[static_cast<std::size_t>(c)];
  }
  const bool needs = requires_grad(x) || requires_grad(weight) || requires_grad(bias);
  return push(std::move(out), needs, [=](Graph& g, NodeId self) {
    const ConstMapMat dy(g.grad(self).data().data(), n, o);
    if (g.requires_grad(weight)) {
      MapMat dw(g.grad_mut(weight).data().data(), o, d);
      dw.noalias() += dy.transpose() * ConstMapMat(g.value(x).data().data(), n, d);
    }
    if (g.requires_grad(bias)) {
      Tensor& db = g.grad_mut(bias);
      for (long c = 0; c < o; ++c) db[static_cast<std::size_t>(c)] += dy.col(c).sum();
    }
    if (g.requires_grad(x)) {
      MapMat dx(g.grad_mut(x).data().data(), n, d);
      dx.noalias() += dy * ConstMapMat(g.value(weight).data().data(), o, d);
    }
  });
}

NodeId Graph::concat(std::span<const NodeId> parts) {
  require(!parts.empty(), ErrorKind::ShapeError, "concat of nothing");
  const std::size_t n = value(parts[0]).dim(0);
  std::vector<std::size_t> widths;
  bool needs = false;
  for (NodeId id : parts) {
    const Tensor& v = value(id);
    require(v.rank() == 2 && v.dim(0) == n, ErrorKind::ShapeError, "concat expects [N, D_i] parts");
    widths.push_back(v.dim(1));
    needs = needs || requires_grad(id);
  }
  const std::size_t total = std::accumulate(widths.begin(), widths.end(), std::size_t{0});
  Tensor out({n, total});
  std::size_t offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Tensor& v = value(parts[i]);
    for (std::size_t r = 0; r < n; ++r) {
      std::copy_n(v.data().data() + r * widths[i], widths[i], out.data().data() + r * total + offset);
    }
    offset += widths[i];
  }
  std::vector<NodeId> ids(parts.begin(), parts.end());
  return push(std::move(out), needs, [=](Graph& g, NodeId self) {
    const Tensor& dy = g.grad(self);
    std::size_t off = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (g.requires_grad(ids[i])) {
        Tensor& dx = g.grad_mut(ids[i]);
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t c = 0; c < widths[i]; ++c) dx[r * widths[i] + c] += dy[r * total + off + c];
        }
      }
      off += widths[i];
    }
  });
}

NodeId Graph::dropout(NodeId x, double rate) {
  require(rate >= 0.0 && rate < 1.0, ErrorKind::ConfigError, "dropout rate must lie in [0, 1)");
  if (!training_ || rate == 0.0) return x;
  Tensor out = value(x);
  auto mask = std::make_shared<std::vector<double>>(out.size());
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = keep(rng_) ? scale : 0.0;
    out[i] *= (*mask)[i];
  }
  return push(std::move(out), requires_grad(x), [=](Graph& g, NodeId self) {
    const Tensor& dy = g.grad(self);
    Tensor& dx = g.grad_mut(x);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * (*mask)[i];
  });
}

Tensor softmax(const Tensor& logits) {
  Tensor out = logits;
  const std::size_t k = logits.rank() == 1 ? logits.dim(0) : logits.dim(logits.rank() - 1);
  if (k == 0) return out;
  for (std::size_t r = 0; r < out.size() / k; ++r) {
    double* z = out.data().data() + r * k;
    const double mx = *std::max_element(z, z + k);
    double total = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      z[c] = std::exp(z[c] - mx);
      total += z[c];
    }
    for (std::size_t c = 0; c < k; ++c) z[c] /= total;
  }
  return out;
}

NodeId Graph::softmax_cross_entropy(NodeId logits, std::span<const std::size_t> labels,
                                    std::span<const double> class_weights) {
  const Tensor& z = value(logits);
  require(z.rank() == 2, ErrorKind::ShapeError, "logits must be [N, K]");
  const std::size_t n = z.dim(0);
  const std::size_t k = z.dim(1);
  require(labels.size() == n, ErrorKind::ShapeError, "one label per row required");
  require(class_weights.empty() || class_weights.size() == k, ErrorKind::ShapeError,
          "class weight count must equal class count");
  for (std::size_t label : labels) {
    require(label < k, ErrorKind::LabelError, "label " + std::to_string(label) + " out of range");
  }
  Tensor probs = softmax(z);
  std::vector<double> row_weight(n, 1.0);
  double total_weight = 0.0;
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (!class_weights.empty()) row_weight[r] = class_weights[labels[r]];
    total_weight += row_weight[r];
    // log-softmax evaluated directly for accuracy when the probability underflows
    const double* zr = z.data().data() + r * k;
    const double mx = *std::max_element(zr, zr + k);
    double lse = 0.0;
    for (std::size_t c = 0; c < k; ++c) lse += std::exp(zr[c] - mx);
    loss += row_weight[r] * (std::log(lse) + mx - zr[labels[r]]);
  }
  require(total_weight > 0.0, ErrorKind::LabelError, "all rows carry zero weight");
  loss /= total_weight;
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  auto shared_probs = std::make_shared<Tensor>(std::move(probs));
  return push(Tensor({1}, std::vector<double>{loss}), requires_grad(logits), [=](Graph& g, NodeId self) {
    const double seed = g.grad(self)[0];
    Tensor& dz = g.grad_mut(logits);
    for (std::size_t r = 0; r < n; ++r) {
      const double scale = seed * row_weight[r] / total_weight;
      for (std::size_t c = 0; c < k; ++c) {
        const double target = c == lab[r] ? 1.0 : 0.0;
        dz[r * k + c] += scale * ((*shared_probs)[r * k + c] - target);
      }
    }
  });
}

NodeId Graph::weighted_sum(NodeId x, const Tensor& weights) {
  const Tensor& xv = value(x);
  require(weights.size() == xv.size(), ErrorKind::ShapeError, "weight count must equal element count");
  double acc = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) acc += weights[i] * xv[i];
  auto w = std::make_shared<Tensor>(weights);
  return push(Tensor({1}, std::vector<double>{acc}), requires_grad(x), [=](Graph& g, NodeId self) {
    const double seed = g.grad(self)[0];
    Tensor& dx = g.grad_mut(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += seed * (*w)[i];
  });
}

void Graph::backward(NodeId root) {
  require(root < nodes_.size(), ErrorKind::StateError, "backward called before any forward computation");
  require(value(root).size() == 1, ErrorKind::ShapeError, "implicit seed needs a scalar root");
  backward(root, Tensor(value(root).shape(), 1.0));
}

void Graph::backward(NodeId root, const Tensor& seed) {
  require(root < nodes_.size(), ErrorKind::StateError, "backward called before any forward computation");
  require(!backward_done_, ErrorKind::StateError, "backward already ran on this graph");
  require(seed.size() == value(root).size(), ErrorKind::ShapeError, "seed shape must match root");
  require(nodes_[root].requires_grad, ErrorKind::StateError, "root does not depend on any differentiable input");
  for (std::size_t i = 0; i <= root; ++i) {
    Node& n = nodes_[i];
    if (n.requires_grad) n.grad = Tensor(value(i).shape(), 0.0);
  }
  backward_done_ = true;
  nodes_[root].grad = Tensor(value(root).shape(), std::vector<double>(seed.data().begin(), seed.data().end()));
  for (std::size_t i = root + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.backward_fn) n.backward_fn(*this, i);
  }
}

}  // namespace somno::ad
