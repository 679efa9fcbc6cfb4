#include <doctest.h>

#include <cmath>
#include <random>

#include "../support/gradcheck.hpp"
#include "../support/oracles.hpp"
#include "somno/autodiff.hpp"
#include "somno/error.hpp"

using namespace somno;
using namespace somno::ad;

TEST_CASE("every layer passes central finite differences") {
  std::mt19937_64 rng(2024);
  for (const auto& layer : gradcheck::layers()) {
    for (int trial = 0; trial < 20; ++trial) {
      auto c = layer.make(rng);
      const auto r = gradcheck::check(c.build, c.operands, rng, c.training);
      CHECK_MESSAGE(r.max_rel_error < 1e-5, layer.name << " " << c.shape << " err " << r.max_rel_error);
      CHECK(r.checked > 0);
    }
  }
}

TEST_CASE("conv2d forward equals direct convolution") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = gradcheck::pick(rng, 1, 3), c = gradcheck::pick(rng, 1, 4), co = gradcheck::pick(rng, 1, 5);
    const std::size_t kh = gradcheck::pick(rng, 1, 5), kw = gradcheck::pick(rng, 1, 5);
    const std::size_t h = gradcheck::pick(rng, kh, 12), w = gradcheck::pick(rng, kw, 12);
    const Conv2dSpec spec{gradcheck::pick(rng, 1, 3), gradcheck::pick(rng, 1, 3), gradcheck::pick(rng, 0, kh - 1),
                          gradcheck::pick(rng, 0, kw - 1)};
    const Tensor x = gradcheck::random_tensor({n, c, h, w}, rng);
    const Tensor k = gradcheck::random_tensor({co, c, kh, kw}, rng);
    const Tensor b = gradcheck::random_tensor({co}, rng);
    Graph g;
    const auto y = g.conv2d(g.input(x), g.input(k), g.input(b), spec);
    std::size_t oh = 0, ow = 0;
    const auto ref = oracle::conv2d(x.storage(), n, c, h, w, k.storage(), co, kh, kw, b.storage(), spec.stride_h,
                                    spec.stride_w, spec.pad_h, spec.pad_w, oh, ow);
    REQUIRE(g.value(y).shape() == std::vector<std::size_t>{n, co, oh, ow});
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(g.value(y)[i] - ref[i]) < 1e-10);
  }
}

TEST_CASE("conv1d forward equals direct convolution") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = gradcheck::pick(rng, 1, 3), c = gradcheck::pick(rng, 1, 4), co = gradcheck::pick(rng, 1, 5);
    const std::size_t kl = gradcheck::pick(rng, 1, 7), l = gradcheck::pick(rng, kl, 40);
    const std::size_t stride = gradcheck::pick(rng, 1, 3), pad = gradcheck::pick(rng, 0, kl - 1);
    const Tensor x = gradcheck::random_tensor({n, c, l}, rng);
    const Tensor k = gradcheck::random_tensor({co, c, kl}, rng);
    const Tensor b = gradcheck::random_tensor({co}, rng);
    Graph g;
    const auto y = g.conv1d(g.input(x), g.input(k), g.input(b), stride, pad);
    std::size_t oh = 0, ow = 0;
    const auto ref = oracle::conv2d(x.storage(), n, c, 1, l, k.storage(), co, 1, kl, b.storage(), 1, stride, 0, pad, oh, ow);
    REQUIRE(g.value(y).size() == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(g.value(y)[i] - ref[i]) < 1e-10);
  }
}

TEST_CASE("pool output sizes follow the rounding mode") {
  CHECK(pool_out(21, 2, 2, PoolRounding::Floor) == 10);
  CHECK(pool_out(21, 2, 2, PoolRounding::Ceil) == 11);
  CHECK(pool_out(125, 4, 4, PoolRounding::Ceil) == 32);
  CHECK(pool_out(125, 4, 4, PoolRounding::Floor) == 31);
  CHECK(conv_out(70, 3, 1, 1) == 70);
}

TEST_CASE("ceil pooling takes the max over the partial window") {
  Graph g;
  Tensor x({1, 1, 5}, std::vector<double>{1, 2, 3, 4, 9});
  const auto y = g.maxpool1d(g.input(x), 2, 2, PoolRounding::Ceil);
  REQUIRE(g.value(y).size() == 3);
  CHECK(g.value(y)[2] == 9.0);
}

TEST_CASE("softmax rows sum to one and are shift invariant") {
  std::mt19937_64 rng(1);
  const Tensor logits = gradcheck::random_tensor({4, 9}, rng, 10.0);
  Tensor shifted = logits;
  for (auto& v : shifted.storage()) v += 1000.0;
  const Tensor p = softmax(logits);
  const Tensor q = softmax(shifted);
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 9; ++c) {
      s += p[r * 9 + c];
      CHECK(p[r * 9 + c] == doctest::Approx(q[r * 9 + c]).epsilon(1e-12));
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("cross-entropy of uniform logits is log K") {
  Graph g;
  const std::vector<std::size_t> labels = {0, 3, 8};
  const auto loss = g.softmax_cross_entropy(g.input(Tensor({3, 9})), labels);
  CHECK(g.value(loss)[0] == doctest::Approx(std::log(9.0)).epsilon(1e-14));
}

TEST_CASE("dropout is the identity outside training") {
  std::mt19937_64 rng(2);
  const Tensor x = gradcheck::random_tensor({3, 7}, rng);
  Graph g(false);
  const auto y = g.dropout(g.input(x), 0.5);
  CHECK(g.value(y) == x);
}

TEST_CASE("dropout keeps roughly 1 - rate of the units") {
  Graph g(true, 9);
  const auto y = g.dropout(g.input(Tensor({100, 100}, 1.0)), 0.3);
  std::size_t kept = 0;
  for (double v : g.value(y).storage()) {
    if (v != 0.0) {
      CHECK(v == doctest::Approx(1.0 / 0.7));
      ++kept;
    }
  }
  CHECK(std::abs(static_cast<double>(kept) / 10000.0 - 0.7) < 0.03);
}

TEST_CASE("gradients accumulate over repeated uses") {
  Graph g;
  const auto x = g.input(Tensor({1, 2}, std::vector<double>{1.5, -2.0}), true);
  const auto both = g.concat(std::vector<NodeId>{x, x});
  const auto s = g.weighted_sum(both, Tensor({1, 4}, std::vector<double>{1, 2, 3, 4}));
  g.backward(s);
  CHECK(g.grad(x)[0] == 4.0);
  CHECK(g.grad(x)[1] == 6.0);
}

TEST_CASE("shape mismatches are rejected") {
  Graph g;
  const auto x = g.input(Tensor({1, 2, 5, 5}));
  const auto k = g.input(Tensor({3, 4, 3, 3}));
  const auto b = g.input(Tensor({3}));
  CHECK_THROWS_AS(g.conv2d(x, k, b, Conv2dSpec::same(3, 3)), Error);
  const auto a = g.input(Tensor({2, 3}));
  const auto w = g.input(Tensor({4, 5}));
  const auto bb = g.input(Tensor({4}));
  CHECK_THROWS_AS(g.linear(a, w, bb), Error);
}
