#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "../support/oracles.hpp"
#include "../support/tiny.hpp"
#include "somno/error.hpp"
#include "somno/explain.hpp"
#include "somno/forest.hpp"

using namespace somno;

namespace {

CnnModel trained_tiny() {
  static const CnnModel model = [] {
    const auto ds = tiny::dataset(16, 21);
    CnnModel m(tiny::architecture());
    m.init_he(5);
    TrainHyper hp;
    hp.epochs = 10;
    hp.batch = 16;
    hp.learning_rate = 5e-3;
    train_dl(m, ds, ds.all_indices(), {}, hp);
    return m;
  }();
  return model;
}

// Grad-CAM straight from its definition on the model's own forward pass.
Matrix reference_cam(const CnnModel& m, const ChannelImages& x, DisorderClass cls, std::size_t subnet, std::size_t stage) {
  ad::Graph g(false);
  const ChannelImages* p = &x;
  const auto fwd = m.forward(g, std::span<const ChannelImages* const>(&p, 1));
  ad::Tensor onehot({1, m.architecture().num_classes});
  onehot[index_of(cls)] = 1.0;
  const auto score = g.weighted_sum(fwd.logits, onehot);
  g.backward(score);
  const auto act = fwd.activations[subnet][stage];
  const auto& a = g.value(act);
  const auto& da = g.grad(act);
  const std::size_t k = a.dim(1), h = a.dim(2), w = a.dim(3);
  Matrix cam(h, w);
  for (std::size_t c = 0; c < k; ++c) {
    double alpha = 0.0;
    for (std::size_t i = 0; i < h * w; ++i) alpha += da[c * h * w + i];
    alpha /= static_cast<double>(h * w);
    for (std::size_t i = 0; i < h * w; ++i) cam.data[i] += alpha * a[c * h * w + i];
  }
  for (auto& v : cam.data) v = std::max(0.0, v);
  return cam;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double ma = oracle::mean(a), mb = oracle::mean(b);
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

Matrix random_image(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix m(r, c);
  for (auto& v : m.data) v = u(rng);
  return m;
}

// Mean of each grid segment after masking, the usual LIME surrogate input.
std::vector<double> segment_means(const Matrix& img, const LimeParams& p) {
  std::vector<double> sum(p.grid_rows * p.grid_cols, 0.0), n(sum.size(), 0.0);
  for (std::size_t r = 0; r < img.rows; ++r)
    for (std::size_t c = 0; c < img.cols; ++c) {
      const auto s = lime_segment_of(r, c, img.rows, img.cols, p);
      sum[s] += img(r, c);
      n[s] += 1.0;
    }
  for (std::size_t s = 0; s < sum.size(); ++s) sum[s] /= n[s];
  return sum;
}

}  // namespace

TEST_CASE("bilinear resize keeps constants and same-size input") {
  Matrix c(3, 5, 2.5);
  for (double v : bilinear_resize(c, 21, 70).data) CHECK(v == doctest::Approx(2.5));
  const auto img = random_image(4, 6, 1);
  CHECK(bilinear_resize(img, 4, 6) == img);
  CHECK_THROWS_AS(bilinear_resize(Matrix(), 3, 3), Error);
}

TEST_CASE("bilinear resize pins corners and reproduces affine ramps") {
  Matrix ramp(5, 35);
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 35; ++c) ramp(r, c) = 2.0 * r - 0.5 * c + 1.0;
  const auto up = bilinear_resize(ramp, 21, 70);
  for (std::size_t r = 0; r < 21; ++r)
    for (std::size_t c = 0; c < 70; ++c) {
      const double y = r * 4.0 / 20.0, x = c * 34.0 / 69.0;
      CHECK(up(r, c) == doctest::Approx(2.0 * y - 0.5 * x + 1.0).epsilon(1e-12));
    }
  CHECK(up(0, 0) == ramp(0, 0));
  CHECK(up(20, 69) == doctest::Approx(ramp(4, 34)));
}

TEST_CASE("Grad-CAM equals the definition at every layer") {
  const auto m = trained_tiny();
  const auto ds = tiny::dataset(1, 99);
  for (std::size_t stage = 0; stage < 2; ++stage) {
    for (std::size_t k = 0; k < 4; ++k) {
      const auto cls = static_cast<DisorderClass>(k);
      const auto maps = grad_cam(m, ds.spectrograms[k], cls, "conv" + std::to_string(stage + 1));
      REQUIRE(maps.size() == 6);
      for (std::size_t s = 0; s < 2; ++s) {
        Matrix ref = bilinear_resize(reference_cam(m, ds.spectrograms[k], cls, s, stage), 8, 12);
        const double mx = *std::max_element(ref.data.begin(), ref.data.end());
        double mass = 0.0;
        for (double v : ref.data) mass += v;
        const Heatmap& h = maps[3 * s];
        CHECK(h.raw_mass == doctest::Approx(mass).epsilon(1e-10));
        CHECK(h.raw_max == doctest::Approx(mx).epsilon(1e-10));
        for (std::size_t i = 0; i < ref.data.size(); ++i) {
          CHECK(h.values.data[i] == doctest::Approx(mx > 0 ? ref.data[i] / mx : 0.0).epsilon(1e-10));
        }
      }
    }
  }
}

TEST_CASE("Grad-CAM maps are non-negative and max-normalised") {
  const auto m = trained_tiny();
  const auto ds = tiny::dataset(1, 98);
  for (const auto& h : grad_cam(m, ds.spectrograms[1], DisorderClass::Ins, "conv2")) {
    CHECK(h.values.rows == 8);
    CHECK(h.values.cols == 12);
    const double mx = *std::max_element(h.values.data.begin(), h.values.data.end());
    CHECK((mx == 1.0 || mx == 0.0));
    for (double v : h.values.data) CHECK(v >= 0.0);
  }
}

TEST_CASE("Grad-CAM scales with the class logit and its normalised map does not") {
  auto m = trained_tiny();
  const auto ds = tiny::dataset(1, 97);
  const auto before = grad_cam(m, ds.spectrograms[2], DisorderClass::Nar, "conv2");
  const double lambda = 3.5;
  auto& w = m.parameter("fusion.w");
  auto& b = m.parameter("fusion.b");
  const std::size_t width = w.dim(1);
  for (std::size_t j = 0; j < width; ++j) w[index_of(DisorderClass::Nar) * width + j] *= lambda;
  b[index_of(DisorderClass::Nar)] *= lambda;
  const auto after = grad_cam(m, ds.spectrograms[2], DisorderClass::Nar, "conv2");
  for (std::size_t i = 0; i < before.size(); ++i) {
    CHECK(after[i].raw_mass == doctest::Approx(lambda * before[i].raw_mass).epsilon(1e-9));
    for (std::size_t p = 0; p < before[i].values.data.size(); ++p) {
      CHECK(after[i].values.data[p] == doctest::Approx(before[i].values.data[p]).epsilon(1e-9));
    }
  }
}

TEST_CASE("Grad-CAM highlights the class row at full resolution") {
  const auto m = trained_tiny();
  const auto ds = tiny::dataset(6, 96);
  int hits = 0, total = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto cls = ds.samples[i].label;
    const auto maps = grad_cam(m, ds.spectrograms[i], cls, "left.conv1");
    REQUIRE(maps.size() == 3);
    std::vector<double> rows(8, 0.0);
    for (std::size_t r = 0; r < 8; ++r)
      for (std::size_t c = 0; c < 12; ++c) rows[r] += maps[0].values(r, c);
    const auto best = static_cast<std::size_t>(std::max_element(rows.begin(), rows.end()) - rows.begin());
    hits += best + 1 >= 2 * index_of(cls) && best <= 2 * index_of(cls) + 1 ? 1 : 0;
    ++total;
  }
  CHECK(hits >= total / 2);  // chance is one in four
}

TEST_CASE("Grad-CAM rejects unknown layers") {
  const auto m = trained_tiny();
  const auto ds = tiny::dataset(1, 95);
  try {
    grad_cam(m, ds.spectrograms[0], DisorderClass::Bru, "conv7");
    FAIL("expected LayerError");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::LayerError);
  }
}

TEST_CASE("LIME recovers an exactly linear response") {
  LimeParams p;
  p.grid_rows = 3;
  p.grid_cols = 4;
  p.samples = 300;
  p.ridge = 0.0;
  const Matrix img = random_image(9, 16, 3);
  const std::vector<double> beta = {0.3, -0.2, 0.05, 0.0, 0.7, 0.1, -0.4, 0.25, 0.0, 0.15, -0.05, 0.5};
  // The response reads the mask back from the image: a segment is off when it equals the fill value everywhere.
  const double fill = oracle::mean(img.data);
  ProbabilityFn fn = [&](const std::vector<Matrix>& imgs) {
    std::vector<double> out;
    for (const auto& x : imgs) {
      double y = 0.1;
      for (std::size_t r = 0; r < x.rows; ++r)
        for (std::size_t c = 0; c < x.cols; ++c) {
          const auto s = lime_segment_of(r, c, x.rows, x.cols, p);
          if (r % 3 == 0 && c % 4 == 0 && x(r, c) != fill) y += beta[s];
        }
      out.push_back(y);
    }
    return out;
  };
  const auto res = lime_explain(img, fn, p);
  for (std::size_t s = 0; s < beta.size(); ++s) CHECK(res.coefficients[s] == doctest::Approx(beta[s]).epsilon(1e-8));
  CHECK(res.intercept == doctest::Approx(0.1).epsilon(1e-8));
  CHECK(res.ranked.front().index == 4);
}

TEST_CASE("LIME top segment agrees with the exhaustive-mask oracle") {
  LimeParams p;
  p.grid_rows = 3;
  p.grid_cols = 4;
  p.samples = 1000;
  const std::size_t S = 12;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Matrix img = random_image(12, 20, seed);
    std::mt19937_64 rng(seed + 100);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> w(S);
    for (auto& v : w) v = g(rng);
    w[seed % S] = 4.0;  // one clearly dominant segment
    auto prob = [&](const Matrix& x) {
      const auto means = segment_means(x, p);
      double z = -1.0;
      for (std::size_t s = 0; s < S; ++s) z += w[s] * means[s];
      return 1.0 / (1.0 + std::exp(-z));
    };
    ProbabilityFn fn = [&](const std::vector<Matrix>& imgs) {
      std::vector<double> out;
      for (const auto& x : imgs) out.push_back(prob(x));
      return out;
    };
    p.seed = seed;
    const auto res = lime_explain(img, fn, p);

    // Oracle: every one of the 2^12 masks, same kernel, exact ridge solve.
    const double fill = oracle::mean(img.data);
    const double sigma = 0.5 * static_cast<double>(S);
    std::vector<std::vector<double>> rows;
    std::vector<double> ys, ws;
    for (std::size_t mask = 0; mask < (1u << S); ++mask) {
      Matrix x = img;
      std::vector<double> z(S + 1, 1.0);
      double off = 0.0;
      for (std::size_t s = 0; s < S; ++s) {
        z[s + 1] = (mask >> s) & 1u ? 1.0 : 0.0;
        off += 1.0 - z[s + 1];
      }
      for (std::size_t r = 0; r < x.rows; ++r)
        for (std::size_t c = 0; c < x.cols; ++c)
          if (z[lime_segment_of(r, c, x.rows, x.cols, p) + 1] == 0.0) x(r, c) = fill;
      rows.push_back(z);
      ys.push_back(prob(x));
      ws.push_back(std::exp(-(off * off) / (sigma * sigma)));
    }
    const auto beta = oracle::weighted_ridge(rows, ys, ws, p.ridge);
    const auto top = static_cast<std::size_t>(std::max_element(beta.begin() + 1, beta.end()) - beta.begin() - 1);
    CHECK(res.ranked.front().index == top);
  }
}

TEST_CASE("LIME is deterministic per seed and stable across seeds") {
  LimeParams p;
  p.grid_rows = 3;
  p.grid_cols = 4;
  p.samples = 1000;
  const Matrix img = random_image(12, 20, 8);
  const std::vector<double> w = {1.0, -0.5, 2.0, 0.3, -1.2, 0.8, 0.0, 1.5, -0.7, 0.4, 2.5, -1.8};
  ProbabilityFn fn = [&](const std::vector<Matrix>& imgs) {
    std::vector<double> out;
    for (const auto& x : imgs) {
      const auto means = segment_means(x, p);
      double z = 0.0;
      for (std::size_t s = 0; s < 12; ++s) z += w[s] * means[s];
      out.push_back(1.0 / (1.0 + std::exp(-z)));
    }
    return out;
  };
  p.seed = 1;
  const auto a = lime_explain(img, fn, p);
  const auto a2 = lime_explain(img, fn, p);
  CHECK(a.coefficients == a2.coefficients);
  p.seed = 2;
  const auto b = lime_explain(img, fn, p);
  CHECK(a.coefficients != b.coefficients);
  CHECK(pearson(a.coefficients, b.coefficients) > 0.9);
}

TEST_CASE("LIME needs at least one sample per segment") {
  LimeParams p;
  p.samples = 69;
  ProbabilityFn fn = [](const std::vector<Matrix>& imgs) { return std::vector<double>(imgs.size(), 0.5); };
  try {
    lime_explain(random_image(21, 70, 1), fn, p);
    FAIL("expected Underdetermined");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Underdetermined);
  }
}

TEST_CASE("LIME over a model channel gives a full-size signed map") {
  const auto m = trained_tiny();
  const auto ds = tiny::dataset(1, 94);
  LimeParams p;
  p.grid_rows = 4;
  p.grid_cols = 4;
  p.samples = 200;
  const auto res = lime_explain(m, ds.spectrograms[3], DisorderClass::Nfl, ChannelKind::ECG, p);
  CHECK(res.heatmap.values.rows == 8);
  CHECK(res.heatmap.values.cols == 12);
  CHECK(res.heatmap.channel == ChannelKind::ECG);
  CHECK(res.heatmap.method == ExplainMethod::Lime);
  CHECK(res.ranked.size() == 16);
}

TEST_CASE("impurity importance report aggregates channels") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0.0, 1.0);
  const auto names = feature_names(FeatureProfile::Core9);
  std::vector<std::vector<double>> rows;
  std::vector<DisorderClass> labels;
  for (int i = 0; i < 120; ++i) {
    std::vector<double> x(270);
    for (auto& v : x) v = g(rng);
    const bool pos = i % 2 == 0;
    x[feature_index(ChannelKind::EMG, 2, 0)] += pos ? 3.0 : 0.0;
    x[feature_index(ChannelKind::EMG, 4, 5)] += pos ? 2.0 : 0.0;
    rows.push_back(std::move(x));
    labels.push_back(pos ? DisorderClass::Plm : DisorderClass::Nrm);
  }
  ForestParams fp;
  fp.trees = 60;
  const auto f = RandomForest::train(rows, labels, fp);
  const auto r = rf_importance(f, names);
  REQUIRE(r.ranked.size() == 270);
  REQUIRE(r.channels.size() == 6);
  CHECK(r.channels.front().channel == ChannelKind::EMG);
  CHECK(r.ranked.front().name.rfind("EMG.", 0) == 0);
  double share = 0.0, total = 0.0;
  for (const auto& fi : r.ranked) {
    share += fi.share;
    total += fi.weight;
  }
  CHECK(share == doctest::Approx(1.0));
  CHECK(r.total == doctest::Approx(total));
  for (std::size_t i = 1; i < r.ranked.size(); ++i) CHECK(r.ranked[i - 1].weight >= r.ranked[i].weight);
  double emg = 0.0;
  for (const auto& fi : r.ranked)
    if (fi.channel == ChannelKind::EMG) emg += fi.weight;
  CHECK(r.channels.front().weight == doctest::Approx(emg));

  const std::vector<std::string> short_names(10, "x");
  CHECK_THROWS_AS(rf_importance(f, short_names), Error);
  CHECK_THROWS_AS(rf_importance(RandomForest{}, names), Error);
}

TEST_CASE("heatmap writers label their axes") {
  Heatmap h;
  h.values = random_image(21, 70, 2);
  h.cls = DisorderClass::Sbd;
  h.channel = ChannelKind::ECG;
  std::ostringstream svg, svg_t, csv;
  write_heatmap_svg(svg, h);
  write_heatmap_svg(svg_t, h, true);
  write_heatmap_csv(csv, h);
  CHECK(svg.str().find("frequency (Hz)") != std::string::npos);
  CHECK(svg.str().find("time (s)") != std::string::npos);
  CHECK(svg.str() != svg_t.str());
  std::size_t lines = 0;
  for (char c : csv.str()) lines += c == '\n' ? 1 : 0;
  CHECK(lines >= 21);
}
