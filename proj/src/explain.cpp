#include "somno/explain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include <Eigen/Dense>

#include "somno/error.hpp"
#include "somno/hash.hpp"

namespace somno {

std::string_view explain_method_name(ExplainMethod m) { return m == ExplainMethod::Lime ? "lime" : "gradcam"; }

ExplainMethod parse_explain_method(std::string_view name) {
  if (name == "gradcam" || name == "grad-cam") return ExplainMethod::GradCam;
  if (name == "lime") return ExplainMethod::Lime;
  fail(ErrorKind::ConfigError, "unknown explanation method '" + std::string(name) + "' (expected gradcam or lime)");
}

Matrix bilinear_resize(const Matrix& m, std::size_t rows, std::size_t cols) {
  require(m.rows >= 1 && m.cols >= 1 && rows >= 1 && cols >= 1, ErrorKind::ShapeError, "cannot resize an empty grid");
  Matrix out(rows, cols);
  auto coord = [](std::size_t i, std::size_t out_n, std::size_t in_n) {
    if (out_n == 1 || in_n == 1) return 0.0;
    return static_cast<double>(i) * static_cast<double>(in_n - 1) / static_cast<double>(out_n - 1);
  };
  for (std::size_t r = 0; r < rows; ++r) {
    const double y = coord(r, rows, m.rows);
    const std::size_t y0 = std::min(static_cast<std::size_t>(y), m.rows - 1);
    const std::size_t y1 = std::min(y0 + 1, m.rows - 1);
    const double fy = y - static_cast<double>(y0);
    for (std::size_t c = 0; c < cols; ++c) {
      const double x = coord(c, cols, m.cols);
      const std::size_t x0 = std::min(static_cast<std::size_t>(x), m.cols - 1);
      const std::size_t x1 = std::min(x0 + 1, m.cols - 1);
      const double fx = x - static_cast<double>(x0);
      const double top = m(y0, x0) * (1.0 - fx) + m(y0, x1) * fx;
      const double bottom = m(y1, x0) * (1.0 - fx) + m(y1, x1) * fx;
      out(r, c) = top * (1.0 - fy) + bottom * fy;
    }
  }
  return out;
}

std::vector<Heatmap> grad_cam(const CnnModel& model, const ChannelImages& input, DisorderClass cls,
                              const std::string& layer) {
  const auto& arch = model.architecture();
  const auto [subnet, stage] = model.resolve_layer(layer);
  require(index_of(cls) < arch.num_classes, ErrorKind::LabelError, "class outside the model's outputs");

  ad::Graph g(false);
  const ChannelImages* batch[] = {&input};
  const auto fw = model.forward(g, batch);
  ad::Tensor onehot({1, arch.num_classes});
  onehot[index_of(cls)] = 1.0;
  const ad::NodeId score = g.weighted_sum(fw.logits, onehot);
  g.backward(score);

  std::vector<Heatmap> out;
  for (std::size_t s = 0; s < arch.subnets.size(); ++s) {
    if (subnet != CnnModel::kAllSubnets && subnet != s) continue;
    require(stage < arch.subnets[s].stages.size(), ErrorKind::LayerError,
            "layer " + layer + " does not exist in " + arch.subnets[s].name);
    const ad::NodeId node = fw.activations[s][stage];
    const ad::Tensor& A = g.value(node);
    const ad::Tensor& dA = g.grad(node);
    const std::size_t k = A.dim(1);
    const std::size_t h = A.rank() == 4 ? A.dim(2) : 1;
    const std::size_t w = A.rank() == 4 ? A.dim(3) : A.dim(2);
    const std::size_t area = h * w;
    Matrix cam(h, w);
    for (std::size_t f = 0; f < k; ++f) {
      const double* grad = dA.data().data() + f * area;
      const double* act = A.data().data() + f * area;
      const double alpha = std::accumulate(grad, grad + area, 0.0) / static_cast<double>(area);
      for (std::size_t i = 0; i < area; ++i) cam.data[i] += alpha * act[i];
    }
    for (auto& v : cam.data) v = std::max(0.0, v);
    Matrix up = bilinear_resize(cam, arch.in_h, arch.in_w);
    const double mx = *std::max_element(up.data.begin(), up.data.end());
    const double mass = std::accumulate(up.data.begin(), up.data.end(), 0.0);
    if (mx > 0.0) {
      for (auto& v : up.data) v /= mx;
    }
    for (auto ch : arch.subnets[s].channels) {
      Heatmap hm;
      hm.values = up;
      hm.cls = cls;
      hm.channel = ch;
      hm.method = ExplainMethod::GradCam;
      hm.layer = arch.subnets[s].name + ".conv" + std::to_string(stage + 1);
      hm.raw_max = mx;
      hm.raw_mass = mass;
      out.push_back(std::move(hm));
    }
  }
  return out;
}

std::size_t lime_segment_of(std::size_t r, std::size_t c, std::size_t rows, std::size_t cols, const LimeParams& p) {
  return (r * p.grid_rows / rows) * p.grid_cols + (c * p.grid_cols / cols);
}

LimeResult lime_explain(const Matrix& image, const ProbabilityFn& probability, const LimeParams& params) {
  require(params.grid_rows >= 1 && params.grid_cols >= 1, ErrorKind::ConfigError, "grid must be non-empty");
  require(image.rows >= params.grid_rows && image.cols >= params.grid_cols, ErrorKind::ShapeError,
          "image smaller than the segment grid");
  const std::size_t S = params.grid_rows * params.grid_cols;
  require(params.samples >= S, ErrorKind::Underdetermined,
          std::to_string(params.samples) + " samples cannot determine " + std::to_string(S) + " segment weights");
  require(params.ridge >= 0.0 && params.kernel_width >= 0.0, ErrorKind::ConfigError, "ridge and kernel width must be >= 0");
  const double sigma = params.kernel_width > 0.0 ? params.kernel_width : 0.5 * static_cast<double>(S);

  std::vector<std::size_t> seg(image.rows * image.cols);
  for (std::size_t r = 0; r < image.rows; ++r) {
    for (std::size_t c = 0; c < image.cols; ++c) seg[r * image.cols + c] = lime_segment_of(r, c, image.rows, image.cols, params);
  }
  const double fill = std::accumulate(image.data.begin(), image.data.end(), 0.0) / static_cast<double>(image.data.size());

  const std::size_t n = params.samples;
  std::vector<std::vector<std::uint8_t>> masks(n, std::vector<std::uint8_t>(S, 1));
  std::mt19937_64 rng(mix_seed({params.seed, 0x4c494d45ULL}));
  std::vector<std::size_t> order(S);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = 1; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> count(1, S);
    const std::size_t off = count(rng);
    for (std::size_t j = 0; j < off; ++j) {
      std::uniform_int_distribution<std::size_t> pick(j, S - 1);
      std::swap(order[j], order[pick(rng)]);
      masks[i][order[j]] = 0;
    }
  }

  std::vector<double> y;
  y.reserve(n);
  constexpr std::size_t kBatch = 64;
  for (std::size_t lo = 0; lo < n; lo += kBatch) {
    const std::size_t hi = std::min(n, lo + kBatch);
    std::vector<Matrix> images;
    images.reserve(hi - lo);
    for (std::size_t i = lo; i < hi; ++i) {
      Matrix m = image;
      for (std::size_t p = 0; p < m.data.size(); ++p) {
        if (!masks[i][seg[p]]) m.data[p] = fill;
      }
      images.push_back(std::move(m));
    }
    const auto probs = probability(images);
    require(probs.size() == images.size(), ErrorKind::ShapeError, "probability function returned the wrong count");
    y.insert(y.end(), probs.begin(), probs.end());
  }

  // Weighted ridge with an unpenalised intercept, solved on weighted-centred data.
  Eigen::VectorXd w(static_cast<Eigen::Index>(n));
  Eigen::MatrixXd Z(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(S));
  Eigen::VectorXd Y(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    double d = 0.0;
    for (std::size_t s = 0; s < S; ++s) {
      Z(ii, static_cast<Eigen::Index>(s)) = masks[i][s];
      d += masks[i][s] ? 0.0 : 1.0;
    }
    w(ii) = std::exp(-(d * d) / (sigma * sigma));
    Y(ii) = y[i];
  }
  const double wsum = w.sum();
  const Eigen::RowVectorXd zbar = (w.transpose() * Z) / wsum;
  const double ybar = w.dot(Y) / wsum;
  const Eigen::MatrixXd Zc = Z.rowwise() - zbar;
  const Eigen::VectorXd Yc = Y.array() - ybar;
  Eigen::MatrixXd A = Zc.transpose() * w.asDiagonal() * Zc;
  A.diagonal().array() += params.ridge;
  const Eigen::VectorXd b = Zc.transpose() * (w.asDiagonal() * Yc);
  const Eigen::VectorXd beta = A.ldlt().solve(b);

  LimeResult res;
  res.coefficients.assign(beta.data(), beta.data() + beta.size());
  res.intercept = ybar - zbar.dot(beta);
  res.heatmap.values = Matrix(image.rows, image.cols);
  res.heatmap.method = ExplainMethod::Lime;
  for (std::size_t p = 0; p < seg.size(); ++p) res.heatmap.values.data[p] = res.coefficients[seg[p]];
  for (std::size_t s = 0; s < S; ++s) res.ranked.push_back({s, s / params.grid_cols, s % params.grid_cols, res.coefficients[s]});
  std::stable_sort(res.ranked.begin(), res.ranked.end(),
                   [](const LimeSegment& a, const LimeSegment& b) { return a.weight > b.weight; });
  return res;
}

LimeResult lime_explain(const CnnModel& model, const ChannelImages& input, DisorderClass cls, ChannelKind channel,
                        const LimeParams& params) {
  require(index_of(cls) < model.architecture().num_classes, ErrorKind::LabelError, "class outside the model's outputs");
  const std::size_t ch = index_of(channel);
  ProbabilityFn fn = [&](const std::vector<Matrix>& images) {
    std::vector<ChannelImages> inputs(images.size(), input);
    std::vector<const ChannelImages*> ptrs;
    for (std::size_t i = 0; i < images.size(); ++i) {
      inputs[i][ch] = images[i];
      ptrs.push_back(&inputs[i]);
    }
    const auto probs = model.predict_proba(ptrs);
    std::vector<double> out;
    for (const auto& p : probs) out.push_back(p[index_of(cls)]);
    return out;
  };
  LimeParams p = params;
  if (input[ch].rows < p.grid_rows) {
    // Spectrum inputs have one row: spread the same segment count along frequency.
    p.grid_cols = std::min(p.grid_rows * p.grid_cols, input[ch].cols);
    p.grid_rows = input[ch].rows;
  }
  LimeResult res = lime_explain(input[ch], fn, p);
  res.heatmap.cls = cls;
  res.heatmap.channel = channel;
  return res;
}

ImportanceReport rf_importance(const RandomForest& forest, std::span<const std::string> feature_names) {
  require(!forest.trees().empty() && forest.has_importance(), ErrorKind::StateError, "forest is not trained");
  const auto& imp = forest.importance();
  require(feature_names.size() == imp.size(), ErrorKind::ShapeError,
          "expected " + std::to_string(imp.size()) + " feature names, got " + std::to_string(feature_names.size()));
  ImportanceReport r;
  r.total = std::accumulate(imp.begin(), imp.end(), 0.0);
  std::array<double, kChannelCount> per_channel{};
  std::array<bool, kChannelCount> seen{};
  for (std::size_t i = 0; i < imp.size(); ++i) {
    FeatureImportance f;
    f.index = i;
    f.name = feature_names[i];
    f.weight = std::max(0.0, imp[i]);
    f.share = r.total > 0.0 ? f.weight / r.total : 0.0;
    if (const auto dot = f.name.find('.'); dot != std::string::npos) f.channel = parse_channel(f.name.substr(0, dot));
    if (f.channel) {
      per_channel[index_of(*f.channel)] += f.weight;
      seen[index_of(*f.channel)] = true;
    }
    r.ranked.push_back(std::move(f));
  }
  std::stable_sort(r.ranked.begin(), r.ranked.end(),
                   [](const FeatureImportance& a, const FeatureImportance& b) { return a.weight > b.weight; });
  for (auto ch : kAllChannels) {
    if (!seen[index_of(ch)]) continue;
    const double wgt = per_channel[index_of(ch)];
    r.channels.push_back({ch, wgt, r.total > 0.0 ? wgt / r.total : 0.0});
  }
  std::stable_sort(r.channels.begin(), r.channels.end(),
                   [](const ChannelImportance& a, const ChannelImportance& b) { return a.weight > b.weight; });
  return r;
}

void write_heatmap_csv(std::ostream& out, const Heatmap& h) {
  char buf[32];
  for (std::size_t r = 0; r < h.values.rows; ++r) {
    for (std::size_t c = 0; c < h.values.cols; ++c) {
      std::snprintf(buf, sizeof buf, "%.9g", h.values(r, c));
      out << (c ? "," : "") << buf;
    }
    out << '\n';
  }
}

namespace {

struct Rgb {
  int r, g, b;
};

// Blue (least active) through light grey to orange (most active).
Rgb colormap(double t) {
  t = std::clamp(t, 0.0, 1.0);
  const Rgb lo{59, 76, 192};
  const Rgb mid{240, 240, 240};
  const Rgb hi{230, 97, 1};
  const Rgb& a = t < 0.5 ? lo : mid;
  const Rgb& b = t < 0.5 ? mid : hi;
  const double u = t < 0.5 ? t * 2.0 : (t - 0.5) * 2.0;
  auto mix = [u](int x, int y) { return static_cast<int>(std::lround(x + (y - x) * u)); };
  return {mix(a.r, b.r), mix(a.g, b.g), mix(a.b, b.b)};
}

}  // namespace

void write_heatmap_svg(std::ostream& out, const Heatmap& h, bool transpose, double max_hz, double seconds) {
  const std::size_t bands = h.values.rows;
  const std::size_t frames = h.values.cols;
  const std::size_t nx = transpose ? frames : bands;
  const std::size_t ny = transpose ? bands : frames;
  const double left = 70.0;
  const double top = 40.0;
  const double width = 560.0;
  const double height = 420.0;
  const double cw = width / static_cast<double>(nx);
  const double ch = height / static_cast<double>(ny);
  double scale = 0.0;
  for (double v : h.values.data) scale = std::max(scale, std::abs(v));
  const bool signed_map = h.method == ExplainMethod::Lime;

  char buf[256];
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << left + width + 30 << "\" height=\"" << top + height + 60
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"24\" font-size=\"14\">%s %s %s</text>\n", left,
                h.method == ExplainMethod::Lime ? "LIME" : "Grad-CAM", std::string(class_label(h.cls)).c_str(),
                std::string(channel_name(h.channel)).c_str());
  out << buf;
  for (std::size_t b = 0; b < bands; ++b) {
    for (std::size_t f = 0; f < frames; ++f) {
      const double v = h.values(b, f);
      double t = 0.0;
      if (scale > 0.0) t = signed_map ? 0.5 + 0.5 * v / scale : v / scale;
      const Rgb c = colormap(t);
      const double x = left + static_cast<double>(transpose ? f : b) * cw;
      const double y = top + static_cast<double>(transpose ? (bands - 1 - b) : f) * ch;
      std::snprintf(buf, sizeof buf,
                    "<rect x=\"%.3f\" y=\"%.3f\" width=\"%.3f\" height=\"%.3f\" fill=\"rgb(%d,%d,%d)\"/>\n", x, y,
                    cw + 0.05, ch + 0.05, c.r, c.g, c.b);
      out << buf;
    }
  }
  out << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << width << "\" height=\"" << height
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  const char* xlabel = transpose ? "time (s)" : "frequency (Hz)";
  const char* ylabel = transpose ? "frequency (Hz)" : "time (s)";
  const double xmax = transpose ? seconds : max_hz;
  const double ymax = transpose ? max_hz : seconds;
  const int xticks = transpose ? 5 : 4;
  const int yticks = transpose ? 4 : 5;
  for (int i = 0; i <= xticks; ++i) {
    const double x = left + width * i / xticks;
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>"
                  "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">%g</text>\n",
                  x, top + height, x, top + height + 5, x, top + height + 18, xmax * i / xticks);
    out << buf;
  }
  for (int i = 0; i <= yticks; ++i) {
    // Time grows downwards; frequency grows upwards.
    const double frac = static_cast<double>(i) / yticks;
    const double y = transpose ? top + height * (1.0 - frac) : top + height * frac;
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>"
                  "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\">%g</text>\n",
                  left - 5, y, left, y, left - 8, y + 4, ymax * frac);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">%s</text>\n", left + width / 2,
                top + height + 40, xlabel);
  out << buf;
  std::snprintf(buf, sizeof buf,
                "<text x=\"18\" y=\"%.1f\" text-anchor=\"middle\" transform=\"rotate(-90 18 %.1f)\">%s</text>\n",
                top + height / 2, top + height / 2, ylabel);
  out << buf;
  out << "</svg>\n";
}

void write_importance_csv(std::ostream& out, const ImportanceReport& r) {
  out << "rank,index,feature,channel,weight,share\n";
  char buf[64];
  for (std::size_t i = 0; i < r.ranked.size(); ++i) {
    const auto& f = r.ranked[i];
    out << i + 1 << ',' << f.index << ',' << f.name << ',' << (f.channel ? channel_name(*f.channel) : "");
    std::snprintf(buf, sizeof buf, ",%.9g,%.9g\n", f.weight, f.share);
    out << buf;
  }
}

}  // namespace somno
