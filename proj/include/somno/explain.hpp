#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "somno/cnn.hpp"
#include "somno/forest.hpp"
#include "somno/matrix.hpp"

namespace somno {

enum class ExplainMethod { GradCam, Lime };

std::string_view explain_method_name(ExplainMethod m);  // "gradcam", "lime"
ExplainMethod parse_explain_method(std::string_view name);  // throws ConfigError

// Relevance over the model input grid (frequency bands x time frames for
// spectrograms). Grad-CAM maps lie in [0, 1]; LIME maps are signed.
struct Heatmap {
  Matrix values;
  DisorderClass cls = DisorderClass::Nrm;
  ChannelKind channel = ChannelKind::EEG1;
  ExplainMethod method = ExplainMethod::GradCam;
  std::string layer;       // Grad-CAM target layer
  double raw_max = 0.0;    // Grad-CAM: maximum before normalisation
  double raw_mass = 0.0;   // Grad-CAM: sum of the unnormalised upsampled map
};

// Bilinear resampling with aligned corners.
Matrix bilinear_resize(const Matrix& m, std::size_t rows, std::size_t cols);

// One heatmap per input channel; channels of a shared subnet share the map.
// `layer` is "convN" (every subnet) or "<subnet>.convN" (that subnet only).
std::vector<Heatmap> grad_cam(const CnnModel& model, const ChannelImages& input, DisorderClass cls,
                              const std::string& layer = "conv5");

struct LimeParams {
  std::size_t grid_rows = 7;
  std::size_t grid_cols = 10;
  std::size_t samples = 1000;
  double kernel_width = 0.0;  // 0 = half the segment count
  double ridge = 1.0;
  std::uint64_t seed = 1;
};

struct LimeSegment {
  std::size_t index = 0;  // row-major over the grid
  std::size_t row = 0;
  std::size_t col = 0;
  double weight = 0.0;
};

struct LimeResult {
  Heatmap heatmap;
  std::vector<double> coefficients;  // per segment
  double intercept = 0.0;
  std::vector<LimeSegment> ranked;   // by weight, descending; ties by index
};

// Grid segment of pixel (r, c) for an image of the given size.
std::size_t lime_segment_of(std::size_t r, std::size_t c, std::size_t rows, std::size_t cols, const LimeParams& p);

// Evaluates the probability of the explained class for each perturbed image.
using ProbabilityFn = std::function<std::vector<double>(const std::vector<Matrix>&)>;

// Model-agnostic LIME over one image. Throws Underdetermined when fewer
// samples than segments are requested.
LimeResult lime_explain(const Matrix& image, const ProbabilityFn& probability, const LimeParams& params);

// Perturbs `channel` of the input and explains the model's probability of `cls`.
LimeResult lime_explain(const CnnModel& model, const ChannelImages& input, DisorderClass cls, ChannelKind channel,
                        const LimeParams& params = {});

struct FeatureImportance {
  std::size_t index = 0;
  std::string name;
  double weight = 0.0;
  double share = 0.0;  // weight / total
  std::optional<ChannelKind> channel;
};

struct ChannelImportance {
  ChannelKind channel = ChannelKind::EEG1;
  double weight = 0.0;
  double share = 0.0;
};

struct ImportanceReport {
  std::vector<FeatureImportance> ranked;  // by weight descending, ties by feature index
  std::vector<ChannelImportance> channels;  // ranked the same way over channels
  double total = 0.0;
};

// Channel attribution comes from the "<channel>." name prefix when present.
ImportanceReport rf_importance(const RandomForest& forest, std::span<const std::string> feature_names);

void write_heatmap_csv(std::ostream& out, const Heatmap& h);
// Frequency runs horizontally and time vertically unless `transpose` is set.
// Band edges come from `max_hz` and the frame span from `seconds`.
void write_heatmap_svg(std::ostream& out, const Heatmap& h, bool transpose = false, double max_hz = 80.0,
                       double seconds = 5.0);
void write_importance_csv(std::ostream& out, const ImportanceReport& r);

}  // namespace somno
