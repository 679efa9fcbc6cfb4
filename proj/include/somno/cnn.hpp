#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "somno/autodiff.hpp"
#include "somno/dataset.hpp"

namespace somno {

enum class CnnInput { Spectrogram, Spectrum };

// conv (same padding) -> ReLU -> max-pool. A pool size of 1 leaves that axis
// untouched; window and stride are equal.
struct ConvStage {
  std::size_t filters = 32;
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::size_t pool_h = 2;
  std::size_t pool_w = 2;
  ad::PoolRounding round_h = ad::PoolRounding::Floor;
  ad::PoolRounding round_w = ad::PoolRounding::Floor;
};

struct SubnetSpec {
  std::string name;
  std::vector<ChannelKind> channels;
  std::vector<ConvStage> stages;
  std::size_t fc_width = 128;
};

struct StageShape {
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t c = 0;

  std::string str() const;  // "10x35x32" (height x width x channels)
};

// Table-driven multi-subnet CNN: every subnet ends in its own fully connected
// layer; the subnet outputs are concatenated, passed through dropout and a
// final fully connected layer producing class logits.
struct CnnArchitecture {
  std::string name = "dl-r";
  CnnInput input = CnnInput::Spectrogram;
  std::size_t in_h = 21;
  std::size_t in_w = 70;
  std::vector<SubnetSpec> subnets;
  std::size_t num_classes = kClassCount;
  double dropout = 0.5;

  bool one_d() const { return input == CnnInput::Spectrum; }
  void validate() const;  // ConfigError / ShapeError
  std::vector<StageShape> conv_shapes(std::size_t subnet) const;  // after conv+ReLU
  std::vector<StageShape> pool_shapes(std::size_t subnet) const;  // after pooling
  // Pooled stage outputs as tabulated: "HxWxC", or "Lx1xC" for spectrum input.
  std::vector<std::string> stage_dimensions(std::size_t subnet) const;
  std::size_t fusion_width() const;

  std::string to_json() const;
  static CnnArchitecture from_json(const std::string& text);
  std::uint64_t hash() const;  // FNV-1a of the canonical JSON
};

// Four subnets over 21x70 spectrograms: EEG1-3 stacked, then EMG, ECG, EOG.
CnnArchitecture dlr_architecture(std::size_t fc_width = 128, double dropout = 0.5);
// Four 1D subnets over the first 2000 spectrum bins.
CnnArchitecture dlf_architecture(std::size_t fc_width = 128, double dropout = 0.5, std::size_t bins = 2000);

struct NamedTensor {
  std::string name;
  ad::Tensor tensor;
};

class CnnModel {
 public:
  CnnModel() = default;
  explicit CnnModel(CnnArchitecture arch);

  const CnnArchitecture& architecture() const { return arch_; }
  std::vector<NamedTensor>& parameters() { return params_; }
  const std::vector<NamedTensor>& parameters() const { return params_; }
  ad::Tensor& parameter(const std::string& name);

  // He-normal weights, zero biases.
  void init_he(std::uint64_t seed);

  // Per-channel z-scoring statistics taken from the given training rows.
  void fit_normalization(std::span<const ChannelImages> images, std::span<const std::size_t> rows);
  const std::array<double, kChannelCount>& input_mean() const { return mean_; }
  const std::array<double, kChannelCount>& input_std() const { return std_; }
  void set_normalization(const std::array<double, kChannelCount>& mean, const std::array<double, kChannelCount>& sd);

  struct Forward {
    ad::NodeId logits = 0;
    std::vector<ad::NodeId> params;                    // parallel to parameters()
    std::vector<ad::NodeId> inputs;                    // per subnet
    std::vector<std::vector<ad::NodeId>> activations;  // [subnet][stage], post-ReLU, pre-pool
  };

  Forward forward(ad::Graph& graph, std::span<const ChannelImages* const> batch, bool input_grad = false) const;

  // Softmax probabilities, one row per input.
  std::vector<std::vector<double>> predict_proba(std::span<const ChannelImages* const> batch) const;

  // "cnn1.conv5" -> {0, 4}; a bare "conv5" yields subnet kAllSubnets. Throws LayerError.
  static constexpr std::size_t kAllSubnets = static_cast<std::size_t>(-1);
  std::pair<std::size_t, std::size_t> resolve_layer(const std::string& name) const;

 private:
  CnnArchitecture arch_;
  std::vector<NamedTensor> params_;
  std::array<double, kChannelCount> mean_{};
  std::array<double, kChannelCount> std_{1, 1, 1, 1, 1, 1};
};

// SOMW checkpoint: "SOMW" | version u16 | architecture hash u64 | architecture JSON (u32 len + bytes)
//   | tensor count u32 | per tensor: name (u32 len + bytes), rank u32, dims u64..., float64 payload.
inline constexpr std::uint16_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const CnnModel& model);
CnnModel load_checkpoint(const std::filesystem::path& path);

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;  // NaN without a validation set
  double val_accuracy = 0.0;
};

struct TrainHyper {
  std::string optimizer = "adam";
  double learning_rate = 1e-3;
  std::size_t batch = 32;
  std::size_t epochs = 30;
  std::uint64_t seed = 1;
  // Mini-batches are split into fixed chunks that may run on separate
  // threads; the chunking (not the thread count) fixes summation order.
  std::size_t grad_chunk = 16;
  bool class_weighting = true;
  std::function<void(const EpochStats&)> on_epoch;
};

struct TrainHistory {
  double initial_loss = 0.0;  // loss of the first mini-batch before any update
  std::vector<EpochStats> epochs;
};

// Inverse-frequency weights over the classes present in `rows`; absent classes get 0.
std::array<double, kClassCount> inverse_frequency_weights(const Dataset& ds, std::span<const std::size_t> rows);

const std::vector<ChannelImages>& cnn_inputs(const CnnArchitecture& arch, const Dataset& ds);

// Refits input normalization on `train`, then trains in place from the
// model's current weights. Deterministic for a given seed and chunk size.
TrainHistory train_dl(CnnModel& model, const Dataset& ds, std::span<const std::size_t> train,
                      std::span<const std::size_t> validation, const TrainHyper& hyper);

struct LossSummary {
  double loss = 0.0;
  double accuracy = 0.0;
};
LossSummary evaluate_loss(const CnnModel& model, const Dataset& ds, std::span<const std::size_t> rows,
                          const std::array<double, kClassCount>& class_weights);

}  // namespace somno
