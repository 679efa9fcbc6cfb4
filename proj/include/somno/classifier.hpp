#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "somno/cnn.hpp"
#include "somno/dataset.hpp"
#include "somno/forest.hpp"
#include "somno/svm.hpp"

namespace somno {

enum class ModelKind { DlR, DlF, Rf, Svm };

std::string_view model_kind_name(ModelKind kind);  // "dl-r", "dl-f", "rf", "svm"
ModelKind parse_model_kind(std::string_view name);  // throws ConfigError

struct ModelConfig {
  ModelKind kind = ModelKind::DlR;
  TrainHyper dl{};
  std::size_t fc_width = 128;
  double dropout = 0.5;
  std::size_t spectrum_bins = 2000;
  ForestParams rf{};
  SvmParams svm{};
  FeatureProfile profile = FeatureProfile::Core9;
};

// Representations a model kind needs from the dataset builder.
DatasetOptions dataset_options_for(const ModelConfig& cfg, const StftConfig& stft = {});

// Model-agnostic train/score interface used by the evaluation protocol.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual ModelKind kind() const = 0;
  virtual void fit(const Dataset& ds, std::span<const std::size_t> rows) = 0;
  // Per-class scores (probabilities, vote shares or decision values), one row per index.
  virtual std::vector<std::array<double, kClassCount>> scores(const Dataset& ds,
                                                              std::span<const std::size_t> rows) const = 0;
  virtual void save(const std::filesystem::path& path) const = 0;

  std::vector<DisorderClass> predict(const Dataset& ds, std::span<const std::size_t> rows) const;
};

class DlClassifier final : public Classifier {
 public:
  explicit DlClassifier(const ModelConfig& cfg);
  explicit DlClassifier(CnnModel model);
  ModelKind kind() const override { return kind_; }
  void fit(const Dataset& ds, std::span<const std::size_t> rows) override;
  std::vector<std::array<double, kClassCount>> scores(const Dataset& ds,
                                                      std::span<const std::size_t> rows) const override;
  void save(const std::filesystem::path& path) const override;

  const CnnModel& model() const { return model_; }
  CnnModel& model() { return model_; }
  const TrainHistory& history() const { return history_; }
  TrainHyper& hyper() { return hyper_; }

 private:
  ModelKind kind_;
  CnnModel model_;
  TrainHyper hyper_;
  TrainHistory history_;
};

class RfClassifier final : public Classifier {
 public:
  explicit RfClassifier(const ForestParams& params) : params_(params) {}
  explicit RfClassifier(RandomForest forest) : params_(forest.params()), forest_(std::move(forest)) {}
  ModelKind kind() const override { return ModelKind::Rf; }
  void fit(const Dataset& ds, std::span<const std::size_t> rows) override;
  std::vector<std::array<double, kClassCount>> scores(const Dataset& ds,
                                                      std::span<const std::size_t> rows) const override;
  void save(const std::filesystem::path& path) const override;
  const RandomForest& forest() const { return forest_; }

 private:
  ForestParams params_;
  RandomForest forest_;
};

class SvmClassifier final : public Classifier {
 public:
  explicit SvmClassifier(const SvmParams& params) : params_(params) {}
  explicit SvmClassifier(SvmModel model) : params_(model.params()), model_(std::move(model)), trained_(true) {}
  ModelKind kind() const override { return ModelKind::Svm; }
  void fit(const Dataset& ds, std::span<const std::size_t> rows) override;
  std::vector<std::array<double, kClassCount>> scores(const Dataset& ds,
                                                      std::span<const std::size_t> rows) const override;
  void save(const std::filesystem::path& path) const override;
  const SvmModel& model() const { return model_; }

 private:
  SvmParams params_;
  SvmModel model_;
  bool trained_ = false;
};

std::unique_ptr<Classifier> make_classifier(const ModelConfig& cfg);
// Detects SOMW checkpoints and JSON model dumps by content.
std::unique_ptr<Classifier> load_classifier(const std::filesystem::path& path);

}  // namespace somno
