#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "somno/classifier.hpp"
#include "somno/dataset.hpp"

namespace somno {

enum class SplitMode { Epoch, Recording };

std::string_view split_mode_name(SplitMode mode);
SplitMode parse_split_mode(std::string_view name);  // throws ConfigError

inline constexpr int kTestFold = -1;

struct SplitPlan {
  std::uint64_t seed = 0;
  double test_fraction = 0.2;
  std::size_t folds = 5;
  SplitMode mode = SplitMode::Epoch;
  std::vector<int> assignment;  // per dataset row: kTestFold or fold 0..folds-1

  std::vector<std::size_t> test_rows() const;
  std::vector<std::size_t> train_rows() const;  // every non-test row
  std::vector<std::size_t> fold_rows(std::size_t fold) const;
  std::vector<std::size_t> fold_train_rows(std::size_t fold) const;  // training rows outside `fold`
};

struct SplitOptions {
  double test_fraction = 0.2;
  std::size_t folds = 5;
  SplitMode mode = SplitMode::Epoch;
  std::size_t min_per_class = 10;
};

// Stratified test split, then stratified fold rotation over the remainder.
// Throws StratificationError when a present class has too few epochs
// (or, in recording mode, fewer than two recordings).
SplitPlan make_split(const Dataset& ds, std::uint64_t seed, const SplitOptions& options = {});

struct ConfusionMatrix {
  std::array<std::array<std::uint64_t, kClassCount>, kClassCount> counts{};  // [truth][predicted]

  void add(DisorderClass truth, DisorderClass predicted, std::uint64_t n = 1);
  std::uint64_t total() const;
  std::uint64_t row_sum(std::size_t c) const;
  std::uint64_t col_sum(std::size_t c) const;
};

// A rate whose denominator may be zero; undefined rates carry NaN.
struct Rate {
  double value = 0.0;
  bool defined = false;
};

Rate sensitivity(const ConfusionMatrix& m, DisorderClass c);
Rate specificity(const ConfusionMatrix& m, DisorderClass c);

struct ClassMetrics {
  DisorderClass cls = DisorderClass::Nrm;
  std::uint64_t support = 0;
  Rate sensitivity;
  Rate specificity;
};

struct FoldMetrics {
  std::size_t fold = 0;
  std::size_t train_size = 0;
  std::size_t validation_size = 0;
  ConfusionMatrix confusion;
  double accuracy = 0.0;
  double macro_sensitivity = 0.0;
};

struct EvalReport {
  std::string model_id;
  std::string config_hash;
  SplitMode split_mode = SplitMode::Epoch;
  std::uint64_t seed = 0;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  ConfusionMatrix confusion;
  std::vector<ClassMetrics> classes;  // every class slot, in slot order
  std::vector<FoldMetrics> folds;
  double accuracy = 0.0;
  double macro_sensitivity = 0.0;  // mean over defined per-class values
  double macro_specificity = 0.0;  // mean over classes present in the truth

  const ClassMetrics* find(DisorderClass c) const;
};

ConfusionMatrix confusion_of(std::span<const DisorderClass> truth, std::span<const DisorderClass> predicted);
// Fills the per-class rows and aggregates from `report.confusion`.
void summarize(EvalReport& report);

struct ProtocolOptions {
  ModelConfig model{};
  std::uint64_t seed = 1;
  SplitOptions split{};
  bool cross_validate = true;
  // Training epochs for the fold models of the DL kinds; 0 keeps model.dl.epochs.
  std::size_t cv_epochs = 0;
  std::string config_hash;
};

struct ProtocolResult {
  SplitPlan plan;
  EvalReport report;
  std::unique_ptr<Classifier> final_model;
};

// Fold rotation over the training share, then a final model retrained on the
// whole training share and scored on the held-out test rows.
ProtocolResult run_protocol(const Dataset& ds, const ProtocolOptions& options);

// Scores an already trained model on `rows`.
EvalReport evaluate_model(const Classifier& model, const Dataset& ds, std::span<const std::size_t> rows);

void write_report_json(std::ostream& out, const EvalReport& report);
void write_class_csv(std::ostream& out, const EvalReport& report);      // class,sensitivity,specificity
void write_confusion_csv(std::ostream& out, const EvalReport& report);  // truth rows x predicted columns
// Plain-text table with percentages, one row per class.
void write_report_table(std::ostream& out, const EvalReport& report);
void write_report_files(const std::filesystem::path& dir, const EvalReport& report);

}  // namespace somno
