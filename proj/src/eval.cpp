#include "somno/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <set>

#include <json.hpp>

#include "somno/error.hpp"
#include "somno/hash.hpp"
#include "somno/parallel.hpp"

namespace somno {

using nlohmann::json;

std::string_view split_mode_name(SplitMode mode) { return mode == SplitMode::Recording ? "recording" : "epoch"; }

SplitMode parse_split_mode(std::string_view name) {
  if (name == "epoch") return SplitMode::Epoch;
  if (name == "recording") return SplitMode::Recording;
  fail(ErrorKind::ConfigError, "unknown split mode '" + std::string(name) + "' (expected epoch or recording)");
}

std::vector<std::size_t> SplitPlan::test_rows() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] == kTestFold) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> SplitPlan::train_rows() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] != kTestFold) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> SplitPlan::fold_rows(std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] == static_cast<int>(fold)) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> SplitPlan::fold_train_rows(std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] != kTestFold && assignment[i] != static_cast<int>(fold)) out.push_back(i);
  }
  return out;
}

namespace {

std::size_t test_count(std::size_t n, double fraction) {
  return static_cast<std::size_t>(std::llround(static_cast<double>(n) * fraction));
}

}  // namespace

SplitPlan make_split(const Dataset& ds, std::uint64_t seed, const SplitOptions& options) {
  require(options.test_fraction > 0.0 && options.test_fraction < 1.0, ErrorKind::ConfigError,
          "test fraction must lie in (0, 1)");
  require(options.folds >= 2, ErrorKind::ConfigError, "need at least two folds");
  require(ds.size() > 0, ErrorKind::EmptyDataset, "cannot split an empty dataset");
  SplitPlan plan;
  plan.seed = seed;
  plan.test_fraction = options.test_fraction;
  plan.folds = options.folds;
  plan.mode = options.mode;
  plan.assignment.assign(ds.size(), kTestFold);

  std::array<std::vector<std::size_t>, kClassCount> by_class;
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[index_of(ds.samples[i].label)].push_back(i);
  for (std::size_t k = 0; k < kClassCount; ++k) {
    const std::size_t n = by_class[k].size();
    require(n == 0 || n >= options.min_per_class, ErrorKind::StratificationError,
            "class " + std::string(class_label(static_cast<DisorderClass>(k))) + " has " + std::to_string(n) +
                " epochs; stratified splitting needs at least " + std::to_string(options.min_per_class));
  }

  if (options.mode == SplitMode::Epoch) {
    for (std::size_t k = 0; k < kClassCount; ++k) {
      auto rows = by_class[k];
      if (rows.empty()) continue;
      std::mt19937_64 rng(mix_seed({seed, k, 0x53504c4954ULL}));
      std::shuffle(rows.begin(), rows.end(), rng);
      const std::size_t nt = test_count(rows.size(), options.test_fraction);
      require(nt >= 1 && rows.size() - nt >= options.folds, ErrorKind::StratificationError,
              "class " + std::string(class_label(static_cast<DisorderClass>(k))) + " is too small for the split");
      for (std::size_t i = 0; i < rows.size(); ++i) {
        plan.assignment[rows[i]] = i < nt ? kTestFold : static_cast<int>((i - nt) % options.folds);
      }
    }
    return plan;
  }

  // Recording mode: whole recordings move together; each is stratified by its majority label.
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < ds.size(); ++i) groups[ds.samples[i].group].push_back(i);
  std::array<std::vector<std::string>, kClassCount> group_by_class;
  for (const auto& [name, rows] : groups) {
    std::array<std::size_t, kClassCount> votes{};
    for (auto r : rows) ++votes[index_of(ds.samples[r].label)];
    group_by_class[static_cast<std::size_t>(std::max_element(votes.begin(), votes.end()) - votes.begin())].push_back(name);
  }
  for (std::size_t k = 0; k < kClassCount; ++k) {
    auto names = group_by_class[k];
    if (names.empty()) continue;
    require(names.size() >= 2, ErrorKind::StratificationError,
            "class " + std::string(class_label(static_cast<DisorderClass>(k))) +
                " needs at least two recordings for a recording-wise split");
    std::mt19937_64 rng(mix_seed({seed, k, 0x47524f5550ULL}));
    std::shuffle(names.begin(), names.end(), rng);
    const std::size_t nt = std::clamp<std::size_t>(test_count(names.size(), options.test_fraction), 1, names.size() - 1);
    for (std::size_t i = 0; i < names.size(); ++i) {
      const int slot = i < nt ? kTestFold : static_cast<int>((i - nt) % options.folds);
      for (auto r : groups[names[i]]) plan.assignment[r] = slot;
    }
  }
  return plan;
}

void ConfusionMatrix::add(DisorderClass truth, DisorderClass predicted, std::uint64_t n) {
  counts[index_of(truth)][index_of(predicted)] += n;
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (const auto& row : counts) {
    for (auto v : row) t += v;
  }
  return t;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t c) const {
  std::uint64_t t = 0;
  for (auto v : counts.at(c)) t += v;
  return t;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t c) const {
  std::uint64_t t = 0;
  for (const auto& row : counts) t += row.at(c);
  return t;
}

Rate sensitivity(const ConfusionMatrix& m, DisorderClass c) {
  const std::size_t k = index_of(c);
  const std::uint64_t tp = m.counts[k][k];
  const std::uint64_t fn = m.row_sum(k) - tp;
  if (tp + fn == 0) return {std::numeric_limits<double>::quiet_NaN(), false};
  return {static_cast<double>(tp) / static_cast<double>(tp + fn), true};
}

Rate specificity(const ConfusionMatrix& m, DisorderClass c) {
  const std::size_t k = index_of(c);
  const std::uint64_t total = m.total();
  const std::uint64_t fp = m.col_sum(k) - m.counts[k][k];
  const std::uint64_t tn = total - m.row_sum(k) - fp;
  if (tn + fp == 0) return {std::numeric_limits<double>::quiet_NaN(), false};
  return {static_cast<double>(tn) / static_cast<double>(tn + fp), true};
}

const ClassMetrics* EvalReport::find(DisorderClass c) const {
  for (const auto& m : classes) {
    if (m.cls == c) return &m;
  }
  return nullptr;
}

ConfusionMatrix confusion_of(std::span<const DisorderClass> truth, std::span<const DisorderClass> predicted) {
  require(truth.size() == predicted.size(), ErrorKind::ShapeError, "truth and prediction counts differ");
  ConfusionMatrix m;
  for (std::size_t i = 0; i < truth.size(); ++i) m.add(truth[i], predicted[i]);
  return m;
}

namespace {

double macro_sens(const ConfusionMatrix& m) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < kClassCount; ++k) {
    const Rate r = sensitivity(m, static_cast<DisorderClass>(k));
    if (r.defined) {
      sum += r.value;
      ++n;
    }
  }
  return n > 0 ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

double accuracy_of(const ConfusionMatrix& m) {
  const auto total = m.total();
  if (total == 0) return std::numeric_limits<double>::quiet_NaN();
  std::uint64_t diag = 0;
  for (std::size_t k = 0; k < kClassCount; ++k) diag += m.counts[k][k];
  return static_cast<double>(diag) / static_cast<double>(total);
}

std::vector<DisorderClass> labels_of(const Dataset& ds, std::span<const std::size_t> rows) {
  std::vector<DisorderClass> out;
  for (auto r : rows) out.push_back(ds.samples.at(r).label);
  return out;
}

ModelConfig with_seed(ModelConfig cfg, std::uint64_t seed, std::size_t epochs) {
  cfg.dl.seed = seed;
  cfg.rf.seed = seed;
  if (epochs > 0) cfg.dl.epochs = epochs;
  return cfg;
}

}  // namespace

void summarize(EvalReport& report) {
  const auto& m = report.confusion;
  report.classes.clear();
  double spec_sum = 0.0;
  std::size_t spec_n = 0;
  for (std::size_t k = 0; k < kClassCount; ++k) {
    const auto c = static_cast<DisorderClass>(k);
    ClassMetrics cm{c, m.row_sum(k), sensitivity(m, c), specificity(m, c)};
    if (cm.specificity.defined && cm.support > 0) {
      spec_sum += cm.specificity.value;
      ++spec_n;
    }
    report.classes.push_back(cm);
  }
  report.accuracy = accuracy_of(m);
  report.macro_sensitivity = macro_sens(m);
  report.macro_specificity = spec_n > 0 ? spec_sum / static_cast<double>(spec_n) : std::numeric_limits<double>::quiet_NaN();
}

EvalReport evaluate_model(const Classifier& model, const Dataset& ds, std::span<const std::size_t> rows) {
  EvalReport report;
  report.model_id = std::string(model_kind_name(model.kind()));
  report.test_size = rows.size();
  const auto predicted = model.predict(ds, rows);
  const auto truth = labels_of(ds, rows);
  report.confusion = confusion_of(truth, predicted);
  summarize(report);
  return report;
}

ProtocolResult run_protocol(const Dataset& ds, const ProtocolOptions& options) {
  ProtocolResult result;
  result.plan = make_split(ds, options.seed, options.split);
  const auto train = result.plan.train_rows();
  const auto test = result.plan.test_rows();

  std::set<std::string> train_ids;
  std::set<std::string> train_groups;
  for (auto r : train) {
    train_ids.insert(ds.samples[r].epoch_id);
    train_groups.insert(ds.samples[r].group);
  }
  for (auto r : test) {
    require(train_ids.count(ds.samples[r].epoch_id) == 0, ErrorKind::InvariantBreach,
            "test epoch " + ds.samples[r].epoch_id + " also appears in training");
    if (options.split.mode == SplitMode::Recording) {
      require(train_groups.count(ds.samples[r].group) == 0, ErrorKind::InvariantBreach,
              "test recording " + ds.samples[r].group + " also appears in training");
    }
  }

  EvalReport& report = result.report;
  report.seed = options.seed;
  report.split_mode = options.split.mode;
  report.config_hash = options.config_hash;
  report.train_size = train.size();
  report.test_size = test.size();

  if (options.cross_validate) {
    const std::size_t folds = result.plan.folds;
    report.folds.resize(folds);
    parallel_for(folds, [&](std::size_t f) {
      const auto fit_rows = result.plan.fold_train_rows(f);
      const auto val_rows = result.plan.fold_rows(f);
      auto clf = make_classifier(with_seed(options.model, mix_seed({options.model.dl.seed, f + 1}), options.cv_epochs));
      clf->fit(ds, fit_rows);
      FoldMetrics& fm = report.folds[f];
      fm.fold = f + 1;
      fm.train_size = fit_rows.size();
      fm.validation_size = val_rows.size();
      fm.confusion = confusion_of(labels_of(ds, val_rows), clf->predict(ds, val_rows));
      fm.accuracy = accuracy_of(fm.confusion);
      fm.macro_sensitivity = macro_sens(fm.confusion);
    });
  }

  result.final_model = make_classifier(options.model);
  result.final_model->fit(ds, train);
  report.model_id = std::string(model_kind_name(options.model.kind)) + "-seed" + std::to_string(options.seed);
  report.confusion = confusion_of(labels_of(ds, test), result.final_model->predict(ds, test));
  summarize(report);
  return result;
}

namespace {

json rate_json(const Rate& r) { return r.defined ? json(r.value) : json(nullptr); }

std::string fmt(double v, const char* spec = "%.6f") {
  if (!std::isfinite(v)) return "NaN";
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace

void write_report_json(std::ostream& out, const EvalReport& r) {
  json j;
  j["model_id"] = r.model_id;
  j["config_hash"] = r.config_hash;
  j["split_mode"] = split_mode_name(r.split_mode);
  j["seed"] = r.seed;
  j["train_size"] = r.train_size;
  j["test_size"] = r.test_size;
  j["accuracy"] = std::isfinite(r.accuracy) ? json(r.accuracy) : json(nullptr);
  j["macro_sensitivity"] = std::isfinite(r.macro_sensitivity) ? json(r.macro_sensitivity) : json(nullptr);
  j["macro_specificity"] = std::isfinite(r.macro_specificity) ? json(r.macro_specificity) : json(nullptr);
  std::vector<std::string> order;
  for (std::size_t k = 0; k < kClassCount; ++k) order.emplace_back(class_label(static_cast<DisorderClass>(k)));
  j["class_order"] = order;
  j["confusion"] = r.confusion.counts;
  json classes = json::array();
  for (const auto& c : r.classes) {
    classes.push_back({{"class", std::string(class_label(c.cls))},
                       {"support", c.support},
                       {"sensitivity", rate_json(c.sensitivity)},
                       {"specificity", rate_json(c.specificity)},
                       {"sensitivity_defined", c.sensitivity.defined},
                       {"specificity_defined", c.specificity.defined}});
  }
  j["classes"] = classes;
  json folds = json::array();
  for (const auto& f : r.folds) {
    folds.push_back({{"fold", f.fold},
                     {"train_size", f.train_size},
                     {"validation_size", f.validation_size},
                     {"accuracy", std::isfinite(f.accuracy) ? json(f.accuracy) : json(nullptr)},
                     {"macro_sensitivity", std::isfinite(f.macro_sensitivity) ? json(f.macro_sensitivity) : json(nullptr)},
                     {"confusion", f.confusion.counts}});
  }
  j["folds"] = folds;
  if (r.split_mode == SplitMode::Epoch) {
    j["note"] = "epoch-wise split: epochs of one recording can fall on both sides";
  }
  out << j.dump(2) << '\n';
}

void write_class_csv(std::ostream& out, const EvalReport& r) {
  out << "class,sensitivity,specificity\n";
  for (const auto& c : r.classes) {
    out << class_label(c.cls) << ',' << fmt(c.sensitivity.value) << ',' << fmt(c.specificity.value) << '\n';
  }
}

void write_confusion_csv(std::ostream& out, const EvalReport& r) {
  out << "truth\\predicted";
  for (std::size_t k = 0; k < kClassCount; ++k) out << ',' << class_label(static_cast<DisorderClass>(k));
  out << '\n';
  for (std::size_t t = 0; t < kClassCount; ++t) {
    out << class_label(static_cast<DisorderClass>(t));
    for (std::size_t p = 0; p < kClassCount; ++p) out << ',' << r.confusion.counts[t][p];
    out << '\n';
  }
}

void write_report_table(std::ostream& out, const EvalReport& r) {
  out << "Model: " << r.model_id << "  (split: " << split_mode_name(r.split_mode) << ", test epochs: " << r.test_size
      << ")\n";
  out << "Class   Sensitivity (%)   Specificity (%)\n";
  for (const auto& c : r.classes) {
    char line[96];
    std::snprintf(line, sizeof line, "%-7s %15s   %15s\n", std::string(class_label(c.cls)).c_str(),
                  c.sensitivity.defined ? fmt(100.0 * c.sensitivity.value, "%.1f").c_str() : "n/a",
                  c.specificity.defined ? fmt(100.0 * c.specificity.value, "%.1f").c_str() : "n/a");
    out << line;
  }
  out << "Macro   " << fmt(100.0 * r.macro_sensitivity, "%15.1f") << "   " << fmt(100.0 * r.macro_specificity, "%15.1f")
      << '\n';
}

void write_report_files(const std::filesystem::path& dir, const EvalReport& report) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream f(dir / name);
    require(static_cast<bool>(f), ErrorKind::IoError, "cannot write " + (dir / name).string());
    return f;
  };
  {
    auto f = open("report.json");
    write_report_json(f, report);
  }
  {
    auto f = open("metrics.csv");
    write_class_csv(f, report);
  }
  {
    auto f = open("confusion.csv");
    write_confusion_csv(f, report);
  }
  {
    auto f = open("table.txt");
    write_report_table(f, report);
  }
}

}  // namespace somno
