#include "somno/classifier.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "somno/error.hpp"

namespace somno {

std::string_view model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::DlR: return "dl-r";
    case ModelKind::DlF: return "dl-f";
    case ModelKind::Rf: return "rf";
    case ModelKind::Svm: return "svm";
  }
  return "?";
}

ModelKind parse_model_kind(std::string_view name) {
  for (auto k : {ModelKind::DlR, ModelKind::DlF, ModelKind::Rf, ModelKind::Svm}) {
    if (model_kind_name(k) == name) return k;
  }
  fail(ErrorKind::ConfigError, "unknown model '" + std::string(name) + "' (expected dl-r, dl-f, rf or svm)");
}

DatasetOptions dataset_options_for(const ModelConfig& cfg, const StftConfig& stft) {
  DatasetOptions o;
  o.stft = stft;
  o.profile = cfg.profile;
  o.spectrum_bins = cfg.spectrum_bins;
  o.spectrograms = cfg.kind == ModelKind::DlR;
  o.spectra = cfg.kind == ModelKind::DlF;
  o.features = cfg.kind == ModelKind::Rf || cfg.kind == ModelKind::Svm;
  return o;
}

std::vector<DisorderClass> Classifier::predict(const Dataset& ds, std::span<const std::size_t> rows) const {
  const auto s = scores(ds, rows);
  std::vector<DisorderClass> out;
  out.reserve(s.size());
  for (const auto& row : s) out.push_back(static_cast<DisorderClass>(std::max_element(row.begin(), row.end()) - row.begin()));
  return out;
}

namespace {

std::vector<std::vector<double>> feature_rows(const Dataset& ds, std::span<const std::size_t> rows) {
  require(ds.features.size() == ds.size(), ErrorKind::StateError, "dataset lacks feature vectors");
  std::vector<std::vector<double>> out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back(ds.features.at(r));
  return out;
}

std::vector<DisorderClass> label_rows(const Dataset& ds, std::span<const std::size_t> rows) {
  std::vector<DisorderClass> out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back(ds.samples.at(r).label);
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::IoError, "cannot write " + path.string());
  out << text;
  require(static_cast<bool>(out), ErrorKind::IoError, "write failed for " + path.string());
}

}  // namespace

DlClassifier::DlClassifier(const ModelConfig& cfg)
    : kind_(cfg.kind),
      model_(cfg.kind == ModelKind::DlF ? dlf_architecture(cfg.fc_width, cfg.dropout, cfg.spectrum_bins)
                                        : dlr_architecture(cfg.fc_width, cfg.dropout)),
      hyper_(cfg.dl) {
  require(cfg.kind == ModelKind::DlR || cfg.kind == ModelKind::DlF, ErrorKind::ConfigError, "not a DL model kind");
  model_.init_he(hyper_.seed);
}

DlClassifier::DlClassifier(CnnModel model)
    : kind_(model.architecture().one_d() ? ModelKind::DlF : ModelKind::DlR), model_(std::move(model)) {}

void DlClassifier::fit(const Dataset& ds, std::span<const std::size_t> rows) {
  model_ = CnnModel(model_.architecture());
  model_.init_he(hyper_.seed);
  history_ = train_dl(model_, ds, rows, {}, hyper_);
}

std::vector<std::array<double, kClassCount>> DlClassifier::scores(const Dataset& ds,
                                                                  std::span<const std::size_t> rows) const {
  const auto& inputs = cnn_inputs(model_.architecture(), ds);
  std::vector<const ChannelImages*> batch;
  for (auto r : rows) batch.push_back(&inputs.at(r));
  std::vector<std::array<double, kClassCount>> out(rows.size());
  if (rows.empty()) return out;
  const auto probs = model_.predict_proba(batch);
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(probs[i].begin(), kClassCount, out[i].begin());
  return out;
}

void DlClassifier::save(const std::filesystem::path& path) const { save_checkpoint(path, model_); }

void RfClassifier::fit(const Dataset& ds, std::span<const std::size_t> rows) {
  const auto x = feature_rows(ds, rows);
  const auto y = label_rows(ds, rows);
  forest_ = RandomForest::train(x, y, params_);
}

std::vector<std::array<double, kClassCount>> RfClassifier::scores(const Dataset& ds,
                                                                  std::span<const std::size_t> rows) const {
  require(ds.features.size() == ds.size(), ErrorKind::StateError, "dataset lacks feature vectors");
  std::vector<std::array<double, kClassCount>> out;
  for (auto r : rows) out.push_back(forest_.predict(ds.features.at(r)).vote_share);
  return out;
}

void RfClassifier::save(const std::filesystem::path& path) const { write_text(path, forest_.to_json()); }

void SvmClassifier::fit(const Dataset& ds, std::span<const std::size_t> rows) {
  const auto x = feature_rows(ds, rows);
  const auto y = label_rows(ds, rows);
  model_ = SvmModel::train(x, y, params_);
  trained_ = true;
}

std::vector<std::array<double, kClassCount>> SvmClassifier::scores(const Dataset& ds,
                                                                   std::span<const std::size_t> rows) const {
  require(trained_, ErrorKind::StateError, "SVM is not trained");
  require(ds.features.size() == ds.size(), ErrorKind::StateError, "dataset lacks feature vectors");
  std::vector<std::array<double, kClassCount>> out;
  for (auto r : rows) out.push_back(model_.decision_values(ds.features.at(r)));
  return out;
}

void SvmClassifier::save(const std::filesystem::path& path) const { write_text(path, model_.to_json()); }

std::unique_ptr<Classifier> make_classifier(const ModelConfig& cfg) {
  switch (cfg.kind) {
    case ModelKind::DlR:
    case ModelKind::DlF: return std::make_unique<DlClassifier>(cfg);
    case ModelKind::Rf: return std::make_unique<RfClassifier>(cfg.rf);
    case ModelKind::Svm: return std::make_unique<SvmClassifier>(cfg.svm);
  }
  fail(ErrorKind::ConfigError, "unknown model kind");
}

std::unique_ptr<Classifier> load_classifier(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::IoError, "cannot open " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  if (in && std::string_view(magic, 4) == "SOMW") {
    in.close();
    return std::make_unique<DlClassifier>(load_checkpoint(path));
  }
  in.clear();
  in.seekg(0);
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  std::string kind;
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.is_object() && j.contains("kind") && j["kind"].is_string()) kind = j["kind"].get<std::string>();
  } catch (const nlohmann::json::exception&) {
  }
  if (kind == "rf") return std::make_unique<RfClassifier>(RandomForest::from_json(text));
  if (kind == "svm") return std::make_unique<SvmClassifier>(SvmModel::from_json(text));
  fail(ErrorKind::FormatError, path.string() + " is not a recognised model file");
}

}  // namespace somno
