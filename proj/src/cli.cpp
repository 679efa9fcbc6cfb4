#include "somno/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "somno/error.hpp"
#include "somno/explain.hpp"
#include "somno/hash.hpp"

namespace somno {

using nlohmann::json;

namespace {

// ---- config parsing -------------------------------------------------------

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  require(j.is_object(), ErrorKind::ConfigError, where + " must be an object");
  for (const auto& item : j.items()) {
    const bool ok = std::any_of(allowed.begin(), allowed.end(), [&](const char* k) { return item.key() == k; });
    require(ok, ErrorKind::ConfigError, "unknown key '" + (where.empty() ? "" : where + ".") + item.key() + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& dst, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorKind::ConfigError, "key '" + where + "." + key + "' has the wrong type");
  }
}

DisorderClass class_from(const std::string& code) {
  const auto c = parse_class(code);
  require(c.has_value() && *c != DisorderClass::Reserved, ErrorKind::ConfigError, "unknown class '" + code + "'");
  return *c;
}

ChannelKind channel_from(const std::string& name) {
  const auto c = parse_channel(name);
  require(c.has_value(), ErrorKind::ConfigError, "unknown channel '" + name + "'");
  return *c;
}

std::array<bool, kChannelCount> channel_mask(const std::vector<std::string>& names) {
  std::array<bool, kChannelCount> mask{};
  for (const auto& n : names) mask[index_of(channel_from(n))] = true;
  return mask;
}

std::vector<std::string> mask_names(const std::array<bool, kChannelCount>& mask) {
  std::vector<std::string> out;
  for (auto ch : kAllChannels) {
    if (mask[index_of(ch)]) out.emplace_back(channel_name(ch));
  }
  return out;
}

void validate(const RunConfig& c) {
  c.stft.validate(kDefaultSampleRate);
  require(c.split.test_fraction > 0.0 && c.split.test_fraction < 1.0, ErrorKind::ConfigError,
          "eval.test_fraction must lie in (0, 1)");
  require(c.split.folds >= 2, ErrorKind::ConfigError, "eval.folds must be at least 2");
  require(c.model.dl.epochs >= 1, ErrorKind::ConfigError, "model.dl.epochs must be at least 1");
  require(c.model.dl.batch >= 1 && c.model.dl.grad_chunk >= 1, ErrorKind::ConfigError,
          "model.dl.batch and grad_chunk must be positive");
  require(c.model.dl.learning_rate > 0.0, ErrorKind::ConfigError, "model.dl.learning_rate must be positive");
  require(c.model.dl.optimizer == "adam" || c.model.dl.optimizer == "sgd", ErrorKind::ConfigError,
          "model.dl.optimizer must be adam or sgd");
  require(c.model.dropout >= 0.0 && c.model.dropout < 1.0, ErrorKind::ConfigError, "model.dl.dropout must lie in [0, 1)");
  require(c.model.fc_width >= 1, ErrorKind::ConfigError, "model.dl.fc_width must be positive");
  require(c.model.spectrum_bins >= 16 && c.model.spectrum_bins <= c.stft.nfft / 2 + 1, ErrorKind::ConfigError,
          "model.dl.spectrum_bins out of range");
  require(c.model.rf.trees >= 1 && c.model.rf.min_leaf >= 1, ErrorKind::ConfigError, "model.rf needs trees >= 1 and min_leaf >= 1");
  require(c.model.svm.C > 0.0 && c.model.svm.tolerance > 0.0 && c.model.svm.gamma >= 0.0, ErrorKind::ConfigError,
          "model.svm needs C > 0, tolerance > 0 and gamma >= 0");
  if (c.synth) {
    require(c.synth->epochs >= 1, ErrorKind::ConfigError, "data.synth.epochs must be at least 1");
    require(std::isfinite(c.synth->snr_db), ErrorKind::ConfigError, "data.synth.snr_db must be finite");
  }
}

}  // namespace

RunConfig run_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::ConfigError, std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  check_keys(j, {"data", "stft", "features", "model", "eval", "output"}, "");
  if (j.contains("data")) {
    const auto& d = j["data"];
    check_keys(d, {"inputs", "synth"}, "data");
    read(d, "inputs", c.inputs, "data");
    if (d.contains("synth") && !d["synth"].is_null()) {
      const auto& s = d["synth"];
      check_keys(s, {"classes", "epochs", "seed", "snr_db", "signature_channels"}, "data.synth");
      SynthSpec spec;
      std::vector<std::string> classes;
      read(s, "classes", classes, "data.synth");
      for (const auto& k : classes) spec.classes.push_back(class_from(k));
      read(s, "epochs", spec.epochs, "data.synth");
      read(s, "seed", spec.seed, "data.synth");
      read(s, "snr_db", spec.snr_db, "data.synth");
      if (s.contains("signature_channels")) {
        std::vector<std::string> names;
        read(s, "signature_channels", names, "data.synth");
        spec.signature_channels = channel_mask(names);
      }
      c.synth = spec;
    }
  }
  if (j.contains("stft")) {
    const auto& s = j["stft"];
    check_keys(s, {"window_len", "hop", "nfft", "freq_lo", "freq_hi", "pooled_bands", "pooled_frames", "log_scale"}, "stft");
    read(s, "window_len", c.stft.window_len, "stft");
    read(s, "hop", c.stft.hop, "stft");
    read(s, "nfft", c.stft.nfft, "stft");
    read(s, "freq_lo", c.stft.freq_lo, "stft");
    read(s, "freq_hi", c.stft.freq_hi, "stft");
    read(s, "pooled_bands", c.stft.pooled_bands, "stft");
    read(s, "pooled_frames", c.stft.pooled_frames, "stft");
    read(s, "log_scale", c.stft.log_scale, "stft");
  }
  if (j.contains("features")) {
    check_keys(j["features"], {"profile"}, "features");
    std::string p = std::string(profile_name(c.profile));
    read(j["features"], "profile", p, "features");
    c.profile = parse_profile(p);
  }
  if (j.contains("model")) {
    const auto& m = j["model"];
    check_keys(m, {"kind", "dl", "rf", "svm"}, "model");
    std::string kind = std::string(model_kind_name(c.model.kind));
    read(m, "kind", kind, "model");
    c.model.kind = parse_model_kind(kind);
    if (m.contains("dl")) {
      const auto& d = m["dl"];
      check_keys(d, {"optimizer", "learning_rate", "batch", "epochs", "seed", "grad_chunk", "class_weighting", "fc_width",
                     "dropout", "spectrum_bins"},
                 "model.dl");
      read(d, "optimizer", c.model.dl.optimizer, "model.dl");
      read(d, "learning_rate", c.model.dl.learning_rate, "model.dl");
      read(d, "batch", c.model.dl.batch, "model.dl");
      read(d, "epochs", c.model.dl.epochs, "model.dl");
      read(d, "seed", c.model.dl.seed, "model.dl");
      read(d, "grad_chunk", c.model.dl.grad_chunk, "model.dl");
      read(d, "class_weighting", c.model.dl.class_weighting, "model.dl");
      read(d, "fc_width", c.model.fc_width, "model.dl");
      read(d, "dropout", c.model.dropout, "model.dl");
      read(d, "spectrum_bins", c.model.spectrum_bins, "model.dl");
    }
    if (m.contains("rf")) {
      const auto& r = m["rf"];
      check_keys(r, {"trees", "max_depth", "min_leaf", "max_features", "bootstrap", "class_weighting", "seed"}, "model.rf");
      read(r, "trees", c.model.rf.trees, "model.rf");
      read(r, "max_depth", c.model.rf.max_depth, "model.rf");
      read(r, "min_leaf", c.model.rf.min_leaf, "model.rf");
      read(r, "max_features", c.model.rf.max_features, "model.rf");
      read(r, "bootstrap", c.model.rf.bootstrap, "model.rf");
      read(r, "class_weighting", c.model.rf.class_weighting, "model.rf");
      read(r, "seed", c.model.rf.seed, "model.rf");
    }
    if (m.contains("svm")) {
      const auto& s = m["svm"];
      check_keys(s, {"C", "kernel", "gamma", "tolerance", "max_iterations"}, "model.svm");
      read(s, "C", c.model.svm.C, "model.svm");
      std::string kernel = c.model.svm.kernel == KernelKind::Linear ? "linear" : "rbf";
      read(s, "kernel", kernel, "model.svm");
      require(kernel == "linear" || kernel == "rbf", ErrorKind::ConfigError, "model.svm.kernel must be linear or rbf");
      c.model.svm.kernel = kernel == "linear" ? KernelKind::Linear : KernelKind::Rbf;
      read(s, "gamma", c.model.svm.gamma, "model.svm");
      read(s, "tolerance", c.model.svm.tolerance, "model.svm");
      read(s, "max_iterations", c.model.svm.max_iterations, "model.svm");
    }
  }
  if (j.contains("eval")) {
    const auto& e = j["eval"];
    check_keys(e, {"seed", "test_fraction", "folds", "split", "cross_validate", "cv_epochs"}, "eval");
    read(e, "seed", c.split_seed, "eval");
    read(e, "test_fraction", c.split.test_fraction, "eval");
    read(e, "folds", c.split.folds, "eval");
    std::string mode = std::string(split_mode_name(c.split.mode));
    read(e, "split", mode, "eval");
    c.split.mode = parse_split_mode(mode);
    read(e, "cross_validate", c.cross_validate, "eval");
    read(e, "cv_epochs", c.cv_epochs, "eval");
  }
  if (j.contains("output")) {
    check_keys(j["output"], {"runs_root"}, "output");
    read(j["output"], "runs_root", c.runs_root, "output");
  }
  c.model.profile = c.profile;
  validate(c);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::ConfigError, "cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return run_config_from_json(buf.str());
}

std::string run_config_to_json(const RunConfig& c) {
  json j;
  j["data"]["inputs"] = c.inputs;
  if (c.synth) {
    std::vector<std::string> classes;
    for (auto k : c.synth->classes) classes.emplace_back(class_code(k));
    j["data"]["synth"] = {{"classes", classes},
                          {"epochs", c.synth->epochs},
                          {"seed", c.synth->seed},
                          {"snr_db", c.synth->snr_db},
                          {"signature_channels", mask_names(c.synth->signature_channels)}};
  } else {
    j["data"]["synth"] = nullptr;
  }
  j["stft"] = {{"window_len", c.stft.window_len}, {"hop", c.stft.hop},
               {"nfft", c.stft.nfft},             {"freq_lo", c.stft.freq_lo},
               {"freq_hi", c.stft.freq_hi},       {"pooled_bands", c.stft.pooled_bands},
               {"pooled_frames", c.stft.pooled_frames}, {"log_scale", c.stft.log_scale}};
  j["features"]["profile"] = profile_name(c.profile);
  const auto& m = c.model;
  j["model"]["kind"] = model_kind_name(m.kind);
  j["model"]["dl"] = {{"optimizer", m.dl.optimizer}, {"learning_rate", m.dl.learning_rate},
                      {"batch", m.dl.batch},         {"epochs", m.dl.epochs},
                      {"seed", m.dl.seed},           {"grad_chunk", m.dl.grad_chunk},
                      {"class_weighting", m.dl.class_weighting}, {"fc_width", m.fc_width},
                      {"dropout", m.dropout},        {"spectrum_bins", m.spectrum_bins}};
  j["model"]["rf"] = {{"trees", m.rf.trees},         {"max_depth", m.rf.max_depth},
                      {"min_leaf", m.rf.min_leaf},   {"max_features", m.rf.max_features},
                      {"bootstrap", m.rf.bootstrap}, {"class_weighting", m.rf.class_weighting},
                      {"seed", m.rf.seed}};
  j["model"]["svm"] = {{"C", m.svm.C},
                       {"kernel", m.svm.kernel == KernelKind::Linear ? "linear" : "rbf"},
                       {"gamma", m.svm.gamma},
                       {"tolerance", m.svm.tolerance},
                       {"max_iterations", m.svm.max_iterations}};
  j["eval"] = {{"seed", c.split_seed},
               {"test_fraction", c.split.test_fraction},
               {"folds", c.split.folds},
               {"split", split_mode_name(c.split.mode)},
               {"cross_validate", c.cross_validate},
               {"cv_epochs", c.cv_epochs}};
  j["output"]["runs_root"] = c.runs_root;
  return j.dump(2) + "\n";
}

std::string config_hash(const RunConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(run_config_to_json(cfg))));
  return buf;
}

std::vector<Recording> synth_recordings(const SynthSpec& spec) {
  std::vector<DisorderClass> classes = spec.classes;
  if (classes.empty()) classes.assign(kDataClasses.begin(), kDataClasses.end());
  SynthConfig sc;
  sc.snr_db = spec.snr_db;
  sc.signature_channels = spec.signature_channels;
  std::vector<Recording> out;
  for (auto c : classes) out.push_back(synth_recording(c, spec.epochs, spec.seed, sc));
  return out;
}

std::vector<Epoch> load_epochs(const std::vector<std::string>& inputs) {
  std::vector<std::filesystem::path> files;
  for (const auto& in : inputs) {
    const std::filesystem::path p(in);
    require(std::filesystem::exists(p), ErrorKind::IoError, "input " + in + " does not exist");
    if (std::filesystem::is_directory(p)) {
      std::vector<std::filesystem::path> found;
      for (const auto& e : std::filesystem::directory_iterator(p)) {
        if (e.path().extension() == ".somn") found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      require(!found.empty(), ErrorKind::IoError, "no .somn recordings in " + in);
      files.insert(files.end(), found.begin(), found.end());
    } else if (p.extension() == ".json") {
      std::ifstream f(p);
      json j;
      try {
        j = json::parse(f);
        for (const auto& e : j.at("files")) files.push_back(p.parent_path() / e.at("file").get<std::string>());
      } catch (const json::exception& e) {
        fail(ErrorKind::FormatError, "malformed manifest " + in + ": " + e.what());
      }
    } else {
      files.push_back(p);
    }
  }
  std::vector<Epoch> epochs;
  std::set<std::string> ids;
  for (const auto& f : files) {
    const Recording rec = load_recording(f);
    require(ids.insert(rec.id).second, ErrorKind::FormatError, "duplicate recording id " + rec.id);
    auto e = frame_epochs(rec);
    epochs.insert(epochs.end(), std::make_move_iterator(e.begin()), std::make_move_iterator(e.end()));
  }
  require(!epochs.empty(), ErrorKind::EmptyDataset, "inputs contain no epochs");
  return epochs;
}

namespace {

// ---- command plumbing -----------------------------------------------------

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ConfigError:
    case ErrorKind::LayerError:
    case ErrorKind::Underdetermined: return 2;
    case ErrorKind::StateError:
    case ErrorKind::InvariantBreach: return 4;
    default: return 3;
  }
}

std::vector<Epoch> epochs_for(const RunConfig& cfg) {
  if (!cfg.inputs.empty()) return load_epochs(cfg.inputs);
  require(cfg.synth.has_value(), ErrorKind::ConfigError, "no inputs given (use -i or a data.synth config section)");
  std::vector<Epoch> epochs;
  for (const auto& rec : synth_recordings(*cfg.synth)) {
    auto e = frame_epochs(rec);
    epochs.insert(epochs.end(), e.begin(), e.end());
  }
  return epochs;
}

std::filesystem::path make_run_dir(const RunConfig& cfg, const std::string& command, const std::string& explicit_dir) {
  std::filesystem::path dir;
  if (!explicit_dir.empty()) {
    dir = explicit_dir;
  } else {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
    const std::filesystem::path base = std::filesystem::path(cfg.runs_root) / (std::string(stamp) + "-" + config_hash(cfg).substr(0, 8));
    dir = base;
    for (int i = 2; std::filesystem::exists(dir); ++i) dir = base.string() + "-" + std::to_string(i);
  }
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, ErrorKind::IoError, "cannot create output directory " + dir.string());
  std::ofstream(dir / "config.resolved.json") << run_config_to_json(cfg);
  std::ofstream(dir / "config.hash") << config_hash(cfg) << "  " << command << '\n';
  return dir;
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream f(p);
  require(static_cast<bool>(f), ErrorKind::IoError, "cannot write " + p.string());
  return f;
}

FeatureProfile profile_for_count(std::size_t n) {
  if (n == kChannelCount * 5 * descriptor_count(FeatureProfile::Core9)) return FeatureProfile::Core9;
  if (n == kChannelCount * 5 * descriptor_count(FeatureProfile::Extended14)) return FeatureProfile::Extended14;
  fail(ErrorKind::FormatError, "model expects " + std::to_string(n) + " features, which matches no feature profile");
}

struct CommonFlags {
  std::string config;
  std::string out;
  std::vector<std::string> inputs;
};

RunConfig base_config(const CommonFlags& f) {
  RunConfig cfg = f.config.empty() ? RunConfig{} : load_run_config(f.config);
  if (!f.inputs.empty()) cfg.inputs = f.inputs;
  return cfg;
}

// ---- commands -------------------------------------------------------------

struct SynthFlags {
  CommonFlags common;
  std::vector<std::string> classes;
  bool all = false;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
  std::optional<double> snr;
  std::vector<std::string> signature_channels;
};

int cmd_synth(const SynthFlags& f, std::ostream& out) {
  RunConfig cfg = base_config(f.common);
  SynthSpec spec = cfg.synth.value_or(SynthSpec{});
  require(!(f.all && !f.classes.empty()), ErrorKind::ConfigError, "--class and --all-classes are exclusive");
  if (!f.classes.empty()) {
    spec.classes.clear();
    for (const auto& c : f.classes) spec.classes.push_back(class_from(c));
  }
  if (f.all) spec.classes.clear();
  if (f.epochs) spec.epochs = *f.epochs;
  if (f.seed) spec.seed = *f.seed;
  if (f.snr) spec.snr_db = *f.snr;
  if (!f.signature_channels.empty()) spec.signature_channels = channel_mask(f.signature_channels);
  require(f.all || !spec.classes.empty() || cfg.synth.has_value(), ErrorKind::ConfigError,
          "choose classes with --class or --all-classes");
  cfg.synth = spec;
  cfg.inputs.clear();
  validate(cfg);

  const std::filesystem::path dir = f.common.out.empty() ? std::filesystem::path("data") : std::filesystem::path(f.common.out);
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["seed"] = spec.seed;
  manifest["snr_db"] = spec.snr_db;
  manifest["epochs_per_class"] = spec.epochs;
  manifest["signature_channels"] = mask_names(spec.signature_channels);
  manifest["files"] = json::array();
  for (const auto& rec : synth_recordings(spec)) {
    const std::string file = rec.id + ".somn";
    write_recording(dir / file, rec, "synthetic " + std::string(class_label(rec.labels.front())) + " recording");
    manifest["files"].push_back({{"file", file}, {"class", class_code(rec.labels.front())}, {"epochs", rec.labels.size()}});
    out << "wrote " << (dir / file).string() << " (" << rec.labels.size() << " epochs)\n";
  }
  open_out(dir / "manifest.json") << manifest.dump(2) << '\n';
  out << "wrote " << (dir / "manifest.json").string() << '\n';
  return 0;
}

struct FeaturizeFlags {
  CommonFlags common;
  std::string profile;
};

int cmd_featurize(const FeaturizeFlags& f, std::ostream& out) {
  RunConfig cfg = base_config(f.common);
  if (!f.profile.empty()) cfg.profile = parse_profile(f.profile);
  validate(cfg);
  const auto epochs = epochs_for(cfg);
  const auto dir = make_run_dir(cfg, "featurize", f.common.out);
  DatasetOptions o;
  o.stft = cfg.stft;
  o.profile = cfg.profile;
  o.features = true;
  o.spectrograms = true;
  const Dataset ds = build_dataset(epochs, o);
  std::vector<FeatureVector> rows;
  SpectrogramDump dump;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    rows.push_back({ds.samples[i].epoch_id, ds.samples[i].label, ds.features[i]});
    dump.labels.push_back(ds.samples[i].label);
    SpectrogramSet set;
    for (auto ch : kAllChannels) set[index_of(ch)] = {ds.spectrograms[i][index_of(ch)], ch};
    dump.epochs.push_back(std::move(set));
  }
  {
    auto csv = open_out(dir / "features.csv");
    write_feature_csv(csv, rows, cfg.profile);
  }
  write_spectrograms(dir / "spectrograms.spec", dump);
  out << "featurized " << ds.size() << " epochs (" << profile_name(cfg.profile) << ", "
      << (rows.empty() ? 0 : rows.front().values.size()) << " features) into " << dir.string() << '\n';
  return 0;
}

struct ModelFlags {
  CommonFlags common;
  std::string model;
  std::string profile;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
};

void apply_model_flags(RunConfig& cfg, const ModelFlags& f) {
  if (!f.model.empty()) cfg.model.kind = parse_model_kind(f.model);
  if (!f.profile.empty()) cfg.profile = parse_profile(f.profile);
  cfg.model.profile = cfg.profile;
  if (f.epochs) cfg.model.dl.epochs = *f.epochs;
  if (f.seed) {
    cfg.model.dl.seed = *f.seed;
    cfg.model.rf.seed = *f.seed;
    cfg.split_seed = *f.seed;
  }
}

std::string model_file_name(ModelKind kind) {
  return kind == ModelKind::DlR || kind == ModelKind::DlF ? "model.somw" : "model.json";
}

int cmd_train(const ModelFlags& f, std::ostream& out) {
  RunConfig cfg = base_config(f.common);
  apply_model_flags(cfg, f);
  validate(cfg);
  const auto epochs = epochs_for(cfg);
  const auto dir = make_run_dir(cfg, "train", f.common.out);
  const Dataset ds = build_dataset(epochs, dataset_options_for(cfg.model, cfg.stft));
  auto model = make_classifier(cfg.model);
  if (auto* dl = dynamic_cast<DlClassifier*>(model.get())) {
    dl->hyper().on_epoch = [&out](const EpochStats& s) {
      char line[128];
      std::snprintf(line, sizeof line, "epoch %zu  loss %.5f  accuracy %.4f\n", s.epoch, s.train_loss, s.train_accuracy);
      out << line << std::flush;
    };
  }
  const auto rows = ds.all_indices();
  model->fit(ds, rows);
  const auto path = dir / model_file_name(cfg.model.kind);
  model->save(path);
  if (auto* dl = dynamic_cast<DlClassifier*>(model.get())) {
    auto csv = open_out(dir / "loss_curve.csv");
    csv << "epoch,train_loss,train_accuracy,val_loss,val_accuracy\n";
    char line[160];
    for (const auto& s : dl->history().epochs) {
      std::snprintf(line, sizeof line, "%zu,%.9g,%.9g,%.9g,%.9g\n", s.epoch, s.train_loss, s.train_accuracy, s.val_loss,
                    s.val_accuracy);
      csv << line;
    }
  }
  const auto report = evaluate_model(*model, ds, rows);
  char acc[32];
  std::snprintf(acc, sizeof acc, "%.4f", report.accuracy);
  out << "trained " << model_kind_name(cfg.model.kind) << " on " << ds.size() << " epochs (training accuracy " << acc
      << "); model written to " << path.string() << '\n';
  return 0;
}

struct EvalFlags {
  ModelFlags model;
  std::string model_file;
  std::optional<std::size_t> cv_epochs;
  bool no_cv = false;
  std::string split;
};

int cmd_eval(const EvalFlags& f, std::ostream& out) {
  RunConfig cfg = base_config(f.model.common);
  apply_model_flags(cfg, f.model);
  if (f.cv_epochs) cfg.cv_epochs = *f.cv_epochs;
  if (f.no_cv) cfg.cross_validate = false;
  if (!f.split.empty()) cfg.split.mode = parse_split_mode(f.split);
  validate(cfg);
  const auto epochs = epochs_for(cfg);

  EvalReport report;
  if (!f.model_file.empty()) {
    auto model = load_classifier(f.model_file);
    cfg.model.kind = model->kind();
    if (auto* rf = dynamic_cast<RfClassifier*>(model.get())) cfg.profile = profile_for_count(rf->forest().feature_count());
    if (auto* svm = dynamic_cast<SvmClassifier*>(model.get())) cfg.profile = profile_for_count(svm->model().feature_count());
    if (auto* dl = dynamic_cast<DlClassifier*>(model.get()); dl && dl->model().architecture().one_d()) {
      cfg.model.spectrum_bins = dl->model().architecture().in_w;
    }
    cfg.model.profile = cfg.profile;
    const auto dir = make_run_dir(cfg, "eval", f.model.common.out);
    const Dataset ds = build_dataset(epochs, dataset_options_for(cfg.model, cfg.stft));
    report = evaluate_model(*model, ds, ds.all_indices());
    report.model_id = std::filesystem::path(f.model_file).filename().string();
    report.config_hash = config_hash(cfg);
    write_report_files(dir, report);
    write_report_table(out, report);
    out << "report written to " << dir.string() << '\n';
    return 0;
  }

  const auto dir = make_run_dir(cfg, "eval", f.model.common.out);
  const Dataset ds = build_dataset(epochs, dataset_options_for(cfg.model, cfg.stft));
  ProtocolOptions po;
  po.model = cfg.model;
  po.seed = cfg.split_seed;
  po.split = cfg.split;
  po.cross_validate = cfg.cross_validate;
  po.cv_epochs = cfg.cv_epochs;
  po.config_hash = config_hash(cfg);
  const auto result = run_protocol(ds, po);
  write_report_files(dir, result.report);
  result.final_model->save(dir / model_file_name(cfg.model.kind));
  write_report_table(out, result.report);
  out << "report written to " << dir.string() << '\n';
  return 0;
}

struct ExplainFlags {
  CommonFlags common;
  std::string model_file;
  std::string method = "gradcam";
  std::string cls;
  std::string channel;
  std::optional<std::size_t> epoch;
  std::string layer = "conv5";
  std::size_t samples = 1000;
  std::uint64_t seed = 1;
  bool transpose = false;
};

int cmd_explain(const ExplainFlags& f, std::ostream& out) {
  RunConfig cfg = base_config(f.common);
  const ExplainMethod method = parse_explain_method(f.method);
  auto loaded = load_classifier(f.model_file);
  auto* dl = dynamic_cast<DlClassifier*>(loaded.get());
  require(dl != nullptr, ErrorKind::ConfigError, "explain needs a DL model checkpoint (.somw)");
  const CnnModel& model = dl->model();
  const auto epochs = epochs_for(cfg);

  std::optional<DisorderClass> cls;
  if (!f.cls.empty()) cls = class_from(f.cls);
  std::size_t index = 0;
  if (f.epoch) {
    index = *f.epoch;
    require(index < epochs.size(), ErrorKind::ConfigError,
            "--epoch " + std::to_string(index) + " out of range (" + std::to_string(epochs.size()) + " epochs)");
  } else if (cls) {
    const auto it = std::find_if(epochs.begin(), epochs.end(), [&](const Epoch& e) { return e.label == *cls; });
    require(it != epochs.end(), ErrorKind::ConfigError, "no epoch labelled " + f.cls + " in the inputs");
    index = static_cast<std::size_t>(it - epochs.begin());
  }
  const Epoch& ep = epochs[index];
  const DisorderClass target = cls.value_or(ep.label);
  const ChannelImages input = model.architecture().one_d()
                                  ? spectrum_images(ep, cfg.stft, model.architecture().in_w)
                                  : spectrogram_images(ep, cfg.stft);
  const auto dir = make_run_dir(cfg, "explain", f.common.out);

  std::vector<Heatmap> maps;
  if (method == ExplainMethod::GradCam) {
    maps = grad_cam(model, input, target, f.layer);
    if (!f.channel.empty()) {
      const ChannelKind ch = channel_from(f.channel);
      std::erase_if(maps, [&](const Heatmap& h) { return h.channel != ch; });
    }
  } else {
    LimeParams lp;
    lp.samples = f.samples;
    lp.seed = f.seed;
    const ChannelKind ch = f.channel.empty() ? ChannelKind::EEG1 : channel_from(f.channel);
    const LimeResult res = lime_explain(model, input, target, ch, lp);
    maps.push_back(res.heatmap);
    auto csv = open_out(dir / "lime_segments.csv");
    csv << "rank,segment,grid_row,grid_col,weight\n";
    char line[96];
    for (std::size_t i = 0; i < res.ranked.size(); ++i) {
      const auto& s = res.ranked[i];
      std::snprintf(line, sizeof line, "%zu,%zu,%zu,%zu,%.9g\n", i + 1, s.index, s.row, s.col, s.weight);
      csv << line;
    }
  }
  const double seconds = static_cast<double>(ep.samples[0].size()) / ep.sample_rate;
  for (const auto& h : maps) {
    const std::string stem = std::string(explain_method_name(method)) + "_" + std::string(class_code(target)) + "_" +
                             std::string(channel_name(h.channel));
    {
      auto csv = open_out(dir / (stem + ".csv"));
      write_heatmap_csv(csv, h);
    }
    auto svg = open_out(dir / (stem + ".svg"));
    write_heatmap_svg(svg, h, f.transpose, cfg.stft.freq_hi, seconds);
    out << "wrote " << (dir / (stem + ".svg")).string() << '\n';
  }
  return 0;
}

struct ImportanceFlags {
  CommonFlags common;
  std::string model_file;
  std::string profile;
  std::size_t top = 10;
};

int cmd_importance(const ImportanceFlags& f, std::ostream& out) {
  RunConfig cfg = base_config(f.common);
  auto loaded = load_classifier(f.model_file);
  auto* rf = dynamic_cast<RfClassifier*>(loaded.get());
  require(rf != nullptr, ErrorKind::ConfigError, "importance needs a random forest model (.json)");
  const auto& forest = rf->forest();
  const FeatureProfile profile = f.profile.empty() ? profile_for_count(forest.feature_count()) : parse_profile(f.profile);
  cfg.profile = profile;
  const auto names = feature_names(profile);
  const auto report = rf_importance(forest, names);
  const auto dir = make_run_dir(cfg, "importance", f.common.out);
  {
    auto csv = open_out(dir / "importance.csv");
    write_importance_csv(csv, report);
  }
  {
    auto csv = open_out(dir / "channels.csv");
    csv << "rank,channel,weight,share\n";
    char line[96];
    for (std::size_t i = 0; i < report.channels.size(); ++i) {
      const auto& c = report.channels[i];
      std::snprintf(line, sizeof line, "%zu,%s,%.9g,%.9g\n", i + 1, std::string(channel_name(c.channel)).c_str(), c.weight,
                    c.share);
      csv << line;
    }
  }
  out << "Channel importance:\n";
  char line[128];
  for (const auto& c : report.channels) {
    std::snprintf(line, sizeof line, "  %-5s %6.2f%%\n", std::string(channel_name(c.channel)).c_str(), 100.0 * c.share);
    out << line;
  }
  out << "Top features:\n";
  for (std::size_t i = 0; i < std::min(f.top, report.ranked.size()); ++i) {
    std::snprintf(line, sizeof line, "  %2zu. %-32s %6.2f%%\n", i + 1, report.ranked[i].name.c_str(),
                  100.0 * report.ranked[i].share);
    out << line;
  }
  out << "report written to " << dir.string() << '\n';
  return 0;
}

void add_common(CLI::App* app, CommonFlags& f, bool with_inputs) {
  app->add_option("--config", f.config, "JSON run configuration")->check(CLI::ExistingFile);
  app->add_option("-o,--out", f.out, "Output directory (default: <runs_root>/<timestamp>-<hash>)");
  if (with_inputs) app->add_option("-i,--input", f.inputs, "Recording files, directories or manifest.json files");
}

void add_model(CLI::App* app, ModelFlags& f) {
  add_common(app, f.common, true);
  app->add_option("--model", f.model, "Model kind: dl-r, dl-f, rf or svm");
  app->add_option("--profile", f.profile, "Feature profile for rf/svm: core9 or extended14");
  app->add_option("--epochs", f.epochs, "DL training epochs");
  app->add_option("--seed", f.seed, "Seed for training and splitting");
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"somnoscope: sleep-disorder classification from polysomnography epochs"};
  app.name("somnoscope");
  app.require_subcommand(1);

  SynthFlags synth;
  auto* s = app.add_subcommand("synth", "Generate synthetic labelled recordings");
  add_common(s, synth.common, false);
  s->add_option("--class", synth.classes, "Class code(s) to generate (bru ins nar nfl plm rbd sbd nrm)");
  s->add_flag("--all-classes", synth.all, "Generate every class");
  s->add_option("--epochs", synth.epochs, "Epochs per class");
  s->add_option("--seed", synth.seed, "Generator seed");
  s->add_option("--snr-db", synth.snr, "Signature-to-noise ratio in dB");
  s->add_option("--signature-channels", synth.signature_channels, "Channels carrying the class signature");

  FeaturizeFlags feat;
  auto* fz = app.add_subcommand("featurize", "Compute feature vectors and spectrogram dumps");
  add_common(fz, feat.common, true);
  fz->add_option("--profile", feat.profile, "Feature profile: core9 or extended14");

  ModelFlags train;
  auto* tr = app.add_subcommand("train", "Train a model on every input epoch");
  add_model(tr, train);

  EvalFlags eval;
  auto* ev = app.add_subcommand("eval", "Run the split/fold protocol or score a trained model");
  add_model(ev, eval.model);
  ev->add_option("--model-file", eval.model_file, "Score this trained model on the inputs instead of training")
      ->check(CLI::ExistingFile);
  ev->add_option("--cv-epochs", eval.cv_epochs, "DL epochs for the fold models");
  ev->add_flag("--no-cv", eval.no_cv, "Skip the fold rotation");
  ev->add_option("--split", eval.split, "Split granularity: epoch or recording");

  ExplainFlags expl;
  auto* ex = app.add_subcommand("explain", "Grad-CAM or LIME heatmaps for one epoch");
  add_common(ex, expl.common, true);
  ex->add_option("--model-file", expl.model_file, "Trained DL checkpoint")->required()->check(CLI::ExistingFile);
  ex->add_option("--method", expl.method, "gradcam or lime")->capture_default_str();
  ex->add_option("--class", expl.cls, "Class to explain (default: the epoch's label)");
  ex->add_option("--channel", expl.channel, "Channel to report (LIME default: EEG1)");
  ex->add_option("--epoch", expl.epoch, "Epoch index within the inputs (default: first epoch of --class)");
  ex->add_option("--layer", expl.layer, "Grad-CAM layer, e.g. conv5 or cnn3.conv4")->capture_default_str();
  ex->add_option("--samples", expl.samples, "LIME perturbation samples")->capture_default_str();
  ex->add_option("--seed", expl.seed, "LIME seed")->capture_default_str();
  ex->add_flag("--transpose", expl.transpose, "Put time on the horizontal axis");

  ImportanceFlags imp;
  auto* im = app.add_subcommand("importance", "Random forest impurity importance report");
  add_common(im, imp.common, false);
  im->add_option("--model-file", imp.model_file, "Trained random forest (.json)")->required()->check(CLI::ExistingFile);
  im->add_option("--profile", imp.profile, "Feature profile (default: inferred from the model)");
  im->add_option("--top", imp.top, "Number of features to print")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "somnoscope: error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (s->parsed()) return cmd_synth(synth, out);
    if (fz->parsed()) return cmd_featurize(feat, out);
    if (tr->parsed()) return cmd_train(train, out);
    if (ev->parsed()) return cmd_eval(eval, out);
    if (ex->parsed()) return cmd_explain(expl, out);
    if (im->parsed()) return cmd_importance(imp, out);
  } catch (const Error& e) {
    err << "somnoscope: error: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    err << "somnoscope: error: internal: " << e.what() << '\n';
    return 4;
  }
  return 2;
}

}  // namespace somno
