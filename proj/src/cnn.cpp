#include "somno/cnn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include <json.hpp>

#include "binary_io.hpp"
#include "somno/error.hpp"
#include "somno/hash.hpp"
#include "somno/parallel.hpp"

namespace somno {

using nlohmann::json;

namespace {

const char* rounding_name(ad::PoolRounding r) { return r == ad::PoolRounding::Ceil ? "ceil" : "floor"; }

ad::PoolRounding parse_rounding(const std::string& s) {
  if (s == "floor") return ad::PoolRounding::Floor;
  if (s == "ceil") return ad::PoolRounding::Ceil;
  fail(ErrorKind::ConfigError, "unknown pool rounding '" + s + "'");
}

std::vector<ConvStage> dlr_stages() {
  using R = ad::PoolRounding;
  // Reproduces 21x70 -> 10x35 -> 10x17 -> 10x9 -> 5x5 -> 3x3.
  return {
      {32, 3, 3, 2, 2, R::Floor, R::Floor},
      {64, 3, 3, 1, 2, R::Floor, R::Floor},
      {128, 3, 3, 1, 2, R::Floor, R::Ceil},
      {256, 3, 3, 2, 2, R::Floor, R::Ceil},
      {512, 3, 3, 2, 2, R::Ceil, R::Ceil},
  };
}

std::vector<ConvStage> dlf_stages() {
  using R = ad::PoolRounding;
  // 2000 -> 500 -> 125 -> 32 -> 16 -> 8.
  return {
      {32, 1, 5, 1, 4, R::Floor, R::Floor},
      {64, 1, 5, 1, 4, R::Floor, R::Floor},
      {128, 1, 5, 1, 4, R::Floor, R::Ceil},
      {256, 1, 3, 1, 2, R::Floor, R::Floor},
      {512, 1, 3, 1, 2, R::Floor, R::Floor},
  };
}

std::vector<SubnetSpec> standard_subnets(const std::vector<ConvStage>& stages, std::size_t fc_width) {
  using C = ChannelKind;
  return {
      {"cnn1", {C::EEG1, C::EEG2, C::EEG3}, stages, fc_width},
      {"cnn2", {C::EMG}, stages, fc_width},
      {"cnn3", {C::ECG}, stages, fc_width},
      {"cnn4", {C::EOG}, stages, fc_width},
  };
}

bool pools(const ConvStage& s) { return s.pool_h > 1 || s.pool_w > 1; }

}  // namespace

std::string StageShape::str() const {
  return std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(c);
}

CnnArchitecture dlr_architecture(std::size_t fc_width, double dropout) {
  CnnArchitecture a;
  a.name = "dl-r";
  a.input = CnnInput::Spectrogram;
  a.in_h = 21;
  a.in_w = 70;
  a.subnets = standard_subnets(dlr_stages(), fc_width);
  a.dropout = dropout;
  return a;
}

CnnArchitecture dlf_architecture(std::size_t fc_width, double dropout, std::size_t bins) {
  CnnArchitecture a;
  a.name = "dl-f";
  a.input = CnnInput::Spectrum;
  a.in_h = 1;
  a.in_w = bins;
  a.subnets = standard_subnets(dlf_stages(), fc_width);
  a.dropout = dropout;
  return a;
}

void CnnArchitecture::validate() const {
  require(!subnets.empty(), ErrorKind::ConfigError, "architecture has no subnets");
  require(num_classes >= 2, ErrorKind::ConfigError, "need at least two classes");
  require(dropout >= 0.0 && dropout < 1.0, ErrorKind::ConfigError, "dropout must lie in [0, 1)");
  require(in_h >= 1 && in_w >= 1, ErrorKind::ShapeError, "input extent must be positive");
  require(!one_d() || in_h == 1, ErrorKind::ShapeError, "spectrum input must have height 1");
  std::set<std::string> names;
  for (const auto& sub : subnets) {
    require(names.insert(sub.name).second, ErrorKind::ConfigError, "duplicate subnet name " + sub.name);
    require(sub.name.find('.') == std::string::npos, ErrorKind::ConfigError, "subnet names may not contain '.'");
    require(!sub.channels.empty(), ErrorKind::ConfigError, "subnet " + sub.name + " has no channels");
    require(!sub.stages.empty(), ErrorKind::ConfigError, "subnet " + sub.name + " has no stages");
    require(sub.fc_width >= 1, ErrorKind::ConfigError, "fc width must be positive");
    for (const auto& st : sub.stages) {
      require(st.filters >= 1, ErrorKind::ConfigError, "filter count must be positive");
      require(st.kernel_h % 2 == 1 && st.kernel_w % 2 == 1, ErrorKind::ConfigError, "kernels must be odd");
      require(st.pool_h >= 1 && st.pool_w >= 1, ErrorKind::ConfigError, "pool size must be positive");
      require(!one_d() || (st.kernel_h == 1 && st.pool_h == 1), ErrorKind::ConfigError,
              "1D subnets need unit kernel and pool height");
    }
  }
  for (std::size_t s = 0; s < subnets.size(); ++s) {
    for (const auto& shape : pool_shapes(s)) {
      require(shape.h >= 1 && shape.w >= 1, ErrorKind::ShapeError, "a stage output collapses to zero size");
    }
  }
}

std::vector<StageShape> CnnArchitecture::conv_shapes(std::size_t subnet) const {
  const auto pooled = pool_shapes(subnet);
  std::vector<StageShape> out;
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    const std::size_t h = i == 0 ? in_h : pooled[i - 1].h;
    const std::size_t w = i == 0 ? in_w : pooled[i - 1].w;
    out.push_back({h, w, pooled[i].c});
  }
  return out;
}

std::vector<std::string> CnnArchitecture::stage_dimensions(std::size_t subnet) const {
  std::vector<std::string> out;
  for (const auto& s : pool_shapes(subnet)) {
    out.push_back(one_d() ? StageShape{s.w, s.h, s.c}.str() : s.str());
  }
  return out;
}

std::vector<StageShape> CnnArchitecture::pool_shapes(std::size_t subnet) const {
  std::vector<StageShape> out;
  std::size_t h = in_h;
  std::size_t w = in_w;
  for (const auto& st : subnets.at(subnet).stages) {
    if (h < st.pool_h || w < st.pool_w || h == 0 || w == 0) {
      h = w = 0;
    } else {
      h = ad::pool_out(h, st.pool_h, st.pool_h, st.round_h);
      w = ad::pool_out(w, st.pool_w, st.pool_w, st.round_w);
    }
    out.push_back({h, w, st.filters});
  }
  return out;
}

std::size_t CnnArchitecture::fusion_width() const {
  std::size_t total = 0;
  for (const auto& s : subnets) total += s.fc_width;
  return total;
}

std::string CnnArchitecture::to_json() const {
  json j;
  j["name"] = name;
  j["input"] = one_d() ? "spectrum" : "spectrogram";
  j["in_h"] = in_h;
  j["in_w"] = in_w;
  j["num_classes"] = num_classes;
  j["dropout"] = dropout;
  json subs = json::array();
  for (const auto& sub : subnets) {
    json js;
    js["name"] = sub.name;
    js["fc_width"] = sub.fc_width;
    json ch = json::array();
    for (auto c : sub.channels) ch.push_back(std::string(channel_name(c)));
    js["channels"] = ch;
    json stages = json::array();
    for (const auto& st : sub.stages) {
      stages.push_back({{"filters", st.filters},
                        {"kernel", {st.kernel_h, st.kernel_w}},
                        {"pool", {st.pool_h, st.pool_w}},
                        {"round", {rounding_name(st.round_h), rounding_name(st.round_w)}}});
    }
    js["stages"] = stages;
    subs.push_back(js);
  }
  j["subnets"] = subs;
  return j.dump();
}

CnnArchitecture CnnArchitecture::from_json(const std::string& text) {
  CnnArchitecture a;
  try {
    const json j = json::parse(text);
    a.name = j.at("name").get<std::string>();
    const auto input = j.at("input").get<std::string>();
    require(input == "spectrum" || input == "spectrogram", ErrorKind::ConfigError, "unknown input kind " + input);
    a.input = input == "spectrum" ? CnnInput::Spectrum : CnnInput::Spectrogram;
    a.in_h = j.at("in_h").get<std::size_t>();
    a.in_w = j.at("in_w").get<std::size_t>();
    a.num_classes = j.at("num_classes").get<std::size_t>();
    a.dropout = j.at("dropout").get<double>();
    for (const auto& js : j.at("subnets")) {
      SubnetSpec sub;
      sub.name = js.at("name").get<std::string>();
      sub.fc_width = js.at("fc_width").get<std::size_t>();
      for (const auto& c : js.at("channels")) {
        auto kind = parse_channel(c.get<std::string>());
        require(kind.has_value(), ErrorKind::ConfigError, "unknown channel " + c.get<std::string>());
        sub.channels.push_back(*kind);
      }
      for (const auto& jst : js.at("stages")) {
        ConvStage st;
        st.filters = jst.at("filters").get<std::size_t>();
        st.kernel_h = jst.at("kernel").at(0).get<std::size_t>();
        st.kernel_w = jst.at("kernel").at(1).get<std::size_t>();
        st.pool_h = jst.at("pool").at(0).get<std::size_t>();
        st.pool_w = jst.at("pool").at(1).get<std::size_t>();
        st.round_h = parse_rounding(jst.at("round").at(0).get<std::string>());
        st.round_w = parse_rounding(jst.at("round").at(1).get<std::string>());
        sub.stages.push_back(st);
      }
      a.subnets.push_back(std::move(sub));
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::FormatError, std::string("malformed architecture: ") + e.what());
  }
  a.validate();
  return a;
}

std::uint64_t CnnArchitecture::hash() const { return fnv1a64(to_json()); }

CnnModel::CnnModel(CnnArchitecture arch) : arch_(std::move(arch)) {
  arch_.validate();
  for (std::size_t s = 0; s < arch_.subnets.size(); ++s) {
    const auto& sub = arch_.subnets[s];
    std::size_t cin = sub.channels.size();
    for (std::size_t i = 0; i < sub.stages.size(); ++i) {
      const auto& st = sub.stages[i];
      const std::string prefix = sub.name + ".conv" + std::to_string(i + 1);
      std::vector<std::size_t> kshape = arch_.one_d() ? std::vector<std::size_t>{st.filters, cin, st.kernel_w}
                                                      : std::vector<std::size_t>{st.filters, cin, st.kernel_h, st.kernel_w};
      params_.push_back({prefix + ".w", ad::Tensor(kshape)});
      params_.push_back({prefix + ".b", ad::Tensor({st.filters})});
      cin = st.filters;
    }
    const StageShape last = arch_.pool_shapes(s).back();
    params_.push_back({sub.name + ".fc.w", ad::Tensor({sub.fc_width, last.h * last.w * last.c})});
    params_.push_back({sub.name + ".fc.b", ad::Tensor({sub.fc_width})});
  }
  params_.push_back({"fusion.w", ad::Tensor({arch_.num_classes, arch_.fusion_width()})});
  params_.push_back({"fusion.b", ad::Tensor({arch_.num_classes})});
}

ad::Tensor& CnnModel::parameter(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return p.tensor;
  }
  fail(ErrorKind::LayerError, "no parameter named " + name);
}

void CnnModel::init_he(std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed({seed, 0x48454e4fULL}));
  for (auto& p : params_) {
    auto& t = p.tensor;
    if (t.rank() == 1) {
      t.fill(0.0);
      continue;
    }
    const std::size_t fan_in = t.size() / t.dim(0);
    std::normal_distribution<double> nd(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (auto& v : t.storage()) v = nd(rng);
  }
}

void CnnModel::fit_normalization(std::span<const ChannelImages> images, std::span<const std::size_t> rows) {
  require(!rows.empty(), ErrorKind::EmptyDataset, "cannot fit normalization on zero rows");
  for (std::size_t c = 0; c < kChannelCount; ++c) {
    double sum = 0.0;
    double sq = 0.0;
    std::size_t n = 0;
    for (std::size_t r : rows) {
      for (double v : images[r][c].data) {
        sum += v;
        sq += v * v;
      }
      n += images[r][c].data.size();
    }
    if (n == 0) {
      mean_[c] = 0.0;
      std_[c] = 1.0;
      continue;
    }
    const double m = sum / static_cast<double>(n);
    const double var = std::max(0.0, sq / static_cast<double>(n) - m * m);
    mean_[c] = m;
    std_[c] = var > 1e-24 ? std::sqrt(var) : 1.0;
  }
}

void CnnModel::set_normalization(const std::array<double, kChannelCount>& mean,
                                 const std::array<double, kChannelCount>& sd) {
  for (double s : sd) require(s > 0.0 && std::isfinite(s), ErrorKind::ConfigError, "normalization std must be positive");
  mean_ = mean;
  std_ = sd;
}

CnnModel::Forward CnnModel::forward(ad::Graph& g, std::span<const ChannelImages* const> batch, bool input_grad) const {
  require(!batch.empty(), ErrorKind::EmptyDataset, "empty batch");
  require(!params_.empty(), ErrorKind::StateError, "model has no parameters");
  Forward fw;
  for (const auto& p : params_) fw.params.push_back(g.parameter(p.tensor));
  const std::size_t n = batch.size();
  const std::size_t h = arch_.in_h;
  const std::size_t w = arch_.in_w;
  std::size_t pi = 0;
  std::vector<ad::NodeId> heads;
  for (const auto& sub : arch_.subnets) {
    const std::size_t cin = sub.channels.size();
    std::vector<std::size_t> shape = arch_.one_d() ? std::vector<std::size_t>{n, cin, w}
                                                   : std::vector<std::size_t>{n, cin, h, w};
    ad::Tensor x(shape);
    auto* dst = x.storage().data();
    for (std::size_t i = 0; i < n; ++i) {
      for (auto ch : sub.channels) {
        const Matrix& m = (*batch[i])[index_of(ch)];
        require(m.rows == h && m.cols == w, ErrorKind::ShapeError,
                "input " + std::string(channel_name(ch)) + " is " + std::to_string(m.rows) + "x" +
                    std::to_string(m.cols) + ", expected " + std::to_string(h) + "x" + std::to_string(w));
        const double mu = mean_[index_of(ch)];
        const double inv = 1.0 / std_[index_of(ch)];
        for (double v : m.data) *dst++ = (v - mu) * inv;
      }
    }
    ad::NodeId node = g.input(std::move(x), input_grad);
    fw.inputs.push_back(node);
    fw.activations.emplace_back();
    for (const auto& st : sub.stages) {
      const ad::NodeId kw = fw.params[pi++];
      const ad::NodeId kb = fw.params[pi++];
      if (arch_.one_d()) {
        node = g.conv1d(node, kw, kb, 1, (st.kernel_w - 1) / 2);
      } else {
        node = g.conv2d(node, kw, kb, ad::Conv2dSpec::same(st.kernel_h, st.kernel_w));
      }
      node = g.relu(node);
      fw.activations.back().push_back(node);
      if (pools(st)) {
        if (arch_.one_d()) {
          node = g.maxpool1d(node, st.pool_w, st.pool_w, st.round_w);
        } else {
          node = g.maxpool2d(node, {st.pool_h, st.pool_w, st.pool_h, st.pool_w, st.round_h, st.round_w});
        }
      }
    }
    node = g.flatten(node);
    const ad::NodeId fw_w = fw.params[pi++];
    const ad::NodeId fw_b = fw.params[pi++];
    heads.push_back(g.relu(g.linear(node, fw_w, fw_b)));
  }
  ad::NodeId fused = heads.size() == 1 ? heads.front() : g.concat(heads);
  if (arch_.dropout > 0.0) fused = g.dropout(fused, arch_.dropout);
  fw.logits = g.linear(fused, fw.params[pi], fw.params[pi + 1]);
  return fw;
}

std::vector<std::vector<double>> CnnModel::predict_proba(std::span<const ChannelImages* const> batch) const {
  constexpr std::size_t kChunk = 32;
  std::vector<std::vector<double>> out(batch.size());
  const std::size_t chunks = (batch.size() + kChunk - 1) / kChunk;
  parallel_for(chunks, [&](std::size_t ci) {
    const std::size_t lo = ci * kChunk;
    const std::size_t hi = std::min(batch.size(), lo + kChunk);
    ad::Graph g(false);
    const auto fw = forward(g, batch.subspan(lo, hi - lo));
    const ad::Tensor p = ad::softmax(g.value(fw.logits));
    const std::size_t k = p.dim(1);
    for (std::size_t r = lo; r < hi; ++r) {
      out[r].assign(p.data().begin() + static_cast<std::ptrdiff_t>((r - lo) * k),
                    p.data().begin() + static_cast<std::ptrdiff_t>((r - lo + 1) * k));
    }
  });
  return out;
}

std::pair<std::size_t, std::size_t> CnnModel::resolve_layer(const std::string& name) const {
  std::string layer = name;
  std::size_t subnet = kAllSubnets;
  if (const auto dot = name.find('.'); dot != std::string::npos) {
    const std::string sub = name.substr(0, dot);
    layer = name.substr(dot + 1);
    for (std::size_t s = 0; s < arch_.subnets.size(); ++s) {
      if (arch_.subnets[s].name == sub) subnet = s;
    }
    require(subnet != kAllSubnets, ErrorKind::LayerError, "no subnet named " + sub);
  }
  require(layer.size() > 4 && layer.compare(0, 4, "conv") == 0, ErrorKind::LayerError,
          "layer '" + name + "' is not a convolutional stage");
  std::size_t idx = 0;
  for (char c : layer.substr(4)) {
    require(c >= '0' && c <= '9', ErrorKind::LayerError, "malformed layer name " + name);
    idx = idx * 10 + static_cast<std::size_t>(c - '0');
  }
  const std::size_t max_stage = arch_.subnets.at(subnet == kAllSubnets ? 0 : subnet).stages.size();
  require(idx >= 1 && idx <= max_stage, ErrorKind::LayerError, "layer " + name + " does not exist");
  return {subnet, idx - 1};
}

void save_checkpoint(const std::filesystem::path& path, const CnnModel& model) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::IoError, "cannot write " + path.string());
  const std::string arch = model.architecture().to_json();
  io::put_magic(out, "SOMW");
  io::put_uint<std::uint16_t>(out, kCheckpointVersion);
  io::put_uint<std::uint64_t>(out, fnv1a64(arch));
  io::put_string(out, arch);
  std::vector<NamedTensor> extra = {
      {"input.mean", ad::Tensor({kChannelCount}, std::vector<double>(model.input_mean().begin(), model.input_mean().end()))},
      {"input.std", ad::Tensor({kChannelCount}, std::vector<double>(model.input_std().begin(), model.input_std().end()))},
  };
  io::put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(model.parameters().size() + extra.size()));
  auto put_tensor = [&](const NamedTensor& t) {
    io::put_string(out, t.name);
    io::put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(t.tensor.rank()));
    for (auto d : t.tensor.shape()) io::put_uint<std::uint64_t>(out, d);
    for (double v : t.tensor.data()) io::put_f64(out, v);
  };
  for (const auto& t : model.parameters()) put_tensor(t);
  for (const auto& t : extra) put_tensor(t);
  require(static_cast<bool>(out), ErrorKind::IoError, "write failed for " + path.string());
}

CnnModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::IoError, "cannot open " + path.string());
  const auto file_size = std::filesystem::file_size(path);
  io::expect_magic(in, "SOMW");
  const auto version = io::get_uint<std::uint16_t>(in);
  require(version == kCheckpointVersion, ErrorKind::FormatError, "unsupported checkpoint version " + std::to_string(version));
  const auto stored_hash = io::get_uint<std::uint64_t>(in);
  const std::string arch_text = io::get_string(in);
  require(fnv1a64(arch_text) == stored_hash, ErrorKind::FormatError, "architecture hash mismatch");
  CnnModel model(CnnArchitecture::from_json(arch_text));
  std::array<double, kChannelCount> mean{};
  std::array<double, kChannelCount> sd{1, 1, 1, 1, 1, 1};
  std::set<std::string> seen;
  const auto count = io::get_uint<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = io::get_string(in, 4096);
    const auto rank = io::get_uint<std::uint32_t>(in);
    require(rank >= 1 && rank <= 8, ErrorKind::FormatError, "bad tensor rank for " + name);
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(io::get_uint<std::uint64_t>(in));
    const std::size_t n = ad::element_count(shape);
    require(n <= file_size / 8, ErrorKind::FormatError, "tensor " + name + " larger than file");
    std::vector<double> values(n);
    for (auto& v : values) v = io::get_f64(in);
    require(seen.insert(name).second, ErrorKind::FormatError, "duplicate tensor " + name);
    if (name == "input.mean" || name == "input.std") {
      require(n == kChannelCount, ErrorKind::FormatError, name + " must hold one value per channel");
      auto& dst = name == "input.mean" ? mean : sd;
      std::copy(values.begin(), values.end(), dst.begin());
      continue;
    }
    ad::Tensor* target = nullptr;
    for (auto& p : model.parameters()) {
      if (p.name == name) target = &p.tensor;
    }
    require(target != nullptr, ErrorKind::FormatError, "unexpected tensor " + name);
    require(target->shape() == shape, ErrorKind::FormatError,
            "tensor " + name + " has shape " + ad::shape_string(shape) + ", expected " + ad::shape_string(target->shape()));
    target->storage() = std::move(values);
  }
  for (const auto& p : model.parameters()) {
    require(seen.count(p.name) == 1, ErrorKind::FormatError, "checkpoint lacks tensor " + p.name);
  }
  in.peek();
  require(in.eof(), ErrorKind::FormatError, "trailing bytes after checkpoint");
  model.set_normalization(mean, sd);
  return model;
}

std::array<double, kClassCount> inverse_frequency_weights(const Dataset& ds, std::span<const std::size_t> rows) {
  const auto counts = ds.class_counts(rows);
  std::size_t present = 0;
  for (auto c : counts) present += c > 0 ? 1 : 0;
  std::array<double, kClassCount> w{};
  for (std::size_t k = 0; k < kClassCount; ++k) {
    if (counts[k] > 0) {
      w[k] = static_cast<double>(rows.size()) / (static_cast<double>(present) * static_cast<double>(counts[k]));
    }
  }
  return w;
}

const std::vector<ChannelImages>& cnn_inputs(const CnnArchitecture& arch, const Dataset& ds) {
  const auto& v = arch.one_d() ? ds.spectra : ds.spectrograms;
  require(v.size() == ds.size(), ErrorKind::StateError,
          std::string("dataset lacks ") + (arch.one_d() ? "spectra" : "spectrograms") + " for " + arch.name);
  return v;
}

LossSummary evaluate_loss(const CnnModel& model, const Dataset& ds, std::span<const std::size_t> rows,
                          const std::array<double, kClassCount>& class_weights) {
  require(!rows.empty(), ErrorKind::EmptyDataset, "no rows to evaluate");
  const auto& inputs = cnn_inputs(model.architecture(), ds);
  std::vector<const ChannelImages*> batch;
  batch.reserve(rows.size());
  for (auto r : rows) batch.push_back(&inputs[r]);
  const auto probs = model.predict_proba(batch);
  double loss = 0.0;
  double weight = 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t label = index_of(ds.samples[rows[i]].label);
    const auto& p = probs[i];
    const std::size_t arg = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
    correct += arg == label ? 1 : 0;
    const double w = class_weights[label];
    loss += w * -std::log(std::max(p[label], 1e-300));
    weight += w;
  }
  LossSummary s;
  s.loss = weight > 0.0 ? loss / weight : std::numeric_limits<double>::quiet_NaN();
  s.accuracy = static_cast<double>(correct) / static_cast<double>(rows.size());
  return s;
}

namespace {

struct ChunkResult {
  std::vector<std::vector<double>> grads;
  double weighted_loss = 0.0;
  std::size_t correct = 0;
};

class Optimizer {
 public:
  Optimizer(const TrainHyper& h, const std::vector<NamedTensor>& params) : hyper_(h) {
    require(h.optimizer == "adam" || h.optimizer == "sgd", ErrorKind::ConfigError,
            "unknown optimizer '" + h.optimizer + "' (expected adam or sgd)");
    for (const auto& p : params) {
      m_.emplace_back(p.tensor.size(), 0.0);
      if (h.optimizer == "adam") v_.emplace_back(p.tensor.size(), 0.0);
    }
  }

  void step(std::vector<NamedTensor>& params, const std::vector<std::vector<double>>& grads) {
    ++t_;
    const double lr = hyper_.learning_rate;
    if (hyper_.optimizer == "sgd") {
      for (std::size_t p = 0; p < params.size(); ++p) {
        auto& w = params[p].tensor.storage();
        for (std::size_t i = 0; i < w.size(); ++i) {
          m_[p][i] = 0.9 * m_[p][i] + grads[p][i];
          w[i] -= lr * m_[p][i];
        }
      }
      return;
    }
    constexpr double b1 = 0.9;
    constexpr double b2 = 0.999;
    constexpr double eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t p = 0; p < params.size(); ++p) {
      auto& w = params[p].tensor.storage();
      auto& m = m_[p];
      auto& v = v_[p];
      const auto& g = grads[p];
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
      }
    }
  }

 private:
  TrainHyper hyper_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t t_ = 0;
};

}  // namespace

TrainHistory train_dl(CnnModel& model, const Dataset& ds, std::span<const std::size_t> train,
                      std::span<const std::size_t> validation, const TrainHyper& hyper) {
  require(!train.empty(), ErrorKind::EmptyDataset, "training set is empty");
  require(hyper.batch >= 1 && hyper.grad_chunk >= 1, ErrorKind::ConfigError, "batch and chunk sizes must be positive");
  require(hyper.learning_rate > 0.0 && std::isfinite(hyper.learning_rate), ErrorKind::ConfigError,
          "learning rate must be positive");
  const auto& inputs = cnn_inputs(model.architecture(), ds);
  for (auto r : train) require(r < ds.size(), ErrorKind::ShapeError, "training row out of range");

  model.fit_normalization(inputs, train);
  std::array<double, kClassCount> weights{};
  if (hyper.class_weighting) {
    weights = inverse_frequency_weights(ds, train);
  } else {
    const auto counts = ds.class_counts(train);
    for (std::size_t k = 0; k < kClassCount; ++k) weights[k] = counts[k] > 0 ? 1.0 : 0.0;
  }
  require(model.architecture().num_classes == kClassCount, ErrorKind::ConfigError, "model must have one output per class slot");

  Optimizer opt(hyper, model.parameters());
  std::vector<std::size_t> order(train.begin(), train.end());
  std::mt19937_64 shuffle_rng(mix_seed({hyper.seed, 0x5348554646ULL}));
  TrainHistory history;
  std::size_t step = 0;
  auto& params = model.parameters();

  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    double epoch_weight = 0.0;
    std::size_t epoch_correct = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += hyper.batch, ++step) {
      const std::size_t hi = std::min(order.size(), lo + hyper.batch);
      double batch_weight = 0.0;
      for (std::size_t i = lo; i < hi; ++i) batch_weight += weights[index_of(ds.samples[order[i]].label)];
      const std::size_t chunks = (hi - lo + hyper.grad_chunk - 1) / hyper.grad_chunk;
      std::vector<ChunkResult> results(chunks);
      parallel_for(chunks, [&](std::size_t ci) {
        const std::size_t clo = lo + ci * hyper.grad_chunk;
        const std::size_t chi = std::min(hi, clo + hyper.grad_chunk);
        std::vector<const ChannelImages*> batch;
        std::vector<std::size_t> labels;
        double chunk_weight = 0.0;
        for (std::size_t i = clo; i < chi; ++i) {
          batch.push_back(&inputs[order[i]]);
          labels.push_back(index_of(ds.samples[order[i]].label));
          chunk_weight += weights[labels.back()];
        }
        ad::Graph g(true, mix_seed({hyper.seed, step, ci}));
        const auto fw = model.forward(g, batch);
        auto& res = results[ci];
        const ad::Tensor& logits = g.value(fw.logits);
        const std::size_t k = logits.dim(1);
        for (std::size_t r = 0; r < labels.size(); ++r) {
          const double* z = logits.data().data() + r * k;
          const std::size_t arg = static_cast<std::size_t>(std::max_element(z, z + k) - z);
          res.correct += arg == labels[r] ? 1 : 0;
        }
        res.grads.resize(params.size());
        if (chunk_weight <= 0.0) {
          for (std::size_t p = 0; p < params.size(); ++p) res.grads[p].assign(params[p].tensor.size(), 0.0);
          return;
        }
        const ad::NodeId loss = g.softmax_cross_entropy(fw.logits, labels, weights);
        res.weighted_loss = g.value(loss)[0] * chunk_weight;
        g.backward(loss, ad::Tensor({1}, std::vector<double>{chunk_weight / batch_weight}));
        for (std::size_t p = 0; p < params.size(); ++p) res.grads[p] = g.grad(fw.params[p]).storage();
      });
      std::vector<std::vector<double>> grads = std::move(results[0].grads);
      double batch_loss = results[0].weighted_loss;
      std::size_t batch_correct = results[0].correct;
      for (std::size_t ci = 1; ci < chunks; ++ci) {
        for (std::size_t p = 0; p < grads.size(); ++p) {
          auto& dst = grads[p];
          const auto& src = results[ci].grads[p];
          for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
        }
        batch_loss += results[ci].weighted_loss;
        batch_correct += results[ci].correct;
      }
      if (step == 0) history.initial_loss = batch_weight > 0.0 ? batch_loss / batch_weight : 0.0;
      epoch_loss += batch_loss;
      epoch_weight += batch_weight;
      epoch_correct += batch_correct;
      if (batch_weight > 0.0) opt.step(params, grads);
    }
    EpochStats st;
    st.epoch = epoch + 1;
    st.train_loss = epoch_weight > 0.0 ? epoch_loss / epoch_weight : 0.0;
    st.train_accuracy = static_cast<double>(epoch_correct) / static_cast<double>(order.size());
    if (validation.empty()) {
      st.val_loss = std::numeric_limits<double>::quiet_NaN();
      st.val_accuracy = std::numeric_limits<double>::quiet_NaN();
    } else {
      const auto v = evaluate_loss(model, ds, validation, weights);
      st.val_loss = v.loss;
      st.val_accuracy = v.accuracy;
    }
    for (double w : params.front().tensor.data()) {
      require(std::isfinite(w), ErrorKind::InvariantBreach, "training diverged (non-finite weights)");
    }
    history.epochs.push_back(st);
    if (hyper.on_epoch) hyper.on_epoch(st);
  }
  return history;
}

}  // namespace somno
