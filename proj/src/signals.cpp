#include "somno/signals.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include <json.hpp>

#include "binary_io.hpp"
#include "somno/error.hpp"
#include "somno/fft.hpp"

namespace somno {

namespace {

constexpr std::array<std::string_view, kChannelCount> kChannelNames = {"EEG1", "EEG2", "EEG3",
                                                                       "EMG",  "ECG",  "EOG"};
constexpr std::array<std::string_view, kClassCount> kClassCodes = {"bru", "ins", "nar", "nfl", "plm",
                                                                   "rbd", "sbd", "nrm", "rsv"};
constexpr std::array<std::string_view, kClassCount> kClassLabels = {"Bru", "Ins", "Nar", "Nfl", "Plm",
                                                                    "Rbd", "Sbd", "Nrm", "Rsv"};

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
         });
}

}  // namespace

std::string_view channel_name(ChannelKind kind) { return kChannelNames[index_of(kind)]; }

std::optional<ChannelKind> parse_channel(std::string_view name) {
  for (auto kind : kAllChannels) {
    if (iequals(name, channel_name(kind))) return kind;
  }
  return std::nullopt;
}

std::string_view class_code(DisorderClass c) { return kClassCodes[index_of(c)]; }
std::string_view class_label(DisorderClass c) { return kClassLabels[index_of(c)]; }

std::optional<DisorderClass> parse_class(std::string_view code) {
  for (std::size_t i = 0; i < kClassCount; ++i) {
    if (iequals(code, kClassCodes[i])) return static_cast<DisorderClass>(i);
  }
  // "sdb" is a common alternative spelling of sleep-disordered breathing.
  if (iequals(code, "sdb")) return DisorderClass::Sbd;
  return std::nullopt;
}

void Recording::validate() const {
  require(sample_rate > 0, ErrorKind::FormatError, "sample rate must be positive");
  for (const auto& ch : channels) {
    require(ch.size() == channels[0].size(), ErrorKind::LengthMismatch,
            "channel lengths differ (" + std::to_string(ch.size()) + " vs " +
                std::to_string(channels[0].size()) + ")");
  }
  require(labels.size() == whole_epochs(), ErrorKind::FormatError,
          "label count " + std::to_string(labels.size()) + " does not match " +
              std::to_string(whole_epochs()) + " whole epochs");
  for (auto label : labels) {
    require(index_of(label) < kClassCount, ErrorKind::FormatError, "label out of range");
  }
}

std::vector<Epoch> frame_epochs(const Recording& rec) {
  rec.validate();
  const std::size_t len = rec.epoch_len();
  require(rec.length() >= len, ErrorKind::TooShort,
          "recording has " + std::to_string(rec.length()) + " samples, one epoch needs " +
              std::to_string(len));
  const std::size_t count = rec.whole_epochs();
  std::vector<Epoch> epochs(count);
  for (std::size_t e = 0; e < count; ++e) {
    Epoch& ep = epochs[e];
    ep.recording_id = rec.id;
    ep.index = e;
    ep.sample_rate = rec.sample_rate;
    ep.label = rec.labels[e];
    for (std::size_t c = 0; c < kChannelCount; ++c) {
      const auto first = rec.channels[c].begin() + static_cast<std::ptrdiff_t>(e * len);
      ep.samples[c].assign(first, first + static_cast<std::ptrdiff_t>(len));
    }
  }
  return epochs;
}

Recording load_recording(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::IoError, "cannot open " + path.string());

  const auto file_size = static_cast<std::uint64_t>(std::filesystem::file_size(path));
  io::expect_magic(in, "SOMN");
  const auto version = io::get_uint<std::uint16_t>(in);
  require(version == kRecordingVersion, ErrorKind::FormatError,
          "unsupported container version " + std::to_string(version));

  Recording rec;
  rec.id = path.stem().string();
  rec.sample_rate = io::get_uint<std::uint32_t>(in);
  require(rec.sample_rate > 0, ErrorKind::FormatError, "sample rate must be positive");
  const auto epoch_count = io::get_uint<std::uint32_t>(in);
  rec.labels.resize(epoch_count);
  for (auto& label : rec.labels) {
    const auto byte = io::get_uint<std::uint8_t>(in);
    require(byte < kClassCount, ErrorKind::FormatError, "label byte out of range");
    label = static_cast<DisorderClass>(byte);
  }

  std::array<bool, kChannelCount> seen{};
  for (std::size_t block = 0; block < kChannelCount; ++block) {
    if (in.peek() == std::char_traits<char>::eof()) break;
    const auto kind = io::get_uint<std::uint8_t>(in);
    require(kind < kChannelCount, ErrorKind::FormatError, "unknown channel kind byte");
    require(!seen[kind], ErrorKind::FormatError, "duplicate channel block");
    seen[kind] = true;
    const auto length = io::get_uint<std::uint64_t>(in);
    require(length <= file_size / 4, ErrorKind::FormatError, "channel length exceeds file size");
    auto& samples = rec.channels[kind];
    samples.resize(length);
    io::get_f32_array(in, samples);
  }
  for (std::size_t c = 0; c < kChannelCount; ++c) {
    require(seen[c], ErrorKind::ChannelMissing,
            std::string(channel_name(static_cast<ChannelKind>(c))) + " channel not present");
  }
  require(in.peek() == std::char_traits<char>::eof(), ErrorKind::FormatError,
          "trailing bytes after channel blocks");

  std::filesystem::path sidecar = path;
  sidecar += ".json";
  if (std::filesystem::exists(sidecar)) {
    std::ifstream js(sidecar);
    try {
      const auto manifest = nlohmann::json::parse(js);
      if (manifest.contains("id")) rec.id = manifest.at("id").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::FormatError, "bad sidecar " + sidecar.string() + ": " + e.what());
    }
  }

  rec.validate();
  return rec;
}

void write_recording(const std::filesystem::path& path, const Recording& rec, const std::string& notes) {
  rec.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::IoError, "cannot write " + path.string());
  io::put_magic(out, "SOMN");
  io::put_uint<std::uint16_t>(out, kRecordingVersion);
  io::put_uint<std::uint32_t>(out, rec.sample_rate);
  io::put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(rec.labels.size()));
  for (auto label : rec.labels) io::put_uint<std::uint8_t>(out, static_cast<std::uint8_t>(label));
  for (std::size_t c = 0; c < kChannelCount; ++c) {
    io::put_uint<std::uint8_t>(out, static_cast<std::uint8_t>(c));
    io::put_uint<std::uint64_t>(out, rec.channels[c].size());
    io::put_f32_array(out, rec.channels[c]);
  }
  require(static_cast<bool>(out), ErrorKind::IoError, "write failed for " + path.string());

  std::filesystem::path sidecar = path;
  sidecar += ".json";
  std::ofstream js(sidecar, std::ios::trunc);
  js << nlohmann::json{{"id", rec.id}, {"notes", notes}}.dump(2) << '\n';
}

SpectralSignature signature_of(DisorderClass c) {
  // Frequency and peak ranges per disorder. The anchor is the point of the
  // peak range the generator centres its dominant component on; anchors are
  // spread so that overlapping peak ranges still give distinct classes.
  switch (c) {
    case DisorderClass::Bru: return {0, 50, true, 10, 25, 22.5};
    case DisorderClass::Ins: return {0, 100, true, 5, 45, 28.0};
    case DisorderClass::Nar: return {0, 50, true, 8, 13, 9.0};
    case DisorderClass::Nfl: return {0, 50, true, 8, 15, 13.5};
    case DisorderClass::Plm: return {0, 50, true, 2, 7, 4.5};
    case DisorderClass::Rbd: return {0, 50, true, 10, 20, 18.0};
    case DisorderClass::Sbd: return {0, 50, true, 30, 45, 38.0};
    case DisorderClass::Nrm: return {0, 50, false, 0, 0, 0};
    case DisorderClass::Reserved: break;
  }
  fail(ErrorKind::LabelError, "the reserved class has no signature");
}

namespace {

// Gaussian noise confined to [lo, hi] Hz, scaled to exactly `power`.
std::vector<double> band_noise(std::size_t n, double rate, double lo, double hi, double power,
                               std::mt19937_64& rng) {
  std::size_t nfft = 1;
  while (nfft < n) nfft <<= 1;
  const double bin_hz = rate / static_cast<double>(nfft);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Complex> half(nfft / 2 + 1, Complex{0.0, 0.0});
  for (std::size_t k = 1; k < nfft / 2; ++k) {
    const double f = static_cast<double>(k) * bin_hz;
    if (f < lo || f > hi) continue;
    const double re = gauss(rng);
    const double im = gauss(rng);
    half[k] = {re, im};
  }
  std::vector<double> x = irfft(half, nfft);
  x.resize(n);
  double mean_sq = 0.0;
  for (double v : x) mean_sq += v * v;
  mean_sq /= static_cast<double>(n);
  const double scale = mean_sq > 0.0 ? std::sqrt(power / mean_sq) : 0.0;
  for (double& v : x) v *= scale;
  return x;
}

}  // namespace

Recording synth_recording(DisorderClass c, std::size_t epochs, std::uint64_t seed, const SynthConfig& cfg) {
  require(epochs >= 1, ErrorKind::InvalidLength, "synth needs at least one epoch");
  require(cfg.sample_rate > 0, ErrorKind::ConfigError, "sample rate must be positive");
  const SpectralSignature sig = signature_of(c);
  const SpectralSignature background = signature_of(DisorderClass::Nrm);

  std::seed_seq seq{seed, static_cast<std::uint64_t>(index_of(c)), std::uint64_t{0x534f4d4e}};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  Recording rec;
  rec.id = std::string(class_code(c)) + "-" + std::to_string(seed);
  rec.sample_rate = cfg.sample_rate;
  rec.labels.assign(epochs, c);
  const std::size_t len = rec.epoch_len();
  const double rate = static_cast<double>(cfg.sample_rate);
  const double nyquist = rate / 2.0;
  for (auto& ch : rec.channels) ch.resize(epochs * len);

  for (std::size_t e = 0; e < epochs; ++e) {
    const double gain = 1.0 + cfg.amplitude_spread * (2.0 * unit(rng) - 1.0);
    const double amp = cfg.amplitude * gain;
    const double signal_power = amp * amp / 2.0;
    const double noise_power = signal_power / std::pow(10.0, cfg.snr_db / 10.0);
    double peak_hz = sig.peak_anchor + cfg.peak_jitter_hz * (2.0 * unit(rng) - 1.0);
    peak_hz = std::clamp(peak_hz, sig.peak_lo, sig.peak_hi);

    for (std::size_t ch = 0; ch < kChannelCount; ++ch) {
      const bool carries = cfg.signature_channels[ch] && sig.has_peak;
      const SpectralSignature& shape = cfg.signature_channels[ch] ? sig : background;
      std::vector<double> x;
      if (carries) {
        x = band_noise(len, rate, shape.range_lo, std::min(shape.range_hi, nyquist), noise_power / 2.0, rng);
        const double phase = 2.0 * std::numbers::pi * unit(rng);
        for (std::size_t t = 0; t < len; ++t) {
          x[t] += amp * std::sin(2.0 * std::numbers::pi * peak_hz * static_cast<double>(t) / rate + phase);
        }
      } else {
        x = band_noise(len, rate, shape.range_lo, std::min(shape.range_hi, nyquist),
                       signal_power + noise_power / 2.0, rng);
      }
      const double white_sd = std::sqrt(noise_power / 2.0);
      auto& out = rec.channels[ch];
      for (std::size_t t = 0; t < len; ++t) {
        out[e * len + t] = static_cast<float>(x[t] + white_sd * gauss(rng));
      }
    }
  }
  return rec;
}

}  // namespace somno
