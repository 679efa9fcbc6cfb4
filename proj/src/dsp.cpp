#include "somno/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "binary_io.hpp"
#include "somno/error.hpp"
#include "somno/fft.hpp"

namespace somno {

void StftConfig::validate(double sample_rate) const {
  require(window_len >= 2, ErrorKind::ConfigError, "window_len must be at least 2");
  require(window_len <= nfft, ErrorKind::ConfigError, "window_len exceeds nfft");
  require(hop >= 1, ErrorKind::ConfigError, "hop must be at least 1");
  require(freq_lo >= 0.0 && freq_lo < freq_hi, ErrorKind::ConfigError, "need 0 <= freq_lo < freq_hi");
  require(freq_hi <= sample_rate / 2.0, ErrorKind::ConfigError, "freq_hi above Nyquist");
  require(pooled_bands >= 1 && pooled_frames >= 1, ErrorKind::ConfigError, "pooled shape must be non-empty");
}

std::vector<double> hanning(std::size_t n) {
  require(n >= 2, ErrorKind::InvalidLength, "Hann window needs n >= 2");
  std::vector<double> w(n);
  const double denom = static_cast<double>(n - 1);
  for (std::size_t k = 0; k < n; ++k) {
    w[k] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(k) / denom));
  }
  // Pin the exact endpoints and centre so symmetric windows are exactly symmetric.
  w.front() = 0.0;
  w.back() = 0.0;
  if (n % 2 == 1) w[n / 2] = 1.0;
  for (std::size_t k = 0; k < n / 2; ++k) w[n - 1 - k] = w[k];
  return w;
}

Spectrum fft_magnitude(std::span<const double> x, std::size_t nfft, double sample_rate, std::size_t max_bins) {
  require(!x.empty(), ErrorKind::InvalidLength, "empty input");
  require(x.size() <= nfft, ErrorKind::InvalidLength, "input longer than nfft");
  const auto coeffs = rfft(x, nfft, max_bins);
  Spectrum s;
  s.bin_hz = sample_rate / static_cast<double>(nfft);
  s.bins.resize(coeffs.size());
  std::transform(coeffs.begin(), coeffs.end(), s.bins.begin(), [](const Complex& c) { return std::abs(c); });
  return s;
}

namespace {

struct BinRange {
  std::size_t first;
  std::size_t last;  // inclusive
};

BinRange bins_in(double lo, double hi, double bin_hz, std::size_t one_sided) {
  const double tol = 1e-9;
  auto first = static_cast<std::size_t>(std::ceil(lo / bin_hz - tol));
  auto last = static_cast<std::size_t>(std::floor(hi / bin_hz + tol));
  last = std::min(last, one_sided - 1);
  require(first <= last, ErrorKind::ConfigError, "frequency range contains no FFT bins");
  return {first, last};
}

}  // namespace

TimeFrequency stft(std::span<const double> x, const StftConfig& cfg, double sample_rate) {
  cfg.validate(sample_rate);
  require(x.size() >= cfg.window_len, ErrorKind::TooShort,
          "input of " + std::to_string(x.size()) + " samples is shorter than the window");
  const auto window = hanning(cfg.window_len);
  const std::size_t frames = (x.size() - cfg.window_len) / cfg.hop + 1;
  const double bin_hz = sample_rate / static_cast<double>(cfg.nfft);
  const BinRange range = bins_in(cfg.freq_lo, cfg.freq_hi, bin_hz, cfg.nfft / 2 + 1);

  TimeFrequency tf;
  tf.bin_hz = bin_hz;
  tf.first_bin = range.first;
  tf.values = Matrix(range.last - range.first + 1, frames);
  std::vector<double> frame(cfg.window_len);
  for (std::size_t j = 0; j < frames; ++j) {
    const std::size_t start = j * cfg.hop;
    for (std::size_t k = 0; k < cfg.window_len; ++k) frame[k] = x[start + k] * window[k];
    const auto coeffs = rfft(frame, cfg.nfft, range.last + 1);
    for (std::size_t r = 0; r < tf.values.rows; ++r) tf.values(r, j) = std::abs(coeffs[range.first + r]);
  }
  return tf;
}

std::size_t band_of(double f, const StftConfig& cfg) {
  const double width = (cfg.freq_hi - cfg.freq_lo) / static_cast<double>(cfg.pooled_bands);
  const double pos = std::floor((f - cfg.freq_lo) / width);
  if (pos <= 0.0) return 0;
  return std::min(static_cast<std::size_t>(pos), cfg.pooled_bands - 1);
}

Spectrogram pool_spectrogram(const TimeFrequency& raw, const StftConfig& cfg, ChannelKind channel) {
  require(raw.values.cols >= 1 && raw.values.rows >= 1, ErrorKind::ShapeError, "empty time-frequency matrix");
  const std::size_t bands = cfg.pooled_bands;
  const std::size_t frames_in = raw.values.cols;

  // Row -> band assignment; empty bands take the row nearest their centre.
  std::vector<std::vector<std::size_t>> members(bands);
  for (std::size_t r = 0; r < raw.values.rows; ++r) {
    const double f = raw.frequency(r);
    if (f < cfg.freq_lo - 1e-9 || f > cfg.freq_hi + 1e-9) continue;
    members[band_of(f, cfg)].push_back(r);
  }
  const double width = (cfg.freq_hi - cfg.freq_lo) / static_cast<double>(bands);
  for (std::size_t b = 0; b < bands; ++b) {
    if (!members[b].empty()) continue;
    const double centre = cfg.freq_lo + (static_cast<double>(b) + 0.5) * width;
    const double idx = std::round(centre / raw.bin_hz) - static_cast<double>(raw.first_bin);
    const auto clamped = static_cast<std::size_t>(std::clamp(idx, 0.0, static_cast<double>(raw.values.rows - 1)));
    members[b].push_back(clamped);
  }

  Spectrogram out;
  out.channel = channel;
  out.values = Matrix(bands, cfg.pooled_frames);
  for (std::size_t j = 0; j < cfg.pooled_frames; ++j) {
    const std::size_t src = frames_in <= cfg.pooled_frames ? std::min(j, frames_in - 1)
                                                           : j * frames_in / cfg.pooled_frames;
    for (std::size_t b = 0; b < bands; ++b) {
      double acc = 0.0;
      for (std::size_t r : members[b]) acc += raw.values(r, src);
      double v = acc / static_cast<double>(members[b].size());
      if (cfg.log_scale) v = std::log10(1.0 + v);
      out.values(b, j) = v;
    }
  }
  return out;
}

std::vector<double> to_double(std::span<const float> x) { return {x.begin(), x.end()}; }

Spectrogram spectrogram_of(std::span<const float> samples, ChannelKind channel, const StftConfig& cfg,
                           double sample_rate) {
  const auto x = to_double(samples);
  return pool_spectrogram(stft(x, cfg, sample_rate), cfg, channel);
}

SpectrogramSet spectrograms_of(const Epoch& epoch, const StftConfig& cfg) {
  SpectrogramSet set;
  for (auto kind : kAllChannels) {
    set[index_of(kind)] = spectrogram_of(epoch.channel(kind), kind, cfg, epoch.sample_rate);
  }
  return set;
}

void write_spectrograms(const std::filesystem::path& path, const SpectrogramDump& dump) {
  require(dump.labels.size() == dump.epochs.size(), ErrorKind::ShapeError, "labels and epochs differ in count");
  std::size_t rows = 0;
  std::size_t cols = 0;
  if (!dump.epochs.empty()) {
    rows = dump.epochs[0][0].values.rows;
    cols = dump.epochs[0][0].values.cols;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::IoError, "cannot write " + path.string());
  io::put_magic(out, "SPEC");
  io::put_uint<std::uint16_t>(out, kSpectrogramVersion);
  io::put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(dump.epochs.size()));
  io::put_uint<std::uint16_t>(out, static_cast<std::uint16_t>(kChannelCount));
  io::put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(rows));
  io::put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(cols));
  std::vector<float> buf;
  for (std::size_t e = 0; e < dump.epochs.size(); ++e) {
    io::put_uint<std::uint8_t>(out, static_cast<std::uint8_t>(dump.labels[e]));
    for (const auto& sg : dump.epochs[e]) {
      require(sg.values.rows == rows && sg.values.cols == cols, ErrorKind::ShapeError, "inconsistent spectrogram shape");
      io::put_uint<std::uint8_t>(out, static_cast<std::uint8_t>(sg.channel));
      buf.assign(sg.values.data.begin(), sg.values.data.end());
      io::put_f32_array(out, buf);
    }
  }
  require(static_cast<bool>(out), ErrorKind::IoError, "write failed for " + path.string());
}

SpectrogramDump load_spectrograms(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::IoError, "cannot open " + path.string());
  io::expect_magic(in, "SPEC");
  const auto version = io::get_uint<std::uint16_t>(in);
  require(version == kSpectrogramVersion, ErrorKind::FormatError, "unsupported spectrogram dump version");
  const auto count = io::get_uint<std::uint32_t>(in);
  const auto channels = io::get_uint<std::uint16_t>(in);
  require(channels == kChannelCount, ErrorKind::FormatError, "spectrogram dump must hold six channels");
  const auto rows = io::get_uint<std::uint32_t>(in);
  const auto cols = io::get_uint<std::uint32_t>(in);
  const auto file_size = static_cast<std::uint64_t>(std::filesystem::file_size(path));
  require(std::uint64_t{count} * kChannelCount * rows * cols * 4 <= file_size, ErrorKind::FormatError,
          "spectrogram dump header exceeds file size");

  SpectrogramDump dump;
  dump.labels.resize(count);
  dump.epochs.resize(count);
  std::vector<float> buf(std::size_t{rows} * cols);
  for (std::size_t e = 0; e < count; ++e) {
    const auto label = io::get_uint<std::uint8_t>(in);
    require(label < kClassCount, ErrorKind::FormatError, "label byte out of range");
    dump.labels[e] = static_cast<DisorderClass>(label);
    for (std::size_t c = 0; c < kChannelCount; ++c) {
      const auto kind = io::get_uint<std::uint8_t>(in);
      require(kind < kChannelCount, ErrorKind::FormatError, "unknown channel kind byte");
      io::get_f32_array(in, buf);
      Spectrogram& sg = dump.epochs[e][c];
      sg.channel = static_cast<ChannelKind>(kind);
      sg.values = Matrix(rows, cols);
      std::copy(buf.begin(), buf.end(), sg.values.data.begin());
    }
  }
  return dump;
}

}  // namespace somno
