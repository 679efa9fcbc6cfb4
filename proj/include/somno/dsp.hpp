#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "somno/matrix.hpp"
#include "somno/signals.hpp"

namespace somno {

struct StftConfig {
  std::size_t window_len = 101;  // 0.2 s at 512 Hz, taken as 101 samples
  std::size_t hop = 36;          // 69 frames per 5 s epoch, padded to 70
  std::size_t nfft = 8192;
  double freq_lo = 0.0;
  double freq_hi = 80.0;
  std::size_t pooled_bands = 21;
  std::size_t pooled_frames = 70;
  bool log_scale = false;  // apply log10(1 + v) after pooling

  // Throws ConfigError when the parameter combination is unusable.
  void validate(double sample_rate) const;
};

struct Spectrum {
  std::vector<double> bins;  // one-sided magnitudes
  double bin_hz = 0.0;

  double frequency(std::size_t k) const { return static_cast<double>(k) * bin_hz; }
};

// Frequency rows x time frames, rows restricted to [freq_lo, freq_hi].
struct TimeFrequency {
  Matrix values;
  double bin_hz = 0.0;
  std::size_t first_bin = 0;

  double frequency(std::size_t row) const { return static_cast<double>(first_bin + row) * bin_hz; }
};

struct Spectrogram {
  Matrix values;  // pooled_bands x pooled_frames, low to high frequency
  ChannelKind channel = ChannelKind::EEG1;
};

using SpectrogramSet = std::array<Spectrogram, kChannelCount>;

// Symmetric Hann window, w[k] = 0.5 (1 - cos(2 pi k / (n - 1))).
std::vector<double> hanning(std::size_t n);

Spectrum fft_magnitude(std::span<const double> x, std::size_t nfft, double sample_rate,
                       std::size_t max_bins = 0);

TimeFrequency stft(std::span<const double> x, const StftConfig& cfg, double sample_rate);

// Equal-width band averaging over [freq_lo, freq_hi] and edge-replicate /
// uniform-subsample resampling of the time axis.
Spectrogram pool_spectrogram(const TimeFrequency& raw, const StftConfig& cfg,
                             ChannelKind channel = ChannelKind::EEG1);

// Band index of frequency f under the pooled layout.
std::size_t band_of(double f, const StftConfig& cfg);

Spectrogram spectrogram_of(std::span<const float> samples, ChannelKind channel, const StftConfig& cfg,
                           double sample_rate);
SpectrogramSet spectrograms_of(const Epoch& epoch, const StftConfig& cfg);

std::vector<double> to_double(std::span<const float> x);

// SPEC dump: "SPEC" | version u16 | epoch_count u32 | channel_count u16 | rows u32 | cols u32
//   then per epoch: label u8, and per channel: kind u8 + rows*cols float32 row-major.
inline constexpr std::uint16_t kSpectrogramVersion = 1;

struct SpectrogramDump {
  std::vector<DisorderClass> labels;
  std::vector<SpectrogramSet> epochs;
};

void write_spectrograms(const std::filesystem::path& path, const SpectrogramDump& dump);
SpectrogramDump load_spectrograms(const std::filesystem::path& path);

}  // namespace somno
