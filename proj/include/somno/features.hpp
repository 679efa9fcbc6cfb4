#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "somno/dsp.hpp"
#include "somno/signals.hpp"

namespace somno {

struct Band {
  double lo = 0.0;
  double hi = 0.0;  // exclusive
};

// Five 10 Hz bands over 0-50 Hz. A bin belongs to a band when lo <= f < hi,
// which gives exactly 160 bins per band at 0.0625 Hz spacing.
struct BandSpec {
  std::vector<Band> bands = {{0, 10}, {10, 20}, {20, 30}, {30, 40}, {40, 50}};

  std::size_t size() const { return bands.size(); }
};

enum class DescriptorId : std::uint8_t {
  // core set, in feature-vector order
  Power = 0,
  Mean,
  Std,
  Median,
  Min,
  Max,
  SpectralEntropy,
  Energy,
  SpectralCentroid,
  // extended set
  SpectralSlope,
  SpectralDecrease,
  SpectralSkewness,
  SpectralKurtosis,
  SpectralCrest,
};

inline constexpr std::size_t kCoreDescriptors = 9;
inline constexpr std::size_t kExtendedDescriptors = 14;

enum class FeatureProfile { Core9, Extended14 };

std::size_t descriptor_count(FeatureProfile profile);
std::string_view descriptor_name(DescriptorId id);
std::string_view profile_name(FeatureProfile profile);
FeatureProfile parse_profile(std::string_view name);  // throws ConfigError

struct BandSlice {
  std::vector<double> magnitudes;
  std::vector<double> frequencies;
};

BandSlice band_slice(const Spectrum& spec, std::size_t band, const BandSpec& bands = {});

// Degenerate (all-zero) inputs give 0 for the ratio-type descriptors.
double descriptor(std::span<const double> mag, std::span<const double> freqs, DescriptorId id);

struct FeatureVector {
  std::string epoch_id;
  DisorderClass label = DisorderClass::Nrm;
  std::vector<double> values;
};

// Flat index of (channel, band, descriptor): channel-major, then band, then descriptor.
std::size_t feature_index(ChannelKind channel, std::size_t band, std::size_t descriptor,
                          FeatureProfile profile = FeatureProfile::Core9, std::size_t band_count = 5);

struct FeatureCoord {
  ChannelKind channel;
  std::size_t band;
  std::size_t descriptor;
};

FeatureCoord feature_coord(std::size_t index, FeatureProfile profile = FeatureProfile::Core9,
                           std::size_t band_count = 5);

// "ECG.b3.spectral_centroid" (bands numbered from 1).
std::vector<std::string> feature_names(FeatureProfile profile = FeatureProfile::Core9,
                                       std::size_t band_count = 5);

std::string epoch_key(const std::string& recording_id, std::size_t index);

// Full-epoch magnitude spectrum of one channel at cfg.nfft points.
Spectrum epoch_spectrum(const Epoch& epoch, ChannelKind channel, const StftConfig& cfg,
                        std::size_t max_bins = 0);

FeatureVector extract_features(const Epoch& epoch, const StftConfig& cfg = {}, const BandSpec& bands = {});
FeatureVector extract_extended(const Epoch& epoch, const StftConfig& cfg = {}, const BandSpec& bands = {});
FeatureVector extract_profile(const Epoch& epoch, FeatureProfile profile, const StftConfig& cfg = {},
                              const BandSpec& bands = {});

// Header `epoch_id,label,<feature names...>`, one row per vector.
void write_feature_csv(std::ostream& out, std::span<const FeatureVector> rows, FeatureProfile profile);
std::vector<FeatureVector> read_feature_csv(std::istream& in, FeatureProfile* profile_out = nullptr);

}  // namespace somno
