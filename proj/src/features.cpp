#include "somno/features.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "somno/error.hpp"

namespace somno {

namespace {

constexpr std::array<std::string_view, kExtendedDescriptors> kDescriptorNames = {
    "power",          "mean",           "std",
    "median",         "min",            "max",
    "spectral_entropy", "energy",       "spectral_centroid",
    "spectral_slope", "spectral_decrease", "spectral_skewness",
    "spectral_kurtosis", "spectral_crest"};

double sum_of(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0); }

double mean_of(std::span<const double> v) { return sum_of(v) / static_cast<double>(v.size()); }

double central_moment(std::span<const double> v, double mu, int order) {
  double acc = 0.0;
  for (double x : v) acc += std::pow(x - mu, order);
  return acc / static_cast<double>(v.size());
}

}  // namespace

std::size_t descriptor_count(FeatureProfile profile) {
  return profile == FeatureProfile::Core9 ? kCoreDescriptors : kExtendedDescriptors;
}

std::string_view descriptor_name(DescriptorId id) { return kDescriptorNames[static_cast<std::size_t>(id)]; }

std::string_view profile_name(FeatureProfile profile) {
  return profile == FeatureProfile::Core9 ? "core9" : "extended14";
}

FeatureProfile parse_profile(std::string_view name) {
  if (name == "core9") return FeatureProfile::Core9;
  if (name == "extended14") return FeatureProfile::Extended14;
  fail(ErrorKind::ConfigError, "unknown feature profile '" + std::string(name) + "'");
}

BandSlice band_slice(const Spectrum& spec, std::size_t band, const BandSpec& bands) {
  require(band < bands.size(), ErrorKind::InvalidBand,
          "band index " + std::to_string(band) + " out of range");
  const Band& b = bands.bands[band];
  BandSlice out;
  for (std::size_t k = 0; k < spec.bins.size(); ++k) {
    const double f = spec.frequency(k);
    if (f >= b.lo && f < b.hi) {
      out.magnitudes.push_back(spec.bins[k]);
      out.frequencies.push_back(f);
    }
  }
  return out;
}

double descriptor(std::span<const double> mag, std::span<const double> freqs, DescriptorId id) {
  require(!mag.empty(), ErrorKind::InvalidLength, "descriptor of an empty band");
  require(freqs.size() == mag.size(), ErrorKind::ShapeError, "magnitude and frequency arrays differ");
  const auto n = static_cast<double>(mag.size());
  switch (id) {
    case DescriptorId::Power: {
      double acc = 0.0;
      for (double m : mag) acc += m * m;
      return acc / n;
    }
    case DescriptorId::Energy: {
      double acc = 0.0;
      for (double m : mag) acc += m * m;
      return acc;
    }
    case DescriptorId::Mean: return mean_of(mag);
    case DescriptorId::Std: return std::sqrt(central_moment(mag, mean_of(mag), 2));
    case DescriptorId::Median: {
      std::vector<double> sorted(mag.begin(), mag.end());
      std::sort(sorted.begin(), sorted.end());
      const std::size_t mid = sorted.size() / 2;
      return sorted.size() % 2 == 1 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
    }
    case DescriptorId::Min: return *std::min_element(mag.begin(), mag.end());
    case DescriptorId::Max: return *std::max_element(mag.begin(), mag.end());
    case DescriptorId::SpectralEntropy: {
      double total = 0.0;
      for (double m : mag) total += m * m;
      if (total <= 0.0 || mag.size() < 2) return 0.0;
      double h = 0.0;
      for (double m : mag) {
        const double p = m * m / total;
        if (p > 0.0) h -= p * std::log2(p);
      }
      return h / std::log2(n);
    }
    case DescriptorId::SpectralCentroid: {
      const double total = sum_of(mag);
      if (total <= 0.0) return 0.0;
      double acc = 0.0;
      for (std::size_t k = 0; k < mag.size(); ++k) acc += freqs[k] * mag[k];
      return acc / total;
    }
    case DescriptorId::SpectralCrest: {
      const double mu = mean_of(mag);
      if (mu <= 0.0) return 0.0;
      return *std::max_element(mag.begin(), mag.end()) / mu;
    }
    case DescriptorId::SpectralSlope: {
      const double fbar = mean_of(freqs);
      const double mbar = mean_of(mag);
      double num = 0.0;
      double den = 0.0;
      for (std::size_t k = 0; k < mag.size(); ++k) {
        num += (freqs[k] - fbar) * (mag[k] - mbar);
        den += (freqs[k] - fbar) * (freqs[k] - fbar);
      }
      return den > 0.0 ? num / den : 0.0;
    }
    case DescriptorId::SpectralDecrease: {
      double num = 0.0;
      double den = 0.0;
      for (std::size_t k = 1; k < mag.size(); ++k) {
        num += (mag[k] - mag[0]) / static_cast<double>(k);
        den += mag[k];
      }
      return den > 0.0 ? num / den : 0.0;
    }
    case DescriptorId::SpectralSkewness:
    case DescriptorId::SpectralKurtosis: {
      const double mu = mean_of(mag);
      const double var = central_moment(mag, mu, 2);
      if (var <= 0.0) return 0.0;
      const int order = id == DescriptorId::SpectralSkewness ? 3 : 4;
      return central_moment(mag, mu, order) / std::pow(var, order / 2.0);
    }
  }
  fail(ErrorKind::InvalidFeature, "unknown descriptor");
}

std::size_t feature_index(ChannelKind channel, std::size_t band, std::size_t desc, FeatureProfile profile,
                          std::size_t band_count) {
  const std::size_t per_band = descriptor_count(profile);
  require(band < band_count && desc < per_band, ErrorKind::InvalidBand, "feature coordinate out of range");
  return (index_of(channel) * band_count + band) * per_band + desc;
}

FeatureCoord feature_coord(std::size_t index, FeatureProfile profile, std::size_t band_count) {
  const std::size_t per_band = descriptor_count(profile);
  require(index < kChannelCount * band_count * per_band, ErrorKind::InvalidBand, "feature index out of range");
  return {static_cast<ChannelKind>(index / (band_count * per_band)), (index / per_band) % band_count,
          index % per_band};
}

std::vector<std::string> feature_names(FeatureProfile profile, std::size_t band_count) {
  const std::size_t per_band = descriptor_count(profile);
  std::vector<std::string> names;
  names.reserve(kChannelCount * band_count * per_band);
  for (auto ch : kAllChannels) {
    for (std::size_t b = 0; b < band_count; ++b) {
      for (std::size_t d = 0; d < per_band; ++d) {
        names.push_back(std::string(channel_name(ch)) + ".b" + std::to_string(b + 1) + "." +
                        std::string(kDescriptorNames[d]));
      }
    }
  }
  return names;
}

std::string epoch_key(const std::string& recording_id, std::size_t index) {
  return recording_id + ":" + std::to_string(index);
}

Spectrum epoch_spectrum(const Epoch& epoch, ChannelKind channel, const StftConfig& cfg, std::size_t max_bins) {
  const auto x = to_double(epoch.channel(channel));
  return fft_magnitude(x, cfg.nfft, epoch.sample_rate, max_bins);
}

FeatureVector extract_profile(const Epoch& epoch, FeatureProfile profile, const StftConfig& cfg,
                              const BandSpec& bands) {
  const std::size_t per_band = descriptor_count(profile);
  double top_hz = 0.0;
  for (const auto& b : bands.bands) top_hz = std::max(top_hz, b.hi);
  const double bin_hz = static_cast<double>(epoch.sample_rate) / static_cast<double>(cfg.nfft);
  const auto max_bins = static_cast<std::size_t>(std::ceil(top_hz / bin_hz)) + 1;

  FeatureVector fv;
  fv.epoch_id = epoch_key(epoch.recording_id, epoch.index);
  fv.label = epoch.label;
  fv.values.resize(kChannelCount * bands.size() * per_band);
  for (auto ch : kAllChannels) {
    const Spectrum spec = epoch_spectrum(epoch, ch, cfg, max_bins);
    for (std::size_t b = 0; b < bands.size(); ++b) {
      const BandSlice slice = band_slice(spec, b, bands);
      for (std::size_t d = 0; d < per_band; ++d) {
        fv.values[feature_index(ch, b, d, profile, bands.size())] =
            descriptor(slice.magnitudes, slice.frequencies, static_cast<DescriptorId>(d));
      }
    }
  }
  for (double v : fv.values) require(std::isfinite(v), ErrorKind::InvalidFeature, "non-finite feature");
  return fv;
}

FeatureVector extract_features(const Epoch& epoch, const StftConfig& cfg, const BandSpec& bands) {
  return extract_profile(epoch, FeatureProfile::Core9, cfg, bands);
}

FeatureVector extract_extended(const Epoch& epoch, const StftConfig& cfg, const BandSpec& bands) {
  return extract_profile(epoch, FeatureProfile::Extended14, cfg, bands);
}

void write_feature_csv(std::ostream& out, std::span<const FeatureVector> rows, FeatureProfile profile) {
  out << "epoch_id,label";
  for (const auto& name : feature_names(profile)) out << ',' << name;
  out << '\n';
  char buf[64];
  for (const auto& row : rows) {
    out << row.epoch_id << ',' << class_code(row.label);
    for (double v : row.values) {
      const auto res = std::to_chars(buf, buf + sizeof(buf), v);
      out << ',' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
    }
    out << '\n';
  }
}

std::vector<FeatureVector> read_feature_csv(std::istream& in, FeatureProfile* profile_out) {
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::FormatError, "feature CSV is empty");
  std::size_t columns = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  require(columns >= 3, ErrorKind::FormatError, "feature CSV header has no feature columns");
  const std::size_t width = columns - 2;
  FeatureProfile profile;
  if (width == feature_names(FeatureProfile::Core9).size()) {
    profile = FeatureProfile::Core9;
  } else if (width == feature_names(FeatureProfile::Extended14).size()) {
    profile = FeatureProfile::Extended14;
  } else {
    fail(ErrorKind::FormatError, "feature CSV has " + std::to_string(width) + " feature columns");
  }
  if (profile_out) *profile_out = profile;

  std::vector<FeatureVector> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    FeatureVector fv;
    std::getline(ss, fv.epoch_id, ',');
    std::getline(ss, cell, ',');
    const auto label = parse_class(cell);
    require(label.has_value(), ErrorKind::FormatError, "unknown label '" + cell + "'");
    fv.label = *label;
    fv.values.reserve(width);
    while (std::getline(ss, cell, ',')) {
      double v = 0.0;
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      require(res.ec == std::errc{}, ErrorKind::FormatError, "bad number '" + cell + "'");
      fv.values.push_back(v);
    }
    require(fv.values.size() == width, ErrorKind::FormatError, "ragged feature CSV row");
    rows.push_back(std::move(fv));
  }
  return rows;
}

}  // namespace somno
