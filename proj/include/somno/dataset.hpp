#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "somno/dsp.hpp"
#include "somno/features.hpp"
#include "somno/matrix.hpp"
#include "somno/signals.hpp"

namespace somno {

// One matrix per channel, indexed by ChannelKind: 21x70 spectrograms for the
// DL-R path, 1xB spectra for the DL-F path.
using ChannelImages = std::array<Matrix, kChannelCount>;

struct Sample {
  std::string epoch_id;  // "<recording>:<index>"
  std::string group;     // recording id, used for subject-wise splits
  DisorderClass label = DisorderClass::Nrm;
};

struct DatasetOptions {
  bool spectrograms = false;
  bool spectra = false;
  bool features = false;
  FeatureProfile profile = FeatureProfile::Core9;
  StftConfig stft{};
  std::size_t spectrum_bins = 2000;  // first bins of the full-epoch spectrum (0-125 Hz)
};

// Precomputed model inputs for a set of epochs; only the requested
// representations are filled.
struct Dataset {
  std::vector<Sample> samples;
  std::vector<ChannelImages> spectrograms;
  std::vector<ChannelImages> spectra;
  std::vector<std::vector<double>> features;
  FeatureProfile profile = FeatureProfile::Core9;
  StftConfig stft{};

  std::size_t size() const { return samples.size(); }
  std::vector<std::size_t> all_indices() const;
  std::array<std::size_t, kClassCount> class_counts(std::span<const std::size_t> indices) const;
};

Dataset build_dataset(std::span<const Epoch> epochs, const DatasetOptions& options);

// Spectrum input for the DL-F path: first `bins` one-sided magnitudes.
ChannelImages spectrum_images(const Epoch& epoch, const StftConfig& cfg, std::size_t bins);

ChannelImages spectrogram_images(const Epoch& epoch, const StftConfig& cfg);

}  // namespace somno
