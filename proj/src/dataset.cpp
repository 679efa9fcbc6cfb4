#include "somno/dataset.hpp"

#include <numeric>

#include "somno/error.hpp"
#include "somno/parallel.hpp"

namespace somno {

std::vector<std::size_t> Dataset::all_indices() const {
  std::vector<std::size_t> idx(size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

std::array<std::size_t, kClassCount> Dataset::class_counts(std::span<const std::size_t> indices) const {
  std::array<std::size_t, kClassCount> counts{};
  for (std::size_t i : indices) ++counts[index_of(samples.at(i).label)];
  return counts;
}

ChannelImages spectrogram_images(const Epoch& epoch, const StftConfig& cfg) {
  ChannelImages out;
  const auto set = spectrograms_of(epoch, cfg);
  for (std::size_t c = 0; c < kChannelCount; ++c) out[c] = set[c].values;
  return out;
}

ChannelImages spectrum_images(const Epoch& epoch, const StftConfig& cfg, std::size_t bins) {
  require(bins >= 1 && bins <= cfg.nfft / 2 + 1, ErrorKind::ConfigError, "spectrum bin count out of range");
  ChannelImages out;
  for (auto ch : kAllChannels) {
    const Spectrum s = epoch_spectrum(epoch, ch, cfg, bins);
    out[index_of(ch)] = Matrix(1, bins);
    std::copy(s.bins.begin(), s.bins.end(), out[index_of(ch)].data.begin());
  }
  return out;
}

Dataset build_dataset(std::span<const Epoch> epochs, const DatasetOptions& options) {
  Dataset ds;
  ds.profile = options.profile;
  ds.stft = options.stft;
  ds.samples.resize(epochs.size());
  if (options.spectrograms) ds.spectrograms.resize(epochs.size());
  if (options.spectra) ds.spectra.resize(epochs.size());
  if (options.features) ds.features.resize(epochs.size());
  parallel_for(epochs.size(), [&](std::size_t i) {
    const Epoch& ep = epochs[i];
    ds.samples[i] = {epoch_key(ep.recording_id, ep.index), ep.recording_id, ep.label};
    if (options.spectrograms) ds.spectrograms[i] = spectrogram_images(ep, options.stft);
    if (options.spectra) ds.spectra[i] = spectrum_images(ep, options.stft, options.spectrum_bins);
    if (options.features) ds.features[i] = extract_profile(ep, options.profile, options.stft).values;
  });
  return ds;
}

}  // namespace somno
