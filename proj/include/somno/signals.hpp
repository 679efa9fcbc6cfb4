#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace somno {

enum class ChannelKind : std::uint8_t { EEG1 = 0, EEG2, EEG3, EMG, ECG, EOG };

inline constexpr std::size_t kChannelCount = 6;
inline constexpr std::array<ChannelKind, kChannelCount> kAllChannels = {
    ChannelKind::EEG1, ChannelKind::EEG2, ChannelKind::EEG3,
    ChannelKind::EMG,  ChannelKind::ECG,  ChannelKind::EOG};

std::string_view channel_name(ChannelKind kind);
std::optional<ChannelKind> parse_channel(std::string_view name);  // case-insensitive
inline std::size_t index_of(ChannelKind kind) { return static_cast<std::size_t>(kind); }

// Class indices are part of the on-disk format and must not be reordered.
// Index 8 is reserved for a ninth pattern that has no defined signature.
enum class DisorderClass : std::uint8_t { Bru = 0, Ins, Nar, Nfl, Plm, Rbd, Sbd, Nrm, Reserved };

inline constexpr std::size_t kClassCount = 9;
inline constexpr std::array<DisorderClass, 8> kDataClasses = {
    DisorderClass::Bru, DisorderClass::Ins, DisorderClass::Nar, DisorderClass::Nfl,
    DisorderClass::Plm, DisorderClass::Rbd, DisorderClass::Sbd, DisorderClass::Nrm};

std::string_view class_code(DisorderClass c);  // "bru", "ins", ..., "nrm", "rsv"
std::string_view class_label(DisorderClass c);  // "Bru", "Ins", ..., "Nrm", "Rsv"
std::optional<DisorderClass> parse_class(std::string_view code);  // case-insensitive
inline std::size_t index_of(DisorderClass c) { return static_cast<std::size_t>(c); }

inline constexpr std::uint32_t kDefaultSampleRate = 512;
inline constexpr std::uint32_t kEpochSeconds = 5;

using ChannelSamples = std::array<std::vector<float>, kChannelCount>;

struct Recording {
  std::string id;
  std::uint32_t sample_rate = kDefaultSampleRate;
  ChannelSamples channels;  // indexed by ChannelKind
  std::vector<DisorderClass> labels;  // one per whole epoch

  std::size_t length() const { return channels[0].size(); }
  std::size_t epoch_len() const { return std::size_t{kEpochSeconds} * sample_rate; }
  std::size_t whole_epochs() const { return length() / epoch_len(); }

  // Throws LengthMismatch / FormatError when the invariants do not hold.
  void validate() const;

  bool operator==(const Recording&) const = default;
};

struct Epoch {
  std::string recording_id;
  std::size_t index = 0;
  std::uint32_t sample_rate = kDefaultSampleRate;
  ChannelSamples samples;
  DisorderClass label = DisorderClass::Nrm;

  const std::vector<float>& channel(ChannelKind kind) const { return samples[index_of(kind)]; }
};

std::vector<Epoch> frame_epochs(const Recording& rec);

// SOMN container (little-endian):
//   "SOMN" | version u16 | sample_rate u32 | epoch_count u32 | epoch_count label bytes
//   | six blocks of { kind u8 | length u64 | length x float32 }
// An optional sidecar "<file>.json" holds {"id", "notes"}.
inline constexpr std::uint16_t kRecordingVersion = 1;

Recording load_recording(const std::filesystem::path& path);
void write_recording(const std::filesystem::path& path, const Recording& rec,
                     const std::string& notes = {});

// Frequency signature used by the generator. Ranges in Hz.
struct SpectralSignature {
  double range_lo = 0.0;
  double range_hi = 50.0;
  bool has_peak = false;
  double peak_lo = 0.0;
  double peak_hi = 0.0;
  double peak_anchor = 0.0;  // centre of the drawn peak frequency
};

SpectralSignature signature_of(DisorderClass c);

struct SynthConfig {
  double snr_db = 6.0;
  std::uint32_t sample_rate = kDefaultSampleRate;
  // Channels that carry the class signature; the rest get class-independent
  // 0-50 Hz background noise of the same total power.
  std::array<bool, kChannelCount> signature_channels = {true, true, true, true, true, true};
  double peak_jitter_hz = 0.5;
  double amplitude = 1.0;
  double amplitude_spread = 0.2;  // per-epoch gain drawn from 1 +- spread
};

Recording synth_recording(DisorderClass c, std::size_t epochs, std::uint64_t seed,
                          const SynthConfig& cfg = {});

}  // namespace somno
