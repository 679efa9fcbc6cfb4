#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "somno/classifier.hpp"
#include "somno/dsp.hpp"
#include "somno/eval.hpp"
#include "somno/features.hpp"

namespace somno {

struct SynthSpec {
  std::vector<DisorderClass> classes;  // empty = every data class
  std::size_t epochs = 100;            // per class
  std::uint64_t seed = 1;
  double snr_db = 6.0;
  std::array<bool, kChannelCount> signature_channels = {true, true, true, true, true, true};
};

// Everything a command needs; loaded from a JSON file, overridden by flags,
// and written back in resolved form next to the outputs.
struct RunConfig {
  std::vector<std::string> inputs;  // recording files, directories or manifest.json files
  std::optional<SynthSpec> synth;   // in-memory data when no inputs are given
  StftConfig stft{};
  FeatureProfile profile = FeatureProfile::Core9;
  ModelConfig model{};
  std::uint64_t split_seed = 1;
  SplitOptions split{};
  bool cross_validate = true;
  std::size_t cv_epochs = 0;
  std::string runs_root = "runs";
};

// Throws ConfigError on unknown keys, wrong types or invalid values.
RunConfig run_config_from_json(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string run_config_to_json(const RunConfig& cfg);  // canonical, pretty-printed
std::string config_hash(const RunConfig& cfg);         // 16 hex digits over the canonical JSON

// Reads recordings from files, directories (*.somn, sorted) or synth manifests.
std::vector<Epoch> load_epochs(const std::vector<std::string>& inputs);
// Synthesizes one recording per class in memory.
std::vector<Recording> synth_recordings(const SynthSpec& spec);

// Entry point of the somnoscope binary. Returns the process exit code:
// 0 success, 2 configuration or usage error, 3 data error, 4 internal error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace somno
