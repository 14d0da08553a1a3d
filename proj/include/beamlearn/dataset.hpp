#pragma once

// JSON-lines manifests and batch scene synthesis.
//
// Manifest record: {"id": ..., "mixture": path | [paths], "speech": path,
// "noise": path}. Relative paths resolve against the manifest's directory;
// speech and noise are optional and only used for evaluation.

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "beamlearn/audio.hpp"
#include "beamlearn/io.hpp"
#include "beamlearn/scene.hpp"

namespace beamlearn::dataset {

struct Utterance {
  std::string id;
  std::vector<std::filesystem::path> mixture;
  std::optional<std::filesystem::path> speech;
  std::optional<std::filesystem::path> noise;

  bool has_components() const { return speech.has_value() && noise.has_value(); }
};

std::vector<Utterance> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<nlohmann::json>& records);

AudioClip load_mixture(const Utterance& u);

struct SynthConfig {
  std::size_t count = 0;
  scene::SceneSpec base;
  double snr_min = -5.0;
  double snr_max = 5.0;
  std::uint64_t seed = 0;
  std::string prefix = "scene";

  /// Keys: count, seed, prefix, snr_min, snr_max, channels, duration,
  /// sample_rate, propagation, t60, noise, plane_waves, spacing, direction_deg.
  static SynthConfig from(const io::Config& cfg);
};

/// Spec of scene i: its own seed and an SNR drawn uniformly from
/// [snr_min, snr_max], both derived from (seed, i) only.
scene::SceneSpec scene_spec(const SynthConfig& cfg, std::size_t index);
std::string scene_id(const SynthConfig& cfg, std::size_t index);

/// Writes every scene under out_dir and out_dir/manifest.jsonl; returns the
/// manifest path.
std::filesystem::path synthesize(const SynthConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace beamlearn::dataset
