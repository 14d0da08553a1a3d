#pragma once

// Synthetic multichannel scenes y = x + n with the speech image x and the
// noise n kept separately, plus SNR bookkeeping for beamformer outputs.

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <random>
#include <string>
#include <vector>

#include "beamlearn/audio.hpp"
#include "beamlearn/tensor.hpp"

namespace beamlearn::scene {

enum class SourceModel { modulated, wav };
enum class Propagation { anechoic, rir };
// white: independent per channel. diffuse: isotropic plane waves with the
// speech surrogate's low-pass spectrum.
enum class NoiseModel { white, diffuse };

struct SceneSpec {
  std::size_t channels = 6;
  double duration = 3.0;  // seconds; ignored for wav sources
  int sample_rate = 16000;
  SourceModel source = SourceModel::modulated;
  std::string source_wav;
  Propagation propagation = Propagation::anechoic;
  double t60 = 0.3;  // seconds, rir mode
  NoiseModel noise = NoiseModel::diffuse;
  std::size_t plane_waves = 64;
  double snr_db = 0.0;
  double spacing = 0.04;  // metres, uniform linear array
  /// Angle to the array axis in degrees; NaN draws one in [30, 150] from the seed.
  double direction_deg = std::numeric_limits<double>::quiet_NaN();
  double sound_speed = 343.0;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const SceneSpec& spec);
SceneSpec spec_from_json(const nlohmann::json& j);

struct SceneBundle {
  SceneSpec spec;
  double direction_deg = 0.0;
  AudioClip mixture;
  AudioClip speech;
  AudioClip noise;
  /// (T, F) binary, 1 where |X|^2 > |N|^2 on channel 0 (default STFT).
  Tensor oracle_mask;
};

/// Deterministic in spec.seed. Samples of x and n are float32-representable
/// and mixture = x + n holds exactly in both float32 and float64.
SceneBundle synth_scene(const SceneSpec& spec);

/// Circular delay by a fractional number of samples, applied as a linear
/// phase e^{-j w delay} on the DFT of the whole signal.
std::vector<double> delay_signal(std::span<const double> x, double delay_samples);
/// Linear convolution truncated to x.size() samples.
std::vector<double> convolve(std::span<const double> x, std::span<const double> h);

/// Relative arrival time (seconds) at microphone d: d * spacing * cos(theta) / c.
double steering_delay(std::size_t d, double direction_deg, double spacing, double sound_speed);

/// Unit-RMS, spectrally tilted noise bursts with a syllable-rate envelope
/// and silent gaps.
std::vector<double> speech_surrogate(std::size_t n, int sample_rate, std::mt19937_64& rng);

/// (D, T, F) component spectrograms -> (T, F) mask |X_0|^2 > |N_0|^2.
Tensor oracle_mask(const Tensor& X, const Tensor& N);
/// (T, F) binary mask -> (2, T, F) affiliations, speech first.
Tensor mask_to_affiliations(const Tensor& mask);

struct SnrReport {
  std::vector<double> input_db;  // per channel
  double output_db = 0.0;
  double gain_db = 0.0;       // against channel 0
  double gain_best_db = 0.0;  // against the best input channel
};

/// Input SNRs sum_tf |X_d|^2 / sum_tf |N_d|^2 and the output SNR of the
/// beamformer w (F, D) applied to each component separately.
SnrReport snr_metrics(const Tensor& X, const Tensor& N, const Tensor& w);
nlohmann::json to_json(const SnrReport& r);

/// Writes mixture/speech/noise WAVs (float32) and a scene.json sidecar under
/// root / id, and returns the manifest record with paths relative to root.
nlohmann::json write_scene(const std::filesystem::path& root, const std::string& id, const SceneBundle& bundle);

}  // namespace beamlearn::scene
