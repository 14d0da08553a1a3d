#pragma once

// Mask -> GEV -> SNR scoring over manifests, shared by the CLI and the
// acceptance runs. Also the plain cACGMM mask path used as a baseline.

#include <functional>
#include <json.hpp>
#include <string>
#include <vector>

#include "beamlearn/beamformer.hpp"
#include "beamlearn/dataset.hpp"
#include "beamlearn/scene.hpp"
#include "beamlearn/stft.hpp"

namespace beamlearn::evaluate {

struct EmOptions {
  std::size_t classes = 2;
  int iterations = 50;
  bool align = true;  // permutation alignment of the final posteriors
  std::uint64_t seed = 0;
};

struct EmMasks {
  Tensor gamma;  // (K, T, F)
  std::vector<double> trace;
};

/// Plain cACGMM on a (D, T, F) spectrogram from random affiliations.
EmMasks em_masks(const Tensor& spec, const EmOptions& opt);

using MaskFn = std::function<Tensor(const Tensor& spec)>;

struct Score {
  std::string id;
  scene::SnrReport snr;
  std::size_t speech_class = 0;
};

/// Mixture, speech and noise spectrograms of an utterance with components.
struct Components {
  Tensor mixture, speech, noise;  // (D, T, F)
};
Components load_components(const dataset::Utterance& u, const StftConfig& cfg);

/// Masks from `masks`, GEV weights, then SNR of the beamformed components.
Score score(const dataset::Utterance& u, const MaskFn& masks, const StftConfig& cfg);
/// Same with given beamformer weights (F, D).
Score score_weights(const dataset::Utterance& u, const Tensor& weights, const StftConfig& cfg);

struct Summary {
  std::size_t count = 0;
  double mean_input_db = 0.0;  // channel 0
  double mean_output_db = 0.0;
  double mean_gain_db = 0.0;
  double mean_gain_best_db = 0.0;
};

Summary summarize(const std::vector<Score>& scores);
nlohmann::json to_json(const std::vector<Score>& scores, const Summary& s);
/// Fixed-width text table with one row per utterance and a mean row.
std::string table(const std::vector<Score>& scores, const Summary& s);

}  // namespace beamlearn::evaluate
