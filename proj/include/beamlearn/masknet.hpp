#pragma once

// Channel-independent mask estimator: per-channel log-power features ->
// bidirectional LSTM -> two ReLU layers -> K * F outputs (column k * F + f)
// -> softmax over classes or independent sigmoids.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "beamlearn/autodiff.hpp"
#include "beamlearn/mixture.hpp"
#include "beamlearn/tensor.hpp"

namespace beamlearn::masknet {

enum class Activation { softmax, sigmoid };
enum class Pooling { mean, median };

Activation parse_activation(const std::string& s);
std::string to_string(Activation a);
Pooling parse_pooling(const std::string& s);

struct MaskNetConfig {
  std::size_t bins = 257;
  std::size_t hidden = 64;
  std::size_t dense = 128;
  std::size_t classes = 2;
  Activation activation = Activation::softmax;
  std::uint64_t seed = 0;
};

/// Floor inside the sigmoid renormalization s_k / (sum_k s_k + eps).
inline constexpr double kRenormEps = 1e-10;
/// Offset inside ln(|y|^2 + offset).
inline constexpr double kPowerFloor = 1e-10;

struct MaskNet {
  MaskNetConfig config;
  std::vector<std::string> names;
  std::vector<Tensor> params;

  /// Uniform +-1/sqrt(fan_in) initialization from config.seed.
  static MaskNet init(const MaskNetConfig& cfg);

  Tensor& param(const std::string& name);
  const Tensor& param(const std::string& name) const;
  std::size_t index(const std::string& name) const;
  std::size_t parameter_count() const;
};

/// (D, T, F) spectrogram -> (T, D, F) features ln(|y|^2 + 1e-10), shifted and
/// scaled to zero mean and unit variance per channel over the utterance.
Tensor features(const Tensor& spec);

/// Registers every parameter on the tape, in MaskNet::params order.
std::vector<ad::Var> attach(ad::Tape& tape, const MaskNet& net);

/// Per-channel masks (D, K, T, F) recorded on the tape.
ad::Var forward(const MaskNet& net, std::span<const ad::Var> params, const Tensor& spec);
/// Same values without gradients.
Tensor forward(const MaskNet& net, const Tensor& spec);

/// Elementwise mean or median over channels of (D, K, T, F) -> (K, T, F).
/// Median of an even count averages the middle two; in softmax mode the
/// median result is rescaled to sum to one over classes.
Tensor pool(const Tensor& per_channel, Pooling mode, Activation activation);
/// Affiliations for the mixture: sigmoid outputs are renormalized over
/// classes, softmax outputs pass through.
Tensor to_affiliations(const Tensor& pooled, Activation activation);

/// Mean pooling followed by to_affiliations, on the tape.
ad::Var pooled_affiliations(ad::Var per_channel, Activation activation);

/// Reorders output columns so that forward(after) at class k, frequency f
/// equals forward(before) at class perm[f][k].
void permute_output_weights(MaskNet& net, const mixture::PermutationMap& perm);
/// The same column reordering for any (in, K * F) matrix and (K * F) bias,
/// e.g. optimizer moments of the output layer.
void permute_output_columns(Tensor& W, Tensor& b, const mixture::PermutationMap& perm);

/// Checkpoint directory: manifest.json plus one BTF1 file per parameter.
void save_checkpoint(const std::filesystem::path& dir, const MaskNet& net);
MaskNet load_checkpoint(const std::filesystem::path& dir);

}  // namespace beamlearn::masknet
