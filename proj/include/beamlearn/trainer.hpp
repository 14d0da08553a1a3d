#pragma once

// Unsupervised training: network masks -> one M-step -> one E-step ->
// mixture likelihood -> gradients -> Adam. Plus the two inference paths.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "beamlearn/io.hpp"
#include "beamlearn/masknet.hpp"
#include "beamlearn/mixture.hpp"
#include "beamlearn/stft.hpp"

namespace beamlearn::trainer {

/// ml_gamma0: ml on the M-step from the network affiliations.
/// ml_gamma: ml on a second M-step from the post-E-step affiliations.
/// ml_equal: ml with equal mixture weights.
/// aux_gamma0 / aux_gamma: auxiliary function weighted by gamma0 / gamma.
enum class LossVariant { ml_gamma0, ml_gamma, ml_equal, aux_gamma0, aux_gamma };

/// Accepts the names above and "ml" for ml_gamma0.
LossVariant parse_variant(const std::string& s);
std::string to_string(LossVariant v);
inline constexpr LossVariant kAllVariants[] = {LossVariant::ml_gamma0, LossVariant::ml_gamma, LossVariant::ml_equal,
                                               LossVariant::aux_gamma0, LossVariant::aux_gamma};

struct TrainConfig {
  LossVariant variant = LossVariant::ml_equal;
  masknet::MaskNetConfig net;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip = 5.0;  // global gradient norm; 0 disables
  double weight_decay = 0.0;
  std::size_t steps = 2000;
  std::size_t accumulate = 1;  // utterances per update
  std::size_t pa_interval = 100;  // 0 disables the weight permutation fix
  std::size_t pa_utterances = 2;
  std::uint64_t seed = 0;
  bool extra_em_step = true;  // inference default
  StftConfig stft;

  /// Keys: variant, activation, lr, beta1, beta2, adam_eps, clip,
  /// weight_decay, steps, accumulate, pa_interval, pa_utterances, seed,
  /// hidden, dense, extra_em_step. Unknown keys are rejected.
  static TrainConfig from(const io::Config& cfg);
  void validate() const;
};

struct StepResult {
  std::vector<Tensor> grads;  // in MaskNet::params order
  double loss = 0.0;          // -l / (T F)
  double log_likelihood = 0.0;  // raw l
  mixture::MixtureParams params;  // the (pi, B) the loss was evaluated with
  Tensor gamma0;              // pooled network affiliations (K, T, F)
  Tensor gamma;               // post-E-step affiliations (K, T, F)
  bool ok = true;
  std::string reason;
  std::vector<std::pair<std::size_t, std::size_t>> culprits;  // (t, f) with non-finite values
};

/// One utterance spectrogram (D, T, F), D >= 2.
StepResult training_step(const masknet::MaskNet& net, const Tensor& spec, LossVariant variant);

/// Gradient sum over several utterances; `loss` is their mean.
StepResult batch_step(const masknet::MaskNet& net, std::span<const Tensor> specs, LossVariant variant);

class Adam {
 public:
  Adam(const TrainConfig& cfg, const masknet::MaskNet& net);
  /// Applies clipped gradients; returns the pre-clip global norm.
  double update(masknet::MaskNet& net, std::vector<Tensor> grads);
  /// Keeps the moments of the output layer aligned with permuted weights.
  void permute_output(const masknet::MaskNet& net, const mixture::PermutationMap& perm);
  std::size_t steps() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_, clip_, decay_;
  std::vector<Tensor> m_, v_;
  std::size_t t_ = 0;
};

struct PermutationFix {
  std::size_t step = 0;
  std::size_t changed = 0;  // frequencies whose class order changed
};

struct TrainReport {
  std::vector<double> losses;  // normalized, one per update
  std::vector<double> log_likelihoods;  // raw sum, mean over the update's utterances
  std::vector<PermutationFix> permutation_fixes;
  std::size_t rejected = 0;
  double seconds = 0.0;
  bool aborted = false;
  std::string checkpoint;  // set by the caller that saves one

  /// Mean loss over the first / last `fraction` of updates.
  double smoothed_start(double fraction = 0.1) const;
  double smoothed_end(double fraction = 0.1) const;
};

/// Spectrogram of utterance i; called from the training thread only.
using UtteranceLoader = std::function<Tensor(std::size_t)>;
using ProgressFn = std::function<void(std::size_t step, double loss)>;

/// Trains `net` in place over `count` utterances (shuffled each epoch).
TrainReport train(masknet::MaskNet& net, std::size_t count, const UtteranceLoader& load, const TrainConfig& cfg,
                  const ProgressFn& progress = {});

/// Pooled (median by default) network affiliations, optionally refined by
/// one M-step (identity init) and one E-step.
Tensor infer_masks(const masknet::MaskNet& net, const Tensor& spec, bool extra_em_step,
                   masknet::Pooling pooling = masknet::Pooling::median);

nlohmann::json to_json(const TrainReport& r);

}  // namespace beamlearn::trainer
