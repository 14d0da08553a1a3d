#pragma once

// Complex angular central Gaussian mixture over unit-norm observation vectors.
//
// Layouts used throughout:
//   spectrogram      (D, T, F) complex
//   observations     (T, F, D) complex, unit norm per (t, f)
//   affiliations     (K, T, F) real, sum over K equals 1
//   weights pi       (K, F) real
//   shape matrices B (K, F, D, D) complex Hermitian

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "beamlearn/autodiff.hpp"
#include "beamlearn/tensor.hpp"

namespace beamlearn::mixture {

struct MixtureParams {
  Tensor pi;
  Tensor B;

  std::size_t classes() const { return pi.dim(0); }
  std::size_t bins() const { return pi.dim(1); }
  std::size_t channels() const { return B.dim(2); }
};

/// Floor applied to mixture weights before taking logs in the auxiliary loss.
inline constexpr double kWeightFloor = 1e-10;

/// (D, T, F) spectrogram -> (T, F, D) unit vectors; all-zero vectors become
/// (1, ..., 1) / sqrt(D).
Tensor normalize(const Tensor& spec);

/// ln[(D-1)! / (2 pi^D det B)] - D ln(y^H B^-1 y) with B loaded as in the
/// Hermitian primitives. Throws NumericalError when the result is not finite.
double cacg_log_density(std::span<const cplx> y, std::span<const cplx> B, std::size_t D);

/// ln((D-1)!) - ln 2 - D ln pi.
double log_normalizer(std::size_t D);

struct MStepReport {
  /// (k, f) pairs whose affiliation mass was zero; their B is the identity.
  std::vector<std::pair<std::size_t, std::size_t>> empty;
};

/// pi = mean_t gamma; B re-estimated `iterations` times from B_init (identity
/// when absent) and rescaled to trace D after every application.
MixtureParams m_step(const Tensor& y, const Tensor& gamma, const Tensor* B_init = nullptr, int iterations = 1,
                     MStepReport* report = nullptr);

/// ln p(y_tf | B_kf), (K, T, F).
Tensor log_densities(const Tensor& y, const MixtureParams& params);

/// Posterior affiliations via log-sum-exp. Throws NumericalError naming
/// (t, f) when every class has zero probability.
Tensor e_step(const Tensor& y, const MixtureParams& params);

enum class Likelihood { ml, ml_equal, auxiliary };

/// ml: sum_tf ln sum_k pi p; ml_equal: pi replaced by 1/K;
/// auxiliary: sum_ktf g ln(max(pi, floor) p) with g = gamma_aux.
double log_likelihood(const Tensor& y, const MixtureParams& params, Likelihood variant,
                      const Tensor* gamma_aux = nullptr);

struct EmResult {
  MixtureParams params;
  Tensor gamma;
  /// ml log-likelihood of the parameters produced by each M-step.
  std::vector<double> trace;
};

/// Plain EM from the given affiliations, or random ones drawn with `seed`.
EmResult em_fit(const Tensor& y, std::size_t K, int iterations, const Tensor* init = nullptr, std::uint64_t seed = 0,
                int fixed_point_iterations = 1);

/// perm[f][k] is the source class that becomes class k at frequency f.
using PermutationMap = std::vector<std::vector<std::size_t>>;

struct Alignment {
  Tensor gamma;
  PermutationMap perm;
};

/// Greedy sweep from f = 0 upward against running class centroids of
/// zero-mean, unit-norm time profiles, followed by `refinement_passes`
/// re-alignments of every frequency against the centroid of all others.
Alignment permutation_align(const Tensor& gamma, int refinement_passes = 0);

/// out[k, t, f] = gamma[perm[f][k], t, f]; throws on a malformed map.
Tensor apply_permutation(const Tensor& gamma, const PermutationMap& perm);
void validate_permutation(const PermutationMap& perm, std::size_t K, std::size_t F);

/// Same computations recorded on a tape.
namespace graph {

struct Params {
  ad::Var pi;  // (K, F)
  ad::Var B;   // (K, F, D, D)
};

/// M-step from affiliations; `B_init` empty means identity.
Params m_step(ad::Var y, ad::Var gamma, std::optional<ad::Var> B_init = std::nullopt, int iterations = 1);
ad::Var log_densities(ad::Var y, ad::Var B);
ad::Var e_step(ad::Var y, const Params& p);
ad::Var log_likelihood(ad::Var y, const Params& p, Likelihood variant, std::optional<ad::Var> gamma_aux = std::nullopt);

// Variants reusing precomputed log densities (K, T, F). Mixture weights are
// floored at kWeightFloor before every log.
ad::Var posterior(ad::Var log_density, ad::Var pi);
ad::Var log_likelihood_from(ad::Var log_density, ad::Var pi, Likelihood variant,
                            std::optional<ad::Var> gamma_aux = std::nullopt);

}  // namespace graph

}  // namespace beamlearn::mixture
