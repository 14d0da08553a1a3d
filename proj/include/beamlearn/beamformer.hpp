#pragma once

// Mask-driven spatial covariance estimation and max-SNR (GEV) beamforming.
//
//   spectrogram  (D, T, F) complex
//   masks        (K, T, F) or (T, F) real
//   covariances  (F, D, D) complex Hermitian
//   weights      (F, D) complex

#include <cstddef>
#include <vector>

#include "beamlearn/tensor.hpp"

namespace beamlearn::beamformer {

struct CovariancePair {
  Tensor xx;
  Tensor nn;
};

struct BeamformerWeights {
  Tensor w;
  std::vector<double> lambda;
};

/// Sum_t m y y^H / Sum_t m per frequency. Frequencies with zero mask mass get
/// the identity and are appended to `empty` when given.
Tensor estimate_covariance(const Tensor& spec, const Tensor& mask, std::vector<std::size_t>* empty = nullptr);

struct CovarianceReport {
  std::vector<std::size_t> empty_speech;
  std::vector<std::size_t> empty_noise;
};

CovariancePair estimate_covariances(const Tensor& spec, const Tensor& masks, std::size_t speech = 0,
                                    std::size_t noise = 1, CovarianceReport* report = nullptr);

/// Phi / tr(Phi) per frequency; throws NumericalError on a nonpositive trace.
Tensor normalize_noise_covariance(const Tensor& phi_nn);

/// Principal generalized eigenvector of (Phi_xx, Phi_nn / tr Phi_nn) through
/// Cholesky whitening and the Jacobi solver. The whitened eigenvector has unit
/// norm; w is rotated so its largest-magnitude entry is real and positive.
BeamformerWeights gev_weights(const CovariancePair& cov);

/// x_tf = w_f^H y_tf, (T, F).
Tensor apply_beamformer(const Tensor& spec, const Tensor& w);

/// Index of the class whose covariance is most directional: the largest mean
/// over frequencies of lambda_max(Phi_k) / tr(Phi_k).
std::size_t select_speech_class(const Tensor& spec, const Tensor& masks);

struct Enhancement {
  BeamformerWeights weights;
  Tensor output;  // (T, F)
  std::size_t speech_class = 0;
};

/// Covariances from the masks, GEV weights and the beamformed spectrogram.
/// `speech_class` < 0 picks the class with select_speech_class (K = 2 only).
Enhancement enhance(const Tensor& spec, const Tensor& masks, int speech_class = -1);

}  // namespace beamlearn::beamformer
