#pragma once

#include <span>
#include <vector>

#include "beamlearn/audio.hpp"
#include "beamlearn/tensor.hpp"

namespace beamlearn {

struct StftConfig {
  std::size_t fft_size = 512;
  std::size_t window_size = 400;
  std::size_t shift = 160;

  /// Throws std::invalid_argument unless 0 < shift <= window_size <= fft_size.
  void validate() const;
  std::size_t bins() const { return fft_size / 2 + 1; }
  /// 1 + floor((length - window) / shift); throws when length < window.
  std::size_t frames(std::size_t length) const;
};

/// Periodic Hann window of window_size samples.
std::vector<double> analysis_window(const StftConfig& cfg);
/// Synthesis window g with sum_m w(n + m shift) g(n + m shift) = 1.
std::vector<double> synthesis_window(const StftConfig& cfg);

/// Single channel -> complex (T, F). The window is centred in the FFT buffer
/// with symmetric zero padding.
Tensor stft(std::span<const double> signal, const StftConfig& cfg);
/// All channels -> complex (D, T, F).
Tensor stft(const AudioClip& clip, const StftConfig& cfg);

/// (T, F) -> (T - 1) * shift + window_size samples by weighted overlap-add.
std::vector<double> istft(const Tensor& spec, const StftConfig& cfg);
/// (D, T, F) -> clip, or a (T, F) spectrogram -> mono clip.
AudioClip istft_clip(const Tensor& spec, const StftConfig& cfg, int sample_rate);

/// Unnormalized real DFT, n / 2 + 1 bins.
std::vector<cplx> rfft(std::span<const double> x);
/// Inverse of rfft for a length-n signal (includes the 1 / n factor).
std::vector<double> irfft(std::span<const cplx> bins, std::size_t n);

}  // namespace beamlearn
