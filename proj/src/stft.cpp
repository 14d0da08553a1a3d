#include "beamlearn/stft.hpp"

#include <fftw3.h>

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <string>

#include "beamlearn/parallel.hpp"

namespace beamlearn {

namespace {

// FFTW plans are created once per size; only execution is thread-safe, so
// planning is serialized.
struct Plans {
  fftw_plan forward = nullptr;
  fftw_plan inverse = nullptr;
};

const Plans& plans_for(std::size_t n) {
  static std::mutex mutex;
  static std::map<std::size_t, Plans> cache;
  std::lock_guard lock(mutex);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  std::vector<double> r(n);
  fftw_complex* c = fftw_alloc_complex(n / 2 + 1);
  const int len = static_cast<int>(n);
  Plans p;
  p.forward = fftw_plan_dft_r2c_1d(len, r.data(), c, FFTW_ESTIMATE | FFTW_UNALIGNED);
  p.inverse = fftw_plan_dft_c2r_1d(len, c, r.data(), FFTW_ESTIMATE | FFTW_UNALIGNED | FFTW_DESTROY_INPUT);
  fftw_free(c);
  if (!p.forward || !p.inverse) throw std::runtime_error("FFTW planning failed for size " + std::to_string(n));
  return cache.emplace(n, p).first->second;
}

}  // namespace

void StftConfig::validate() const {
  if (shift == 0 || shift > window_size || window_size > fft_size)
    throw std::invalid_argument("stft config: need 0 < shift <= window <= fft (got shift " + std::to_string(shift) +
                                ", window " + std::to_string(window_size) + ", fft " + std::to_string(fft_size) + ")");
}

std::size_t StftConfig::frames(std::size_t length) const {
  if (length < window_size)
    throw std::invalid_argument("stft: signal of " + std::to_string(length) + " samples is shorter than one window (" +
                                std::to_string(window_size) + ")");
  return 1 + (length - window_size) / shift;
}

std::vector<double> analysis_window(const StftConfig& cfg) {
  std::vector<double> w(cfg.window_size);
  const double n = static_cast<double>(cfg.window_size);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  return w;
}

std::vector<double> synthesis_window(const StftConfig& cfg) {
  cfg.validate();
  const auto w = analysis_window(cfg);
  const std::size_t N = cfg.window_size, H = cfg.shift;
  std::vector<double> g(N, 0.0);
  for (std::size_t n = 0; n < N; ++n) {
    double denom = 0.0;
    for (std::size_t m = n % H; m < N; m += H) denom += w[m] * w[m];
    g[n] = denom > 0.0 ? w[n] / denom : 0.0;
  }
  return g;
}

Tensor stft(std::span<const double> signal, const StftConfig& cfg) {
  cfg.validate();
  const std::size_t T = cfg.frames(signal.size());
  const std::size_t F = cfg.bins(), N = cfg.fft_size, W = cfg.window_size;
  const std::size_t offset = (N - W) / 2;
  const auto win = analysis_window(cfg);
  const Plans& plans = plans_for(N);

  Tensor out(DType::complex128, {T, F});
  auto o = out.complex_data();
  std::vector<double> buf(N, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    const double* x = signal.data() + t * cfg.shift;
    for (std::size_t n = 0; n < W; ++n) buf[offset + n] = x[n] * win[n];
    fftw_execute_dft_r2c(plans.forward, buf.data(), reinterpret_cast<fftw_complex*>(o.data() + t * F));
  }
  return out;
}

Tensor stft(const AudioClip& clip, const StftConfig& cfg) {
  clip.validate();
  if (clip.channel_count() == 0) throw std::invalid_argument("stft: clip has no channels");
  const std::size_t D = clip.channel_count();
  std::vector<Tensor> per(D);
  parallel_for(D, [&](std::size_t d) { per[d] = stft(clip.channels[d], cfg); });
  const std::size_t T = per[0].dim(0), F = per[0].dim(1);
  Tensor out(DType::complex128, {D, T, F});
  auto o = out.complex_data();
  for (std::size_t d = 0; d < D; ++d) {
    auto src = per[d].complex_data();
    std::copy(src.begin(), src.end(), o.begin() + static_cast<std::ptrdiff_t>(d * T * F));
  }
  return out;
}

std::vector<double> istft(const Tensor& spec, const StftConfig& cfg) {
  cfg.validate();
  require_dtype(spec, DType::complex128, "istft input");
  require_rank(spec, 2, "istft input");
  const std::size_t T = spec.dim(0), F = spec.dim(1), N = cfg.fft_size, W = cfg.window_size;
  if (F != cfg.bins())
    throw ShapeError("istft: " + std::to_string(F) + " bins do not match fft size " + std::to_string(N));
  if (T == 0) return {};
  const std::size_t offset = (N - W) / 2;
  const auto g = synthesis_window(cfg);
  const Plans& plans = plans_for(N);

  std::vector<double> out((T - 1) * cfg.shift + W, 0.0);
  std::vector<cplx> bins(F);
  std::vector<double> frame(N);
  auto s = spec.complex_data();
  for (std::size_t t = 0; t < T; ++t) {
    std::copy(s.begin() + static_cast<std::ptrdiff_t>(t * F), s.begin() + static_cast<std::ptrdiff_t>((t + 1) * F),
              bins.begin());
    fftw_execute_dft_c2r(plans.inverse, reinterpret_cast<fftw_complex*>(bins.data()), frame.data());
    double* y = out.data() + t * cfg.shift;
    for (std::size_t n = 0; n < W; ++n) y[n] += frame[offset + n] / static_cast<double>(N) * g[n];
  }
  return out;
}

AudioClip istft_clip(const Tensor& spec, const StftConfig& cfg, int sample_rate) {
  AudioClip clip;
  clip.sample_rate = sample_rate;
  if (spec.rank() == 2) {
    clip.channels.push_back(istft(spec, cfg));
    return clip;
  }
  require_rank(spec, 3, "istft input");
  const std::size_t D = spec.dim(0), T = spec.dim(1), F = spec.dim(2);
  clip.channels.resize(D);
  auto s = spec.complex_data();
  parallel_for(D, [&](std::size_t d) {
    std::vector<cplx> v(s.begin() + static_cast<std::ptrdiff_t>(d * T * F),
                        s.begin() + static_cast<std::ptrdiff_t>((d + 1) * T * F));
    clip.channels[d] = istft(Tensor::complex({T, F}, std::move(v)), cfg);
  });
  return clip;
}

std::vector<cplx> rfft(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n == 0) return {};
  const Plans& plans = plans_for(n);
  std::vector<double> buf(x.begin(), x.end());
  std::vector<cplx> out(n / 2 + 1);
  fftw_execute_dft_r2c(plans.forward, buf.data(), reinterpret_cast<fftw_complex*>(out.data()));
  return out;
}

std::vector<double> irfft(std::span<const cplx> bins, std::size_t n) {
  if (bins.size() != n / 2 + 1)
    throw std::invalid_argument("irfft: " + std::to_string(bins.size()) + " bins do not match length " +
                                std::to_string(n));
  if (n == 0) return {};
  const Plans& plans = plans_for(n);
  std::vector<cplx> tmp(bins.begin(), bins.end());
  std::vector<double> out(n);
  fftw_execute_dft_c2r(plans.inverse, reinterpret_cast<fftw_complex*>(tmp.data()), out.data());
  const double s = 1.0 / static_cast<double>(n);
  for (auto& v : out) v *= s;
  return out;
}

}  // namespace beamlearn
