#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "beamlearn/audio.hpp"
#include "beamlearn/stft.hpp"
#include "doctest.h"

using namespace beamlearn;

namespace {

std::vector<double> white_noise(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> x(n);
  for (auto& v : x) v = g(rng);
  return x;
}

// Naive DFT of one windowed, zero-padded frame.
std::vector<cplx> naive_frame(const std::vector<double>& x, std::size_t start, const StftConfig& cfg) {
  const auto w = analysis_window(cfg);
  const std::size_t N = cfg.fft_size, off = (N - cfg.window_size) / 2;
  std::vector<double> buf(N, 0.0);
  for (std::size_t n = 0; n < cfg.window_size; ++n) buf[off + n] = x[start + n] * w[n];
  std::vector<cplx> X(cfg.bins());
  for (std::size_t k = 0; k < X.size(); ++k)
    for (std::size_t n = 0; n < N; ++n) X[k] += buf[n] * std::polar(1.0, -2.0 * std::numbers::pi * k * n / N);
  return X;
}

}  // namespace

TEST_CASE("frame and bin counts") {
  StftConfig cfg;
  CHECK(cfg.bins() == 257);
  CHECK(cfg.frames(400) == 1);
  CHECK(cfg.frames(559) == 1);
  CHECK(cfg.frames(560) == 2);
  CHECK(cfg.frames(48000) == 1 + (48000 - 400) / 160);
  std::vector<double> short_clip(399, 0.0);
  CHECK_THROWS_AS(stft(short_clip, cfg), std::invalid_argument);
  CHECK_THROWS_AS((StftConfig{256, 400, 160}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((StftConfig{512, 400, 0}.validate()), std::invalid_argument);
}

TEST_CASE("zero signal gives zero spectrogram and back") {
  StftConfig cfg;
  std::vector<double> z(4000, 0.0);
  auto S = stft(z, cfg);
  for (auto v : S.complex_data()) CHECK(v == cplx{});
  for (double v : istft(S, cfg)) CHECK(v == 0.0);
}

TEST_CASE("matches a naive DFT") {
  StftConfig cfg;
  auto x = white_noise(2000, 3);
  auto S = stft(x, cfg);
  const std::size_t F = cfg.bins();
  for (std::size_t t : {0u, 3u, 9u}) {
    auto ref = naive_frame(x, t * cfg.shift, cfg);
    double err = 0.0, norm = 0.0;
    for (std::size_t k = 0; k < F; ++k) {
      err += std::norm(S.complex_data()[t * F + k] - ref[k]);
      norm += std::norm(ref[k]);
    }
    CHECK(std::sqrt(err / norm) < 1e-12);
  }
}

TEST_CASE("1 kHz tone peaks at bin 32") {
  StftConfig cfg;
  std::vector<double> x(16000);
  for (std::size_t n = 0; n < x.size(); ++n) x[n] = std::sin(2.0 * std::numbers::pi * 1000.0 * n / 16000.0);
  auto S = stft(x, cfg);
  const std::size_t T = S.dim(0), F = S.dim(1);
  std::vector<double> energy(F, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t f = 0; f < F; ++f) energy[f] += std::norm(S.complex_data()[t * F + f]);
  CHECK(std::max_element(energy.begin(), energy.end()) - energy.begin() == 32);
}

TEST_CASE("round trip below -60 dB in the interior") {
  StftConfig cfg;
  for (unsigned seed : {1u, 2u, 3u}) {
    auto x = white_noise(16000, seed);
    auto y = istft(stft(x, cfg), cfg);
    const std::size_t edge = cfg.window_size / 2;
    double err = 0.0, ref = 0.0;
    for (std::size_t n = edge; n + edge < y.size(); ++n) {
      err += (y[n] - x[n]) * (y[n] - x[n]);
      ref += x[n] * x[n];
    }
    CHECK(10.0 * std::log10(err / ref) < -60.0);
  }
}

TEST_CASE("Parseval per frame") {
  StftConfig cfg;
  auto x = white_noise(3000, 9);
  auto S = stft(x, cfg);
  const auto w = analysis_window(cfg);
  const std::size_t F = cfg.bins(), N = cfg.fft_size;
  for (std::size_t t = 0; t < S.dim(0); ++t) {
    double time = 0.0;
    for (std::size_t n = 0; n < cfg.window_size; ++n) time += std::pow(x[t * cfg.shift + n] * w[n], 2);
    double freq = 0.0;
    for (std::size_t k = 0; k < F; ++k)
      freq += (k == 0 || k == F - 1 ? 1.0 : 2.0) * std::norm(S.complex_data()[t * F + k]);
    freq /= static_cast<double>(N);
    CHECK(std::abs(freq - time) <= 0.01 * time);
  }
}

TEST_CASE("single frame gives the doubly windowed frame") {
  StftConfig cfg;
  auto x = white_noise(cfg.window_size, 4);
  auto y = istft(stft(x, cfg), cfg);
  REQUIRE(y.size() == cfg.window_size);
  const auto w = analysis_window(cfg);
  const auto g = synthesis_window(cfg);
  for (std::size_t n = 0; n < y.size(); ++n) CHECK(y[n] == doctest::Approx(x[n] * w[n] * g[n]).epsilon(1e-9));
}

TEST_CASE("istft rejects mismatched bins") {
  StftConfig cfg;
  Tensor bad(DType::complex128, {3, 100});
  CHECK_THROWS_AS(istft(bad, cfg), ShapeError);
}

TEST_CASE("multichannel stft and output length") {
  StftConfig cfg;
  AudioClip clip;
  clip.channels = {white_noise(5000, 1), white_noise(5000, 2), white_noise(5000, 3)};
  auto S = stft(clip, cfg);
  CHECK(S.shape() == Shape{3, cfg.frames(5000), 257});
  auto back = istft_clip(S, cfg, 16000);
  CHECK(back.channel_count() == 3);
  CHECK(back.length() <= 5000);
  CHECK(5000 - back.length() < cfg.shift);
}

TEST_CASE("wav round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "beamlearn_test_wav";
  std::filesystem::create_directories(dir);
  AudioClip clip;
  clip.sample_rate = 16000;
  clip.channels = {{0.0, 0.5, -0.5, 0.25}, {1.0, -1.0, 0.125, 0.0}};
  write_wav(dir / "f.wav", clip, SampleFormat::float32);
  auto f = read_wav(dir / "f.wav");
  CHECK(f.sample_rate == 16000);
  REQUIRE(f.channel_count() == 2);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t n = 0; n < 4; ++n) CHECK(f.channels[c][n] == clip.channels[c][n]);

  write_wav(dir / "p.wav", clip, SampleFormat::pcm16);
  auto p = read_wav(dir / "p.wav");
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t n = 0; n < 4; ++n) CHECK(std::abs(p.channels[c][n] - clip.channels[c][n]) <= 1.0 / 32768.0);

  AudioClip mono;
  mono.channels = {clip.channels[1]};
  write_wav(dir / "m0.wav", AudioClip{16000, {clip.channels[0]}});
  write_wav(dir / "m1.wav", mono);
  std::vector<std::filesystem::path> set{dir / "m0.wav", dir / "m1.wav"};
  auto s = read_wav_set(set);
  CHECK(s.channel_count() == 2);
  CHECK(s.channels[1][2] == 0.125);
  CHECK_THROWS(read_wav(dir / "missing.wav"));
  std::filesystem::remove_all(dir);
}
