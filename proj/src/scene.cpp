#include "beamlearn/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "beamlearn/stft.hpp"

namespace beamlearn::scene {

namespace {

const char* name(SourceModel s) { return s == SourceModel::modulated ? "modulated" : "wav"; }
const char* name(Propagation p) { return p == Propagation::anechoic ? "anechoic" : "rir"; }
const char* name(NoiseModel n) { return n == NoiseModel::white ? "white" : "diffuse"; }

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Complex Gaussian spectrum of a real white signal of length n.
std::vector<cplx> white_spectrum(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<cplx> s(n / 2 + 1);
  for (auto& v : s) v = cplx(g(rng), g(rng));
  s[0] = s[0].real();
  if (n % 2 == 0) s.back() = s.back().real();
  return s;
}

void apply_delay(std::vector<cplx>& bins, std::size_t n, double delay) {
  for (std::size_t k = 0; k < bins.size(); ++k)
    bins[k] *= std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k) * delay / static_cast<double>(n));
}

double energy(std::span<const double> x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

// Rounds x and n to float and makes x + n exact: whichever component is
// larger in magnitude absorbs the rounding of the sum.
void make_exact_sum(std::vector<double>& x, std::vector<double>& n, std::vector<double>& y) {
  y.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    float xf = static_cast<float>(x[i]);
    float nf = static_cast<float>(n[i]);
    const float yf = xf + nf;
    if (std::abs(xf) >= std::abs(nf))
      nf = yf - xf;
    else
      xf = yf - nf;
    x[i] = xf;
    n[i] = nf;
    y[i] = yf;
  }
}

AudioClip clip(int sr, std::vector<std::vector<double>> ch) {
  AudioClip c;
  c.sample_rate = sr;
  c.channels = std::move(ch);
  return c;
}

}  // namespace

void SceneSpec::validate() const {
  if (channels < 2) throw std::invalid_argument("scene: at least 2 channels are needed");
  if (sample_rate <= 0) throw std::invalid_argument("scene: sample rate must be positive");
  if (source == SourceModel::modulated && !(duration > 0.0)) throw std::invalid_argument("scene: duration must be positive");
  if (source == SourceModel::wav && source_wav.empty()) throw std::invalid_argument("scene: wav source needs a path");
  if (!std::isfinite(snr_db)) throw std::invalid_argument("scene: requested SNR must be finite");
  if (propagation == Propagation::rir && !(t60 >= 0.0 && t60 <= 0.7))
    throw std::invalid_argument("scene: t60 must lie in [0, 0.7] s");
  if (noise == NoiseModel::diffuse && plane_waves == 0) throw std::invalid_argument("scene: diffuse noise needs plane waves");
  if (!(spacing > 0.0) || !(sound_speed > 0.0)) throw std::invalid_argument("scene: spacing and sound speed must be positive");
}

nlohmann::json to_json(const SceneSpec& s) {
  nlohmann::json j{{"channels", s.channels},       {"duration", s.duration},     {"sample_rate", s.sample_rate},
                   {"source", name(s.source)},     {"source_wav", s.source_wav}, {"propagation", name(s.propagation)},
                   {"t60", s.t60},                 {"noise", name(s.noise)},     {"plane_waves", s.plane_waves},
                   {"snr_db", s.snr_db},           {"spacing", s.spacing},       {"sound_speed", s.sound_speed},
                   {"seed", s.seed}};
  j["direction_deg"] = std::isnan(s.direction_deg) ? nlohmann::json(nullptr) : nlohmann::json(s.direction_deg);
  return j;
}

SceneSpec spec_from_json(const nlohmann::json& j) {
  SceneSpec s;
  s.channels = j.value("channels", s.channels);
  s.duration = j.value("duration", s.duration);
  s.sample_rate = j.value("sample_rate", s.sample_rate);
  const std::string src = j.value("source", std::string("modulated"));
  if (src != "modulated" && src != "wav") throw std::invalid_argument("scene: unknown source model '" + src + "'");
  s.source = src == "wav" ? SourceModel::wav : SourceModel::modulated;
  s.source_wav = j.value("source_wav", std::string());
  const std::string prop = j.value("propagation", std::string("anechoic"));
  if (prop != "anechoic" && prop != "rir") throw std::invalid_argument("scene: unknown propagation '" + prop + "'");
  s.propagation = prop == "rir" ? Propagation::rir : Propagation::anechoic;
  s.t60 = j.value("t60", s.t60);
  const std::string nz = j.value("noise", std::string("diffuse"));
  if (nz != "white" && nz != "diffuse") throw std::invalid_argument("scene: unknown noise model '" + nz + "'");
  s.noise = nz == "white" ? NoiseModel::white : NoiseModel::diffuse;
  s.plane_waves = j.value("plane_waves", s.plane_waves);
  s.snr_db = j.value("snr_db", s.snr_db);
  s.spacing = j.value("spacing", s.spacing);
  s.sound_speed = j.value("sound_speed", s.sound_speed);
  s.seed = j.value("seed", s.seed);
  if (j.contains("direction_deg") && !j["direction_deg"].is_null()) s.direction_deg = j["direction_deg"].get<double>();
  return s;
}

std::vector<double> delay_signal(std::span<const double> x, double delay_samples) {
  const std::size_t n = x.size();
  if (n == 0) return {};
  auto bins = rfft(x);
  apply_delay(bins, n, delay_samples);
  return irfft(bins, n);
}

std::vector<double> convolve(std::span<const double> x, std::span<const double> h) {
  if (x.empty() || h.empty()) return std::vector<double>(x.size(), 0.0);
  const std::size_t n = next_pow2(x.size() + h.size() - 1);
  std::vector<double> a(n, 0.0), b(n, 0.0);
  std::copy(x.begin(), x.end(), a.begin());
  std::copy(h.begin(), h.end(), b.begin());
  auto A = rfft(a), B = rfft(b);
  for (std::size_t k = 0; k < A.size(); ++k) A[k] *= B[k];
  auto y = irfft(A, n);
  y.resize(x.size());
  return y;
}

double steering_delay(std::size_t d, double direction_deg, double spacing, double sound_speed) {
  return static_cast<double>(d) * spacing * std::cos(direction_deg * std::numbers::pi / 180.0) / sound_speed;
}

namespace {
// One-pole low-pass shared by the speech surrogate and the diffuse noise
// sources, so per-bin SNRs are roughly level across frequency.
constexpr double kTiltPole = 0.9;
}  // namespace

std::vector<double> speech_surrogate(std::size_t n, int sample_rate, std::mt19937_64& rng) {
  const double fs = sample_rate;
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> s(n);
  double state = 0.0;
  for (auto& v : s) {
    state = g(rng) + kTiltPole * state;
    v = state;
  }
  std::vector<double> env(n, 0.0);
  const std::size_t ramp = static_cast<std::size_t>(0.015 * fs);
  std::size_t pos = static_cast<std::size_t>((0.05 + 0.2 * u(rng)) * fs);
  while (pos < n) {
    const std::size_t len = static_cast<std::size_t>((0.2 + 0.5 * u(rng)) * fs);
    const double amp = 0.5 + 0.5 * u(rng);
    const double rate = 3.0 + 3.0 * u(rng), phase = 2.0 * std::numbers::pi * u(rng);
    for (std::size_t i = 0; i < len && pos + i < n; ++i) {
      double e = amp * (0.6 + 0.4 * std::sin(2.0 * std::numbers::pi * rate * static_cast<double>(i) / fs + phase));
      if (i < ramp) e *= 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(i) / ramp);
      if (len - i <= ramp) e *= 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(len - i) / ramp);
      env[pos + i] = e;
    }
    pos += len + static_cast<std::size_t>((0.08 + 0.27 * u(rng)) * fs);
  }
  for (std::size_t i = 0; i < n; ++i) s[i] *= env[i];
  const double e = energy(s);
  if (e > 0.0) {
    const double k = std::sqrt(static_cast<double>(n) / e);
    for (auto& v : s) v *= k;
  }
  return s;
}

SceneBundle synth_scene(const SceneSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SceneBundle b;
  b.spec = spec;
  b.direction_deg = std::isnan(spec.direction_deg) ? 30.0 + 120.0 * u(rng) : spec.direction_deg;
  const std::size_t D = spec.channels;
  const int sr = spec.source == SourceModel::wav ? read_wav(spec.source_wav).sample_rate : spec.sample_rate;

  std::vector<double> src;
  if (spec.source == SourceModel::wav) {
    src = read_wav(spec.source_wav).channels.at(0);
  } else {
    src = speech_surrogate(static_cast<std::size_t>(std::llround(spec.duration * sr)), sr, rng);
  }
  const std::size_t n = src.size();
  if (n == 0 || energy(src) == 0.0) throw std::invalid_argument("scene: source has zero power, SNR cannot be met");

  std::vector<std::vector<double>> x(D), noise(D);
  for (std::size_t d = 0; d < D; ++d)
    x[d] = delay_signal(src, steering_delay(d, b.direction_deg, spec.spacing, spec.sound_speed) * sr);

  if (spec.propagation == Propagation::rir && spec.t60 > 0.0) {
    std::normal_distribution<double> g(0.0, 1.0);
    const std::size_t L = static_cast<std::size_t>(spec.t60 * sr);
    const double decay = 3.0 * std::log(10.0) / (spec.t60 * sr);  // 60 dB amplitude decay over t60
    // tail energy about half of the direct path
    const double scale = std::sqrt(0.5 * 2.0 * decay);
    for (std::size_t d = 0; d < D; ++d) {
      std::vector<double> h(L, 0.0);
      for (std::size_t i = 1; i < L; ++i) h[i] = scale * g(rng) * std::exp(-decay * static_cast<double>(i));
      auto tail = convolve(src, h);
      for (std::size_t i = 0; i < n; ++i) x[d][i] += tail[i];
    }
  }

  if (spec.noise == NoiseModel::white) {
    std::normal_distribution<double> g(0.0, 1.0);
    for (auto& ch : noise) {
      ch.resize(n);
      for (auto& v : ch) v = g(rng);
    }
  } else {
    std::vector<std::vector<cplx>> acc(D, std::vector<cplx>(n / 2 + 1));
    for (std::size_t p = 0; p < spec.plane_waves; ++p) {
      const double cos_angle = 2.0 * u(rng) - 1.0;  // isotropic over the sphere
      auto wave = white_spectrum(n, rng);
      for (std::size_t k = 0; k < wave.size(); ++k)
        wave[k] /= std::abs(1.0 - kTiltPole * std::polar(1.0, -2.0 * std::numbers::pi * double(k) / double(n)));
      for (std::size_t d = 0; d < D; ++d) {
        auto bins = wave;
        apply_delay(bins, n, static_cast<double>(d) * spec.spacing * cos_angle / spec.sound_speed * sr);
        for (std::size_t k = 0; k < bins.size(); ++k) acc[d][k] += bins[k];
      }
    }
    const double norm = 1.0 / std::sqrt(static_cast<double>(spec.plane_waves));
    for (std::size_t d = 0; d < D; ++d) {
      noise[d] = irfft(acc[d], n);
      for (auto& v : noise[d]) v *= norm;
    }
  }

  const double gain = std::sqrt(energy(x[0]) / (energy(noise[0]) * std::pow(10.0, spec.snr_db / 10.0)));
  std::vector<std::vector<double>> y(D);
  for (std::size_t d = 0; d < D; ++d) {
    for (auto& v : noise[d]) v *= gain;
    make_exact_sum(x[d], noise[d], y[d]);
  }
  b.mixture = clip(sr, std::move(y));
  b.speech = clip(sr, std::move(x));
  b.noise = clip(sr, std::move(noise));

  StftConfig cfg;
  if (n >= cfg.window_size) {
    Tensor X = stft(std::span<const double>(b.speech.channels[0]), cfg);
    Tensor N = stft(std::span<const double>(b.noise.channels[0]), cfg);
    b.oracle_mask = oracle_mask(X.reshaped({1, X.dim(0), X.dim(1)}), N.reshaped({1, N.dim(0), N.dim(1)}));
  }
  return b;
}

Tensor oracle_mask(const Tensor& X, const Tensor& N) {
  require_rank(X, 3, "oracle_mask speech");
  require_shape(N, X.shape(), "oracle_mask noise");
  const std::size_t T = X.dim(1), F = X.dim(2);
  Tensor m(DType::real64, {T, F});
  auto x = X.complex_data();
  auto nz = N.complex_data();
  for (std::size_t i = 0; i < T * F; ++i) m.real_data()[i] = std::norm(x[i]) > std::norm(nz[i]) ? 1.0 : 0.0;
  return m;
}

Tensor mask_to_affiliations(const Tensor& mask) {
  require_rank(mask, 2, "mask_to_affiliations");
  const std::size_t T = mask.dim(0), F = mask.dim(1);
  Tensor g(DType::real64, {2, T, F});
  for (std::size_t i = 0; i < T * F; ++i) {
    g.real_data()[i] = mask.real_data()[i];
    g.real_data()[T * F + i] = 1.0 - mask.real_data()[i];
  }
  return g;
}

SnrReport snr_metrics(const Tensor& X, const Tensor& N, const Tensor& w) {
  require_dtype(X, DType::complex128, "snr_metrics speech");
  require_rank(X, 3, "snr_metrics speech");
  require_shape(N, X.shape(), "snr_metrics noise");
  const std::size_t D = X.dim(0), T = X.dim(1), F = X.dim(2);
  require_shape(w, {F, D}, "snr_metrics weights");
  auto x = X.complex_data();
  auto nz = N.complex_data();
  auto wv = w.complex_data();
  SnrReport r;
  for (std::size_t d = 0; d < D; ++d) {
    double ex = 0.0, en = 0.0;
    for (std::size_t i = 0; i < T * F; ++i) {
      ex += std::norm(x[d * T * F + i]);
      en += std::norm(nz[d * T * F + i]);
    }
    if (en == 0.0) throw std::invalid_argument("snr_metrics: noise has zero energy on channel " + std::to_string(d));
    r.input_db.push_back(10.0 * std::log10(ex / en));
  }
  double ox = 0.0, on = 0.0;
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t f = 0; f < F; ++f) {
      cplx sx = 0.0, sn = 0.0;
      for (std::size_t d = 0; d < D; ++d) {
        sx += std::conj(wv[f * D + d]) * x[(d * T + t) * F + f];
        sn += std::conj(wv[f * D + d]) * nz[(d * T + t) * F + f];
      }
      ox += std::norm(sx);
      on += std::norm(sn);
    }
  if (on == 0.0) throw std::invalid_argument("snr_metrics: beamformed noise has zero energy");
  r.output_db = 10.0 * std::log10(ox / on);
  r.gain_db = r.output_db - r.input_db[0];
  r.gain_best_db = r.output_db - *std::max_element(r.input_db.begin(), r.input_db.end());
  return r;
}

nlohmann::json to_json(const SnrReport& r) {
  return {{"input_snr_db", r.input_db},
          {"output_snr_db", r.output_db},
          {"gain_db", r.gain_db},
          {"gain_over_best_db", r.gain_best_db}};
}

nlohmann::json write_scene(const std::filesystem::path& root, const std::string& id, const SceneBundle& b) {
  const std::filesystem::path rel = std::filesystem::path("scenes") / id;
  std::filesystem::create_directories(root / rel);
  write_wav(root / rel / "mixture.wav", b.mixture, SampleFormat::float32);
  write_wav(root / rel / "speech.wav", b.speech, SampleFormat::float32);
  write_wav(root / rel / "noise.wav", b.noise, SampleFormat::float32);
  double ex = 0.0, en = 0.0;
  for (std::size_t i = 0; i < b.speech.length(); ++i) {
    ex += b.speech.channels[0][i] * b.speech.channels[0][i];
    en += b.noise.channels[0][i] * b.noise.channels[0][i];
  }
  nlohmann::json side = to_json(b.spec);
  side["direction_deg"] = b.direction_deg;
  side["achieved_snr_db"] = 10.0 * std::log10(ex / en);
  std::ofstream f(root / rel / "scene.json");
  f << side.dump(2) << '\n';
  if (!f) throw std::runtime_error((root / rel / "scene.json").string() + ": write failed");
  return {{"id", id},
          {"mixture", (rel / "mixture.wav").generic_string()},
          {"speech", (rel / "speech.wav").generic_string()},
          {"noise", (rel / "noise.wav").generic_string()},
          {"snr_db", b.spec.snr_db}};
}

}  // namespace beamlearn::scene
