#include "beamlearn/beamformer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "beamlearn/hermitian.hpp"
#include "beamlearn/parallel.hpp"

namespace beamlearn::beamformer {

namespace {

void check_spec(const Tensor& spec, const char* what) {
  require_dtype(spec, DType::complex128, std::string(what) + " spectrogram");
  require_rank(spec, 3, std::string(what) + " spectrogram");
}

void check_covariance(const Tensor& phi, const char* what) {
  require_dtype(phi, DType::complex128, what);
  require_rank(phi, 3, what);
  if (phi.dim(1) != phi.dim(2)) throw ShapeError(std::string(what) + ": matrices must be square, got " + to_string(phi.shape()));
}

std::span<const cplx> block(const Tensor& t, std::size_t f, std::size_t D) {
  return t.complex_data().subspan(f * D * D, D * D);
}

}  // namespace

Tensor estimate_covariance(const Tensor& spec, const Tensor& mask, std::vector<std::size_t>* empty) {
  check_spec(spec, "estimate_covariance");
  const std::size_t D = spec.dim(0), T = spec.dim(1), F = spec.dim(2);
  require_dtype(mask, DType::real64, "estimate_covariance mask");
  require_shape(mask, {T, F}, "estimate_covariance mask");
  Tensor out(DType::complex128, {F, D, D});
  auto y = spec.complex_data();
  auto m = mask.real_data();
  auto phi = out.complex_data();
  std::vector<char> zero(F, 0);
  parallel_for(F, [&](std::size_t f) {
    cplx* P = phi.data() + f * D * D;
    double mass = 0.0;
    std::vector<cplx> v(D);
    for (std::size_t t = 0; t < T; ++t) {
      const double w = m[t * F + f];
      if (w == 0.0) continue;
      mass += w;
      for (std::size_t d = 0; d < D; ++d) v[d] = y[(d * T + t) * F + f];
      for (std::size_t i = 0; i < D; ++i)
        for (std::size_t j = 0; j < D; ++j) P[i * D + j] += w * v[i] * std::conj(v[j]);
    }
    if (mass <= 0.0) {
      std::fill(P, P + D * D, cplx(0.0));
      for (std::size_t i = 0; i < D; ++i) P[i * D + i] = 1.0;
      zero[f] = 1;
      return;
    }
    for (std::size_t i = 0; i < D * D; ++i) P[i] /= mass;
  });
  if (empty)
    for (std::size_t f = 0; f < F; ++f)
      if (zero[f]) empty->push_back(f);
  return out;
}

CovariancePair estimate_covariances(const Tensor& spec, const Tensor& masks, std::size_t speech, std::size_t noise,
                                    CovarianceReport* report) {
  require_rank(masks, 3, "estimate_covariances masks");
  const std::size_t K = masks.dim(0), T = masks.dim(1), F = masks.dim(2);
  if (speech >= K || noise >= K)
    throw std::invalid_argument("estimate_covariances: class index out of range for K = " + std::to_string(K));
  auto slice = [&](std::size_t k) {
    auto src = masks.real_data().subspan(k * T * F, T * F);
    return Tensor::real({T, F}, std::vector<double>(src.begin(), src.end()));
  };
  CovariancePair p;
  p.xx = estimate_covariance(spec, slice(speech), report ? &report->empty_speech : nullptr);
  p.nn = estimate_covariance(spec, slice(noise), report ? &report->empty_noise : nullptr);
  return p;
}

Tensor normalize_noise_covariance(const Tensor& phi_nn) {
  check_covariance(phi_nn, "normalize_noise_covariance");
  const std::size_t F = phi_nn.dim(0), D = phi_nn.dim(1);
  Tensor out = phi_nn;
  auto v = out.complex_data();
  for (std::size_t f = 0; f < F; ++f) {
    const double tr = herm::trace(block(phi_nn, f, D), D);
    if (!(tr > 0.0))
      throw NumericalError("normalize_noise_covariance: nonpositive trace at frequency " + std::to_string(f));
    for (std::size_t i = 0; i < D * D; ++i) v[f * D * D + i] /= tr;
  }
  return out;
}

BeamformerWeights gev_weights(const CovariancePair& cov) {
  check_covariance(cov.xx, "gev_weights speech covariance");
  require_shape(cov.nn, cov.xx.shape(), "gev_weights noise covariance");
  const std::size_t F = cov.xx.dim(0), D = cov.xx.dim(1);
  const Tensor nn = normalize_noise_covariance(cov.nn);
  BeamformerWeights out{Tensor(DType::complex128, {F, D}), std::vector<double>(F)};
  auto w = out.w.complex_data();
  std::vector<char> failed(F, 0);
  parallel_for(F, [&](std::size_t f) {
    std::vector<cplx> L(D * D);
    if (!herm::cholesky(block(nn, f, D), D, L)) {
      failed[f] = 1;
      return;
    }
    // A = L^-1 Phi_xx L^-H, built column by column and then symmetrized.
    auto xx = block(cov.xx, f, D);
    std::vector<cplx> M(D * D), A(D * D), col(D);
    for (std::size_t j = 0; j < D; ++j) {
      for (std::size_t i = 0; i < D; ++i) col[i] = xx[i * D + j];
      herm::forward_substitute(L, D, col);
      for (std::size_t i = 0; i < D; ++i) M[i * D + j] = col[i];
    }
    // M = L^-1 Phi_xx; A = M L^-H = (L^-1 M^H)^H
    for (std::size_t j = 0; j < D; ++j) {
      for (std::size_t i = 0; i < D; ++i) col[i] = std::conj(M[j * D + i]);
      herm::forward_substitute(L, D, col);
      for (std::size_t i = 0; i < D; ++i) A[j * D + i] = std::conj(col[i]);
    }
    for (std::size_t i = 0; i < D; ++i)
      for (std::size_t j = i; j < D; ++j) {
        const cplx a = 0.5 * (A[i * D + j] + std::conj(A[j * D + i]));
        A[i * D + j] = a;
        A[j * D + i] = std::conj(a);
      }
    auto eig = herm::jacobi_eigh(A, D);
    out.lambda[f] = eig.values[D - 1];
    std::vector<cplx> u(D);
    double nu = 0.0;
    for (std::size_t i = 0; i < D; ++i) {
      u[i] = eig.vectors[i * D + D - 1];
      nu += std::norm(u[i]);
    }
    for (auto& x : u) x /= std::sqrt(nu);
    herm::backward_substitute(L, D, u);
    std::size_t big = 0;
    for (std::size_t i = 1; i < D; ++i)
      if (std::abs(u[i]) > std::abs(u[big])) big = i;
    const cplx rot = std::abs(u[big]) > 0.0 ? std::conj(u[big]) / std::abs(u[big]) : cplx(1.0);
    for (std::size_t i = 0; i < D; ++i) {
      cplx v = u[i] * rot;
      if (i == big) v = std::abs(v);
      w[f * D + i] = v;
    }
  });
  for (std::size_t f = 0; f < F; ++f)
    if (failed[f])
      throw NumericalError("gev_weights: noise covariance at frequency " + std::to_string(f) +
                           " is not positive definite after regularization");
  return out;
}

Tensor apply_beamformer(const Tensor& spec, const Tensor& w) {
  check_spec(spec, "apply_beamformer");
  const std::size_t D = spec.dim(0), T = spec.dim(1), F = spec.dim(2);
  require_dtype(w, DType::complex128, "apply_beamformer weights");
  require_shape(w, {F, D}, "apply_beamformer weights");
  Tensor out(DType::complex128, {T, F});
  auto y = spec.complex_data();
  auto wv = w.complex_data();
  auto o = out.complex_data();
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t f = 0; f < F; ++f) {
      cplx s = 0.0;
      for (std::size_t d = 0; d < D; ++d) s += std::conj(wv[f * D + d]) * y[(d * T + t) * F + f];
      o[t * F + f] = s;
    }
  return out;
}

std::size_t select_speech_class(const Tensor& spec, const Tensor& masks) {
  check_spec(spec, "select_speech_class");
  require_rank(masks, 3, "select_speech_class masks");
  const std::size_t K = masks.dim(0), T = masks.dim(1), F = masks.dim(2), D = spec.dim(0);
  std::size_t best = 0;
  double best_score = -1.0;
  for (std::size_t k = 0; k < K; ++k) {
    auto src = masks.real_data().subspan(k * T * F, T * F);
    Tensor phi = estimate_covariance(spec, Tensor::real({T, F}, std::vector<double>(src.begin(), src.end())));
    std::vector<double> ratio(F, 0.0);
    parallel_for(F, [&](std::size_t f) {
      auto P = block(phi, f, D);
      const double tr = herm::trace(P, D);
      if (tr > 0.0) ratio[f] = herm::jacobi_eigh(P, D).values[D - 1] / tr;
    });
    double score = 0.0;
    for (double r : ratio) score += r;
    score /= static_cast<double>(F);
    if (score > best_score) {
      best_score = score;
      best = k;
    }
  }
  return best;
}

Enhancement enhance(const Tensor& spec, const Tensor& masks, int speech_class) {
  require_rank(masks, 3, "enhance masks");
  const std::size_t K = masks.dim(0);
  Enhancement e;
  if (speech_class < 0) {
    if (K != 2) throw std::invalid_argument("enhance: automatic speech class selection needs K = 2");
    e.speech_class = select_speech_class(spec, masks);
  } else {
    e.speech_class = static_cast<std::size_t>(speech_class);
  }
  if (e.speech_class >= K) throw std::invalid_argument("enhance: speech class out of range");
  // every remaining class counts as noise
  const std::size_t T = masks.dim(1), F = masks.dim(2);
  Tensor speech(DType::real64, {T, F}), noise(DType::real64, {T, F});
  auto m = masks.real_data();
  for (std::size_t k = 0; k < K; ++k) {
    auto dst = (k == e.speech_class ? speech : noise).real_data();
    for (std::size_t i = 0; i < T * F; ++i) dst[i] += m[k * T * F + i];
  }
  CovariancePair cov{estimate_covariance(spec, speech), estimate_covariance(spec, noise)};
  e.weights = gev_weights(cov);
  e.output = apply_beamformer(spec, e.weights.w);
  return e;
}

}  // namespace beamlearn::beamformer
