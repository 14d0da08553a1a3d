#include "beamlearn/mixture.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

#include "beamlearn/hermitian.hpp"
#include "beamlearn/parallel.hpp"

namespace beamlearn::mixture {

namespace {

constexpr double kEmptyMass = 1e-300;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct Dims {
  std::size_t K = 0, T = 0, F = 0, D = 0;
};

Dims check_observations(const Tensor& y, const char* what) {
  require_dtype(y, DType::complex128, std::string(what) + " observations");
  require_rank(y, 3, std::string(what) + " observations");
  return Dims{0, y.dim(0), y.dim(1), y.dim(2)};
}

Dims check_params(const Tensor& y, const MixtureParams& p, const char* what) {
  Dims d = check_observations(y, what);
  require_rank(p.pi, 2, std::string(what) + " weights");
  d.K = p.pi.dim(0);
  require_shape(p.pi, {d.K, d.F}, std::string(what) + " weights");
  require_shape(p.B, {d.K, d.F, d.D, d.D}, std::string(what) + " shape matrices");
  require_dtype(p.B, DType::complex128, std::string(what) + " shape matrices");
  return d;
}

std::string at(std::size_t k, std::size_t f) {
  return "class " + std::to_string(k) + ", frequency " + std::to_string(f);
}

// Observations of one frequency as a contiguous (T, D) block.
std::vector<cplx> gather_bin(const Tensor& y, std::size_t f) {
  const std::size_t T = y.dim(0), F = y.dim(1), D = y.dim(2);
  auto src = y.complex_data();
  std::vector<cplx> out(T * D);
  for (std::size_t t = 0; t < T; ++t)
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>((t * F + f) * D), D,
                out.begin() + static_cast<std::ptrdiff_t>(t * D));
  return out;
}

// Posterior from log densities and weights; returns sum_t ln sum_k pi p for the bin.
double bin_posterior(const Dims& d, std::size_t f, const Tensor& lp, const Tensor& pi, Tensor* gamma) {
  auto l = lp.real_data();
  auto w = pi.real_data();
  std::vector<double> a(d.K);
  double total = 0.0;
  for (std::size_t t = 0; t < d.T; ++t) {
    double m = kNegInf;
    for (std::size_t k = 0; k < d.K; ++k) {
      a[k] = std::log(w[k * d.F + f]) + l[(k * d.T + t) * d.F + f];
      m = std::max(m, a[k]);
    }
    if (m == kNegInf)
      throw NumericalError("e_step: every class has zero probability at frame " + std::to_string(t) + ", frequency " +
                           std::to_string(f));
    double s = 0.0;
    for (std::size_t k = 0; k < d.K; ++k) s += std::exp(a[k] - m);
    total += m + std::log(s);
    if (gamma) {
      auto g = gamma->real_data();
      for (std::size_t k = 0; k < d.K; ++k) g[(k * d.T + t) * d.F + f] = std::exp(a[k] - m) / s;
    }
  }
  return total;
}

// Posterior for every bin plus the ml log-likelihood, summed in frequency order.
double posterior_all(const Dims& d, const Tensor& lp, const Tensor& pi, Tensor* gamma) {
  std::vector<double> per(d.F);
  parallel_for(d.F, [&](std::size_t f) { per[f] = bin_posterior(d, f, lp, pi, gamma); });
  return std::accumulate(per.begin(), per.end(), 0.0);
}

}  // namespace

Tensor normalize(const Tensor& spec) {
  require_dtype(spec, DType::complex128, "normalize input");
  require_rank(spec, 3, "normalize input");
  const std::size_t D = spec.dim(0), T = spec.dim(1), F = spec.dim(2);
  Tensor out(DType::complex128, {T, F, D});
  auto s = spec.complex_data();
  auto o = out.complex_data();
  const double fill = 1.0 / std::sqrt(static_cast<double>(D));
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t f = 0; f < F; ++f) {
      double nn = 0.0;
      for (std::size_t d = 0; d < D; ++d) nn += std::norm(s[(d * T + t) * F + f]);
      const double n = std::sqrt(nn);
      for (std::size_t d = 0; d < D; ++d) o[(t * F + f) * D + d] = n > 0.0 ? s[(d * T + t) * F + f] / n : cplx(fill);
    }
  return out;
}

double log_normalizer(std::size_t D) {
  return std::lgamma(static_cast<double>(D)) - std::numbers::ln2 - static_cast<double>(D) * std::log(std::numbers::pi);
}

double cacg_log_density(std::span<const cplx> y, std::span<const cplx> B, std::size_t D) {
  if (y.size() != D || B.size() != D * D)
    throw ShapeError("cacg_log_density: expected a " + std::to_string(D) + "-vector and a " + std::to_string(D) + "x" +
                     std::to_string(D) + " matrix");
  std::vector<cplx> L(D * D);
  if (!herm::cholesky(B, D, L)) throw NumericalError("cacg_log_density: B is not positive definite");
  const double q = herm::inverse_quadratic_form(L, D, y);
  const double v = log_normalizer(D) - herm::log_det(L, D) - static_cast<double>(D) * std::log(q);
  if (!std::isfinite(v)) throw NumericalError("cacg_log_density: non-finite density");
  return v;
}

MixtureParams m_step(const Tensor& y, const Tensor& gamma, const Tensor* B_init, int iterations, MStepReport* report) {
  Dims d = check_observations(y, "m_step");
  require_rank(gamma, 3, "m_step affiliations");
  d.K = gamma.dim(0);
  require_shape(gamma, {d.K, d.T, d.F}, "m_step affiliations");
  if (d.T == 0) throw std::invalid_argument("m_step: no frames");
  if (iterations < 1) throw std::invalid_argument("m_step: iterations must be >= 1");
  if (B_init) require_shape(*B_init, {d.K, d.F, d.D, d.D}, "m_step initial B");

  const std::size_t D = d.D, DD = D * D;
  MixtureParams out{Tensor(DType::real64, {d.K, d.F}), Tensor(DType::complex128, {d.K, d.F, D, D})};
  std::vector<char> empty(d.K * d.F, 0);
  auto g = gamma.real_data();
  auto pi = out.pi.real_data();
  auto Bout = out.B.complex_data();

  parallel_for(d.F, [&](std::size_t f) {
    const auto yf = gather_bin(y, f);
    std::vector<cplx> prev(DD), L(DD), S(DD);
    for (std::size_t k = 0; k < d.K; ++k) {
      double mass = 0.0;
      for (std::size_t t = 0; t < d.T; ++t) mass += g[(k * d.T + t) * d.F + f];
      pi[k * d.F + f] = mass / static_cast<double>(d.T);
      cplx* Bkf = Bout.data() + (k * d.F + f) * DD;
      if (!(mass > kEmptyMass)) {
        empty[k * d.F + f] = 1;
        for (std::size_t i = 0; i < D; ++i) Bkf[i * D + i] = 1.0;
        continue;
      }
      if (B_init) {
        auto src = B_init->complex_data().subspan((k * d.F + f) * DD, DD);
        std::copy(src.begin(), src.end(), prev.begin());
      } else {
        std::fill(prev.begin(), prev.end(), cplx{});
        for (std::size_t i = 0; i < D; ++i) prev[i * D + i] = 1.0;
      }
      for (int it = 0; it < iterations; ++it) {
        if (!herm::cholesky(prev, D, L)) throw NumericalError("m_step: previous B not positive definite at " + at(k, f));
        std::fill(S.begin(), S.end(), cplx{});
        for (std::size_t t = 0; t < d.T; ++t) {
          const double gk = g[(k * d.T + t) * d.F + f];
          if (gk == 0.0) continue;
          const cplx* yt = yf.data() + t * D;
          const double w = gk / herm::inverse_quadratic_form(L, D, std::span<const cplx>(yt, D));
          for (std::size_t i = 0; i < D; ++i)
            for (std::size_t j = 0; j <= i; ++j) S[i * D + j] += w * yt[i] * std::conj(yt[j]);
        }
        double tr = 0.0;
        for (std::size_t i = 0; i < D; ++i) tr += S[i * D + i].real();
        // D * S / mass, then rescaled to trace D
        const double scale = tr > 0.0 ? static_cast<double>(D) / tr : static_cast<double>(D) / mass;
        for (std::size_t i = 0; i < D; ++i) {
          prev[i * D + i] = S[i * D + i].real() * scale;
          for (std::size_t j = 0; j < i; ++j) {
            prev[i * D + j] = S[i * D + j] * scale;
            prev[j * D + i] = std::conj(prev[i * D + j]);
          }
        }
      }
      std::copy(prev.begin(), prev.end(), Bkf);
    }
  });

  if (report) {
    report->empty.clear();
    for (std::size_t k = 0; k < d.K; ++k)
      for (std::size_t f = 0; f < d.F; ++f)
        if (empty[k * d.F + f]) report->empty.emplace_back(k, f);
  }
  return out;
}

Tensor log_densities(const Tensor& y, const MixtureParams& params) {
  const Dims d = check_params(y, params, "log_densities");
  const std::size_t D = d.D, DD = D * D;
  const double c = log_normalizer(D);
  Tensor out(DType::real64, {d.K, d.T, d.F});
  auto o = out.real_data();
  auto B = params.B.complex_data();
  parallel_for(d.F, [&](std::size_t f) {
    const auto yf = gather_bin(y, f);
    std::vector<cplx> L(DD);
    for (std::size_t k = 0; k < d.K; ++k) {
      auto Bkf = B.subspan((k * d.F + f) * DD, DD);
      if (herm::hermitian_defect(Bkf, D) > 1e-10) throw std::invalid_argument("log_densities: B not Hermitian at " + at(k, f));
      if (!herm::cholesky(Bkf, D, L)) throw NumericalError("log_densities: B not positive definite at " + at(k, f));
      const double base = c - herm::log_det(L, D);
      for (std::size_t t = 0; t < d.T; ++t) {
        const double q = herm::inverse_quadratic_form(L, D, std::span<const cplx>(yf.data() + t * D, D));
        const double v = base - static_cast<double>(D) * std::log(q);
        if (!std::isfinite(v))
          throw NumericalError("log density not finite at frame " + std::to_string(t) + ", frequency " +
                               std::to_string(f) + ", class " + std::to_string(k));
        o[(k * d.T + t) * d.F + f] = v;
      }
    }
  });
  return out;
}

Tensor e_step(const Tensor& y, const MixtureParams& params) {
  const Dims d = check_params(y, params, "e_step");
  const Tensor lp = log_densities(y, params);
  Tensor gamma(DType::real64, {d.K, d.T, d.F});
  posterior_all(d, lp, params.pi, &gamma);
  return gamma;
}

double log_likelihood(const Tensor& y, const MixtureParams& params, Likelihood variant, const Tensor* gamma_aux) {
  const Dims d = check_params(y, params, "log_likelihood");
  const Tensor lp = log_densities(y, params);
  if (variant == Likelihood::ml) return posterior_all(d, lp, params.pi, nullptr);
  if (variant == Likelihood::ml_equal) {
    Tensor equal(DType::real64, {d.K, d.F});
    for (auto& v : equal.real_data()) v = 1.0 / static_cast<double>(d.K);
    return posterior_all(d, lp, equal, nullptr);
  }
  if (!gamma_aux) throw std::invalid_argument("log_likelihood: the auxiliary variant needs affiliations");
  require_shape(*gamma_aux, {d.K, d.T, d.F}, "auxiliary affiliations");
  auto g = gamma_aux->real_data();
  auto l = lp.real_data();
  auto pi = params.pi.real_data();
  std::vector<double> per(d.F, 0.0);
  parallel_for(d.F, [&](std::size_t f) {
    double s = 0.0;
    for (std::size_t k = 0; k < d.K; ++k) {
      const double lw = std::log(std::max(pi[k * d.F + f], kWeightFloor));
      for (std::size_t t = 0; t < d.T; ++t) {
        const std::size_t i = (k * d.T + t) * d.F + f;
        s += g[i] * (lw + l[i]);
      }
    }
    per[f] = s;
  });
  return std::accumulate(per.begin(), per.end(), 0.0);
}

EmResult em_fit(const Tensor& y, std::size_t K, int iterations, const Tensor* init, std::uint64_t seed,
                int fixed_point_iterations) {
  Dims d = check_observations(y, "em_fit");
  d.K = K;
  if (K < 1) throw std::invalid_argument("em_fit: need at least one class");
  if (iterations < 1) throw std::invalid_argument("em_fit: iterations must be >= 1");

  EmResult r;
  if (init) {
    require_shape(*init, {K, d.T, d.F}, "em_fit initial affiliations");
    r.gamma = *init;
  } else {
    r.gamma = Tensor(DType::real64, {K, d.T, d.F});
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto g = r.gamma.real_data();
    const std::size_t TF = d.T * d.F;
    for (std::size_t i = 0; i < TF; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < K; ++k) s += (g[k * TF + i] = u(rng) + 1e-3);
      for (std::size_t k = 0; k < K; ++k) g[k * TF + i] /= s;
    }
  }

  for (int it = 0; it < iterations; ++it) {
    const Tensor* prev = it == 0 ? nullptr : &r.params.B;
    MixtureParams next = m_step(y, r.gamma, prev, fixed_point_iterations);
    r.params = std::move(next);
    const Tensor lp = log_densities(y, r.params);
    r.trace.push_back(posterior_all(d, lp, r.params.pi, &r.gamma));
  }
  return r;
}

void validate_permutation(const PermutationMap& perm, std::size_t K, std::size_t F) {
  if (perm.size() != F)
    throw std::invalid_argument("permutation map has " + std::to_string(perm.size()) + " entries, expected " +
                                std::to_string(F));
  for (std::size_t f = 0; f < F; ++f) {
    if (perm[f].size() != K)
      throw std::invalid_argument("permutation at frequency " + std::to_string(f) + " has wrong length");
    std::vector<char> seen(K, 0);
    for (auto k : perm[f]) {
      if (k >= K || seen[k]) throw std::invalid_argument("permutation at frequency " + std::to_string(f) + " is invalid");
      seen[k] = 1;
    }
  }
}

Tensor apply_permutation(const Tensor& gamma, const PermutationMap& perm) {
  require_rank(gamma, 3, "affiliations");
  const std::size_t K = gamma.dim(0), T = gamma.dim(1), F = gamma.dim(2);
  validate_permutation(perm, K, F);
  Tensor out(DType::real64, gamma.shape());
  auto g = gamma.real_data();
  auto o = out.real_data();
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t f = 0; f < F; ++f) o[(k * T + t) * F + f] = g[(perm[f][k] * T + t) * F + f];
  return out;
}

Alignment permutation_align(const Tensor& gamma, int refinement_passes) {
  require_rank(gamma, 3, "permutation_align affiliations");
  const std::size_t K = gamma.dim(0), T = gamma.dim(1), F = gamma.dim(2);
  if (K < 2) throw std::invalid_argument("permutation_align: needs at least two classes");
  auto g = gamma.real_data();

  // zero-mean, unit-norm time profile per (f, k); constant profiles stay zero
  std::vector<double> prof(F * K * T, 0.0);
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t k = 0; k < K; ++k) {
      double* p = prof.data() + (f * K + k) * T;
      double mean = 0.0;
      for (std::size_t t = 0; t < T; ++t) mean += g[(k * T + t) * F + f];
      mean /= static_cast<double>(T);
      double nn = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        p[t] = g[(k * T + t) * F + f] - mean;
        nn += p[t] * p[t];
      }
      const double n = std::sqrt(nn);
      if (n > 1e-12 * std::sqrt(static_cast<double>(T)))
        for (std::size_t t = 0; t < T; ++t) p[t] /= n;
      else
        std::fill(p, p + T, 0.0);
    }
  auto profile = [&](std::size_t f, std::size_t k) { return prof.data() + (f * K + k) * T; };

  std::vector<std::vector<std::size_t>> perms;
  std::vector<std::size_t> sigma(K);
  std::iota(sigma.begin(), sigma.end(), 0);
  do perms.push_back(sigma);
  while (std::next_permutation(sigma.begin(), sigma.end()));

  // Centroids are sums of zero-mean profiles, so they are zero-mean too.
  std::vector<double> centroid(K * T, 0.0);
  auto corr = [&](const double* c, const double* p) {
    double dot = 0.0, nn = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      dot += c[t] * p[t];
      nn += c[t] * c[t];
    }
    return nn > 0.0 ? dot / std::sqrt(nn) : 0.0;
  };
  auto best_for = [&](std::size_t f) {
    std::size_t best = 0;
    double best_score = kNegInf;
    for (std::size_t i = 0; i < perms.size(); ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < K; ++k) s += corr(centroid.data() + k * T, profile(f, perms[i][k]));
      if (s > best_score) {  // strict: ties keep the earlier (identity-first) permutation
        best_score = s;
        best = i;
      }
    }
    return best;
  };
  auto accumulate = [&](std::size_t f, const std::vector<std::size_t>& p, double sign) {
    for (std::size_t k = 0; k < K; ++k) {
      const double* src = profile(f, p[k]);
      double* c = centroid.data() + k * T;
      for (std::size_t t = 0; t < T; ++t) c[t] += sign * src[t];
    }
  };

  PermutationMap perm(F, perms[0]);
  if (F > 0) accumulate(0, perm[0], 1.0);
  for (std::size_t f = 1; f < F; ++f) {
    perm[f] = perms[best_for(f)];
    accumulate(f, perm[f], 1.0);
  }
  for (int pass = 0; pass < refinement_passes; ++pass) {
    bool changed = false;
    for (std::size_t f = 0; f < F; ++f) {
      accumulate(f, perm[f], -1.0);
      const auto& p = perms[best_for(f)];
      if (p != perm[f]) {
        perm[f] = p;
        changed = true;
      }
      accumulate(f, perm[f], 1.0);
    }
    if (!changed) break;
  }

  Alignment out;
  out.gamma = apply_permutation(gamma, perm);
  out.perm = std::move(perm);
  return out;
}

}  // namespace beamlearn::mixture
