#include <cmath>
#include <stdexcept>

#include "beamlearn/mixture.hpp"

namespace beamlearn::mixture::graph {

namespace {

ad::Var identity_batch(ad::Tape& tape, std::size_t K, std::size_t F, std::size_t D) {
  Tensor I(DType::complex128, {K, F, D, D});
  auto v = I.complex_data();
  for (std::size_t b = 0; b < K * F; ++b)
    for (std::size_t i = 0; i < D; ++i) v[b * D * D + i * D + i] = 1.0;
  return tape.constant(std::move(I));
}

// (K, F) -> (K, F, D, D) by repetition.
ad::Var expand_matrix(ad::Var a, std::size_t D) { return ad::broadcast(ad::broadcast(a, 2, D), 3, D); }

// B * D / tr(B) per (k, f).
ad::Var normalize_trace(ad::Var B) {
  const Shape& s = B.shape();
  const std::size_t K = s[0], F = s[1], D = s[2];
  Tensor diag(DType::real64, {K, F, D * D});
  auto m = diag.real_data();
  for (std::size_t b = 0; b < K * F; ++b)
    for (std::size_t i = 0; i < D; ++i) m[b * D * D + i * D + i] = 1.0;
  ad::Tape& tape = B.tape();
  ad::Var tr = ad::sum(ad::mul(ad::real_part(ad::reshape(B, {K, F, D * D})), tape.constant(std::move(diag))), 2);
  Tensor dims(DType::real64, {K, F});
  for (auto& v : dims.real_data()) v = static_cast<double>(D);
  return ad::mul(B, expand_matrix(ad::div(tape.constant(std::move(dims)), tr), D));
}

ad::Var log_weights(ad::Var pi, std::size_t T) { return ad::broadcast(ad::log(ad::clamp_min(pi, kWeightFloor)), 1, T); }

}  // namespace

Params m_step(ad::Var y, ad::Var gamma, std::optional<ad::Var> B_init, int iterations) {
  if (iterations < 1) throw std::invalid_argument("m_step: iterations must be >= 1");
  require_rank(y.value(), 3, "m_step observations");
  require_rank(gamma.value(), 3, "m_step affiliations");
  const std::size_t K = gamma.shape()[0], T = gamma.shape()[1], F = gamma.shape()[2], D = y.shape()[2];
  ad::Tape& tape = y.tape();

  ad::Var mass = ad::sum(gamma, 1);
  Params p;
  p.pi = ad::scale(mass, 1.0 / static_cast<double>(T));
  ad::Var denom = expand_matrix(mass, D);
  ad::Var prev = B_init ? *B_init : identity_batch(tape, K, F, D);
  for (int it = 0; it < iterations; ++it) {
    ad::Var w = ad::div(gamma, ad::quadratic_form(y, prev));
    ad::Var B = ad::scale(ad::div(ad::weighted_scatter(w, y), denom), static_cast<double>(D));
    prev = normalize_trace(B);
  }
  p.B = prev;
  return p;
}

ad::Var log_densities(ad::Var y, ad::Var B) {
  const std::size_t T = y.shape()[0], D = y.shape()[2];
  ad::Var q = ad::quadratic_form(y, B);
  ad::Var ld = ad::broadcast(ad::log_det_hermitian(B), 1, T);
  ad::Var lp = ad::sub(ad::scale(ad::log(q), -static_cast<double>(D)), ld);
  return ad::add_scalar(lp, log_normalizer(D));
}

ad::Var posterior(ad::Var log_density, ad::Var pi) {
  const std::size_t T = log_density.shape()[1];
  return ad::softmax(ad::add(log_weights(pi, T), log_density), 0);
}

ad::Var e_step(ad::Var y, const Params& p) { return posterior(log_densities(y, p.B), p.pi); }

ad::Var log_likelihood_from(ad::Var log_density, ad::Var pi, Likelihood variant, std::optional<ad::Var> gamma_aux) {
  const Shape& s = log_density.shape();
  const std::size_t K = s[0], T = s[1], F = s[2];
  switch (variant) {
    case Likelihood::ml:
      return ad::sum_all(ad::logsumexp(ad::add(log_weights(pi, T), log_density), 0));
    case Likelihood::ml_equal:
      return ad::add_scalar(ad::sum_all(ad::logsumexp(log_density, 0)),
                            -static_cast<double>(T * F) * std::log(static_cast<double>(K)));
    case Likelihood::auxiliary:
      if (!gamma_aux) throw std::invalid_argument("log_likelihood: the auxiliary variant needs affiliations");
      return ad::sum_all(ad::mul(*gamma_aux, ad::add(log_weights(pi, T), log_density)));
  }
  throw std::invalid_argument("log_likelihood: unknown variant");
}

ad::Var log_likelihood(ad::Var y, const Params& p, Likelihood variant, std::optional<ad::Var> gamma_aux) {
  return log_likelihood_from(log_densities(y, p.B), p.pi, variant, gamma_aux);
}

}  // namespace beamlearn::mixture::graph
