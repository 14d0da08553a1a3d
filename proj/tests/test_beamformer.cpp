#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "beamlearn/beamformer.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace beamlearn;
using namespace beamlearn::beamformer;
using namespace testing;

namespace {

using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;

CMat block(const Tensor& t, std::size_t f) {
  const std::size_t D = t.dim(1);
  CMat m(D, D);
  for (std::size_t i = 0; i < D; ++i)
    for (std::size_t j = 0; j < D; ++j) m(i, j) = t.complex_data()[(f * D + i) * D + j];
  return m;
}

CVec weights_at(const BeamformerWeights& bw, std::size_t f) {
  const std::size_t D = bw.w.dim(1);
  CVec v(D);
  for (std::size_t i = 0; i < D; ++i) v(i) = bw.w.complex_data()[f * D + i];
  return v;
}

Tensor stack(const std::vector<std::vector<cplx>>& mats, std::size_t D) {
  Tensor t(DType::complex128, {mats.size(), D, D});
  for (std::size_t f = 0; f < mats.size(); ++f)
    std::copy(mats[f].begin(), mats[f].end(), t.complex_data().begin() + static_cast<std::ptrdiff_t>(f * D * D));
  return t;
}

double rayleigh(const CVec& v, const CMat& xx, const CMat& nn) {
  return (v.adjoint() * xx * v)(0, 0).real() / (v.adjoint() * nn * v)(0, 0).real();
}

}  // namespace

TEST_CASE("estimate_covariance examples and loop oracle") {
  std::mt19937_64 rng(1);
  const std::size_t D = 3, T = 9, F = 4;
  Tensor spec = random_complex({D, T, F}, rng);
  auto y = [&](std::size_t d, std::size_t t, std::size_t f) { return spec.complex_data()[(d * T + t) * F + f]; };

  Tensor ones = Tensor::real({T, F}, std::vector<double>(T * F, 1.0));
  Tensor all = estimate_covariance(spec, ones);
  Tensor single(DType::real64, {T, F});
  for (std::size_t f = 0; f < F; ++f) single.real_data()[3 * F + f] = 0.7;
  Tensor one = estimate_covariance(spec, single);
  Tensor m = random_real({T, F}, rng, 0.0, 1.0);
  Tensor rnd = estimate_covariance(spec, m);
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t i = 0; i < D; ++i)
      for (std::size_t j = 0; j < D; ++j) {
        cplx mean = 0.0, num = 0.0;
        double mass = 0.0;
        for (std::size_t t = 0; t < T; ++t) {
          mean += y(i, t, f) * std::conj(y(j, t, f));
          num += m.real_data()[t * F + f] * y(i, t, f) * std::conj(y(j, t, f));
          mass += m.real_data()[t * F + f];
        }
        mean /= static_cast<double>(T);
        CHECK(std::abs(all.complex_data()[(f * D + i) * D + j] - mean) < 1e-12);
        CHECK(std::abs(one.complex_data()[(f * D + i) * D + j] - y(i, 3, f) * std::conj(y(j, 3, f))) < 1e-12);
        CHECK(std::abs(rnd.complex_data()[(f * D + i) * D + j] - num / mass) < 1e-12);
      }
  for (std::size_t f = 0; f < F; ++f) {
    CMat P = block(rnd, f);
    CHECK((P - P.adjoint()).norm() < 1e-12);
    Eigen::SelfAdjointEigenSolver<CMat> es(P);
    CHECK(es.eigenvalues().minCoeff() >= -1e-10 * P.trace().real());
  }

  Tensor zero(DType::real64, {T, F});
  for (std::size_t t = 0; t < T; ++t) zero.real_data()[t * F + 0] = 1.0;
  std::vector<std::size_t> empty;
  Tensor z = estimate_covariance(spec, zero, &empty);
  CHECK(empty == std::vector<std::size_t>{1, 2, 3});
  CHECK((block(z, 2) - CMat::Identity(D, D)).norm() == 0.0);
  CHECK_THROWS_AS(estimate_covariance(spec, Tensor(DType::real64, {T, F + 1})), ShapeError);
}

TEST_CASE("normalize_noise_covariance") {
  std::mt19937_64 rng(2);
  const std::size_t D = 4;
  std::vector<cplx> I(D * D);
  for (std::size_t i = 0; i < D; ++i) I[i * D + i] = 1.0;
  auto P = random_pd(D, rng, 0.0);
  std::vector<cplx> P5 = P;
  for (auto& v : P5) v *= 5.0;
  Tensor out = normalize_noise_covariance(stack({I, P, P5}, D));
  CHECK((block(out, 0) - CMat::Identity(D, D) / 4.0).norm() < 1e-15);
  CHECK((block(out, 1) - block(out, 2)).norm() < 1e-15);
  CHECK(std::abs(block(out, 1).trace() - 1.0) < 1e-12);
  CHECK_THROWS_AS(normalize_noise_covariance(stack({std::vector<cplx>(D * D)}, D)), NumericalError);
}

TEST_CASE("gev_weights whitened rank-one case") {
  const std::size_t D = 2;
  const cplx d0 = 1.0 / std::sqrt(2.0), d1 = cplx(0, 1) / std::sqrt(2.0);
  std::vector<cplx> xx{d0 * std::conj(d0), d0 * std::conj(d1), d1 * std::conj(d0), d1 * std::conj(d1)};
  std::vector<cplx> nn{0.5, 0, 0, 0.5};
  auto bw = gev_weights({stack({xx}, D), stack({nn}, D)});
  CVec w = weights_at(bw, 0);
  CVec d(2);
  d << d0, d1;
  CHECK(std::abs(std::abs((d.adjoint() * w)(0, 0)) - w.norm()) < 1e-10);  // parallel
  CHECK(bw.lambda[0] == doctest::Approx(2.0).epsilon(1e-9));
  CMat XX = block(stack({xx}, D), 0), NN = block(stack({nn}, D), 0);
  CHECK((XX * w - bw.lambda[0] * NN * w).norm() <= 1e-8 * (XX * w).norm());
  // whitened eigenvector has unit norm: w = L^-H u with L L^H = I / 2
  CHECK(w.norm() == doctest::Approx(std::sqrt(2.0)).epsilon(1e-9));
  CHECK(w(0).imag() == 0.0);
  CHECK(w(0).real() > 0.0);
}

TEST_CASE("gev_weights degenerate equality") {
  std::mt19937_64 rng(3);
  const std::size_t D = 3;
  auto P = random_pd(D, rng);
  const double tr = (P[0] + P[4] + P[8]).real();
  for (auto& v : P) v /= tr;
  auto bw = gev_weights({stack({P}, D), stack({P}, D)});
  CHECK(bw.lambda[0] == doctest::Approx(1.0).epsilon(1e-9));
  CMat M = block(stack({P}, D), 0);
  CVec w = weights_at(bw, 0);
  CHECK((M * w - bw.lambda[0] * M * w).norm() <= 1e-8 * (M * w).norm());
}

TEST_CASE("gev_weights residual, Rayleigh maximality and scale invariance") {
  std::mt19937_64 rng(4);
  const std::size_t D = 4, F = 12;
  std::vector<std::vector<cplx>> xs, ns, ns7;
  for (std::size_t f = 0; f < F; ++f) {
    xs.push_back(random_pd(D, rng, 0.1));
    ns.push_back(random_pd(D, rng, 0.1));
    auto c = ns.back();
    for (auto& v : c) v *= 7.3;
    ns7.push_back(c);
  }
  Tensor XX = stack(xs, D), NN = stack(ns, D);
  auto bw = gev_weights({XX, NN});
  auto bw7 = gev_weights({XX, stack(ns7, D)});
  Tensor NNn = normalize_noise_covariance(NN);
  std::normal_distribution<double> n(0.0, 1.0);
  for (std::size_t f = 0; f < F; ++f) {
    CMat X = block(XX, f), N = block(NNn, f);
    CVec w = weights_at(bw, f);
    CHECK((X * w - bw.lambda[f] * N * w).norm() < 1e-8 * (X * w).norm());
    const double q = rayleigh(w, X, N);
    CHECK(std::abs(q - bw.lambda[f]) <= 1e-8 * bw.lambda[f]);
    for (int trial = 0; trial < 1000; ++trial) {
      CVec v(D);
      for (std::size_t i = 0; i < D; ++i) v(i) = cplx(n(rng), n(rng));
      v.normalize();
      CHECK(rayleigh(v, X, N) <= q * (1.0 + 1e-8));
    }
    CHECK((weights_at(bw7, f) - w).norm() < 1e-10);
    // the whitened eigenvector has unit norm (factor of the loaded matrix)
    Eigen::LLT<CMat> llt(N + CMat::Identity(D, D) * (1e-10 * N.trace().real() / D));
    CHECK((llt.matrixU() * w).norm() == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("gev_weights rejects indefinite noise") {
  std::vector<cplx> xx{1, 0, 0, 1}, nn{1, 0, 0, -0.5};
  CHECK_THROWS_AS(gev_weights({stack({xx}, 2), stack({nn}, 2)}), NumericalError);
}

TEST_CASE("apply_beamformer") {
  std::mt19937_64 rng(5);
  const std::size_t D = 3, T = 5, F = 6;
  Tensor spec = random_complex({D, T, F}, rng);
  Tensor e1(DType::complex128, {F, D});
  for (std::size_t f = 0; f < F; ++f) e1.complex_data()[f * D] = 1.0;
  Tensor c0 = apply_beamformer(spec, e1);
  for (std::size_t i = 0; i < T * F; ++i) CHECK(c0.complex_data()[i] == spec.complex_data()[i]);

  Tensor same(DType::complex128, {D, T, F});
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t i = 0; i < T * F; ++i) same.complex_data()[d * T * F + i] = spec.complex_data()[i];
  Tensor avg(DType::complex128, {F, D});
  for (auto& v : avg.complex_data()) v = 1.0 / std::sqrt(3.0);
  Tensor s = apply_beamformer(same, avg);
  for (std::size_t i = 0; i < T * F; ++i) CHECK(std::abs(s.complex_data()[i] - std::sqrt(3.0) * spec.complex_data()[i]) < 1e-14);

  Tensor w = random_complex({F, D}, rng);
  Tensor out = apply_beamformer(spec, w);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t f = 0; f < F; ++f) {
      cplx ref = 0.0;
      for (std::size_t d = 0; d < D; ++d) ref += std::conj(w.complex_data()[f * D + d]) * spec.complex_data()[(d * T + t) * F + f];
      CHECK(std::abs(out.complex_data()[t * F + f] - ref) < 1e-12);
    }
  CHECK_THROWS_AS(apply_beamformer(spec, Tensor(DType::complex128, {F, D + 1})), ShapeError);
}

TEST_CASE("speech class is the directional one") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0.0, 1.0);
  const std::size_t D = 4, T = 200, F = 8;
  Tensor spec(DType::complex128, {D, T, F});
  Tensor masks(DType::real64, {2, T, F});
  std::vector<std::vector<cplx>> steer(F);
  for (auto& s : steer) s = random_unit(D, rng);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t f = 0; f < F; ++f) {
      const bool speech = t % 3 == 0;
      const cplx s(n(rng), n(rng));
      for (std::size_t d = 0; d < D; ++d)
        spec.complex_data()[(d * T + t) * F + f] = speech ? steer[f][d] * s : cplx(n(rng), n(rng));
      masks.real_data()[(1 * T + t) * F + f] = speech ? 1.0 : 0.0;
      masks.real_data()[(0 * T + t) * F + f] = speech ? 0.0 : 1.0;
    }
  CHECK(select_speech_class(spec, masks) == 1);
  auto e = enhance(spec, masks);
  CHECK(e.speech_class == 1);
  CHECK(e.output.shape() == Shape{T, F});
  CHECK(enhance(spec, masks, 0).speech_class == 0);
}
