#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <random>

#include "beamlearn/autodiff.hpp"
#include "beamlearn/hermitian.hpp"
#include "doctest.h"
#include "graph_cases.hpp"
#include "test_support.hpp"

using namespace beamlearn;
using namespace testing;
using ad::Tape;
using ad::Var;

namespace {

using CMat = Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

CMat to_eigen(const std::vector<cplx>& v, std::size_t D) {
  CMat m(D, D);
  for (std::size_t i = 0; i < D; ++i)
    for (std::size_t j = 0; j < D; ++j) m(i, j) = v[i * D + j];
  return m;
}

}  // namespace

TEST_CASE("trivial forward values") {
  Tape tape;
  Var z = tape.constant(Tensor::complex({}, {cplx(1, 2)}));
  auto p = ad::mul(z, ad::conj(z)).value().complex_data()[0];
  CHECK(p.real() == doctest::Approx(5.0));
  CHECK(p.imag() == 0.0);

  Var I = tape.constant(Tensor::complex({2, 2}, {1, 0, 0, 1}));
  Var v = tape.constant(Tensor::complex({2, 1}, {cplx(0.3, -1), cplx(2, 0.5)}));
  auto mv = ad::matmul(I, v).value().complex_data();
  CHECK(mv[0] == cplx(0.3, -1));
  CHECK(mv[1] == cplx(2, 0.5));

  Var B = tape.constant(Tensor::complex({2, 2}, {2, 0, 0, 3}));
  CHECK(ad::log_det_hermitian(B).value().item() == doctest::Approx(std::log(6.0)).epsilon(1e-9));
}

TEST_CASE("hermitian_solve examples") {
  Tape tape;
  auto u1 = ad::hermitian_solve(tape.constant(Tensor::complex({2, 2}, {1, 0, 0, 1})),
                                tape.constant(Tensor::complex({2}, {cplx(1, 0), cplx(0, 1)})))
                .value()
                .complex_data();
  CHECK(std::abs(u1[0] - cplx(1, 0)) < 1e-9);
  CHECK(std::abs(u1[1] - cplx(0, 1)) < 1e-9);

  auto u2 = ad::hermitian_solve(tape.constant(Tensor::complex({2, 2}, {2, 0, 0, 4})),
                                tape.constant(Tensor::complex({2}, {2, 4})))
                .value()
                .complex_data();
  CHECK(std::abs(u2[0] - 1.0) < 1e-9);
  CHECK(std::abs(u2[1] - 1.0) < 1e-9);

  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t D = 2 + trial % 5;
    auto B = random_pd(D, rng);
    Tensor v = random_complex({D}, rng);
    auto u = ad::hermitian_solve(tape.constant(Tensor::complex({D, D}, B)), tape.constant(v)).value().complex_data();
    CMat Be = to_eigen(B, D);
    Eigen::VectorXcd ve(D), ue(D);
    for (std::size_t i = 0; i < D; ++i) {
      ve(i) = v.complex_data()[i];
      ue(i) = u[i];
    }
    CMat Br = Be;
    Br.diagonal().array() += herm::kRegularization * Be.trace().real() / static_cast<double>(D);
    // dense-inverse oracle on the loaded matrix
    Eigen::VectorXcd ref = Br.inverse() * ve;
    CHECK((ue - ref).norm() <= 1e-10 * ref.norm());
    CHECK((Br * ue - ve).norm() <= 1e-10 * ve.norm());
  }
}

TEST_CASE("Wirtinger gradient examples") {
  Tape tape;
  Var x = tape.parameter(Tensor::scalar(1.0));
  Var y = tape.parameter(Tensor::scalar(2.0));
  Var loss = ad::abs2(ad::make_complex(x, y));
  auto g = tape.backward(loss);
  CHECK(g.at(x.id()).item() == doctest::Approx(2.0));
  CHECK(g.at(y.id()).item() == doctest::Approx(4.0));

  // d ln det B at B = I: real-leaf gradients are 2 Re / 2 Im of dl/dB*.
  for (std::size_t D : {1u, 2u, 4u}) {
    Tape t2;
    std::vector<double> eye(D * D, 0.0);
    for (std::size_t i = 0; i < D; ++i) eye[i * D + i] = 1.0;
    Var re = t2.parameter(Tensor::real({D, D}, eye));
    Var im = t2.parameter(Tensor::real({D, D}, std::vector<double>(D * D, 0.0)));
    auto gd = t2.backward(ad::log_det_hermitian(ad::make_complex(re, im)));
    auto gre = gd.at(re.id()).real_data();
    auto gim = gd.at(im.id()).real_data();
    for (std::size_t i = 0; i < D; ++i)
      for (std::size_t j = 0; j < D; ++j) {
        CHECK(gre[i * D + j] == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-8));
        CHECK(std::abs(gim[i * D + j]) < 1e-12);
      }
  }
}

TEST_CASE("errors are reported") {
  Tape tape;
  Var a = tape.constant(Tensor::real({2, 3}, std::vector<double>(6, 1.0)));
  Var b = tape.constant(Tensor::real({3, 2}, std::vector<double>(6, 1.0)));
  try {
    ad::add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("(2, 3)") != std::string::npos);
    CHECK(std::string(e.what()).find("(3, 2)") != std::string::npos);
  }
  CHECK_THROWS_AS(ad::matmul(a, a), ShapeError);

  Var nh = tape.constant(Tensor::complex({2, 2}, {1, cplx(0.5, 0), cplx(0.2, 0), 1}));
  CHECK_THROWS_AS(ad::log_det_hermitian(nh), std::invalid_argument);
  Var nd = tape.constant(Tensor::complex({2, 2, 2}, {1, 0, 0, 1, 1, 2, 2, 1}));
  try {
    ad::log_det_hermitian(nd);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("matrix 1") != std::string::npos);
  }

  Var p = tape.parameter(Tensor::real({2}, {1.0, 2.0}));
  CHECK_THROWS_AS(tape.backward(p), ShapeError);
  Var zc = ad::make_complex(ad::sum_all(p), ad::sum_all(p));
  CHECK_THROWS_AS(tape.backward(zc), ShapeError);
  CHECK_THROWS_AS(tape.parameter(Tensor::complex({1}, {cplx(1, 1)})), ShapeError);
}

TEST_CASE("unreached parameters get zero gradients") {
  Tape tape;
  Var p = tape.parameter(Tensor::real({2}, {1.0, 2.0}));
  Var q = tape.parameter(Tensor::real({3}, {1.0, 2.0, 3.0}));
  auto g = tape.backward(ad::sum_all(ad::mul(p, p)));
  REQUIRE(g.size() == 2);
  for (double v : g.at(q.id()).real_data()) CHECK(v == 0.0);
}

TEST_CASE("gradients match finite differences on random graphs") {
  int graphs = 0;
  for (unsigned seed = 1; seed <= 3; ++seed) {
    for (CaseMaker make : kCaseMakers) {
      Case c = make(seed * 31 + static_cast<unsigned>(graphs));
      auto result = check_gradients(c.build, c.params, 1e-6, 1e-7);
      CAPTURE(graphs);
      CHECK(result.checked > 0);
      CHECK(result.max_rel_err < 1e-4);
      ++graphs;
    }
  }
  CHECK(graphs >= 20);
}

TEST_CASE("backward is pure") {
  Case c = mixture_case(5);
  Tape tape;
  std::vector<Var> vars;
  for (const auto& p : c.params) vars.push_back(tape.parameter(p));
  Var loss = c.build(tape, vars);
  auto g1 = tape.backward(loss);
  auto g2 = tape.backward(loss);
  for (const auto& [id, t] : g1) {
    auto a = t.real_data();
    auto b = g2.at(id).real_data();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  }
}

TEST_CASE("holomorphic primitives agree with the split real path") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<Tensor> params;
    for (int i = 0; i < 4; ++i) params.push_back(random_real({2, 2}, rng));
    Tensor w = random_real({2, 2}, rng);

    // complex path: |A B|^2 weighted, and elementwise |a b|^2
    Tape t1;
    std::vector<Var> v1;
    for (auto& p : params) v1.push_back(t1.parameter(p));
    Var A = ad::make_complex(v1[0], v1[1]);
    Var B = ad::make_complex(v1[2], v1[3]);
    Var W = t1.constant(w);
    Var l1 = ad::add(ad::sum_all(ad::mul(ad::abs2(ad::matmul(A, B)), W)), ad::sum_all(ad::mul(ad::abs2(ad::mul(A, B)), W)));
    auto g1 = t1.backward(l1);

    // split path: only real arithmetic
    Tape t2;
    std::vector<Var> v2;
    for (auto& p : params) v2.push_back(t2.parameter(p));
    Var ar = v2[0], ai = v2[1], br = v2[2], bi = v2[3];
    Var mr = ad::sub(ad::matmul(ar, br), ad::matmul(ai, bi));
    Var mi = ad::add(ad::matmul(ar, bi), ad::matmul(ai, br));
    Var er = ad::sub(ad::mul(ar, br), ad::mul(ai, bi));
    Var ei = ad::add(ad::mul(ar, bi), ad::mul(ai, br));
    Var W2 = t2.constant(w);
    Var l2 = ad::add(ad::sum_all(ad::mul(ad::add(ad::mul(mr, mr), ad::mul(mi, mi)), W2)),
                     ad::sum_all(ad::mul(ad::add(ad::mul(er, er), ad::mul(ei, ei)), W2)));
    auto g2 = t2.backward(l2);

    CHECK(l1.value().item() == doctest::Approx(l2.value().item()).epsilon(1e-12));
    for (std::size_t i = 0; i < 4; ++i) {
      auto a = g1.at(v1[i].id()).real_data();
      auto b = g2.at(v2[i].id()).real_data();
      for (std::size_t j = 0; j < a.size(); ++j) CHECK(std::abs(a[j] - b[j]) < 1e-10);
    }
  }
}

TEST_CASE("quadratic form is real and positive") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t D = 1 + trial % 6;
    auto B = random_pd(D, rng);
    auto y = random_unit(D, rng);
    Tape tape;
    double q = ad::quadratic_form(tape.constant(Tensor::complex({D}, y)), tape.constant(Tensor::complex({D, D}, B)))
                   .value()
                   .item();
    CMat Be = to_eigen(B, D);
    Eigen::VectorXcd ye(D);
    for (std::size_t i = 0; i < D; ++i) ye(i) = y[i];
    const cplx direct = (ye.adjoint() * Be.inverse() * ye)(0, 0);
    CHECK(q > 0.0);
    CHECK(std::abs(direct.imag()) < 1e-12 * direct.real());
    CHECK(q == doctest::Approx(direct.real()).epsilon(1e-9));
  }
}
