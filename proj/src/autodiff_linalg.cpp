// Matrix products, Hermitian primitives and the LSTM scan.

#include <Eigen/Dense>
#include <cmath>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>

#include "autodiff_internal.hpp"
#include "beamlearn/autodiff.hpp"
#include "beamlearn/hermitian.hpp"

namespace beamlearn::ad {

using detail::ComplexReader;
using detail::GradSink;

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

template <class T>
ConstMapMat<T> view(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMapMat<T>(t.values<T>().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <class T>
MapMat<T> view(Tensor& t, std::size_t rows, std::size_t cols) {
  return MapMat<T>(t.values<T>().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

// Batch of square matrices (..., D, D) read as complex.
struct MatrixBatch {
  std::size_t count = 0;
  std::size_t D = 0;
};

MatrixBatch matrix_batch(const Tensor& B, const char* what) {
  if (B.rank() < 2 || B.shape()[B.rank() - 1] != B.shape()[B.rank() - 2])
    throw ShapeError(std::string(what) + ": expected (..., D, D), got " + to_string(B.shape()));
  MatrixBatch m;
  m.D = B.shape().back();
  m.count = m.D == 0 ? 0 : B.size() / (m.D * m.D);
  return m;
}

std::vector<cplx> as_complex(const Tensor& t) {
  ComplexReader r(t);
  std::vector<cplx> out(t.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = r[i];
  return out;
}

void check_hermitian(std::span<const cplx> B, std::size_t D, std::size_t index, const char* what) {
  const double defect = herm::hermitian_defect(B, D);
  if (defect > 1e-10)
    throw std::invalid_argument(std::string(what) + ": matrix " + std::to_string(index) +
                                " is not Hermitian (relative defect " + std::to_string(defect) + ")");
}

// Factorizes every matrix of the batch; throws naming the failing index.
std::vector<cplx> factorize_all(std::span<const cplx> B, const MatrixBatch& m, const char* what) {
  const std::size_t DD = m.D * m.D;
  std::vector<cplx> L(m.count * DD);
  for (std::size_t b = 0; b < m.count; ++b) {
    auto Bb = B.subspan(b * DD, DD);
    check_hermitian(Bb, m.D, b, what);
    if (!herm::cholesky(Bb, m.D, std::span<cplx>(L).subspan(b * DD, DD)))
      throw NumericalError(std::string(what) + ": matrix " + std::to_string(b) +
                           " is not positive definite after regularization");
  }
  return L;
}

// Converts the Hermitian cotangent of the loaded matrix into the cotangent of
// B itself and accumulates it.
void accumulate_through_loading(GradSink& sink, std::size_t offset, std::span<const cplx> Br_bar, std::size_t D) {
  cplx tr = 0.0;
  for (std::size_t i = 0; i < D; ++i) tr += Br_bar[i * D + i];
  const cplx extra = herm::kRegularization / static_cast<double>(D) * tr;
  for (std::size_t i = 0; i < D; ++i)
    for (std::size_t j = 0; j < D; ++j) sink.add(offset + i * D + j, Br_bar[i * D + j] + (i == j ? extra : 0.0));
}

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rank() != 2 || y.rank() != 2 || x.shape()[1] != y.shape()[0])
    throw ShapeError("matmul: incompatible shapes " + to_string(x.shape()) + " and " + to_string(y.shape()));
  if (x.dtype() != y.dtype()) throw ShapeError("matmul: operands must share a dtype");
  const std::size_t n = x.shape()[0], k = x.shape()[1], m = y.shape()[1];
  Tensor out(x.dtype(), {n, m});
  detail::dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    view<T>(out, n, m).noalias() = view<T>(x, n, k) * view<T>(y, k, m);
  });
  return a.tape().record(Op::matmul, {a, b}, std::move(out), [n, k, m](BackwardContext& ctx) {
    detail::dispatch(ctx.grad().dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto G = view<T>(ctx.grad(), n, m);
      if (ctx.needs_grad(0)) view<T>(ctx.input_grad(0), n, k).noalias() += G * view<T>(ctx.input(1), k, m).adjoint();
      if (ctx.needs_grad(1)) view<T>(ctx.input_grad(1), k, m).noalias() += view<T>(ctx.input(0), n, k).adjoint() * G;
    });
  });
}

Var linear(Var x, Var w, Var b) {
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  const Tensor& Bv = b.value();
  if (X.is_complex() || W.is_complex() || Bv.is_complex()) throw ShapeError("linear: real operands required");
  if (X.rank() != 2 || W.rank() != 2 || Bv.rank() != 1 || X.shape()[1] != W.shape()[0] || Bv.shape()[0] != W.shape()[1])
    throw ShapeError("linear: incompatible shapes x " + to_string(X.shape()) + ", w " + to_string(W.shape()) + ", b " +
                     to_string(Bv.shape()));
  const std::size_t n = X.shape()[0], in = X.shape()[1], out_dim = W.shape()[1];
  Tensor out(DType::real64, {n, out_dim});
  auto O = view<double>(out, n, out_dim);
  O.noalias() = view<double>(X, n, in) * view<double>(W, in, out_dim);
  O.rowwise() += view<double>(Bv, 1, out_dim).row(0);
  return x.tape().record(Op::linear, {x, w, b}, std::move(out), [n, in, out_dim](BackwardContext& ctx) {
    auto G = view<double>(ctx.grad(), n, out_dim);
    if (ctx.needs_grad(0))
      view<double>(ctx.input_grad(0), n, in).noalias() += G * view<double>(ctx.input(1), in, out_dim).transpose();
    if (ctx.needs_grad(1))
      view<double>(ctx.input_grad(1), in, out_dim).noalias() += view<double>(ctx.input(0), n, in).transpose() * G;
    if (ctx.needs_grad(2)) view<double>(ctx.input_grad(2), 1, out_dim) += G.colwise().sum();
  });
}

Var hermitian_transpose(Var a) {
  const Tensor& x = a.value();
  if (x.rank() < 2) throw ShapeError("hermitian_transpose: needs at least 2 axes, got " + to_string(x.shape()));
  const std::size_t r = x.shape()[x.rank() - 2], c = x.shape()[x.rank() - 1];
  const std::size_t count = r * c == 0 ? 0 : x.size() / (r * c);
  Shape shape = x.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  Tensor out(x.dtype(), shape);
  detail::dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xv = x.values<T>();
    auto o = out.values<T>();
    for (std::size_t b = 0; b < count; ++b)
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) {
          if constexpr (std::is_same_v<T, cplx>)
            o[b * r * c + j * r + i] = std::conj(xv[b * r * c + i * c + j]);
          else
            o[b * r * c + j * r + i] = xv[b * r * c + i * c + j];
        }
  });
  return a.tape().record(Op::hermitian_transpose, {a}, std::move(out), [count, r, c](BackwardContext& ctx) {
    detail::dispatch(ctx.grad().dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto g = ctx.grad().values<T>();
      auto ga = ctx.input_grad(0).values<T>();
      for (std::size_t b = 0; b < count; ++b)
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) {
            if constexpr (std::is_same_v<T, cplx>)
              ga[b * r * c + i * c + j] += std::conj(g[b * r * c + j * r + i]);
            else
              ga[b * r * c + i * c + j] += g[b * r * c + j * r + i];
          }
    });
  });
}

Var hermitian_solve(Var B, Var v) {
  const Tensor& Bt = B.value();
  const Tensor& vt = v.value();
  const MatrixBatch m = matrix_batch(Bt, "hermitian_solve");
  Shape expect(Bt.shape().begin(), Bt.shape().end() - 1);
  if (vt.shape() != expect)
    throw ShapeError("hermitian_solve: B " + to_string(Bt.shape()) + " needs v " + to_string(expect) + ", got " +
                     to_string(vt.shape()));
  const auto Bc = as_complex(Bt);
  auto L = std::make_shared<std::vector<cplx>>(factorize_all(Bc, m, "hermitian_solve"));
  Tensor out(DType::complex128, vt.shape());
  auto u = out.complex_data();
  ComplexReader vr(vt);
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = vr[i];
  const std::size_t D = m.D, DD = D * D;
  for (std::size_t b = 0; b < m.count; ++b)
    herm::cholesky_solve(std::span<const cplx>(*L).subspan(b * DD, DD), D, u.subspan(b * D, D));

  return B.tape().record(Op::hermitian_solve, {B, v}, std::move(out), [L, m](BackwardContext& ctx) {
    const std::size_t D = m.D, DD = D * D;
    auto g = ctx.grad().complex_data();
    auto u = ctx.output().complex_data();
    std::vector<cplx> a(g.begin(), g.end());
    for (std::size_t b = 0; b < m.count; ++b)
      herm::cholesky_solve(std::span<const cplx>(*L).subspan(b * DD, DD), D, std::span<cplx>(a).subspan(b * D, D));
    if (ctx.needs_grad(1)) {
      GradSink sv(ctx.input_grad(1));
      for (std::size_t i = 0; i < a.size(); ++i) sv.add(i, a[i]);
    }
    if (ctx.needs_grad(0)) {
      GradSink sb(ctx.input_grad(0));
      std::vector<cplx> Bbar(DD);
      for (std::size_t b = 0; b < m.count; ++b) {
        const cplx* ab = a.data() + b * D;
        const cplx* ub = u.data() + b * D;
        for (std::size_t i = 0; i < D; ++i)
          for (std::size_t j = 0; j < D; ++j)
            Bbar[i * D + j] = -0.5 * (ab[i] * std::conj(ub[j]) + ub[i] * std::conj(ab[j]));
        accumulate_through_loading(sb, b * DD, Bbar, D);
      }
    }
  });
}

Var log_det_hermitian(Var B) {
  const Tensor& Bt = B.value();
  const MatrixBatch m = matrix_batch(Bt, "log_det_hermitian");
  const auto Bc = as_complex(Bt);
  auto L = std::make_shared<std::vector<cplx>>(factorize_all(Bc, m, "log_det_hermitian"));
  Tensor out(DType::real64, Shape(Bt.shape().begin(), Bt.shape().end() - 2));
  auto o = out.real_data();
  const std::size_t D = m.D, DD = D * D;
  for (std::size_t b = 0; b < m.count; ++b) o[b] = herm::log_det(std::span<const cplx>(*L).subspan(b * DD, DD), D);

  return B.tape().record(Op::log_det_hermitian, {B}, std::move(out), [L, m](BackwardContext& ctx) {
    const std::size_t D = m.D, DD = D * D;
    auto g = ctx.grad().real_data();
    GradSink sb(ctx.input_grad(0));
    std::vector<cplx> inv(DD);
    for (std::size_t b = 0; b < m.count; ++b) {
      herm::inverse(std::span<const cplx>(*L).subspan(b * DD, DD), D, inv);
      for (auto& x : inv) x *= 0.5 * g[b];
      accumulate_through_loading(sb, b * DD, inv, D);
    }
  });
}

Var quadratic_form(Var y, Var B) {
  const Tensor& yt = y.value();
  const Tensor& Bt = B.value();
  const MatrixBatch m = matrix_batch(Bt, "quadratic_form");
  const std::size_t D = m.D, DD = D * D;

  // Mixture layout: y (T, F, D), B (K, F, D, D) -> (K, T, F). Single: y (D), B (D, D).
  std::size_t K = 1, T = 1, F = 1;
  Shape out_shape;
  if (yt.rank() == 1 && Bt.rank() == 2) {
    if (yt.shape()[0] != D)
      throw ShapeError("quadratic_form: y " + to_string(yt.shape()) + " does not match B " + to_string(Bt.shape()));
  } else if (yt.rank() == 3 && Bt.rank() == 4) {
    T = yt.shape()[0];
    F = yt.shape()[1];
    K = Bt.shape()[0];
    if (yt.shape()[2] != D || Bt.shape()[1] != F)
      throw ShapeError("quadratic_form: y " + to_string(yt.shape()) + " does not match B " + to_string(Bt.shape()));
    out_shape = {K, T, F};
  } else {
    throw ShapeError("quadratic_form: unsupported shapes y " + to_string(yt.shape()) + ", B " + to_string(Bt.shape()));
  }

  const auto Bc = as_complex(Bt);
  const auto L = factorize_all(Bc, m, "quadratic_form");
  const auto yc = as_complex(yt);
  // u = B_r^{-1} y for every (k, t, f), kept for the backward pass.
  auto U = std::make_shared<std::vector<cplx>>(K * T * F * D);
  Tensor out(DType::real64, out_shape);
  auto o = out.real_data();
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t f = 0; f < F; ++f) {
      std::span<const cplx> Lkf(L.data() + (k * F + f) * DD, DD);
      for (std::size_t t = 0; t < T; ++t) {
        const cplx* yv = yc.data() + (t * F + f) * D;
        cplx* u = U->data() + ((k * T + t) * F + f) * D;
        std::copy(yv, yv + D, u);
        herm::cholesky_solve(Lkf, D, std::span<cplx>(u, D));
        double q = 0.0;
        for (std::size_t i = 0; i < D; ++i) q += (std::conj(yv[i]) * u[i]).real();
        o[(k * T + t) * F + f] = q;
      }
    }

  return y.tape().record(Op::quadratic_form, {y, B}, std::move(out), [U, K, T, F, D](BackwardContext& ctx) {
    const std::size_t DD = D * D;
    auto g = ctx.grad().real_data();
    if (ctx.needs_grad(0)) {
      GradSink sy(ctx.input_grad(0));
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t t = 0; t < T; ++t)
          for (std::size_t f = 0; f < F; ++f) {
            const double gq = g[(k * T + t) * F + f];
            const cplx* u = U->data() + ((k * T + t) * F + f) * D;
            for (std::size_t i = 0; i < D; ++i) sy.add((t * F + f) * D + i, gq * u[i]);
          }
    }
    if (ctx.needs_grad(1)) {
      GradSink sb(ctx.input_grad(1));
      std::vector<cplx> Bbar(DD);
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t f = 0; f < F; ++f) {
          std::fill(Bbar.begin(), Bbar.end(), cplx{});
          for (std::size_t t = 0; t < T; ++t) {
            const double gq = -0.5 * g[(k * T + t) * F + f];
            if (gq == 0.0) continue;
            const cplx* u = U->data() + ((k * T + t) * F + f) * D;
            for (std::size_t i = 0; i < D; ++i)
              for (std::size_t j = 0; j < D; ++j) Bbar[i * D + j] += gq * u[i] * std::conj(u[j]);
          }
          accumulate_through_loading(sb, (k * F + f) * DD, Bbar, D);
        }
    }
  });
}

Var weighted_scatter(Var w, Var y) {
  const Tensor& wt = w.value();
  const Tensor& yt = y.value();
  if (wt.is_complex()) throw ShapeError("weighted_scatter: weights must be real");
  if (wt.rank() != 3 || yt.rank() != 3 || wt.shape()[1] != yt.shape()[0] || wt.shape()[2] != yt.shape()[1])
    throw ShapeError("weighted_scatter: w " + to_string(wt.shape()) + " (K, T, F) does not match y " +
                     to_string(yt.shape()) + " (T, F, D)");
  const std::size_t K = wt.shape()[0], T = wt.shape()[1], F = wt.shape()[2], D = yt.shape()[2];
  const auto yc = as_complex(yt);
  auto wv = wt.real_data();
  Tensor out(DType::complex128, {K, F, D, D});
  auto S = out.complex_data();
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t f = 0; f < F; ++f) {
      cplx* Skf = S.data() + (k * F + f) * D * D;
      for (std::size_t t = 0; t < T; ++t) {
        const double wk = wv[(k * T + t) * F + f];
        const cplx* yv = yc.data() + (t * F + f) * D;
        for (std::size_t i = 0; i < D; ++i)
          for (std::size_t j = 0; j < D; ++j) Skf[i * D + j] += wk * yv[i] * std::conj(yv[j]);
      }
    }

  return w.tape().record(Op::weighted_scatter, {w, y}, std::move(out), [K, T, F, D](BackwardContext& ctx) {
    const std::size_t DD = D * D;
    auto C = ctx.grad().complex_data();
    const auto yc = as_complex(ctx.input(1));
    auto wv = ctx.input(0).real_data();
    const bool need_w = ctx.needs_grad(0), need_y = ctx.needs_grad(1);
    double* gw = need_w ? ctx.input_grad(0).real_data().data() : nullptr;
    std::optional<GradSink> sy;
    if (need_y) sy.emplace(ctx.input_grad(1));
    std::vector<cplx> Cy(D), CHy(D);
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t f = 0; f < F; ++f) {
        const cplx* Ckf = C.data() + (k * F + f) * DD;
        for (std::size_t t = 0; t < T; ++t) {
          const cplx* yv = yc.data() + (t * F + f) * D;
          for (std::size_t i = 0; i < D; ++i) {
            cplx a = 0.0, b = 0.0;
            for (std::size_t j = 0; j < D; ++j) {
              a += Ckf[i * D + j] * yv[j];
              b += std::conj(Ckf[j * D + i]) * yv[j];
            }
            Cy[i] = a;
            CHy[i] = b;
          }
          const std::size_t wi = (k * T + t) * F + f;
          if (need_w) {
            double s = 0.0;
            for (std::size_t i = 0; i < D; ++i) s += (std::conj(yv[i]) * Cy[i]).real();
            gw[wi] += 2.0 * s;
          }
          if (need_y)
            for (std::size_t i = 0; i < D; ++i) sy->add((t * F + f) * D + i, wv[wi] * (Cy[i] + CHy[i]));
        }
      }
  });
}

Var lstm(Var pre, Var U, bool reverse) {
  const Tensor& P = pre.value();
  const Tensor& Ut = U.value();
  if (P.is_complex() || Ut.is_complex()) throw ShapeError("lstm: real operands required");
  if (P.rank() != 3 || Ut.rank() != 2 || Ut.shape()[1] != 4 * Ut.shape()[0] || P.shape()[2] != Ut.shape()[1])
    throw ShapeError("lstm: pre " + to_string(P.shape()) + " (T, N, 4H) does not match U " + to_string(Ut.shape()) +
                     " (H, 4H)");
  const std::size_t T = P.shape()[0], N = P.shape()[1], H = Ut.shape()[0], G4 = 4 * H;

  // Activated gates (T, N, 4H) and cell states (T, N, H) for the backward pass.
  auto gates = std::make_shared<std::vector<double>>(T * N * G4);
  auto cells = std::make_shared<std::vector<double>>(T * N * H);
  Tensor out(DType::real64, {T, N, H});
  auto Um = view<double>(Ut, H, G4);
  RowMat<double> z(N, G4);
  RowMat<double> h = RowMat<double>::Zero(N, H);
  RowMat<double> c = RowMat<double>::Zero(N, H);
  auto sig = [](double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); };
  for (std::size_t s = 0; s < T; ++s) {
    const std::size_t t = reverse ? T - 1 - s : s;
    z = ConstMapMat<double>(P.real_data().data() + t * N * G4, N, G4);
    z.noalias() += h * Um;
    double* gt = gates->data() + t * N * G4;
    double* ct = cells->data() + t * N * H;
    double* ht = out.real_data().data() + t * N * H;
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t j = 0; j < H; ++j) {
        const double ig = sig(z(n, j));
        const double fg = sig(z(n, H + j));
        const double gg = std::tanh(z(n, 2 * H + j));
        const double og = sig(z(n, 3 * H + j));
        const double cn = fg * c(n, j) + ig * gg;
        const double hn = og * std::tanh(cn);
        gt[n * G4 + j] = ig;
        gt[n * G4 + H + j] = fg;
        gt[n * G4 + 2 * H + j] = gg;
        gt[n * G4 + 3 * H + j] = og;
        c(n, j) = cn;
        h(n, j) = hn;
        ct[n * H + j] = cn;
        ht[n * H + j] = hn;
      }
    }
  }

  return pre.tape().record(Op::lstm, {pre, U}, std::move(out), [gates, cells, T, N, H, reverse](BackwardContext& ctx) {
    const std::size_t G4 = 4 * H;
    auto Um = view<double>(ctx.input(1), H, G4);
    auto hv = ctx.output().real_data();
    auto g = ctx.grad().real_data();
    const bool need_pre = ctx.needs_grad(0), need_U = ctx.needs_grad(1);
    double* gpre = need_pre ? ctx.input_grad(0).real_data().data() : nullptr;
    RowMat<double> dU = RowMat<double>::Zero(H, G4);
    RowMat<double> dz(N, G4);
    RowMat<double> dh_next = RowMat<double>::Zero(N, H);
    RowMat<double> dc_next = RowMat<double>::Zero(N, H);
    for (std::size_t s = T; s-- > 0;) {
      const std::size_t t = reverse ? T - 1 - s : s;
      const bool first = s == 0;
      const std::size_t tp = reverse ? t + 1 : t - 1;  // previous step in scan order
      const double* gt = gates->data() + t * N * G4;
      const double* ct = cells->data() + t * N * H;
      const double* cp = first ? nullptr : cells->data() + tp * N * H;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t j = 0; j < H; ++j) {
          const double ig = gt[n * G4 + j], fg = gt[n * G4 + H + j];
          const double gg = gt[n * G4 + 2 * H + j], og = gt[n * G4 + 3 * H + j];
          const double dh = g[(t * N + n) * H + j] + dh_next(n, j);
          const double tc = std::tanh(ct[n * H + j]);
          const double dc = dh * og * (1.0 - tc * tc) + dc_next(n, j);
          const double cprev = first ? 0.0 : cp[n * H + j];
          dz(n, j) = dc * gg * ig * (1.0 - ig);
          dz(n, H + j) = dc * cprev * fg * (1.0 - fg);
          dz(n, 2 * H + j) = dc * ig * (1.0 - gg * gg);
          dz(n, 3 * H + j) = dh * tc * og * (1.0 - og);
          dc_next(n, j) = dc * fg;
        }
      if (gpre) {
        MapMat<double>(gpre + t * N * G4, N, G4) += dz;
      }
      if (!first) {
        auto hprev = ConstMapMat<double>(hv.data() + tp * N * H, N, H);
        if (need_U) dU.noalias() += hprev.transpose() * dz;
        dh_next.noalias() = dz * Um.transpose();
      }
    }
    if (need_U) view<double>(ctx.input_grad(1), H, G4) += dU;
  });
}

}  // namespace beamlearn::ad
