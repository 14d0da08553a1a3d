#include "beamlearn/hermitian.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace beamlearn::herm {

double hermitian_defect(std::span<const cplx> B, std::size_t D) {
  double scale = 0.0, defect = 0.0;
  for (std::size_t i = 0; i < D; ++i)
    for (std::size_t j = 0; j < D; ++j) {
      scale = std::max(scale, std::abs(B[i * D + j]));
      defect = std::max(defect, std::abs(B[i * D + j] - std::conj(B[j * D + i])));
    }
  return scale > 0.0 ? defect / scale : 0.0;
}

double trace(std::span<const cplx> B, std::size_t D) {
  double tr = 0.0;
  for (std::size_t i = 0; i < D; ++i) tr += B[i * D + i].real();
  return tr;
}

void regularize(std::span<const cplx> B, std::size_t D, std::span<cplx> out, double eps) {
  const double load = eps * trace(B, D) / static_cast<double>(D);
  std::copy(B.begin(), B.begin() + static_cast<std::ptrdiff_t>(D * D), out.begin());
  for (std::size_t i = 0; i < D; ++i) out[i * D + i] += load;
}

bool cholesky(std::span<const cplx> B, std::size_t D, std::span<cplx> L, double eps) {
  const double load = eps * trace(B, D) / static_cast<double>(D);
  std::fill(L.begin(), L.begin() + static_cast<std::ptrdiff_t>(D * D), cplx{});
  for (std::size_t j = 0; j < D; ++j) {
    double d = B[j * D + j].real() + load;
    for (std::size_t k = 0; k < j; ++k) d -= std::norm(L[j * D + k]);
    if (!(d > 0.0) || !std::isfinite(d)) return false;
    const double ljj = std::sqrt(d);
    L[j * D + j] = ljj;
    for (std::size_t i = j + 1; i < D; ++i) {
      cplx s = B[i * D + j];
      for (std::size_t k = 0; k < j; ++k) s -= L[i * D + k] * std::conj(L[j * D + k]);
      L[i * D + j] = s / ljj;
    }
  }
  return true;
}

void forward_substitute(std::span<const cplx> L, std::size_t D, std::span<cplx> b) {
  for (std::size_t i = 0; i < D; ++i) {
    cplx s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= L[i * D + k] * b[k];
    b[i] = s / L[i * D + i].real();
  }
}

void backward_substitute(std::span<const cplx> L, std::size_t D, std::span<cplx> z) {
  for (std::size_t ii = D; ii-- > 0;) {
    cplx s = z[ii];
    for (std::size_t k = ii + 1; k < D; ++k) s -= std::conj(L[k * D + ii]) * z[k];
    z[ii] = s / L[ii * D + ii].real();
  }
}

void cholesky_solve(std::span<const cplx> L, std::size_t D, std::span<cplx> b) {
  forward_substitute(L, D, b);
  backward_substitute(L, D, b);
}

double log_det(std::span<const cplx> L, std::size_t D) {
  double s = 0.0;
  for (std::size_t i = 0; i < D; ++i) s += std::log(L[i * D + i].real());
  return 2.0 * s;
}

void inverse(std::span<const cplx> L, std::size_t D, std::span<cplx> out) {
  std::vector<cplx> col(D);
  for (std::size_t j = 0; j < D; ++j) {
    std::fill(col.begin(), col.end(), cplx{});
    col[j] = 1.0;
    cholesky_solve(L, D, col);
    for (std::size_t i = 0; i < D; ++i) out[i * D + j] = col[i];
  }
}

double inverse_quadratic_form(std::span<const cplx> L, std::size_t D, std::span<const cplx> y) {
  double q = 0.0;
  cplx z[16];
  std::vector<cplx> heap;
  cplx* buf = z;
  if (D > 16) {
    heap.resize(D);
    buf = heap.data();
  }
  for (std::size_t i = 0; i < D; ++i) {
    cplx s = y[i];
    for (std::size_t k = 0; k < i; ++k) s -= L[i * D + k] * buf[k];
    buf[i] = s / L[i * D + i].real();
    q += std::norm(buf[i]);
  }
  return q;
}

EigenDecomposition jacobi_eigh(std::span<const cplx> A_in, std::size_t D, double tol, int max_sweeps) {
  std::vector<cplx> A(A_in.begin(), A_in.begin() + static_cast<std::ptrdiff_t>(D * D));
  // Work on the Hermitian part so slightly asymmetric rounding does not bias rotations.
  for (std::size_t i = 0; i < D; ++i) {
    A[i * D + i] = A[i * D + i].real();
    for (std::size_t j = i + 1; j < D; ++j) {
      const cplx h = 0.5 * (A[i * D + j] + std::conj(A[j * D + i]));
      A[i * D + j] = h;
      A[j * D + i] = std::conj(h);
    }
  }
  std::vector<cplx> V(D * D, cplx{});
  for (std::size_t i = 0; i < D; ++i) V[i * D + i] = 1.0;

  double fro = 0.0;
  for (const auto& a : A) fro += std::norm(a);
  fro = std::sqrt(fro);

  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < D; ++i)
      for (std::size_t j = 0; j < D; ++j)
        if (i != j) s += std::norm(A[i * D + j]);
    return std::sqrt(s);
  };

  int sweep = 0;
  for (; sweep < max_sweeps; ++sweep) {
    if (off_norm() <= tol * fro) break;
    for (std::size_t p = 0; p + 1 < D; ++p) {
      for (std::size_t q = p + 1; q < D; ++q) {
        const cplx h = A[p * D + q];
        const double mag = std::abs(h);
        if (mag == 0.0) continue;
        const cplx phase = std::conj(h) / mag;  // e^{-j arg h}
        const double a = A[p * D + p].real();
        const double b = A[q * D + q].real();
        const double theta = (b - a) / (2.0 * mag);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        // J restricted to (p, q) = diag(1, phase) * [[c, s], [-s, c]]
        const cplx jpp = c, jpq = s, jqp = -s * phase, jqq = c * phase;
        for (std::size_t i = 0; i < D; ++i) {
          const cplx aip = A[i * D + p], aiq = A[i * D + q];
          A[i * D + p] = aip * jpp + aiq * jqp;
          A[i * D + q] = aip * jpq + aiq * jqq;
          const cplx vip = V[i * D + p], viq = V[i * D + q];
          V[i * D + p] = vip * jpp + viq * jqp;
          V[i * D + q] = vip * jpq + viq * jqq;
        }
        for (std::size_t j = 0; j < D; ++j) {
          const cplx apj = A[p * D + j], aqj = A[q * D + j];
          A[p * D + j] = std::conj(jpp) * apj + std::conj(jqp) * aqj;
          A[q * D + j] = std::conj(jpq) * apj + std::conj(jqq) * aqj;
        }
        A[p * D + q] = 0.0;
        A[q * D + p] = 0.0;
        A[p * D + p] = A[p * D + p].real();
        A[q * D + q] = A[q * D + q].real();
      }
    }
  }

  std::vector<std::size_t> order(D);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return A[i * D + i].real() < A[j * D + j].real(); });
  EigenDecomposition out;
  out.sweeps = sweep;
  out.values.resize(D);
  out.vectors.resize(D * D);
  for (std::size_t k = 0; k < D; ++k) {
    out.values[k] = A[order[k] * D + order[k]].real();
    for (std::size_t i = 0; i < D; ++i) out.vectors[i * D + k] = V[i * D + order[k]];
  }
  return out;
}

}  // namespace beamlearn::herm
