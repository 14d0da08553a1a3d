#pragma once

// Small dense kernels for D x D Hermitian matrices (D is the microphone
// count, so everything here is written for D <= ~16). Matrices are row-major
// spans of D*D complex values.

#include <span>
#include <vector>

#include "beamlearn/tensor.hpp"

namespace beamlearn::herm {

/// Diagonal loading B + eps * tr(B) / D * I applied before every factorization.
inline constexpr double kRegularization = 1e-10;

/// Max |B - B^H| relative to max |B| (0 for the zero matrix).
double hermitian_defect(std::span<const cplx> B, std::size_t D);

double trace(std::span<const cplx> B, std::size_t D);

/// Copies B into out with the diagonal loading applied.
void regularize(std::span<const cplx> B, std::size_t D, std::span<cplx> out, double eps = kRegularization);

/// Lower Cholesky factor of the regularized B (lower triangle of B is read).
/// Returns false when the loaded matrix is not positive definite.
bool cholesky(std::span<const cplx> B, std::size_t D, std::span<cplx> L, double eps = kRegularization);

/// In-place L z = b.
void forward_substitute(std::span<const cplx> L, std::size_t D, std::span<cplx> b);
/// In-place L^H x = z.
void backward_substitute(std::span<const cplx> L, std::size_t D, std::span<cplx> z);
/// In-place (L L^H) x = b.
void cholesky_solve(std::span<const cplx> L, std::size_t D, std::span<cplx> b);

/// ln det(L L^H) = 2 sum ln L_ii.
double log_det(std::span<const cplx> L, std::size_t D);

/// (L L^H)^{-1}, full Hermitian matrix.
void inverse(std::span<const cplx> L, std::size_t D, std::span<cplx> out);

/// y^H (L L^H)^{-1} y, i.e. ||L^{-1} y||^2.
double inverse_quadratic_form(std::span<const cplx> L, std::size_t D, std::span<const cplx> y);

struct EigenDecomposition {
  std::vector<double> values;  // ascending
  std::vector<cplx> vectors;   // row-major D x D, column i pairs with values[i]
  int sweeps = 0;
};

/// Cyclic complex Jacobi eigen-solver for Hermitian A. Stops when the
/// off-diagonal Frobenius norm drops below tol * ||A||_F.
EigenDecomposition jacobi_eigh(std::span<const cplx> A, std::size_t D, double tol = 1e-12, int max_sweeps = 100);

}  // namespace beamlearn::herm
