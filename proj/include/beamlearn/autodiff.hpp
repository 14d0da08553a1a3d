#pragma once

// Reverse-mode automatic differentiation over real64 / complex128 tensors.
//
// Cotangent convention: for a real scalar loss l, every complex node z carries
// dl/dz* (Wirtinger derivative with respect to the conjugate) and every real
// node x carries dl/dx. For z = x + jy this gives dl/dx = 2 Re(dl/dz*) and
// dl/dy = 2 Im(dl/dz*). Primitives that consume Hermitian matrices return the
// Hermitian part of their matrix cotangent; under this convention
// d ln det B = Re tr(B^{-1} dB) yields dl/dB* = B^{-1} / 2.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <string_view>
#include <vector>

#include "beamlearn/tensor.hpp"

namespace beamlearn::ad {

enum class Op : std::uint8_t {
  constant,
  parameter,
  add,
  sub,
  mul,
  div,
  scale,
  add_scalar,
  conj,
  abs2,
  real_part,
  imag_part,
  make_complex,
  matmul,
  linear,
  hermitian_transpose,
  sum,
  mean,
  sum_all,
  broadcast,
  reshape,
  permute,
  slice,
  concat,
  log,
  exp,
  sigmoid,
  tanh,
  relu,
  softmax,
  logsumexp,
  normalize_sum,
  clamp_min,
  l2_normalize,
  hermitian_solve,
  log_det_hermitian,
  quadratic_form,
  weighted_scatter,
  lstm,
};

std::string_view op_name(Op op);

class Tape;

/// Handle to a tape node. Cheap to copy; valid while its tape lives.
class Var {
 public:
  Var() = default;

  bool valid() const noexcept { return tape_ != nullptr; }
  std::size_t id() const noexcept { return id_; }
  Tape& tape() const;
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool is_complex() const { return value().is_complex(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// View handed to a node's backward function.
class BackwardContext {
 public:
  /// Cotangent of the node's output.
  const Tensor& grad() const;
  const Tensor& output() const;
  const Tensor& input(std::size_t i) const;
  bool needs_grad(std::size_t i) const;
  /// Accumulation buffer for input i, zero on first access.
  Tensor& input_grad(std::size_t i);

 private:
  friend class Tape;
  BackwardContext(const Tape& tape, std::size_t node, std::vector<Tensor>& cot, std::vector<char>& has)
      : tape_(tape), node_(node), cot_(cot), has_(has) {}
  const Tape& tape_;
  std::size_t node_;
  std::vector<Tensor>& cot_;
  std::vector<char>& has_;
};

using BackwardFn = std::function<void(BackwardContext&)>;

/// Parameter node id -> real gradient tensor.
using Gradients = std::map<std::size_t, Tensor>;

/// Append-only computation record. Single writer; backward() is const and may
/// be called repeatedly with identical results.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives a gradient.
  Var constant(Tensor value);
  /// Real leaf whose gradient backward() reports.
  Var parameter(Tensor value);
  /// Appends a node. `backward` may be empty for non-differentiable results.
  Var record(Op op, std::vector<Var> inputs, Tensor value, BackwardFn backward);

  std::size_t size() const noexcept { return nodes_.size(); }
  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  Op op(std::size_t id) const { return nodes_.at(id).op; }
  std::span<const std::size_t> inputs(std::size_t id) const { return nodes_.at(id).inputs; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const std::vector<std::size_t>& parameters() const noexcept { return parameters_; }

  /// Gradients of a real scalar node with respect to every parameter;
  /// parameters the loss does not reach get zeros.
  Gradients backward(Var loss) const;

 private:
  friend class BackwardContext;
  struct Node {
    Op op;
    std::vector<std::size_t> inputs;
    Tensor value;
    BackwardFn backward;
    bool requires_grad = false;
  };
  std::deque<Node> nodes_;
  std::vector<std::size_t> parameters_;
};

// ---- elementwise ---------------------------------------------------------
// Binary elementwise ops take equal shapes; a real operand is promoted when
// the other is complex.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var conj(Var a);
/// |a|^2, real output.
Var abs2(Var a);
Var real_part(Var a);
Var imag_part(Var a);
Var make_complex(Var re, Var im);
Var log(Var a);
Var exp(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);
/// max(a, floor); the gradient passes only where a > floor.
Var clamp_min(Var a, double floor);

// ---- linear algebra ------------------------------------------------------
/// 2-D matrix product; both operands real or both complex.
Var matmul(Var a, Var b);
/// x (N, in) * w (in, out) + b (out), real.
Var linear(Var x, Var w, Var b);
/// Conjugate transpose of the last two axes.
Var hermitian_transpose(Var a);

// ---- reductions and layout ----------------------------------------------
Var sum(Var a, std::size_t axis);
Var mean(Var a, std::size_t axis);
Var sum_all(Var a);
/// Inserts a new axis of length n at position `axis` by repetition.
Var broadcast(Var a, std::size_t axis, std::size_t n);
Var reshape(Var a, Shape shape);
/// out.shape[i] = a.shape[axes[i]].
Var permute(Var a, std::vector<std::size_t> axes);
Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end);
Var concat(std::span<const Var> parts, std::size_t axis);
/// Stacks equal-shape tensors along a new axis.
Var stack(std::span<const Var> parts, std::size_t axis);

// ---- real nonlinear reductions -------------------------------------------
Var softmax(Var a, std::size_t axis);
Var logsumexp(Var a, std::size_t axis);
/// a / (sum_axis a + eps).
Var normalize_sum(Var a, std::size_t axis, double eps);
/// Divides each vector along the last axis by its Euclidean norm; zero
/// vectors become (1, ..., 1) / sqrt(n) with zero gradient.
Var l2_normalize(Var a);

// ---- Hermitian primitives ------------------------------------------------
// All factorize B + eps * tr(B) / D * I (eps = herm::kRegularization) and
// differentiate through the loading. Inputs whose Hermitian defect exceeds
// 1e-10 (relative) are rejected.

/// B (..., D, D), v (..., D) -> B^{-1} v.
Var hermitian_solve(Var B, Var v);
/// B (..., D, D) -> ln det B, real.
Var log_det_hermitian(Var B);
/// y^H B^{-1} y, real. Shapes: y (D), B (D, D) -> scalar; or the mixture
/// layout y (T, F, D), B (K, F, D, D) -> (K, T, F).
Var quadratic_form(Var y, Var B);
/// sum_t w[k,t,f] * y[t,f] y[t,f]^H for w (K, T, F) real and y (T, F, D)
/// complex -> (K, F, D, D).
Var weighted_scatter(Var w, Var y);

// ---- recurrent -----------------------------------------------------------
/// LSTM recurrence over pre-activations pre (T, N, 4H) (gate order i, f, g, o;
/// input projection and bias already applied) with recurrent weights
/// U (H, 4H). Zero initial state. Returns hidden states (T, N, H); with
/// `reverse` the scan runs from t = T-1 down to 0.
Var lstm(Var pre, Var U, bool reverse);

}  // namespace beamlearn::ad
