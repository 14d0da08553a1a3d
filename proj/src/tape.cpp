#include <algorithm>
#include <stdexcept>

#include "beamlearn/autodiff.hpp"

namespace beamlearn::ad {

std::string_view op_name(Op op) {
  switch (op) {
    case Op::constant: return "constant";
    case Op::parameter: return "parameter";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::div: return "div";
    case Op::scale: return "scale";
    case Op::add_scalar: return "add_scalar";
    case Op::conj: return "conj";
    case Op::abs2: return "abs2";
    case Op::real_part: return "real_part";
    case Op::imag_part: return "imag_part";
    case Op::make_complex: return "make_complex";
    case Op::matmul: return "matmul";
    case Op::linear: return "linear";
    case Op::hermitian_transpose: return "hermitian_transpose";
    case Op::sum: return "sum";
    case Op::mean: return "mean";
    case Op::sum_all: return "sum_all";
    case Op::broadcast: return "broadcast";
    case Op::reshape: return "reshape";
    case Op::permute: return "permute";
    case Op::slice: return "slice";
    case Op::concat: return "concat";
    case Op::log: return "log";
    case Op::exp: return "exp";
    case Op::sigmoid: return "sigmoid";
    case Op::tanh: return "tanh";
    case Op::relu: return "relu";
    case Op::softmax: return "softmax";
    case Op::logsumexp: return "logsumexp";
    case Op::normalize_sum: return "normalize_sum";
    case Op::clamp_min: return "clamp_min";
    case Op::l2_normalize: return "l2_normalize";
    case Op::hermitian_solve: return "hermitian_solve";
    case Op::log_det_hermitian: return "log_det_hermitian";
    case Op::quadratic_form: return "quadratic_form";
    case Op::weighted_scatter: return "weighted_scatter";
    case Op::lstm: return "lstm";
  }
  return "unknown";
}

Tape& Var::tape() const {
  if (!tape_) throw std::logic_error("use of an empty Var");
  return *tape_;
}

const Tensor& Var::value() const { return tape().value(id_); }

const Tensor& BackwardContext::grad() const { return cot_[node_]; }

const Tensor& BackwardContext::output() const { return tape_.nodes_[node_].value; }

const Tensor& BackwardContext::input(std::size_t i) const {
  return tape_.nodes_[tape_.nodes_[node_].inputs.at(i)].value;
}

bool BackwardContext::needs_grad(std::size_t i) const {
  return tape_.nodes_[tape_.nodes_[node_].inputs.at(i)].requires_grad;
}

Tensor& BackwardContext::input_grad(std::size_t i) {
  const std::size_t id = tape_.nodes_[node_].inputs.at(i);
  if (!has_[id]) {
    cot_[id] = Tensor::zeros_like(tape_.nodes_[id].value);
    has_[id] = 1;
  }
  return cot_[id];
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{Op::constant, {}, std::move(value), {}, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Tensor value) {
  if (value.is_complex()) throw ShapeError("parameters must be real tensors");
  nodes_.push_back(Node{Op::parameter, {}, std::move(value), {}, true});
  parameters_.push_back(nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Op op, std::vector<Var> inputs, Tensor value, BackwardFn backward) {
  std::vector<std::size_t> ids;
  ids.reserve(inputs.size());
  bool needs = false;
  for (const auto& v : inputs) {
    if (v.tape_ != this) throw std::invalid_argument(std::string(op_name(op)) + ": input belongs to another tape");
    ids.push_back(v.id_);
    needs = needs || nodes_[v.id_].requires_grad;
  }
  if (!needs) backward = nullptr;
  nodes_.push_back(Node{op, std::move(ids), std::move(value), std::move(backward), needs});
  return Var(this, nodes_.size() - 1);
}

Gradients Tape::backward(Var loss) const {
  if (loss.tape_ != this) throw std::invalid_argument("backward: loss belongs to another tape");
  const Tensor& lv = nodes_.at(loss.id_).value;
  if (lv.is_complex() || lv.size() != 1)
    throw ShapeError("backward: loss must be a real scalar, got " + to_string(lv.dtype()) + " " +
                     to_string(lv.shape()));

  const std::size_t n = loss.id_ + 1;
  std::vector<Tensor> cot(n);
  std::vector<char> has(n, 0);
  cot[loss.id_] = Tensor::real(lv.shape(), {1.0});
  has[loss.id_] = 1;

  std::vector<char> is_param(n, 0);
  for (auto p : parameters_)
    if (p < n) is_param[p] = 1;

  for (std::size_t i = n; i-- > 0;) {
    if (!has[i]) continue;
    const Node& node = nodes_[i];
    if (node.backward) {
      BackwardContext ctx(*this, i, cot, has);
      node.backward(ctx);
    }
    if (!is_param[i]) {
      cot[i] = Tensor();
      has[i] = 0;
    }
  }

  Gradients grads;
  for (auto p : parameters_) {
    if (p < n && has[p])
      grads.emplace(p, std::move(cot[p]));
    else
      grads.emplace(p, Tensor::zeros_like(nodes_[p].value));
  }
  return grads;
}

}  // namespace beamlearn::ad
