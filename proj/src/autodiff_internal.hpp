#pragma once

#include <string>

#include "beamlearn/tensor.hpp"

namespace beamlearn::ad::detail {

struct AxisView {
  std::size_t outer = 1, n = 1, inner = 1;
};

inline AxisView split_axis(const Shape& s, std::size_t axis, const char* what) {
  if (axis >= s.size())
    throw ShapeError(std::string(what) + ": axis " + std::to_string(axis) + " out of range for shape " + to_string(s));
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= s[i];
  v.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
  return v;
}

template <class F>
decltype(auto) dispatch(DType d, F&& f) {
  if (d == DType::real64) return f(double{});
  return f(cplx{});
}

/// Reads a real or complex tensor as complex values.
class ComplexReader {
 public:
  explicit ComplexReader(const Tensor& t) {
    if (t.is_complex())
      c_ = t.complex_data().data();
    else
      r_ = t.real_data().data();
  }
  cplx operator[](std::size_t i) const { return c_ ? c_[i] : cplx(r_[i]); }

 private:
  const double* r_ = nullptr;
  const cplx* c_ = nullptr;
};

/// Accumulates a complex-convention cotangent into a real or complex buffer.
/// A real leaf x feeding complex arithmetic receives 2 Re(dl/dz*).
class GradSink {
 public:
  explicit GradSink(Tensor& t) {
    if (t.is_complex())
      c_ = t.complex_data().data();
    else
      r_ = t.real_data().data();
  }
  void add(std::size_t i, cplx g) {
    if (c_)
      c_[i] += g;
    else
      r_[i] += 2.0 * g.real();
  }

 private:
  double* r_ = nullptr;
  cplx* c_ = nullptr;
};

}  // namespace beamlearn::ad::detail
