#include "beamlearn/tensor.hpp"

#include <cmath>
#include <sstream>

namespace beamlearn {

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

std::string to_string(DType dtype) {
  return dtype == DType::real64 ? "real64" : "complex128";
}

Tensor::Tensor(DType dtype, Shape shape) : dtype_(dtype), shape_(std::move(shape)) {
  if (dtype_ == DType::real64)
    real_.assign(element_count(shape_), 0.0);
  else
    complex_.assign(element_count(shape_), cplx{});
}

Tensor Tensor::real(Shape shape, std::vector<double> values) {
  if (values.size() != element_count(shape))
    throw ShapeError("real tensor: " + std::to_string(values.size()) + " values for shape " + to_string(shape));
  Tensor t;
  t.dtype_ = DType::real64;
  t.shape_ = std::move(shape);
  t.real_.assign(values.begin(), values.end());
  return t;
}

Tensor Tensor::complex(Shape shape, std::vector<cplx> values) {
  if (values.size() != element_count(shape))
    throw ShapeError("complex tensor: " + std::to_string(values.size()) + " values for shape " + to_string(shape));
  Tensor t;
  t.dtype_ = DType::complex128;
  t.shape_ = std::move(shape);
  t.complex_.assign(values.begin(), values.end());
  return t;
}

Tensor Tensor::scalar(double value) { return real({}, {value}); }

Tensor Tensor::zeros_like(const Tensor& other) { return Tensor(other.dtype(), other.shape()); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + to_string(shape_));
  return shape_[axis];
}

std::span<double> Tensor::real_data() {
  if (dtype_ != DType::real64) throw ShapeError("real_data() on complex tensor");
  return real_;
}

std::span<const double> Tensor::real_data() const {
  if (dtype_ != DType::real64) throw ShapeError("real_data() on complex tensor");
  return real_;
}

std::span<cplx> Tensor::complex_data() {
  if (dtype_ != DType::complex128) throw ShapeError("complex_data() on real tensor");
  return complex_;
}

std::span<const cplx> Tensor::complex_data() const {
  if (dtype_ != DType::complex128) throw ShapeError("complex_data() on real tensor");
  return complex_;
}

double Tensor::item() const {
  if (dtype_ != DType::real64 || size() != 1)
    throw ShapeError("item() requires a single real element, got " + to_string(dtype_) + " " + to_string(shape_));
  return real_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (element_count(shape) != size())
    throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  Tensor t = *this;
  t.shape_ = std::move(shape);
  return t;
}

Tensor Tensor::to_complex() const {
  if (is_complex()) return *this;
  Tensor t(DType::complex128, shape_);
  auto out = t.complex_data();
  for (std::size_t i = 0; i < real_.size(); ++i) out[i] = real_[i];
  return t;
}

void require_shape(const Tensor& t, const Shape& expected, const std::string& what) {
  if (t.shape() != expected)
    throw ShapeError(what + ": expected shape " + to_string(expected) + ", got " + to_string(t.shape()));
}

void require_rank(const Tensor& t, std::size_t rank, const std::string& what) {
  if (t.rank() != rank)
    throw ShapeError(what + ": expected rank " + std::to_string(rank) + ", got shape " + to_string(t.shape()));
}

void require_dtype(const Tensor& t, DType dtype, const std::string& what) {
  if (t.dtype() != dtype)
    throw ShapeError(what + ": expected " + to_string(dtype) + ", got " + to_string(t.dtype()));
}

bool all_finite(const Tensor& t) {
  if (t.is_complex()) {
    for (const auto& z : t.complex_data())
      if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) return false;
  } else {
    for (double x : t.real_data())
      if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace beamlearn
