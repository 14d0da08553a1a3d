#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace beamlearn {

using cplx = std::complex<double>;
using Shape = std::vector<std::size_t>;

enum class DType : std::uint8_t { real64 = 1, complex128 = 2 };

/// Raised when tensor dimensions do not fit an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for non-finite values, failed factorizations and similar.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 64-byte aligned storage, so vectorized reductions over tensor data take
/// the same code path (and give the same bits) for every allocation.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

std::size_t element_count(const Shape& shape);
std::string to_string(const Shape& shape);
std::string to_string(DType dtype);

/// Dense row-major tensor holding either real64 or complex128 values.
class Tensor {
 public:
  Tensor() = default;
  Tensor(DType dtype, Shape shape);

  static Tensor real(Shape shape, std::vector<double> values);
  static Tensor complex(Shape shape, std::vector<cplx> values);
  static Tensor scalar(double value);
  static Tensor zeros_like(const Tensor& other);

  DType dtype() const noexcept { return dtype_; }
  bool is_complex() const noexcept { return dtype_ == DType::complex128; }
  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return element_count(shape_); }

  std::span<double> real_data();
  std::span<const double> real_data() const;
  std::span<cplx> complex_data();
  std::span<const cplx> complex_data() const;

  template <class T>
  std::span<T> values();
  template <class T>
  std::span<const T> values() const;

  /// Value of a single-element real tensor.
  double item() const;

  /// Same data under a new shape with equal element count.
  Tensor reshaped(Shape shape) const;

  /// Complex copy (imaginary parts zero for real input).
  Tensor to_complex() const;

 private:
  DType dtype_ = DType::real64;
  Shape shape_{0};
  std::vector<double, AlignedAllocator<double>> real_;
  std::vector<cplx, AlignedAllocator<cplx>> complex_;
};

template <>
inline std::span<double> Tensor::values<double>() {
  return real_data();
}
template <>
inline std::span<const double> Tensor::values<double>() const {
  return real_data();
}
template <>
inline std::span<cplx> Tensor::values<cplx>() {
  return complex_data();
}
template <>
inline std::span<const cplx> Tensor::values<cplx>() const {
  return complex_data();
}

/// Throws ShapeError naming `what` unless `t` has exactly `expected` dims.
void require_shape(const Tensor& t, const Shape& expected, const std::string& what);
void require_rank(const Tensor& t, std::size_t rank, const std::string& what);
void require_dtype(const Tensor& t, DType dtype, const std::string& what);

bool all_finite(const Tensor& t);

}  // namespace beamlearn
