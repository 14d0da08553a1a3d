// Elementwise, layout and reduction primitives.

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <string>

#include "autodiff_internal.hpp"
#include "beamlearn/autodiff.hpp"

namespace beamlearn::ad {

using detail::AxisView;
using detail::dispatch;
using detail::GradSink;
using detail::split_axis;

namespace {

enum class Binary { add, sub, mul, div };

Var binary(Op op, Binary kind, Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const std::string name(op_name(op));
  if (x.shape() != y.shape())
    throw ShapeError(name + ": shape mismatch " + to_string(x.shape()) + " vs " + to_string(y.shape()));
  const std::size_t n = x.size();
  Tape& tape = a.tape();

  if (!x.is_complex() && !y.is_complex()) {
    Tensor out(DType::real64, x.shape());
    auto o = out.real_data();
    auto xv = x.real_data();
    auto yv = y.real_data();
    for (std::size_t i = 0; i < n; ++i) {
      switch (kind) {
        case Binary::add: o[i] = xv[i] + yv[i]; break;
        case Binary::sub: o[i] = xv[i] - yv[i]; break;
        case Binary::mul: o[i] = xv[i] * yv[i]; break;
        case Binary::div: o[i] = xv[i] / yv[i]; break;
      }
    }
    return tape.record(op, {a, b}, std::move(out), [kind, n](BackwardContext& ctx) {
      auto g = ctx.grad().real_data();
      auto xv = ctx.input(0).real_data();
      auto yv = ctx.input(1).real_data();
      if (ctx.needs_grad(0)) {
        auto ga = ctx.input_grad(0).real_data();
        for (std::size_t i = 0; i < n; ++i) {
          switch (kind) {
            case Binary::add:
            case Binary::sub: ga[i] += g[i]; break;
            case Binary::mul: ga[i] += g[i] * yv[i]; break;
            case Binary::div: ga[i] += g[i] / yv[i]; break;
          }
        }
      }
      if (ctx.needs_grad(1)) {
        auto gb = ctx.input_grad(1).real_data();
        for (std::size_t i = 0; i < n; ++i) {
          switch (kind) {
            case Binary::add: gb[i] += g[i]; break;
            case Binary::sub: gb[i] -= g[i]; break;
            case Binary::mul: gb[i] += g[i] * xv[i]; break;
            case Binary::div: gb[i] -= g[i] * xv[i] / (yv[i] * yv[i]); break;
          }
        }
      }
    });
  }

  detail::ComplexReader xr(x), yr(y);
  Tensor out(DType::complex128, x.shape());
  auto o = out.complex_data();
  for (std::size_t i = 0; i < n; ++i) {
    const cplx p = xr[i], q = yr[i];
    switch (kind) {
      case Binary::add: o[i] = p + q; break;
      case Binary::sub: o[i] = p - q; break;
      case Binary::mul: o[i] = p * q; break;
      case Binary::div: o[i] = p / q; break;
    }
  }
  return tape.record(op, {a, b}, std::move(out), [kind, n](BackwardContext& ctx) {
    auto g = ctx.grad().complex_data();
    detail::ComplexReader xr(ctx.input(0)), yr(ctx.input(1));
    // Holomorphic in both operands: input cotangent = g * conj(dz/dinput).
    if (ctx.needs_grad(0)) {
      GradSink sa(ctx.input_grad(0));
      for (std::size_t i = 0; i < n; ++i) {
        cplx d = 1.0;
        if (kind == Binary::mul) d = yr[i];
        if (kind == Binary::div) d = 1.0 / yr[i];
        sa.add(i, g[i] * std::conj(d));
      }
    }
    if (ctx.needs_grad(1)) {
      GradSink sb(ctx.input_grad(1));
      for (std::size_t i = 0; i < n; ++i) {
        cplx d = 1.0;
        if (kind == Binary::sub) d = -1.0;
        if (kind == Binary::mul) d = xr[i];
        if (kind == Binary::div) d = -xr[i] / (yr[i] * yr[i]);
        sb.add(i, g[i] * std::conj(d));
      }
    }
  });
}

template <class Fwd, class Deriv>
Var real_unary(Op op, Var a, Fwd fwd, Deriv deriv) {
  const Tensor& x = a.value();
  if (x.is_complex()) throw ShapeError(std::string(op_name(op)) + ": real input required");
  Tensor out(DType::real64, x.shape());
  auto o = out.real_data();
  auto xv = x.real_data();
  for (std::size_t i = 0; i < xv.size(); ++i) o[i] = fwd(xv[i]);
  return a.tape().record(op, {a}, std::move(out), [deriv](BackwardContext& ctx) {
    auto g = ctx.grad().real_data();
    auto xv = ctx.input(0).real_data();
    auto ov = ctx.output().real_data();
    auto ga = ctx.input_grad(0).real_data();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(xv[i], ov[i]);
  });
}

Shape remove_axis(Shape s, std::size_t axis) {
  s.erase(s.begin() + static_cast<std::ptrdiff_t>(axis));
  return s;
}

}  // namespace

Var add(Var a, Var b) { return binary(Op::add, Binary::add, a, b); }
Var sub(Var a, Var b) { return binary(Op::sub, Binary::sub, a, b); }
Var mul(Var a, Var b) { return binary(Op::mul, Binary::mul, a, b); }
Var div(Var a, Var b) { return binary(Op::div, Binary::div, a, b); }

Var scale(Var a, double c) {
  const Tensor& x = a.value();
  Tensor out = x;
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    for (auto& v : out.values<T>()) v *= c;
  });
  return a.tape().record(Op::scale, {a}, std::move(out), [c](BackwardContext& ctx) {
    dispatch(ctx.grad().dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto g = ctx.grad().values<T>();
      auto ga = ctx.input_grad(0).values<T>();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
    });
  });
}

Var add_scalar(Var a, double c) {
  const Tensor& x = a.value();
  Tensor out = x;
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    for (auto& v : out.values<T>()) v += c;
  });
  return a.tape().record(Op::add_scalar, {a}, std::move(out), [](BackwardContext& ctx) {
    dispatch(ctx.grad().dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto g = ctx.grad().values<T>();
      auto ga = ctx.input_grad(0).values<T>();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  });
}

Var conj(Var a) {
  const Tensor& x = a.value();
  if (!x.is_complex()) return scale(a, 1.0);
  Tensor out = x;
  for (auto& v : out.complex_data()) v = std::conj(v);
  return a.tape().record(Op::conj, {a}, std::move(out), [](BackwardContext& ctx) {
    auto g = ctx.grad().complex_data();
    auto ga = ctx.input_grad(0).complex_data();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += std::conj(g[i]);
  });
}

Var abs2(Var a) {
  const Tensor& x = a.value();
  if (!x.is_complex()) return mul(a, a);
  Tensor out(DType::real64, x.shape());
  auto o = out.real_data();
  auto xv = x.complex_data();
  for (std::size_t i = 0; i < xv.size(); ++i) o[i] = std::norm(xv[i]);
  return a.tape().record(Op::abs2, {a}, std::move(out), [](BackwardContext& ctx) {
    auto g = ctx.grad().real_data();
    auto xv = ctx.input(0).complex_data();
    auto ga = ctx.input_grad(0).complex_data();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * xv[i];
  });
}

Var real_part(Var a) {
  const Tensor& x = a.value();
  if (!x.is_complex()) return scale(a, 1.0);
  Tensor out(DType::real64, x.shape());
  auto o = out.real_data();
  auto xv = x.complex_data();
  for (std::size_t i = 0; i < xv.size(); ++i) o[i] = xv[i].real();
  return a.tape().record(Op::real_part, {a}, std::move(out), [](BackwardContext& ctx) {
    auto g = ctx.grad().real_data();
    auto ga = ctx.input_grad(0).complex_data();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 0.5 * g[i];
  });
}

Var imag_part(Var a) {
  const Tensor& x = a.value();
  if (!x.is_complex()) return a.tape().constant(Tensor(DType::real64, x.shape()));
  Tensor out(DType::real64, x.shape());
  auto o = out.real_data();
  auto xv = x.complex_data();
  for (std::size_t i = 0; i < xv.size(); ++i) o[i] = xv[i].imag();
  return a.tape().record(Op::imag_part, {a}, std::move(out), [](BackwardContext& ctx) {
    auto g = ctx.grad().real_data();
    auto ga = ctx.input_grad(0).complex_data();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += cplx(0.0, 0.5 * g[i]);
  });
}

Var make_complex(Var re, Var im) {
  const Tensor& x = re.value();
  const Tensor& y = im.value();
  if (x.is_complex() || y.is_complex()) throw ShapeError("make_complex: real inputs required");
  if (x.shape() != y.shape())
    throw ShapeError("make_complex: shape mismatch " + to_string(x.shape()) + " vs " + to_string(y.shape()));
  Tensor out(DType::complex128, x.shape());
  auto o = out.complex_data();
  auto xv = x.real_data();
  auto yv = y.real_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = cplx(xv[i], yv[i]);
  return re.tape().record(Op::make_complex, {re, im}, std::move(out), [](BackwardContext& ctx) {
    auto g = ctx.grad().complex_data();
    if (ctx.needs_grad(0)) {
      auto gr = ctx.input_grad(0).real_data();
      for (std::size_t i = 0; i < g.size(); ++i) gr[i] += 2.0 * g[i].real();
    }
    if (ctx.needs_grad(1)) {
      auto gi = ctx.input_grad(1).real_data();
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += 2.0 * g[i].imag();
    }
  });
}

Var log(Var a) {
  return real_unary(
      Op::log, a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var exp(Var a) {
  return real_unary(
      Op::exp, a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var sigmoid(Var a) {
  return real_unary(
      Op::sigmoid, a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return real_unary(
      Op::tanh, a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var relu(Var a) {
  return real_unary(
      Op::relu, a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var clamp_min(Var a, double floor) {
  return real_unary(
      Op::clamp_min, a, [floor](double x) { return x > floor ? x : floor; },
      [floor](double x, double) { return x > floor ? 1.0 : 0.0; });
}

Var sum(Var a, std::size_t axis) {
  const Tensor& x = a.value();
  const AxisView v = split_axis(x.shape(), axis, "sum");
  Tensor out(x.dtype(), remove_axis(x.shape(), axis));
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xv = x.values<T>();
    auto o = out.values<T>();
    for (std::size_t p = 0; p < v.outer; ++p)
      for (std::size_t i = 0; i < v.n; ++i)
        for (std::size_t q = 0; q < v.inner; ++q) o[p * v.inner + q] += xv[(p * v.n + i) * v.inner + q];
  });
  return a.tape().record(Op::sum, {a}, std::move(out), [v](BackwardContext& ctx) {
    dispatch(ctx.grad().dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto g = ctx.grad().values<T>();
      auto ga = ctx.input_grad(0).values<T>();
      for (std::size_t p = 0; p < v.outer; ++p)
        for (std::size_t i = 0; i < v.n; ++i)
          for (std::size_t q = 0; q < v.inner; ++q) ga[(p * v.n + i) * v.inner + q] += g[p * v.inner + q];
    });
  });
}

Var mean(Var a, std::size_t axis) {
  const std::size_t n = split_axis(a.shape(), axis, "mean").n;
  Var s = sum(a, axis);
  return scale(s, 1.0 / static_cast<double>(n));
}

Var sum_all(Var a) {
  const Tensor& x = a.value();
  Tensor out(x.dtype(), {});
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    T acc{};
    for (const auto& v : x.values<T>()) acc += v;
    out.values<T>()[0] = acc;
  });
  return a.tape().record(Op::sum_all, {a}, std::move(out), [](BackwardContext& ctx) {
    dispatch(ctx.grad().dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T g = ctx.grad().values<T>()[0];
      for (auto& v : ctx.input_grad(0).values<T>()) v += g;
    });
  });
}

Var broadcast(Var a, std::size_t axis, std::size_t n) {
  const Tensor& x = a.value();
  if (axis > x.rank())
    throw ShapeError("broadcast: axis " + std::to_string(axis) + " out of range for shape " + to_string(x.shape()));
  Shape shape = x.shape();
  shape.insert(shape.begin() + static_cast<std::ptrdiff_t>(axis), n);
  const AxisView v = split_axis(shape, axis, "broadcast");
  Tensor out(x.dtype(), shape);
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xv = x.values<T>();
    auto o = out.values<T>();
    for (std::size_t p = 0; p < v.outer; ++p)
      for (std::size_t i = 0; i < v.n; ++i)
        for (std::size_t q = 0; q < v.inner; ++q) o[(p * v.n + i) * v.inner + q] = xv[p * v.inner + q];
  });
  return a.tape().record(Op::broadcast, {a}, std::move(out), [v](BackwardContext& ctx) {
    dispatch(ctx.grad().dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto g = ctx.grad().values<T>();
      auto ga = ctx.input_grad(0).values<T>();
      for (std::size_t p = 0; p < v.outer; ++p)
        for (std::size_t i = 0; i < v.n; ++i)
          for (std::size_t q = 0; q < v.inner; ++q) ga[p * v.inner + q] += g[(p * v.n + i) * v.inner + q];
    });
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape().record(Op::reshape, {a}, std::move(out), [](BackwardContext& ctx) {
    dispatch(ctx.grad().dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto g = ctx.grad().values<T>();
      auto ga = ctx.input_grad(0).values<T>();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  });
}

Var permute(Var a, std::vector<std::size_t> axes) {
  const Tensor& x = a.value();
  const std::size_t r = x.rank();
  {
    std::vector<std::size_t> sorted = axes;
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::size_t> iota(r);
    std::iota(iota.begin(), iota.end(), 0);
    if (sorted != iota) throw ShapeError("permute: axes are not a permutation of 0.." + std::to_string(r - 1));
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.shape()[axes[i]];
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * x.shape()[i];

  // source index for every output element
  auto map = std::make_shared<std::vector<std::size_t>>(x.size());
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t o = 0; o < x.size(); ++o) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < r; ++i) src += idx[i] * in_stride[axes[i]];
    (*map)[o] = src;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  Tensor out(x.dtype(), out_shape);
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xv = x.values<T>();
    auto o = out.values<T>();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = xv[(*map)[i]];
  });
  return a.tape().record(Op::permute, {a}, std::move(out), [map](BackwardContext& ctx) {
    dispatch(ctx.grad().dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto g = ctx.grad().values<T>();
      auto ga = ctx.input_grad(0).values<T>();
      for (std::size_t i = 0; i < g.size(); ++i) ga[(*map)[i]] += g[i];
    });
  });
}

Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Tensor& x = a.value();
  const AxisView v = split_axis(x.shape(), axis, "slice");
  if (begin > end || end > v.n)
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for axis of " +
                     std::to_string(v.n));
  Shape shape = x.shape();
  shape[axis] = end - begin;
  const std::size_t m = end - begin;
  Tensor out(x.dtype(), shape);
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xv = x.values<T>();
    auto o = out.values<T>();
    for (std::size_t p = 0; p < v.outer; ++p)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t q = 0; q < v.inner; ++q)
          o[(p * m + i) * v.inner + q] = xv[(p * v.n + begin + i) * v.inner + q];
  });
  return a.tape().record(Op::slice, {a}, std::move(out), [v, begin, m](BackwardContext& ctx) {
    dispatch(ctx.grad().dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto g = ctx.grad().values<T>();
      auto ga = ctx.input_grad(0).values<T>();
      for (std::size_t p = 0; p < v.outer; ++p)
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t q = 0; q < v.inner; ++q)
            ga[(p * v.n + begin + i) * v.inner + q] += g[(p * m + i) * v.inner + q];
    });
  });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Tensor& first = parts[0].value();
  split_axis(first.shape(), axis, "concat");
  Shape shape = first.shape();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Tensor& t = p.value();
    if (t.dtype() != first.dtype()) throw ShapeError("concat: mixed dtypes");
    Shape s = t.shape();
    if (s.size() != shape.size()) throw ShapeError("concat: rank mismatch");
    s[axis] = shape[axis];
    if (s != shape)
      throw ShapeError("concat: incompatible shapes " + to_string(first.shape()) + " and " + to_string(t.shape()));
    widths.push_back(t.shape()[axis]);
    total += t.shape()[axis];
  }
  shape[axis] = total;
  const AxisView v = split_axis(shape, axis, "concat");
  Tensor out(first.dtype(), shape);
  dispatch(first.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto o = out.values<T>();
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      auto xv = parts[k].value().values<T>();
      const std::size_t w = widths[k];
      for (std::size_t p = 0; p < v.outer; ++p)
        for (std::size_t i = 0; i < w; ++i)
          for (std::size_t q = 0; q < v.inner; ++q)
            o[(p * total + offset + i) * v.inner + q] = xv[(p * w + i) * v.inner + q];
      offset += w;
    }
  });
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape().record(Op::concat, std::move(inputs), std::move(out), [v, widths, total](BackwardContext& ctx) {
    dispatch(ctx.grad().dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto g = ctx.grad().values<T>();
      std::size_t offset = 0;
      for (std::size_t k = 0; k < widths.size(); ++k) {
        const std::size_t w = widths[k];
        if (ctx.needs_grad(k)) {
          auto ga = ctx.input_grad(k).values<T>();
          for (std::size_t p = 0; p < v.outer; ++p)
            for (std::size_t i = 0; i < w; ++i)
              for (std::size_t q = 0; q < v.inner; ++q)
                ga[(p * w + i) * v.inner + q] += g[(p * total + offset + i) * v.inner + q];
        }
        offset += w;
      }
    });
  });
}

Var stack(std::span<const Var> parts, std::size_t axis) {
  std::vector<Var> expanded;
  expanded.reserve(parts.size());
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (axis > s.size()) throw ShapeError("stack: axis out of range");
    s.insert(s.begin() + static_cast<std::ptrdiff_t>(axis), 1);
    expanded.push_back(reshape(p, s));
  }
  return concat(expanded, axis);
}

Var softmax(Var a, std::size_t axis) {
  const Tensor& x = a.value();
  if (x.is_complex()) throw ShapeError("softmax: real input required");
  const AxisView v = split_axis(x.shape(), axis, "softmax");
  Tensor out(DType::real64, x.shape());
  auto xv = x.real_data();
  auto o = out.real_data();
  for (std::size_t p = 0; p < v.outer; ++p)
    for (std::size_t q = 0; q < v.inner; ++q) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < v.n; ++i) m = std::max(m, xv[(p * v.n + i) * v.inner + q]);
      double s = 0.0;
      for (std::size_t i = 0; i < v.n; ++i) {
        const std::size_t j = (p * v.n + i) * v.inner + q;
        o[j] = std::exp(xv[j] - m);
        s += o[j];
      }
      for (std::size_t i = 0; i < v.n; ++i) o[(p * v.n + i) * v.inner + q] /= s;
    }
  return a.tape().record(Op::softmax, {a}, std::move(out), [v](BackwardContext& ctx) {
    auto g = ctx.grad().real_data();
    auto s = ctx.output().real_data();
    auto ga = ctx.input_grad(0).real_data();
    for (std::size_t p = 0; p < v.outer; ++p)
      for (std::size_t q = 0; q < v.inner; ++q) {
        double dot = 0.0;
        for (std::size_t i = 0; i < v.n; ++i) {
          const std::size_t j = (p * v.n + i) * v.inner + q;
          dot += g[j] * s[j];
        }
        for (std::size_t i = 0; i < v.n; ++i) {
          const std::size_t j = (p * v.n + i) * v.inner + q;
          ga[j] += s[j] * (g[j] - dot);
        }
      }
  });
}

Var logsumexp(Var a, std::size_t axis) {
  const Tensor& x = a.value();
  if (x.is_complex()) throw ShapeError("logsumexp: real input required");
  const AxisView v = split_axis(x.shape(), axis, "logsumexp");
  Tensor out(DType::real64, remove_axis(x.shape(), axis));
  auto xv = x.real_data();
  auto o = out.real_data();
  for (std::size_t p = 0; p < v.outer; ++p)
    for (std::size_t q = 0; q < v.inner; ++q) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < v.n; ++i) m = std::max(m, xv[(p * v.n + i) * v.inner + q]);
      if (!std::isfinite(m)) {
        o[p * v.inner + q] = m;
        continue;
      }
      double s = 0.0;
      for (std::size_t i = 0; i < v.n; ++i) s += std::exp(xv[(p * v.n + i) * v.inner + q] - m);
      o[p * v.inner + q] = m + std::log(s);
    }
  return a.tape().record(Op::logsumexp, {a}, std::move(out), [v](BackwardContext& ctx) {
    auto g = ctx.grad().real_data();
    auto xv = ctx.input(0).real_data();
    auto lse = ctx.output().real_data();
    auto ga = ctx.input_grad(0).real_data();
    for (std::size_t p = 0; p < v.outer; ++p)
      for (std::size_t q = 0; q < v.inner; ++q) {
        const std::size_t r = p * v.inner + q;
        for (std::size_t i = 0; i < v.n; ++i) {
          const std::size_t j = (p * v.n + i) * v.inner + q;
          ga[j] += g[r] * std::exp(xv[j] - lse[r]);
        }
      }
  });
}

Var normalize_sum(Var a, std::size_t axis, double eps) {
  const Tensor& x = a.value();
  if (x.is_complex()) throw ShapeError("normalize_sum: real input required");
  const AxisView v = split_axis(x.shape(), axis, "normalize_sum");
  Tensor out(DType::real64, x.shape());
  auto xv = x.real_data();
  auto o = out.real_data();
  for (std::size_t p = 0; p < v.outer; ++p)
    for (std::size_t q = 0; q < v.inner; ++q) {
      double s = eps;
      for (std::size_t i = 0; i < v.n; ++i) s += xv[(p * v.n + i) * v.inner + q];
      for (std::size_t i = 0; i < v.n; ++i) {
        const std::size_t j = (p * v.n + i) * v.inner + q;
        o[j] = xv[j] / s;
      }
    }
  return a.tape().record(Op::normalize_sum, {a}, std::move(out), [v, eps](BackwardContext& ctx) {
    auto g = ctx.grad().real_data();
    auto xv = ctx.input(0).real_data();
    auto ga = ctx.input_grad(0).real_data();
    for (std::size_t p = 0; p < v.outer; ++p)
      for (std::size_t q = 0; q < v.inner; ++q) {
        double s = eps, dot = 0.0;
        for (std::size_t i = 0; i < v.n; ++i) {
          const std::size_t j = (p * v.n + i) * v.inner + q;
          s += xv[j];
          dot += g[j] * xv[j];
        }
        for (std::size_t i = 0; i < v.n; ++i) {
          const std::size_t j = (p * v.n + i) * v.inner + q;
          ga[j] += g[j] / s - dot / (s * s);
        }
      }
  });
}

Var l2_normalize(Var a) {
  const Tensor& x = a.value();
  if (x.rank() == 0) throw ShapeError("l2_normalize: needs at least one axis");
  const std::size_t d = x.shape().back();
  const std::size_t rows = d == 0 ? 0 : x.size() / d;
  auto norms = std::make_shared<std::vector<double>>(rows, 0.0);
  Tensor out(x.dtype(), x.shape());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xv = x.values<T>();
    auto o = out.values<T>();
    const double fill = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t r = 0; r < rows; ++r) {
      double nn = 0.0;
      for (std::size_t i = 0; i < d; ++i) nn += std::norm(xv[r * d + i]);
      const double n = std::sqrt(nn);
      (*norms)[r] = n;
      for (std::size_t i = 0; i < d; ++i) o[r * d + i] = n > 0.0 ? T(xv[r * d + i] / n) : T(fill);
    }
  });
  return a.tape().record(Op::l2_normalize, {a}, std::move(out), [norms, d, rows](BackwardContext& ctx) {
    dispatch(ctx.grad().dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto g = ctx.grad().values<T>();
      auto u = ctx.output().values<T>();
      auto ga = ctx.input_grad(0).values<T>();
      for (std::size_t r = 0; r < rows; ++r) {
        const double n = (*norms)[r];
        if (n <= 0.0) continue;
        double proj = 0.0;  // Re(u^H g)
        for (std::size_t i = 0; i < d; ++i) proj += std::real(std::conj(u[r * d + i]) * g[r * d + i]);
        for (std::size_t i = 0; i < d; ++i) ga[r * d + i] += (g[r * d + i] - u[r * d + i] * proj) / n;
      }
    });
  });
}

}  // namespace beamlearn::ad
