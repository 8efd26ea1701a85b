#include <algorithm>
#include <cmath>
#include <limits>

#include "cvos/ops.hpp"

namespace cvos {

namespace {

std::vector<int> normalize_axes(const Shape& shape, const std::vector<int>& axes) {
  if (axes.empty()) throw ParameterError("reduce: axis list must be non-empty");
  int rank = static_cast<int>(shape.size());
  std::vector<int> out;
  out.reserve(axes.size());
  for (int a : axes) {
    int r = a < 0 ? a + rank : a;
    if (r < 0 || r >= rank) throw ParameterError("reduce: axis out of range for " + shape_str(shape));
    out.push_back(r);
  }
  std::sort(out.begin(), out.end());
  if (std::adjacent_find(out.begin(), out.end()) != out.end()) {
    throw ParameterError("reduce: duplicate axis");
  }
  return out;
}

struct ReducePlan {
  Shape kept_shape;                 // input rank, reduced axes set to 1
  Shape out_shape;                  // final shape (kept_shape or with axes dropped)
  std::vector<int64_t> out_stride;  // per input axis, 0 on reduced axes
  int64_t count = 1;                // elements folded into each output cell
  int64_t out_n = 1;
};

ReducePlan make_plan(const Shape& shape, const std::vector<int>& axes, bool keepdims) {
  ReducePlan plan;
  size_t rank = shape.size();
  std::vector<bool> reduced(rank, false);
  for (int a : axes) reduced[a] = true;
  plan.kept_shape = shape;
  for (size_t d = 0; d < rank; ++d) {
    if (reduced[d]) {
      plan.kept_shape[d] = 1;
      plan.count *= shape[d];
    }
  }
  plan.out_n = shape_numel(plan.kept_shape);
  plan.out_stride.assign(rank, 0);
  int64_t acc = 1;
  for (size_t i = 0; i < rank; ++i) {
    size_t d = rank - 1 - i;
    plan.out_stride[d] = reduced[d] ? 0 : acc;
    acc *= plan.kept_shape[d];
  }
  if (keepdims) {
    plan.out_shape = plan.kept_shape;
  } else {
    for (size_t d = 0; d < rank; ++d) {
      if (!reduced[d]) plan.out_shape.push_back(shape[d]);
    }
  }
  return plan;
}

// Odometer over the input, tracking the output offset incrementally.
template <class Fn>
void reduce_walk(const Shape& in, const std::vector<int64_t>& out_stride, Fn&& fn) {
  size_t rank = in.size();
  int64_t n = shape_numel(in);
  if (rank == 0) {
    fn(0, 0);
    return;
  }
  std::vector<int64_t> coord(rank, 0);
  int64_t oo = 0;
  for (int64_t i = 0; i < n; ++i) {
    fn(i, oo);
    for (size_t d = rank; d-- > 0;) {
      ++coord[d];
      oo += out_stride[d];
      if (coord[d] < in[d]) break;
      oo -= out_stride[d] * in[d];
      coord[d] = 0;
    }
  }
}

}  // namespace

Tensor sum(const Tensor& x, const std::vector<int>& axes, bool keepdims) {
  auto ax = normalize_axes(x.shape(), axes);
  ReducePlan plan = make_plan(x.shape(), ax, keepdims);
  Tensor out = Tensor::zeros(plan.out_shape);
  const double* px = x.data();
  double* po = out.data();
  reduce_walk(x.shape(), plan.out_stride, [&](int64_t i, int64_t oo) { po[oo] += px[i]; });
  Tape* tape = Tape::active();
  if (tape && x.tracked()) {
    out.impl()->tracked = true;
    auto xi = x.impl(), oi = out.impl();
    Shape in_shape = x.shape();
    tape->record([xi, oi, plan, in_shape]() {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      const double* gy = oi->grad.data();
      double* gx = xi->grad.data();
      reduce_walk(in_shape, plan.out_stride, [&](int64_t i, int64_t oo) { gx[i] += gy[oo]; });
    });
  }
  return out;
}

Tensor mean(const Tensor& x, const std::vector<int>& axes, bool keepdims) {
  auto ax = normalize_axes(x.shape(), axes);
  ReducePlan plan = make_plan(x.shape(), ax, keepdims);
  Tensor out = Tensor::zeros(plan.out_shape);
  const double* px = x.data();
  double* po = out.data();
  double inv = 1.0 / static_cast<double>(plan.count);
  reduce_walk(x.shape(), plan.out_stride, [&](int64_t i, int64_t oo) { po[oo] += px[i]; });
  for (int64_t i = 0; i < plan.out_n; ++i) po[i] *= inv;
  Tape* tape = Tape::active();
  if (tape && x.tracked()) {
    out.impl()->tracked = true;
    auto xi = x.impl(), oi = out.impl();
    Shape in_shape = x.shape();
    tape->record([xi, oi, plan, in_shape, inv]() {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      const double* gy = oi->grad.data();
      double* gx = xi->grad.data();
      reduce_walk(in_shape, plan.out_stride, [&](int64_t i, int64_t oo) { gx[i] += gy[oo] * inv; });
    });
  }
  return out;
}

Tensor max_reduce(const Tensor& x, const std::vector<int>& axes, bool keepdims) {
  auto ax = normalize_axes(x.shape(), axes);
  ReducePlan plan = make_plan(x.shape(), ax, keepdims);
  Tensor out = Tensor::full(plan.out_shape, -std::numeric_limits<double>::infinity());
  std::vector<int64_t> argmax(static_cast<size_t>(plan.out_n), -1);
  const double* px = x.data();
  double* po = out.data();
  // ties resolve to the first maximal element
  reduce_walk(x.shape(), plan.out_stride, [&](int64_t i, int64_t oo) {
    if (px[i] > po[oo]) {
      po[oo] = px[i];
      argmax[static_cast<size_t>(oo)] = i;
    }
  });
  Tape* tape = Tape::active();
  if (tape && x.tracked()) {
    out.impl()->tracked = true;
    auto xi = x.impl(), oi = out.impl();
    tape->record([xi, oi, argmax, n = plan.out_n]() {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (int64_t oo = 0; oo < n; ++oo) {
        if (argmax[static_cast<size_t>(oo)] >= 0) xi->grad[argmax[static_cast<size_t>(oo)]] += oi->grad[oo];
      }
    });
  }
  return out;
}

Tensor softmax(const Tensor& x, int axis) {
  const Shape& shape = x.shape();
  int rank = static_cast<int>(shape.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ParameterError("softmax: axis out of range for " + shape_str(shape));
  int64_t outer = 1, inner = 1, n = shape[axis];
  for (int d = 0; d < axis; ++d) outer *= shape[d];
  for (int d = axis + 1; d < rank; ++d) inner *= shape[d];

  Tensor out = Tensor::zeros(shape);
  const double* px = x.data();
  double* po = out.data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      int64_t base = o * n * inner + in;
      double m = -std::numeric_limits<double>::infinity();
      for (int64_t k = 0; k < n; ++k) m = std::max(m, px[base + k * inner]);
      if (!std::isfinite(m)) {
        // degenerate row (all -inf): documented uniform fallback
        for (int64_t k = 0; k < n; ++k) po[base + k * inner] = 1.0 / static_cast<double>(n);
        continue;
      }
      double s = 0.0;
      for (int64_t k = 0; k < n; ++k) {
        double e = std::exp(px[base + k * inner] - m);
        po[base + k * inner] = e;
        s += e;
      }
      double invs = 1.0 / s;
      for (int64_t k = 0; k < n; ++k) po[base + k * inner] *= invs;
    }
  }
  Tape* tape = Tape::active();
  if (tape && x.tracked()) {
    out.impl()->tracked = true;
    auto xi = x.impl(), oi = out.impl();
    tape->record([xi, oi, outer, inner, n]() {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      const double* gy = oi->grad.data();
      const double* y = oi->values.data();
      double* gx = xi->grad.data();
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
          int64_t base = o * n * inner + in;
          double dot = 0.0;
          for (int64_t k = 0; k < n; ++k) dot += gy[base + k * inner] * y[base + k * inner];
          for (int64_t k = 0; k < n; ++k) {
            int64_t idx = base + k * inner;
            gx[idx] += y[idx] * (gy[idx] - dot);
          }
        }
      }
    });
  }
  return out;
}

Tensor reduce(ReduceKind kind, const Tensor& x, const std::vector<int>& axes, bool keepdims) {
  switch (kind) {
    case ReduceKind::sum: return sum(x, axes, keepdims);
    case ReduceKind::mean: return mean(x, axes, keepdims);
    case ReduceKind::max: return max_reduce(x, axes, keepdims);
    case ReduceKind::softmax:
      if (axes.size() != 1) throw ParameterError("softmax reduces along exactly one axis");
      return softmax(x, axes[0]);
  }
  throw ParameterError("unknown reduce kind");
}

Tensor sum_all(const Tensor& x) {
  if (x.rank() == 0) return add_scalar(x, 0.0);
  std::vector<int> axes(static_cast<size_t>(x.rank()));
  for (size_t i = 0; i < axes.size(); ++i) axes[i] = static_cast<int>(i);
  return reshape(sum(x, axes), {});
}

Tensor mean_all(const Tensor& x) {
  return mul_scalar(sum_all(x), 1.0 / static_cast<double>(x.size()));
}

}  // namespace cvos
