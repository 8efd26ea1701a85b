#include <cstring>

#include "cvos/ops.hpp"

namespace cvos {

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor out = Tensor::from_data(std::move(shape), std::vector<double>(x.data(), x.data() + x.size()));
  Tape* tape = Tape::active();
  if (tape && x.tracked()) {
    out.impl()->tracked = true;
    auto xi = x.impl(), oi = out.impl();
    tape->record([xi, oi]() {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (size_t i = 0; i < oi->grad.size(); ++i) xi->grad[i] += oi->grad[i];
    });
  }
  return out;
}

Tensor concat_last(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ParameterError("concat_last: no operands");
  const Shape& head = parts[0].shape();
  if (head.empty()) throw DimensionError("concat_last: operands must have rank >= 1");
  Shape out_shape = head;
  int64_t last = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != head.size() ||
        !std::equal(s.begin(), s.end() - 1, head.begin())) {
      throw DimensionError("concat_last: shape " + shape_str(s) + " incompatible with " + shape_str(head));
    }
    last += s.back();
  }
  out_shape.back() = last;
  Tensor out = Tensor::zeros(out_shape);
  int64_t rows = out.size() / last;
  double* po = out.data();
  int64_t col = 0;
  bool any_tracked = false;
  for (const Tensor& p : parts) {
    int64_t w = p.shape().back();
    const double* pp = p.data();
    for (int64_t r = 0; r < rows; ++r) {
      std::memcpy(po + r * last + col, pp + r * w, static_cast<size_t>(w) * sizeof(double));
    }
    col += w;
    any_tracked = any_tracked || p.tracked();
  }
  Tape* tape = Tape::active();
  if (tape && any_tracked) {
    out.impl()->tracked = true;
    std::vector<std::shared_ptr<TensorImpl>> impls;
    std::vector<int64_t> widths;
    for (const Tensor& p : parts) {
      impls.push_back(p.tracked() ? p.impl() : nullptr);
      widths.push_back(p.shape().back());
    }
    auto oi = out.impl();
    tape->record([impls, widths, oi, rows, last]() {
      if (oi->grad.empty()) return;
      const double* gy = oi->grad.data();
      int64_t col = 0;
      for (size_t k = 0; k < impls.size(); ++k) {
        int64_t w = widths[k];
        if (impls[k]) {
          impls[k]->ensure_grad();
          double* gp = impls[k]->grad.data();
          for (int64_t r = 0; r < rows; ++r) {
            const double* src = gy + r * last + col;
            double* dst = gp + r * w;
            for (int64_t c = 0; c < w; ++c) dst[c] += src[c];
          }
        }
        col += w;
      }
    });
  }
  return out;
}

Tensor slice_last(const Tensor& x, int64_t from, int64_t to) {
  const Shape& s = x.shape();
  if (s.empty()) throw DimensionError("slice_last: rank >= 1 required");
  int64_t last = s.back();
  if (from < 0 || to <= from || to > last) {
    throw ParameterError("slice_last: invalid range [" + std::to_string(from) + ", " +
                         std::to_string(to) + ") for extent " + std::to_string(last));
  }
  Shape out_shape = s;
  out_shape.back() = to - from;
  Tensor out = Tensor::zeros(out_shape);
  int64_t rows = x.size() / last;
  int64_t w = to - from;
  const double* px = x.data();
  double* po = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    std::memcpy(po + r * w, px + r * last + from, static_cast<size_t>(w) * sizeof(double));
  }
  Tape* tape = Tape::active();
  if (tape && x.tracked()) {
    out.impl()->tracked = true;
    auto xi = x.impl(), oi = out.impl();
    tape->record([xi, oi, rows, last, w, from]() {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      const double* gy = oi->grad.data();
      double* gx = xi->grad.data();
      for (int64_t r = 0; r < rows; ++r) {
        const double* src = gy + r * w;
        double* dst = gx + r * last + from;
        for (int64_t c = 0; c < w; ++c) dst[c] += src[c];
      }
    });
  }
  return out;
}

Tensor tile_first(const Tensor& x, int64_t times) {
  if (times < 1) throw ParameterError("tile_first: times must be >= 1");
  Shape out_shape;
  out_shape.push_back(times);
  for (int64_t e : x.shape()) out_shape.push_back(e);
  Tensor out = Tensor::zeros(out_shape);
  int64_t n = x.size();
  const double* px = x.data();
  double* po = out.data();
  for (int64_t t = 0; t < times; ++t) {
    std::memcpy(po + t * n, px, static_cast<size_t>(n) * sizeof(double));
  }
  Tape* tape = Tape::active();
  if (tape && x.tracked()) {
    out.impl()->tracked = true;
    auto xi = x.impl(), oi = out.impl();
    tape->record([xi, oi, times, n]() {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      const double* gy = oi->grad.data();
      double* gx = xi->grad.data();
      for (int64_t t = 0; t < times; ++t) {
        const double* src = gy + t * n;
        for (int64_t i = 0; i < n; ++i) gx[i] += src[i];
      }
    });
  }
  return out;
}

}  // namespace cvos
