#include <array>

#include "cvos/ops.hpp"

namespace cvos {

namespace {

// Everything runs through a canonical 3-D form: [T, H, W, C] input with
// [kt, kh, kw, Ci, Co] kernels. Lower spatial ranks get leading size-1 axes.
struct ConvDims {
  int64_t T, H, W, Ci;
  int64_t kt, kh, kw, Co;
  int64_t st, sy, sx;
  int64_t pt, py, px;
  int64_t oT, oH, oW;
  Shape out_shape;  // in the caller's original rank
};

ConvDims canonicalize(const Shape& xs, const Shape& ks, const std::vector<int64_t>& stride,
                      const std::vector<int64_t>& padding, const char* opname) {
  int m = static_cast<int>(xs.size()) - 1;
  if (m < 1 || m > 3) {
    throw DimensionError(std::string(opname) + ": input must have 1-3 spatial axes plus channels, got " +
                         shape_str(xs));
  }
  if (static_cast<int>(ks.size()) != m + 2) {
    throw DimensionError(std::string(opname) + ": kernel rank must match spatial rank of input; input " +
                         shape_str(xs) + ", kernel " + shape_str(ks));
  }
  if (static_cast<int>(stride.size()) != m || static_cast<int>(padding.size()) != m) {
    throw ParameterError(std::string(opname) + ": stride/padding must have one entry per spatial axis");
  }
  for (int64_t s : stride) {
    if (s < 1) throw ParameterError(std::string(opname) + ": stride must be >= 1");
  }
  for (int64_t p : padding) {
    if (p < 0) throw ParameterError(std::string(opname) + ": padding must be >= 0");
  }
  if (ks[m] != xs[m]) {
    // channel mismatch is a shape disagreement; report both shapes
    throw DimensionError(std::string(opname) + ": input channels of " + shape_str(xs) +
                         " do not match kernel " + shape_str(ks));
  }
  ConvDims d{};
  std::array<int64_t, 3> in{1, 1, 1}, k{1, 1, 1}, st{1, 1, 1}, pd{0, 0, 0};
  for (int i = 0; i < m; ++i) {
    in[3 - m + i] = xs[i];
    k[3 - m + i] = ks[i];
    st[3 - m + i] = stride[i];
    pd[3 - m + i] = padding[i];
  }
  d.T = in[0]; d.H = in[1]; d.W = in[2]; d.Ci = xs[m];
  d.kt = k[0]; d.kh = k[1]; d.kw = k[2]; d.Co = ks[m + 1];
  d.st = st[0]; d.sy = st[1]; d.sx = st[2];
  d.pt = pd[0]; d.py = pd[1]; d.px = pd[2];
  auto out_extent = [&](int64_t n, int64_t kk, int64_t ss, int64_t pp) {
    if (n + 2 * pp < kk) {
      throw DimensionError(std::string(opname) + ": kernel " + shape_str(ks) +
                           " larger than padded input " + shape_str(xs));
    }
    return (n + 2 * pp - kk) / ss + 1;
  };
  d.oT = out_extent(d.T, d.kt, d.st, d.pt);
  d.oH = out_extent(d.H, d.kh, d.sy, d.py);
  d.oW = out_extent(d.W, d.kw, d.sx, d.px);
  std::array<int64_t, 3> oe{d.oT, d.oH, d.oW};
  for (int i = 0; i < m; ++i) d.out_shape.push_back(oe[3 - m + i]);
  d.out_shape.push_back(d.Co);
  return d;
}

void conv_forward_raw(const ConvDims& d, const double* in, const double* ker, double* out) {
  for (int64_t ot = 0; ot < d.oT; ++ot) {
    for (int64_t oy = 0; oy < d.oH; ++oy) {
      for (int64_t ox = 0; ox < d.oW; ++ox) {
        double* orow = out + ((ot * d.oH + oy) * d.oW + ox) * d.Co;
        for (int64_t kt = 0; kt < d.kt; ++kt) {
          int64_t t = ot * d.st + kt - d.pt;
          if (t < 0 || t >= d.T) continue;
          for (int64_t ky = 0; ky < d.kh; ++ky) {
            int64_t y = oy * d.sy + ky - d.py;
            if (y < 0 || y >= d.H) continue;
            for (int64_t kx = 0; kx < d.kw; ++kx) {
              int64_t x = ox * d.sx + kx - d.px;
              if (x < 0 || x >= d.W) continue;
              const double* irow = in + ((t * d.H + y) * d.W + x) * d.Ci;
              const double* krow = ker + ((kt * d.kh + ky) * d.kw + kx) * d.Ci * d.Co;
              for (int64_t ci = 0; ci < d.Ci; ++ci) {
                double v = irow[ci];
                if (v == 0.0) continue;
                const double* kr = krow + ci * d.Co;
                for (int64_t co = 0; co < d.Co; ++co) orow[co] += v * kr[co];
              }
            }
          }
        }
      }
    }
  }
}

void conv_backward_raw(const ConvDims& d, const double* in, const double* ker, const double* gy,
                       double* gin, double* gker) {
  for (int64_t ot = 0; ot < d.oT; ++ot) {
    for (int64_t oy = 0; oy < d.oH; ++oy) {
      for (int64_t ox = 0; ox < d.oW; ++ox) {
        const double* grow = gy + ((ot * d.oH + oy) * d.oW + ox) * d.Co;
        for (int64_t kt = 0; kt < d.kt; ++kt) {
          int64_t t = ot * d.st + kt - d.pt;
          if (t < 0 || t >= d.T) continue;
          for (int64_t ky = 0; ky < d.kh; ++ky) {
            int64_t y = oy * d.sy + ky - d.py;
            if (y < 0 || y >= d.H) continue;
            for (int64_t kx = 0; kx < d.kw; ++kx) {
              int64_t x = ox * d.sx + kx - d.px;
              if (x < 0 || x >= d.W) continue;
              int64_t ioff = ((t * d.H + y) * d.W + x) * d.Ci;
              int64_t koff = ((kt * d.kh + ky) * d.kw + kx) * d.Ci * d.Co;
              if (gin) {
                double* girow = gin + ioff;
                for (int64_t ci = 0; ci < d.Ci; ++ci) {
                  const double* kr = ker + koff + ci * d.Co;
                  double s = 0.0;
                  for (int64_t co = 0; co < d.Co; ++co) s += kr[co] * grow[co];
                  girow[ci] += s;
                }
              }
              if (gker) {
                const double* irow = in + ioff;
                for (int64_t ci = 0; ci < d.Ci; ++ci) {
                  double v = irow[ci];
                  if (v == 0.0) continue;
                  double* gk = gker + koff + ci * d.Co;
                  for (int64_t co = 0; co < d.Co; ++co) gk[co] += v * grow[co];
                }
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

Tensor convolve(const Tensor& x, const Tensor& kernel, const std::vector<int64_t>& stride,
                const std::vector<int64_t>& padding) {
  ConvDims d = canonicalize(x.shape(), kernel.shape(), stride, padding, "convolve");
  Tensor out = Tensor::zeros(d.out_shape);
  conv_forward_raw(d, x.data(), kernel.data(), out.data());
  Tape* tape = Tape::active();
  if (tape && (x.tracked() || kernel.tracked())) {
    out.impl()->tracked = true;
    auto xi = x.impl(), ki = kernel.impl(), oi = out.impl();
    bool need_x = x.tracked(), need_k = kernel.tracked();
    tape->record([d, xi, ki, oi, need_x, need_k]() {
      if (oi->grad.empty()) return;
      if (need_x) xi->ensure_grad();
      if (need_k) ki->ensure_grad();
      conv_backward_raw(d, xi->values.data(), ki->values.data(), oi->grad.data(),
                        need_x ? xi->grad.data() : nullptr, need_k ? ki->grad.data() : nullptr);
    });
  }
  return out;
}

namespace {

// Shape contract: out = in * stride per axis; odd kernels, pad (k-1)/2.
struct TConvDims {
  int64_t T, H, W, Ci;
  int64_t kt, kh, kw, Co;
  int64_t st, sy, sx;
  int64_t pt, py, px;
  int64_t oT, oH, oW;
  Shape out_shape;
};

TConvDims canonicalize_tconv(const Shape& xs, const Shape& ks, const std::vector<int64_t>& stride) {
  int m = static_cast<int>(xs.size()) - 1;
  if (m < 1 || m > 3) {
    throw DimensionError("transpose_convolve: input must have 1-3 spatial axes plus channels, got " +
                         shape_str(xs));
  }
  if (static_cast<int>(ks.size()) != m + 2) {
    throw DimensionError("transpose_convolve: kernel rank mismatch; input " + shape_str(xs) +
                         ", kernel " + shape_str(ks));
  }
  if (static_cast<int>(stride.size()) != m) {
    throw ParameterError("transpose_convolve: stride must have one entry per spatial axis");
  }
  for (int64_t s : stride) {
    if (s < 1) throw ParameterError("transpose_convolve: stride must be >= 1");
  }
  for (int i = 0; i < m; ++i) {
    if (ks[i] % 2 == 0) throw ParameterError("transpose_convolve: kernel extents must be odd");
  }
  if (ks[m] != xs[m]) {
    throw DimensionError("transpose_convolve: input channels of " + shape_str(xs) +
                         " do not match kernel " + shape_str(ks));
  }
  TConvDims d{};
  std::array<int64_t, 3> in{1, 1, 1}, k{1, 1, 1}, st{1, 1, 1};
  for (int i = 0; i < m; ++i) {
    in[3 - m + i] = xs[i];
    k[3 - m + i] = ks[i];
    st[3 - m + i] = stride[i];
  }
  d.T = in[0]; d.H = in[1]; d.W = in[2]; d.Ci = xs[m];
  d.kt = k[0]; d.kh = k[1]; d.kw = k[2]; d.Co = ks[m + 1];
  d.st = st[0]; d.sy = st[1]; d.sx = st[2];
  d.pt = (d.kt - 1) / 2; d.py = (d.kh - 1) / 2; d.px = (d.kw - 1) / 2;
  d.oT = d.T * d.st; d.oH = d.H * d.sy; d.oW = d.W * d.sx;
  std::array<int64_t, 3> oe{d.oT, d.oH, d.oW};
  for (int i = 0; i < m; ++i) d.out_shape.push_back(oe[3 - m + i]);
  d.out_shape.push_back(d.Co);
  return d;
}

// out[i*s + k - pad] += in[i] * ker[k]
void tconv_forward_raw(const TConvDims& d, const double* in, const double* ker, double* out) {
  for (int64_t it = 0; it < d.T; ++it) {
    for (int64_t iy = 0; iy < d.H; ++iy) {
      for (int64_t ix = 0; ix < d.W; ++ix) {
        const double* irow = in + ((it * d.H + iy) * d.W + ix) * d.Ci;
        for (int64_t kt = 0; kt < d.kt; ++kt) {
          int64_t t = it * d.st + kt - d.pt;
          if (t < 0 || t >= d.oT) continue;
          for (int64_t ky = 0; ky < d.kh; ++ky) {
            int64_t y = iy * d.sy + ky - d.py;
            if (y < 0 || y >= d.oH) continue;
            for (int64_t kx = 0; kx < d.kw; ++kx) {
              int64_t x = ix * d.sx + kx - d.px;
              if (x < 0 || x >= d.oW) continue;
              double* orow = out + ((t * d.oH + y) * d.oW + x) * d.Co;
              const double* krow = ker + ((kt * d.kh + ky) * d.kw + kx) * d.Ci * d.Co;
              for (int64_t ci = 0; ci < d.Ci; ++ci) {
                double v = irow[ci];
                if (v == 0.0) continue;
                const double* kr = krow + ci * d.Co;
                for (int64_t co = 0; co < d.Co; ++co) orow[co] += v * kr[co];
              }
            }
          }
        }
      }
    }
  }
}

void tconv_backward_raw(const TConvDims& d, const double* in, const double* ker, const double* gy,
                        double* gin, double* gker) {
  for (int64_t it = 0; it < d.T; ++it) {
    for (int64_t iy = 0; iy < d.H; ++iy) {
      for (int64_t ix = 0; ix < d.W; ++ix) {
        int64_t ioff = ((it * d.H + iy) * d.W + ix) * d.Ci;
        for (int64_t kt = 0; kt < d.kt; ++kt) {
          int64_t t = it * d.st + kt - d.pt;
          if (t < 0 || t >= d.oT) continue;
          for (int64_t ky = 0; ky < d.kh; ++ky) {
            int64_t y = iy * d.sy + ky - d.py;
            if (y < 0 || y >= d.oH) continue;
            for (int64_t kx = 0; kx < d.kw; ++kx) {
              int64_t x = ix * d.sx + kx - d.px;
              if (x < 0 || x >= d.oW) continue;
              const double* grow = gy + ((t * d.oH + y) * d.oW + x) * d.Co;
              int64_t koff = ((kt * d.kh + ky) * d.kw + kx) * d.Ci * d.Co;
              if (gin) {
                double* girow = gin + ioff;
                for (int64_t ci = 0; ci < d.Ci; ++ci) {
                  const double* kr = ker + koff + ci * d.Co;
                  double s = 0.0;
                  for (int64_t co = 0; co < d.Co; ++co) s += kr[co] * grow[co];
                  girow[ci] += s;
                }
              }
              if (gker) {
                const double* irow = in + ioff;
                for (int64_t ci = 0; ci < d.Ci; ++ci) {
                  double v = irow[ci];
                  if (v == 0.0) continue;
                  double* gk = gker + koff + ci * d.Co;
                  for (int64_t co = 0; co < d.Co; ++co) gk[co] += v * grow[co];
                }
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

Tensor transpose_convolve(const Tensor& x, const Tensor& kernel, const std::vector<int64_t>& stride) {
  TConvDims d = canonicalize_tconv(x.shape(), kernel.shape(), stride);
  Tensor out = Tensor::zeros(d.out_shape);
  tconv_forward_raw(d, x.data(), kernel.data(), out.data());
  Tape* tape = Tape::active();
  if (tape && (x.tracked() || kernel.tracked())) {
    out.impl()->tracked = true;
    auto xi = x.impl(), ki = kernel.impl(), oi = out.impl();
    bool need_x = x.tracked(), need_k = kernel.tracked();
    tape->record([d, xi, ki, oi, need_x, need_k]() {
      if (oi->grad.empty()) return;
      if (need_x) xi->ensure_grad();
      if (need_k) ki->ensure_grad();
      tconv_backward_raw(d, xi->values.data(), ki->values.data(), oi->grad.data(),
                         need_x ? xi->grad.data() : nullptr, need_k ? ki->grad.data() : nullptr);
    });
  }
  return out;
}

Tensor avg_pool(const Tensor& x, const std::vector<int64_t>& window,
                const std::vector<int64_t>& stride, const std::vector<int64_t>& padding) {
  // reuse the conv geometry with a channel-preserving "kernel"
  int m = static_cast<int>(x.rank()) - 1;
  if (m < 1 || m > 3) {
    throw DimensionError("avg_pool: input must have 1-3 spatial axes plus channels, got " +
                         shape_str(x.shape()));
  }
  if (static_cast<int>(window.size()) != m) throw ParameterError("avg_pool: window size mismatch");
  Shape fake_kernel(window.begin(), window.end());
  fake_kernel.push_back(x.shape().back());
  fake_kernel.push_back(x.shape().back());
  ConvDims d = canonicalize(x.shape(), fake_kernel, stride, padding, "avg_pool");
  Tensor out = Tensor::zeros(d.out_shape);
  const double* in = x.data();
  double* po = out.data();
  int64_t C = d.Ci;
  std::vector<double> counts(static_cast<size_t>(d.oT * d.oH * d.oW), 0.0);
  for (int64_t ot = 0; ot < d.oT; ++ot) {
    for (int64_t oy = 0; oy < d.oH; ++oy) {
      for (int64_t ox = 0; ox < d.oW; ++ox) {
        int64_t opos = (ot * d.oH + oy) * d.oW + ox;
        double* orow = po + opos * C;
        int64_t cnt = 0;
        for (int64_t kt = 0; kt < d.kt; ++kt) {
          int64_t t = ot * d.st + kt - d.pt;
          if (t < 0 || t >= d.T) continue;
          for (int64_t ky = 0; ky < d.kh; ++ky) {
            int64_t y = oy * d.sy + ky - d.py;
            if (y < 0 || y >= d.H) continue;
            for (int64_t kx = 0; kx < d.kw; ++kx) {
              int64_t x2 = ox * d.sx + kx - d.px;
              if (x2 < 0 || x2 >= d.W) continue;
              const double* irow = in + ((t * d.H + y) * d.W + x2) * C;
              for (int64_t c = 0; c < C; ++c) orow[c] += irow[c];
              ++cnt;
            }
          }
        }
        double inv = cnt > 0 ? 1.0 / static_cast<double>(cnt) : 0.0;
        counts[static_cast<size_t>(opos)] = inv;
        for (int64_t c = 0; c < C; ++c) orow[c] *= inv;
      }
    }
  }
  Tape* tape = Tape::active();
  if (tape && x.tracked()) {
    out.impl()->tracked = true;
    auto xi = x.impl(), oi = out.impl();
    tape->record([d, xi, oi, counts, C]() {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      const double* gy = oi->grad.data();
      double* gx = xi->grad.data();
      for (int64_t ot = 0; ot < d.oT; ++ot) {
        for (int64_t oy = 0; oy < d.oH; ++oy) {
          for (int64_t ox = 0; ox < d.oW; ++ox) {
            int64_t opos = (ot * d.oH + oy) * d.oW + ox;
            const double* grow = gy + opos * C;
            double inv = counts[static_cast<size_t>(opos)];
            for (int64_t kt = 0; kt < d.kt; ++kt) {
              int64_t t = ot * d.st + kt - d.pt;
              if (t < 0 || t >= d.T) continue;
              for (int64_t ky = 0; ky < d.kh; ++ky) {
                int64_t y = oy * d.sy + ky - d.py;
                if (y < 0 || y >= d.H) continue;
                for (int64_t kx = 0; kx < d.kw; ++kx) {
                  int64_t x2 = ox * d.sx + kx - d.px;
                  if (x2 < 0 || x2 >= d.W) continue;
                  double* girow = gx + ((t * d.H + y) * d.W + x2) * C;
                  for (int64_t c = 0; c < C; ++c) girow[c] += grow[c] * inv;
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

}  // namespace cvos
