#include "cvos/ops.hpp"

namespace cvos {

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw DimensionError("matmul requires rank-2 operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  int64_t m = a.extent(0), k = a.extent(1), k2 = b.extent(0), n = b.extent(1);
  if (k != k2) {
    throw DimensionError("matmul: inner extents disagree between " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  Tensor out = Tensor::zeros({m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t l = 0; l < k; ++l) {
      double v = pa[i * k + l];
      const double* brow = pb + l * n;
      double* orow = po + i * n;
      for (int64_t j = 0; j < n; ++j) orow[j] += v * brow[j];
    }
  }
  Tape* tape = Tape::active();
  if (tape && (a.tracked() || b.tracked())) {
    out.impl()->tracked = true;
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    bool need_a = a.tracked(), need_b = b.tracked();
    tape->record([ai, bi, oi, m, k, n, need_a, need_b]() {
      if (oi->grad.empty()) return;
      const double* gy = oi->grad.data();
      if (need_a) {
        ai->ensure_grad();
        const double* pb = bi->values.data();
        double* ga = ai->grad.data();
        for (int64_t i = 0; i < m; ++i) {
          for (int64_t l = 0; l < k; ++l) {
            double s = 0.0;
            const double* brow = pb + l * n;
            const double* grow = gy + i * n;
            for (int64_t j = 0; j < n; ++j) s += brow[j] * grow[j];
            ga[i * k + l] += s;
          }
        }
      }
      if (need_b) {
        bi->ensure_grad();
        const double* pa = ai->values.data();
        double* gb = bi->grad.data();
        for (int64_t i = 0; i < m; ++i) {
          const double* grow = gy + i * n;
          for (int64_t l = 0; l < k; ++l) {
            double v = pa[i * k + l];
            double* brow = gb + l * n;
            for (int64_t j = 0; j < n; ++j) brow[j] += v * grow[j];
          }
        }
      }
    });
  }
  return out;
}

// votes[l, i, j] = poses[l, i] (4x4) * weights[i, j] (4x4)
Tensor pose_transform(const Tensor& poses, const Tensor& weights) {
  const Shape& ps = poses.shape();
  const Shape& ws = weights.shape();
  if (ps.size() < 2 || ps.back() != 16) {
    throw DimensionError("pose_transform: poses must be [..., I, 16], got " + shape_str(ps));
  }
  if (ws.size() != 3 || ws[2] != 16) {
    throw DimensionError("pose_transform: weights must be [I, J, 16], got " + shape_str(ws));
  }
  int64_t types_in = ps[ps.size() - 2];
  if (types_in != ws[0]) {
    throw DimensionError("pose_transform: input type count disagrees between " + shape_str(ps) +
                         " and " + shape_str(ws));
  }
  int64_t j_out = ws[1];
  int64_t sites = poses.size() / (types_in * 16);
  Shape out_shape(ps.begin(), ps.end() - 1);
  out_shape.push_back(j_out);
  out_shape.push_back(16);

  Tensor out = Tensor::zeros(out_shape);
  const double* pp = poses.data();
  const double* pw = weights.data();
  double* po = out.data();
  for (int64_t l = 0; l < sites; ++l) {
    for (int64_t i = 0; i < types_in; ++i) {
      const double* M = pp + (l * types_in + i) * 16;
      for (int64_t j = 0; j < j_out; ++j) {
        const double* W = pw + (i * j_out + j) * 16;
        double* V = po + ((l * types_in + i) * j_out + j) * 16;
        for (int r = 0; r < 4; ++r) {
          for (int c = 0; c < 4; ++c) {
            double s = 0.0;
            for (int t = 0; t < 4; ++t) s += M[r * 4 + t] * W[t * 4 + c];
            V[r * 4 + c] = s;
          }
        }
      }
    }
  }
  Tape* tape = Tape::active();
  if (tape && (poses.tracked() || weights.tracked())) {
    out.impl()->tracked = true;
    auto pi = poses.impl(), wi = weights.impl(), oi = out.impl();
    bool need_p = poses.tracked(), need_w = weights.tracked();
    tape->record([pi, wi, oi, sites, types_in, j_out, need_p, need_w]() {
      if (oi->grad.empty()) return;
      const double* gy = oi->grad.data();
      const double* pp = pi->values.data();
      const double* pw = wi->values.data();
      if (need_p) pi->ensure_grad();
      if (need_w) wi->ensure_grad();
      double* gp = need_p ? pi->grad.data() : nullptr;
      double* gw = need_w ? wi->grad.data() : nullptr;
      for (int64_t l = 0; l < sites; ++l) {
        for (int64_t i = 0; i < types_in; ++i) {
          const double* M = pp + (l * types_in + i) * 16;
          double* gM = gp ? gp + (l * types_in + i) * 16 : nullptr;
          for (int64_t j = 0; j < j_out; ++j) {
            const double* W = pw + (i * j_out + j) * 16;
            const double* gV = gy + ((l * types_in + i) * j_out + j) * 16;
            double* gW = gw ? gw + (i * j_out + j) * 16 : nullptr;
            for (int r = 0; r < 4; ++r) {
              for (int t = 0; t < 4; ++t) {
                double sm = 0.0;
                for (int c = 0; c < 4; ++c) sm += gV[r * 4 + c] * W[t * 4 + c];
                if (gM) gM[r * 4 + t] += sm;
                if (gW) {
                  double v = M[r * 4 + t];
                  for (int c = 0; c < 4; ++c) gW[t * 4 + c] += v * gV[r * 4 + c];
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
