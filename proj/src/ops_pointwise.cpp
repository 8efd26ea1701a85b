#include <cmath>
#include <cstring>

#include "cvos/ops.hpp"

namespace cvos {

namespace {

struct BroadcastPlan {
  Shape out;
  std::vector<int64_t> stride_a;  // per out axis; 0 where broadcast
  std::vector<int64_t> stride_b;
  int64_t n = 1;
  bool same_shape = false;
};

BroadcastPlan make_broadcast(const Shape& a, const Shape& b, const char* opname) {
  BroadcastPlan plan;
  if (a == b) {
    plan.out = a;
    plan.n = shape_numel(a);
    plan.same_shape = true;
    return plan;
  }
  size_t rank = std::max(a.size(), b.size());
  plan.out.resize(rank);
  for (size_t i = 0; i < rank; ++i) {
    int64_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    int64_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw DimensionError(std::string(opname) + ": shapes " + shape_str(a) + " and " +
                           shape_str(b) + " are not broadcastable");
    }
    plan.out[i] = std::max(ea, eb);
  }
  plan.n = shape_numel(plan.out);
  // row-major strides with 0 on broadcast axes
  auto strides_for = [&](const Shape& s) {
    std::vector<int64_t> st(rank, 0);
    int64_t acc = 1;
    for (size_t i = 0; i < s.size(); ++i) {
      size_t d = s.size() - 1 - i;
      size_t od = rank - 1 - i;
      st[od] = (s[d] == 1 && plan.out[od] != 1) ? 0 : acc;
      acc *= s[d];
    }
    return st;
  };
  plan.stride_a = strides_for(a);
  plan.stride_b = strides_for(b);
  return plan;
}

// Odometer walk over the broadcast output, calling fn(out_idx, a_idx, b_idx).
template <class Fn>
void broadcast_walk(const BroadcastPlan& plan, Fn&& fn) {
  size_t rank = plan.out.size();
  if (rank == 0) {
    fn(0, 0, 0);
    return;
  }
  std::vector<int64_t> coord(rank, 0);
  int64_t ia = 0, ib = 0;
  for (int64_t i = 0; i < plan.n; ++i) {
    fn(i, ia, ib);
    for (size_t d = rank; d-- > 0;) {
      ++coord[d];
      ia += plan.stride_a[d];
      ib += plan.stride_b[d];
      if (coord[d] < plan.out[d]) break;
      ia -= plan.stride_a[d] * plan.out[d];
      ib -= plan.stride_b[d] * plan.out[d];
      coord[d] = 0;
    }
  }
}

template <class Op>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b) {
  BroadcastPlan plan = make_broadcast(a.shape(), b.shape(), name);
  Tensor out = Tensor::zeros(plan.out);
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  if (plan.same_shape) {
    for (int64_t i = 0; i < plan.n; ++i) po[i] = Op::fwd(pa[i], pb[i]);
  } else {
    broadcast_walk(plan, [&](int64_t i, int64_t ia, int64_t ib) { po[i] = Op::fwd(pa[ia], pb[ib]); });
  }
  Tape* tape = Tape::active();
  if (tape && (a.tracked() || b.tracked())) {
    out.impl()->tracked = true;
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    bool need_a = a.tracked(), need_b = b.tracked();
    tape->record([ai, bi, oi, plan, need_a, need_b]() {
      const double* gy = oi->grad.data();
      if (oi->grad.empty()) return;
      const double* va = ai->values.data();
      const double* vb = bi->values.data();
      const double* vy = oi->values.data();
      if (need_a) ai->ensure_grad();
      if (need_b) bi->ensure_grad();
      double* ga = need_a ? ai->grad.data() : nullptr;
      double* gb = need_b ? bi->grad.data() : nullptr;
      if (plan.same_shape) {
        for (int64_t i = 0; i < plan.n; ++i) {
          if (ga) ga[i] += Op::dfda(va[i], vb[i], vy[i]) * gy[i];
          if (gb) gb[i] += Op::dfdb(va[i], vb[i], vy[i]) * gy[i];
        }
      } else {
        broadcast_walk(plan, [&](int64_t i, int64_t ia, int64_t ib) {
          if (ga) ga[ia] += Op::dfda(va[ia], vb[ib], vy[i]) * gy[i];
          if (gb) gb[ib] += Op::dfdb(va[ia], vb[ib], vy[i]) * gy[i];
        });
      }
    });
  }
  return out;
}

struct AddOp {
  static double fwd(double a, double b) { return a + b; }
  static double dfda(double, double, double) { return 1.0; }
  static double dfdb(double, double, double) { return 1.0; }
};
struct SubOp {
  static double fwd(double a, double b) { return a - b; }
  static double dfda(double, double, double) { return 1.0; }
  static double dfdb(double, double, double) { return -1.0; }
};
struct MulOp {
  static double fwd(double a, double b) { return a * b; }
  static double dfda(double, double b, double) { return b; }
  static double dfdb(double a, double, double) { return a; }
};
struct DivOp {
  static double fwd(double a, double b) { return a / b; }
  static double dfda(double, double b, double) { return 1.0 / b; }
  static double dfdb(double, double b, double y) { return -y / b; }
};

// Unary op: y = f(x); df computed from (x, y).
template <class Op>
Tensor unary_op(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const double* px = x.data();
  double* po = out.data();
  int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) po[i] = Op::fwd(px[i]);
  Tape* tape = Tape::active();
  if (tape && x.tracked()) {
    out.impl()->tracked = true;
    auto xi = x.impl(), oi = out.impl();
    tape->record([xi, oi, n]() {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      const double* gy = oi->grad.data();
      const double* vx = xi->values.data();
      const double* vy = oi->values.data();
      double* gx = xi->grad.data();
      for (int64_t i = 0; i < n; ++i) gx[i] += Op::df(vx[i], vy[i]) * gy[i];
    });
  }
  return out;
}

struct NegOp {
  static double fwd(double x) { return -x; }
  static double df(double, double) { return -1.0; }
};
struct ExpOp {
  static double fwd(double x) { return std::exp(x); }
  static double df(double, double y) { return y; }
};
struct LogOp {
  static double fwd(double x) { return std::log(x); }
  static double df(double x, double) { return 1.0 / x; }
};
struct SqrtOp {
  static double fwd(double x) { return std::sqrt(x); }
  static double df(double, double y) { return 0.5 / y; }
};
struct SigmoidOp {
  static double fwd(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }
  static double df(double, double y) { return y * (1.0 - y); }
};
struct ReluOp {
  static double fwd(double x) { return x > 0.0 ? x : 0.0; }
  static double df(double x, double) { return x > 0.0 ? 1.0 : 0.0; }
};
struct TanhOp {
  static double fwd(double x) { return std::tanh(x); }
  static double df(double, double y) { return 1.0 - y * y; }
};

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op<AddOp>("add", a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op<SubOp>("sub", a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op<MulOp>("mul", a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return binary_op<DivOp>("div", a, b); }

Tensor neg(const Tensor& x) { return unary_op<NegOp>(x); }
Tensor exp(const Tensor& x) { return unary_op<ExpOp>(x); }

Tensor log(const Tensor& x) {
  const double* p = x.data();
  for (int64_t i = 0; i < x.size(); ++i) {
    if (!(p[i] > 0.0)) throw DomainError("log requires strictly positive input");
  }
  return unary_op<LogOp>(x);
}

Tensor sqrt(const Tensor& x) {
  const double* p = x.data();
  for (int64_t i = 0; i < x.size(); ++i) {
    if (p[i] < 0.0) throw DomainError("sqrt requires non-negative input");
  }
  return unary_op<SqrtOp>(x);
}

Tensor sigmoid(const Tensor& x) { return unary_op<SigmoidOp>(x); }
Tensor relu(const Tensor& x) { return unary_op<ReluOp>(x); }
Tensor tanh(const Tensor& x) { return unary_op<TanhOp>(x); }

Tensor add_scalar(const Tensor& x, double c) {
  Tensor out = Tensor::zeros(x.shape());
  const double* px = x.data();
  double* po = out.data();
  int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) po[i] = px[i] + c;
  Tape* tape = Tape::active();
  if (tape && x.tracked()) {
    out.impl()->tracked = true;
    auto xi = x.impl(), oi = out.impl();
    tape->record([xi, oi, n]() {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (int64_t i = 0; i < n; ++i) xi->grad[i] += oi->grad[i];
    });
  }
  return out;
}

Tensor mul_scalar(const Tensor& x, double c) {
  Tensor out = Tensor::zeros(x.shape());
  const double* px = x.data();
  double* po = out.data();
  int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) po[i] = px[i] * c;
  Tape* tape = Tape::active();
  if (tape && x.tracked()) {
    out.impl()->tracked = true;
    auto xi = x.impl(), oi = out.impl();
    tape->record([xi, oi, n, c]() {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (int64_t i = 0; i < n; ++i) xi->grad[i] += c * oi->grad[i];
    });
  }
  return out;
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (!(lo <= hi)) throw ParameterError("clamp: lo must not exceed hi");
  Tensor out = Tensor::zeros(x.shape());
  const double* px = x.data();
  double* po = out.data();
  int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) po[i] = px[i] < lo ? lo : (px[i] > hi ? hi : px[i]);
  Tape* tape = Tape::active();
  if (tape && x.tracked()) {
    out.impl()->tracked = true;
    auto xi = x.impl(), oi = out.impl();
    tape->record([xi, oi, n, lo, hi]() {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (int64_t i = 0; i < n; ++i) {
        double v = xi->values[i];
        if (v > lo && v < hi) xi->grad[i] += oi->grad[i];
      }
    });
  }
  return out;
}

Tensor positive_mask(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const double* px = x.data();
  double* po = out.data();
  for (int64_t i = 0; i < x.size(); ++i) po[i] = px[i] > 0.0 ? 1.0 : 0.0;
  return out;
}

Tensor pointwise(PointwiseKind kind, const std::vector<Tensor>& operands) {
  auto unary = [&](const char* name) -> const Tensor& {
    if (operands.size() != 1) throw ParameterError(std::string(name) + " takes one operand");
    return operands[0];
  };
  auto binary = [&](const char* name) {
    if (operands.size() != 2) throw ParameterError(std::string(name) + " takes two operands");
  };
  switch (kind) {
    case PointwiseKind::sigmoid: return sigmoid(unary("sigmoid"));
    case PointwiseKind::relu: return relu(unary("relu"));
    case PointwiseKind::tanh: return tanh(unary("tanh"));
    case PointwiseKind::exp: return exp(unary("exp"));
    case PointwiseKind::log: return log(unary("log"));
    case PointwiseKind::neg: return neg(unary("neg"));
    case PointwiseKind::sqrt: return sqrt(unary("sqrt"));
    case PointwiseKind::add: binary("add"); return add(operands[0], operands[1]);
    case PointwiseKind::mul: binary("mul"); return mul(operands[0], operands[1]);
    case PointwiseKind::sub: binary("sub"); return sub(operands[0], operands[1]);
    case PointwiseKind::div: binary("div"); return div(operands[0], operands[1]);
  }
  throw ParameterError("unknown pointwise kind");
}

}  // namespace cvos
