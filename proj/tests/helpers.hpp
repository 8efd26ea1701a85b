#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "cvos/ops.hpp"
#include "cvos/rng.hpp"
#include "cvos/tensor.hpp"

namespace cvos::testutil {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return Tensor::uniform(std::move(shape), rng, lo, hi);
}

inline double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  const double* pa = a.data();
  const double* pb = b.data();
  for (int64_t i = 0; i < a.size(); ++i) s += pa[i] * pb[i];
  return s;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  const double* pa = a.data();
  const double* pb = b.data();
  for (int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(pa[i] - pb[i]));
  return m;
}

// L^T(seed) for a linear map L, obtained as the gradient of <L(x), seed>.
inline Tensor adjoint_apply(const std::function<Tensor(const Tensor&)>& op, const Tensor& x,
                            const Tensor& seed) {
  Tensor probe = x.detach().set_requires_grad(true);
  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    loss = sum_all(mul(op(probe), seed));
  }
  tape.backward(loss);
  return probe.grad();
}

}  // namespace cvos::testutil
