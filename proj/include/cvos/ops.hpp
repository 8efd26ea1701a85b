#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "cvos/tensor.hpp"

namespace cvos {

// ---- pointwise -------------------------------------------------------------
// Binary ops broadcast with numpy alignment rules.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& x, double c);
Tensor mul_scalar(const Tensor& x, double c);
Tensor neg(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);  // domain error on non-positive input
Tensor sqrt(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);

enum class PointwiseKind { sigmoid, relu, tanh, exp, log, neg, sqrt, add, mul, sub, div };
Tensor pointwise(PointwiseKind kind, const std::vector<Tensor>& operands);

// Untracked {0,1} indicator of strictly positive entries.
Tensor positive_mask(const Tensor& x);

// ---- reductions ------------------------------------------------------------
enum class ReduceKind { sum, mean, max, softmax };
Tensor reduce(ReduceKind kind, const Tensor& x, const std::vector<int>& axes, bool keepdims = false);
Tensor sum(const Tensor& x, const std::vector<int>& axes, bool keepdims = false);
Tensor mean(const Tensor& x, const std::vector<int>& axes, bool keepdims = false);
Tensor max_reduce(const Tensor& x, const std::vector<int>& axes, bool keepdims = false);
Tensor softmax(const Tensor& x, int axis);  // max-subtracted, sums to 1 along axis
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

// ---- shape -----------------------------------------------------------------
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat_last(const std::vector<Tensor>& parts);
Tensor slice_last(const Tensor& x, int64_t from, int64_t to);
Tensor tile_first(const Tensor& x, int64_t times);  // new leading axis, x repeated

// ---- linear algebra --------------------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b);
// Batched 4x4 pose products: poses [..., I, 16] x weights [I, J, 16] -> [..., I, J, 16].
Tensor pose_transform(const Tensor& poses, const Tensor& weights);

// ---- convolution -----------------------------------------------------------
// x: [spatial..., Cin], kernel: [k..., Cin, Cout]; zero padding, cross-correlation.
// Output extent per axis: floor((in + 2*pad - k) / stride) + 1.
Tensor convolve(const Tensor& x, const Tensor& kernel, const std::vector<int64_t>& stride,
                const std::vector<int64_t>& padding);
// Adjoint of convolve with the fixed shape contract out = in * stride
// (odd kernels, pad (k-1)/2, trailing output padding stride-1).
Tensor transpose_convolve(const Tensor& x, const Tensor& kernel, const std::vector<int64_t>& stride);
// Mean over the window, counting only in-bounds taps.
Tensor avg_pool(const Tensor& x, const std::vector<int64_t>& window,
                const std::vector<int64_t>& stride, const std::vector<int64_t>& padding);

// ---- recurrent cell ----------------------------------------------------------
struct MemoryState {
  Tensor hidden;
  Tensor cell;
};

// Convolutional gates over concat(input, hidden); kernel [kh, kw, Cin+Ch, 4*Ch],
// gate order input/forget/output/candidate.
struct GateKernels {
  Tensor kernel;
  Tensor bias;  // [4*Ch]
};

std::pair<Tensor, MemoryState> recurrent_cell_step(const Tensor& input, const MemoryState& state,
                                                   const GateKernels& gates);

// ---- verification ----------------------------------------------------------
// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
double finite_difference_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                               double h);

// ---- image utilities (forward-only, no gradients) --------------------------
Tensor bilinear_resize(const Tensor& img, int64_t out_h, int64_t out_w);  // [H,W] or [H,W,C]
Tensor nearest_resize(const Tensor& img, int64_t out_h, int64_t out_w);
Tensor frame_slice(const Tensor& stack, int64_t index);  // stack[index], values only

}  // namespace cvos
