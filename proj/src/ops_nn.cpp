#include <algorithm>
#include <cmath>

#include "cvos/ops.hpp"

namespace cvos {

std::pair<Tensor, MemoryState> recurrent_cell_step(const Tensor& input, const MemoryState& state,
                                                   const GateKernels& gates) {
  const Shape& is = input.shape();
  const Shape& hs = state.hidden.shape();
  if (is.size() != 3 || hs.size() != 3 || is[0] != hs[0] || is[1] != hs[1]) {
    throw DimensionError("recurrent_cell_step: input " + shape_str(is) +
                         " and state " + shape_str(hs) + " spatial extents must match");
  }
  if (state.cell.shape() != hs) {
    throw DimensionError("recurrent_cell_step: hidden/cell shapes disagree");
  }
  int64_t ch = hs[2];
  const Shape& ks = gates.kernel.shape();
  if (ks.size() != 4 || ks[2] != is[2] + ch || ks[3] != 4 * ch) {
    throw DimensionError("recurrent_cell_step: gate kernel " + shape_str(ks) +
                         " incompatible with input " + shape_str(is) + " and state " + shape_str(hs));
  }
  Tensor xh = concat_last({input, state.hidden});
  std::vector<int64_t> stride{1, 1};
  std::vector<int64_t> pad{(ks[0] - 1) / 2, (ks[1] - 1) / 2};
  Tensor z = add(convolve(xh, gates.kernel, stride, pad), gates.bias);
  Tensor gi = sigmoid(slice_last(z, 0, ch));
  Tensor gf = sigmoid(slice_last(z, ch, 2 * ch));
  Tensor go = sigmoid(slice_last(z, 2 * ch, 3 * ch));
  Tensor gc = tanh(slice_last(z, 3 * ch, 4 * ch));
  Tensor cell = add(mul(gf, state.cell), mul(gi, gc));
  Tensor hidden = mul(go, tanh(cell));
  return {hidden, MemoryState{hidden, cell}};
}

double finite_difference_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                               double h) {
  if (!(h > 0.0)) throw ParameterError("finite_difference_check: step must be positive");
  Tensor probe = x.detach().set_requires_grad(true);
  Tensor analytic;
  {
    Tape tape;
    Tensor y;
    {
      TapeScope scope(tape);
      y = f(probe);
    }
    if (y.size() != 1) throw ContractError("finite_difference_check: f must return a scalar");
    tape.backward(y);
    analytic = probe.grad();
  }
  const double* ga = analytic.data();
  double worst = 0.0;
  Tensor pert = x.detach();
  double* pd = pert.data();
  for (int64_t i = 0; i < x.size(); ++i) {
    double orig = pd[i];
    pd[i] = orig + h;
    double fp = f(pert).item();
    pd[i] = orig - h;
    double fm = f(pert).item();
    pd[i] = orig;
    double fd = (fp - fm) / (2.0 * h);
    double err = std::abs(ga[i] - fd) / std::max(1.0, std::abs(ga[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

namespace {

void check_image_rank(const Tensor& img, const char* opname) {
  if (img.rank() != 2 && img.rank() != 3) {
    throw DimensionError(std::string(opname) + ": expected [H,W] or [H,W,C], got " +
                         shape_str(img.shape()));
  }
}

}  // namespace

Tensor bilinear_resize(const Tensor& img, int64_t out_h, int64_t out_w) {
  check_image_rank(img, "bilinear_resize");
  if (out_h < 1 || out_w < 1) throw ParameterError("bilinear_resize: output extents must be positive");
  int64_t H = img.extent(0), W = img.extent(1);
  int64_t C = img.rank() == 3 ? img.extent(2) : 1;
  Shape out_shape = img.rank() == 3 ? Shape{out_h, out_w, C} : Shape{out_h, out_w};
  Tensor out = Tensor::zeros(out_shape);
  const double* src = img.data();
  double* dst = out.data();
  double sy = static_cast<double>(H) / static_cast<double>(out_h);
  double sx = static_cast<double>(W) / static_cast<double>(out_w);
  for (int64_t i = 0; i < out_h; ++i) {
    double fy = (static_cast<double>(i) + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(H - 1));
    int64_t y0 = static_cast<int64_t>(fy);
    int64_t y1 = std::min(y0 + 1, H - 1);
    double wy = fy - static_cast<double>(y0);
    for (int64_t j = 0; j < out_w; ++j) {
      double fx = (static_cast<double>(j) + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(W - 1));
      int64_t x0 = static_cast<int64_t>(fx);
      int64_t x1 = std::min(x0 + 1, W - 1);
      double wx = fx - static_cast<double>(x0);
      for (int64_t c = 0; c < C; ++c) {
        double v00 = src[(y0 * W + x0) * C + c];
        double v01 = src[(y0 * W + x1) * C + c];
        double v10 = src[(y1 * W + x0) * C + c];
        double v11 = src[(y1 * W + x1) * C + c];
        double top = v00 + (v01 - v00) * wx;
        double bot = v10 + (v11 - v10) * wx;
        dst[(i * out_w + j) * C + c] = top + (bot - top) * wy;
      }
    }
  }
  return out;
}

Tensor frame_slice(const Tensor& stack, int64_t index) {
  const Shape& s = stack.shape();
  if (s.size() < 2) throw DimensionError("frame_slice: rank >= 2 required");
  if (index < 0 || index >= s[0]) throw ParameterError("frame_slice: index out of range");
  Shape fs(s.begin() + 1, s.end());
  int64_t n = shape_numel(fs);
  std::vector<double> v(stack.data() + index * n, stack.data() + (index + 1) * n);
  return Tensor::from_data(fs, std::move(v));
}

Tensor nearest_resize(const Tensor& img, int64_t out_h, int64_t out_w) {
  check_image_rank(img, "nearest_resize");
  if (out_h < 1 || out_w < 1) throw ParameterError("nearest_resize: output extents must be positive");
  int64_t H = img.extent(0), W = img.extent(1);
  int64_t C = img.rank() == 3 ? img.extent(2) : 1;
  Shape out_shape = img.rank() == 3 ? Shape{out_h, out_w, C} : Shape{out_h, out_w};
  Tensor out = Tensor::zeros(out_shape);
  const double* src = img.data();
  double* dst = out.data();
  double sy = static_cast<double>(H) / static_cast<double>(out_h);
  double sx = static_cast<double>(W) / static_cast<double>(out_w);
  for (int64_t i = 0; i < out_h; ++i) {
    int64_t y = std::min<int64_t>(static_cast<int64_t>((static_cast<double>(i) + 0.5) * sy), H - 1);
    for (int64_t j = 0; j < out_w; ++j) {
      int64_t x = std::min<int64_t>(static_cast<int64_t>((static_cast<double>(j) + 0.5) * sx), W - 1);
      for (int64_t c = 0; c < C; ++c) dst[(i * out_w + j) * C + c] = src[(y * W + x) * C + c];
    }
  }
  return out;
}

}  // namespace cvos
