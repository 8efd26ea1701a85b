#include "cvos/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace cvos {

std::vector<int64_t> schedule_clips(int64_t video_length, int64_t clip_length, int64_t overlap) {
  if (clip_length < 1) throw ParameterError("schedule_clips: clip_length must be positive");
  if (overlap < 0 || overlap >= clip_length) {
    throw ParameterError("schedule_clips: overlap must lie in [0, clip_length - 1]");
  }
  if (video_length < clip_length) {
    throw ParameterError("schedule_clips: video shorter than one clip; pad before scheduling");
  }
  int64_t stride = clip_length - overlap;
  std::vector<int64_t> starts{0};
  while (starts.back() + clip_length < video_length) {
    starts.push_back(std::min(starts.back() + stride, video_length - clip_length));
  }
  return starts;
}

static void check_binary_pair(const Tensor& pred, const Tensor& gt, const char* opname) {
  if (pred.shape() != gt.shape() || pred.rank() != 2) {
    throw DimensionError(std::string(opname) + ": masks must be equal-shaped [H,W]; got " +
                         shape_str(pred.shape()) + " and " + shape_str(gt.shape()));
  }
}

double region_similarity_J(const Tensor& pred, const Tensor& gt) {
  check_binary_pair(pred, gt, "region_similarity_J");
  const double* p = pred.data();
  const double* g = gt.data();
  int64_t inter = 0, uni = 0;
  for (int64_t i = 0; i < pred.size(); ++i) {
    bool bp = p[i] > 0.5, bg = g[i] > 0.5;
    inter += bp && bg;
    uni += bp || bg;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<std::pair<int64_t, int64_t>> boundary_pixels(const Tensor& mask) {
  int64_t H = mask.extent(0), W = mask.extent(1);
  const double* m = mask.data();
  auto fg = [&](int64_t r, int64_t c) {
    if (r < 0 || r >= H || c < 0 || c >= W) return false;  // outside counts as background
    return m[r * W + c] > 0.5;
  };
  std::vector<std::pair<int64_t, int64_t>> out;
  for (int64_t r = 0; r < H; ++r) {
    for (int64_t c = 0; c < W; ++c) {
      if (!fg(r, c)) continue;
      if (!fg(r - 1, c) || !fg(r + 1, c) || !fg(r, c - 1) || !fg(r, c + 1)) out.push_back({r, c});
    }
  }
  return out;
}

double contour_accuracy_F(const Tensor& pred, const Tensor& gt, double tolerance_px) {
  check_binary_pair(pred, gt, "contour_accuracy_F");
  auto bp = boundary_pixels(pred);
  auto bg = boundary_pixels(gt);
  if (bp.empty() && bg.empty()) return 1.0;
  if (bp.empty() || bg.empty()) return 0.0;

  int64_t H = pred.extent(0), W = pred.extent(1);
  auto matched_count = [&](const std::vector<std::pair<int64_t, int64_t>>& from,
                           const std::vector<std::pair<int64_t, int64_t>>& to) {
    // rasterize the target boundary, then scan a window of radius ceil(tol)
    std::vector<char> grid(static_cast<size_t>(H * W), 0);
    for (auto [r, c] : to) grid[static_cast<size_t>(r * W + c)] = 1;
    int64_t rad = static_cast<int64_t>(std::ceil(tolerance_px));
    double tol2 = tolerance_px * tolerance_px;
    int64_t matched = 0;
    for (auto [r, c] : from) {
      bool hit = false;
      for (int64_t dr = -rad; dr <= rad && !hit; ++dr) {
        int64_t rr = r + dr;
        if (rr < 0 || rr >= H) continue;
        for (int64_t dc = -rad; dc <= rad; ++dc) {
          int64_t cc = c + dc;
          if (cc < 0 || cc >= W) continue;
          if (grid[static_cast<size_t>(rr * W + cc)] &&
              static_cast<double>(dr * dr + dc * dc) <= tol2) {
            hit = true;
            break;
          }
        }
      }
      matched += hit;
    }
    return matched;
  };
  double precision = static_cast<double>(matched_count(bp, bg)) / static_cast<double>(bp.size());
  double recall = static_cast<double>(matched_count(bg, bp)) / static_cast<double>(bg.size());
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

Tensor binarize(const Tensor& probs, double threshold) {
  Tensor out = Tensor::zeros(probs.shape());
  const double* p = probs.data();
  double* o = out.data();
  for (int64_t i = 0; i < probs.size(); ++i) o[i] = p[i] > threshold ? 1.0 : 0.0;
  return out;
}

}  // namespace cvos
