#pragma once

#include <cstdint>
#include <vector>

#include "cvos/tensor.hpp"

namespace cvos {

// Ordered clip start indices advancing by (clip_length - overlap); the final
// start is clamped so every frame is covered.
std::vector<int64_t> schedule_clips(int64_t video_length, int64_t clip_length, int64_t overlap);

// Intersection over union of binary masks; 1 when both are empty.
double region_similarity_J(const Tensor& pred, const Tensor& gt);

// F-measure over boundary pixels matched within tolerance_px Euclidean
// distance. Boundary = foreground pixel 4-adjacent to background (the outside
// of the frame counts as background).
double contour_accuracy_F(const Tensor& pred, const Tensor& gt, double tolerance_px = 1.0);

std::vector<std::pair<int64_t, int64_t>> boundary_pixels(const Tensor& mask);

Tensor binarize(const Tensor& probs, double threshold = 0.5);

}  // namespace cvos
