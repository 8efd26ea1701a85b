#pragma once

#include "cvos/tensor.hpp"

namespace cvos {

struct LossConfig {
  double epsilon = 1e-7;      // dice stabiliser, added once per sum
  double prob_clamp = 1e-7;   // predictions clamped to [clamp, 1-clamp] before logs
  void validate() const;
};

// -(1/N) sum[y ln p + (1-y) ln(1-p)] with the documented probability clamp.
Tensor bce_loss(const Tensor& pred, const Tensor& target, const LossConfig& cfg = {});

// 1 - (sum py + eps)/(sum(p+y) + eps) - (sum (1-p)(1-y) + eps)/(sum(2-p-y) + eps)
Tensor dice_loss(const Tensor& pred, const Tensor& target, const LossConfig& cfg = {});

// (b_h - pred_h)^2 + (b_w - pred_w)^2
Tensor bbox_loss(double gt_h, double gt_w, const Tensor& pred_h, const Tensor& pred_w);
double bbox_loss(double gt_h, double gt_w, double pred_h, double pred_w);

Tensor total_loss(const Tensor& seg, const Tensor& dice, const Tensor& box);

}  // namespace cvos
