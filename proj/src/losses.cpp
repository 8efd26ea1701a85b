#include "cvos/losses.hpp"

#include "cvos/ops.hpp"

namespace cvos {

void LossConfig::validate() const {
  if (!(epsilon > 0.0)) throw ConfigError("loss epsilon must be positive");
  if (!(prob_clamp > 0.0 && prob_clamp < 0.5)) throw ConfigError("probability clamp must lie in (0, 0.5)");
}

static void check_same_shape(const Tensor& pred, const Tensor& target, const char* opname) {
  if (pred.shape() != target.shape()) {
    throw DimensionError(std::string(opname) + ": prediction " + shape_str(pred.shape()) +
                         " and target " + shape_str(target.shape()) + " disagree");
  }
}

Tensor bce_loss(const Tensor& pred, const Tensor& target, const LossConfig& cfg) {
  cfg.validate();
  check_same_shape(pred, target, "bce_loss");
  Tensor p = clamp(pred, cfg.prob_clamp, 1.0 - cfg.prob_clamp);
  Tensor one_minus_t = add_scalar(neg(target), 1.0);
  Tensor one_minus_p = add_scalar(neg(p), 1.0);
  Tensor ll = add(mul(target, log(p)), mul(one_minus_t, log(one_minus_p)));
  return neg(mean_all(ll));
}

Tensor dice_loss(const Tensor& pred, const Tensor& target, const LossConfig& cfg) {
  cfg.validate();
  check_same_shape(pred, target, "dice_loss");
  Tensor fg_num = add_scalar(sum_all(mul(pred, target)), cfg.epsilon);
  Tensor fg_den = add_scalar(sum_all(add(pred, target)), cfg.epsilon);
  Tensor inv_p = add_scalar(neg(pred), 1.0);
  Tensor inv_t = add_scalar(neg(target), 1.0);
  Tensor bg_num = add_scalar(sum_all(mul(inv_p, inv_t)), cfg.epsilon);
  Tensor bg_den = add_scalar(sum_all(add(inv_p, inv_t)), cfg.epsilon);
  Tensor one = Tensor::scalar(1.0);
  return sub(sub(one, div(fg_num, fg_den)), div(bg_num, bg_den));
}

Tensor bbox_loss(double gt_h, double gt_w, const Tensor& pred_h, const Tensor& pred_w) {
  if (pred_h.size() != 1 || pred_w.size() != 1) {
    throw DimensionError("bbox_loss: predicted extents must be scalars");
  }
  Tensor dh = sub(Tensor::scalar(gt_h), reshape(pred_h, {}));
  Tensor dw = sub(Tensor::scalar(gt_w), reshape(pred_w, {}));
  return add(mul(dh, dh), mul(dw, dw));
}

double bbox_loss(double gt_h, double gt_w, double pred_h, double pred_w) {
  double dh = gt_h - pred_h;
  double dw = gt_w - pred_w;
  return dh * dh + dw * dw;
}

Tensor total_loss(const Tensor& seg, const Tensor& dice, const Tensor& box) {
  if (seg.size() != 1 || dice.size() != 1 || box.size() != 1) {
    throw ContractError("total_loss expects scalar components");
  }
  return add(add(seg, dice), box);
}

}  // namespace cvos
