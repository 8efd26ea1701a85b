#include <doctest.h>

#include <cmath>

#include "cvos/losses.hpp"
#include "cvos/ops.hpp"
#include "cvos/rng.hpp"
#include "helpers.hpp"

using namespace cvos;
using namespace cvos::testutil;

TEST_CASE("bce anchors") {
  Tensor half = Tensor::full({2, 4}, 0.5);
  Tensor y = Tensor::from_data({2, 4}, {1, 0, 1, 1, 0, 0, 1, 0});
  CHECK(std::abs(bce_loss(half, y).item() - 0.693147180559945309) <= 1e-12);

  // perfect binary prediction after the clamp
  Tensor exact = y.detach();
  CHECK(bce_loss(exact, y).item() <= 1e-6);
  CHECK(bce_loss(exact, y).item() >= 0.0);

  Tensor p = Tensor::from_data({2}, {0.9, 0.2});
  Tensor t = Tensor::from_data({2}, {1, 0});
  CHECK(std::abs(bce_loss(p, t).item() - 0.164252033486018028) <= 1e-12);

  CHECK_THROWS_AS(bce_loss(p, Tensor::zeros({3})), DimensionError);
}

TEST_CASE("bce matches brute-force summation") {
  Rng rng(3);
  Tensor p = Tensor::uniform({3, 5}, rng, 0.01, 0.99);
  Tensor y = Tensor::zeros({3, 5});
  for (int64_t i = 0; i < y.size(); ++i) y.data()[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
  double expect = 0.0;
  for (int64_t i = 0; i < p.size(); ++i) {
    double pv = std::min(std::max(p.data()[i], 1e-7), 1.0 - 1e-7);
    expect += y.data()[i] * std::log(pv) + (1.0 - y.data()[i]) * std::log(1.0 - pv);
  }
  expect = -expect / static_cast<double>(p.size());
  CHECK(std::abs(bce_loss(p, y).item() - expect) <= 1e-10);
}

TEST_CASE("dice anchors") {
  // perfect match on a mixed mask -> 0
  Tensor y = Tensor::from_data({2, 4}, {1, 0, 1, 1, 0, 0, 1, 0});
  CHECK(std::abs(dice_loss(y, y).item()) <= 1e-6);

  // complete mismatch -> 1
  Tensor inv = add_scalar(neg(y), 1.0);
  CHECK(std::abs(dice_loss(inv, y).item() - 1.0) <= 1e-6);

  // uniform 0.5 prediction on a half-ones mask -> 0.5
  Tensor half = Tensor::full({2, 4}, 0.5);
  Tensor half_mask = Tensor::from_data({2, 4}, {1, 1, 1, 1, 0, 0, 0, 0});
  CHECK(std::abs(dice_loss(half, half_mask).item() - 0.5) <= 1e-7);

  CHECK_THROWS_AS(dice_loss(half, Tensor::zeros({3})), DimensionError);
}

TEST_CASE("dice matches brute-force summation") {
  Rng rng(7);
  double eps = 1e-7;
  Tensor p = Tensor::uniform({4, 4}, rng, 0.0, 1.0);
  Tensor y = Tensor::zeros({4, 4});
  for (int64_t i = 0; i < y.size(); ++i) y.data()[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
  double s_py = 0, s_p_plus_y = 0, s_inv = 0, s_inv_den = 0;
  for (int64_t i = 0; i < p.size(); ++i) {
    double pv = p.data()[i], yv = y.data()[i];
    s_py += pv * yv;
    s_p_plus_y += pv + yv;
    s_inv += (1 - pv) * (1 - yv);
    s_inv_den += 2 - pv - yv;
  }
  double expect = 1.0 - (s_py + eps) / (s_p_plus_y + eps) - (s_inv + eps) / (s_inv_den + eps);
  CHECK(std::abs(dice_loss(p, y).item() - expect) <= 1e-10);
}

TEST_CASE("dice range and complement symmetry") {
  Rng rng(11);
  for (int rep = 0; rep < 50; ++rep) {
    Tensor p = Tensor::uniform({3, 3}, rng, 0.0, 1.0);
    Tensor y = Tensor::zeros({3, 3});
    for (int64_t i = 0; i < y.size(); ++i) y.data()[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
    double d = dice_loss(p, y).item();
    CHECK(d >= -1e-5);
    CHECK(d <= 1.0 + 1e-5);
    Tensor pc = add_scalar(neg(p), 1.0);
    Tensor yc = add_scalar(neg(y), 1.0);
    CHECK(std::abs(dice_loss(pc, yc).item() - d) <= 1e-12);
  }
}

TEST_CASE("bbox loss arithmetic") {
  CHECK(bbox_loss(10.0, 20.0, 10.0, 20.0) == 0.0);
  CHECK(bbox_loss(10.0, 20.0, 8.0, 17.0) == 13.0);
  CHECK(bbox_loss(8.0, 17.0, 10.0, 20.0) == 13.0);  // symmetric
  Tensor ph = Tensor::scalar(8.0), pw = Tensor::scalar(17.0);
  CHECK(bbox_loss(10.0, 20.0, ph, pw).item() == 13.0);
}

TEST_CASE("total loss sums components") {
  CHECK(total_loss(Tensor::scalar(0), Tensor::scalar(0), Tensor::scalar(0)).item() == 0.0);
  CHECK(std::abs(total_loss(Tensor::scalar(0.693), Tensor::scalar(0.5), Tensor::scalar(13.0)).item() -
                 14.193) <= 1e-12);
}

TEST_CASE("losses differentiate cleanly") {
  Rng rng(13);
  Tensor y8 = Tensor::zeros({8});
  for (int64_t i = 0; i < 8; ++i) y8.data()[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
  Tensor p8 = Tensor::uniform({8}, rng, 0.05, 0.95);

  auto f_dice = [&](const Tensor& p) { return dice_loss(p, y8); };
  CHECK(finite_difference_check(f_dice, p8, 1e-5) <= 1e-6);

  Tensor y16 = Tensor::zeros({16});
  for (int64_t i = 0; i < 16; ++i) y16.data()[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
  Tensor p16 = Tensor::uniform({16}, rng, 0.05, 0.95);
  auto f_bce = [&](const Tensor& p) { return bce_loss(p, y16); };
  CHECK(finite_difference_check(f_bce, p16, 1e-5) <= 1e-5);

  auto f_box = [](const Tensor& b) {
    return bbox_loss(10.0, 20.0, slice_last(b, 0, 1), slice_last(b, 1, 2));
  };
  CHECK(finite_difference_check(f_box, Tensor::from_data({2}, {8.0, 17.0}), 1e-5) <= 1e-6);

  // gradient of the sum equals the sum of component gradients
  auto f_total = [&](const Tensor& p) {
    return total_loss(bce_loss(p, y16), dice_loss(p, y16), Tensor::scalar(2.0));
  };
  CHECK(finite_difference_check(f_total, p16, 1e-5) <= 1e-5);
}
