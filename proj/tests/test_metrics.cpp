#include <doctest.h>

#include <cmath>

#include "cvos/metrics.hpp"
#include "cvos/rng.hpp"
#include "helpers.hpp"

using namespace cvos;
using namespace cvos::testutil;

TEST_CASE("schedule_clips literal cases") {
  CHECK(schedule_clips(8, 8, 3) == std::vector<int64_t>{0});
  CHECK(schedule_clips(13, 8, 3) == std::vector<int64_t>{0, 5});
  CHECK(schedule_clips(22, 8, 3) == std::vector<int64_t>{0, 5, 10, 14});
  CHECK(schedule_clips(16, 8, 0) == std::vector<int64_t>{0, 8});
  CHECK_THROWS_AS(schedule_clips(6, 8, 3), ParameterError);
  CHECK_THROWS_AS(schedule_clips(16, 8, 8), ParameterError);
  CHECK_THROWS_AS(schedule_clips(16, 8, -1), ParameterError);
}

TEST_CASE("schedule_clips coverage and monotonicity invariants") {
  for (int64_t len = 8; len <= 40; ++len) {
    for (int64_t ov = 0; ov <= 5; ++ov) {
      auto starts = schedule_clips(len, 8, ov);
      // brute-force coverage oracle
      std::vector<int> covered(static_cast<size_t>(len), 0);
      for (int64_t s : starts) {
        CHECK(s >= 0);
        CHECK(s + 8 <= len);
        for (int64_t k = 0; k < 8; ++k) covered[static_cast<size_t>(s + k)]++;
      }
      for (int64_t f = 0; f < len; ++f) CHECK(covered[static_cast<size_t>(f)] >= 1);
      for (size_t i = 1; i < starts.size(); ++i) {
        CHECK(starts[i] > starts[i - 1]);
        CHECK(starts[i] - starts[i - 1] <= 8 - ov);
      }
    }
  }
}

TEST_CASE("region similarity basics") {
  Tensor a = Tensor::zeros({4, 4});
  Tensor b = Tensor::zeros({4, 4});
  CHECK(region_similarity_J(a, b) == 1.0);  // both empty
  a.data()[0] = a.data()[1] = 1.0;
  CHECK(region_similarity_J(a, a) == 1.0);
  b.data()[10] = 1.0;
  CHECK(region_similarity_J(a, b) == 0.0);  // disjoint

  // gt 2x2 block, pred covers half of it
  Tensor gt = Tensor::zeros({4, 4});
  gt.data()[5] = gt.data()[6] = gt.data()[9] = gt.data()[10] = 1.0;
  Tensor pred = Tensor::zeros({4, 4});
  pred.data()[5] = pred.data()[6] = 1.0;
  CHECK(region_similarity_J(pred, gt) == 0.5);
  CHECK(region_similarity_J(gt, pred) == 0.5);  // symmetric
}

namespace {

// all-pairs nearest-boundary-distance oracle
double oracle_f(const Tensor& pred, const Tensor& gt, double tol) {
  auto bp = boundary_pixels(pred);
  auto bg = boundary_pixels(gt);
  if (bp.empty() && bg.empty()) return 1.0;
  if (bp.empty() || bg.empty()) return 0.0;
  auto matched = [&](const auto& from, const auto& to) {
    int64_t count = 0;
    for (auto [r, c] : from) {
      double best = 1e18;
      for (auto [r2, c2] : to) {
        double d = std::sqrt(static_cast<double>((r - r2) * (r - r2) + (c - c2) * (c - c2)));
        best = std::min(best, d);
      }
      count += best <= tol;
    }
    return count;
  };
  double p = static_cast<double>(matched(bp, bg)) / bp.size();
  double r = static_cast<double>(matched(bg, bp)) / bg.size();
  if (p + r == 0) return 0.0;
  return 2 * p * r / (p + r);
}

}  // namespace

TEST_CASE("contour accuracy basics") {
  Tensor gt = Tensor::zeros({8, 8});
  for (int64_t r = 2; r < 7; ++r)
    for (int64_t c = 2; c < 7; ++c) gt.data()[r * 8 + c] = 1.0;
  CHECK(contour_accuracy_F(gt, gt, 1.0) == 1.0);
  Tensor empty = Tensor::zeros({8, 8});
  CHECK(contour_accuracy_F(empty, gt, 1.0) == 0.0);
  CHECK(contour_accuracy_F(gt, empty, 1.0) == 0.0);
  CHECK(contour_accuracy_F(empty, empty, 1.0) == 1.0);
}

TEST_CASE("unit-shifted square matches the exhaustive oracle") {
  Tensor gt = Tensor::zeros({10, 10});
  Tensor pred = Tensor::zeros({10, 10});
  for (int64_t r = 2; r < 7; ++r) {
    for (int64_t c = 2; c < 7; ++c) {
      gt.data()[r * 10 + c] = 1.0;
      pred.data()[(r + 1) * 10 + c] = 1.0;  // shifted one pixel down
    }
  }
  double f = contour_accuracy_F(pred, gt, 1.0);
  CHECK(std::abs(f - oracle_f(pred, gt, 1.0)) <= 1e-12);
  CHECK(f == 1.0);  // a one-pixel shift is fully matched at tolerance 1

  // at two pixels of shift the tolerance-1 match breaks down
  Tensor pred2 = Tensor::zeros({10, 10});
  for (int64_t r = 2; r < 7; ++r)
    for (int64_t c = 2; c < 7; ++c) pred2.data()[(r + 2) * 10 + c] = 1.0;
  double f2 = contour_accuracy_F(pred2, gt, 1.0);
  CHECK(std::abs(f2 - oracle_f(pred2, gt, 1.0)) <= 1e-12);
  CHECK(f2 < 1.0);
}

TEST_CASE("contour accuracy matches the oracle on random masks") {
  Rng rng(77);
  for (int rep = 0; rep < 60; ++rep) {
    Tensor pred = Tensor::zeros({9, 9});
    Tensor gt = Tensor::zeros({9, 9});
    for (int64_t i = 0; i < 81; ++i) {
      pred.data()[i] = rng.uniform() < 0.3 ? 1.0 : 0.0;
      gt.data()[i] = rng.uniform() < 0.3 ? 1.0 : 0.0;
    }
    for (double tol : {1.0, 2.0}) {
      CHECK(std::abs(contour_accuracy_F(pred, gt, tol) - oracle_f(pred, gt, tol)) <= 1e-12);
    }
  }
}

TEST_CASE("binarize thresholds at one half") {
  Tensor p = Tensor::from_data({4}, {0.1, 0.5, 0.51, 0.9});
  Tensor b = binarize(p);
  CHECK(b.at({0}) == 0.0);
  CHECK(b.at({1}) == 0.0);
  CHECK(b.at({2}) == 1.0);
  CHECK(b.at({3}) == 1.0);
}
