#include <doctest.h>

#include <cmath>

#include "cvos/ops.hpp"
#include "cvos/rng.hpp"
#include "cvos/tensor.hpp"
#include "helpers.hpp"

using namespace cvos;
using namespace cvos::testutil;

TEST_CASE("product rule gradient") {
  Tensor x = Tensor::scalar(3.0).set_requires_grad(true);
  Tensor y = Tensor::scalar(4.0).set_requires_grad(true);
  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    loss = mul(x, y);
  }
  tape.backward(loss);
  CHECK(x.grad().item() == 4.0);
  CHECK(y.grad().item() == 3.0);
}

TEST_CASE("sum gradient is ones") {
  Tensor x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    loss = sum_all(x);
  }
  tape.backward(loss);
  CHECK(max_abs_diff(x.grad(), Tensor::full({2, 3}, 1.0)) == 0.0);
}

TEST_CASE("tensor created outside the tape receives zero gradient") {
  Tensor x = Tensor::scalar(2.0).set_requires_grad(true);
  Tensor bystander = Tensor::scalar(5.0).set_requires_grad(true);
  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    loss = mul(x, x);
  }
  tape.backward(loss);
  CHECK(bystander.grad().item() == 0.0);
  CHECK(x.grad().item() == 4.0);
}

TEST_CASE("non-scalar loss rejected") {
  Tape tape;
  Tensor v = Tensor::from_data({2}, {1, 2}, true);
  CHECK_THROWS_AS(tape.backward(v), ContractError);
}

TEST_CASE("finite differences on x squared") {
  Tensor x = Tensor::scalar(3.0);
  auto f = [](const Tensor& t) { return mul(t, t); };
  // analytic gradient 6; central difference of a quadratic is exact
  double err = finite_difference_check(f, x, 1e-5);
  CHECK(err <= 1e-8);
  CHECK_THROWS_AS(finite_difference_check(f, x, 0.0), ParameterError);
}

TEST_CASE("finite differences on a constant") {
  auto f = [](const Tensor& t) { return mul_scalar(sum_all(mul_scalar(t, 0.0)), 1.0); };
  double err = finite_difference_check(f, Tensor::from_data({3}, {1, 2, 3}), 1e-5);
  CHECK(err == 0.0);
}

TEST_CASE("finite differences across pointwise kinds") {
  Rng rng(57);
  double h = 1e-5;
  Tensor x = random_tensor({2, 3}, rng, 0.2, 1.5);  // positive: valid for log/sqrt
  auto checks = {
      std::function<Tensor(const Tensor&)>([](const Tensor& t) { return sum_all(sigmoid(t)); }),
      std::function<Tensor(const Tensor&)>([](const Tensor& t) { return sum_all(exp(t)); }),
      std::function<Tensor(const Tensor&)>([](const Tensor& t) { return sum_all(log(t)); }),
      std::function<Tensor(const Tensor&)>([](const Tensor& t) { return sum_all(sqrt(t)); }),
      std::function<Tensor(const Tensor&)>([](const Tensor& t) { return sum_all(tanh(t)); }),
      std::function<Tensor(const Tensor&)>([](const Tensor& t) { return sum_all(neg(t)); }),
      std::function<Tensor(const Tensor&)>([](const Tensor& t) { return sum_all(relu(t)); }),
      std::function<Tensor(const Tensor&)>([](const Tensor& t) { return sum_all(mul(t, t)); }),
  };
  for (const auto& f : checks) CHECK(finite_difference_check(f, x, h) <= 1e-4);
}

TEST_CASE("finite differences for binary broadcast ops") {
  Rng rng(58);
  Tensor a = random_tensor({3, 4}, rng, 0.5, 2.0);
  Tensor b = random_tensor({4}, rng, 0.5, 2.0);
  auto fa = [&](const Tensor& t) { return sum_all(div(t, b)); };
  CHECK(finite_difference_check(fa, a, 1e-5) <= 1e-4);
  auto fb = [&](const Tensor& t) { return sum_all(div(a, t)); };
  CHECK(finite_difference_check(fb, b, 1e-5) <= 1e-4);
  auto fm = [&](const Tensor& t) { return sum_all(mul(t, b)); };
  CHECK(finite_difference_check(fm, a, 1e-5) <= 1e-6);
}

TEST_CASE("finite differences for reductions and softmax") {
  Rng rng(59);
  Tensor x = random_tensor({3, 4}, rng, -2.0, 2.0);
  CHECK(finite_difference_check([](const Tensor& t) { return sum_all(softmax(t, 1)); }, x, 1e-5) <= 1e-4);
  CHECK(finite_difference_check(
            [](const Tensor& t) { return sum_all(mul(softmax(t, 1), softmax(t, 1))); }, x, 1e-5) <= 1e-4);
  CHECK(finite_difference_check([](const Tensor& t) { return sum_all(mean(t, {0})); }, x, 1e-5) <= 1e-6);
  CHECK(finite_difference_check([](const Tensor& t) { return sum_all(max_reduce(t, {1})); }, x,
                                1e-5) <= 1e-4);
}

TEST_CASE("finite differences for matmul, conv, tconv, pool") {
  Rng rng(61);
  double h = 1e-5;
  {
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 2}, rng);
    CHECK(finite_difference_check([&](const Tensor& t) { return sum_all(mul(matmul(t, b), matmul(t, b))); },
                                  a, h) <= 1e-4);
    CHECK(finite_difference_check([&](const Tensor& t) { return sum_all(mul(matmul(a, t), matmul(a, t))); },
                                  b, h) <= 1e-4);
  }
  {
    Tensor x = random_tensor({2, 5, 5, 2}, rng);
    Tensor k = random_tensor({3, 3, 3, 2, 3}, rng);
    auto fx = [&](const Tensor& t) {
      Tensor y = convolve(t, k, {1, 2, 2}, {1, 1, 1});
      return sum_all(mul(y, y));
    };
    CHECK(finite_difference_check(fx, x, h) <= 1e-4);
    auto fk = [&](const Tensor& t) {
      Tensor y = convolve(x, t, {1, 2, 2}, {1, 1, 1});
      return sum_all(mul(y, y));
    };
    CHECK(finite_difference_check(fk, k, h) <= 1e-4);
  }
  {
    Tensor x = random_tensor({3, 3, 2}, rng);
    Tensor k = random_tensor({3, 3, 2, 2}, rng);
    auto fx = [&](const Tensor& t) {
      Tensor y = transpose_convolve(t, k, {2, 2});
      return sum_all(mul(y, y));
    };
    CHECK(finite_difference_check(fx, x, h) <= 1e-4);
    auto fk = [&](const Tensor& t) {
      Tensor y = transpose_convolve(x, t, {2, 2});
      return sum_all(mul(y, y));
    };
    CHECK(finite_difference_check(fk, k, h) <= 1e-4);
  }
  {
    Tensor x = random_tensor({2, 4, 4, 2}, rng);
    auto fx = [](const Tensor& t) {
      Tensor y = avg_pool(t, {1, 3, 3}, {1, 1, 1}, {0, 1, 1});
      return sum_all(mul(y, y));
    };
    CHECK(finite_difference_check(fx, x, h) <= 1e-4);
  }
}

TEST_CASE("finite differences for shape ops and pose_transform") {
  Rng rng(67);
  double h = 1e-5;
  {
    Tensor x = random_tensor({2, 3, 4}, rng);
    auto f = [](const Tensor& t) {
      Tensor r = reshape(t, {6, 4});
      Tensor s = slice_last(r, 1, 3);
      Tensor tt = tile_first(s, 2);
      return sum_all(mul(tt, tt));
    };
    CHECK(finite_difference_check(f, x, h) <= 1e-4);
  }
  {
    Tensor poses = random_tensor({3, 2, 16}, rng);
    Tensor w = random_tensor({2, 3, 16}, rng);
    auto fp = [&](const Tensor& t) {
      Tensor v = pose_transform(t, w);
      return sum_all(mul(v, v));
    };
    CHECK(finite_difference_check(fp, poses, h) <= 1e-4);
    auto fw = [&](const Tensor& t) {
      Tensor v = pose_transform(poses, t);
      return sum_all(mul(v, v));
    };
    CHECK(finite_difference_check(fw, w, h) <= 1e-4);
  }
}

TEST_CASE("finite differences through the recurrent cell") {
  Rng rng(71);
  Tensor input = random_tensor({2, 3, 2}, rng);
  MemoryState state{random_tensor({2, 3, 2}, rng, -0.5, 0.5), random_tensor({2, 3, 2}, rng, -0.5, 0.5)};
  Tensor kernel = random_tensor({3, 3, 4, 8}, rng, -0.5, 0.5);
  Tensor bias = random_tensor({8}, rng, -0.2, 0.2);
  auto f = [&](const Tensor& t) {
    GateKernels g{t, bias};
    auto [hidden, next] = recurrent_cell_step(input, state, g);
    return sum_all(mul(hidden, add(next.cell, hidden)));
  };
  CHECK(finite_difference_check(f, kernel, 1e-5) <= 1e-4);
}

TEST_CASE("adjoint identity for linear ops") {
  Rng rng(73);
  // <L(x), y> == <x, L^T(y)> where L^T comes from the recorded adjoint
  auto check_linear = [&](const std::function<Tensor(const Tensor&)>& op, Shape in_shape) {
    Tensor x = random_tensor(in_shape, rng);
    Tensor lx = op(x);
    Tensor y = random_tensor(lx.shape(), rng);
    Tensor lty = adjoint_apply(op, x, y);
    CHECK(std::abs(dot(lx, y) - dot(x, lty)) <= 1e-10);
  };
  Tensor k = random_tensor({3, 3, 2, 3}, rng);
  check_linear([&](const Tensor& t) { return convolve(t, k, {2, 2}, {1, 1}); }, {6, 6, 2});
  check_linear([&](const Tensor& t) { return transpose_convolve(t, k, {2, 2}); }, {3, 3, 2});
  Tensor m = random_tensor({4, 5}, rng);
  check_linear([&](const Tensor& t) { return matmul(t, m); }, {3, 4});
  check_linear([&](const Tensor& t) { return avg_pool(t, {3, 3}, {2, 2}, {1, 1}); }, {6, 6, 2});
  check_linear([&](const Tensor& t) { return sum(t, {1}); }, {4, 3});
  Tensor w = random_tensor({2, 3, 16}, rng);
  check_linear([&](const Tensor& t) { return pose_transform(t, w); }, {2, 2, 16});
}

TEST_CASE("full toy model gradient matches central differences") {
  Rng rng(79);
  Tensor x = random_tensor({1, 6, 6, 2}, rng);
  Tensor k1 = random_tensor({1, 3, 3, 2, 4}, rng, -0.5, 0.5);
  Tensor b1 = random_tensor({4}, rng, -0.2, 0.2);
  Tensor k2 = random_tensor({1, 3, 3, 4, 2}, rng, -0.5, 0.5);
  auto run = [&](const Tensor& kk) {
    Tensor h1 = relu(add(convolve(x, kk, {1, 2, 2}, {0, 1, 1}), b1));
    Tensor h2 = sigmoid(convolve(h1, k2, {1, 1, 1}, {0, 1, 1}));
    Tensor sm = softmax(reshape(h2, {9, 2}), 1);
    return mean_all(mul(sm, sm));
  };
  CHECK(finite_difference_check(run, k1, 1e-5) <= 1e-4);
}

TEST_CASE("gradients accumulate across shared uses") {
  Tensor x = Tensor::scalar(2.0).set_requires_grad(true);
  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    loss = add(mul(x, x), mul_scalar(x, 3.0));  // x^2 + 3x
  }
  tape.backward(loss);
  CHECK(x.grad().item() == 7.0);  // 2x + 3 at x=2
}
