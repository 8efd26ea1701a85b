#include "cvos/gradcheck.hpp"

#include <cmath>
#include <functional>

#include "cvos/harness.hpp"
#include "cvos/losses.hpp"
#include "cvos/model.hpp"
#include "cvos/ops.hpp"
#include "cvos/rng.hpp"
#include "cvos/routing.hpp"
#include "cvos/synth.hpp"

namespace cvos {

bool GradCheckReport::all_pass() const {
  for (const GradCheckEntry& e : entries) {
    if (!e.pass) return false;
  }
  return !entries.empty();
}

namespace {

constexpr double kStep = 1e-5;
constexpr double kTol = 1e-4;

void run_check(GradCheckReport& report, const std::string& name,
               const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
               double tol = kTol) {
  GradCheckEntry e;
  e.name = name;
  e.tolerance = tol;
  e.error = finite_difference_check(f, x, kStep);
  e.pass = e.error <= tol;
  report.entries.push_back(e);
}

void op_checks(GradCheckReport& report, Rng& rng) {
  Tensor pos = Tensor::uniform({3, 4}, rng, 0.2, 1.8);
  run_check(report, "pointwise.sigmoid", [](const Tensor& t) { return sum_all(sigmoid(t)); }, pos);
  run_check(report, "pointwise.relu", [](const Tensor& t) { return sum_all(mul(relu(t), t)); }, pos);
  run_check(report, "pointwise.tanh", [](const Tensor& t) { return sum_all(tanh(t)); }, pos);
  run_check(report, "pointwise.exp", [](const Tensor& t) { return sum_all(exp(t)); }, pos);
  run_check(report, "pointwise.log", [](const Tensor& t) { return sum_all(log(t)); }, pos);
  run_check(report, "pointwise.sqrt", [](const Tensor& t) { return sum_all(sqrt(t)); }, pos);
  run_check(report, "pointwise.neg", [](const Tensor& t) { return sum_all(neg(t)); }, pos);

  Tensor b = Tensor::uniform({4}, rng, 0.4, 1.6);
  run_check(report, "pointwise.add", [&](const Tensor& t) { return sum_all(mul(add(t, b), add(t, b))); }, pos);
  run_check(report, "pointwise.sub", [&](const Tensor& t) { return sum_all(mul(sub(t, b), sub(t, b))); }, pos);
  run_check(report, "pointwise.mul", [&](const Tensor& t) { return sum_all(mul(t, b)); }, pos);
  run_check(report, "pointwise.div", [&](const Tensor& t) { return sum_all(div(t, b)); }, pos);
  run_check(report, "pointwise.clamp", [](const Tensor& t) { return sum_all(clamp(t, 0.5, 1.5)); }, pos);

  Tensor x = Tensor::uniform({3, 5}, rng, -1.5, 1.5);
  run_check(report, "reduce.sum", [](const Tensor& t) { return sum_all(mul(sum(t, {1}), sum(t, {1}))); }, x);
  run_check(report, "reduce.mean", [](const Tensor& t) { return sum_all(mul(mean(t, {0}), mean(t, {0}))); }, x);
  run_check(report, "reduce.max", [](const Tensor& t) { return sum_all(max_reduce(t, {1})); }, x);
  run_check(report, "reduce.softmax",
            [](const Tensor& t) { return sum_all(mul(softmax(t, 1), softmax(t, 1))); }, x);

  {
    Tensor a = Tensor::uniform({3, 4}, rng, -1, 1);
    Tensor m = Tensor::uniform({4, 2}, rng, -1, 1);
    run_check(report, "matmul.lhs",
              [&](const Tensor& t) { return sum_all(mul(matmul(t, m), matmul(t, m))); }, a);
    run_check(report, "matmul.rhs",
              [&](const Tensor& t) { return sum_all(mul(matmul(a, t), matmul(a, t))); }, m);
  }
  {
    Tensor xin = Tensor::uniform({2, 5, 5, 2}, rng, -1, 1);
    Tensor k = Tensor::uniform({3, 3, 3, 2, 3}, rng, -0.6, 0.6);
    run_check(report, "convolve.input", [&](const Tensor& t) {
      Tensor y = convolve(t, k, {1, 2, 2}, {1, 1, 1});
      return sum_all(mul(y, y));
    }, xin);
    run_check(report, "convolve.kernel", [&](const Tensor& t) {
      Tensor y = convolve(xin, t, {1, 2, 2}, {1, 1, 1});
      return sum_all(mul(y, y));
    }, k);
  }
  {
    Tensor xin = Tensor::uniform({3, 3, 2}, rng, -1, 1);
    Tensor k = Tensor::uniform({3, 3, 2, 2}, rng, -0.6, 0.6);
    run_check(report, "transpose_convolve.input", [&](const Tensor& t) {
      Tensor y = transpose_convolve(t, k, {2, 2});
      return sum_all(mul(y, y));
    }, xin);
    run_check(report, "transpose_convolve.kernel", [&](const Tensor& t) {
      Tensor y = transpose_convolve(xin, t, {2, 2});
      return sum_all(mul(y, y));
    }, k);
  }
  {
    Tensor xin = Tensor::uniform({2, 4, 4, 2}, rng, -1, 1);
    run_check(report, "avg_pool", [](const Tensor& t) {
      Tensor y = avg_pool(t, {1, 3, 3}, {1, 1, 1}, {0, 1, 1});
      return sum_all(mul(y, y));
    }, xin);
  }
  {
    Tensor xin = Tensor::uniform({2, 3, 4}, rng, -1, 1);
    run_check(report, "shape.reshape_slice_tile", [](const Tensor& t) {
      Tensor y = tile_first(slice_last(reshape(t, {6, 4}), 1, 3), 2);
      return sum_all(mul(y, y));
    }, xin);
    run_check(report, "shape.concat", [](const Tensor& t) {
      Tensor y = concat_last({t, mul_scalar(t, 2.0)});
      return sum_all(mul(y, y));
    }, xin);
  }
  {
    Tensor poses = Tensor::uniform({3, 2, 16}, rng, -1, 1);
    Tensor w = Tensor::uniform({2, 3, 16}, rng, -1, 1);
    run_check(report, "pose_transform.poses", [&](const Tensor& t) {
      Tensor v = pose_transform(t, w);
      return sum_all(mul(v, v));
    }, poses);
    run_check(report, "pose_transform.weights", [&](const Tensor& t) {
      Tensor v = pose_transform(poses, t);
      return sum_all(mul(v, v));
    }, w);
  }
  {
    Tensor input = Tensor::uniform({2, 3, 2}, rng, -1, 1);
    MemoryState state{Tensor::uniform({2, 3, 2}, rng, -0.5, 0.5),
                      Tensor::uniform({2, 3, 2}, rng, -0.5, 0.5)};
    Tensor kernel = Tensor::uniform({3, 3, 4, 8}, rng, -0.5, 0.5);
    Tensor bias = Tensor::uniform({8}, rng, -0.2, 0.2);
    run_check(report, "recurrent_cell.kernel", [&](const Tensor& t) {
      auto [h, next] = recurrent_cell_step(input, state, GateKernels{t, bias});
      return sum_all(mul(h, add(next.cell, h)));
    }, kernel);
  }
  {
    int64_t I = 3, J = 2;
    Tensor votes = Tensor::uniform({1, I, J, 16}, rng, -1, 1);
    Tensor a = Tensor::uniform({1, I}, rng, 0.2, 0.9);
    run_check(report, "routing.em", [&](const Tensor& v) {
      RoutingConfig cfg = RoutingConfig::with_types(J);
      auto [mu, act] = em_routing(a, v, cfg);
      return sum_all(add(mul(mu, mu), reshape(mul(act, act), {1, J, 1})));
    }, votes);
    Tensor q = Tensor::uniform({1, J, 16}, rng, -1, 1);
    run_check(report, "routing.distance_softmax", [&](const Tensor& v) {
      Tensor r = assignment_from_distance(q, v);
      return sum_all(mul(r, r));
    }, votes);
  }
  {
    Tensor y16 = Tensor::zeros({16});
    for (int64_t i = 0; i < 16; ++i) y16.data()[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
    Tensor p16 = Tensor::uniform({16}, rng, 0.05, 0.95);
    run_check(report, "loss.bce", [&](const Tensor& p) { return bce_loss(p, y16); }, p16, 1e-5);
    run_check(report, "loss.dice", [&](const Tensor& p) { return dice_loss(p, y16); }, p16, 1e-5);
    run_check(report, "loss.bbox", [](const Tensor& bxy) {
      return bbox_loss(10.0, 20.0, slice_last(bxy, 0, 1), slice_last(bxy, 1, 2));
    }, Tensor::from_data({2}, {8.0, 17.0}), 1e-5);
  }
}

// sampled central differences of the full model loss per parameter group
void model_checks(GradCheckReport& report, uint64_t seed) {
  ModelConfig mc = ModelConfig::desk();
  CapsuleVosModel model(mc, seed);
  SceneSpec spec = SceneSpec::sample(Scenario::plain, seed + 17, mc.high_h, mc.high_w);
  ClipSample sample = generate_clip(spec, 0, mc.clip_length);

  auto loss_value = [&]() {
    auto out =
        model.forward_train(sample, sample.ref_mask, model.initial_memory(), model.initial_zoom_state());
    return out.loss_total;
  };

  std::map<std::string, Tensor> grads;
  {
    Tape tape;
    Tensor loss;
    {
      TapeScope scope(tape);
      loss = loss_value();
    }
    tape.backward(loss);
    for (auto& [name, p] : model.params()) grads[name] = p.grad();
    for (auto& [name, p] : model.params()) p.zero_grad();
  }

  Rng pick(seed ^ 0xBADC0FFEULL);
  for (auto& [name, p] : model.params()) {
    int64_t coords = std::min<int64_t>(2, p.size());
    double worst = 0.0;
    for (int64_t k = 0; k < coords; ++k) {
      int64_t idx = pick.uniform_int(0, p.size() - 1);
      double orig = p.data()[idx];
      p.data()[idx] = orig + kStep;
      double fp = loss_value().item();
      p.data()[idx] = orig - kStep;
      double fm = loss_value().item();
      p.data()[idx] = orig;
      double fd = (fp - fm) / (2.0 * kStep);
      double an = grads[name].data()[idx];
      worst = std::max(worst, std::abs(an - fd) / std::max(1.0, std::abs(an)));
    }
    GradCheckEntry e;
    e.name = "model." + name;
    e.tolerance = kTol;
    e.error = worst;
    e.pass = worst <= kTol;
    report.entries.push_back(e);
  }
}

}  // namespace

GradCheckReport run_gradient_checks(bool include_model, uint64_t seed) {
  GradCheckReport report;
  Rng rng(seed);
  op_checks(report, rng);
  if (include_model) model_checks(report, seed);
  return report;
}

}  // namespace cvos
