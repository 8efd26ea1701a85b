#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "cvos/checkpoint.hpp"
#include "cvos/model.hpp"
#include "cvos/ops.hpp"
#include "cvos/rng.hpp"
#include "cvos/synth.hpp"
#include "helpers.hpp"

using namespace cvos;
using namespace cvos::testutil;

TEST_CASE("model config presets validate") {
  CHECK_NOTHROW(ModelConfig::desk().validate());
  CHECK_NOTHROW(ModelConfig::paper().validate());
  ModelConfig bad = ModelConfig::desk();
  bad.no_zoom = bad.no_memory = true;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  ModelConfig wrong = ModelConfig::desk();
  wrong.video_types = 5;
  CHECK_THROWS_AS(wrong.validate(), ConfigError);
  CHECK(ModelConfig::desk().caps_grid_h() == 4);
  CHECK(ModelConfig::desk().caps_grid_w() == 7);
  CHECK(ModelConfig::paper().caps_grid_h() == 16);
  CHECK(ModelConfig::paper().caps_grid_w() == 28);
}

TEST_CASE("ground_truth_bbox degenerate cases") {
  Tensor masks = Tensor::zeros({8, 16, 20});
  masks.data()[8 * 20 + 10] = 1.0;  // single static pixel at (8,10), all frames
  for (int t = 1; t < 8; ++t) masks.data()[t * 16 * 20 + 8 * 20 + 10] = 1.0;
  BoundingBox b = ground_truth_bbox(masks, 16, 20);
  CHECK(b.h == 1);
  CHECK(b.w == 1);
  CHECK(b.center_r == 8);
  CHECK(b.center_c == 10);

  Tensor full = Tensor::full({8, 16, 20}, 1.0);
  BoundingBox fb = ground_truth_bbox(full, 16, 20);
  CHECK(fb.h == 16);
  CHECK(fb.w == 20);

  Tensor empty = Tensor::zeros({8, 16, 20});
  CHECK_THROWS_AS(ground_truth_bbox(empty, 16, 20), ContractError);
}

namespace {

// exhaustive oracle: smallest extent whose clamped centered placement covers
int64_t brute_min_extent(int64_t center, const std::vector<int64_t>& coords, int64_t limit) {
  for (int64_t e = 1; e <= limit; ++e) {
    int64_t start = std::clamp<int64_t>(center - e / 2, 0, limit - e);
    bool ok = true;
    for (int64_t v : coords) ok = ok && v >= start && v < start + e;
    if (ok) return e;
  }
  return limit;
}

}  // namespace

TEST_CASE("ground_truth_bbox matches the exhaustive min-box oracle") {
  Rng rng(5);
  for (int rep = 0; rep < 60; ++rep) {
    int64_t H = 24, W = 30;
    Tensor masks = Tensor::zeros({8, H, W});
    // object of a few pixels translating over 8 frames
    int64_t r0 = rng.uniform_int(4, H - 8), c0 = rng.uniform_int(4, W - 10);
    int64_t vr = rng.uniform_int(-1, 1), vc = rng.uniform_int(-2, 2);
    int64_t hh = rng.uniform_int(1, 3), ww = rng.uniform_int(1, 4);
    std::vector<int64_t> rows, cols;
    for (int64_t t = 0; t < 8; ++t) {
      for (int64_t dr = 0; dr < hh; ++dr) {
        for (int64_t dc = 0; dc < ww; ++dc) {
          int64_t r = std::clamp<int64_t>(r0 + vr * t + dr, 0, H - 1);
          int64_t c = std::clamp<int64_t>(c0 + vc * t + dc, 0, W - 1);
          masks.data()[t * H * W + r * W + c] = 1.0;
          rows.push_back(r);
          cols.push_back(c);
        }
      }
    }
    BoundingBox b = ground_truth_bbox(masks, H, W);
    CHECK(b.h == brute_min_extent(b.center_r, rows, H));
    CHECK(b.w == brute_min_extent(b.center_c, cols, W));
  }
}

TEST_CASE("crop_and_resize identity and constants") {
  Rng rng(7);
  Tensor img = random_tensor({12, 16, 2}, rng, 0, 1);
  BoundingBox full{6, 8, 12, 16};
  CHECK(max_abs_diff(crop_and_resize(img, full, 12, 16), img) == 0.0);

  Tensor c = Tensor::full({12, 16}, 0.4);
  BoundingBox box{5, 6, 6, 8};
  Tensor out = crop_and_resize(c, box, 4, 4);
  CHECK(max_abs_diff(out, Tensor::full({4, 4}, 0.4)) <= 1e-15);
}

TEST_CASE("crop_and_resize matches the direct interpolation oracle") {
  Rng rng(11);
  Tensor img = random_tensor({16, 16}, rng, 0, 1);
  BoundingBox box{8, 8, 8, 8};
  Tensor out = crop_and_resize(img, box, 4, 4);
  int64_t r0 = box.row0(16), c0 = box.col0(16);
  for (int64_t i = 0; i < 4; ++i) {
    for (int64_t j = 0; j < 4; ++j) {
      double fy = (i + 0.5) * 2.0 - 0.5, fx = (j + 0.5) * 2.0 - 0.5;
      int64_t y0 = static_cast<int64_t>(fy), x0 = static_cast<int64_t>(fx);
      double wy = fy - y0, wx = fx - x0;
      auto px = [&](int64_t y, int64_t x) { return img.at({r0 + y, c0 + x}); };
      double v = (1 - wy) * ((1 - wx) * px(y0, x0) + wx * px(y0, x0 + 1)) +
                 wy * ((1 - wx) * px(y0 + 1, x0) + wx * px(y0 + 1, x0 + 1));
      CHECK(std::abs(out.at({i, j}) - v) <= 1e-12);
    }
  }
}

TEST_CASE("degenerate boxes expand before cropping") {
  Tensor img = Tensor::full({10, 10}, 1.0);
  BoundingBox tiny{5, 5, 1, 1};
  Tensor out = crop_and_resize(img, tiny, 4, 4);
  CHECK(out.shape() == Shape{4, 4});
  CHECK(max_abs_diff(out, Tensor::full({4, 4}, 1.0)) == 0.0);
}

TEST_CASE("paste_into_frame zeros outside the box") {
  Rng rng(13);
  Tensor pred = random_tensor({4, 4}, rng, 0.2, 0.9);
  BoundingBox box{6, 6, 4, 4};
  Tensor out = paste_into_frame(pred, box, 16, 16);
  CHECK(out.shape() == Shape{16, 16});
  CHECK(out.at({0, 0}) == 0.0);
  CHECK(out.at({15, 15}) == 0.0);
  double inside = 0;
  for (int64_t r = 4; r < 8; ++r)
    for (int64_t c = 4; c < 8; ++c) inside += out.at({r, c});
  CHECK(inside > 0.0);
}

namespace {

ClipSample desk_sample(uint64_t seed, Scenario sc = Scenario::plain) {
  ModelConfig mc = ModelConfig::desk();
  SceneSpec spec = SceneSpec::sample(sc, seed, mc.high_h, mc.high_w);
  return generate_clip(spec, 0, mc.clip_length);
}

}  // namespace

TEST_CASE("video branch contract") {
  ModelConfig mc = ModelConfig::desk();
  CapsuleVosModel model(mc, 5);
  ClipSample s = desk_sample(21);
  Tensor clip_lr = crop_and_resize(s.frames, s.gt_box, mc.low_h, mc.low_w);
  CapsuleGrid caps = model.video_branch_forward(clip_lr);
  CHECK(caps.activations.shape() ==
        Shape{mc.clip_length, mc.caps_grid_h(), mc.caps_grid_w(), mc.video_types});
  CHECK(caps.poses.shape() ==
        Shape{mc.clip_length, mc.caps_grid_h(), mc.caps_grid_w(), mc.video_types, 16});
  caps.validate();  // activations in [0,1], index spaces identical

  CapsuleGrid again = model.video_branch_forward(clip_lr);
  CHECK(max_abs_diff(caps.poses, again.poses) == 0.0);
  CHECK(max_abs_diff(caps.activations, again.activations) == 0.0);

  CHECK_THROWS_AS(model.video_branch_forward(Tensor::zeros({8, 16, 16, 3})), DimensionError);
}

TEST_CASE("frame branch tiling and state round trip") {
  ModelConfig mc = ModelConfig::desk();
  CapsuleVosModel model(mc, 5);
  ClipSample s = desk_sample(22);
  Tensor clip_lr = crop_and_resize(s.frames, s.gt_box, mc.low_h, mc.low_w);
  Tensor ref_lr = crop_and_resize_mask(s.ref_mask, s.gt_box, mc.low_h, mc.low_w);
  auto [caps, memory] = model.frame_branch_forward(frame_slice(clip_lr, 0), ref_lr, model.initial_memory());
  caps.validate();
  // identical capsules at every time step
  int64_t per_t = caps.poses.size() / mc.clip_length;
  for (int64_t t = 1; t < mc.clip_length; ++t) {
    for (int64_t i = 0; i < per_t; ++i) {
      CHECK(caps.poses.data()[t * per_t + i] == caps.poses.data()[i]);
    }
  }
  // memory survives the checkpoint container bit-exactly
  auto tmp = std::filesystem::temp_directory_path() / "cvos_mem.ckpt";
  save_checkpoint(tmp.string(), {{"hidden", memory.hidden}, {"cell", memory.cell}});
  auto loaded = load_checkpoint(tmp.string());
  CHECK(max_abs_diff(loaded["hidden"], memory.hidden) == 0.0);
  CHECK(max_abs_diff(loaded["cell"], memory.cell) == 0.0);
  std::filesystem::remove(tmp);

  CHECK_THROWS_AS(model.frame_branch_forward(frame_slice(clip_lr, 0), Tensor::zeros({4, 4}),
                                             model.initial_memory()),
                  DimensionError);
}

TEST_CASE("condition_and_decode output contract") {
  ModelConfig mc = ModelConfig::desk();
  CapsuleVosModel model(mc, 9);
  ClipSample s = desk_sample(23);
  Tensor clip_lr = crop_and_resize(s.frames, s.gt_box, mc.low_h, mc.low_w);
  Tensor ref_lr = crop_and_resize_mask(s.ref_mask, s.gt_box, mc.low_h, mc.low_w);
  CapsuleGrid video = model.video_branch_forward(clip_lr);
  auto [frame, memory] = model.frame_branch_forward(frame_slice(clip_lr, 0), ref_lr, model.initial_memory());
  Tensor pred = model.condition_and_decode(video, frame);
  CHECK(pred.shape() == Shape{mc.clip_length, mc.low_h, mc.low_w});
  const double* p = pred.data();
  for (int64_t i = 0; i < pred.size(); ++i) {
    CHECK(p[i] > 0.0);
    CHECK(p[i] < 1.0);
  }
}

TEST_CASE("every stage receives gradient from the total loss") {
  ModelConfig mc = ModelConfig::desk();
  CapsuleVosModel model(mc, 31);
  ClipSample s = desk_sample(24);
  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    auto out = model.forward_train(s, s.ref_mask, model.initial_memory(), model.initial_zoom_state());
    loss = out.loss_total;
  }
  tape.backward(loss);
  const char* stage_params[] = {
      "video.conv0.spatial.kernel", "video.caps.kernel", "frame.conv0.kernel",
      "frame.memory.kernel",        "frame.caps.kernel", "cond.w_key",
      "cond.w_query",               "cond.w_value",      "convcaps.w",
      "decoder.up2.kernel",         "decoder.head.kernel", "zoom.fc.w",
      "zoom.conv0.kernel"};
  for (const char* name : stage_params) {
    Tensor g = model.params().at(name).grad();
    double norm = 0;
    for (int64_t i = 0; i < g.size(); ++i) norm += std::abs(g.data()[i]);
    INFO(name);
    CHECK(norm > 0.0);
  }
}

TEST_CASE("zoom_predict respects clamps and fallbacks") {
  ModelConfig mc = ModelConfig::desk();
  CapsuleVosModel model(mc, 17);
  ClipSample s = desk_sample(25);
  auto zr = model.zoom_predict(frame_slice(s.frames, 0), s.ref_mask, model.initial_zoom_state());
  CHECK(zr.network_ran);
  CHECK(zr.box.h >= mc.min_box_h);
  CHECK(zr.box.h <= mc.high_h);
  CHECK(zr.box.w >= mc.min_box_w);
  CHECK(zr.box.w <= mc.high_w);
  CHECK(zr.pred_h.item() > 0.0);
  CHECK(zr.pred_h.item() <= static_cast<double>(mc.high_h));

  // empty mask falls back to the full frame but still advances the state
  Tensor empty = Tensor::zeros({mc.high_h, mc.high_w});
  auto zr2 = model.zoom_predict(frame_slice(s.frames, 0), empty, model.initial_zoom_state());
  CHECK(zr2.box.h == mc.high_h);
  CHECK(zr2.box.w == mc.high_w);
  CHECK(max_abs_diff(zr2.state.hidden, model.initial_zoom_state().hidden) > 0.0);
}

TEST_CASE("model_forward shape, range, determinism") {
  ModelConfig mc = ModelConfig::desk();
  CapsuleVosModel model(mc, 41);
  ClipSample s = desk_sample(26);
  auto out = model.model_forward(s.frames, s.ref_mask, model.initial_memory(), model.initial_zoom_state());
  CHECK(out.masks_hr.shape() == Shape{mc.clip_length, mc.high_h, mc.high_w});
  const double* p = out.masks_hr.data();
  for (int64_t i = 0; i < out.masks_hr.size(); ++i) {
    CHECK(p[i] >= 0.0);
    CHECK(p[i] <= 1.0);
  }
  auto again = model.model_forward(s.frames, s.ref_mask, model.initial_memory(), model.initial_zoom_state());
  CHECK(max_abs_diff(out.masks_hr, again.masks_hr) == 0.0);

  // an all-zero reference mask still yields a valid-shape output
  Tensor empty = Tensor::zeros({mc.high_h, mc.high_w});
  auto out2 = model.model_forward(s.frames, empty, model.initial_memory(), model.initial_zoom_state());
  CHECK(out2.masks_hr.shape() == Shape{mc.clip_length, mc.high_h, mc.high_w});
}

TEST_CASE("ablation variants run end to end") {
  ClipSample s = desk_sample(27);
  for (const char* mode : {"no_memory", "no_zoom", "hc_zoom", "concat_routing", "fully_conv"}) {
    ModelConfig mc = ModelConfig::desk();
    if (std::string(mode) == "no_memory") mc.no_memory = true;
    if (std::string(mode) == "no_zoom") mc.no_zoom = true;
    if (std::string(mode) == "hc_zoom") mc.hc_zoom = true;
    if (std::string(mode) == "concat_routing") mc.concat_routing = true;
    if (std::string(mode) == "fully_conv") mc.fully_conv = true;
    CapsuleVosModel model(mc, 51);
    Tape tape;
    Tensor loss;
    {
      TapeScope scope(tape);
      auto out = model.forward_train(s, s.ref_mask, model.initial_memory(), model.initial_zoom_state());
      loss = out.loss_total;
      INFO(mode);
      CHECK(out.pred_lr.shape() == Shape{mc.clip_length, mc.low_h, mc.low_w});
      CHECK(std::isfinite(out.loss_total.item()));
      if (mc.no_zoom || mc.hc_zoom) CHECK(out.loss_box.item() == 0.0);
    }
    tape.backward(loss);
  }
}

TEST_CASE("memory ablation removes cross-clip dependence") {
  // two different first clips, then the same second clip: without memory the
  // second clip's output (same reference mask) is identical; with memory it is not
  ModelConfig mc = ModelConfig::desk();
  SceneSpec spec = SceneSpec::sample(Scenario::occlusion, 71, mc.high_h, mc.high_w);
  ClipSample clip_a = generate_clip(spec, 0, mc.clip_length);
  ClipSample clip_b = generate_clip(spec, 8, mc.clip_length);
  SceneSpec spec2 = SceneSpec::sample(Scenario::plain, 72, mc.high_h, mc.high_w);
  ClipSample other = generate_clip(spec2, 0, mc.clip_length);
  Tensor fixed_ref = clip_b.ref_mask;

  auto run_pair = [&](const ModelConfig& cfg, const ClipSample& first) {
    CapsuleVosModel model(cfg, 99);
    auto s1 = model.model_forward(first.frames, first.ref_mask, model.initial_memory(),
                                  model.initial_zoom_state());
    // reset the zoom state so any difference comes from the memory path
    auto s2 = model.model_forward(clip_b.frames, fixed_ref, s1.memory, model.initial_zoom_state());
    return s2.masks_hr;
  };

  ModelConfig nomem = ModelConfig::desk();
  nomem.no_memory = true;
  Tensor a1 = run_pair(nomem, clip_a);
  Tensor a2 = run_pair(nomem, other);
  CHECK(max_abs_diff(a1, a2) == 0.0);

  ModelConfig full = ModelConfig::desk();
  Tensor b1 = run_pair(full, clip_a);
  Tensor b2 = run_pair(full, other);
  CHECK(max_abs_diff(b1, b2) > 0.0);
}

TEST_CASE("checkpoint restores the exact model state") {
  ModelConfig mc = ModelConfig::desk();
  CapsuleVosModel model(mc, 61);
  ClipSample s = desk_sample(28);
  auto before = model.model_forward(s.frames, s.ref_mask, model.initial_memory(), model.initial_zoom_state());

  auto tmp = std::filesystem::temp_directory_path() / "cvos_model.ckpt";
  save_checkpoint(tmp.string(), model.params());
  CapsuleVosModel other(mc, 62);  // different random init
  other.load_params(load_checkpoint(tmp.string()));
  auto after = other.model_forward(s.frames, s.ref_mask, other.initial_memory(), other.initial_zoom_state());
  CHECK(max_abs_diff(before.masks_hr, after.masks_hr) == 0.0);
  std::filesystem::remove(tmp);

  // preset mismatch is a configuration error
  ModelConfig nm = ModelConfig::desk();
  nm.no_memory = true;
  CapsuleVosModel mismatched(nm, 63);
  CHECK_THROWS_AS(mismatched.load_params(load_checkpoint("/nonexistent.ckpt")), IoError);
}
