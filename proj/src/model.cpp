#include "cvos/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "cvos/losses.hpp"
#include "cvos/rng.hpp"

namespace cvos {

int64_t BoundingBox::row0(int64_t frame_h) const {
  return std::clamp<int64_t>(center_r - h / 2, 0, frame_h - h);
}

int64_t BoundingBox::col0(int64_t frame_w) const {
  return std::clamp<int64_t>(center_c - w / 2, 0, frame_w - w);
}

bool BoundingBox::covers(int64_t r, int64_t c, int64_t frame_h, int64_t frame_w) const {
  int64_t r0 = row0(frame_h), c0 = col0(frame_w);
  return r >= r0 && r < r0 + h && c >= c0 && c < c0 + w;
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::paper() {
  ModelConfig cfg;
  cfg.preset = "paper";
  cfg.low_h = 128;
  cfg.low_w = 224;
  cfg.high_h = 512;
  cfg.high_w = 896;
  cfg.video_channels = {64, 128, 128, 256, 256, 512};
  cfg.frame_channels = {32, 64, 128, 128};
  cfg.memory_channels = 128;
  cfg.video_types = 12;
  cfg.frame_types = 8;
  cfg.conditioned_types = 16;
  cfg.conv_caps_types = 16;
  cfg.decoder_channels = {384, 192, 96, 48};
  cfg.zoom_channels = {32, 64, 128, 128, 128, 128, 128};
  cfg.zoom_lstm_hidden = 256;
  cfg.min_box_h = 64;
  cfg.min_box_w = 112;
  return cfg;
}

int64_t ModelConfig::caps_grid_h() const {
  int64_t s = 2;  // capsule convolution stride
  for (int64_t v : video_spatial_strides) s *= v;
  return low_h / s;
}

int64_t ModelConfig::caps_grid_w() const {
  int64_t s = 2;
  for (int64_t v : video_spatial_strides) s *= v;
  return low_w / s;
}

void ModelConfig::validate() const {
  int flags = (no_memory ? 1 : 0) + (no_zoom ? 1 : 0) + (hc_zoom ? 1 : 0) +
              (concat_routing ? 1 : 0) + (fully_conv ? 1 : 0);
  if (flags > 1) throw ConfigError("at most one ablation toggle may be active");
  if (clip_length < 1) throw ConfigError("clip_length must be positive");
  if (video_channels.size() != 6 || video_spatial_strides.size() != 6) {
    throw ConfigError("the video branch uses exactly 6 factorized convolutions");
  }
  if (frame_channels.size() != 4 || frame_strides.size() != 4) {
    throw ConfigError("the frame branch uses exactly 4 convolutions");
  }
  int64_t sv = 1;
  for (int64_t v : video_spatial_strides) sv *= v;
  int64_t sf = 1;
  for (int64_t v : frame_strides) sf *= v;
  if (sv != sf) throw ConfigError("video and frame branches must downsample equally");
  if (low_h % (sv * 2) != 0 || low_w % (sv * 2) != 0) {
    throw ConfigError("low resolution must be divisible by the total stride");
  }
  int64_t zh = high_h, zw = high_w;
  for (size_t i = 0; i < zoom_channels.size(); ++i) {
    zh = (zh + 1) / 2;
    zw = (zw + 1) / 2;
  }
  if (zh != 4 || zw != 7) {
    throw ConfigError("zoom convolutions must reduce the high resolution to a 4x7 grid");
  }
  if (min_box_h < 1 || min_box_h > high_h || min_box_w < 1 || min_box_w > high_w) {
    throw ConfigError("minimum box size must fit the frame");
  }
  if (decoder_channels.size() != 4) throw ConfigError("decoder expects 4 channel widths");
  if (preset == "paper") {
    // the published architecture numbers
    bool ok = clip_length == 8 && low_h == 128 && low_w == 224 && high_h == 512 && high_w == 896 &&
              video_channels.back() == 512 && video_types == 12 && frame_types == 8 &&
              conditioned_types == 16 && conv_caps_types == 16 && memory_channels == 128 &&
              low_h / sv == 32 && low_w / sv == 56 && caps_grid_h() == 16 && caps_grid_w() == 28;
    if (!ok) throw ConfigError("paper preset no longer matches the published architecture");
  } else if (preset == "desk") {
    bool ok = clip_length == 8 && low_h == 32 && low_w == 56 && high_h == 128 && high_w == 224 &&
              video_channels.back() == 64 && video_types == 6 && frame_types == 4 &&
              conditioned_types == 8 && conv_caps_types == 8 && memory_channels == 16;
    if (!ok) throw ConfigError("desk preset must keep the paper ratios (spatial /4, channels /8, types /2)");
  } else {
    throw ConfigError("unknown preset: " + preset);
  }
}

// ---- boxes and resampling ---------------------------------------------------

BoundingBox ground_truth_bbox(const Tensor& masks, int64_t frame_h, int64_t frame_w) {
  const Shape& s = masks.shape();
  if (s.size() != 3 || s[1] != frame_h || s[2] != frame_w) {
    throw DimensionError("ground_truth_bbox expects masks [T, H, W] matching the frame size");
  }
  int64_t frames = s[0];
  const double* m = masks.data();
  // first-frame centroid
  double sum_r = 0, sum_c = 0;
  int64_t count = 0;
  for (int64_t r = 0; r < frame_h; ++r) {
    for (int64_t c = 0; c < frame_w; ++c) {
      if (m[r * frame_w + c] > 0.5) {
        sum_r += static_cast<double>(r);
        sum_c += static_cast<double>(c);
        ++count;
      }
    }
  }
  if (count == 0) throw ContractError("ground_truth_bbox: first-frame mask is empty");
  BoundingBox box;
  box.center_r = std::llround(sum_r / static_cast<double>(count));
  box.center_c = std::llround(sum_c / static_cast<double>(count));

  int64_t rmin = frame_h, rmax = -1, cmin = frame_w, cmax = -1;
  for (int64_t t = 0; t < frames; ++t) {
    const double* mt = m + t * frame_h * frame_w;
    for (int64_t r = 0; r < frame_h; ++r) {
      for (int64_t c = 0; c < frame_w; ++c) {
        if (mt[r * frame_w + c] > 0.5) {
          rmin = std::min(rmin, r);
          rmax = std::max(rmax, r);
          cmin = std::min(cmin, c);
          cmax = std::max(cmax, c);
        }
      }
    }
  }
  // coverage under the clamped placement is monotone in the extent, so the
  // minimal covering extent can be found by bisection
  auto minimal_extent = [](int64_t center, int64_t lo, int64_t hi, int64_t limit) {
    auto covers = [&](int64_t e) {
      int64_t start = std::clamp<int64_t>(center - e / 2, 0, limit - e);
      return lo >= start && hi <= start + e - 1;
    };
    int64_t lo_e = std::max<int64_t>(1, hi - lo + 1), hi_e = limit;
    while (lo_e < hi_e) {
      int64_t mid = lo_e + (hi_e - lo_e) / 2;
      if (covers(mid)) {
        hi_e = mid;
      } else {
        lo_e = mid + 1;
      }
    }
    return lo_e;
  };
  box.h = minimal_extent(box.center_r, rmin, rmax, frame_h);
  box.w = minimal_extent(box.center_c, cmin, cmax, frame_w);
  return box;
}

namespace {

BoundingBox sanitize_box(const BoundingBox& box, int64_t frame_h, int64_t frame_w) {
  BoundingBox b = box;
  if (b.h < 2) b.h = 2;  // degenerate boxes expand to the minimum croppable size
  if (b.w < 2) b.w = 2;
  b.h = std::min(b.h, frame_h);
  b.w = std::min(b.w, frame_w);
  return b;
}

Tensor crop_block(const Tensor& img, int64_t r0, int64_t c0, int64_t bh, int64_t bw) {
  int64_t W = img.extent(1);
  int64_t C = img.rank() == 3 ? img.extent(2) : 1;
  Shape out_shape = img.rank() == 3 ? Shape{bh, bw, C} : Shape{bh, bw};
  Tensor out = Tensor::zeros(out_shape);
  const double* src = img.data();
  double* dst = out.data();
  for (int64_t r = 0; r < bh; ++r) {
    std::memcpy(dst + r * bw * C, src + ((r0 + r) * W + c0) * C,
                static_cast<size_t>(bw * C) * sizeof(double));
  }
  return out;
}

}  // namespace

Tensor crop_and_resize(const Tensor& clip, const BoundingBox& box, int64_t out_h, int64_t out_w) {
  if (clip.rank() == 4) {
    int64_t T = clip.extent(0);
    int64_t C = clip.extent(3);
    Tensor out = Tensor::zeros({T, out_h, out_w, C});
    for (int64_t t = 0; t < T; ++t) {
      Tensor f = crop_and_resize(frame_slice(clip, t), box, out_h, out_w);
      std::memcpy(out.data() + t * out_h * out_w * C, f.data(),
                  static_cast<size_t>(f.size()) * sizeof(double));
    }
    return out;
  }
  if (clip.rank() != 2 && clip.rank() != 3) {
    throw DimensionError("crop_and_resize expects [T,H,W,C], [H,W,C] or [H,W]");
  }
  int64_t H = clip.extent(0), W = clip.extent(1);
  BoundingBox b = sanitize_box(box, H, W);
  Tensor block = crop_block(clip, b.row0(H), b.col0(W), b.h, b.w);
  return bilinear_resize(block, out_h, out_w);
}

Tensor crop_and_resize_mask(const Tensor& mask, const BoundingBox& box, int64_t out_h,
                            int64_t out_w) {
  if (mask.rank() == 3) {
    int64_t T = mask.extent(0);
    Tensor out = Tensor::zeros({T, out_h, out_w});
    for (int64_t t = 0; t < T; ++t) {
      Tensor f = crop_and_resize_mask(frame_slice(mask, t), box, out_h, out_w);
      std::memcpy(out.data() + t * out_h * out_w, f.data(),
                  static_cast<size_t>(f.size()) * sizeof(double));
    }
    return out;
  }
  if (mask.rank() != 2) throw DimensionError("crop_and_resize_mask expects [H,W] or [T,H,W]");
  int64_t H = mask.extent(0), W = mask.extent(1);
  BoundingBox b = sanitize_box(box, H, W);
  Tensor block = crop_block(mask, b.row0(H), b.col0(W), b.h, b.w);
  return nearest_resize(block, out_h, out_w);
}

Tensor paste_into_frame(const Tensor& pred, const BoundingBox& box, int64_t frame_h,
                        int64_t frame_w) {
  if (pred.rank() != 2) throw DimensionError("paste_into_frame expects a [h,w] prediction");
  BoundingBox b = sanitize_box(box, frame_h, frame_w);
  Tensor scaled = bilinear_resize(pred, b.h, b.w);
  Tensor out = Tensor::zeros({frame_h, frame_w});
  int64_t r0 = b.row0(frame_h), c0 = b.col0(frame_w);
  for (int64_t r = 0; r < b.h; ++r) {
    std::memcpy(out.data() + (r0 + r) * frame_w + c0, scaled.data() + r * b.w,
                static_cast<size_t>(b.w) * sizeof(double));
  }
  return out;
}

// ---- model ------------------------------------------------------------------

namespace {

CapsuleGrid caps_from_features(const Tensor& feats, int64_t types) {
  const Shape& s = feats.shape();
  Shape grouped(s.begin(), s.end() - 1);
  grouped.push_back(types);
  grouped.push_back(17);
  Tensor g = reshape(feats, grouped);
  Tensor poses = slice_last(g, 0, 16);
  Shape act_shape(s.begin(), s.end() - 1);
  act_shape.push_back(types);
  Tensor acts = sigmoid(reshape(slice_last(g, 16, 17), act_shape));
  return CapsuleGrid{poses, acts};
}

bool mask_centroid(const Tensor& mask, int64_t& out_r, int64_t& out_c) {
  int64_t H = mask.extent(0), W = mask.extent(1);
  const double* m = mask.data();
  double sr = 0, sc = 0;
  int64_t n = 0;
  for (int64_t r = 0; r < H; ++r) {
    for (int64_t c = 0; c < W; ++c) {
      if (m[r * W + c] > 0.5) {
        sr += static_cast<double>(r);
        sc += static_cast<double>(c);
        ++n;
      }
    }
  }
  if (n == 0) return false;
  out_r = std::llround(sr / static_cast<double>(n));
  out_c = std::llround(sc / static_cast<double>(n));
  return true;
}

}  // namespace

CapsuleVosModel::CapsuleVosModel(ModelConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(seed);

  // rectifier-preserving uniform bound keeps magnitudes stable through the
  // deep relu stacks; the gate kernels use the plain variance-preserving bound
  auto conv_param = [&](const std::string& name, Shape shape, double gain = 6.0) {
    int64_t fan_in = 1;
    for (size_t i = 0; i + 1 < shape.size(); ++i) fan_in *= shape[i];
    double bound = std::sqrt(gain / static_cast<double>(fan_in));
    int64_t out_ch = shape.back();
    params_[name + ".kernel"] = Tensor::uniform(shape, rng, -bound, bound, true);
    params_[name + ".bias"] = Tensor::zeros({out_ch}, true);
  };
  auto caps_weights = [&](const std::string& name, int64_t in_types, int64_t out_types) {
    // identity plus noise so initial votes approximate the poses
    Tensor w = Tensor::zeros({in_types, out_types, 16}, true);
    double* p = w.data();
    for (int64_t i = 0; i < in_types; ++i) {
      for (int64_t j = 0; j < out_types; ++j) {
        for (int r = 0; r < 4; ++r) {
          for (int c = 0; c < 4; ++c) {
            p[(i * out_types + j) * 16 + r * 4 + c] = (r == c ? 1.0 : 0.0) + rng.normal(0.0, 0.01);
          }
        }
      }
    }
    params_[name] = w;
  };
  auto beta_params = [&](const std::string& prefix, int64_t types) {
    params_[prefix + ".beta_a"] = Tensor::zeros({types}, true);
    params_[prefix + ".beta_u"] = Tensor::zeros({types}, true);
  };

  // video branch: 6 factorized (2+1)D convolutions, then the capsule head
  for (size_t n = 0; n < 6; ++n) {
    int64_t cin = n == 0 ? 3 : cfg_.video_channels[n - 1];
    int64_t cout = cfg_.video_channels[n];
    conv_param("video.conv" + std::to_string(n) + ".spatial", {1, 3, 3, cin, cout});
    conv_param("video.conv" + std::to_string(n) + ".temporal", {3, 1, 1, cout, cout});
  }
  conv_param("video.caps", {3, 3, 3, cfg_.video_channels.back(), cfg_.video_types * 17});

  // frame branch: 4 convolutions, recurrent memory, capsule head
  for (size_t n = 0; n < 4; ++n) {
    int64_t cin = n == 0 ? 4 : cfg_.frame_channels[n - 1];
    conv_param("frame.conv" + std::to_string(n), {3, 3, cin, cfg_.frame_channels[n]});
  }
  if (cfg_.no_memory) {
    conv_param("frame.memory_conv", {3, 3, cfg_.frame_channels.back(), cfg_.memory_channels});
  } else {
    conv_param("frame.memory",
               {3, 3, cfg_.frame_channels.back() + cfg_.memory_channels, 4 * cfg_.memory_channels},
               3.0);
    // forget gate opens at the start of training
    double* b = params_["frame.memory.bias"].data();
    for (int64_t i = cfg_.memory_channels; i < 2 * cfg_.memory_channels; ++i) b[i] = 1.0;
  }
  conv_param("frame.caps", {3, 3, cfg_.memory_channels, cfg_.frame_types * 17});

  // conditioning and the convolutional capsule layer
  if (cfg_.fully_conv) {
    int64_t dec_in = (cfg_.conv_caps_types + cfg_.video_types + cfg_.conditioned_types) * 16;
    conv_param("fc.video", {3, 3, 3, cfg_.video_channels.back(), 32});
    conv_param("fc.frame", {3, 3, cfg_.memory_channels, 16});
    conv_param("fc.mix1", {3, 3, 3, 48, 32});
    conv_param("fc.mix2", {1, 1, 1, 32, dec_in});
  } else if (cfg_.concat_routing) {
    caps_weights("cond.w_concat", cfg_.video_types + cfg_.frame_types, cfg_.conditioned_types);
    beta_params("cond", cfg_.conditioned_types);
    caps_weights("convcaps.w", cfg_.conditioned_types, cfg_.conv_caps_types);
    beta_params("convcaps", cfg_.conv_caps_types);
  } else {
    caps_weights("cond.w_key", cfg_.video_types, cfg_.conditioned_types);
    caps_weights("cond.w_value", cfg_.video_types, cfg_.conditioned_types);
    caps_weights("cond.w_query", cfg_.frame_types, cfg_.conditioned_types);
    beta_params("cond", cfg_.conditioned_types);
    caps_weights("convcaps.w", cfg_.conditioned_types, cfg_.conv_caps_types);
    beta_params("convcaps", cfg_.conv_caps_types);
  }

  // decoder
  int64_t dec_in = (cfg_.conv_caps_types + cfg_.video_types + cfg_.conditioned_types) * 16;
  const auto& dc = cfg_.decoder_channels;
  conv_param("decoder.compress", {1, 1, 1, dec_in, dc[0]});
  conv_param("decoder.up1", {1, 3, 3, dc[0], dc[1]});
  conv_param("decoder.up2", {1, 3, 3, dc[1], dc[2]});
  conv_param("decoder.up3", {1, 3, 3, dc[2], dc[3]});
  conv_param("decoder.head", {1, 1, 1, dc[3], 1});

  // zooming module
  if (!cfg_.no_zoom && !cfg_.hc_zoom) {
    for (size_t n = 0; n < cfg_.zoom_channels.size(); ++n) {
      int64_t cin = n == 0 ? 4 : cfg_.zoom_channels[n - 1];
      conv_param("zoom.conv" + std::to_string(n), {3, 3, cin, cfg_.zoom_channels[n]});
    }
    int64_t flat = 4 * 7 * cfg_.zoom_channels.back();
    int64_t hid = cfg_.zoom_lstm_hidden;
    double bx = std::sqrt(3.0 / static_cast<double>(flat));
    double bh = std::sqrt(3.0 / static_cast<double>(hid));
    params_["zoom.lstm.wx"] = Tensor::uniform({flat, 4 * hid}, rng, -bx, bx, true);
    params_["zoom.lstm.wh"] = Tensor::uniform({hid, 4 * hid}, rng, -bh, bh, true);
    params_["zoom.lstm.bias"] = Tensor::zeros({4 * hid}, true);
    double* zb = params_["zoom.lstm.bias"].data();
    for (int64_t i = hid; i < 2 * hid; ++i) zb[i] = 1.0;
    params_["zoom.fc.w"] = Tensor::uniform({hid, 2}, rng, -bh, bh, true);
    // start near a quarter of the frame rather than half
    params_["zoom.fc.bias"] = Tensor::from_data({2}, {std::log(1.0 / 3.0), std::log(1.0 / 3.0)}, true);
  }
}

Tensor CapsuleVosModel::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

void CapsuleVosModel::load_params(const std::map<std::string, Tensor>& values) {
  for (auto& [name, tensor] : params_) {
    auto it = values.find(name);
    if (it == values.end()) throw ConfigError("checkpoint missing parameter: " + name);
    if (it->second.shape() != tensor.shape()) {
      throw ConfigError("checkpoint shape mismatch for " + name + ": " +
                        shape_str(it->second.shape()) + " vs " + shape_str(tensor.shape()));
    }
    std::memcpy(tensor.data(), it->second.data(),
                static_cast<size_t>(tensor.size()) * sizeof(double));
  }
}

MemoryState CapsuleVosModel::initial_memory() const {
  int64_t sf = 1;
  for (int64_t v : cfg_.frame_strides) sf *= v;
  Shape s{cfg_.low_h / sf, cfg_.low_w / sf, cfg_.memory_channels};
  return MemoryState{Tensor::zeros(s), Tensor::zeros(s)};
}

ZoomState CapsuleVosModel::initial_zoom_state() const {
  return ZoomState{Tensor::zeros({1, cfg_.zoom_lstm_hidden}), Tensor::zeros({1, cfg_.zoom_lstm_hidden})};
}

Tensor CapsuleVosModel::video_features(const Tensor& clip_lr) const {
  const Shape& s = clip_lr.shape();
  if (s.size() != 4 || s[0] != cfg_.clip_length || s[1] != cfg_.low_h || s[2] != cfg_.low_w ||
      s[3] != 3) {
    throw DimensionError("video branch expects a clip shaped [" + std::to_string(cfg_.clip_length) +
                         ", " + std::to_string(cfg_.low_h) + ", " + std::to_string(cfg_.low_w) +
                         ", 3], got " + shape_str(s));
  }
  Tensor x = clip_lr;
  for (size_t n = 0; n < 6; ++n) {
    std::string base = "video.conv" + std::to_string(n);
    int64_t st = cfg_.video_spatial_strides[n];
    x = relu(add(convolve(x, param(base + ".spatial.kernel"), {1, st, st}, {0, 1, 1}),
                 param(base + ".spatial.bias")));
    x = relu(add(convolve(x, param(base + ".temporal.kernel"), {1, 1, 1}, {1, 0, 0}),
                 param(base + ".temporal.bias")));
  }
  return x;
}

CapsuleGrid CapsuleVosModel::video_caps_from(const Tensor& feats) const {
  Tensor c = add(convolve(feats, param("video.caps.kernel"), {1, 2, 2}, {1, 1, 1}),
                 param("video.caps.bias"));
  return caps_from_features(c, cfg_.video_types);
}

CapsuleGrid CapsuleVosModel::video_branch_forward(const Tensor& clip_lr) const {
  return video_caps_from(video_features(clip_lr));
}

Tensor CapsuleVosModel::frame_features(const Tensor& frame_lr, const Tensor& ref_mask_lr,
                                       const MemoryState& memory, MemoryState* memory_out) const {
  if (frame_lr.rank() != 3 || frame_lr.extent(0) != cfg_.low_h || frame_lr.extent(1) != cfg_.low_w) {
    throw DimensionError("frame branch expects a low-resolution frame [H,W,3], got " +
                         shape_str(frame_lr.shape()));
  }
  if (ref_mask_lr.shape() != Shape{cfg_.low_h, cfg_.low_w}) {
    throw DimensionError("frame branch expects a low-resolution mask [H,W], got " +
                         shape_str(ref_mask_lr.shape()));
  }
  Tensor x = concat_last({frame_lr, reshape(ref_mask_lr, {cfg_.low_h, cfg_.low_w, 1})});
  for (size_t n = 0; n < 4; ++n) {
    std::string base = "frame.conv" + std::to_string(n);
    int64_t st = cfg_.frame_strides[n];
    x = relu(add(convolve(x, param(base + ".kernel"), {st, st}, {1, 1}), param(base + ".bias")));
  }
  if (cfg_.no_memory) {
    Tensor h = relu(add(convolve(x, param("frame.memory_conv.kernel"), {1, 1}, {1, 1}),
                        param("frame.memory_conv.bias")));
    if (memory_out) *memory_out = memory;  // stateless replacement passes states through
    return h;
  }
  if (memory.hidden.shape() != initial_memory().hidden.shape()) {
    throw DimensionError("memory state " + shape_str(memory.hidden.shape()) +
                         " does not match the recurrent layer resolution");
  }
  GateKernels gates{param("frame.memory.kernel"), param("frame.memory.bias")};
  auto [h, next] = recurrent_cell_step(x, memory, gates);
  if (memory_out) *memory_out = next;
  return h;
}

CapsuleGrid CapsuleVosModel::frame_caps_from(const Tensor& feats) const {
  Tensor c = add(convolve(feats, param("frame.caps.kernel"), {2, 2}, {1, 1}),
                 param("frame.caps.bias"));
  CapsuleGrid g = caps_from_features(c, cfg_.frame_types);
  return CapsuleGrid{tile_first(g.poses, cfg_.clip_length),
                     tile_first(g.activations, cfg_.clip_length)};
}

std::pair<CapsuleGrid, MemoryState> CapsuleVosModel::frame_branch_forward(
    const Tensor& frame_lr, const Tensor& ref_mask_lr, const MemoryState& memory) const {
  MemoryState next;
  Tensor feats = frame_features(frame_lr, ref_mask_lr, memory, &next);
  return {frame_caps_from(feats), next};
}

RoutingConfig CapsuleVosModel::routing_config(const std::string& prefix, int64_t out_types) const {
  RoutingConfig rc = RoutingConfig::with_types(out_types);
  rc.beta_a = param(prefix + ".beta_a");
  rc.beta_u = param(prefix + ".beta_u");
  return rc;
}

Tensor CapsuleVosModel::capsule_stage(const CapsuleGrid& video, const CapsuleGrid& frame) const {
  int64_t T = cfg_.clip_length;
  int64_t gh = cfg_.caps_grid_h(), gw = cfg_.caps_grid_w();
  int64_t L = T * gh * gw;
  int64_t I = cfg_.video_types, K = cfg_.frame_types;
  int64_t J = cfg_.conditioned_types, J2 = cfg_.conv_caps_types;

  // votes are pooled over a receptive field before every routing operation
  auto pool = [&](const Tensor& flat, const std::vector<int64_t>& win,
                  const std::vector<int64_t>& pad) {
    Shape orig = flat.shape();
    int64_t rest = flat.size() / L;
    Tensor g = reshape(flat, {T, gh, gw, rest});
    Tensor p = avg_pool(g, win, {1, 1, 1}, pad);
    return reshape(p, orig);
  };
  const std::vector<int64_t> cond_win{1, 3, 3}, cond_pad{0, 1, 1};
  const std::vector<int64_t> conv_win{3, 3, 3}, conv_pad{1, 1, 1};

  Tensor vposes = reshape(video.poses, {L, I, 16});
  Tensor vacts = reshape(video.activations, {L, I});
  Tensor fposes = reshape(frame.poses, {L, K, 16});
  Tensor facts = reshape(frame.activations, {L, K});

  Tensor cond_poses, cond_acts;
  if (cfg_.concat_routing) {
    Tensor cat_poses = reshape(
        concat_last({reshape(vposes, {L, I * 16}), reshape(fposes, {L, K * 16})}), {L, I + K, 16});
    Tensor cat_acts = concat_last({vacts, facts});
    Tensor votes = pool(pose_transform(cat_poses, param("cond.w_concat")), cond_win, cond_pad);
    Tensor acts = pool(cat_acts, cond_win, cond_pad);
    auto [p, a] = em_routing(acts, votes, routing_config("cond", J));
    cond_poses = p;
    cond_acts = a;
  } else {
    AttentionVotes av;
    av.v_key = pool(pose_transform(vposes, param("cond.w_key")), cond_win, cond_pad);
    av.v_value = pool(pose_transform(vposes, param("cond.w_value")), cond_win, cond_pad);
    av.v_query = pool(pose_transform(fposes, param("cond.w_query")), cond_win, cond_pad);
    av.a_video = pool(vacts, cond_win, cond_pad);
    av.a_frame = pool(facts, cond_win, cond_pad);
    auto [p, a] = attention_route_votes(av, routing_config("cond", J));
    cond_poses = p;
    cond_acts = a;
  }

  Tensor votes2 = pool(pose_transform(cond_poses, param("convcaps.w")), conv_win, conv_pad);
  Tensor acts2 = pool(cond_acts, conv_win, conv_pad);
  auto [caps2_poses, caps2_acts] = em_routing(acts2, votes2, routing_config("convcaps", J2));
  (void)caps2_acts;  // the decoder consumes flattened poses

  return concat_last({reshape(caps2_poses, {T, gh, gw, J2 * 16}),
                      reshape(video.poses, {T, gh, gw, I * 16}),
                      reshape(cond_poses, {T, gh, gw, J * 16})});
}

Tensor CapsuleVosModel::fully_conv_stage(const Tensor& video_feats, const Tensor& frame_feats) const {
  Tensor v = relu(add(convolve(video_feats, param("fc.video.kernel"), {1, 2, 2}, {1, 1, 1}),
                      param("fc.video.bias")));
  Tensor f = relu(add(convolve(frame_feats, param("fc.frame.kernel"), {2, 2}, {1, 1}),
                      param("fc.frame.bias")));
  Tensor x = concat_last({v, tile_first(f, cfg_.clip_length)});
  x = relu(add(convolve(x, param("fc.mix1.kernel"), {1, 1, 1}, {1, 1, 1}), param("fc.mix1.bias")));
  return relu(add(convolve(x, param("fc.mix2.kernel"), {1, 1, 1}, {0, 0, 0}), param("fc.mix2.bias")));
}

Tensor CapsuleVosModel::decode(const Tensor& features) const {
  Tensor x = relu(add(convolve(features, param("decoder.compress.kernel"), {1, 1, 1}, {0, 0, 0}),
                      param("decoder.compress.bias")));
  x = relu(add(transpose_convolve(x, param("decoder.up1.kernel"), {1, 2, 2}), param("decoder.up1.bias")));
  x = relu(add(transpose_convolve(x, param("decoder.up2.kernel"), {1, 2, 2}), param("decoder.up2.bias")));
  x = relu(add(transpose_convolve(x, param("decoder.up3.kernel"), {1, 2, 2}), param("decoder.up3.bias")));
  Tensor logits = add(convolve(x, param("decoder.head.kernel"), {1, 1, 1}, {0, 0, 0}),
                      param("decoder.head.bias"));
  return sigmoid(reshape(logits, {cfg_.clip_length, cfg_.low_h, cfg_.low_w}));
}

Tensor CapsuleVosModel::condition_and_decode(const CapsuleGrid& video, const CapsuleGrid& frame) const {
  return decode(capsule_stage(video, frame));
}

Tensor CapsuleVosModel::seg_forward(const Tensor& clip_lr, const Tensor& frame_lr,
                                    const Tensor& ref_mask_lr, const MemoryState& memory,
                                    MemoryState* memory_out) const {
  if (cfg_.fully_conv) {
    Tensor vf = video_features(clip_lr);
    Tensor ff = frame_features(frame_lr, ref_mask_lr, memory, memory_out);
    return decode(fully_conv_stage(vf, ff));
  }
  CapsuleGrid video = video_branch_forward(clip_lr);
  Tensor ff = frame_features(frame_lr, ref_mask_lr, memory, memory_out);
  CapsuleGrid frame = frame_caps_from(ff);
  return condition_and_decode(video, frame);
}

CapsuleVosModel::ZoomResult CapsuleVosModel::zoom_predict(const Tensor& frame_hr,
                                                          const Tensor& mask_hr,
                                                          const ZoomState& state) const {
  if (frame_hr.shape() != Shape{cfg_.high_h, cfg_.high_w, 3} ||
      mask_hr.shape() != Shape{cfg_.high_h, cfg_.high_w}) {
    throw DimensionError("zoom_predict expects high-resolution frame [H,W,3] and mask [H,W]");
  }
  ZoomResult out;
  out.state = state;
  int64_t cr = cfg_.high_h / 2, cc = cfg_.high_w / 2;
  bool has_object = mask_centroid(mask_hr, cr, cc);

  if (cfg_.no_zoom) {
    out.box = BoundingBox{cfg_.high_h / 2, cfg_.high_w / 2, cfg_.high_h, cfg_.high_w};
    return out;
  }
  if (cfg_.hc_zoom) {
    // hand-crafted rule: covering box of the reference mask with a fixed margin
    if (!has_object) {
      out.box = BoundingBox{cfg_.high_h / 2, cfg_.high_w / 2, cfg_.high_h, cfg_.high_w};
      return out;
    }
    Tensor one = reshape(mask_hr.detach(), {1, cfg_.high_h, cfg_.high_w});
    BoundingBox cover = ground_truth_bbox(one, cfg_.high_h, cfg_.high_w);
    cover.h = std::clamp<int64_t>(cover.h * 2, cfg_.min_box_h, cfg_.high_h);
    cover.w = std::clamp<int64_t>(cover.w * 2, cfg_.min_box_w, cfg_.high_w);
    out.box = cover;
    return out;
  }

  Tensor x = concat_last({frame_hr, reshape(mask_hr, {cfg_.high_h, cfg_.high_w, 1})});
  for (size_t n = 0; n < cfg_.zoom_channels.size(); ++n) {
    std::string base = "zoom.conv" + std::to_string(n);
    x = relu(add(convolve(x, param(base + ".kernel"), {2, 2}, {1, 1}), param(base + ".bias")));
  }
  Tensor flat = reshape(x, {1, x.size()});
  int64_t hid = cfg_.zoom_lstm_hidden;
  Tensor z = add(add(matmul(flat, param("zoom.lstm.wx")), matmul(state.hidden, param("zoom.lstm.wh"))),
                 param("zoom.lstm.bias"));
  Tensor gi = sigmoid(slice_last(z, 0, hid));
  Tensor gf = sigmoid(slice_last(z, hid, 2 * hid));
  Tensor go = sigmoid(slice_last(z, 2 * hid, 3 * hid));
  Tensor gc = tanh(slice_last(z, 3 * hid, 4 * hid));
  Tensor cell = add(mul(gf, state.cell), mul(gi, gc));
  Tensor hidden = mul(go, tanh(cell));
  out.state = ZoomState{hidden, cell};
  out.network_ran = true;

  Tensor zo = add(matmul(hidden, param("zoom.fc.w")), param("zoom.fc.bias"));
  out.pred_h = mul_scalar(sigmoid(slice_last(zo, 0, 1)), static_cast<double>(cfg_.high_h));
  out.pred_w = mul_scalar(sigmoid(slice_last(zo, 1, 2)), static_cast<double>(cfg_.high_w));

  if (!has_object) {
    out.box = BoundingBox{cfg_.high_h / 2, cfg_.high_w / 2, cfg_.high_h, cfg_.high_w};
  } else {
    // crop geometry is integer and detached; the box loss carries the gradient
    int64_t bh = std::clamp<int64_t>(std::llround(out.pred_h.item()), cfg_.min_box_h, cfg_.high_h);
    int64_t bw = std::clamp<int64_t>(std::llround(out.pred_w.item()), cfg_.min_box_w, cfg_.high_w);
    out.box = BoundingBox{cr, cc, bh, bw};
  }
  return out;
}

CapsuleVosModel::TrainOutput CapsuleVosModel::forward_train(const ClipSample& sample,
                                                            const Tensor& ref_mask_hr,
                                                            const MemoryState& memory,
                                                            const ZoomState& zoom) const {
  TrainOutput out;
  ZoomResult zr = zoom_predict(frame_slice(sample.frames, 0), ref_mask_hr, zoom);
  if (cfg_.hc_zoom) {
    // training-side hand-crafted box: ground-truth clip cover with the margin
    const double* m = sample.masks.data();
    bool first_nonempty = false;
    for (int64_t i = 0; i < cfg_.high_h * cfg_.high_w && !first_nonempty; ++i) {
      first_nonempty = m[i] > 0.5;
    }
    if (first_nonempty) {
      BoundingBox cover = ground_truth_bbox(sample.masks, cfg_.high_h, cfg_.high_w);
      cover.h = std::clamp<int64_t>(cover.h * 2, cfg_.min_box_h, cfg_.high_h);
      cover.w = std::clamp<int64_t>(cover.w * 2, cfg_.min_box_w, cfg_.high_w);
      zr.box = cover;
    }
  }
  out.box = zr.box;
  out.zoom = zr.state;

  Tensor clip_lr = crop_and_resize(sample.frames, zr.box, cfg_.low_h, cfg_.low_w);
  Tensor ref_lr = crop_and_resize_mask(ref_mask_hr, zr.box, cfg_.low_h, cfg_.low_w);
  out.target_lr = crop_and_resize_mask(sample.masks, zr.box, cfg_.low_h, cfg_.low_w);

  MemoryState mem_out = memory;
  out.pred_lr = seg_forward(clip_lr, frame_slice(clip_lr, 0), ref_lr, memory, &mem_out);
  out.memory = mem_out;

  out.loss_seg = bce_loss(out.pred_lr, out.target_lr);
  out.loss_dice = dice_loss(out.pred_lr, out.target_lr);
  out.loss_box = zr.network_ran
                     ? bbox_loss(static_cast<double>(sample.gt_box.h),
                                 static_cast<double>(sample.gt_box.w), zr.pred_h, zr.pred_w)
                     : Tensor::scalar(0.0);
  out.loss_total = total_loss(out.loss_seg, out.loss_dice, out.loss_box);
  return out;
}

CapsuleVosModel::InferOutput CapsuleVosModel::model_forward(const Tensor& clip_hr,
                                                            const Tensor& ref_mask_hr,
                                                            const MemoryState& memory,
                                                            const ZoomState& zoom) const {
  const Shape& s = clip_hr.shape();
  if (s.size() != 4 || s[0] != cfg_.clip_length || s[1] != cfg_.high_h || s[2] != cfg_.high_w ||
      s[3] != 3) {
    throw DimensionError("model_forward expects a high-resolution clip [T,H,W,3], got " +
                         shape_str(s));
  }
  InferOutput out;
  ZoomResult zr = zoom_predict(frame_slice(clip_hr, 0), ref_mask_hr, zoom);
  out.box = zr.box;
  out.zoom = zr.state;

  Tensor clip_lr = crop_and_resize(clip_hr, zr.box, cfg_.low_h, cfg_.low_w);
  Tensor ref_lr = crop_and_resize_mask(ref_mask_hr, zr.box, cfg_.low_h, cfg_.low_w);
  MemoryState mem_out = memory;
  Tensor pred = seg_forward(clip_lr, frame_slice(clip_lr, 0), ref_lr, memory, &mem_out);
  out.memory = mem_out;

  out.masks_hr = Tensor::zeros({cfg_.clip_length, cfg_.high_h, cfg_.high_w});
  for (int64_t t = 0; t < cfg_.clip_length; ++t) {
    Tensor full = paste_into_frame(frame_slice(pred, t), zr.box, cfg_.high_h, cfg_.high_w);
    std::memcpy(out.masks_hr.data() + t * cfg_.high_h * cfg_.high_w, full.data(),
                static_cast<size_t>(full.size()) * sizeof(double));
  }
  return out;
}

}  // namespace cvos
