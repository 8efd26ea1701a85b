#pragma once

#include <map>
#include <string>
#include <vector>

#include "cvos/ops.hpp"
#include "cvos/routing.hpp"
#include "cvos/tensor.hpp"

namespace cvos {

// Integer pixel box, centered placement clamped inside the frame.
struct BoundingBox {
  int64_t center_r = 0;
  int64_t center_c = 0;
  int64_t h = 0;
  int64_t w = 0;

  int64_t row0(int64_t frame_h) const;
  int64_t col0(int64_t frame_w) const;
  bool covers(int64_t r, int64_t c, int64_t frame_h, int64_t frame_w) const;
};

struct ModelConfig {
  std::string preset = "desk";
  int64_t clip_length = 8;
  int64_t low_h = 32, low_w = 56;
  int64_t high_h = 128, high_w = 224;
  std::vector<int64_t> video_channels{8, 16, 16, 32, 32, 64};
  std::vector<int64_t> video_spatial_strides{1, 2, 1, 2, 1, 1};
  std::vector<int64_t> frame_channels{4, 8, 16, 16};
  std::vector<int64_t> frame_strides{2, 2, 1, 1};
  int64_t memory_channels = 16;
  int64_t video_types = 6;
  int64_t frame_types = 4;
  int64_t conditioned_types = 8;
  int64_t conv_caps_types = 8;
  std::vector<int64_t> decoder_channels{48, 24, 12, 6};
  std::vector<int64_t> zoom_channels{4, 8, 16, 16, 16};
  int64_t zoom_lstm_hidden = 32;
  int64_t min_box_h = 16, min_box_w = 28;

  // ablation toggles; at most one active
  bool no_memory = false;
  bool no_zoom = false;
  bool hc_zoom = false;
  bool concat_routing = false;
  bool fully_conv = false;

  static ModelConfig desk();
  static ModelConfig paper();
  void validate() const;

  int64_t caps_grid_h() const;  // capsule grid spatial extents
  int64_t caps_grid_w() const;
};

struct ClipSample {
  Tensor frames;    // [T, H, W, 3] in [0,1]
  Tensor masks;     // [T, H, W] binary
  Tensor ref_mask;  // [H, W] binary reference for the first frame
  BoundingBox gt_box;
};

struct ZoomState {
  Tensor hidden;  // [1, hidden]
  Tensor cell;
};

// Smallest centered box covering the foreground of every frame; center is the
// rounded centroid of the first frame's mask.
BoundingBox ground_truth_bbox(const Tensor& masks, int64_t frame_h, int64_t frame_w);

// Axis-aligned crop then bilinear resize (nearest for masks); boxes thinner
// than 2 pixels are expanded before cropping.
Tensor crop_and_resize(const Tensor& clip, const BoundingBox& box, int64_t out_h, int64_t out_w);
Tensor crop_and_resize_mask(const Tensor& mask, const BoundingBox& box, int64_t out_h, int64_t out_w);
// Inverse map: bilinear resize into the box, zeros outside.
Tensor paste_into_frame(const Tensor& pred, const BoundingBox& box, int64_t frame_h, int64_t frame_w);

class CapsuleVosModel {
 public:
  CapsuleVosModel(ModelConfig cfg, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  std::map<std::string, Tensor>& params() { return params_; }
  const std::map<std::string, Tensor>& params() const { return params_; }
  void load_params(const std::map<std::string, Tensor>& values);

  MemoryState initial_memory() const;
  ZoomState initial_zoom_state() const;

  CapsuleGrid video_branch_forward(const Tensor& clip_lr) const;
  std::pair<CapsuleGrid, MemoryState> frame_branch_forward(const Tensor& frame_lr,
                                                           const Tensor& ref_mask_lr,
                                                           const MemoryState& memory) const;
  Tensor condition_and_decode(const CapsuleGrid& video, const CapsuleGrid& frame) const;

  struct ZoomResult {
    BoundingBox box;
    Tensor pred_h;  // [1,1] on tape when the network ran; undefined otherwise
    Tensor pred_w;
    ZoomState state;
    bool network_ran = false;
  };
  ZoomResult zoom_predict(const Tensor& frame_hr, const Tensor& mask_hr, const ZoomState& state) const;

  struct TrainOutput {
    Tensor pred_lr;    // [T, low_h, low_w]
    Tensor target_lr;  // same shape, binary, off the tape
    Tensor loss_seg, loss_dice, loss_box, loss_total;
    BoundingBox box;
    MemoryState memory;
    ZoomState zoom;
  };
  TrainOutput forward_train(const ClipSample& sample, const Tensor& ref_mask_hr,
                            const MemoryState& memory, const ZoomState& zoom) const;

  struct InferOutput {
    Tensor masks_hr;  // [T, H, W] probabilities
    MemoryState memory;
    ZoomState zoom;
    BoundingBox box;
  };
  InferOutput model_forward(const Tensor& clip_hr, const Tensor& ref_mask_hr,
                            const MemoryState& memory, const ZoomState& zoom) const;

 private:
  Tensor param(const std::string& name) const;
  Tensor video_features(const Tensor& clip_lr) const;
  Tensor frame_features(const Tensor& frame_lr, const Tensor& ref_mask_lr,
                        const MemoryState& memory, MemoryState* memory_out) const;
  CapsuleGrid video_caps_from(const Tensor& feats) const;
  CapsuleGrid frame_caps_from(const Tensor& feats) const;  // tiled along time
  RoutingConfig routing_config(const std::string& prefix, int64_t out_types) const;
  Tensor capsule_stage(const CapsuleGrid& video, const CapsuleGrid& frame) const;
  Tensor fully_conv_stage(const Tensor& video_feats, const Tensor& frame_feats) const;
  Tensor decode(const Tensor& features) const;
  Tensor seg_forward(const Tensor& clip_lr, const Tensor& frame_lr, const Tensor& ref_mask_lr,
                     const MemoryState& memory, MemoryState* memory_out) const;

  ModelConfig cfg_;
  std::map<std::string, Tensor> params_;
};

}  // namespace cvos
