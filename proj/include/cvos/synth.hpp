#pragma once

#include <map>
#include <string>
#include <vector>

#include "cvos/model.hpp"
#include "cvos/tensor.hpp"

namespace cvos {

enum class Scenario { plain, small_object, occlusion, exit_reenter };
const char* scenario_name(Scenario s);
Scenario scenario_from_name(const std::string& name);

enum class ShapeKind { disk, rectangle, lshape };

struct Trajectory {
  enum class Kind { linear, sinusoidal, triangle } kind = Kind::linear;
  double y0 = 0, x0 = 0;
  double vy = 0, vx = 0;        // linear / triangle slope
  double amp_y = 0, amp_x = 0;  // sinusoidal amplitude
  double period = 24, phase = 0;
  double peak = 12;  // triangle apex frame

  std::pair<double, double> at(double t) const;  // (y, x)
};

struct FillSpec {
  double intensity = 0.8;
  bool striped = false;
  double intensity2 = 0.5;
  int stripe_period = 4;
};

struct ObjectSpec {
  ShapeKind kind = ShapeKind::disk;
  double size = 8;      // disk radius / rectangle half-height / L-shape arm
  double aspect = 1.0;  // rectangle half-width = size * aspect
  FillSpec fill;
  Trajectory traj;
  bool is_target = false;
};

struct OccluderSpec {
  double y0 = 0, x0 = 0;  // center
  double h = 0, w = 0;
  double intensity = 0.5;
};

// Deterministic scene: everything derives from (scenario, seed, canvas).
struct SceneSpec {
  int64_t canvas_h = 128, canvas_w = 224;
  int episode_length = 24;
  Scenario scenario = Scenario::plain;
  uint64_t seed = 0;
  std::vector<ObjectSpec> objects;  // target drawn last (on top); occluders above all
  std::vector<OccluderSpec> occluders;

  static SceneSpec sample(Scenario scenario, uint64_t seed, int64_t canvas_h, int64_t canvas_w);
};

// Exact rasterization, no anti-aliasing: masks equal the rendered silhouette.
std::pair<Tensor, Tensor> render_frame(const SceneSpec& spec, double t);  // (gray [H,W], mask [H,W])

ClipSample generate_clip(const SceneSpec& spec, int t0, int64_t clip_length = 8);

// ---- dataset on disk --------------------------------------------------------

struct ManifestEntry {
  std::string clip_id;
  std::string scenario;
  uint64_t seed = 0;
  int t0 = 0;
  std::vector<std::string> frame_paths;
  std::vector<std::string> mask_paths;
  BoundingBox gt_box;
};

void write_pgm(const std::string& path, const Tensor& img);  // [H,W] in [0,1]
Tensor read_pgm(const std::string& path);

void generate_dataset(const std::string& dir, int n_train, int n_val,
                      const std::map<Scenario, double>& mix, uint64_t seed, int64_t canvas_h,
                      int64_t canvas_w);
std::vector<ManifestEntry> load_manifest(const std::string& path);
ClipSample load_clip(const ManifestEntry& entry);

}  // namespace cvos
