#pragma once

#include <map>
#include <string>
#include <vector>

#include "cvos/metrics.hpp"
#include "cvos/model.hpp"
#include "cvos/synth.hpp"

namespace cvos {

struct RunConfig {
  std::string preset = "desk";
  std::string data_dir;
  int epochs = 4;
  int batch_size = 2;
  double learning_rate = 1e-4;
  int overlap = 3;
  std::string ablation = "none";  // none|no_memory|no_zoom|hc_zoom|concat_routing|fully_conv
  uint64_t seed = 1;
  std::string out_dir = "run";
  int max_steps = 0;  // optional cap; 0 means no cap

  void validate() const;
  ModelConfig model_config() const;
};

// One `key = value` per line; '#' starts a comment.
RunConfig parse_config_file(const std::string& path);
void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value);

class Adam {
 public:
  Adam(std::map<std::string, Tensor>& params, double learning_rate);
  void step();
  void zero_grad();

 private:
  struct Slot {
    std::vector<double> m, v;
  };
  std::map<std::string, Tensor>* params_;
  std::map<std::string, Slot> slots_;
  double lr_;
  int64_t t_ = 0;
};

// Chained clip-overlap inference over a full video; returns per-frame
// probabilities. The reference mask for each clip is the binarized prediction
// at that clip's start frame from the previous clip (ground truth at frame 0).
Tensor chain_inference(const CapsuleVosModel& model, const Tensor& frames,
                       const Tensor& first_mask, int64_t overlap);

struct EvalClip {
  std::string clip_id;
  double j = 0;
  double f = 0;
};

struct EvalReport {
  std::vector<EvalClip> per_clip;
  double mean_j = 0;
  double j_recall = 0;  // fraction of frames with J > 0.5
  double mean_f = 0;
  double f_recall = 0;
  double frames_per_second = 0;

  struct VideoDetail {
    std::string key;
    std::vector<double> frame_j;
    std::vector<bool> post_occlusion;  // frames after a completed empty-mask window
  };
  std::vector<VideoDetail> videos;

  double post_occlusion_mean_j() const;  // over flagged frames; -1 when none exist
  std::string to_json() const;
};

struct TrainResult {
  std::vector<double> loss_history;  // total loss per optimizer step
  double best_val_j = 0;
  std::string best_checkpoint;
  std::string last_checkpoint;
  std::string log_path;
};

TrainResult train(const RunConfig& cfg);

EvalReport evaluate_model(const CapsuleVosModel& model, const std::vector<ManifestEntry>& entries,
                          int64_t overlap);
EvalReport evaluate(const RunConfig& cfg, const std::string& checkpoint_path,
                    const std::string& split);

// Directional ablation study: zoom margin on small objects, memory margin on
// post-occlusion frames.
struct AblationOutcome {
  struct SeedRow {
    uint64_t seed = 0;
    double full_small_j = 0, nozoom_small_j = 0;
    double full_post_j = 0, nomem_post_j = 0;
  };
  std::vector<SeedRow> rows;
  bool zoom_margins_positive() const;
  bool memory_margins_positive() const;
  std::string to_json() const;
};

AblationOutcome run_ablation_study(const std::string& work_dir, const std::vector<uint64_t>& seeds,
                                   int epochs, int n_train, int n_val);

}  // namespace cvos
