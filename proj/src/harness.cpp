#include "cvos/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "cvos/checkpoint.hpp"
#include "cvos/rng.hpp"

namespace cvos {

namespace fs = std::filesystem;
using nlohmann::json;

void RunConfig::validate() const {
  static const char* kAblations[] = {"none",    "no_memory",      "no_zoom",
                                     "hc_zoom", "concat_routing", "fully_conv"};
  bool known = false;
  for (const char* a : kAblations) known = known || ablation == a;
  if (!known) throw ConfigError("unknown ablation: " + ablation);
  if (preset != "desk" && preset != "paper") throw ConfigError("unknown preset: " + preset);
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
  ModelConfig mc = preset == "paper" ? ModelConfig::paper() : ModelConfig::desk();
  if (overlap < 0 || overlap > mc.clip_length - 1) {
    throw ConfigError("overlap must lie in [0, clip_length - 1]");
  }
}

ModelConfig RunConfig::model_config() const {
  validate();
  ModelConfig mc = preset == "paper" ? ModelConfig::paper() : ModelConfig::desk();
  if (ablation == "no_memory") mc.no_memory = true;
  if (ablation == "no_zoom") mc.no_zoom = true;
  if (ablation == "hc_zoom") mc.hc_zoom = true;
  if (ablation == "concat_routing") mc.concat_routing = true;
  if (ablation == "fully_conv") mc.fully_conv = true;
  return mc;
}

void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "preset") cfg.preset = value;
  else if (key == "data_dir") cfg.data_dir = value;
  else if (key == "epochs") cfg.epochs = std::stoi(value);
  else if (key == "batch_size") cfg.batch_size = std::stoi(value);
  else if (key == "learning_rate") cfg.learning_rate = std::stod(value);
  else if (key == "overlap") cfg.overlap = std::stoi(value);
  else if (key == "ablation") cfg.ablation = value;
  else if (key == "seed") cfg.seed = std::stoull(value);
  else if (key == "out_dir") cfg.out_dir = value;
  else if (key == "max_steps") cfg.max_steps = std::stoi(value);
  else throw ConfigError("unknown config key: " + key);
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config: " + path);
  RunConfig cfg;
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    size_t a = s.find_first_not_of(" \t\r");
    size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  while (std::getline(is, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + " is not `key = value`");
    }
    apply_config_entry(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  cfg.validate();
  return cfg;
}

// ---- optimizer ----------------------------------------------------------------

Adam::Adam(std::map<std::string, Tensor>& params, double learning_rate)
    : params_(&params), lr_(learning_rate) {
  for (auto& [name, p] : params) {
    slots_[name].m.assign(static_cast<size_t>(p.size()), 0.0);
    slots_[name].v.assign(static_cast<size_t>(p.size()), 0.0);
  }
}

void Adam::step() {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++t_;
  double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (auto& [name, p] : *params_) {
    Slot& s = slots_[name];
    const auto& impl = p.impl();
    const double* g = impl->grad.size() == impl->values.size() ? impl->grad.data() : nullptr;
    double* w = p.data();
    for (int64_t i = 0; i < p.size(); ++i) {
      double gi = g ? g[i] : 0.0;
      s.m[static_cast<size_t>(i)] = b1 * s.m[static_cast<size_t>(i)] + (1.0 - b1) * gi;
      s.v[static_cast<size_t>(i)] = b2 * s.v[static_cast<size_t>(i)] + (1.0 - b2) * gi * gi;
      double mhat = s.m[static_cast<size_t>(i)] / c1;
      double vhat = s.v[static_cast<size_t>(i)] / c2;
      w[i] -= lr_ * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& [name, p] : *params_) p.zero_grad();
}

// ---- inference ----------------------------------------------------------------

Tensor chain_inference(const CapsuleVosModel& model, const Tensor& frames,
                       const Tensor& first_mask, int64_t overlap) {
  const ModelConfig& mc = model.config();
  const Shape& s = frames.shape();
  if (s.size() != 4 || s[1] != mc.high_h || s[2] != mc.high_w || s[3] != 3) {
    throw DimensionError("chain_inference expects frames [T,H,W,3] at the high resolution");
  }
  int64_t video_len = s[0];
  auto starts = schedule_clips(video_len, mc.clip_length, overlap);
  Tensor out = Tensor::zeros({video_len, mc.high_h, mc.high_w});
  MemoryState memory = model.initial_memory();
  ZoomState zoom = model.initial_zoom_state();
  int64_t prev_start = -1;
  int64_t frame_px = mc.high_h * mc.high_w;
  for (int64_t start : starts) {
    Tensor ref;
    if (start == 0) {
      ref = binarize(first_mask);
    } else {
      // prediction at the clip's start frame; with zero overlap fall back to
      // the last frame the previous clip covered
      int64_t ref_frame = std::min(start, prev_start + mc.clip_length - 1);
      ref = binarize(frame_slice(out, ref_frame));
    }
    Tensor clip = Tensor::zeros({mc.clip_length, mc.high_h, mc.high_w, 3});
    std::memcpy(clip.data(), frames.data() + start * frame_px * 3,
                static_cast<size_t>(clip.size()) * sizeof(double));
    auto io = model.model_forward(clip, ref, memory, zoom);
    std::memcpy(out.data() + start * frame_px, io.masks_hr.data(),
                static_cast<size_t>(io.masks_hr.size()) * sizeof(double));
    memory = io.memory;
    zoom = io.zoom;
    prev_start = start;
  }
  return out;
}

// ---- evaluation ---------------------------------------------------------------

namespace {

struct Episode {
  std::string key;
  std::vector<ManifestEntry> clips;  // contiguous t0 prefix: 0, 8, 16, ...
};

std::vector<Episode> group_episodes(const std::vector<ManifestEntry>& entries) {
  std::map<std::string, std::vector<ManifestEntry>> by_key;
  for (const ManifestEntry& e : entries) {
    by_key[e.scenario + "_" + std::to_string(e.seed)].push_back(e);
  }
  std::vector<Episode> out;
  for (auto& [key, clips] : by_key) {
    std::sort(clips.begin(), clips.end(),
              [](const ManifestEntry& a, const ManifestEntry& b) { return a.t0 < b.t0; });
    Episode ep;
    ep.key = key;
    int expected = 0;
    for (const ManifestEntry& c : clips) {
      if (c.t0 != expected) break;  // keep the contiguous prefix only
      ep.clips.push_back(c);
      expected += static_cast<int>(c.frame_paths.size());
    }
    if (!ep.clips.empty()) out.push_back(std::move(ep));
  }
  return out;
}

std::vector<bool> post_occlusion_flags(const std::vector<bool>& empty_gt) {
  std::vector<bool> post(empty_gt.size(), false);
  bool seen_nonempty = false, in_gap = false, completed_gap = false;
  for (size_t t = 0; t < empty_gt.size(); ++t) {
    if (!empty_gt[t] && in_gap) {
      in_gap = false;
      completed_gap = true;
    }
    if (empty_gt[t] && seen_nonempty) in_gap = true;
    post[t] = completed_gap && !empty_gt[t];
    seen_nonempty = seen_nonempty || !empty_gt[t];
  }
  return post;
}

}  // namespace

double EvalReport::post_occlusion_mean_j() const {
  double sum = 0;
  int64_t n = 0;
  for (const VideoDetail& v : videos) {
    for (size_t t = 0; t < v.frame_j.size(); ++t) {
      if (v.post_occlusion[t]) {
        sum += v.frame_j[t];
        ++n;
      }
    }
  }
  return n == 0 ? -1.0 : sum / static_cast<double>(n);
}

std::string EvalReport::to_json() const {
  json per = json::array();
  for (const EvalClip& c : per_clip) {
    per.push_back(json{{"clip_id", c.clip_id}, {"j", c.j}, {"f", c.f}});
  }
  json j{{"mean_j", mean_j},
         {"j_recall", j_recall},
         {"mean_f", mean_f},
         {"f_recall", f_recall},
         {"frames_per_second", frames_per_second},
         {"per_clip", per}};
  return j.dump(1);
}

EvalReport evaluate_model(const CapsuleVosModel& model, const std::vector<ManifestEntry>& entries,
                          int64_t overlap) {
  const ModelConfig& mc = model.config();
  EvalReport report;
  int64_t frames_done = 0, frames_over_half_j = 0, frames_over_half_f = 0, total_frames = 0;
  double sum_fj = 0;
  (void)sum_fj;
  auto t_start = std::chrono::steady_clock::now();

  for (const Episode& ep : group_episodes(entries)) {
    int64_t video_len = 0;
    for (const ManifestEntry& c : ep.clips) video_len += static_cast<int64_t>(c.frame_paths.size());
    Tensor frames = Tensor::zeros({video_len, mc.high_h, mc.high_w, 3});
    Tensor gt = Tensor::zeros({video_len, mc.high_h, mc.high_w});
    int64_t frame_px = mc.high_h * mc.high_w;
    int64_t t = 0;
    for (const ManifestEntry& c : ep.clips) {
      ClipSample s = load_clip(c);
      std::memcpy(frames.data() + t * frame_px * 3, s.frames.data(),
                  static_cast<size_t>(s.frames.size()) * sizeof(double));
      std::memcpy(gt.data() + t * frame_px, s.masks.data(),
                  static_cast<size_t>(s.masks.size()) * sizeof(double));
      t += s.masks.extent(0);
    }
    Tensor probs = chain_inference(model, frames, frame_slice(gt, 0), overlap);
    frames_done += video_len;

    EvalReport::VideoDetail detail;
    detail.key = ep.key;
    std::vector<bool> empty_gt(static_cast<size_t>(video_len), false);
    std::vector<double> frame_f(static_cast<size_t>(video_len), 0.0);
    for (int64_t k = 0; k < video_len; ++k) {
      Tensor pk = binarize(frame_slice(probs, k));
      Tensor gk = frame_slice(gt, k);
      double jv = region_similarity_J(pk, gk);
      double fv = contour_accuracy_F(pk, gk, 1.0);
      detail.frame_j.push_back(jv);
      frame_f[static_cast<size_t>(k)] = fv;
      bool empty = true;
      const double* gp = gk.data();
      for (int64_t i = 0; i < gk.size() && empty; ++i) empty = gp[i] <= 0.5;
      empty_gt[static_cast<size_t>(k)] = empty;
      ++total_frames;
      frames_over_half_j += jv > 0.5;
      frames_over_half_f += fv > 0.5;
    }
    detail.post_occlusion = post_occlusion_flags(empty_gt);

    for (const ManifestEntry& c : ep.clips) {
      double cj = 0, cf = 0;
      int64_t n = static_cast<int64_t>(c.frame_paths.size());
      for (int64_t k = 0; k < n; ++k) {
        cj += detail.frame_j[static_cast<size_t>(c.t0 + k)];
        cf += frame_f[static_cast<size_t>(c.t0 + k)];
      }
      report.per_clip.push_back(EvalClip{c.clip_id, cj / static_cast<double>(n),
                                         cf / static_cast<double>(n)});
    }
    report.videos.push_back(std::move(detail));
  }

  auto t_end = std::chrono::steady_clock::now();
  double seconds = std::chrono::duration<double>(t_end - t_start).count();
  report.frames_per_second = seconds > 0 ? static_cast<double>(frames_done) / seconds : 0.0;
  if (!report.per_clip.empty()) {
    double sj = 0, sf = 0;
    for (const EvalClip& c : report.per_clip) {
      sj += c.j;
      sf += c.f;
    }
    report.mean_j = sj / static_cast<double>(report.per_clip.size());
    report.mean_f = sf / static_cast<double>(report.per_clip.size());
  }
  if (total_frames > 0) {
    report.j_recall = static_cast<double>(frames_over_half_j) / static_cast<double>(total_frames);
    report.f_recall = static_cast<double>(frames_over_half_f) / static_cast<double>(total_frames);
  }
  return report;
}

EvalReport evaluate(const RunConfig& cfg, const std::string& checkpoint_path,
                    const std::string& split) {
  CapsuleVosModel model(cfg.model_config(), cfg.seed);
  model.load_params(load_checkpoint(checkpoint_path));
  auto entries = load_manifest((fs::path(cfg.data_dir) / (split + "_manifest.json")).string());
  return evaluate_model(model, entries, cfg.overlap);
}

// ---- training -------------------------------------------------------------------

namespace {

// occlusion-style scenarios train on full episode chains so the memory matters;
// everything else trains on independent clips
std::vector<std::vector<ManifestEntry>> train_units(const std::vector<ManifestEntry>& entries) {
  std::vector<std::vector<ManifestEntry>> units;
  std::map<std::string, std::vector<ManifestEntry>> chains;
  for (const ManifestEntry& e : entries) {
    if (e.scenario == "occlusion" || e.scenario == "exit_reenter") {
      chains[e.scenario + "_" + std::to_string(e.seed)].push_back(e);
    } else {
      units.push_back({e});
    }
  }
  for (auto& [key, clips] : chains) {
    std::sort(clips.begin(), clips.end(),
              [](const ManifestEntry& a, const ManifestEntry& b) { return a.t0 < b.t0; });
    units.push_back(clips);
  }
  // deterministic unit order before shuffling
  std::sort(units.begin(), units.end(), [](const auto& a, const auto& b) {
    return a.front().clip_id < b.front().clip_id;
  });
  return units;
}

void check_finite(double v, const char* stage, int64_t step) {
  if (!std::isfinite(v)) {
    throw Error(std::string("non-finite loss from stage `") + stage + "` at step " +
                std::to_string(step));
  }
}

}  // namespace

TrainResult train(const RunConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  CapsuleVosModel model(cfg.model_config(), cfg.seed);
  auto train_entries =
      load_manifest((fs::path(cfg.data_dir) / "train_manifest.json").string());
  auto val_entries = load_manifest((fs::path(cfg.data_dir) / "val_manifest.json").string());
  auto units = train_units(train_entries);
  if (units.empty()) throw IoError("no training clips in " + cfg.data_dir);

  Adam opt(model.params(), cfg.learning_rate);
  Rng shuffle_rng(cfg.seed ^ 0xA5A5A5A5ULL);
  TrainResult result;
  result.log_path = (fs::path(cfg.out_dir) / "train_log.tsv").string();
  std::ofstream log(result.log_path);
  if (!log) throw IoError("cannot write " + result.log_path);
  log << "epoch\tL_s\tL_D\tL_r\tL\tval_J\n";

  result.best_checkpoint = (fs::path(cfg.out_dir) / "best.ckpt").string();
  result.last_checkpoint = (fs::path(cfg.out_dir) / "last.ckpt").string();
  result.best_val_j = -1.0;

  int64_t step = 0;
  bool stopped = false;
  for (int epoch = 0; epoch < cfg.epochs && !stopped; ++epoch) {
    // deterministic shuffle
    std::vector<size_t> order(units.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (size_t i = order.size(); i > 1; --i) {
      size_t k = static_cast<size_t>(shuffle_rng.uniform_int(0, static_cast<int64_t>(i) - 1));
      std::swap(order[i - 1], order[k]);
    }

    double ep_ls = 0, ep_ld = 0, ep_lr = 0, ep_l = 0;
    int64_t ep_steps = 0;
    for (size_t pos = 0; pos < order.size() && !stopped; pos += static_cast<size_t>(cfg.batch_size)) {
      Tape tape;
      Tensor loss;
      double ls = 0, ld = 0, lr = 0;
      int clip_count = 0;
      {
        TapeScope scope(tape);
        Tensor acc = Tensor::scalar(0.0);
        for (size_t b = pos; b < std::min(pos + static_cast<size_t>(cfg.batch_size), order.size());
             ++b) {
          const auto& unit = units[order[b]];
          MemoryState memory = model.initial_memory();
          ZoomState zoom = model.initial_zoom_state();
          for (const ManifestEntry& entry : unit) {
            ClipSample sample = load_clip(entry);
            auto out = model.forward_train(sample, sample.ref_mask, memory, zoom);
            memory = out.memory;
            zoom = out.zoom;
            acc = add(acc, out.loss_total);
            ls += out.loss_seg.item();
            ld += out.loss_dice.item();
            lr += out.loss_box.item();
            ++clip_count;
          }
        }
        loss = mul_scalar(acc, 1.0 / static_cast<double>(clip_count));
      }
      ++step;
      check_finite(ls, "segmentation bce", step);
      check_finite(ld, "segmentation dice", step);
      check_finite(lr, "zoom box regression", step);
      double lval = loss.item();
      check_finite(lval, "total", step);
      tape.backward(loss);
      opt.step();
      opt.zero_grad();
      result.loss_history.push_back(lval);
      ep_ls += ls / clip_count;
      ep_ld += ld / clip_count;
      ep_lr += lr / clip_count;
      ep_l += lval;
      ++ep_steps;
      if (cfg.max_steps > 0 && step >= cfg.max_steps) stopped = true;
    }

    EvalReport val = evaluate_model(model, val_entries, cfg.overlap);
    double denom = ep_steps > 0 ? static_cast<double>(ep_steps) : 1.0;
    char line[256];
    std::snprintf(line, sizeof(line), "%d\t%.6f\t%.6f\t%.6f\t%.6f\t%.6f", epoch, ep_ls / denom,
                  ep_ld / denom, ep_lr / denom, ep_l / denom, val.mean_j);
    log << line << "\n";
    log.flush();
    std::cout << line << std::endl;
    if (val.mean_j > result.best_val_j) {
      result.best_val_j = val.mean_j;
      save_checkpoint(result.best_checkpoint, model.params());
    }
  }
  save_checkpoint(result.last_checkpoint, model.params());
  return result;
}

// ---- ablation study ---------------------------------------------------------------

bool AblationOutcome::zoom_margins_positive() const {
  if (rows.empty()) return false;
  for (const SeedRow& r : rows) {
    if (!(r.full_small_j > r.nozoom_small_j)) return false;
  }
  return true;
}

bool AblationOutcome::memory_margins_positive() const {
  if (rows.empty()) return false;
  for (const SeedRow& r : rows) {
    if (!(r.full_post_j > r.nomem_post_j)) return false;
  }
  return true;
}

std::string AblationOutcome::to_json() const {
  json rows_json = json::array();
  for (const SeedRow& r : rows) {
    rows_json.push_back(json{{"seed", r.seed},
                             {"full_small_object_j", r.full_small_j},
                             {"no_zoom_small_object_j", r.nozoom_small_j},
                             {"full_post_occlusion_j", r.full_post_j},
                             {"no_memory_post_occlusion_j", r.nomem_post_j}});
  }
  json j{{"rows", rows_json},
         {"zoom_margins_positive", zoom_margins_positive()},
         {"memory_margins_positive", memory_margins_positive()}};
  return j.dump(1);
}

AblationOutcome run_ablation_study(const std::string& work_dir, const std::vector<uint64_t>& seeds,
                                   int epochs, int n_train, int n_val) {
  fs::create_directories(work_dir);
  std::string small_dir = (fs::path(work_dir) / "data_small").string();
  std::string occ_dir = (fs::path(work_dir) / "data_occlusion").string();
  if (!fs::exists(fs::path(small_dir) / "train_manifest.json")) {
    generate_dataset(small_dir, n_train, n_val, {{Scenario::small_object, 1.0}}, 404,
                     ModelConfig::desk().high_h, ModelConfig::desk().high_w);
  }
  if (!fs::exists(fs::path(occ_dir) / "train_manifest.json")) {
    generate_dataset(occ_dir, n_train, n_val,
                     {{Scenario::occlusion, 0.6}, {Scenario::exit_reenter, 0.4}}, 505,
                     ModelConfig::desk().high_h, ModelConfig::desk().high_w);
  }

  AblationOutcome outcome;
  for (uint64_t seed : seeds) {
    AblationOutcome::SeedRow row;
    row.seed = seed;
    auto run_variant = [&](const std::string& data_dir, const std::string& ablation,
                           const std::string& tag) {
      RunConfig rc;
      rc.data_dir = data_dir;
      rc.ablation = ablation;
      rc.seed = seed;
      rc.epochs = epochs;
      rc.out_dir = (fs::path(work_dir) / ("run_" + tag + "_" + std::to_string(seed))).string();
      TrainResult tr = train(rc);
      return evaluate(rc, tr.best_checkpoint, "val");
    };
    row.full_small_j = run_variant(small_dir, "none", "full_small").mean_j;
    row.nozoom_small_j = run_variant(small_dir, "no_zoom", "nozoom_small").mean_j;
    row.full_post_j = run_variant(occ_dir, "none", "full_occ").post_occlusion_mean_j();
    row.nomem_post_j = run_variant(occ_dir, "no_memory", "nomem_occ").post_occlusion_mean_j();
    outcome.rows.push_back(row);
  }
  return outcome;
}

}  // namespace cvos
