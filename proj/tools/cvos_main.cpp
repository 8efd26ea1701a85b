#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "cvos/checkpoint.hpp"
#include "cvos/gradcheck.hpp"
#include "cvos/harness.hpp"
#include "cvos/metrics.hpp"
#include "cvos/synth.hpp"

namespace fs = std::filesystem;
using namespace cvos;

namespace {

struct CommonOpts {
  std::string config;
  std::string preset;
  std::string ablation;
  std::string data_dir;
  std::string out_dir;
  int overlap = -1;
  int epochs = -1;
  int batch_size = -1;
  double learning_rate = -1;
  int max_steps = -1;
  int64_t seed = -1;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config, "config file, one `key = value` per line");
  cmd->add_option("--preset", o.preset, "model preset")->check(CLI::IsMember({"desk", "paper"}));
  cmd->add_option("--overlap", o.overlap, "clip overlap during chained inference");
  cmd->add_option("--ablation", o.ablation, "ablation toggle")
      ->check(CLI::IsMember({"none", "no_memory", "no_zoom", "hc_zoom", "concat_routing", "fully_conv"}));
  cmd->add_option("--seed", o.seed, "random seed");
  cmd->add_option("--out", o.out_dir, "output directory");
  cmd->add_option("--data", o.data_dir, "dataset directory (gen-data output)");
  cmd->add_option("--epochs", o.epochs, "training epochs");
  cmd->add_option("--batch", o.batch_size, "clips or chains per optimizer step");
  cmd->add_option("--lr", o.learning_rate, "learning rate");
  cmd->add_option("--max-steps", o.max_steps, "cap on optimizer steps (0 = none)");
}

RunConfig resolve_config(const CommonOpts& o) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : parse_config_file(o.config);
  if (!o.preset.empty()) cfg.preset = o.preset;
  if (!o.ablation.empty()) cfg.ablation = o.ablation;
  if (!o.data_dir.empty()) cfg.data_dir = o.data_dir;
  if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
  if (o.overlap >= 0) cfg.overlap = o.overlap;
  if (o.epochs > 0) cfg.epochs = o.epochs;
  if (o.batch_size > 0) cfg.batch_size = o.batch_size;
  if (o.learning_rate > 0) cfg.learning_rate = o.learning_rate;
  if (o.max_steps >= 0) cfg.max_steps = o.max_steps;
  if (o.seed >= 0) cfg.seed = static_cast<uint64_t>(o.seed);
  cfg.validate();
  return cfg;
}

std::map<Scenario, double> parse_mix(const std::string& text) {
  std::map<Scenario, double> mix;
  size_t pos = 0;
  while (pos < text.size()) {
    size_t comma = text.find(',', pos);
    std::string item = text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    size_t eq = item.find('=');
    if (eq == std::string::npos) throw ParameterError("bad --mix entry: " + item);
    mix[scenario_from_name(item.substr(0, eq))] = std::stod(item.substr(eq + 1));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (mix.empty()) throw ParameterError("--mix is empty");
  return mix;
}

int cmd_gen_data(const CommonOpts& o, int n_train, int n_val, const std::string& mix_text) {
  RunConfig cfg = resolve_config(o);
  if (cfg.out_dir.empty()) throw ParameterError("gen-data requires --out");
  ModelConfig mc = cfg.model_config();
  auto mix = parse_mix(mix_text);
  generate_dataset(cfg.out_dir, n_train, n_val, mix, cfg.seed, mc.high_h, mc.high_w);
  std::cout << "wrote " << n_train << " train / " << n_val << " val clips under " << cfg.out_dir
            << std::endl;
  return 0;
}

int cmd_train(const CommonOpts& o) {
  RunConfig cfg = resolve_config(o);
  if (cfg.data_dir.empty()) throw ParameterError("train requires --data or a config data_dir");
  TrainResult tr = train(cfg);
  std::cout << "best val J " << tr.best_val_j << "\n";
  std::cout << "checkpoints: " << tr.best_checkpoint << " , " << tr.last_checkpoint << "\n";
  std::cout << "log: " << tr.log_path << std::endl;
  return 0;
}

int cmd_eval(const CommonOpts& o, const std::string& ckpt, const std::string& split) {
  RunConfig cfg = resolve_config(o);
  if (cfg.data_dir.empty()) throw ParameterError("eval requires --data or a config data_dir");
  EvalReport report = evaluate(cfg, ckpt, split);
  std::string text = report.to_json();
  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    std::ofstream os(fs::path(cfg.out_dir) / "eval_report.json");
    os << text << "\n";
  }
  std::cout << text << std::endl;
  return 0;
}

int cmd_infer(const CommonOpts& o, const std::string& frames_dir, const std::string& mask_path,
              const std::string& ckpt) {
  RunConfig cfg = resolve_config(o);
  if (cfg.out_dir.empty()) throw ParameterError("infer requires --out");
  CapsuleVosModel model(cfg.model_config(), cfg.seed);
  model.load_params(load_checkpoint(ckpt));
  const ModelConfig& mc = model.config();

  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(frames_dir)) {
    if (e.path().extension() == ".pgm") files.push_back(e.path());
  }
  if (files.empty()) throw IoError("no .pgm frames under " + frames_dir);
  std::sort(files.begin(), files.end());

  int64_t raw_len = static_cast<int64_t>(files.size());
  int64_t video_len = std::max<int64_t>(raw_len, mc.clip_length);
  Tensor frames = Tensor::zeros({video_len, mc.high_h, mc.high_w, 3});
  for (int64_t t = 0; t < video_len; ++t) {
    // videos shorter than one clip repeat their final frame
    Tensor gray = read_pgm(files[static_cast<size_t>(std::min(t, raw_len - 1))].string());
    if (gray.shape() != Shape{mc.high_h, mc.high_w}) {
      throw IoError("frame size mismatch: " + files[static_cast<size_t>(t)].string());
    }
    for (int64_t i = 0; i < mc.high_h * mc.high_w; ++i) {
      double v = gray.data()[i];
      frames.data()[(t * mc.high_h * mc.high_w + i) * 3 + 0] = v;
      frames.data()[(t * mc.high_h * mc.high_w + i) * 3 + 1] = v;
      frames.data()[(t * mc.high_h * mc.high_w + i) * 3 + 2] = v;
    }
  }
  Tensor first_mask = read_pgm(mask_path);
  auto starts = schedule_clips(video_len, mc.clip_length, cfg.overlap);
  std::cout << "schedule:";
  for (int64_t s : starts) std::cout << " " << s;
  std::cout << std::endl;

  Tensor probs = chain_inference(model, frames, first_mask, cfg.overlap);
  fs::create_directories(cfg.out_dir);
  for (int64_t t = 0; t < raw_len; ++t) {  // predictions on padding are discarded
    Tensor bin = binarize(frame_slice(probs, t));
    char name[64];
    std::snprintf(name, sizeof(name), "mask_%03lld.pgm", static_cast<long long>(t));
    write_pgm((fs::path(cfg.out_dir) / name).string(), bin);
  }
  std::cout << "wrote " << raw_len << " masks under " << cfg.out_dir << std::endl;
  return 0;
}

int cmd_ablate(const CommonOpts& o, const std::string& seeds_text, int n_train, int n_val) {
  RunConfig cfg = resolve_config(o);
  if (cfg.out_dir.empty()) throw ParameterError("ablate requires --out");
  std::vector<uint64_t> seeds;
  size_t pos = 0;
  while (pos < seeds_text.size()) {
    size_t comma = seeds_text.find(',', pos);
    seeds.push_back(std::stoull(
        seeds_text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos)));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  AblationOutcome outcome = run_ablation_study(cfg.out_dir, seeds, cfg.epochs, n_train, n_val);
  std::string text = outcome.to_json();
  std::ofstream os(fs::path(cfg.out_dir) / "ablation_report.json");
  os << text << "\n";
  std::cout << text << std::endl;
  return 0;
}

int cmd_check_grads(const CommonOpts& o, bool skip_model) {
  uint64_t seed = o.seed >= 0 ? static_cast<uint64_t>(o.seed) : 11;
  GradCheckReport report = run_gradient_checks(!skip_model, seed);
  for (const GradCheckEntry& e : report.entries) {
    std::printf("[%s] %-44s err=%.3e tol=%.0e\n", e.pass ? "PASS" : "FAIL", e.name.c_str(), e.error,
                e.tolerance);
  }
  std::printf("%zu checks, %s\n", report.entries.size(), report.all_pass() ? "all passed" : "FAILURES");
  return report.all_pass() ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"capsule-routing video object segmentation harness"};
  app.require_subcommand(1);

  CommonOpts gen_o, train_o, eval_o, infer_o, ablate_o, grads_o;
  int gen_train = 96, gen_val = 16;
  std::string gen_mix = "plain=1.0";
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  add_common(gen, gen_o);
  gen->add_option("--train", gen_train, "training clips");
  gen->add_option("--val", gen_val, "validation clips");
  gen->add_option("--mix", gen_mix, "scenario mix, e.g. plain=0.7,occlusion=0.3");

  auto* tr = app.add_subcommand("train", "train a model");
  add_common(tr, train_o);

  std::string eval_ckpt, eval_split = "val";
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(ev, eval_o);
  ev->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
  ev->add_option("--split", eval_split, "manifest split")->check(CLI::IsMember({"train", "val"}));

  std::string infer_frames, infer_mask, infer_ckpt;
  auto* in = app.add_subcommand("infer", "chained inference over a directory of PGM frames");
  add_common(in, infer_o);
  in->add_option("--frames", infer_frames, "directory of frame_*.pgm")->required();
  in->add_option("--mask", infer_mask, "first-frame mask (PGM)")->required();
  in->add_option("--ckpt", infer_ckpt, "checkpoint path")->required();

  std::string ablate_seeds = "1,2,3";
  int ablate_train = 72, ablate_val = 12;
  auto* ab = app.add_subcommand("ablate", "directional ablation study");
  add_common(ab, ablate_o);
  ab->add_option("--seeds", ablate_seeds, "comma-separated training seeds");
  ab->add_option("--train", ablate_train, "training clips per dataset");
  ab->add_option("--val", ablate_val, "validation clips per dataset");

  bool grads_skip_model = false;
  auto* gc = app.add_subcommand("check-grads", "finite-difference gradient suite");
  add_common(gc, grads_o);
  gc->add_flag("--skip-model", grads_skip_model, "only check individual operations");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_o, gen_train, gen_val, gen_mix);
    if (tr->parsed()) return cmd_train(train_o);
    if (ev->parsed()) return cmd_eval(eval_o, eval_ckpt, eval_split);
    if (in->parsed()) return cmd_infer(infer_o, infer_frames, infer_mask, infer_ckpt);
    if (ab->parsed()) return cmd_ablate(ablate_o, ablate_seeds, ablate_train, ablate_val);
    if (gc->parsed()) return cmd_check_grads(grads_o, grads_skip_model);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  }
  return 1;
}
