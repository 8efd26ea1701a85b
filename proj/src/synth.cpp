#include "cvos/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "cvos/rng.hpp"

namespace cvos {

const char* scenario_name(Scenario s) {
  switch (s) {
    case Scenario::plain: return "plain";
    case Scenario::small_object: return "small_object";
    case Scenario::occlusion: return "occlusion";
    case Scenario::exit_reenter: return "exit_reenter";
  }
  return "plain";
}

Scenario scenario_from_name(const std::string& name) {
  if (name == "plain") return Scenario::plain;
  if (name == "small_object") return Scenario::small_object;
  if (name == "occlusion") return Scenario::occlusion;
  if (name == "exit_reenter") return Scenario::exit_reenter;
  throw ParameterError("unknown scenario: " + name);
}

std::pair<double, double> Trajectory::at(double t) const {
  switch (kind) {
    case Kind::linear:
      return {y0 + vy * t, x0 + vx * t};
    case Kind::sinusoidal:
      return {y0 + amp_y * std::sin(2.0 * M_PI * t / period + phase),
              x0 + amp_x * std::sin(2.0 * M_PI * t / period + phase)};
    case Kind::triangle: {
      double s = peak - std::abs(t - peak);
      return {y0 + vy * s, x0 + vx * s};
    }
  }
  return {y0, x0};
}

namespace {

bool inside_shape(const ObjectSpec& obj, double cy, double cx, int64_t r, int64_t c) {
  double dy = static_cast<double>(r) - cy;
  double dx = static_cast<double>(c) - cx;
  switch (obj.kind) {
    case ShapeKind::disk:
      return dy * dy + dx * dx <= obj.size * obj.size;
    case ShapeKind::rectangle:
      return std::abs(dy) <= obj.size && std::abs(dx) <= obj.size * obj.aspect;
    case ShapeKind::lshape: {
      double arm = obj.size;
      double thick = std::max(2.0, arm * 0.5);
      bool vertical = std::abs(dx + arm * 0.5) <= thick * 0.5 && std::abs(dy) <= arm;
      bool horizontal = std::abs(dy - arm + thick * 0.5) <= thick * 0.5 && std::abs(dx) <= arm;
      return vertical || horizontal;
    }
  }
  return false;
}

double fill_value(const FillSpec& fill, int64_t r, int64_t c) {
  if (!fill.striped) return fill.intensity;
  return ((r + c) / fill.stripe_period) % 2 == 0 ? fill.intensity : fill.intensity2;
}

constexpr double kBackground = 0.08;

// clamp a linear start so the path stays inside [margin, limit-margin] for all frames
double bounded_start(Rng& rng, double v, double margin, double limit, int frames) {
  double lo = margin + std::max(0.0, -v * frames);
  double hi = limit - margin - std::max(0.0, v * frames);
  if (hi <= lo) return limit / 2.0;
  return rng.uniform(lo, hi);
}

ObjectSpec sample_distractor(Rng& rng, ShapeKind kind, double size, const SceneSpec& spec,
                             const ObjectSpec& target) {
  ObjectSpec d;
  d.kind = kind;
  d.size = size;
  d.aspect = rng.uniform(0.7, 1.4);
  d.fill.intensity = rng.uniform(0.3, 0.95);
  d.fill.striped = rng.uniform() < 0.3;
  d.fill.intensity2 = rng.uniform(0.2, 0.6);
  d.fill.stripe_period = static_cast<int>(rng.uniform_int(3, 6));
  d.traj.kind = Trajectory::Kind::linear;
  d.traj.vy = rng.uniform(-1.5, 1.5);
  d.traj.vx = rng.uniform(-1.5, 1.5);
  double m = d.size * std::max(1.0, d.aspect) + 2.0;
  for (int attempt = 0; attempt < 12; ++attempt) {
    d.traj.y0 = bounded_start(rng, d.traj.vy, m, static_cast<double>(spec.canvas_h), spec.episode_length);
    d.traj.x0 = bounded_start(rng, d.traj.vx, m, static_cast<double>(spec.canvas_w), spec.episode_length);
    double dy = d.traj.y0 - target.traj.y0;
    double dx = d.traj.x0 - target.traj.x0;
    if (std::sqrt(dy * dy + dx * dx) > target.size + d.size + 8.0) break;
  }
  return d;
}

}  // namespace

SceneSpec SceneSpec::sample(Scenario scenario, uint64_t seed, int64_t canvas_h, int64_t canvas_w) {
  SceneSpec spec;
  spec.canvas_h = canvas_h;
  spec.canvas_w = canvas_w;
  spec.scenario = scenario;
  spec.seed = seed;
  Rng rng(seed * 0x9E3779B97F4A7C15ULL + 0x1234567ULL);

  double scale = static_cast<double>(canvas_h) / 128.0;
  ObjectSpec target;
  target.is_target = true;
  target.fill.intensity = rng.uniform(0.45, 0.95);
  target.fill.striped = rng.uniform() < 0.35;
  target.fill.intensity2 = rng.uniform(0.25, 0.6);
  target.fill.stripe_period = static_cast<int>(rng.uniform_int(3, 6));

  switch (scenario) {
    case Scenario::plain: {
      int k = static_cast<int>(rng.uniform_int(0, 2));
      target.kind = k == 0 ? ShapeKind::disk : (k == 1 ? ShapeKind::rectangle : ShapeKind::lshape);
      target.size = rng.uniform(9.0, 16.0) * scale;
      target.aspect = rng.uniform(0.7, 1.4);
      target.traj.kind = Trajectory::Kind::linear;
      target.traj.vy = rng.uniform(-1.8, 1.8) * scale;
      target.traj.vx = rng.uniform(-1.8, 1.8) * scale;
      break;
    }
    case Scenario::small_object: {
      // target stays below 0.3% of the canvas area
      double max_area = 0.003 * static_cast<double>(canvas_h * canvas_w);
      target.kind = rng.uniform() < 0.6 ? ShapeKind::disk : ShapeKind::rectangle;
      if (target.kind == ShapeKind::disk) {
        double rmax = std::sqrt(max_area / M_PI) - 0.6;
        target.size = rng.uniform(std::max(2.0, rmax * 0.65), rmax);
      } else {
        target.aspect = rng.uniform(0.8, 1.25);
        double hmax = 0.5 * (std::sqrt(max_area / target.aspect) - 1.0) - 0.6;
        target.size = rng.uniform(std::max(1.6, hmax * 0.65), hmax);
      }
      target.traj.kind = Trajectory::Kind::linear;
      target.traj.vy = rng.uniform(-1.2, 1.2) * scale;
      target.traj.vx = rng.uniform(-1.2, 1.2) * scale;
      break;
    }
    case Scenario::occlusion: {
      target.kind = rng.uniform() < 0.6 ? ShapeKind::disk : ShapeKind::rectangle;
      target.size = rng.uniform(11.0, 16.0) * scale;
      target.aspect = rng.uniform(0.8, 1.2);
      target.traj.kind = Trajectory::Kind::linear;
      double dir = rng.uniform() < 0.5 ? 1.0 : -1.0;
      target.traj.vx = dir * rng.uniform(2.4, 3.2) * scale;
      target.traj.vy = rng.uniform(-0.3, 0.3) * scale;
      break;
    }
    case Scenario::exit_reenter: {
      target.kind = ShapeKind::disk;
      target.size = rng.uniform(9.0, 13.0) * scale;
      target.traj.kind = Trajectory::Kind::triangle;
      target.traj.peak = 12.0;
      target.traj.vy = rng.uniform(-0.2, 0.2) * scale;
      break;
    }
  }

  double extent = target.size * std::max(1.0, target.aspect);
  double margin = extent + 2.0;
  if (scenario == Scenario::exit_reenter) {
    // run off the right or left edge around mid-episode, then come back
    bool right = rng.uniform() < 0.5;
    double r = extent;
    target.traj.y0 = rng.uniform(margin + 4.0, canvas_h - margin - 4.0);
    if (right) {
      target.traj.x0 = canvas_w - r - 3.0;
      // fully outside for |t - 12| <= 2: x0 + vx*(12-2) > W - 1 + r
      target.traj.vx = (static_cast<double>(canvas_w) + 2.0 * r + 6.0 - target.traj.x0) / 10.0;
    } else {
      target.traj.x0 = r + 3.0;
      target.traj.vx = -(target.traj.x0 + r + 7.0) / 10.0;
    }
  } else {
    target.traj.y0 =
        bounded_start(rng, target.traj.vy, margin, static_cast<double>(canvas_h), spec.episode_length);
    target.traj.x0 =
        bounded_start(rng, target.traj.vx, margin, static_cast<double>(canvas_w), spec.episode_length);
  }

  if (scenario == Scenario::occlusion) {
    // a full-height bar across the target's path hides it for several frames
    double cross_t = 11.0 + rng.uniform(0.0, 2.0);
    double cross_x = target.traj.x0 + target.traj.vx * cross_t;
    OccluderSpec bar;
    bar.y0 = static_cast<double>(canvas_h) / 2.0;
    bar.x0 = cross_x;
    bar.h = static_cast<double>(canvas_h);
    bar.w = 2.0 * extent + 4.0 * std::abs(target.traj.vx) + 4.0;
    bar.intensity = rng.uniform(0.45, 0.65);
    spec.occluders.push_back(bar);
  }

  // at least one distractor always shares the target's shape class
  spec.objects.push_back(sample_distractor(rng, target.kind, target.size * rng.uniform(0.8, 1.25),
                                           spec, target));
  if (rng.uniform() < 0.5) {
    int k = static_cast<int>(rng.uniform_int(0, 2));
    ShapeKind kind = k == 0 ? ShapeKind::disk : (k == 1 ? ShapeKind::rectangle : ShapeKind::lshape);
    spec.objects.push_back(
        sample_distractor(rng, kind, rng.uniform(6.0, 14.0) * scale, spec, target));
  }
  spec.objects.push_back(target);
  return spec;
}

std::pair<Tensor, Tensor> render_frame(const SceneSpec& spec, double t) {
  int64_t H = spec.canvas_h, W = spec.canvas_w;
  Tensor gray = Tensor::full({H, W}, kBackground);
  Tensor mask = Tensor::zeros({H, W});
  double* g = gray.data();
  double* m = mask.data();

  struct Placed {
    const ObjectSpec* obj;
    double cy, cx;
  };
  std::vector<Placed> placed;
  for (const ObjectSpec& obj : spec.objects) {
    auto [cy, cx] = obj.traj.at(t);
    placed.push_back({&obj, cy, cx});
  }

  for (const Placed& p : placed) {
    double extent = p.obj->size * std::max(1.0, p.obj->aspect) + 2.0;
    int64_t r0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(p.cy - extent)));
    int64_t r1 = std::min<int64_t>(H - 1, static_cast<int64_t>(std::ceil(p.cy + extent)));
    int64_t c0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(p.cx - extent)));
    int64_t c1 = std::min<int64_t>(W - 1, static_cast<int64_t>(std::ceil(p.cx + extent)));
    for (int64_t r = r0; r <= r1; ++r) {
      for (int64_t c = c0; c <= c1; ++c) {
        if (inside_shape(*p.obj, p.cy, p.cx, r, c)) {
          g[r * W + c] = fill_value(p.obj->fill, r, c);
          m[r * W + c] = p.obj->is_target ? 1.0 : 0.0;
        }
      }
    }
  }
  for (const OccluderSpec& occ : spec.occluders) {
    int64_t r0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(occ.y0 - occ.h / 2)));
    int64_t r1 = std::min<int64_t>(H - 1, static_cast<int64_t>(std::ceil(occ.y0 + occ.h / 2)));
    int64_t c0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(occ.x0 - occ.w / 2)));
    int64_t c1 = std::min<int64_t>(W - 1, static_cast<int64_t>(std::ceil(occ.x0 + occ.w / 2)));
    for (int64_t r = r0; r <= r1; ++r) {
      for (int64_t c = c0; c <= c1; ++c) {
        g[r * W + c] = occ.intensity;
        m[r * W + c] = 0.0;  // occluders hide the target from the label too
      }
    }
  }
  return {gray, mask};
}

ClipSample generate_clip(const SceneSpec& spec, int t0, int64_t clip_length) {
  if (t0 < 0 || t0 + clip_length > spec.episode_length) {
    throw ParameterError("generate_clip: clip [" + std::to_string(t0) + ", " +
                         std::to_string(t0 + clip_length) + ") exceeds the episode length");
  }
  int64_t H = spec.canvas_h, W = spec.canvas_w;
  ClipSample sample;
  sample.frames = Tensor::zeros({clip_length, H, W, 3});
  sample.masks = Tensor::zeros({clip_length, H, W});
  for (int64_t t = 0; t < clip_length; ++t) {
    auto [gray, mask] = render_frame(spec, static_cast<double>(t0) + static_cast<double>(t));
    const double* gp = gray.data();
    double* fp = sample.frames.data() + t * H * W * 3;
    for (int64_t i = 0; i < H * W; ++i) {
      fp[i * 3 + 0] = gp[i];
      fp[i * 3 + 1] = gp[i];
      fp[i * 3 + 2] = gp[i];
    }
    std::memcpy(sample.masks.data() + t * H * W, mask.data(),
                static_cast<size_t>(H * W) * sizeof(double));
  }
  sample.ref_mask = frame_slice(sample.masks, 0);
  bool first_nonempty = false;
  for (int64_t i = 0; i < H * W && !first_nonempty; ++i) {
    first_nonempty = sample.ref_mask.data()[i] > 0.5;
  }
  if (first_nonempty) {
    sample.gt_box = ground_truth_bbox(sample.masks, H, W);
  } else {
    sample.gt_box = BoundingBox{H / 2, W / 2, H, W};  // full-frame fallback
  }
  return sample;
}

// ---- files ------------------------------------------------------------------

void write_pgm(const std::string& path, const Tensor& img) {
  if (img.rank() != 2) throw DimensionError("write_pgm expects [H,W]");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  int64_t H = img.extent(0), W = img.extent(1);
  os << "P5\n" << W << " " << H << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(W));
  const double* p = img.data();
  for (int64_t r = 0; r < H; ++r) {
    for (int64_t c = 0; c < W; ++c) {
      double v = std::clamp(p[r * W + c], 0.0, 1.0);
      row[static_cast<size_t>(c)] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    os.write(reinterpret_cast<const char*>(row.data()), W);
  }
  if (!os) throw IoError("failed writing " + path);
}

Tensor read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  std::string magic;
  is >> magic;
  if (magic != "P5") throw IoError("not a binary PGM: " + path);
  auto skip_ws_comments = [&]() {
    while (true) {
      int ch = is.peek();
      if (ch == '#') {
        std::string line;
        std::getline(is, line);
      } else if (std::isspace(ch)) {
        is.get();
      } else {
        break;
      }
    }
  };
  skip_ws_comments();
  int64_t W, H, maxval;
  is >> W;
  skip_ws_comments();
  is >> H;
  skip_ws_comments();
  is >> maxval;
  is.get();  // the single whitespace after the header
  if (!is || W <= 0 || H <= 0 || maxval != 255) throw IoError("bad PGM header: " + path);
  std::vector<unsigned char> bytes(static_cast<size_t>(W * H));
  is.read(reinterpret_cast<char*>(bytes.data()), W * H);
  if (!is) throw IoError("truncated PGM: " + path);
  std::vector<double> v(bytes.size());
  for (size_t i = 0; i < bytes.size(); ++i) v[i] = static_cast<double>(bytes[i]) / 255.0;
  return Tensor::from_data({H, W}, std::move(v));
}

namespace {

using nlohmann::json;

json entry_to_json(const ManifestEntry& e) {
  return json{{"clip_id", e.clip_id},
              {"scenario", e.scenario},
              {"seed", e.seed},
              {"t0", e.t0},
              {"paths", json{{"frames", e.frame_paths}, {"masks", e.mask_paths}}},
              {"gt_box", json{{"h", e.gt_box.h},
                              {"w", e.gt_box.w},
                              {"center_r", e.gt_box.center_r},
                              {"center_c", e.gt_box.center_c}}}};
}

ManifestEntry entry_from_json(const json& j) {
  ManifestEntry e;
  e.clip_id = j.at("clip_id").get<std::string>();
  e.scenario = j.at("scenario").get<std::string>();
  e.seed = j.at("seed").get<uint64_t>();
  e.t0 = j.at("t0").get<int>();
  e.frame_paths = j.at("paths").at("frames").get<std::vector<std::string>>();
  e.mask_paths = j.at("paths").at("masks").get<std::vector<std::string>>();
  e.gt_box.h = j.at("gt_box").at("h").get<int64_t>();
  e.gt_box.w = j.at("gt_box").at("w").get<int64_t>();
  e.gt_box.center_r = j.at("gt_box").at("center_r").get<int64_t>();
  e.gt_box.center_c = j.at("gt_box").at("center_c").get<int64_t>();
  return e;
}

void write_split(const std::string& dir, const std::string& split, uint64_t seed_base, int count,
                 const std::map<Scenario, double>& mix, int64_t canvas_h, int64_t canvas_w) {
  namespace fs = std::filesystem;
  double total = 0;
  for (const auto& [s, v] : mix) total += v;
  if (!(total > 0)) throw ParameterError("scenario mix must have positive total weight");

  // largest-remainder apportioning of clips per scenario
  std::vector<std::pair<Scenario, double>> shares(mix.begin(), mix.end());
  std::vector<int> clips(shares.size(), 0);
  int assigned = 0;
  std::vector<std::pair<double, size_t>> remainders;
  for (size_t i = 0; i < shares.size(); ++i) {
    double exact = static_cast<double>(count) * shares[i].second / total;
    clips[i] = static_cast<int>(std::floor(exact));
    assigned += clips[i];
    remainders.push_back({exact - std::floor(exact), i});
  }
  std::sort(remainders.begin(), remainders.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });
  for (int k = 0; k < count - assigned; ++k) clips[remainders[static_cast<size_t>(k)].second]++;

  std::vector<ManifestEntry> manifest;
  uint64_t episode = 0;
  for (size_t si = 0; si < shares.size(); ++si) {
    int remaining = clips[si];
    while (remaining > 0) {
      uint64_t seed = seed_base + episode;
      ++episode;
      SceneSpec spec = SceneSpec::sample(shares[si].first, seed, canvas_h, canvas_w);
      for (int t0 : {0, 8, 16}) {
        if (remaining == 0) break;
        ClipSample clip = generate_clip(spec, t0);
        char idbuf[96];
        std::snprintf(idbuf, sizeof(idbuf), "%s_%llu_t%02d", scenario_name(shares[si].first),
                      static_cast<unsigned long long>(seed), t0);
        ManifestEntry e;
        e.clip_id = idbuf;
        e.scenario = scenario_name(shares[si].first);
        e.seed = seed;
        e.t0 = t0;
        e.gt_box = clip.gt_box;
        fs::path rel_dir = fs::path(split) / e.clip_id;
        fs::path clip_dir = fs::path(dir) / rel_dir;
        fs::create_directories(clip_dir);
        for (int64_t t = 0; t < clip.masks.extent(0); ++t) {
          Tensor gray = Tensor::zeros({canvas_h, canvas_w});
          for (int64_t i = 0; i < canvas_h * canvas_w; ++i) {
            gray.data()[i] = clip.frames.data()[(t * canvas_h * canvas_w + i) * 3];
          }
          std::string frame_name = "frame_" + std::to_string(t) + ".pgm";
          std::string mask_name = "mask_" + std::to_string(t) + ".pgm";
          write_pgm((clip_dir / frame_name).string(), gray);
          write_pgm((clip_dir / mask_name).string(), frame_slice(clip.masks, t));
          // paths stay relative to the manifest so datasets can be moved
          e.frame_paths.push_back((rel_dir / frame_name).string());
          e.mask_paths.push_back((rel_dir / mask_name).string());
        }
        manifest.push_back(std::move(e));
        --remaining;
      }
    }
  }

  json out = json::array();
  for (const ManifestEntry& e : manifest) out.push_back(entry_to_json(e));
  std::ofstream os(fs::path(dir) / (split + "_manifest.json"));
  if (!os) throw IoError("cannot write manifest under " + dir);
  os << out.dump(1) << "\n";
}

}  // namespace

void generate_dataset(const std::string& dir, int n_train, int n_val,
                      const std::map<Scenario, double>& mix, uint64_t seed, int64_t canvas_h,
                      int64_t canvas_w) {
  if (n_train <= 0 || n_val <= 0) throw ParameterError("dataset split counts must be positive");
  std::filesystem::create_directories(dir);
  // disjoint seed ranges keep the splits disjoint
  write_split(dir, "train", seed * 2000000ULL + 1, n_train, mix, canvas_h, canvas_w);
  write_split(dir, "val", seed * 2000000ULL + 1000001ULL, n_val, mix, canvas_h, canvas_w);
}

std::vector<ManifestEntry> load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest: " + path);
  json j;
  is >> j;
  std::vector<ManifestEntry> out;
  std::filesystem::path base = std::filesystem::path(path).parent_path();
  for (const auto& item : j) {
    ManifestEntry e = entry_from_json(item);
    for (std::string& p : e.frame_paths) p = (base / p).string();
    for (std::string& p : e.mask_paths) p = (base / p).string();
    out.push_back(std::move(e));
  }
  return out;
}

ClipSample load_clip(const ManifestEntry& entry) {
  if (entry.frame_paths.empty() || entry.frame_paths.size() != entry.mask_paths.size()) {
    throw IoError("manifest entry " + entry.clip_id + " has inconsistent paths");
  }
  int64_t T = static_cast<int64_t>(entry.frame_paths.size());
  Tensor first = read_pgm(entry.frame_paths[0]);
  int64_t H = first.extent(0), W = first.extent(1);
  ClipSample sample;
  sample.frames = Tensor::zeros({T, H, W, 3});
  sample.masks = Tensor::zeros({T, H, W});
  for (int64_t t = 0; t < T; ++t) {
    Tensor gray = t == 0 ? first : read_pgm(entry.frame_paths[static_cast<size_t>(t)]);
    Tensor mask = read_pgm(entry.mask_paths[static_cast<size_t>(t)]);
    if (gray.shape() != Shape{H, W} || mask.shape() != Shape{H, W}) {
      throw IoError("frame size mismatch in " + entry.clip_id);
    }
    for (int64_t i = 0; i < H * W; ++i) {
      double v = gray.data()[i];
      sample.frames.data()[(t * H * W + i) * 3 + 0] = v;
      sample.frames.data()[(t * H * W + i) * 3 + 1] = v;
      sample.frames.data()[(t * H * W + i) * 3 + 2] = v;
      sample.masks.data()[t * H * W + i] = mask.data()[i] > 0.5 ? 1.0 : 0.0;
    }
  }
  sample.ref_mask = frame_slice(sample.masks, 0);
  sample.gt_box = entry.gt_box;
  return sample;
}

}  // namespace cvos
