#pragma once

// End-to-end driver: seeds -> relations -> fields -> instance map -> random walk
// -> labels, plus the semantic and ablation modes, run manifests and overlays.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pixrel/affinity.hpp"
#include "pixrel/core.hpp"
#include "pixrel/eval.hpp"
#include "pixrel/fieldfit.hpp"
#include "pixrel/instancing.hpp"
#include "pixrel/propagation.hpp"
#include "pixrel/relations.hpp"
#include "pixrel/seeding.hpp"
#include "pixrel/tensor_io.hpp"

namespace pixrel {

inline constexpr const char* kVersion = "0.3.0";

enum class PipelineMode { full, semantic, cam_only, cam_boundary };

inline const char* to_string(PipelineMode m) {
  switch (m) {
    case PipelineMode::full: return "full";
    case PipelineMode::semantic: return "semantic";
    case PipelineMode::cam_only: return "cam-only";
    case PipelineMode::cam_boundary: return "cam+boundary";
  }
  return "?";
}

inline PipelineMode parse_pipeline_mode(const std::string& s) {
  if (s == "full") return PipelineMode::full;
  if (s == "semantic") return PipelineMode::semantic;
  if (s == "cam-only") return PipelineMode::cam_only;
  if (s == "cam+boundary") return PipelineMode::cam_boundary;
  throw InputError("unknown pipeline mode '" + s + "'");
}

struct PipelineOptions {
  PipelineConfig config;
  BackgroundMode bg_mode = BackgroundMode::quantile;
  PipelineMode mode = PipelineMode::full;
  bool refine_seeds = true;  // needs a guide image; skipped without one
  RefineParams crf;          // thresholds are taken from config
  FitConfig fit;
  std::size_t max_pairs = 0;
  std::uint64_t pair_seed = 0;
};

struct PipelineInputs {
  ScoreStack cams;
  std::optional<RgbImage> guide;
  // Both present: fields are loaded; both absent: fields are fitted.
  std::optional<DisplacementField> displacement;
  std::optional<BoundaryMap> boundary;
};

struct PipelineResult {
  LabelImage labels;
  std::vector<double> scores;  // score of instance id k at k - 1
  ClassSeedMap seeds;
  std::optional<DisplacementField> displacement;
  std::optional<BoundaryMap> boundary;
  std::optional<InstanceMap> instance_map;
  std::vector<double> loss_trace;
  int centroids = 0;
  bool empty_stack = false;
  double bg_threshold = 0.0;
  std::vector<std::pair<std::string, double>> timings_ms;
};

// 8-connected components of equal nonzero value, numbered from 1 in order of
// their smallest flat index; zero stays zero.
inline Plane<std::int32_t> label_components(const Plane<std::int32_t>& cls) {
  const GridShape shape = cls.shape();
  Plane<std::int32_t> out(shape, 0);
  std::int32_t next = 0;
  std::vector<std::uint32_t> stack;
  for (std::size_t s = 0; s < shape.size(); ++s) {
    if (cls[s] == 0 || out[s] != 0) continue;
    out[s] = ++next;
    stack.assign(1, static_cast<std::uint32_t>(s));
    while (!stack.empty()) {
      const std::uint32_t p = stack.back();
      stack.pop_back();
      const Coord c = shape.coords(p);
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (!shape.contains(c.y + dy, c.x + dx)) continue;
          const std::size_t q = shape.index(c.y + dy, c.x + dx);
          if (cls[q] == cls[s] && out[q] == 0) {
            out[q] = next;
            stack.push_back(static_cast<std::uint32_t>(q));
          }
        }
      }
    }
  }
  return out;
}

namespace detail {

class StageClock {
 public:
  explicit StageClock(std::vector<std::pair<std::string, double>>& sink) : sink_(sink) {}
  void mark(const std::string& stage) {
    const auto now = std::chrono::steady_clock::now();
    sink_.emplace_back(stage, std::chrono::duration<double, std::milli>(now - last_).count());
    last_ = now;
  }

 private:
  std::vector<std::pair<std::string, double>>& sink_;
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

// Splits a semantic labeling into connected components and scores each by the
// maximum of its class channel inside it.
inline void split_components(PipelineResult& r, const InstanceScoreStack& class_stack) {
  const Plane<std::int32_t> comp = label_components(r.labels.class_plane);
  std::int32_t count = 0;
  for (auto v : comp.values()) count = std::max(count, v);
  r.scores.assign(static_cast<std::size_t>(count), 0.0);
  for (std::size_t i = 0; i < comp.size(); ++i) {
    if (comp[i] == 0) continue;
    const int c = r.labels.class_plane[i];
    for (const auto& ch : class_stack.channels) {
      if (ch.key.cls == c) {
        double& s = r.scores[static_cast<std::size_t>(comp[i] - 1)];
        s = std::max(s, ch.scores[i]);
      }
    }
  }
  r.labels.instance_plane = comp;
}

// Values that the stage commands exchange through f32 files are rounded the
// same way here, so a chained run and a single pipeline run agree bit for bit.
inline double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

inline void round_stack(InstanceScoreStack& s) {
  for (auto& ch : s.channels) {
    for (double& v : ch.scores.values()) v = to_f32(v);
  }
}

}  // namespace detail

inline PipelineResult run_stages(const PipelineInputs& in, const PipelineOptions& opt) {
  const PipelineConfig& cfg = opt.config;
  cfg.validate();
  const GridShape shape = in.cams.shape();
  if (in.guide) require_same_shape(shape, in.guide->shape(), "guide image");
  if (in.displacement.has_value() != in.boundary.has_value()) {
    throw InputError("displacement and boundary fields must be given together");
  }
  if (in.displacement) {
    require_same_shape(shape, in.displacement->shape(), "displacement field");
    require_same_shape(shape, in.boundary->shape(), "boundary map");
    check_displacement(*in.displacement);
    check_boundary(*in.boundary);
  }

  PipelineResult r;
  detail::StageClock clock(r.timings_ms);
  const ScoreStack& cams = in.cams;

  if (opt.mode == PipelineMode::cam_only) {
    // Raw CAMs, thresholded by the background rule, split into components.
    const InstanceScoreStack cls = class_channels(cams);
    const Synthesis syn = synthesize_instance_labels(cls, cfg.bg_percentile, opt.bg_mode);
    r.labels = syn.labels;
    r.empty_stack = syn.empty_stack;
    r.bg_threshold = syn.threshold;
    detail::split_components(r, cls);
    clock.mark("synthesize");
    return r;
  }

  r.seeds = extract_seeds(cams, cfg.theta_fg, cfg.theta_bg);
  if (opt.refine_seeds && in.guide) {
    RefineParams crf = opt.crf;
    crf.theta_fg = cfg.theta_fg;
    crf.theta_bg = cfg.theta_bg;
    r.seeds = refine_seeds(r.seeds, cams, *in.guide, crf);
  }
  clock.mark("seeds");

  const bool need_d = opt.mode == PipelineMode::full;
  if (in.displacement) {
    r.displacement = *in.displacement;
    r.boundary = *in.boundary;
  } else {
    const PairSet pairs = mine_pairs(r.seeds, cfg.gamma_train, opt.max_pairs, opt.pair_seed);
    clock.mark("mine");
    FitConfig fc = opt.fit;
    fc.eps_clamp = cfg.eps_clamp;
    FitResult fit = fit_fields(pairs, shape, fc);
    r.loss_trace = std::move(fit.trace);
    r.displacement = std::move(fit.displacement);
    r.boundary = std::move(fit.boundary);
    for (Vec2& v : r.displacement->values()) v = {detail::to_f32(v.dy), detail::to_f32(v.dx)};
    for (double& v : r.boundary->values()) v = detail::to_f32(v);
    clock.mark("fit");
  }
  const BoundaryMap& b = *r.boundary;

  if (need_d) {
    const DisplacementField centered = center_displacement(*r.displacement, r.seeds);
    const DisplacementField refined = refine_displacement(centered, cfg.refine_iters);
    const CentroidSet centroids = detect_centroids(refined, cfg.centroid_threshold);
    r.centroids = centroids.count();
    r.instance_map = build_instance_map(refined, centroids, cfg.snap_radius);
    clock.mark("instmap");
  }

  const TransitionMatrix t = transition_matrix(build_affinity_graph(b, cfg.gamma_infer), cfg.beta);
  clock.mark("affinity");

  if (opt.mode == PipelineMode::full) {
    InstanceScoreStack walked = propagate(instance_cams(cams, *r.instance_map), t, b, cfg.walk_steps);
    detail::round_stack(walked);
    clock.mark("propagate");
    const Synthesis syn = synthesize_instance_labels(walked, cfg.bg_percentile, opt.bg_mode);
    r.labels = syn.labels;
    r.empty_stack = syn.empty_stack;
    r.bg_threshold = syn.threshold;
    r.scores.assign(walked.channels.size(), 0.0);
    for (const ScoredInstance& s : score_instances(r.labels, walked)) {
      // score_instances walks ids in ascending order; recover the id from the first pixel.
      r.scores[static_cast<std::size_t>(r.labels.instance_plane[s.mask.front()] - 1)] = s.score;
    }
  } else {
    InstanceScoreStack walked = propagate(class_channels(cams), t, b, cfg.walk_steps);
    detail::round_stack(walked);
    clock.mark("propagate");
    const Synthesis syn = synthesize_instance_labels(walked, cfg.bg_percentile, opt.bg_mode);
    r.labels = syn.labels;
    r.empty_stack = syn.empty_stack;
    r.bg_threshold = syn.threshold;
    if (opt.mode == PipelineMode::semantic) {
      r.labels.instance_plane = r.labels.class_plane;
    } else {
      detail::split_components(r, walked);
    }
  }
  clock.mark("synthesize");
  return r;
}

// Predicted instances with their scores, ready for ap_r.
inline std::vector<ScoredInstance> scored_predictions(const LabelImage& labels,
                                                      const std::vector<double>& scores) {
  std::vector<ScoredInstance> out;
  for (auto& [k, entry] : label_instances(labels)) {
    const auto idx = static_cast<std::size_t>(k - 1);
    if (idx >= scores.size()) {
      throw InvariantError("instance " + std::to_string(k) + " has no score entry");
    }
    out.push_back({entry.first, std::move(entry.second), scores[idx]});
  }
  return out;
}

inline void write_scores_vector(const std::string& path, const std::vector<double>& s) {
  write_tensor(path, Tensor{{static_cast<std::uint32_t>(s.size())}, std::vector<float>(s.begin(), s.end())});
}

inline std::vector<double> read_scores_vector(const std::string& path) {
  const Tensor t = read_tensor(path);
  if (t.dtype() != DType::f32 || t.dims.size() != 1) {
    throw InputError(path + ": expected a 1-d f32 score tensor");
  }
  const auto& v = t.as<float>();
  return {v.begin(), v.end()};
}

// ---------------------------------------------------------------------------
// Manifests and key=value files.

using KeyValues = std::vector<std::pair<std::string, std::string>>;

inline std::string fmt_real(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

// Every consumed setting, under the same names the command line uses.
inline KeyValues config_snapshot(const PipelineOptions& o) {
  const PipelineConfig& c = o.config;
  return {
      {"mode", to_string(o.mode)},
      {"theta-fg", fmt_real(c.theta_fg)},
      {"theta-bg", fmt_real(c.theta_bg)},
      {"gamma-train", fmt_real(c.gamma_train)},
      {"gamma-infer", fmt_real(c.gamma_infer)},
      {"beta", fmt_real(c.beta)},
      {"t", std::to_string(c.walk_steps)},
      {"refine-iters", std::to_string(c.refine_iters)},
      {"centroid-threshold", fmt_real(c.centroid_threshold)},
      {"bg-percentile", fmt_real(c.bg_percentile)},
      {"bg-mode", to_string(o.bg_mode)},
      {"eps-clamp", fmt_real(c.eps_clamp)},
      {"snap-radius", fmt_real(c.snap_radius)},
      {"no-refine", o.refine_seeds ? "false" : "true"},
      {"crf-radius", std::to_string(o.crf.window_radius)},
      {"crf-iters", std::to_string(o.crf.iters)},
      {"crf-sigma-spatial", fmt_real(o.crf.sigma_spatial)},
      {"crf-sigma-appearance", fmt_real(o.crf.sigma_appearance)},
      {"crf-compat", fmt_real(o.crf.compat)},
      {"fit-steps", std::to_string(o.fit.steps)},
      {"fit-lr", fmt_real(o.fit.step_size)},
      {"init-scale", fmt_real(o.fit.init_scale)},
      {"w-fg", fmt_real(o.fit.weights.fg)},
      {"w-bg", fmt_real(o.fit.weights.bg)},
      {"w-boundary", fmt_real(o.fit.weights.boundary)},
      {"seed", std::to_string(o.fit.seed)},
      {"max-pairs", std::to_string(o.max_pairs)},
      {"pair-seed", std::to_string(o.pair_seed)},
  };
}

inline void write_key_values(const std::string& path, const KeyValues& kv) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError(path + ": cannot open for writing");
  for (const auto& [k, v] : kv) f << k << '=' << v << '\n';
  if (!f) throw InputError(path + ": write failed");
}

struct PipelinePaths {
  std::string cams;
  std::string guide;         // optional
  std::string displacement;  // files mode
  std::string boundary;      // files mode
  std::string out_dir;
};

struct RunManifest {
  KeyValues entries;
};

// File-level driver. Outputs in out_dir: labels.fldt, scores.fldt, seeds.fldt,
// instances.fldt (full mode), displacement.fldt / boundary.fldt / loss.txt when
// fitted, and manifest.txt. Everything except the manifest's timings is
// independent of the thread count.
inline RunManifest run_pipeline(const PipelinePaths& paths, const PipelineOptions& opt, int threads = 1) {
  PipelineInputs in;
  in.cams = normalize_cam(read_raw_scores(paths.cams));
  if (!paths.guide.empty()) in.guide = read_ppm(paths.guide);
  const bool files = !paths.displacement.empty() || !paths.boundary.empty();
  if (files) {
    if (paths.displacement.empty() || paths.boundary.empty()) {
      throw InputError("files mode needs both a displacement and a boundary path");
    }
    in.displacement = read_displacement(paths.displacement);
    in.boundary = read_boundary(paths.boundary);
    require_same_shape(in.cams.shape(), in.displacement->shape(), paths.displacement);
    require_same_shape(in.cams.shape(), in.boundary->shape(), paths.boundary);
  }
  if (in.guide) require_same_shape(in.cams.shape(), in.guide->shape(), paths.guide);

  const PipelineResult r = run_stages(in, opt);
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(paths.out_dir, ec);
  auto out = [&](const char* name) { return (fs::path(paths.out_dir) / name).string(); };

  RunManifest m;
  auto& e = m.entries;
  e.emplace_back("version", kVersion);
  e.emplace_back("cams", paths.cams);
  e.emplace_back("guide", paths.guide);
  e.emplace_back("fields", files ? "files" : "fit");
  e.emplace_back("displacement", paths.displacement);
  e.emplace_back("boundary", paths.boundary);
  e.emplace_back("out", paths.out_dir);
  for (auto& kv : config_snapshot(opt)) e.push_back(kv);
  e.emplace_back("threads", std::to_string(threads));
  e.emplace_back("seed-refinement", opt.refine_seeds && in.guide ? "applied" : "skipped");

  write_labels(out("labels.fldt"), r.labels);
  write_scores_vector(out("scores.fldt"), r.scores);
  e.emplace_back("output.labels", out("labels.fldt"));
  e.emplace_back("output.scores", out("scores.fldt"));
  if (opt.mode != PipelineMode::cam_only) {
    write_seeds(out("seeds.fldt"), r.seeds);
    e.emplace_back("output.seeds", out("seeds.fldt"));
  }
  if (r.instance_map) {
    write_instance_map(out("instances.fldt"), *r.instance_map);
    e.emplace_back("output.instances", out("instances.fldt"));
  }
  if (!files && opt.mode != PipelineMode::cam_only) {
    write_displacement(out("displacement.fldt"), *r.displacement);
    write_boundary(out("boundary.fldt"), *r.boundary);
    std::ofstream trace(out("loss.txt"), std::ios::binary);
    for (std::size_t s = 0; s < r.loss_trace.size(); ++s) trace << s << ' ' << fmt_real(r.loss_trace[s]) << '\n';
    e.emplace_back("output.displacement", out("displacement.fldt"));
    e.emplace_back("output.boundary", out("boundary.fldt"));
    e.emplace_back("output.loss", out("loss.txt"));
  }
  e.emplace_back("result.centroids", std::to_string(r.centroids));
  e.emplace_back("result.instances", std::to_string(r.scores.size()));
  e.emplace_back("result.empty-stack", r.empty_stack ? "true" : "false");
  e.emplace_back("result.bg-threshold", fmt_real(r.bg_threshold));
  for (const auto& [stage, ms] : r.timings_ms) e.emplace_back("time-ms." + stage, fmt_real(ms));
  write_key_values(out("manifest.txt"), e);
  return m;
}

// ---------------------------------------------------------------------------
// Overlay rendering.

// Deterministic color per (class, instance) from a 64-bit mix.
inline Rgb instance_color(int cls, int instance) {
  std::uint64_t h = (static_cast<std::uint64_t>(static_cast<std::uint32_t>(cls)) << 32) |
                    static_cast<std::uint32_t>(instance);
  h += 0x9e3779b97f4a7c15ULL;
  h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ULL;
  h = (h ^ (h >> 27)) * 0x94d049bb133111ebULL;
  h ^= h >> 31;
  // Keep channels away from black so contours read against dark guides.
  return {static_cast<std::uint8_t>(64 + (h & 0xbf)), static_cast<std::uint8_t>(64 + ((h >> 8) & 0xbf)),
          static_cast<std::uint8_t>(64 + ((h >> 16) & 0xbf))};
}

// Labeled pixels blend their instance color 50/50 with the guide; pixels with a
// 4-neighbor of a different (class, instance) take the full color.
inline RgbImage render_overlay(const RgbImage& guide, const LabelImage& labels) {
  require_same_shape(guide.shape(), labels.shape(), "render_overlay");
  const GridShape shape = guide.shape();
  RgbImage out = guide;
  auto key = [&](int y, int x) {
    return std::pair{labels.class_plane.at(y, x), labels.instance_plane.at(y, x)};
  };
  for (int y = 0; y < shape.height; ++y) {
    for (int x = 0; x < shape.width; ++x) {
      const auto [c, k] = key(y, x);
      if (c == 0 && k == 0) continue;
      const Rgb col = instance_color(c, k);
      bool edge = false;
      constexpr int dy[4] = {-1, 1, 0, 0};
      constexpr int dx[4] = {0, 0, -1, 1};
      for (int n = 0; n < 4; ++n) {
        if (shape.contains(y + dy[n], x + dx[n]) && key(y + dy[n], x + dx[n]) != std::pair{c, k}) edge = true;
      }
      Rgb& o = out.at(y, x);
      if (edge) {
        o = col;
      } else {
        o.r = static_cast<std::uint8_t>((o.r + col.r + 1) / 2);
        o.g = static_cast<std::uint8_t>((o.g + col.g + 1) / 2);
        o.b = static_cast<std::uint8_t>((o.b + col.b + 1) / 2);
      }
    }
  }
  return out;
}

}  // namespace pixrel
