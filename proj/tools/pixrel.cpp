// pixrel: every pipeline stage as a subcommand, plus the end-to-end run.
//
// Exit codes: 0 success, 2 input error, 3 numerical divergence, 4 invariant
// violation.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "pixrel/pixrel.hpp"

namespace {

using namespace pixrel;

// Shared flag groups bind straight into the option structs.
void add_threshold_flags(CLI::App* app, PipelineConfig& c) {
  app->add_option("--theta-fg", c.theta_fg, "foreground seed threshold")->capture_default_str();
  app->add_option("--theta-bg", c.theta_bg, "background seed threshold")->capture_default_str();
}

void add_crf_flags(CLI::App* app, PipelineOptions& o, bool& no_refine) {
  app->add_flag("--no-refine", no_refine, "skip seed refinement");
  app->add_option("--crf-radius", o.crf.window_radius)->capture_default_str();
  app->add_option("--crf-iters", o.crf.iters)->capture_default_str();
  app->add_option("--crf-sigma-spatial", o.crf.sigma_spatial)->capture_default_str();
  app->add_option("--crf-sigma-appearance", o.crf.sigma_appearance)->capture_default_str();
  app->add_option("--crf-compat", o.crf.compat)->capture_default_str();
}

void add_fit_flags(CLI::App* app, PipelineOptions& o) {
  app->add_option("--gamma-train", o.config.gamma_train, "pair radius for fitting")->capture_default_str();
  app->add_option("--max-pairs", o.max_pairs, "per-partition pair cap, 0 = all")->capture_default_str();
  app->add_option("--pair-seed", o.pair_seed)->capture_default_str();
  app->add_option("--fit-steps", o.fit.steps)->capture_default_str();
  app->add_option("--fit-lr", o.fit.step_size)->capture_default_str();
  app->add_option("--init-scale", o.fit.init_scale)->capture_default_str();
  app->add_option("--w-fg", o.fit.weights.fg)->capture_default_str();
  app->add_option("--w-bg", o.fit.weights.bg)->capture_default_str();
  app->add_option("--w-boundary", o.fit.weights.boundary)->capture_default_str();
  app->add_option("--seed", o.fit.seed, "field initialization seed")->capture_default_str();
  app->add_option("--eps-clamp", o.config.eps_clamp)->capture_default_str();
}

void add_instancing_flags(CLI::App* app, PipelineConfig& c) {
  app->add_option("--refine-iters", c.refine_iters)->capture_default_str();
  app->add_option("--centroid-threshold", c.centroid_threshold)->capture_default_str();
  app->add_option("--snap-radius", c.snap_radius)->capture_default_str();
}

void add_walk_flags(CLI::App* app, PipelineConfig& c) {
  app->add_option("--gamma-infer", c.gamma_infer, "affinity radius")->capture_default_str();
  app->add_option("--beta", c.beta, "affinity exponent")->capture_default_str();
  app->add_option("--t", c.walk_steps, "random-walk steps")->capture_default_str();
}

void add_background_flags(CLI::App* app, PipelineOptions& o, std::string& mode) {
  app->add_option("--bg-percentile", o.config.bg_percentile)->capture_default_str();
  app->add_option("--bg-mode", mode, "quantile | absolute | relative")
      ->check(CLI::IsMember({"quantile", "absolute", "relative"}))
      ->capture_default_str();
}

// key=value lines fill every option the command line left unset; unknown keys
// (timings, outputs in a manifest) are ignored.
void apply_config_file(CLI::App* app, const std::string& path) {
  if (path.empty()) return;
  std::ifstream f(path);
  if (!f) throw InputError(path + ": cannot read config file");
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "config") continue;
    CLI::Option* opt = nullptr;
    try {
      opt = app->get_option("--" + key);
    } catch (const CLI::OptionNotFound&) {
      continue;
    }
    if (opt->count() != 0) continue;
    if (value.empty()) continue;
    opt->add_result(value);
    opt->run_callback();
  }
}

std::string join(const std::string& dir, const char* name) {
  return (std::filesystem::path(dir) / name).string();
}

void make_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw InputError(dir + ": cannot create directory");
}

RgbImage read_guide_or_throw(const std::string& path, const GridShape& shape) {
  RgbImage g = read_ppm(path);
  require_same_shape(shape, g.shape(), path);
  return g;
}

GridShape parse_size(const std::string& s) {
  const auto x = s.find('x');
  if (x == std::string::npos) throw InputError("size must look like HxW, got '" + s + "'");
  try {
    return GridShape(std::stoi(s.substr(0, x)), std::stoi(s.substr(x + 1)));
  } catch (const std::logic_error&) {
    throw InputError("size must look like HxW, got '" + s + "'");
  }
}

void write_loss_trace(const std::string& path, const std::vector<double>& trace) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError(path + ": cannot open for writing");
  for (std::size_t s = 0; s < trace.size(); ++s) f << s << ' ' << fmt_real(trace[s]) << '\n';
}

int run(int argc, char** argv) {
  CLI::App app{"Pixel-relation pseudo-label synthesis from class attention maps"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));
  int threads = 1;
  app.add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber)->capture_default_str();

  PipelineOptions opt;
  std::string bg_mode = "quantile";
  std::string config_path;
  bool no_refine = false;

  // gen ---------------------------------------------------------------------
  auto* gen = app.add_subcommand("gen", "synthetic scene with ground truth, CAMs and oracle fields");
  std::string gen_size = "64x64", gen_out, gen_cam = "default";
  std::uint64_t gen_seed = 0;
  int gen_classes = 2;
  LayoutParams layout;
  gen->add_option("--size", gen_size, "HxW")->capture_default_str();
  gen->add_option("--seed", gen_seed)->capture_default_str();
  gen->add_option("--classes", gen_classes)->capture_default_str();
  gen->add_option("--min-instances", layout.min_instances)->capture_default_str();
  gen->add_option("--max-instances", layout.max_instances)->capture_default_str();
  gen->add_option("--min-radius", layout.min_radius)->capture_default_str();
  gen->add_option("--max-radius", layout.max_radius)->capture_default_str();
  gen->add_flag("--touching", layout.touching_same_class, "force a touching same-class pair");
  gen->add_option("--cam", gen_cam, "default | near-ideal")
      ->check(CLI::IsMember({"default", "near-ideal"}))
      ->capture_default_str();
  gen->add_option("--out", gen_out, "output directory")->required();

  // seeds -------------------------------------------------------------------
  auto* seeds = app.add_subcommand("seeds", "confident seeds from CAMs, optionally refined");
  std::string seeds_cams, seeds_guide, seeds_out;
  seeds->add_option("--cams", seeds_cams, "raw CAM stack (FLDT f32 [C,H,W])")->required();
  seeds->add_option("--guide", seeds_guide, "guide image (PPM) for refinement");
  seeds->add_option("--out", seeds_out)->required();
  add_threshold_flags(seeds, opt.config);
  add_crf_flags(seeds, opt, no_refine);

  // mine --------------------------------------------------------------------
  auto* mine = app.add_subcommand("mine", "pair relations from a seed map (debug dump)");
  std::string mine_seeds, mine_out;
  mine->add_option("--seeds", mine_seeds)->required();
  mine->add_option("--out", mine_out, "i32 [N,3] (i, j, partition)")->required();
  mine->add_option("--gamma", opt.config.gamma_train, "pair radius")->capture_default_str();
  mine->add_option("--max-pairs", opt.max_pairs)->capture_default_str();
  mine->add_option("--pair-seed", opt.pair_seed)->capture_default_str();

  // fit ---------------------------------------------------------------------
  auto* fit = app.add_subcommand("fit", "fit displacement and boundary fields to mined relations");
  std::string fit_seeds, fit_d, fit_b, fit_trace;
  fit->add_option("--seeds", fit_seeds)->required();
  fit->add_option("--out-displacement", fit_d)->required();
  fit->add_option("--out-boundary", fit_b)->required();
  fit->add_option("--trace", fit_trace, "loss trace, one 'step value' line per step");
  add_fit_flags(fit, opt);

  // instmap -----------------------------------------------------------------
  auto* instmap = app.add_subcommand("instmap", "class-agnostic instance map from a displacement field");
  std::string im_d, im_seeds, im_out;
  instmap->add_option("--displacement", im_d)->required();
  instmap->add_option("--seeds", im_seeds, "seed map used for mean-centering")->required();
  instmap->add_option("--out", im_out)->required();
  add_instancing_flags(instmap, opt.config);

  // affinity ----------------------------------------------------------------
  auto* aff = app.add_subcommand("affinity", "affinity graph dump from a boundary map");
  std::string aff_b, aff_out, aff_diag = "unit";
  aff->add_option("--boundary", aff_b)->required();
  aff->add_option("--out", aff_out, "f32 [nnz,3] (i, j, a)")->required();
  aff->add_option("--gamma-infer", opt.config.gamma_infer)->capture_default_str();
  aff->add_option("--diagonal", aff_diag, "unit | one-minus-boundary")
      ->check(CLI::IsMember({"unit", "one-minus-boundary"}))
      ->capture_default_str();

  // propagate ---------------------------------------------------------------
  auto* prop = app.add_subcommand("propagate", "random-walk propagation of instance-wise or class CAMs");
  std::string pr_cams, pr_inst, pr_b, pr_out;
  prop->add_option("--cams", pr_cams)->required();
  prop->add_option("--instances", pr_inst, "instance map; omitted = class channels");
  prop->add_option("--boundary", pr_b)->required();
  prop->add_option("--out", pr_out, "stack f32 [K,H,W]; keys go to <out>.keys")->required();
  add_walk_flags(prop, opt.config);

  // synth -------------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "labels from a propagated stack");
  std::string sy_stack, sy_out, sy_scores;
  bool sy_semantic = false, sy_components = false;
  synth->add_option("--stack", sy_stack)->required();
  synth->add_option("--out", sy_out, "labels (FLDT i32 [2,H,W])")->required();
  synth->add_option("--scores-out", sy_scores, "per-instance scores (f32 [K])");
  synth->add_flag("--semantic", sy_semantic, "instance plane repeats the class plane");
  synth->add_flag("--components", sy_components, "split classes into connected components");
  add_background_flags(synth, opt, bg_mode);

  // eval --------------------------------------------------------------------
  auto* ev = app.add_subcommand("eval", "AP^r and mIoU against ground truth");
  std::string ev_pred, ev_gt, ev_scores, ev_report;
  ev->add_option("--pred", ev_pred)->required();
  ev->add_option("--gt", ev_gt)->required();
  ev->add_option("--scores", ev_scores, "per-instance scores; omitted = all 1");
  ev->add_option("--report", ev_report, "key=value report file");

  // render ------------------------------------------------------------------
  auto* render = app.add_subcommand("render", "overlay labels on the guide image");
  std::string rd_guide, rd_labels, rd_out;
  render->add_option("--guide", rd_guide)->required();
  render->add_option("--labels", rd_labels)->required();
  render->add_option("--out", rd_out)->required();

  // pipeline ----------------------------------------------------------------
  auto* pipe = app.add_subcommand("pipeline", "end-to-end run");
  PipelinePaths paths;
  std::string mode = "full";
  pipe->add_option("--cams", paths.cams, "raw CAM stack (FLDT f32 [C,H,W])");
  pipe->add_option("--guide", paths.guide, "guide image (PPM)");
  pipe->add_option("--displacement", paths.displacement, "load D instead of fitting");
  pipe->add_option("--boundary", paths.boundary, "load B instead of fitting");
  pipe->add_option("--out", paths.out_dir, "output directory");
  pipe->add_option("--mode", mode, "full | semantic | cam-only | cam+boundary")
      ->check(CLI::IsMember({"full", "semantic", "cam-only", "cam+boundary"}))
      ->capture_default_str();
  pipe->add_option("--config", config_path, "key=value file; flags take precedence");
  add_threshold_flags(pipe, opt.config);
  add_crf_flags(pipe, opt, no_refine);
  add_fit_flags(pipe, opt);
  add_instancing_flags(pipe, opt.config);
  add_walk_flags(pipe, opt.config);
  add_background_flags(pipe, opt, bg_mode);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  set_max_threads(static_cast<unsigned>(threads));
  opt.refine_seeds = !no_refine;

  if (gen->parsed()) {
    const CamParams cam = gen_cam == "near-ideal" ? CamParams::near_ideal() : CamParams{};
    const SceneSpec spec = random_scene(parse_size(gen_size), gen_classes, layout, gen_seed, cam);
    const GroundTruth gt = gen_scene(spec);
    const ScoreStack cams = simulate_cams(gt, gen_classes, spec.cam, spec.seed);
    const OracleFields of = oracle_fields(gt);
    make_dir(gen_out);
    write_ppm(join(gen_out, "guide.ppm"), gt.guide);
    write_labels(join(gen_out, "gt.fldt"), gt.label);
    write_scores(join(gen_out, "cams.fldt"), cams);
    write_displacement(join(gen_out, "displacement.fldt"), of.displacement);
    write_boundary(join(gen_out, "boundary.fldt"), of.boundary);
    KeyValues kv{{"size", gen_size},
                 {"seed", std::to_string(gen_seed)},
                 {"classes", std::to_string(gen_classes)},
                 {"instances", std::to_string(gt.instance_count)},
                 {"cam", gen_cam},
                 {"cam.part-sigma", fmt_real(spec.cam.part_sigma)},
                 {"cam.coverage", fmt_real(spec.cam.coverage)},
                 {"cam.noise", fmt_real(spec.cam.noise)},
                 {"cam.context", fmt_real(spec.cam.context)}};
    for (std::size_t k = 0; k < spec.instances.size(); ++k) {
      const InstanceSpec& in = spec.instances[k];
      const std::string p = "instance." + std::to_string(k + 1) + ".";
      kv.emplace_back(p + "class", std::to_string(in.cls));
      kv.emplace_back(p + "kind", to_string(in.kind));
      kv.emplace_back(p + "center", fmt_real(in.cy) + "," + fmt_real(in.cx));
      kv.emplace_back(p + "radii", fmt_real(in.ry) + "," + fmt_real(in.rx));
    }
    write_key_values(join(gen_out, "scene.txt"), kv);
    return 0;
  }

  if (seeds->parsed()) {
    opt.config.validate();
    const ScoreStack cams = normalize_cam(read_raw_scores(seeds_cams));
    ClassSeedMap s = extract_seeds(cams, opt.config.theta_fg, opt.config.theta_bg);
    if (opt.refine_seeds && !seeds_guide.empty()) {
      RefineParams crf = opt.crf;
      crf.theta_fg = opt.config.theta_fg;
      crf.theta_bg = opt.config.theta_bg;
      s = refine_seeds(s, cams, read_guide_or_throw(seeds_guide, cams.shape()), crf);
    }
    write_seeds(seeds_out, s);
    return 0;
  }

  if (mine->parsed()) {
    const PairSet pairs = mine_pairs(read_seeds(mine_seeds), opt.config.gamma_train, opt.max_pairs, opt.pair_seed);
    write_tensor(mine_out, pairs_tensor(pairs));
    std::printf("fg_pos %zu\nbg_pos %zu\nneg %zu\n", pairs.fg_pos.size(), pairs.bg_pos.size(), pairs.neg.size());
    return 0;
  }

  if (fit->parsed()) {
    const ClassSeedMap s = read_seeds(fit_seeds);
    const PairSet pairs = mine_pairs(s, opt.config.gamma_train, opt.max_pairs, opt.pair_seed);
    FitConfig fc = opt.fit;
    fc.eps_clamp = opt.config.eps_clamp;
    const FitResult r = fit_fields(pairs, s.shape(), fc);
    write_displacement(fit_d, r.displacement);
    write_boundary(fit_b, r.boundary);
    if (!fit_trace.empty()) write_loss_trace(fit_trace, r.trace);
    return 0;
  }

  if (instmap->parsed()) {
    opt.config.validate();
    const DisplacementField d = read_displacement(im_d);
    const ClassSeedMap s = read_seeds(im_seeds);
    require_same_shape(d.shape(), s.shape(), im_seeds);
    const DisplacementField refined =
        refine_displacement(center_displacement(d, s), opt.config.refine_iters);
    const CentroidSet c = detect_centroids(refined, opt.config.centroid_threshold);
    write_instance_map(im_out, build_instance_map(refined, c, opt.config.snap_radius));
    std::printf("centroids %d\n", c.count());
    return 0;
  }

  if (aff->parsed()) {
    const BoundaryMap b = read_boundary(aff_b);
    const DiagonalMode diag = aff_diag == "unit" ? DiagonalMode::unit : DiagonalMode::one_minus_boundary;
    write_tensor(aff_out, affinity_tensor(build_affinity_graph(b, opt.config.gamma_infer, diag)));
    return 0;
  }

  if (prop->parsed()) {
    opt.config.validate();
    const ScoreStack cams = normalize_cam(read_raw_scores(pr_cams));
    const BoundaryMap b = read_boundary(pr_b);
    require_same_shape(cams.shape(), b.shape(), pr_b);
    InstanceScoreStack stack;
    if (pr_inst.empty()) {
      stack = class_channels(cams);
    } else {
      const InstanceMap inst = read_instance_map(pr_inst);
      require_same_shape(cams.shape(), inst.shape(), pr_inst);
      stack = instance_cams(cams, inst);
    }
    const TransitionMatrix t = transition_matrix(build_affinity_graph(b, opt.config.gamma_infer), opt.config.beta);
    write_instance_stack(pr_out, propagate(stack, t, b, opt.config.walk_steps));
    return 0;
  }

  if (synth->parsed()) {
    if (sy_semantic && sy_components) throw InputError("--semantic and --components are exclusive");
    const InstanceScoreStack stack = read_instance_stack(sy_stack);
    const Synthesis syn = synthesize_instance_labels(stack, opt.config.bg_percentile, parse_background_mode(bg_mode));
    PipelineResult r;
    r.labels = syn.labels;
    if (sy_semantic) {
      r.labels.instance_plane = r.labels.class_plane;
    } else if (sy_components) {
      detail::split_components(r, stack);
    } else {
      r.scores.assign(stack.channels.size(), 0.0);
      for (const ScoredInstance& s : score_instances(r.labels, stack)) {
        r.scores[static_cast<std::size_t>(r.labels.instance_plane[s.mask.front()] - 1)] = s.score;
      }
    }
    write_labels(sy_out, r.labels);
    if (!sy_scores.empty()) write_scores_vector(sy_scores, r.scores);
    if (syn.empty_stack) std::fprintf(stderr, "warning: empty stack, all pixels are background\n");
    return 0;
  }

  if (ev->parsed()) {
    const LabelImage pred = read_labels(ev_pred);
    const LabelImage gt = read_labels(ev_gt);
    EvalReport rep;
    if (ev_scores.empty()) {
      rep = evaluate(pred, nullptr, gt);
    } else {
      const std::vector<double> scores = read_scores_vector(ev_scores);
      const ApResult ap = ap_r(scored_predictions(pred, scores), gt_instances(gt));
      rep.ap_per_threshold = ap.ap;
      rep.ap_per_class = ap.per_class;
      rep.ap_undefined = ap.undefined;
      rep.match_log = ap.match_log;
      const MiouResult m = miou(pred, gt);
      rep.miou = m.miou;
      rep.class_iou = m.class_iou;
    }
    std::cout << report_table(rep);
    if (!ev_report.empty()) {
      std::ofstream f(ev_report, std::ios::binary);
      if (!f) throw InputError(ev_report + ": cannot open for writing");
      f << report_kv(rep);
    }
    return 0;
  }

  if (render->parsed()) {
    const RgbImage guide = read_ppm(rd_guide);
    write_ppm(rd_out, render_overlay(guide, read_labels(rd_labels)));
    return 0;
  }

  if (pipe->parsed()) {
    apply_config_file(pipe, config_path);
    opt.refine_seeds = !no_refine;
    if (paths.cams.empty()) throw InputError("pipeline needs --cams (flag or config key 'cams')");
    if (paths.out_dir.empty()) throw InputError("pipeline needs --out (flag or config key 'out')");
    opt.mode = parse_pipeline_mode(mode);
    opt.bg_mode = parse_background_mode(bg_mode);
    const RunManifest m = run_pipeline(paths, opt, threads);
    std::printf("wrote %s\n", join(paths.out_dir, "manifest.txt").c_str());
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const pixrel::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    switch (e.kind()) {
      case pixrel::ErrorKind::input: return 2;
      case pixrel::ErrorKind::divergence: return 3;
      case pixrel::ErrorKind::invariant: return 4;
    }
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 4;
  }
}
