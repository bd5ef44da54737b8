// Command-line front end: scene generation, surfel fitting, depth fusion,
// and evaluation, all reproducible from a seed and a config.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include <CLI11.hpp>

#include "splatfit/fusion.hpp"
#include "splatfit/io.hpp"
#include "splatfit/jsonutil.hpp"
#include "splatfit/optim.hpp"
#include "splatfit/parallel.hpp"
#include "splatfit/render.hpp"
#include "splatfit/synth.hpp"

namespace fs = std::filesystem;
using namespace splatfit;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr const char* kVersion = "0.1.0";

class StageTimer {
 public:
  void mark(const std::string& stage) {
    const auto now = std::chrono::steady_clock::now();
    stages_[stage] = std::chrono::duration<double>(now - last_).count();
    last_ = now;
  }
  const ordered_json& stages() const { return stages_; }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
  ordered_json stages_ = ordered_json::object();
};

std::string hex64(uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_manifest(const fs::path& out_dir, const std::string& command,
                    const json& config, uint64_t seed, const ordered_json& inputs,
                    const ordered_json& outputs, const StageTimer& timer) {
  ordered_json m;
  m["version"] = kVersion;
  m["command"] = command;
  m["seed"] = seed;
  m["config_hash"] = hex64(json_hash(config));
  m["config"] = config;
  m["inputs"] = inputs;
  m["outputs"] = outputs;
  m["timings_sec"] = timer.stages();
  write_json_atomic(out_dir / "manifest.json", m);
}

std::vector<int> resolve_views(const std::vector<int>& requested, size_t count) {
  std::vector<int> views = requested;
  if (views.empty()) {
    views.resize(count);
    std::iota(views.begin(), views.end(), 0);
  }
  for (int v : views)
    if (v < 0 || size_t(v) >= count)
      throw InvalidSpecError("view index " + std::to_string(v) +
                             " outside the bundle's " + std::to_string(count) +
                             " views");
  return views;
}

ordered_json depth_block(const DepthMetrics& m) {
  ordered_json d;
  d["pct1"] = m.pct1;
  d["pct2"] = m.pct2;
  d["pct4"] = m.pct4;
  d["abs"] = m.abs_err;
  d["rel"] = m.rel_err;
  return d;
}

// Pools per-view means back into per-pixel means across views.
DepthMetrics pool_metrics(const std::vector<DepthMetrics>& per_view) {
  DepthMetrics pooled;
  for (const DepthMetrics& m : per_view) {
    const double n = double(m.evaluated);
    pooled.pct1 += m.pct1 * n;
    pooled.pct2 += m.pct2 * n;
    pooled.pct4 += m.pct4 * n;
    pooled.abs_err += m.abs_err * n;
    pooled.rel_err += m.rel_err * n;
    pooled.evaluated += m.evaluated;
  }
  if (pooled.evaluated == 0)
    throw NoOverlapError("no evaluated view overlaps the reference depth");
  const double n = double(pooled.evaluated);
  pooled.pct1 /= n;
  pooled.pct2 /= n;
  pooled.pct4 /= n;
  pooled.abs_err /= n;
  pooled.rel_err /= n;
  return pooled;
}

struct GenSceneOpts {
  std::string spec_path, preset, out;
};

int run_gen_scene(const GenSceneOpts& opt) {
  StageTimer timer;
  SceneSpec spec;
  if (!opt.spec_path.empty())
    spec = scene_spec_from_json(parse_json_file(opt.spec_path));
  else if (opt.preset == "reference")
    spec = reference_scene_spec();
  else
    throw InvalidSpecError("unknown preset '" + opt.preset + "'");
  const json spec_json = scene_spec_to_json(spec);
  timer.mark("load");

  const SceneBundle bundle = generate_scene(spec);
  timer.mark("generate");

  const fs::path out(opt.out);
  save_bundle(out, bundle);
  write_json_atomic(out / "spec.json", spec_json);
  timer.mark("save");

  ordered_json inputs, outputs;
  inputs["spec"] = opt.spec_path.empty() ? ("preset:" + opt.preset) : opt.spec_path;
  outputs["bundle"] = out.string();
  outputs["spec"] = (out / "spec.json").string();
  write_manifest(out, "gen-scene", spec_json, spec.seed, inputs, outputs, timer);
  std::cout << "wrote " << bundle.views.size() << " views and "
            << bundle.gt_points.points.size() << " surface points to " << out
            << "\n";
  return 0;
}

struct FitOpts {
  std::string scene, config, out, weights;
  std::vector<std::string> sets;
  std::vector<int> views;
  uint64_t seed = 0;
  bool seed_set = false;
  int threads = 0;
  bool threads_set = false;
  bool deterministic = false;
};

TrainConfig resolve_train_config(const FitOpts& opt, json& out_json) {
  json cfg_json = train_config_to_json(TrainConfig{});
  if (!opt.config.empty()) {
    const json file = parse_json_file(opt.config);
    if (!file.is_object())
      throw InvalidSpecError(opt.config + ": config root must be an object");
    for (const auto& [key, value] : file.items()) cfg_json[key] = value;
  }
  if (!opt.weights.empty()) {
    std::stringstream ss(opt.weights);
    std::string term;
    while (std::getline(ss, term, ','))
      if (!term.empty()) apply_dotted_override(cfg_json, "losses." + term);
  }
  for (const std::string& spec : opt.sets) apply_dotted_override(cfg_json, spec);

  TrainConfig cfg = train_config_from_json(cfg_json);
  if (opt.seed_set) cfg.seed = opt.seed;
  if (opt.threads_set) cfg.threads = opt.threads;
  if (opt.deterministic) cfg.threads = 1;
  if (!opt.views.empty()) cfg.train_views = opt.views;
  validate_train_config(cfg);
  out_json = train_config_to_json(cfg);
  return cfg;
}

int run_fit(const FitOpts& opt) {
  StageTimer timer;
  json cfg_json;
  const TrainConfig cfg = resolve_train_config(opt, cfg_json);
  const SceneBundle bundle = load_bundle(opt.scene);
  const InitMode mode = cfg.init.mode == "surface-sample"
                            ? InitMode::SurfaceSample
                            : InitMode::DepthBackproject;
  const SplatSet initial = init_splats(bundle, cfg.init.count, cfg.init.sigma_p,
                                       mode, derive_seed(cfg.seed, "init"));
  timer.mark("load");

  const fs::path out(opt.out);
  fs::create_directories(out);
  std::ofstream log(out / "train.jsonl", std::ios::binary | std::ios::trunc);
  if (!log) throw IoError((out / "train.jsonl").string() + ": cannot open");

  CheckpointFn checkpoint;
  if (cfg.checkpoint_every > 0)
    checkpoint = [&out](int iter, const SplatSet& splats) {
      save_splats_ply(out / ("checkpoint_" + std::to_string(iter) + ".ply"),
                      splats);
    };
  const FitResult result = fit(bundle, initial, cfg, &log, checkpoint);
  log.close();
  timer.mark("fit");

  save_splats_ply(out / "final.ply", result.splats);
  timer.mark("save");

  ordered_json inputs, outputs;
  inputs["scene"] = opt.scene;
  if (!opt.config.empty()) inputs["config"] = opt.config;
  outputs["splats"] = (out / "final.ply").string();
  outputs["log"] = (out / "train.jsonl").string();
  write_manifest(out, "fit", cfg_json, cfg.seed, inputs, outputs, timer);
  std::cout << "fitted " << result.splats.size() << " surfels over "
            << cfg.iterations << " iterations; final total loss "
            << result.history.back().losses.total << "\n";
  return 0;
}

struct ReconOpts {
  std::string splats, scene, out;
  std::vector<int> views;
  double voxel = 0.01, tau = 0.03, unit = 0.0;
  size_t samples = 100000;
  uint64_t seed = 0;
  int threads = 0;
};

int run_recon(const ReconOpts& opt) {
  StageTimer timer;
  const SceneBundle bundle = load_bundle(opt.scene);
  const SplatSet splats = load_splats_ply(opt.splats);
  const std::vector<int> views = resolve_views(opt.views, bundle.views.size());
  timer.mark("load");

  RenderOptions ropt;
  ropt.threads = resolve_threads(opt.threads);
  TsdfVolume vol = make_unit_volume(opt.voxel, opt.tau);
  std::vector<DepthMetrics> per_view;
  const double unit = opt.unit > 0 ? opt.unit : opt.voxel;
  for (int v : views) {
    const ViewData& view = bundle.views[size_t(v)];
    const RenderBuffers buffers = render_view(view.cam, splats, ropt);
    integrate_view(vol, view.cam, buffers.depth, buffers.acc);
    per_view.push_back(depth_metrics(buffers.depth, buffers.acc, view.depth, unit));
  }
  timer.mark("render");

  const TriangleMesh mesh = marching_cubes(vol);
  timer.mark("extract");

  Rng rng = make_rng(opt.seed, "mesh-sample");
  const std::vector<Vec3> sampled = sample_mesh_points(mesh, opt.samples, rng);
  const ChamferResult cd = chamfer_distance(sampled, bundle.gt_points.points);
  timer.mark("evaluate");

  const fs::path out(opt.out);
  fs::create_directories(out);
  save_mesh_ply(out / "mesh.ply", mesh);
  ordered_json metrics;
  metrics["accuracy"] = cd.accuracy;
  metrics["completeness"] = cd.completeness;
  metrics["chamfer"] = cd.chamfer;
  metrics["depth"] = depth_block(pool_metrics(per_view));
  metrics["unit"] = unit;
  metrics["views"] = views;
  metrics["vertices"] = mesh.vertices.size();
  metrics["triangles"] = mesh.triangles.size();
  write_json_atomic(out / "metrics.json", metrics);
  timer.mark("save");

  json cfg;
  cfg["voxel"] = opt.voxel;
  cfg["tau"] = opt.tau;
  cfg["unit"] = unit;
  cfg["samples"] = opt.samples;
  cfg["views"] = views;
  ordered_json inputs, outputs;
  inputs["scene"] = opt.scene;
  inputs["splats"] = opt.splats;
  outputs["mesh"] = (out / "mesh.ply").string();
  outputs["metrics"] = (out / "metrics.json").string();
  write_manifest(out, "recon", cfg, opt.seed, inputs, outputs, timer);
  std::cout << "mesh: " << mesh.vertices.size() << " vertices, "
            << mesh.triangles.size() << " triangles; chamfer " << cd.chamfer
            << "\n";
  return 0;
}

struct EvalDepthOpts {
  std::string splats, scene, out;
  std::vector<int> views;
  double unit = 0.01;
  int threads = 0;
};

int run_eval_depth(const EvalDepthOpts& opt) {
  StageTimer timer;
  const SceneBundle bundle = load_bundle(opt.scene);
  const SplatSet splats = load_splats_ply(opt.splats);
  const std::vector<int> views = resolve_views(opt.views, bundle.views.size());
  timer.mark("load");

  RenderOptions ropt;
  ropt.threads = resolve_threads(opt.threads);
  std::vector<DepthMetrics> per_view;
  ordered_json view_blocks = ordered_json::array();
  for (int v : views) {
    const ViewData& view = bundle.views[size_t(v)];
    const RenderBuffers buffers = render_view(view.cam, splats, ropt);
    per_view.push_back(
        depth_metrics(buffers.depth, buffers.acc, view.depth, opt.unit));
    ordered_json block = depth_block(per_view.back());
    block["view"] = v;
    block["evaluated"] = per_view.back().evaluated;
    view_blocks.push_back(std::move(block));
  }
  timer.mark("evaluate");

  const fs::path out(opt.out);
  fs::create_directories(out);
  ordered_json metrics;
  metrics["unit"] = opt.unit;
  metrics["views"] = views;
  metrics["depth"] = depth_block(pool_metrics(per_view));
  metrics["per_view"] = view_blocks;
  write_json_atomic(out / "depth_metrics.json", metrics);
  timer.mark("save");

  json cfg;
  cfg["unit"] = opt.unit;
  cfg["views"] = views;
  ordered_json inputs, outputs;
  inputs["scene"] = opt.scene;
  inputs["splats"] = opt.splats;
  outputs["metrics"] = (out / "depth_metrics.json").string();
  write_manifest(out, "eval-depth", cfg, 0, inputs, outputs, timer);
  std::cout << "pooled pct<" << opt.unit << ": " << metrics["depth"]["pct1"]
            << " over " << views.size() << " views\n";
  return 0;
}

struct RenderCliOpts {
  std::string splats, scene, out;
  int view = 0;
  int threads = 0;
};

int run_render(const RenderCliOpts& opt) {
  StageTimer timer;
  const SceneBundle bundle = load_bundle(opt.scene);
  const SplatSet splats = load_splats_ply(opt.splats);
  resolve_views({opt.view}, bundle.views.size());
  timer.mark("load");

  RenderOptions ropt;
  ropt.threads = resolve_threads(opt.threads);
  const RenderBuffers buffers =
      render_view(bundle.views[size_t(opt.view)].cam, splats, ropt);
  timer.mark("render");

  const fs::path out(opt.out);
  fs::create_directories(out);
  const std::string tag = std::to_string(opt.view);
  save_png(out / ("rgb_" + tag + ".png"), buffers.color);
  save_pfm(out / ("depth_" + tag + ".pfm"), buffers.depth);
  save_pfm(out / ("acc_" + tag + ".pfm"), buffers.acc);
  timer.mark("save");

  json cfg;
  cfg["view"] = opt.view;
  ordered_json inputs, outputs;
  inputs["scene"] = opt.scene;
  inputs["splats"] = opt.splats;
  outputs["rgb"] = (out / ("rgb_" + tag + ".png")).string();
  outputs["depth"] = (out / ("depth_" + tag + ".pfm")).string();
  outputs["acc"] = (out / ("acc_" + tag + ".pfm")).string();
  write_manifest(out, "render", cfg, 0, inputs, outputs, timer);
  return 0;
}

struct GradCheckOpts {
  std::string loss = "all";
  double tolerance = 1e-4;
  uint64_t seed = 0;
  size_t splats = 10;
};

int run_gradcheck(const GradCheckOpts& opt) {
  std::vector<std::string> selectors;
  if (opt.loss == "all")
    selectors = gradient_check_selectors();
  else
    selectors.push_back(opt.loss);

  bool all_pass = true;
  for (const std::string& sel : selectors) {
    const GradCheckReport r =
        gradient_check(sel, opt.seed, opt.tolerance, opt.splats);
    std::printf("[%s] %-10s max_rel_err=%.3e checked=%zu skipped=%zu\n",
                r.pass ? "PASS" : "FAIL", sel.c_str(), r.max_rel_err, r.checked,
                r.skipped);
    for (const GradCheckIssue& f : r.failures)
      std::printf("       splat %zu %s: analytic=%.9e fd=%.9e rel=%.3e\n",
                  f.splat, splat_param_name(f.param), f.analytic, f.fd,
                  f.rel_err);
    all_pass = all_pass && r.pass;
  }
  return all_pass ? 0 : 5;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sparse-view surfel surface reconstruction"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  GenSceneOpts gen;
  CLI::App* gen_cmd = app.add_subcommand("gen-scene", "generate a synthetic scene bundle");
  gen_cmd->add_option("--spec", gen.spec_path, "scene spec json");
  gen_cmd->add_option("--preset", gen.preset, "built-in scene name (reference)");
  gen_cmd->add_option("--out", gen.out, "output bundle directory")->required();

  FitOpts fit_opt;
  CLI::App* fit_cmd = app.add_subcommand("fit", "optimize surfels against a scene bundle");
  fit_cmd->add_option("--scene", fit_opt.scene, "scene bundle directory")->required();
  fit_cmd->add_option("--config", fit_opt.config, "training config json");
  fit_cmd->add_option("--out", fit_opt.out, "output directory")->required();
  fit_cmd->add_option("--set", fit_opt.sets,
                      "dotted config override key.path=value (repeatable)");
  fit_cmd->add_option("--weights", fit_opt.weights,
                      "comma-separated loss overrides, e.g. l1=0,l3=0.5");
  CLI::Option* fit_seed = fit_cmd->add_option("--seed", fit_opt.seed, "training seed");
  CLI::Option* fit_threads =
      fit_cmd->add_option("--threads", fit_opt.threads, "worker threads");
  fit_cmd->add_flag("--deterministic", fit_opt.deterministic,
                    "force single-threaded execution");
  fit_cmd->add_option("--views", fit_opt.views, "training view indices");

  ReconOpts recon;
  CLI::App* recon_cmd =
      app.add_subcommand("recon", "fuse rendered depth into a mesh and score it");
  recon_cmd->add_option("--splats", recon.splats, "surfel ply")->required();
  recon_cmd->add_option("--scene", recon.scene, "scene bundle directory")->required();
  recon_cmd->add_option("--out", recon.out, "output directory")->required();
  recon_cmd->add_option("--voxel", recon.voxel, "tsdf voxel size");
  recon_cmd->add_option("--tau", recon.tau, "tsdf truncation band");
  recon_cmd->add_option("--unit", recon.unit, "depth threshold unit (default: voxel)");
  recon_cmd->add_option("--samples", recon.samples, "mesh sample count for chamfer");
  recon_cmd->add_option("--seed", recon.seed, "mesh sampling seed");
  recon_cmd->add_option("--views", recon.views, "views to fuse (default: all)");
  recon_cmd->add_option("--threads", recon.threads, "worker threads");

  EvalDepthOpts eval_opt;
  CLI::App* eval_cmd =
      app.add_subcommand("eval-depth", "compare rendered depth against ground truth");
  eval_cmd->add_option("--splats", eval_opt.splats, "surfel ply")->required();
  eval_cmd->add_option("--scene", eval_opt.scene, "scene bundle directory")->required();
  eval_cmd->add_option("--out", eval_opt.out, "output directory")->required();
  eval_cmd->add_option("--views", eval_opt.views, "views to evaluate (default: all)");
  eval_cmd->add_option("--unit", eval_opt.unit, "depth threshold unit");
  eval_cmd->add_option("--threads", eval_opt.threads, "worker threads");

  RenderCliOpts render_opt;
  CLI::App* render_cmd = app.add_subcommand("render", "render one view of a surfel set");
  render_cmd->add_option("--splats", render_opt.splats, "surfel ply")->required();
  render_cmd->add_option("--scene", render_opt.scene, "scene bundle directory")->required();
  render_cmd->add_option("--out", render_opt.out, "output directory")->required();
  render_cmd->add_option("--view", render_opt.view, "view index")->required();
  render_cmd->add_option("--threads", render_opt.threads, "worker threads");

  GradCheckOpts grad;
  CLI::App* grad_cmd = app.add_subcommand(
      "gradcheck", "verify analytic gradients against finite differences");
  grad_cmd->add_option("--loss", grad.loss,
                       "loss selector or 'all' (color, ranking, smoothness, "
                       "feature, distortion, normal, total)");
  grad_cmd->add_option("--tolerance", grad.tolerance, "relative error bound");
  grad_cmd->add_option("--seed", grad.seed, "scene seed");
  grad_cmd->add_option("--splats", grad.splats, "surfels to probe");

  try {
    app.parse(argc, argv);
    if (*gen_cmd) {
      if (gen.spec_path.empty() == gen.preset.empty())
        throw InvalidSpecError("gen-scene needs exactly one of --spec / --preset");
      return run_gen_scene(gen);
    }
    if (*fit_cmd) {
      fit_opt.seed_set = fit_seed->count() > 0;
      fit_opt.threads_set = fit_threads->count() > 0;
      return run_fit(fit_opt);
    }
    if (*recon_cmd) return run_recon(recon);
    if (*eval_cmd) return run_eval_depth(eval_opt);
    if (*render_cmd) return run_render(render_opt);
    if (*grad_cmd) return run_gradcheck(grad);
    return 1;
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    switch (e.kind()) {
      case Error::Kind::InvalidInput: return 2;
      case Error::Kind::Numerical: return 3;
      case Error::Kind::EmptyResult: return 4;
    }
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
}
