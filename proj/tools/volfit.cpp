// volfit: synthesize datasets, fit scenes, render and evaluate checkpoints.

#include "volfit/gradcheck.hpp"
#include "volfit/mesh.hpp"
#include "volfit/synthdata.hpp"
#include "volfit/train.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace volfit;

namespace {

struct SynthArgs {
  std::string scene = "solid_sphere";
  int cameras = 8;
  int frames = 1;
  int holdout = 2;
  int width = 64;
  int height = 64;
  double radius = 2.0;
  int steps = 512;
  std::uint64_t seed = 0;
  bool calibration_noise = false;
  bool no_background = false;
  int threads = 0;
  std::string out;
};

int cmd_synth(const SynthArgs& a) {
  SynthOptions opt;
  opt.scene = AnalyticScene::preset(parse_scene_kind(a.scene), a.frames, a.seed);
  opt.rig.cameras = a.cameras;
  opt.rig.holdout = a.holdout;
  opt.rig.width = a.width;
  opt.rig.height = a.height;
  opt.rig.radius = a.radius;
  opt.rig.seed = a.seed;
  opt.step_count = a.steps;
  opt.backgrounds = !a.no_background;
  opt.calibration_noise = a.calibration_noise;
  opt.threads = a.threads;
  Dataset d = synthesize(opt);
  save_dataset(a.out, d);
  std::printf("wrote %d cameras x %d frames to %s\n", d.cameras(), d.frames(), a.out.c_str());
  return 0;
}

struct FitArgs {
  std::string data;
  std::string out;
  std::string config;
  std::vector<std::string> set;
  std::optional<int> iters;
  std::optional<std::uint64_t> seed;
  int threads = 0;
  bool quiet = false;
};

RunConfig build_config(const FitArgs& a, const Dataset& d) {
  RunConfig cfg;
  if (!a.config.empty()) cfg = load_config(a.config);
  for (const auto& kv : a.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + kv + "'");
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (a.iters) cfg.train.iterations = *a.iters;
  if (a.seed) cfg.train.seed = *a.seed;
  bind_config_to_dataset(cfg, d);
  return cfg;
}

template <typename T>
int run_fit(const RunConfig& cfg, std::shared_ptr<const Dataset> data, const FitArgs& a) {
  Trainer<T> trainer(cfg, std::move(data), a.threads);
  FitOptions fo;
  fo.out_dir = a.out;
  const int every = std::max(1, cfg.train.iterations / 20);
  if (!a.quiet)
    fo.on_step = [&](std::int64_t step, const LossTerms& t) {
      if (step % every == 0 || step == cfg.train.iterations)
        std::printf("step %6lld  loss %.6g  mse %.6g  kl %.4g  tv %.4g  beta %.4g\n", static_cast<long long>(step),
                    t.total, t.mse, t.kl, t.tv, t.beta);
    };
  const FitResult r = fit(trainer, fo);
  if (r.holdout) std::printf("held-out mse %.6g (x1e4 %.4f)  psnr %.4f dB\n", r.holdout->mse, r.holdout->mse_e4(),
                             r.holdout->psnr);
  std::printf("checkpoint %s\n", r.checkpoint.string().c_str());
  return 0;
}

int cmd_fit(const FitArgs& a) {
  auto data = std::make_shared<Dataset>(load_dataset(a.data));
  data->root = fs::absolute(a.data);
  const RunConfig cfg = build_config(a, *data);
  return cfg.train.double_precision ? run_fit<double>(cfg, data, a) : run_fit<float>(cfg, data, a);
}

/// Trainer rebuilt from a checkpoint and its (possibly overridden) dataset.
template <typename T>
std::unique_ptr<Trainer<T>> restore_trainer(const Checkpoint& ckpt, const RunConfig& cfg, const std::string& data_dir,
                                            int threads, std::optional<int> steps) {
  const fs::path dir = data_dir.empty() ? checkpoint_data_dir(ckpt) : fs::path(data_dir);
  auto data = std::make_shared<Dataset>(load_dataset(dir));
  data->root = fs::absolute(dir);
  RunConfig c = cfg;
  if (steps) c.train.step_count = *steps;
  auto t = std::make_unique<Trainer<T>>(c, std::move(data), threads);
  t->restore(ckpt);
  return t;
}

struct RenderArgs {
  std::string ckpt;
  std::string data;
  std::vector<std::string> cameras;
  std::vector<int> frames;
  std::string out;
  std::string mesh;
  std::vector<int> interp;
  int interp_steps = 5;
  std::optional<int> steps;
  bool f32 = false;
  int threads = 0;
};

template <typename T>
void write_outputs(const fs::path& stem, const RenderOutput<T>& r, bool f32) {
  const Image<float> rgb = r.composite.template cast<float>();
  const Image<float> alpha = r.alpha.template cast<float>();
  const Image<float> depth = r.depth.template cast<float>();
  float dmax = 0.0f;
  for (float v : depth.data()) dmax = std::max(dmax, v);
  Image<float> depth_vis = depth;
  if (dmax > 0)
    for (float& v : depth_vis.data()) v /= dmax;
  write_png(stem.string() + "_rgb.png", rgb);
  write_png(stem.string() + "_alpha.png", alpha);
  write_png(stem.string() + "_depth.png", depth_vis);
  if (f32) {
    write_f32img(stem.string() + "_rgb.f32img", rgb);
    write_f32img(stem.string() + "_alpha.f32img", alpha);
    write_f32img(stem.string() + "_depth.f32img", depth);
  }
}

template <typename T>
int run_render(const Checkpoint& ckpt, const RunConfig& cfg, const RenderArgs& a) {
  auto trainer = restore_trainer<T>(ckpt, cfg, a.data, a.threads, a.steps);
  const Dataset& d = trainer->dataset();
  std::optional<TriMesh<T>> mesh;
  if (!a.mesh.empty()) mesh = read_obj(a.mesh).template cast<T>();
  std::vector<int> cams;
  if (a.cameras.empty())
    for (int c = 0; c < d.cameras(); ++c) cams.push_back(c);
  for (const auto& name : a.cameras) cams.push_back(d.rig.find(name));
  const std::vector<int> frames = a.frames.empty() ? std::vector<int>{0} : a.frames;
  fs::create_directories(a.out);
  const TriMesh<T>* mp = mesh ? &*mesh : nullptr;
  int written = 0;
  for (int c : cams) {
    const std::string& id = d.rig.cameras[c].camera.id;
    if (!a.interp.empty()) {
      if (a.interp.size() != 2) throw ConfigError("--interp takes two frame indices");
      if (cfg.model.mode == ModelMode::direct) throw ConfigError("latent interpolation needs a latent-mode model");
      const std::vector<T> za = trainer->latent(a.interp[0]).z, zb = trainer->latent(a.interp[1]).z;
      const int n = std::max(2, a.interp_steps);
      for (int k = 0; k < n; ++k) {
        const T t = T(k) / T(n - 1);
        const std::vector<T> z = latent_interpolate<T>(za, zb, t);
        char stem[64];
        std::snprintf(stem, sizeof stem, "%s_interp%03d", id.c_str(), k);
        write_outputs(fs::path(a.out) / stem, trainer->render(c, a.interp[0], mp, &z), a.f32);
        ++written;
      }
      continue;
    }
    for (int f : frames) {
      char stem[64];
      std::snprintf(stem, sizeof stem, "%s_f%03d", id.c_str(), f);
      write_outputs(fs::path(a.out) / stem, trainer->render(c, f, mp), a.f32);
      ++written;
    }
  }
  std::printf("rendered %d views to %s\n", written, a.out.c_str());
  return 0;
}

struct EvalArgs {
  std::string ckpt;
  std::string data;
  bool holdout = false;
  bool train = false;
  std::optional<int> steps;
  int threads = 0;
};

void print_report(const char* title, const EvalReport& r) {
  std::printf("%s\n%-12s %14s %12s %10s\n", title, "camera", "mse", "mse_x1e4", "psnr_db");
  for (const auto& c : r.cameras) std::printf("%-12s %14.9g %12.6f %10.4f\n", c.camera.c_str(), c.mse, c.mse * 1e4, c.psnr);
  std::printf("%-12s %14.9g %12.6f %10.4f\n", "mean", r.mse, r.mse_e4(), r.psnr);
}

template <typename T>
int run_eval(const Checkpoint& ckpt, const RunConfig& cfg, const EvalArgs& a) {
  auto trainer = restore_trainer<T>(ckpt, cfg, a.data, a.threads, a.steps);
  const Dataset& d = trainer->dataset();
  const bool both = !a.holdout && !a.train;
  if (a.holdout || both) {
    const auto cams = d.holdout_cameras();
    if (cams.empty()) std::printf("no held-out cameras\n");
    else print_report("held-out cameras", trainer->evaluate(cams));
  }
  if (a.train || both) print_report("training cameras", trainer->evaluate(d.train_cameras()));
  return 0;
}

struct GradArgs {
  std::string mode = "direct";
  std::string source = "free";
  bool view = false;
  bool no_warp = false;
  std::string space = "warped";
  std::string background = "learned";
  int resolution = 4;
  int cameras = 2;
  int size = 8;
  int frames = 1;
  int steps = 32;
  int instances = 1;
  std::uint64_t seed = 1;
  double tol = 1e-4;
  int max_coords = 64;
};

int cmd_gradcheck(const GradArgs& a) {
  GradcheckOptions o;
  RunConfig probe;
  set_config_value(probe, "model.mode", a.mode);
  set_config_value(probe, "model.latent_source", a.source);
  set_config_value(probe, "model.mixture_space", a.space);
  set_config_value(probe, "train.background", a.background);
  o.mode = probe.model.mode;
  o.latent_source = probe.model.latent_source;
  o.mixture_space = probe.model.mixture_space;
  o.background = probe.train.background;
  o.view_conditioning = a.view;
  o.warp = !a.no_warp;
  o.resolution = a.resolution;
  o.cameras = a.cameras;
  o.image_size = a.size;
  o.frames = a.frames;
  o.step_count = a.steps;
  o.fd.tol = a.tol;
  o.fd.max_coords = a.max_coords;
  bool ok = true;
  for (int i = 0; i < a.instances; ++i) {
    o.seed = a.seed + static_cast<std::uint64_t>(i);
    const GradcheckResult r = run_gradcheck(o);
    std::printf("instance %d (seed %llu) loss %.9g max_rel_err %.3e %s\n", i, static_cast<unsigned long long>(o.seed),
                r.loss, r.report.max_rel_err, r.report.passed ? "ok" : "FAIL");
    for (const auto& t : r.report.tensors)
      std::printf("  %-28s rel %.3e abs %.3e scale %.3e checked %d excluded %d %s\n", t.name.c_str(), t.max_rel_err,
                  t.max_abs_err, t.grad_scale, t.checked, t.excluded, t.passed ? "" : "FAIL");
    ok = ok && r.report.passed;
  }
  std::printf("gradcheck %s\n", ok ? "passed" : "FAILED");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"volfit: differentiable volumetric scene fitting"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "generate a synthetic multi-view dataset");
  synth->add_option("--scene", sa.scene, "solid_sphere | translucent_sphere | two_blob_articulated | smoke_noise | colored_cube")
      ->capture_default_str();
  synth->add_option("--cameras", sa.cameras, "number of cameras")->capture_default_str();
  synth->add_option("--frames", sa.frames, "number of frames")->capture_default_str();
  synth->add_option("--holdout", sa.holdout, "held-out cameras")->capture_default_str();
  synth->add_option("--width", sa.width)->capture_default_str();
  synth->add_option("--height", sa.height)->capture_default_str();
  synth->add_option("--radius", sa.radius, "rig radius")->capture_default_str();
  synth->add_option("--steps", sa.steps, "ray-march steps for the target images")->capture_default_str();
  synth->add_option("--seed", sa.seed)->capture_default_str();
  synth->add_flag("--calibration-noise", sa.calibration_noise, "perturb per-camera gain and bias");
  synth->add_flag("--no-background", sa.no_background, "black backgrounds, none recorded");
  synth->add_option("--threads", sa.threads, "workers (0: VOLFIT_THREADS or all cores)");
  synth->add_option("--out", sa.out, "output directory")->required();

  FitArgs fa;
  auto* fitc = app.add_subcommand("fit", "fit a scene model to a dataset");
  fitc->add_option("--data", fa.data, "dataset directory")->required()->check(CLI::ExistingDirectory);
  fitc->add_option("--out", fa.out, "output directory")->required();
  fitc->add_option("--config", fa.config, "JSON config file")->check(CLI::ExistingFile);
  fitc->add_option("--set", fa.set, "override section.key=value (repeatable)");
  fitc->add_option("--iters", fa.iters, "iterations");
  fitc->add_option("--seed", fa.seed, "training seed");
  fitc->add_option("--threads", fa.threads, "workers (0: VOLFIT_THREADS or all cores)");
  fitc->add_flag("--quiet", fa.quiet, "no progress lines");

  RenderArgs ra;
  auto* render = app.add_subcommand("render", "render rgb, alpha and depth images from a checkpoint");
  render->add_option("--ckpt", ra.ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  render->add_option("--data", ra.data, "dataset directory (default: the one recorded in the checkpoint)");
  render->add_option("--camera", ra.cameras, "camera name (repeatable; default all)");
  render->add_option("--frame", ra.frames, "frame index (repeatable; default 0)");
  render->add_option("--out", ra.out, "output directory")->required();
  render->add_option("--mesh", ra.mesh, "OBJ mesh for hybrid rendering")->check(CLI::ExistingFile);
  render->add_option("--interp", ra.interp, "interpolate latent codes between two frames")->expected(2);
  render->add_option("--interp-steps", ra.interp_steps, "images along the interpolation")->capture_default_str();
  render->add_option("--steps", ra.steps, "ray-march step count override");
  render->add_flag("--f32", ra.f32, "also write lossless .f32img files");
  render->add_option("--threads", ra.threads, "workers");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "report per-camera MSE and PSNR");
  eval->add_option("--ckpt", ea.ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", ea.data, "dataset directory (default: the one recorded in the checkpoint)");
  eval->add_flag("--holdout", ea.holdout, "held-out cameras only");
  eval->add_flag("--train", ea.train, "training cameras only");
  eval->add_option("--steps", ea.steps, "ray-march step count override");
  eval->add_option("--threads", ea.threads, "workers");

  GradArgs ga;
  auto* grad = app.add_subcommand("gradcheck", "compare analytic gradients with finite differences");
  grad->add_option("--mode", ga.mode, "direct | latent")->capture_default_str();
  grad->add_option("--latent-source", ga.source, "encoder | free")->capture_default_str();
  grad->add_flag("--view-conditioning", ga.view);
  grad->add_flag("--no-warp", ga.no_warp);
  grad->add_option("--mixture-space", ga.space, "warped | world")->capture_default_str();
  grad->add_option("--background", ga.background, "known | learned | none")->capture_default_str();
  grad->add_option("--resolution", ga.resolution)->capture_default_str();
  grad->add_option("--cameras", ga.cameras)->capture_default_str();
  grad->add_option("--size", ga.size, "image side in pixels")->capture_default_str();
  grad->add_option("--frames", ga.frames)->capture_default_str();
  grad->add_option("--steps", ga.steps)->capture_default_str();
  grad->add_option("--instances", ga.instances)->capture_default_str();
  grad->add_option("--seed", ga.seed)->capture_default_str();
  grad->add_option("--tol", ga.tol)->capture_default_str();
  grad->add_option("--max-coords", ga.max_coords)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) return cmd_synth(sa);
    if (*fitc) return cmd_fit(fa);
    if (*render || *eval) {
      const Checkpoint ckpt = load_checkpoint(*render ? ra.ckpt : ea.ckpt);
      const RunConfig cfg = checkpoint_config(ckpt);
      const bool dbl = cfg.train.double_precision;
      if (*render) return dbl ? run_render<double>(ckpt, cfg, ra) : run_render<float>(ckpt, cfg, ra);
      return dbl ? run_eval<double>(ckpt, cfg, ea) : run_eval<float>(ckpt, cfg, ea);
    }
    if (*grad) return cmd_gradcheck(ga);
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
