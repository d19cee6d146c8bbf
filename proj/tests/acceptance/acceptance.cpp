// Acceptance suite: one PASS/FAIL line per criterion.
//
//   volfit_acceptance [--only N]... [--threads N]
//
// Exit status is nonzero when any selected criterion fails.
#include "volfit/checkpoint.hpp"
#include "volfit/gradcheck.hpp"
#include "volfit/render.hpp"
#include "volfit/synthdata.hpp"
#include "volfit/train.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

using namespace volfit;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

int g_threads = 0;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- 1 ---------------------------------------------------------------------

SceneState<double> random_state(std::mt19937_64& rng, int index) {
  std::uniform_real_distribution<double> u(0, 1);
  SceneState<double> s;
  const int d = 3 + index % 4;
  s.tmpl = VoxelGrid<double>(4, d);
  for (int c = 0; c < 4; ++c)
    for (auto& v : s.tmpl.channel(c)) v = c == 3 ? 4 * u(rng) : u(rng);
  s.bounds = {Vec3<double>(0.4 * u(rng) - 0.2, 0.4 * u(rng) - 0.2, 0.4 * u(rng) - 0.2), 0.8 + 0.7 * u(rng)};
  if (index % 3 != 0) {
    WarpField<double> wf;
    wf.space = index % 2 ? MixtureSpace::warped : MixtureSpace::world;
    auto affine = [&](AffineWarp<double>& a) {
      a.quat = Vec4<double>(1, 0.3 * u(rng) - 0.15, 0.3 * u(rng) - 0.15, 0.3 * u(rng) - 0.15);
      a.scale = Vec3<double>(0.8 + 0.4 * u(rng), 0.8 + 0.4 * u(rng), 0.8 + 0.4 * u(rng));
      a.trans = Vec3<double>(0.4 * u(rng) - 0.2, 0.4 * u(rng) - 0.2, 0.4 * u(rng) - 0.2);
    };
    affine(wf.global);
    wf.components.resize(1 + index % 3);
    for (auto& c : wf.components) affine(c);
    wf.weights = VoxelGrid<double>(wf.size(), 3);
    for (auto& v : wf.weights.data()) v = 0.2 + 1.8 * u(rng);
    s.warp = wf;
  }
  return s;
}

Camera<double> random_camera(std::mt19937_64& rng, const Aabb<double>& box, int size) {
  std::uniform_real_distribution<double> u(0, 1);
  const double phi = 2 * std::numbers::pi * u(rng), z = 2 * u(rng) - 1;
  const Vec3<double> dir(std::sqrt(1 - z * z) * std::cos(phi), std::sqrt(1 - z * z) * std::sin(phi), z);
  const Vec3<double> up = std::abs(z) > 0.9 ? Vec3<double>::UnitX() : Vec3<double>::UnitZ();
  Camera<double> cam = look_at_camera<double>("c", box.center + (2 + u(rng)) * box.side * dir, box.center, up,
                                              size * (0.9 + 0.6 * u(rng)), size, size);
  cam.gain = Vec3<double>(0.8 + 0.4 * u(rng), 0.8 + 0.4 * u(rng), 0.8 + 0.4 * u(rng));
  cam.bias = Vec3<double>(0.1 * u(rng) - 0.05, 0.1 * u(rng) - 0.05, 0.1 * u(rng) - 0.05);
  return cam;
}

TriMesh<double> random_mesh(std::mt19937_64& rng, const Aabb<double>& box) {
  std::uniform_real_distribution<double> u(-1, 1);
  TriMesh<double> m;
  // A random quad through the middle of the box plus one free triangle.
  const Vec3<double> n = Vec3<double>(u(rng), u(rng), u(rng)).normalized();
  const Vec3<double> a = n.unitOrthogonal(), b = n.cross(a);
  const double h = 0.45 * box.side;
  for (const auto& [s, t] : std::vector<std::pair<double, double>>{{-1, -1}, {1, -1}, {1, 1}, {-1, 1}})
    m.vertices.push_back(box.center + h * (s * a + t * b) + 0.1 * box.side * u(rng) * n);
  for (int k = 0; k < 3; ++k) m.vertices.push_back(box.center + 0.5 * box.side * Vec3<double>(u(rng), u(rng), u(rng)));
  for (std::size_t k = 0; k < m.vertices.size(); ++k)
    m.colors.push_back(Vec3<double>(0.5 + 0.5 * u(rng), 0.5 + 0.5 * u(rng), 0.5 + 0.5 * u(rng)));
  m.triangles = {{0, 1, 2}, {0, 2, 3}, {4, 5, 6}};
  return m;
}

Outcome oracle_equivalence() {
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> u(0, 1);
  WorkerPool pool(resolve_thread_count(g_threads));
  double worst = 0;
  int with_mesh = 0, with_bg = 0, mesh_pixels = 0;
  for (int i = 0; i < 100; ++i) {
    const SceneState<double> s = random_state(rng, i);
    const int size = 12 + 4 * (i % 3);
    Camera<double> cam = random_camera(rng, s.bounds, size);
    if (i % 2 == 0) {
      Image<double> bg(size, size, 3);
      for (auto& v : bg.data()) v = u(rng);
      cam.background = bg;
      ++with_bg;
    }
    std::optional<TriMesh<double>> mesh;
    if (i % 4 == 1) {
      mesh = random_mesh(rng, s.bounds);
      ++with_mesh;
    }
    const int steps = 32 + 16 * (i % 3);
    const TriMesh<double>* mp = mesh ? &*mesh : nullptr;
    const RenderOutput<double> out = render_image<double>(s, cam, mp, steps, pool);
    Image<double> alpha, depth;
    const Image<double> ref = oracle_render(reference_volume(s), cam, s.bounds, steps, mp, &alpha, &depth);
    for (std::size_t k = 0; k < ref.data().size(); ++k)
      worst = std::max(worst, std::abs(out.composite.data()[k] - ref.data()[k]));
    for (std::size_t k = 0; k < alpha.data().size(); ++k) {
      worst = std::max(worst, std::abs(out.alpha.data()[k] - alpha.data()[k]));
      if (mp) {
        const RayGenerator<double> gen(cam);
        const Ray<double> r = gen(pixel_center<double>(static_cast<int>(k) % size, static_cast<int>(k) / size));
        mesh_pixels += intersect_mesh(*mp, r.origin, r.direction).has_value();
      }
    }
  }
  return {worst <= 1e-6, fmt("max |production - oracle| = %.3e over 100 instances (%d with mesh, %d mesh-hit pixels, "
                             "%d with background); tol 1e-6",
                             worst, with_mesh, mesh_pixels, with_bg)};
}

// ---- 2 ---------------------------------------------------------------------

Outcome gradient_correctness() {
  double worst = 0;
  int failed = 0, probes = 0, excluded = 0, runs = 0;
  auto check = [&](GradcheckOptions o) {
    o.fd.max_coords = 64;
    const GradcheckResult r = run_gradcheck(o);
    ++runs;
    worst = std::max(worst, r.report.max_rel_err);
    failed += !r.report.passed || !(r.report.max_rel_err < 1e-4);
    for (const auto& t : r.report.tensors) {
      probes += t.checked;
      excluded += t.excluded;
    }
  };
  const BackgroundMode bgs[] = {BackgroundMode::learned, BackgroundMode::known, BackgroundMode::none};
  for (int i = 0; i < 50; ++i) {
    GradcheckOptions o;
    o.seed = 1000 + i;
    o.mixture_space = i % 2 ? MixtureSpace::world : MixtureSpace::warped;
    o.background = bgs[i % 3];
    o.warp = i % 5 != 4;
    check(o);
  }
  const int direct_runs = runs;
  for (int i = 0; i < 6; ++i) {
    GradcheckOptions o;
    o.seed = 2000 + i;
    o.mode = ModelMode::latent;
    o.frames = 2;
    o.latent_source = i % 2 ? LatentSource::encoder : LatentSource::free;
    o.view_conditioning = i >= 4;
    o.mixture_space = i % 3 == 2 ? MixtureSpace::world : MixtureSpace::warped;
    check(o);
  }
  return {failed == 0 && worst < 1e-4,
          fmt("max rel err %.3e over %d direct + %d latent instances (%d probes, %d non-smooth excluded); tol 1e-4",
              worst, direct_runs, runs - direct_runs, probes, excluded)};
}

// ---- 3 ---------------------------------------------------------------------

struct ConstantVolume {
  Vec3<double> rgb;
  double alpha;
  VolumeSample<double> operator()(const Vec3<double>&) const { return {rgb, alpha}; }
};

Outcome closed_forms() {
  std::vector<std::string> bad;
  const Vec3<double> c(0.3, 0.6, 0.9);
  const RayState<double> s =
      march_ray(ConstantVolume{c, 0.5}, Vec3<double>(0, 0, 0), Vec3<double>(1, 0, 0), 0.0, 1.0, 0.25);
  const double slab_err = std::max(std::abs(s.alpha - 0.5), (s.rgb - 0.5 * c).cwiseAbs().maxCoeff());
  if (!(slab_err <= 1e-12)) bad.push_back("slab");

  const double beta = beta_prior<double>(std::vector<double>{0.5}, 0.1, 1e-5);
  if (!(std::abs(beta - 0.2 * std::log(0.5)) <= 1e-9)) bad.push_back("beta");

  const double kl = kl_normal<double>(std::vector<double>{1.0}, std::vector<double>{0.0});
  if (!(std::abs(kl - 0.5) <= 1e-9)) bad.push_back("kl");

  ModelConfig mc;
  mc.template_res = 8;
  mc.warp_count = 2;
  mc.warp_res = 4;
  const SceneState<double> init = SceneModel<double>(mc).direct_state();
  double init_err = 0;
  for (double v : init.tmpl.data()) init_err = std::max(init_err, std::abs(v - 0.693147));
  // 0.693147 is ln 2 rounded to six places.
  const bool init_ok = init_err <= 0.5e-6 && std::abs(std::log1p(std::exp(0.0)) - std::log(2.0)) <= 1e-15;
  if (!init_ok) bad.push_back("softplus init");

  std::string detail = fmt("slab err %.1e (tol 1e-12); beta %.12f vs 0.2 ln 0.5 = %.12f; KL %.12f; template init "
                           "%.6f",
                           slab_err, beta, 0.2 * std::log(0.5), kl, init.tmpl.data()[0]);
  for (const auto& b : bad) detail += "; FAILED " + b;
  return {bad.empty(), detail};
}

// ---- shared fitting helpers -------------------------------------------------

std::shared_ptr<Dataset> make_dataset(SceneKind kind, int frames, int cameras, int holdout, int size,
                                      std::uint64_t seed = 0) {
  SynthOptions so;
  so.scene = AnalyticScene::preset(kind, frames, seed);
  so.rig.cameras = cameras;
  so.rig.holdout = holdout;
  so.rig.width = so.rig.height = size;
  so.rig.seed = seed;
  so.step_count = 512;
  so.threads = g_threads;
  return std::make_shared<Dataset>(synthesize(so));
}

RunConfig bound(RunConfig cfg, const Dataset& d) {
  bind_config_to_dataset(cfg, d);
  return cfg;
}

/// Direct single-frame settings shared by criteria 4, 6 and 7.
RunConfig direct_fit_config() {
  RunConfig cfg;
  cfg.model.template_res = 32;
  cfg.model.warp_enabled = false;
  cfg.train.lr = 0.05;
  cfg.train.batch_size = 4;
  cfg.train.pixels_per_image = 2048;
  cfg.train.iterations = 2000;
  // The synthetic cameras are calibrated exactly.
  cfg.train.learn_calibration = false;
  cfg.loss.beta = 0.0;
  return cfg;
}

struct FitSummary {
  std::vector<double> train_mse;
  EvalReport holdout;
  double seconds = 0;
};

/// Runs `iters` steps (or until `stop` returns true) and evaluates the
/// held-out cameras.
FitSummary run_fit(const RunConfig& cfg, std::shared_ptr<const Dataset> d, int iters,
                   const std::function<bool(const std::vector<double>&)>& stop = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig run = bound(cfg, *d);
  run.train.iterations = iters;
  Trainer<float> tr(run, d, g_threads);
  FitSummary s;
  if (stop) {
    std::mt19937_64 rng(cfg.train.seed);
    for (int i = 0; i < iters; ++i) {
      s.train_mse.push_back(tr.train_step(rng).mse);
      if (stop(s.train_mse)) break;
    }
  } else {
    // Same loop as `volfit fit`, so the CLI reproduces these numbers.
    for (const auto& l : fit(tr, FitOptions{{}, {}, false}).losses) s.train_mse.push_back(l.mse);
  }
  s.holdout = tr.evaluate(d->holdout_cameras());
  s.seconds = seconds_since(t0);
  return s;
}

// ---- 4 ---------------------------------------------------------------------

Outcome fit_recovery() {
  const auto d = make_dataset(SceneKind::solid_sphere, 1, 10, 2, 64);
  const RunConfig cfg = direct_fit_config();
  const FitSummary s = run_fit(cfg, d, cfg.train.iterations);
  return {s.holdout.psnr >= 30.0,
          fmt("held-out PSNR %.3f dB after %d iterations (8 train + 2 held-out, 64x64, D=32; %.0f s); need >= 30",
              s.holdout.psnr, cfg.train.iterations, s.seconds)};
}

// ---- 5 ---------------------------------------------------------------------

Outcome warp_ablation() {
  const auto d = make_dataset(SceneKind::two_blob_articulated, 8, 10, 2, 32);
  RunConfig base;
  base.model.mode = ModelMode::latent;
  base.model.latent_source = LatentSource::free;
  base.model.template_res = 16;
  base.model.warp_count = 8;
  base.model.warp_res = 8;
  base.model.latent_dim = 8;
  base.train.lr = 2e-3;
  base.train.batch_size = 4;
  base.train.pixels_per_image = 512;
  base.train.step_count = 64;
  base.loss.beta = 0.0;
  const int iters = 1000;
  struct Variant {
    const char* name;
    bool warp;
    MixtureSpace space;
    double mse = 0;
  };
  std::vector<Variant> v = {{"warped-mixture", true, MixtureSpace::warped},
                            {"world-mixture", true, MixtureSpace::world},
                            {"no-warp", false, MixtureSpace::warped}};
  double secs = 0;
  for (auto& x : v) {
    RunConfig cfg = base;
    cfg.model.warp_enabled = x.warp;
    cfg.model.mixture_space = x.space;
    const FitSummary s = run_fit(cfg, d, iters);
    x.mse = s.holdout.mse;
    secs += s.seconds;
  }
  const bool pass = v[0].mse <= 0.95 * v[1].mse && v[1].mse <= 0.95 * v[2].mse;
  return {pass, fmt("held-out MSE x1e4: warped %.3f, world %.3f, no-warp %.3f (margins %.1f%%, %.1f%%; need >= 5%%); "
                    "8 frames, %d iterations each, %.0f s",
                    v[0].mse * 1e4, v[1].mse * 1e4, v[2].mse * 1e4, 100 * (1 - v[0].mse / v[1].mse),
                    100 * (1 - v[1].mse / v[2].mse), iters, secs)};
}

// ---- 6 ---------------------------------------------------------------------

Outcome priors_ablation() {
  const auto d = make_dataset(SceneKind::translucent_sphere, 1, 10, 2, 64);
  RunConfig cfg = direct_fit_config();
  cfg.train.background = BackgroundMode::learned;
  cfg.loss = LossWeights{};  // both opacity priors at their default weights
  const int iters = 1000;
  cfg.train.priors = true;
  const FitSummary with = run_fit(cfg, d, iters);
  cfg.train.priors = false;
  const FitSummary without = run_fit(cfg, d, iters);
  return {with.holdout.mse < without.holdout.mse,
          fmt("held-out MSE x1e4 with priors %.3f, without %.3f (%d iterations, learned backgrounds, %.0f s)",
              with.holdout.mse * 1e4, without.holdout.mse * 1e4, iters, with.seconds + without.seconds)};
}

// ---- 7 ---------------------------------------------------------------------

Outcome background_behavior() {
  // Bit-exact: an empty volume composites to the background with g = 1, b = 0.
  const auto d = make_dataset(SceneKind::solid_sphere, 1, 10, 2, 64);
  SceneState<float> empty;
  empty.tmpl = VoxelGrid<float>(4, 32);
  empty.bounds = {d->rig.bounds.center.cast<float>(), static_cast<float>(d->rig.bounds.side)};
  WorkerPool pool(resolve_thread_count(g_threads));
  int mismatched = 0;
  for (int c = 0; c < d->cameras(); ++c) {
    Camera<float> cam = d->rig.cameras[c].camera.cast<float>();
    cam.background = *d->backgrounds[c];
    const RenderOutput<float> out = render_image<float>(empty, cam, nullptr, 128, pool);
    mismatched += out.composite.data() != d->backgrounds[c]->data();
  }

  // Convergence: first iteration whose trailing 50-step mean training MSE
  // reaches the threshold.
  const double threshold = 2e-3;
  const int window = 50, cap = 4000;
  auto converged_at = [&](BackgroundMode mode, double& secs) {
    RunConfig cfg = direct_fit_config();
    cfg.train.background = mode;
    int at = -1;
    const FitSummary s = run_fit(cfg, d, cap, [&](const std::vector<double>& mse) {
      if (static_cast<int>(mse.size()) < window) return false;
      double m = 0;
      for (std::size_t i = mse.size() - window; i < mse.size(); ++i) m += mse[i] / window;
      if (m <= threshold) at = static_cast<int>(mse.size());
      return at > 0;
    });
    secs += s.seconds;
    return at;
  };
  double secs = 0;
  const int known = converged_at(BackgroundMode::known, secs);
  const int learned = converged_at(BackgroundMode::learned, secs);
  const bool both = known > 0 && learned > 0;
  const double ratio = both ? double(std::max(known, learned)) / std::min(known, learned) : INFINITY;
  return {mismatched == 0 && both && ratio <= 2.0,
          fmt("empty-model composite bit-exact on %d/%d cameras; training MSE <= %.0e (trailing %d) reached at "
              "iteration %d (known) and %d (learned), ratio %.2f (need <= 2; %.0f s)",
              d->cameras() - mismatched, d->cameras(), threshold, window, known, learned, ratio, secs)};
}

// ---- 8 ---------------------------------------------------------------------

Outcome reproducibility() {
  const auto d = make_dataset(SceneKind::two_blob_articulated, 1, 6, 1, 32);
  RunConfig cfg;
  cfg.model.template_res = 16;
  cfg.model.warp_count = 4;
  cfg.model.warp_res = 8;
  cfg.train.iterations = 40;
  cfg.train.batch_size = 4;
  cfg.train.pixels_per_image = 256;
  cfg.train.step_count = 64;
  cfg.train.lr = 0.02;
  cfg.train.background = BackgroundMode::learned;
  cfg = bound(cfg, *d);
  const fs::path root = fs::temp_directory_path() / "volfit_acceptance_repro";
  fs::remove_all(root);
  const int workers = std::max(2, resolve_thread_count(g_threads));
  for (const char* run : {"a", "b"}) {
    Trainer<float> tr(cfg, d, workers);
    fit(tr, FitOptions{root / run, {}, false});
  }
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  const bool losses = slurp(root / "a" / "loss.txt") == slurp(root / "b" / "loss.txt");
  const Checkpoint a = load_checkpoint(root / "a" / "checkpoint.nvckpt");
  const Checkpoint b = load_checkpoint(root / "b" / "checkpoint.nvckpt");
  int differing = 0;
  if (a.tensors().size() != b.tensors().size()) differing = -1;
  for (std::size_t k = 0; differing >= 0 && k < a.tensors().size(); ++k)
    differing += a.tensors()[k].name != b.tensors()[k].name || a.tensors()[k].crc != b.tensors()[k].crc;
  const bool nonempty = !slurp(root / "a" / "loss.txt").empty();
  return {losses && nonempty && differing == 0,
          fmt("loss logs %s; %zu checkpoint tensors, %d with differing CRC (%d workers, %d iterations)",
              losses ? "identical" : "DIFFER", a.tensors().size(), differing, workers, cfg.train.iterations)};
}

// ---- 9 ---------------------------------------------------------------------

Outcome render_speed() {
  RunConfig cfg;
  cfg.model.template_res = 32;
  SceneModel<float> model(cfg.model);
  // Bake the analytic sphere into the template so rays terminate realistically.
  auto& raw = model.params().get("template.raw").value.data;
  const AnalyticScene scene = AnalyticScene::preset(SceneKind::solid_sphere);
  const int n = 32;
  const std::size_t voxels = std::size_t(n) * n * n;
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const Vec3<double> p(2.0 * x / (n - 1) - 1, 2.0 * y / (n - 1) - 1, 2.0 * z / (n - 1) - 1);
        const VolumeSample<double> v = eval_analytic(scene, 0, p);
        const std::size_t i = (std::size_t(z) * n + y) * n + x;
        for (int c = 0; c < 3; ++c) raw[c * voxels + i] = static_cast<float>(v.rgb[c]);
        raw[3 * voxels + i] = v.alpha > 0 ? 20.0f : -8.0f;
      }
  const SceneState<float> state = model.direct_state();
  RigOptions ro;
  ro.width = ro.height = 256;
  ro.cameras = 2;
  ro.holdout = 0;
  Camera<float> cam = make_rig(ro)[0].camera.cast<float>();
  cam.background = procedural_background(256, 256, 0, 0);
  const int workers = resolve_thread_count(g_threads);
  WorkerPool pool(workers);
  render_image<float>(state, cam, nullptr, 128, pool);  // warm-up
  double best = INFINITY;
  for (int k = 0; k < 3; ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    const RenderOutput<float> out = render_image<float>(state, cam, nullptr, 128, pool);
    best = std::min(best, seconds_since(t0));
  }
  return {best < 5.0, fmt("256x256 render, 128 steps, D=32 direct model with %d-component warp: %.3f s on %d "
                          "worker(s); need < 5 s",
                          cfg.model.warp_count, best, workers)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"volfit acceptance suite"};
  std::vector<int> only;
  app.add_option("--only", only, "run only these criteria (1-9)")->check(CLI::Range(1, 9));
  app.add_option("--threads", g_threads, "workers (0: VOLFIT_THREADS or all cores)");
  CLI11_PARSE(app, argc, argv);

  struct Entry {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Entry> entries = {{1, "oracle equivalence", oracle_equivalence},
                                      {2, "gradient correctness", gradient_correctness},
                                      {3, "closed-form checks", closed_forms},
                                      {4, "fit recovery", fit_recovery},
                                      {5, "warp ablation trend", warp_ablation},
                                      {6, "priors ablation trend", priors_ablation},
                                      {7, "background behavior", background_behavior},
                                      {8, "reproducibility", reproducibility},
                                      {9, "render performance", render_speed}};
  int failures = 0;
  for (const auto& e : entries) {
    if (!only.empty() && std::find(only.begin(), only.end(), e.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = e.run();
    } catch (const std::exception& ex) {
      o = {false, std::string("error: ") + ex.what()};
    }
    failures += !o.pass;
    std::printf("criterion %d %-22s %s  %s  [%.1f s]\n", e.id, e.name, o.pass ? "PASS" : "FAIL", o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
