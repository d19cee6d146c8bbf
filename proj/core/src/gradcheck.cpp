#include "volfit/gradcheck.hpp"

#include "volfit/synthdata.hpp"
#include "volfit/train.hpp"

#include <memory>
#include <random>

namespace volfit {

Dataset random_dataset(int cameras, int size, int frames, std::uint64_t seed) {
  RigOptions ro;
  ro.cameras = cameras;
  ro.width = ro.height = size;
  ro.holdout = 0;
  ro.seed = seed;
  Dataset d;
  d.rig.frames = frames;
  d.rig.cameras = make_rig(ro);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& rc : d.rig.cameras) {
    rc.images.assign(frames, std::string());
    std::vector<Image<float>> imgs;
    for (int f = 0; f < frames; ++f) {
      Image<float> img(size, size, 3);
      for (float& v : img.data()) v = u(rng);
      imgs.push_back(std::move(img));
    }
    d.images.push_back(std::move(imgs));
    Image<float> bg(size, size, 3);
    for (float& v : bg.data()) v = u(rng);
    d.backgrounds.emplace_back(std::move(bg));
  }
  return d;
}

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

/// Moves every parameter off its initialization so no gradient is trivially 0.
void perturb(ParamStore<double>& store, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& p : store.params()) {
    auto& v = p.value.data;
    if (p.name == "template.raw") {
      for (auto& x : v) x = 0.8 * n(rng) - 0.3;
    } else if (ends_with(p.name, ".quat")) {
      for (auto& x : v) x += 0.2 * n(rng);
    } else if (p.name.rfind("warp.", 0) == 0 && ends_with(p.name, ".scale")) {
      for (auto& x : v) x *= 1.0 + 0.2 * u(rng);
    } else if (ends_with(p.name, ".trans")) {
      for (auto& x : v) x += 0.1 * n(rng);
    } else if (p.name == "warp.weights") {
      for (auto& x : v) x = n(rng);
    } else if (ends_with(p.name, ".gain")) {
      for (auto& x : v) x = 1.0 + 0.1 * u(rng);
    } else if (ends_with(p.name, ".bias")) {
      for (auto& x : v) x = 0.05 * u(rng);
    } else if (ends_with(p.name, ".background")) {
      for (auto& x : v) x = 0.5 + 0.4 * u(rng);
    } else if (p.name == "latent.codes") {
      for (auto& x : v) x = 0.5 * n(rng);
    } else if (p.group == ParamGroup::network) {
      for (auto& x : v) x += 0.05 * n(rng);
    }
  }
}

}  // namespace

GradcheckResult run_gradcheck(const GradcheckOptions& opt) {
  auto data = std::make_shared<Dataset>(random_dataset(opt.cameras, opt.image_size, opt.frames, opt.seed));
  RunConfig cfg;
  bind_config_to_dataset(cfg, *data);
  ModelConfig& m = cfg.model;
  m.mode = opt.mode;
  m.template_res = opt.resolution;
  m.warp_enabled = opt.warp;
  m.warp_count = 2;
  m.warp_res = opt.resolution;
  m.mixture_space = opt.mixture_space;
  m.latent_source = opt.latent_source;
  m.view_conditioning = opt.view_conditioning;
  m.latent_dim = 3;
  m.encoder_views = opt.cameras;
  m.encoder_res = 4;
  m.encoder_hidden = 8;
  m.decoder_hidden = 8;
  m.decoder_bottleneck = 4;
  m.warp_hidden = 8;
  m.init_seed = opt.seed;
  cfg.train.double_precision = true;
  cfg.train.background = opt.background;
  cfg.train.step_count = opt.step_count;
  cfg.train.priors = true;
  cfg.loss.kl = 0.05;

  Trainer<double> trainer(cfg, data, 1);
  std::mt19937_64 rng(opt.seed * 7919 + 13);
  perturb(trainer.params(), rng);

  std::vector<std::pair<int, int>> pairs;
  for (int f = 0; f < opt.frames; ++f)
    for (int c = 0; c < opt.cameras; ++c) pairs.emplace_back(f, c);
  Batch<double> batch = trainer.full_batch(pairs);
  std::normal_distribution<double> n;
  for (auto& e : batch.eps)
    for (auto& x : e) x = n(rng);

  GradcheckResult result;
  result.loss = trainer.evaluate_batch(batch, true).total;
  result.report = finite_diff_check(
      trainer.params(), [&] { return trainer.evaluate_batch(batch, false).total; }, opt.fd);
  return result;
}

}  // namespace volfit
