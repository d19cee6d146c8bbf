#include "volfit/checkpoint.hpp"
#include "volfit/synthdata.hpp"
#include "volfit/train.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

namespace volfit {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("volfit_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

TEST(Adam, FirstStepIsSignedLearningRate) {
  ParamStore<double> s;
  s.add("w", {3}, ParamGroup::network);
  s.get("w").grad.data = {0.5, -2.0, 0.0};
  AdamState<double> st;
  AdamOptions opt;
  opt.lr = 0.1;
  adam_step(s, st, opt);
  const auto& w = s.get("w").value.data;
  EXPECT_NEAR(w[0], -0.1 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_NEAR(w[1], 0.1 * 2.0 / (2.0 + 1e-8), 1e-15);
  EXPECT_EQ(w[2], 0.0);
  EXPECT_EQ(st.step, 1);
}

// Scalar bias-corrected Adam written out directly.
struct ScalarAdam {
  double lr, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double m = 0, v = 0;
  int t = 0;
  double step(double x, double g) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
    return x - lr * mh / (std::sqrt(vh) + eps);
  }
};

TEST(Adam, MatchesReferenceTrajectoryPerGroup) {
  ParamStore<double> s;
  s.add("net", {2}, ParamGroup::network);
  s.add("bg", {1}, ParamGroup::background);
  s.add("cal", {1}, ParamGroup::calibration);
  s.add("frozen", {1}, ParamGroup::network, 3.0);
  s.get("frozen").trainable = false;
  AdamOptions opt;
  opt.lr = 0.01;
  opt.lr_background = 0.2;
  opt.lr_calibration = 0.003;
  const double target[4] = {1.5, -0.5, 0.7, 2.0};
  std::vector<ScalarAdam> ref = {{0.01}, {0.01}, {0.2}, {0.003}};
  double x[4] = {0, 0, 0, 0};
  AdamState<double> st;
  auto value = [&](int k) -> double& {
    static const char* names[] = {"net", "net", "bg", "cal"};
    return s.get(names[k]).value.data[k == 1 ? 1 : 0];
  };
  auto grad = [&](int k) -> double& {
    static const char* names[] = {"net", "net", "bg", "cal"};
    return s.get(names[k]).grad.data[k == 1 ? 1 : 0];
  };
  for (int it = 0; it < 200; ++it) {
    s.zero_grad();
    s.get("frozen").grad.data[0] = 1.0;
    for (int k = 0; k < 4; ++k) {
      const double g = 2 * (value(k) - target[k]) * (1 + 0.5 * k);
      grad(k) = g;
      x[k] = ref[k].step(x[k], g);
    }
    adam_step(s, st, opt);
    for (int k = 0; k < 4; ++k) ASSERT_NEAR(value(k), x[k], 1e-12) << "param " << k << " step " << it;
  }
  EXPECT_EQ(s.get("frozen").value.data[0], 3.0);
}

TEST(Adam, RejectsNonFiniteGradient) {
  ParamStore<double> s;
  s.add("w", {1}, ParamGroup::network);
  s.get("w").grad.data[0] = INFINITY;
  AdamState<double> st;
  EXPECT_THROW(adam_step(s, st, AdamOptions{}), NonFiniteError);
}

TEST(SamplePixels, DistinctAndInRange) {
  std::mt19937_64 rng(1);
  const auto idx = sample_pixels(rng, 7, 5, 35);
  EXPECT_EQ(std::set<std::uint32_t>(idx.begin(), idx.end()).size(), 35u);
  EXPECT_EQ(*std::max_element(idx.begin(), idx.end()), 34u);
  EXPECT_THROW(sample_pixels(rng, 7, 5, 36), ShapeError);
  EXPECT_TRUE(sample_pixels(rng, 7, 5, 0).empty());
}

TEST(SamplePixels, UniformByChiSquare) {
  std::mt19937_64 rng(2);
  const int n = 100, draws = 4000, k = 10;
  std::vector<double> counts(n, 0.0);
  for (int i = 0; i < draws; ++i)
    for (std::uint32_t p : sample_pixels(rng, 10, 10, k)) counts[p] += 1;
  const double expected = double(draws) * k / n;
  double chi2 = 0;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  const boost::math::chi_squared dist(n - 1);
  const double p = 1 - boost::math::cdf(dist, chi2);
  EXPECT_GT(p, 1e-3) << "chi2 = " << chi2;
}

TEST(Psnr, FromMse) {
  EXPECT_DOUBLE_EQ(psnr_from_mse(0.01), 20.0);
  EXPECT_DOUBLE_EQ(psnr_from_mse(1.0), 0.0);
  EXPECT_EQ(psnr_from_mse(0.0), 99.0);
}

std::shared_ptr<Dataset> tiny_dataset() {
  SynthOptions so;
  so.scene = AnalyticScene::preset(SceneKind::solid_sphere);
  so.rig.cameras = 4;
  so.rig.holdout = 1;
  so.rig.width = 16;
  so.rig.height = 16;
  so.step_count = 64;
  so.threads = 1;
  return std::make_shared<Dataset>(synthesize(so));
}

RunConfig tiny_config(const Dataset& d) {
  RunConfig cfg;
  cfg.model.template_res = 8;
  cfg.model.warp_count = 2;
  cfg.model.warp_res = 4;
  cfg.train.batch_size = 2;
  cfg.train.pixels_per_image = 64;
  cfg.train.step_count = 32;
  cfg.train.lr = 0.02;
  bind_config_to_dataset(cfg, d);
  return cfg;
}

TEST(Trainer, EvaluateIsMeanOfPerCameraMse) {
  const auto d = tiny_dataset();
  Trainer<double> tr(tiny_config(*d), d, 1);
  const std::vector<int> cams = {0, 1, 2};
  const EvalReport rep = tr.evaluate(cams);
  ASSERT_EQ(rep.cameras.size(), 3u);
  double mean = 0;
  for (std::size_t k = 0; k < cams.size(); ++k) {
    const RenderOutput<double> out = tr.render(cams[k], 0);
    const Image<float>& target = d->images[cams[k]][0];
    double sum = 0;
    for (std::size_t i = 0; i < target.data().size(); ++i) {
      const double e = out.composite.data()[i] - target.data()[i];
      sum += e * e;
    }
    const double mse = sum / target.data().size();
    EXPECT_NEAR(rep.cameras[k].mse, mse, 1e-15);
    mean += mse / 3;
  }
  EXPECT_NEAR(rep.mse, mean, 1e-15);
  EXPECT_DOUBLE_EQ(rep.psnr, psnr_from_mse(mean));
}

TEST(Trainer, ZeroIterationFitWritesOutputs) {
  const auto d = tiny_dataset();
  RunConfig cfg = tiny_config(*d);
  cfg.train.iterations = 0;
  Trainer<float> tr(cfg, d, 1);
  const fs::path out = scratch_dir("fit0");
  const FitResult r = fit(tr, FitOptions{out, {}, true});
  EXPECT_TRUE(r.losses.empty());
  ASSERT_TRUE(r.holdout.has_value());
  EXPECT_EQ(r.holdout->cameras.size(), 1u);
  for (const char* f : {"loss.txt", "fit.log", "config.json", "checkpoint.nvckpt"}) EXPECT_TRUE(fs::exists(out / f)) << f;
}

TEST(Trainer, LossDecreasesAndRestoreReproducesRender) {
  const auto d = tiny_dataset();
  RunConfig cfg = tiny_config(*d);
  cfg.train.iterations = 30;
  Trainer<double> tr(cfg, d, 1);
  const FitResult r = fit(tr, FitOptions{{}, {}, false});
  ASSERT_EQ(r.losses.size(), 30u);
  double first = 0, last = 0;
  for (int i = 0; i < 5; ++i) {
    first += r.losses[i].mse;
    last += r.losses[25 + i].mse;
  }
  EXPECT_LT(last, first);

  const Checkpoint ck = tr.checkpoint();
  Trainer<double> back(checkpoint_config(ck), d, 1);
  back.restore(ck);
  EXPECT_EQ(back.step(), tr.step());
  const RenderOutput<double> a = tr.render(0, 0), b = back.render(0, 0);
  // Parameters go through f32 in the checkpoint.
  for (std::size_t i = 0; i < a.composite.data().size(); ++i)
    EXPECT_NEAR(a.composite.data()[i], b.composite.data()[i], 1e-5);
}

TEST(Checkpoint, RoundTripPreservesTensorsAndCrc) {
  Checkpoint ck;
  ck.add("a", {2, 3}, {1, 2, 3, 4, 5, 6.5f});
  ck.add("b", {1}, {-0.0f});
  ck.add_text("meta.note", "hello {json}");
  const fs::path p = scratch_dir("ckpt") / "x.nvckpt";
  save_checkpoint(p, ck);
  const Checkpoint back = load_checkpoint(p);
  ASSERT_EQ(back.tensors().size(), 3u);
  EXPECT_EQ(back.get("a").shape, (Shape{2, 3}));
  EXPECT_EQ(back.get("a").data, ck.get("a").data);
  EXPECT_EQ(back.get("a").crc, payload_crc32(ck.get("a").data));
  EXPECT_EQ(*back.text("meta.note"), "hello {json}");
  EXPECT_FALSE(back.text("meta.none").has_value());
  EXPECT_THROW(back.get("zzz"), CheckpointError);
}

TEST(Checkpoint, DetectsCorruptionAndTruncation) {
  Checkpoint ck;
  std::vector<float> v(100);
  for (int i = 0; i < 100; ++i) v[i] = 0.1f * i;
  ck.add("w", {100}, v);
  const fs::path dir = scratch_dir("corrupt");
  save_checkpoint(dir / "ok.nvckpt", ck);
  std::string bytes;
  {
    std::ifstream in(dir / "ok.nvckpt", std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  std::string flipped = bytes;
  flipped[flipped.size() - 17] ^= 0x40;
  std::ofstream(dir / "flip.nvckpt", std::ios::binary) << flipped;
  EXPECT_THROW(load_checkpoint(dir / "flip.nvckpt"), CheckpointError);
  std::ofstream(dir / "cut.nvckpt", std::ios::binary) << bytes.substr(0, bytes.size() - 9);
  EXPECT_THROW(load_checkpoint(dir / "cut.nvckpt"), CheckpointError);
  std::string magic = bytes;
  magic[0] = 'X';
  std::ofstream(dir / "magic.nvckpt", std::ios::binary) << magic;
  EXPECT_THROW(load_checkpoint(dir / "magic.nvckpt"), CheckpointError);
  EXPECT_THROW(load_checkpoint(dir / "missing.nvckpt"), CheckpointError);
}

TEST(Checkpoint, LoadParamsNamesMismatches) {
  ParamStore<double> s;
  s.add("w", {2, 2}, ParamGroup::network);
  Checkpoint wrong;
  wrong.add("w", {4}, {1, 2, 3, 4});
  EXPECT_THROW(load_params(wrong, s), ShapeError);
  Checkpoint missing;
  EXPECT_THROW(load_params(missing, s), CheckpointError);
  Checkpoint ok;
  ok.add("w", {2, 2}, {1, 2, 3, 4});
  load_params(ok, s);
  EXPECT_EQ(s.get("w").value.data, (std::vector<double>{1, 2, 3, 4}));
}

}  // namespace
}  // namespace volfit
