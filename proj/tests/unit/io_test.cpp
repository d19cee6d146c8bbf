#include "volfit/config.hpp"
#include "volfit/dataset.hpp"
#include "volfit/image.hpp"
#include "volfit/mesh.hpp"
#include "volfit/synthdata.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

namespace volfit {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("volfit_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Image<float> random_image(int w, int h, int c, std::uint64_t seed) {
  Image<float> img(w, h, c);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0, 1);
  for (auto& v : img.data()) v = u(rng);
  return img;
}

TEST(F32Img, RoundTripIsBitExact) {
  const fs::path dir = scratch_dir("f32");
  Image<float> img = random_image(7, 5, 3, 1);
  img.data()[3] = -2.5e-7f;
  write_f32img(dir / "a.f32img", img);
  const Image<float> back = read_image(dir / "a.f32img");
  EXPECT_EQ(back.width(), 7);
  EXPECT_EQ(back.channels(), 3);
  EXPECT_EQ(back.data(), img.data());
  std::ofstream(dir / "bad.f32img") << "NOTIMG";
  EXPECT_THROW(read_f32img(dir / "bad.f32img"), FormatError);
  EXPECT_THROW(read_f32img(dir / "none.f32img"), FormatError);
}

TEST(Png, RoundTripQuantizes) {
  const fs::path dir = scratch_dir("png");
  const Image<float> img = random_image(9, 4, 3, 2);
  write_png(dir / "a.png", img);
  const Image<float> back = read_image(dir / "a.png");
  ASSERT_EQ(back.data().size(), img.data().size());
  for (std::size_t i = 0; i < img.data().size(); ++i) EXPECT_NEAR(back.data()[i], img.data()[i], 0.5f / 255 + 1e-6f);
  Image<float> gray(3, 3, 1, 2.0f);
  write_png(dir / "g.png", gray);
  EXPECT_EQ(read_png(dir / "g.png").at(1, 1, 0), 1.0f);
  EXPECT_THROW(write_png(dir / "x.png", Image<float>(2, 2, 2)), FormatError);
  EXPECT_THROW(read_image(dir / "a.bmp"), FormatError);
}

TEST(Image, DownsampleAreaAveragesBlocks) {
  Image<float> img(4, 2, 1);
  for (int x = 0; x < 4; ++x) {
    img.at(x, 0, 0) = float(x);
    img.at(x, 1, 0) = float(x + 4);
  }
  const Image<float> d = downsample_area(img, 2, 1);
  EXPECT_FLOAT_EQ(d.at(0, 0, 0), (0 + 1 + 4 + 5) / 4.0f);
  EXPECT_FLOAT_EQ(d.at(1, 0, 0), (2 + 3 + 6 + 7) / 4.0f);
  EXPECT_THROW(Image<float>(0, 2, 1), ShapeError);
}

TEST(Dataset, MedianImage) {
  const Image<float> a(2, 1, 1, 1.0f), b(2, 1, 1, 5.0f), c(2, 1, 1, 2.0f);
  EXPECT_EQ(median_image({&a, &b, &c}).at(1, 0, 0), 2.0f);
  EXPECT_THROW(median_image({}), ShapeError);
}

TEST(Rig, JsonRoundTrip) {
  Rig rig;
  rig.frames = 2;
  rig.bounds = {Vec3<double>(0.1, 0.2, -0.3), 1.5};
  rig.conditioning = {{0.5}, {-0.25}};
  RigOptions ro;
  ro.cameras = 3;
  ro.holdout = 1;
  rig.cameras = make_rig(ro);
  for (auto& rc : rig.cameras) rc.images = {rc.camera.id + "_0.png", rc.camera.id + "_1.png"};
  rig.cameras[1].camera.gain = {1.1, 0.9, 1.0};
  rig.cameras[2].background = "bg.png";
  const Rig back = rig_from_json(rig_to_json(rig));
  EXPECT_EQ(back.frames, 2);
  EXPECT_EQ(back.bounds.side, 1.5);
  EXPECT_EQ(back.conditioning, rig.conditioning);
  ASSERT_EQ(back.cameras.size(), 3u);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(back.cameras[i].camera.id, rig.cameras[i].camera.id);
    EXPECT_EQ(back.cameras[i].holdout, rig.cameras[i].holdout);
    EXPECT_EQ(back.cameras[i].images, rig.cameras[i].images);
    EXPECT_LT((back.cameras[i].camera.intrinsics - rig.cameras[i].camera.intrinsics).norm(), 1e-12);
    EXPECT_LT((back.cameras[i].camera.extrinsics - rig.cameras[i].camera.extrinsics).norm(), 1e-12);
  }
  EXPECT_EQ(back.cameras[1].camera.gain, Vec3<double>(1.1, 0.9, 1.0));
  EXPECT_EQ(back.cameras[2].background, "bg.png");
  EXPECT_EQ(back.find("cam02"), 2);
  EXPECT_THROW(back.find("nope"), FormatError);
  EXPECT_THROW(rig_from_json("{\"frames\": 1, \"cameras\": [], \"lens\": 3}"), FormatError);
  EXPECT_THROW(rig_from_json("not json"), FormatError);
}

TEST(Dataset, SaveLoadRoundTrip) {
  SynthOptions so;
  so.rig.cameras = 2;
  so.rig.holdout = 1;
  so.rig.width = so.rig.height = 8;
  so.step_count = 16;
  so.threads = 1;
  so.scene = AnalyticScene::preset(SceneKind::translucent_sphere, 2);
  Dataset d = synthesize(so);
  const fs::path dir = scratch_dir("ds");
  save_dataset(dir, d);
  const Dataset back = load_dataset(dir);
  EXPECT_EQ(back.frames(), 2);
  EXPECT_EQ(back.holdout_cameras(), std::vector<int>{d.holdout_cameras()});
  for (int c = 0; c < 2; ++c) {
    for (int f = 0; f < 2; ++f) EXPECT_EQ(back.images[c][f].data(), d.images[c][f].data());
    ASSERT_TRUE(back.backgrounds[c].has_value());
    EXPECT_EQ(back.backgrounds[c]->data(), d.backgrounds[c]->data());
  }
  EXPECT_THROW(load_dataset(dir / "missing"), FormatError);
}

TEST(Config, JsonRoundTripAndOverrides) {
  RunConfig cfg;
  cfg.model.mode = ModelMode::latent;
  cfg.model.latent_source = LatentSource::free;
  cfg.model.mixture_space = MixtureSpace::world;
  cfg.train.background = BackgroundMode::learned;
  cfg.train.lr = 3e-3;
  cfg.loss.tv = 0.5;
  const RunConfig back = config_from_json(config_to_json(cfg));
  EXPECT_EQ(back.model.mode, ModelMode::latent);
  EXPECT_EQ(back.model.latent_source, LatentSource::free);
  EXPECT_EQ(back.model.mixture_space, MixtureSpace::world);
  EXPECT_EQ(back.train.background, BackgroundMode::learned);
  EXPECT_EQ(back.train.lr, 3e-3);
  EXPECT_EQ(back.loss.tv, 0.5);
  EXPECT_EQ(config_to_json(back), config_to_json(cfg));

  RunConfig o;
  set_config_value(o, "train.background", "none");
  set_config_value(o, "model.warp", "false");
  set_config_value(o, "train.iterations", "7");
  EXPECT_EQ(o.train.background, BackgroundMode::none);
  EXPECT_FALSE(o.model.warp_enabled);
  EXPECT_EQ(o.train.iterations, 7);
  EXPECT_THROW(set_config_value(o, "train.nope", "1"), ConfigError);
  EXPECT_THROW(set_config_value(o, "train.background", "sky"), ConfigError);
  EXPECT_THROW(set_config_value(o, "train.priors", "3"), ConfigError);
  EXPECT_THROW(config_from_json("{\"optimizer\": {}}"), ConfigError);
}

TEST(Mesh, ObjRoundTripAndIntersection) {
  TriMesh<double> m;
  m.vertices = {{-1, -1, 0}, {1, -1, 0}, {1, 1, 0}, {-1, 1, 0}};
  m.colors = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 1}};
  m.triangles = {{0, 1, 2}, {0, 2, 3}};
  const fs::path dir = scratch_dir("obj");
  write_obj(dir / "q.obj", m);
  const TriMesh<double> back = read_obj(dir / "q.obj");
  EXPECT_EQ(back.vertices, m.vertices);
  EXPECT_EQ(back.colors, m.colors);
  EXPECT_EQ(back.triangles, m.triangles);

  const auto hit = intersect_mesh(m, Vec3<double>(0.5, -0.5, -2), Vec3<double>(0, 0, 1));
  ASSERT_TRUE(hit);
  EXPECT_NEAR(hit->t, 2.0, 1e-14);
  // Barycentric color at (0.5, -0.5) on triangle (0, 1, 2): weights (0.25, 0.5, 0.25).
  EXPECT_NEAR(hit->color.x(), 0.25, 1e-14);
  EXPECT_NEAR(hit->color.y(), 0.5, 1e-14);
  EXPECT_FALSE(intersect_mesh(m, Vec3<double>(3, 0, -2), Vec3<double>(0, 0, 1)));
  EXPECT_FALSE(intersect_mesh(m, Vec3<double>(0, 0, 2), Vec3<double>(0, 0, 1)));

  std::ofstream(dir / "bad.obj") << "v 0 0 0\nf 1 2 5\n";
  EXPECT_THROW(read_obj(dir / "bad.obj").validate(), Error);
  TriMesh<double> degenerate = m;
  degenerate.vertices[2] = degenerate.vertices[1];
  EXPECT_THROW(degenerate.validate(), ShapeError);
}

}  // namespace
}  // namespace volfit
