// Drives the installed-style `volfit` binary end to end.
#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <regex>
#include <string>

namespace {

namespace fs = std::filesystem;

struct CliRun {
  int status;
  std::string out;
};

CliRun volfit(const std::string& args) {
  const std::string cmd = std::string(VOLFIT_CLI) + " " + args + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  std::string out;
  std::array<char, 512> buf{};
  while (p && std::fgets(buf.data(), buf.size(), p)) out += buf.data();
  const int raw = p ? pclose(p) : -1;
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, out};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), {}};
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "volfit_cli_test";
    fs::remove_all(root_);
    fs::create_directories(root_);
    const CliRun s = volfit("synth --scene solid_sphere --cameras 4 --holdout 1 --width 16 --height 16 --steps 64 --out " +
                         (root_ / "data").string());
    ASSERT_EQ(s.status, 0) << s.out;
    const CliRun f = volfit("fit --data " + (root_ / "data").string() + " --out " + (root_ / "fit").string() +
                         " --iters 5 --quiet --set model.template_res=8 --set model.warp_count=2 --set model.warp_res=4"
                         " --set train.batch_size=2 --set train.pixels_per_image=64 --set train.step_count=32");
    ASSERT_EQ(f.status, 0) << f.out;
  }
  static fs::path root_;
};

fs::path Cli::root_;

TEST_F(Cli, SynthWritesRigAndImages) {
  EXPECT_TRUE(fs::exists(root_ / "data" / "rig.json"));
  int images = 0;
  for (const auto& e : fs::recursive_directory_iterator(root_ / "data")) images += e.path().extension() == ".png";
  EXPECT_GE(images, 4);
}

TEST_F(Cli, FitWritesArtifacts) {
  for (const char* f : {"loss.txt", "fit.log", "config.json", "checkpoint.nvckpt"})
    EXPECT_TRUE(fs::exists(root_ / "fit" / f)) << f;
  EXPECT_NE(slurp(root_ / "fit" / "config.json").find("\"template_res\": 8"), std::string::npos);
}

TEST_F(Cli, RenderWritesColorAlphaDepth) {
  const fs::path out = root_ / "render";
  const CliRun r = volfit("render --ckpt " + (root_ / "fit" / "checkpoint.nvckpt").string() + " --camera cam01 --out " +
                       out.string() + " --steps 32");
  ASSERT_EQ(r.status, 0) << r.out;
  for (const char* f : {"cam01_f000_rgb.png", "cam01_f000_alpha.png", "cam01_f000_depth.png"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
}

TEST_F(Cli, EvalReproducesFitLogPsnr) {
  const std::string log = slurp(root_ / "fit" / "fit.log");
  std::smatch m;
  ASSERT_TRUE(std::regex_search(log, m, std::regex("final holdout psnr ([0-9.]+)"))) << log;
  const CliRun e = volfit("eval --ckpt " + (root_ / "fit" / "checkpoint.nvckpt").string() + " --holdout");
  ASSERT_EQ(e.status, 0) << e.out;
  std::smatch em;
  ASSERT_TRUE(std::regex_search(e.out, em, std::regex("mean +[0-9.eE+-]+ +[0-9.]+ +([0-9.]+)"))) << e.out;
  EXPECT_EQ(em[1].str(), m[1].str());
}

TEST_F(Cli, GradcheckSmallInstancePasses) {
  const CliRun g = volfit("gradcheck --instances 1 --max-coords 8");
  EXPECT_EQ(g.status, 0) << g.out;
  EXPECT_NE(g.out.find("gradcheck passed"), std::string::npos);
}

TEST_F(Cli, ErrorsExitNonZero) {
  // Runtime failures exit 2; argument errors use CLI11's own codes.
  fs::create_directories(root_ / "empty");
  EXPECT_EQ(volfit("fit --data " + (root_ / "empty").string() + " --out " + (root_ / "x").string()).status, 2);
  EXPECT_NE(volfit("fit --data " + (root_ / "nowhere").string() + " --out " + (root_ / "x").string()).status, 0);
  EXPECT_NE(volfit("synth --scene teapot --out " + (root_ / "y").string()).status, 0);
  EXPECT_NE(volfit("fit --data " + (root_ / "data").string() + " --out " + (root_ / "z").string() +
                   " --iters 0 --set train.nope=1")
                .status,
            0);
  EXPECT_NE(volfit("").status, 0);
}

}  // namespace
