#pragma once

#include "volfit/dataset.hpp"
#include "volfit/geometry.hpp"
#include "volfit/image.hpp"
#include "volfit/mesh.hpp"
#include "volfit/volume.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace volfit {

enum class SceneKind { solid_sphere, translucent_sphere, two_blob_articulated, smoke_noise, colored_cube };

SceneKind parse_scene_kind(const std::string& name);
const char* to_string(SceneKind kind);

/// Closed-form RGBα volume over the normalized cube. Densities are opacity
/// per unit of normalized length, matching the renderer's step convention.
struct AnalyticScene {
  SceneKind kind = SceneKind::solid_sphere;
  int frames = 1;
  double radius = 0.5;
  double density = 20.0;
  Vec3<double> color{0.9, 0.45, 0.2};
  double smoke_mean = 1.0;
  std::uint64_t seed = 0;

  /// Defaults for each kind (radius, density, colors).
  static AnalyticScene preset(SceneKind kind, int frames = 1, std::uint64_t seed = 0);
};

/// Sphere center (normalized units) of the sphere scenes at `frame`.
Vec3<double> sphere_center(const AnalyticScene& scene, int frame);

VolumeSample<double> eval_analytic(const AnalyticScene& scene, int frame, const Vec3<double>& x);

struct RigOptions {
  int cameras = 8;
  double radius = 2.0;
  int width = 64;
  int height = 64;
  int holdout = 2;
  std::uint64_t seed = 0;
  Aabb<double> bounds{Vec3<double>::Zero(), 1.0};
};

/// Cameras on a Fibonacci spiral over the upper (+z) hemisphere, all looking
/// at the bounds center with identical intrinsics. `holdout` of them, spread
/// evenly over the spiral, are flagged held out.
std::vector<RigCamera> make_rig(const RigOptions& opt);

using VolumeFn = std::function<VolumeSample<double>(const Vec3<double>&)>;

/// Plain scalar transcription of the ray marcher and the compositing model,
/// one pixel at a time. Uses the camera's gain, bias and background.
/// Optionally reports I_α and termination depth (world units, 0 on miss).
Image<double> oracle_render(const VolumeFn& volume, const Camera<double>& camera, const Aabb<double>& bounds,
                            int step_count, const TriMesh<double>* mesh = nullptr, Image<double>* alpha = nullptr,
                            Image<double>* depth = nullptr);

/// Term-by-term evaluation of a scene state (warp mixture then zero-padded
/// trilinear template lookup), written without the production sampler.
VolumeFn reference_volume(const SceneState<double>& state);

/// Smooth per-camera background pattern in [0.1, 0.9].
Image<float> procedural_background(int width, int height, int camera_index, std::uint64_t seed);

struct SynthOptions {
  AnalyticScene scene;
  RigOptions rig;
  int step_count = 512;
  bool backgrounds = true;
  bool calibration_noise = false;  // ±5% gain, ±0.05 bias per camera
  int threads = 0;
};

/// Renders every (camera, frame) image with the oracle.
Dataset synthesize(const SynthOptions& opt);

}  // namespace volfit
