#pragma once

#include "volfit/geometry.hpp"
#include "volfit/image.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace volfit {

struct RigCamera {
  Camera<double> camera;
  std::vector<std::string> images;  // one path per frame, relative to the rig file
  std::string background;           // optional
  bool holdout = false;
};

/// Camera rig document. Besides the per-camera entries it records the
/// volume bounds, the frame count, optional per-frame conditioning vectors
/// and the cameras whose images feed the encoder.
struct Rig {
  int frames = 1;
  Aabb<double> bounds{Vec3<double>::Zero(), 1.0};
  std::vector<std::vector<double>> conditioning;
  std::vector<std::string> encoder_cameras;
  std::vector<RigCamera> cameras;

  /// Index of the camera named `name`; throws FormatError when absent.
  int find(const std::string& name) const;
};

/// JSON text with every float written to 17 significant digits.
std::string rig_to_json(const Rig& rig);
Rig rig_from_json(const std::string& text);
void write_rig(const std::filesystem::path& path, const Rig& rig);
Rig read_rig(const std::filesystem::path& path);

/// Rig plus its images, fully loaded. images[camera][frame].
struct Dataset {
  std::filesystem::path root;
  Rig rig;
  std::vector<std::vector<Image<float>>> images;
  std::vector<std::optional<Image<float>>> backgrounds;

  int frames() const { return rig.frames; }
  int cameras() const { return static_cast<int>(rig.cameras.size()); }
  std::vector<int> train_cameras() const;
  std::vector<int> holdout_cameras() const;
  void validate() const;
};

/// Loads `dir/rig.json` and every image it references.
Dataset load_dataset(const std::filesystem::path& dir);

/// Writes images (f32img plus PNG previews) and `dir/rig.json`. Image paths
/// in the rig are regenerated as `images/<camera>_f<frame>.f32img`.
void save_dataset(const std::filesystem::path& dir, Dataset& data);

/// Per-pixel, per-channel median (lower median for even counts).
Image<float> median_image(const std::vector<const Image<float>*>& images);

}  // namespace volfit
