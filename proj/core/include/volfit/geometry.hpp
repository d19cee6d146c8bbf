#pragma once

#include "volfit/common.hpp"
#include "volfit/image.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>

namespace volfit {

/// Pinhole camera. Extrinsics map world to camera: x_cam = R x_world + t.
/// Pixel centers sit at half-integer coordinates.
template <typename T>
struct Camera {
  std::string id;
  Mat3<T> intrinsics = Mat3<T>::Identity();
  Mat34<T> extrinsics = Mat34<T>::Identity();
  int width = 0;
  int height = 0;
  Vec3<T> gain = Vec3<T>::Ones();
  Vec3<T> bias = Vec3<T>::Zero();
  std::optional<Image<T>> background;

  Mat3<T> rotation() const { return extrinsics.template leftCols<3>(); }
  Vec3<T> translation() const { return extrinsics.col(3); }
  Vec3<T> center() const { return -rotation().transpose() * translation(); }

  /// Throws InvalidCameraError unless K is invertible and R orthonormal (1e-6).
  void validate() const {
    if (width <= 0 || height <= 0) throw InvalidCameraError("camera '" + id + "' has a non-positive resolution");
    const T det = intrinsics.determinant();
    if (!std::isfinite(static_cast<double>(det)) || std::abs(static_cast<double>(det)) < 1e-12)
      throw InvalidCameraError("camera '" + id + "' has singular intrinsics");
    const Mat3<T> r = rotation();
    const double orth = static_cast<double>((r.transpose() * r - Mat3<T>::Identity()).cwiseAbs().maxCoeff());
    if (!(orth <= 1e-6)) throw InvalidCameraError("camera '" + id + "' rotation is not orthonormal");
  }

  /// World point to continuous pixel coordinates.
  Vec2<T> project(const Vec3<T>& world) const {
    const Vec3<T> h = intrinsics * (rotation() * world + translation());
    return {h.x() / h.z(), h.y() / h.z()};
  }

  /// Depth of a world point along the optical axis.
  T depth(const Vec3<T>& world) const { return (rotation() * world + translation()).z(); }

  template <typename U>
  Camera<U> cast() const {
    Camera<U> out;
    out.id = id;
    out.intrinsics = intrinsics.template cast<U>();
    out.extrinsics = extrinsics.template cast<U>();
    out.width = width;
    out.height = height;
    out.gain = gain.template cast<U>();
    out.bias = bias.template cast<U>();
    if (background) out.background = background->template cast<U>();
    return out;
  }
};

template <typename T>
struct Ray {
  Vec3<T> origin;
  Vec3<T> direction;  // unit length
  Vec2<T> pixel;
};

/// Axis-aligned cube with center and side length.
template <typename T>
struct Aabb {
  Vec3<T> center = Vec3<T>::Zero();
  T side = T(2);

  /// Maps world coordinates into the normalized cube [-1, 1]^3.
  Vec3<T> to_normalized(const Vec3<T>& x) const { return (x - center) * (T(2) / side); }
  Vec3<T> from_normalized(const Vec3<T>& u) const { return center + u * (side / T(2)); }
};

template <typename T>
struct RayInterval {
  T t_min;
  T t_max;
};

/// Back-projects pixel `p` into a unit-direction world ray from the camera center.
template <typename T>
Ray<T> pixel_ray(const Camera<T>& camera, const Vec2<T>& p) {
  const Eigen::FullPivLU<Mat3<T>> lu(camera.intrinsics);
  if (!lu.isInvertible()) throw InvalidCameraError("camera '" + camera.id + "' has singular intrinsics");
  const Vec3<T> focal = lu.solve(Vec3<T>(p.x(), p.y(), T(1)));
  const Mat3<T> r = camera.rotation();
  const Vec3<T> origin = -r.transpose() * camera.translation();
  const Vec3<T> on_plane = r.transpose() * (focal - camera.translation());
  Ray<T> ray;
  ray.origin = origin;
  ray.direction = (on_plane - origin).normalized();
  ray.pixel = p;
  return ray;
}

/// Center of integer pixel (x, y).
template <typename T>
Vec2<T> pixel_center(int x, int y) {
  return {static_cast<T>(x) + T(0.5), static_cast<T>(y) + T(0.5)};
}

/// Cached per-camera ray generation (the inverse intrinsics are computed once).
template <typename T>
class RayGenerator {
 public:
  explicit RayGenerator(const Camera<T>& camera) {
    camera.validate();
    k_inv_ = camera.intrinsics.inverse();
    r_t_ = camera.rotation().transpose();
    origin_ = -r_t_ * camera.translation();
    t_ = camera.translation();
  }
  Ray<T> operator()(const Vec2<T>& p) const {
    const Vec3<T> focal = k_inv_ * Vec3<T>(p.x(), p.y(), T(1));
    const Vec3<T> on_plane = r_t_ * (focal - t_);
    return {origin_, (on_plane - origin_).normalized(), p};
  }
  const Vec3<T>& origin() const { return origin_; }

 private:
  Mat3<T> k_inv_;
  Mat3<T> r_t_;
  Vec3<T> origin_;
  Vec3<T> t_;
};

/// Slab intersection. Returns entry/exit distances with t_min clamped at 0,
/// or nothing on a miss. Zero direction components miss unless the origin lies
/// inside that slab.
template <typename T>
std::optional<RayInterval<T>> ray_box_intersect(const Vec3<T>& origin, const Vec3<T>& direction, const Aabb<T>& box) {
  const T half = box.side / T(2);
  T t0 = -std::numeric_limits<T>::infinity();
  T t1 = std::numeric_limits<T>::infinity();
  for (int k = 0; k < 3; ++k) {
    const T lo = box.center[k] - half;
    const T hi = box.center[k] + half;
    if (direction[k] == T(0)) {
      if (origin[k] < lo || origin[k] > hi) return std::nullopt;
      continue;
    }
    const T inv = T(1) / direction[k];
    T a = (lo - origin[k]) * inv;
    T b = (hi - origin[k]) * inv;
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
  }
  t0 = std::max(t0, T(0));
  if (!(t0 < t1)) return std::nullopt;
  return RayInterval<T>{t0, t1};
}

template <typename T>
std::optional<RayInterval<T>> ray_box_intersect(const Ray<T>& ray, const Aabb<T>& box) {
  return ray_box_intersect(ray.origin, ray.direction, box);
}

/// g ∘ rgb + b.
template <typename T>
Vec3<T> apply_color_calibration(const Vec3<T>& rgb, const Vec3<T>& gain, const Vec3<T>& bias) {
  return gain.cwiseProduct(rgb) + bias;
}

template <typename T>
Vec3<T> apply_color_calibration(const Vec3<T>& rgb, const Camera<T>& camera) {
  return apply_color_calibration(rgb, camera.gain, camera.bias);
}

/// Camera looking from `eye` at `target`; +y of the image points along -up.
template <typename T>
Camera<T> look_at_camera(std::string id, const Vec3<T>& eye, const Vec3<T>& target, const Vec3<T>& up, T focal_px,
                         int width, int height) {
  const Vec3<T> forward = (target - eye).normalized();
  Vec3<T> right = forward.cross(up);
  if (right.norm() < T(1e-9)) right = forward.cross(Vec3<T>::UnitX());
  right.normalize();
  const Vec3<T> down = forward.cross(right);
  Mat3<T> r;
  r.row(0) = right.transpose();
  r.row(1) = down.transpose();
  r.row(2) = forward.transpose();
  Camera<T> cam;
  cam.id = std::move(id);
  cam.intrinsics << focal_px, T(0), T(width) / T(2), T(0), focal_px, T(height) / T(2), T(0), T(0), T(1);
  cam.extrinsics.template leftCols<3>() = r;
  cam.extrinsics.col(3) = -r * eye;
  cam.width = width;
  cam.height = height;
  return cam;
}

}  // namespace volfit
