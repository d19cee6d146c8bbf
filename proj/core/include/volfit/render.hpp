#pragma once

#include "volfit/branch_trace.hpp"
#include "volfit/common.hpp"
#include "volfit/geometry.hpp"
#include "volfit/image.hpp"
#include "volfit/mesh.hpp"
#include "volfit/parallel.hpp"
#include "volfit/volume.hpp"

#include <algorithm>
#include <optional>
#include <vector>

namespace volfit {

/// Accumulators of one marched ray. `t`, `step` and `depth` are in
/// normalized-cube units along the (unit-speed) normalized ray.
template <typename T>
struct RayState {
  Vec3<T> rgb = Vec3<T>::Zero();
  T alpha = T(0);
  T t = T(0);
  T step = T(0);
  T depth = T(0);
  int steps = 0;
  bool saturated = false;
};

/// Accumulative ray marching. Step k samples at t_min + k·Δ (right end of each
/// interval) while that position does not exceed t_max:
///   dα = min(I_α + Δ·V_α, 1) - I_α;  I_rgb += V_rgb·dα;  I_α += dα
/// and stops as soon as I_α reaches 1. depth is the termination position
/// (t_max when the ray leaves unsaturated).
template <typename T, typename Volume>
RayState<T> march_ray(const Volume& volume, const Vec3<T>& origin, const Vec3<T>& dir, T t_min, T t_max, T step) {
  RayState<T> s;
  s.step = step;
  s.t = t_min;
  s.depth = t_max;
  for (int k = 1;; ++k) {
    const T t = t_min + T(k) * step;
    if (t > t_max) break;
    const VolumeSample<T> v = volume(Vec3<T>(origin + t * dir));
    s.t = t;
    s.steps = k;
    const T target = s.alpha + step * v.alpha;
    if (target >= T(1)) {
      s.rgb += v.rgb * (T(1) - s.alpha);
      s.alpha = T(1);
      s.saturated = true;
      s.depth = t;
      break;
    }
    s.rgb += v.rgb * (target - s.alpha);
    s.alpha = target;
  }
  if (BranchTrace::active()) BranchTrace::record(trace_tag::kMarchSteps, s.steps, s.saturated ? 1 : 0);
  return s;
}

/// Per-step record kept by the reverse sweep.
template <typename T>
struct MarchRecord {
  T t;
  Vec3<T> rgb;
  T dalpha;
  bool saturated;
};

/// Reverse mode of march_ray given dL/dI_rgb and dL/dI_α. For every step,
/// `volume_adjoint(x, g_rgb, g_alpha)` receives the gradient w.r.t. that
/// sample (called in reverse step order). The saturating step passes no
/// gradient to its own opacity (subgradient of the clamp).
template <typename T, typename Volume, typename VolumeAdjoint>
void march_ray_adjoint(const Volume& volume, const VolumeAdjoint& volume_adjoint, const Vec3<T>& origin,
                       const Vec3<T>& dir, T t_min, T t_max, T step, const Vec3<T>& g_rgb, T g_alpha,
                       std::vector<MarchRecord<T>>& scratch) {
  scratch.clear();
  T alpha = T(0);
  for (int k = 1;; ++k) {
    const T t = t_min + T(k) * step;
    if (t > t_max) break;
    const VolumeSample<T> v = volume(Vec3<T>(origin + t * dir));
    const T target = alpha + step * v.alpha;
    if (target >= T(1)) {
      scratch.push_back({t, v.rgb, T(1) - alpha, true});
      break;
    }
    scratch.push_back({t, v.rgb, target - alpha, false});
    alpha = target;
  }
  T g_acc = g_alpha;  // dL/dI_α after the current step
  for (auto it = scratch.rbegin(); it != scratch.rend(); ++it) {
    const T g_dalpha = g_rgb.dot(it->rgb);
    const Vec3<T> g_c = g_rgb * it->dalpha;
    T g_a;
    if (it->saturated) {
      g_a = T(0);
      g_acc = -g_dalpha;
    } else {
      g_a = step * (g_dalpha + g_acc);
    }
    volume_adjoint(Vec3<T>(origin + it->t * dir), g_c, g_a);
  }
}

/// Ray expressed in the model's normalized cube, with its box interval and
/// optional mesh hit (converted to normalized units).
template <typename T>
struct NormalizedRay {
  Vec3<T> origin;
  Vec3<T> dir;
  std::optional<RayInterval<T>> box;
  std::optional<MeshHit<T>> mesh;
  T to_world = T(1);  // multiply normalized t by this to get world t
};

template <typename T>
NormalizedRay<T> normalize_ray(const Ray<T>& ray, const Aabb<T>& bounds, const TriMesh<T>* mesh = nullptr) {
  NormalizedRay<T> r;
  r.origin = bounds.to_normalized(ray.origin);
  r.dir = ray.direction;
  r.to_world = bounds.side / T(2);
  r.box = ray_box_intersect(r.origin, r.dir, Aabb<T>{Vec3<T>::Zero(), T(2)});
  if (mesh) {
    r.mesh = intersect_mesh(*mesh, ray.origin, ray.direction);
    if (r.mesh) r.mesh->t /= r.to_world;
    if (BranchTrace::active()) BranchTrace::record(trace_tag::kMeshHit, r.mesh ? 1 : 0);
  }
  return r;
}

/// Marches with t_max replaced by the mesh depth when the ray hits the mesh;
/// a ray that reaches the mesh unsaturated takes the mesh color for its
/// remaining throughput (I_α becomes 1).
template <typename T, typename Volume>
RayState<T> march_hybrid(const Volume& volume, const NormalizedRay<T>& ray, T step) {
  RayState<T> s;
  s.step = step;
  if (ray.box) {
    T t_end = ray.box->t_max;
    if (ray.mesh) t_end = std::min(t_end, ray.mesh->t);
    if (ray.box->t_min < t_end) s = march_ray(volume, ray.origin, ray.dir, ray.box->t_min, t_end, step);
  }
  if (ray.mesh && !s.saturated) {
    s.rgb += (T(1) - s.alpha) * ray.mesh->color;
    s.alpha = T(1);
    s.depth = ray.mesh->t;
  }
  return s;
}

template <typename T, typename Volume, typename VolumeAdjoint>
void march_hybrid_adjoint(const Volume& volume, const VolumeAdjoint& volume_adjoint, const NormalizedRay<T>& ray,
                          T step, Vec3<T> g_rgb, T g_alpha, std::vector<MarchRecord<T>>& scratch) {
  bool marched = false;
  T t_end = T(0);
  if (ray.box) {
    t_end = ray.box->t_max;
    if (ray.mesh) t_end = std::min(t_end, ray.mesh->t);
    marched = ray.box->t_min < t_end;
  }
  if (ray.mesh) {
    // rgb_out = rgb + (1 - α)·m and α_out = 1 whenever the volume did not saturate.
    RayState<T> s;
    if (marched) s = march_ray(volume, ray.origin, ray.dir, ray.box->t_min, t_end, step);
    if (!s.saturated) {
      g_alpha = -g_rgb.dot(ray.mesh->color);
    }
  }
  if (marched)
    march_ray_adjoint(volume, volume_adjoint, ray.origin, ray.dir, ray.box->t_min, t_end, step, g_rgb, g_alpha,
                      scratch);
}

/// Î = (1 - I_α)·bg + (g ∘ I_rgb + b).
template <typename T>
Vec3<T> composite(const Vec3<T>& rgb, T alpha, const Vec3<T>& background, const Vec3<T>& gain, const Vec3<T>& bias) {
  return (T(1) - alpha) * background + gain.cwiseProduct(rgb) + bias;
}

template <typename T>
struct RenderOutput {
  Image<T> rgb;        // raw accumulated I_rgb
  Image<T> alpha;      // I_α
  Image<T> depth;      // world-space termination distance (0 where the ray misses)
  Image<T> composite;  // Î_rgb
};

/// Normalized step for `step_count` steps across the cube side.
template <typename T>
T step_size(int step_count) {
  return T(2) / T(step_count);
}

/// Renders every pixel: ray -> box clip -> (hybrid) march -> composite.
template <typename T>
RenderOutput<T> render_image(const SceneState<T>& state, const Camera<T>& camera, const TriMesh<T>* mesh,
                             int step_count, WorkerPool& pool) {
  const RayGenerator<T> gen(camera);
  const VolumeSampler<T> sampler(state);
  const T step = step_size<T>(step_count);
  const int w = camera.width, h = camera.height;
  RenderOutput<T> out{Image<T>(w, h, 3), Image<T>(w, h, 1), Image<T>(w, h, 1), Image<T>(w, h, 3)};
  const Image<T>* bg = camera.background ? &*camera.background : nullptr;
  if (bg && (bg->width() != w || bg->height() != h || bg->channels() != 3))
    throw ShapeError("background of camera '" + camera.id + "' does not match its resolution");
  const std::size_t tile = 16;
  const std::size_t tiles_x = (w + tile - 1) / tile;
  const std::size_t tiles = tiles_x * ((h + tile - 1) / tile);
  pool.for_dynamic(tiles, 1, [&](std::size_t begin, std::size_t end, int) {
    for (std::size_t ti = begin; ti < end; ++ti) {
      const int x0 = static_cast<int>((ti % tiles_x) * tile);
      const int y0 = static_cast<int>((ti / tiles_x) * tile);
      for (int y = y0; y < std::min<int>(h, y0 + tile); ++y)
        for (int x = x0; x < std::min<int>(w, x0 + tile); ++x) {
          const NormalizedRay<T> ray = normalize_ray(gen(pixel_center<T>(x, y)), state.bounds, mesh);
          const RayState<T> s = march_hybrid(sampler, ray, step);
          const Vec3<T> b = bg ? Vec3<T>(bg->at(x, y, 0), bg->at(x, y, 1), bg->at(x, y, 2)) : Vec3<T>::Zero();
          const Vec3<T> c = composite(s.rgb, s.alpha, b, camera.gain, camera.bias);
          for (int k = 0; k < 3; ++k) {
            out.rgb.at(x, y, k) = s.rgb[k];
            out.composite.at(x, y, k) = c[k];
          }
          out.alpha.at(x, y, 0) = s.alpha;
          const bool any = ray.box.has_value() || ray.mesh.has_value();
          out.depth.at(x, y, 0) = any ? s.depth * ray.to_world : T(0);
        }
    }
  });
  return out;
}

}  // namespace volfit
