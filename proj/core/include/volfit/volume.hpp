#pragma once

#include "volfit/common.hpp"
#include "volfit/geometry.hpp"
#include "volfit/grid.hpp"
#include "volfit/warp.hpp"

#include <optional>

namespace volfit {

/// Fully decoded, activated volume for one (frame, camera): RGBα template
/// (4 channels, post-softplus) and optional inverse warp.
template <typename T>
struct SceneState {
  VoxelGrid<T> tmpl;
  std::optional<WarpField<T>> warp;
  Aabb<T> bounds;
};

template <typename T>
struct SceneStateGrad {
  VoxelGrid<T> tmpl;
  std::optional<WarpGrad<T>> warp;

  SceneStateGrad() = default;
  explicit SceneStateGrad(const SceneState<T>& s) : tmpl(s.tmpl.channels(), s.tmpl.resolution()) {
    if (s.warp) warp.emplace(*s.warp);
  }
  void zero() {
    tmpl.fill(T(0));
    if (warp) warp->zero();
  }
  void add(const SceneStateGrad& o) {
    for (std::size_t i = 0; i < tmpl.size(); ++i) tmpl.data()[i] += o.tmpl.data()[i];
    if (warp) warp->add(*o.warp);
  }
};

template <typename T>
struct VolumeSample {
  Vec3<T> rgb;
  T alpha;
};

/// Read-only sampling view of a SceneState; valid while the state lives.
template <typename T>
class VolumeSampler {
 public:
  explicit VolumeSampler(const SceneState<T>& state) : tmpl_(&state.tmpl) {
    if (state.tmpl.channels() != 4) throw ShapeError("template grid must have 4 (RGBα) channels");
    if (state.warp) warp_ = prepare_warp(*state.warp);
  }

  /// V(x) = T(W⁻¹(x)) for x in normalized coordinates.
  VolumeSample<T> operator()(const Vec3<T>& x) const {
    const Vec3<T> y = warp_ ? eval_warp_field(*warp_, x) : x;
    const TrilinearStencil<T> s = make_stencil(tmpl_->resolution(), y, Boundary::zero_pad);
    if (!s.inside) return {Vec3<T>::Zero(), T(0)};
    return {Vec3<T>(sample_channel(*tmpl_, 0, s), sample_channel(*tmpl_, 1, s), sample_channel(*tmpl_, 2, s)),
            sample_channel(*tmpl_, 3, s)};
  }

  /// Reverse mode of operator(): accumulates into `grad` and returns dL/dx.
  Vec3<T> adjoint(const Vec3<T>& x, const Vec3<T>& g_rgb, T g_alpha, SceneStateGrad<T>* grad) const {
    const Vec3<T> y = warp_ ? eval_warp_field(*warp_, x) : x;
    const TrilinearStencil<T> s = make_stencil(tmpl_->resolution(), y, Boundary::zero_pad);
    if (!s.inside) return Vec3<T>::Zero();
    VoxelGrid<T>* gt = grad ? &grad->tmpl : nullptr;
    Vec3<T> g_y = adjoint_channel(*tmpl_, 0, s, g_rgb[0], gt) + adjoint_channel(*tmpl_, 1, s, g_rgb[1], gt) +
                  adjoint_channel(*tmpl_, 2, s, g_rgb[2], gt) + adjoint_channel(*tmpl_, 3, s, g_alpha, gt);
    if (!warp_) return g_y;
    return eval_warp_field_adjoint(*warp_, x, g_y, grad && grad->warp ? &*grad->warp : nullptr);
  }

  const VoxelGrid<T>& tmpl() const { return *tmpl_; }
  bool warped() const { return warp_.has_value(); }

 private:
  const VoxelGrid<T>* tmpl_;
  std::optional<PreparedWarp<T>> warp_;
};

/// eval_volume for a world-space point: maps into the normalized cube first.
template <typename T>
VolumeSample<T> eval_volume(const SceneState<T>& state, const Vec3<T>& x_world) {
  return VolumeSampler<T>(state)(state.bounds.to_normalized(x_world));
}

}  // namespace volfit
