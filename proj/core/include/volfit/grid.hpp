#pragma once

#include "volfit/branch_trace.hpp"
#include "volfit/common.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace volfit {

enum class Boundary { zero_pad, clamp_to_edge };

/// Dense C x D x D x D grid over [-1,1]^3. Channel-major; within a channel the
/// index is ((z * D) + y) * D + x, so x varies fastest.
template <typename T>
class VoxelGrid {
 public:
  VoxelGrid() = default;
  VoxelGrid(int channels, int resolution, T fill = T(0))
      : channels_(channels), res_(resolution),
        data_(static_cast<std::size_t>(channels) * resolution * resolution * resolution, fill) {
    if (channels <= 0) throw ShapeError("grid channel count must be positive");
    if (resolution < 2) throw ShapeError("grid resolution must be at least 2");
  }

  int channels() const { return channels_; }
  int resolution() const { return res_; }
  std::size_t voxels() const { return static_cast<std::size_t>(res_) * res_ * res_; }
  std::size_t size() const { return data_.size(); }

  std::size_t index(int c, int z, int y, int x) const {
    return ((static_cast<std::size_t>(c) * res_ + z) * res_ + y) * res_ + x;
  }
  T& at(int c, int z, int y, int x) { return data_[index(c, z, y, x)]; }
  T at(int c, int z, int y, int x) const { return data_[index(c, z, y, x)]; }

  std::span<T> channel(int c) { return {data_.data() + c * voxels(), voxels()}; }
  std::span<const T> channel(int c) const { return {data_.data() + c * voxels(), voxels()}; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

 private:
  int channels_ = 0;
  int res_ = 0;
  std::vector<T> data_;
};

/// Location of a point inside the lattice: the lower corner of the enclosing
/// cell, fractional offsets, and du -> grid-coordinate scale per axis (zero
/// on clamped axes).
template <typename T>
struct TrilinearStencil {
  bool inside = false;
  std::size_t base = 0;
  std::size_t stride_y = 0;
  std::size_t stride_z = 0;
  std::array<T, 3> frac{};
  std::array<T, 3> scale{};

  std::size_t corner(int k) const {
    return base + ((k & 1) ? 1 : 0) + ((k & 2) ? stride_y : 0) + ((k & 4) ? stride_z : 0);
  }
  T weight(int k) const {
    const T wx = (k & 1) ? frac[0] : T(1) - frac[0];
    const T wy = (k & 2) ? frac[1] : T(1) - frac[1];
    const T wz = (k & 4) ? frac[2] : T(1) - frac[2];
    return wx * wy * wz;
  }
  /// d weight(k) / d x in normalized coordinates.
  Vec3<T> weight_gradient(int k) const {
    const T wx = (k & 1) ? frac[0] : T(1) - frac[0];
    const T wy = (k & 2) ? frac[1] : T(1) - frac[1];
    const T wz = (k & 4) ? frac[2] : T(1) - frac[2];
    const T sx = (k & 1) ? T(1) : T(-1);
    const T sy = (k & 2) ? T(1) : T(-1);
    const T sz = (k & 4) ? T(1) : T(-1);
    return {sx * wy * wz * scale[0], wx * sy * wz * scale[1], wx * wy * sz * scale[2]};
  }
};

/// Maps u in [-1,1] to (u+1)(D-1)/2 in [0, D-1] per axis.
template <typename T>
TrilinearStencil<T> make_stencil(int res, const Vec3<T>& x, Boundary boundary) {
  TrilinearStencil<T> s;
  const T half_extent = T(res - 1) / T(2);
  std::array<int, 3> cell{};
  bool clamped[3] = {false, false, false};
  for (int a = 0; a < 3; ++a) {
    T u = x[a];
    if (!(u >= T(-1) && u <= T(1))) {
      if (boundary == Boundary::zero_pad) {
        BranchTrace::record(trace_tag::kTrilinearOutside, res);
        return s;
      }
      u = std::clamp(u, T(-1), T(1));
      clamped[a] = true;
    }
    const T g = (u + T(1)) * half_extent;
    int i0 = static_cast<int>(std::floor(g));
    i0 = std::clamp(i0, 0, res - 2);
    cell[a] = i0;
    s.frac[a] = g - T(i0);
    s.scale[a] = clamped[a] ? T(0) : half_extent;
  }
  s.inside = true;
  s.stride_y = static_cast<std::size_t>(res);
  s.stride_z = static_cast<std::size_t>(res) * res;
  s.base = (static_cast<std::size_t>(cell[2]) * res + cell[1]) * res + cell[0];
  if (BranchTrace::active()) {
    BranchTrace::record(trace_tag::kTrilinearCell, cell[0], cell[1], cell[2]);
    if (clamped[0] || clamped[1] || clamped[2])
      BranchTrace::record(trace_tag::kTrilinearClamp, clamped[0], clamped[1], clamped[2]);
  }
  return s;
}

/// Interpolates channel `c` at a precomputed stencil.
template <typename T>
T sample_channel(const VoxelGrid<T>& grid, int c, const TrilinearStencil<T>& s) {
  if (!s.inside) return T(0);
  const T* d = grid.data().data() + c * grid.voxels();
  T v = T(0);
  for (int k = 0; k < 8; ++k) v += s.weight(k) * d[s.corner(k)];
  return v;
}

/// Trilinear sample of all channels into `out` (size C).
template <typename T>
void sample_trilinear(const VoxelGrid<T>& grid, const Vec3<T>& x, Boundary boundary, std::span<T> out) {
  const TrilinearStencil<T> s = make_stencil(grid.resolution(), x, boundary);
  if (!s.inside) {
    std::fill(out.begin(), out.end(), T(0));
    return;
  }
  std::array<T, 8> w;
  std::array<std::size_t, 8> idx;
  for (int k = 0; k < 8; ++k) {
    w[k] = s.weight(k);
    idx[k] = s.corner(k);
  }
  const std::size_t n = grid.voxels();
  for (int c = 0; c < grid.channels(); ++c) {
    const T* d = grid.data().data() + c * n;
    T v = T(0);
    for (int k = 0; k < 8; ++k) v += w[k] * d[idx[k]];
    out[c] = v;
  }
}

template <typename T>
std::vector<T> sample_trilinear(const VoxelGrid<T>& grid, const Vec3<T>& x, Boundary boundary) {
  std::vector<T> out(grid.channels());
  sample_trilinear(grid, x, boundary, std::span<T>(out));
  return out;
}

/// Reverse mode of channel `c` at a stencil: scatters `upstream * weight` into
/// `grad` (same layout as `grid`) and returns d(upstream * value)/dx.
template <typename T>
Vec3<T> adjoint_channel(const VoxelGrid<T>& grid, int c, const TrilinearStencil<T>& s, T upstream, VoxelGrid<T>* grad) {
  Vec3<T> gx = Vec3<T>::Zero();
  if (!s.inside || upstream == T(0)) return gx;
  const std::size_t off = c * grid.voxels();
  const T* d = grid.data().data() + off;
  T* g = grad ? grad->data().data() + off : nullptr;
  for (int k = 0; k < 8; ++k) {
    const std::size_t i = s.corner(k);
    if (g) g[i] += upstream * s.weight(k);
    gx += (upstream * d[i]) * s.weight_gradient(k);
  }
  return gx;
}

/// Reverse mode of sample_trilinear. Accumulates into `grad` (may be null) and
/// returns the gradient w.r.t. x. Both are zero outside the zero-padded domain.
template <typename T>
Vec3<T> grid_adjoint_sample(const VoxelGrid<T>& grid, const Vec3<T>& x, Boundary boundary, std::span<const T> upstream,
                            VoxelGrid<T>* grad) {
  const TrilinearStencil<T> s = make_stencil(grid.resolution(), x, boundary);
  Vec3<T> gx = Vec3<T>::Zero();
  for (int c = 0; c < grid.channels(); ++c) gx += adjoint_channel(grid, c, s, upstream[c], grad);
  return gx;
}

}  // namespace volfit
