#pragma once

#include "volfit/common.hpp"
#include "volfit/grid.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace volfit {

/// Upper bound on mixture components (per-sample scratch lives on the stack).
inline constexpr int kMaxWarpComponents = 64;

/// A(x) = R (s ∘ (x - t)), with R from a (re-normalized) quaternion (w, x, y, z).
template <typename T>
struct AffineWarp {
  Vec4<T> quat = Vec4<T>(T(1), T(0), T(0), T(0));
  Vec3<T> scale = Vec3<T>::Ones();
  Vec3<T> trans = Vec3<T>::Zero();
};

/// Where mixture weight volumes are sampled: at each component's warped point,
/// or at the (globally warped) input point.
enum class MixtureSpace { warped, world };

template <typename T>
struct WarpField {
  AffineWarp<T> global;
  std::vector<AffineWarp<T>> components;
  VoxelGrid<T> weights;  // one exp-activated channel per component, sampled clamp-to-edge
  MixtureSpace space = MixtureSpace::warped;

  int size() const { return static_cast<int>(components.size()); }
};

template <typename T>
Mat3<T> quat_to_rotmat(const Vec4<T>& q) {
  const T n = q.norm();
  if (!(n > T(1e-8))) throw DegenerateParameterError("quaternion norm is (near) zero");
  const Vec4<T> u = q / n;
  const T w = u[0], x = u[1], y = u[2], z = u[3];
  Mat3<T> r;
  r << T(1) - T(2) * (y * y + z * z), T(2) * (x * y - w * z), T(2) * (x * z + w * y),
      T(2) * (x * y + w * z), T(1) - T(2) * (x * x + z * z), T(2) * (y * z - w * x),
      T(2) * (x * z - w * y), T(2) * (y * z + w * x), T(1) - T(2) * (x * x + y * y);
  return r;
}

/// Pulls dL/dR back to dL/dq through normalization and the rotation formula.
template <typename T>
Vec4<T> quat_rotmat_adjoint(const Vec4<T>& q, const Mat3<T>& g) {
  const T n = q.norm();
  if (!(n > T(1e-8))) throw DegenerateParameterError("quaternion norm is (near) zero");
  const Vec4<T> u = q / n;
  const T w = u[0], x = u[1], y = u[2], z = u[3];
  Vec4<T> gu;
  gu[0] = T(2) * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
  gu[1] = T(2) * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - T(2) * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) +
                  w * g(2, 1) - T(2) * x * g(2, 2));
  gu[2] = T(2) * (-T(2) * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) +
                  z * g(2, 1) - T(2) * y * g(2, 2));
  gu[3] = T(2) * (-T(2) * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - T(2) * z * g(1, 1) + y * g(1, 2) +
                  x * g(2, 0) + y * g(2, 1));
  return (gu - u * u.dot(gu)) / n;
}

template <typename T>
Vec3<T> eval_affine(const Mat3<T>& rotation, const Vec3<T>& scale, const Vec3<T>& trans, const Vec3<T>& x) {
  return rotation * scale.cwiseProduct(x - trans);
}

template <typename T>
Vec3<T> eval_affine(const AffineWarp<T>& w, const Vec3<T>& x) {
  return eval_affine(quat_to_rotmat(w.quat), w.scale, w.trans, x);
}

/// Warp field with rotation matrices resolved once, ready for per-sample use.
template <typename T>
struct PreparedWarp {
  struct Affine {
    Mat3<T> rotation;
    Vec3<T> scale;
    Vec3<T> trans;
  };
  Affine global;
  std::vector<Affine> components;
  const VoxelGrid<T>* weights = nullptr;
  MixtureSpace space = MixtureSpace::warped;

  int size() const { return static_cast<int>(components.size()); }
};

/// Gradients of a loss w.r.t. warp quantities. Rotations are kept as matrix
/// gradients and turned into quaternion gradients once via finalize.
template <typename T>
struct WarpGrad {
  struct Affine {
    Mat3<T> rotation = Mat3<T>::Zero();
    Vec3<T> scale = Vec3<T>::Zero();
    Vec3<T> trans = Vec3<T>::Zero();
  };
  Affine global;
  std::vector<Affine> components;
  VoxelGrid<T> weights;

  WarpGrad() = default;
  explicit WarpGrad(const WarpField<T>& field)
      : components(field.components.size()), weights(field.weights.channels(), field.weights.resolution()) {}

  void zero() {
    global = Affine{};
    for (auto& c : components) c = Affine{};
    weights.fill(T(0));
  }
  void add(const WarpGrad& o) {
    auto acc = [](Affine& a, const Affine& b) {
      a.rotation += b.rotation;
      a.scale += b.scale;
      a.trans += b.trans;
    };
    acc(global, o.global);
    for (std::size_t i = 0; i < components.size(); ++i) acc(components[i], o.components[i]);
    for (std::size_t i = 0; i < weights.size(); ++i) weights.data()[i] += o.weights.data()[i];
  }
};

template <typename T>
PreparedWarp<T> prepare_warp(const WarpField<T>& field) {
  if (field.size() < 1 || field.size() > kMaxWarpComponents)
    throw ShapeError("warp field needs between 1 and " + std::to_string(kMaxWarpComponents) + " components");
  if (field.weights.channels() != field.size())
    throw ShapeError("warp weight volume channel count does not match component count");
  PreparedWarp<T> p;
  p.global = {quat_to_rotmat(field.global.quat), field.global.scale, field.global.trans};
  p.components.reserve(field.components.size());
  for (const auto& c : field.components) p.components.push_back({quat_to_rotmat(c.quat), c.scale, c.trans});
  p.weights = &field.weights;
  p.space = field.space;
  return p;
}

/// Inverse warp y = Σ_i A_i(x̃) a_i(x̃) after the global warp x̃ = A_g(x).
/// `mixture` (optional, size N_w) receives the normalized weights a_i.
template <typename T>
Vec3<T> eval_warp_field(const PreparedWarp<T>& wf, const Vec3<T>& x, std::span<T> mixture = {}) {
  const int n = wf.size();
  const VoxelGrid<T>& weights = *wf.weights;
  const Vec3<T> xg = eval_affine(wf.global.rotation, wf.global.scale, wf.global.trans, x);
  std::array<Vec3<T>, kMaxWarpComponents> p;
  std::array<T, kMaxWarpComponents> w;
  TrilinearStencil<T> world_stencil;
  if (wf.space == MixtureSpace::world) world_stencil = make_stencil(weights.resolution(), xg, Boundary::clamp_to_edge);
  T total = T(0);
  for (int i = 0; i < n; ++i) {
    const auto& c = wf.components[i];
    p[i] = eval_affine(c.rotation, c.scale, c.trans, xg);
    if (wf.space == MixtureSpace::warped) {
      w[i] = sample_channel(weights, i, make_stencil(weights.resolution(), p[i], Boundary::clamp_to_edge));
    } else {
      w[i] = sample_channel(weights, i, world_stencil);
    }
    total += w[i];
  }
  if (!(total >= T(1e-30))) throw DegenerateMixtureError("mixture weight sum underflowed");
  Vec3<T> y = Vec3<T>::Zero();
  for (int i = 0; i < n; ++i) {
    const T a = w[i] / total;
    y += a * p[i];
    if (!mixture.empty()) mixture[i] = a;
  }
  return y;
}

/// Reverse mode of eval_warp_field: accumulates parameter gradients into `grad`
/// (may be null) and returns dL/dx.
template <typename T>
Vec3<T> eval_warp_field_adjoint(const PreparedWarp<T>& wf, const Vec3<T>& x, const Vec3<T>& g_y, WarpGrad<T>* grad) {
  const int n = wf.size();
  const VoxelGrid<T>& weights = *wf.weights;
  const auto& G = wf.global;
  const Vec3<T> ug = G.scale.cwiseProduct(x - G.trans);
  const Vec3<T> xg = G.rotation * ug;

  std::array<Vec3<T>, kMaxWarpComponents> u, p;
  std::array<T, kMaxWarpComponents> w;
  std::array<TrilinearStencil<T>, kMaxWarpComponents> st;
  TrilinearStencil<T> world_stencil;
  const bool warped = wf.space == MixtureSpace::warped;
  if (!warped) world_stencil = make_stencil(weights.resolution(), xg, Boundary::clamp_to_edge);
  T total = T(0);
  for (int i = 0; i < n; ++i) {
    const auto& c = wf.components[i];
    u[i] = c.scale.cwiseProduct(xg - c.trans);
    p[i] = c.rotation * u[i];
    st[i] = warped ? make_stencil(weights.resolution(), p[i], Boundary::clamp_to_edge) : world_stencil;
    w[i] = sample_channel(weights, i, st[i]);
    total += w[i];
  }
  if (!(total >= T(1e-30))) throw DegenerateMixtureError("mixture weight sum underflowed");

  std::array<T, kMaxWarpComponents> ga;
  T mean_ga = T(0);
  for (int i = 0; i < n; ++i) {
    ga[i] = g_y.dot(p[i]);
    mean_ga += (w[i] / total) * ga[i];
  }

  Vec3<T> g_xg = Vec3<T>::Zero();
  for (int i = 0; i < n; ++i) {
    const auto& c = wf.components[i];
    const T a = w[i] / total;
    const T gw = (ga[i] - mean_ga) / total;
    Vec3<T> g_p = a * g_y;
    const Vec3<T> g_sample = adjoint_channel(weights, i, st[i], gw, grad ? &grad->weights : nullptr);
    if (warped) {
      g_p += g_sample;
    } else {
      g_xg += g_sample;
    }
    const Vec3<T> g_u = c.rotation.transpose() * g_p;
    const Vec3<T> d = xg - c.trans;
    if (grad) {
      auto& gc = grad->components[i];
      gc.rotation += g_p * u[i].transpose();
      gc.scale += g_u.cwiseProduct(d);
      gc.trans -= g_u.cwiseProduct(c.scale);
    }
    g_xg += g_u.cwiseProduct(c.scale);
  }

  const Vec3<T> g_ug = G.rotation.transpose() * g_xg;
  if (grad) {
    grad->global.rotation += g_xg * ug.transpose();
    grad->global.scale += g_ug.cwiseProduct(x - G.trans);
    grad->global.trans -= g_ug.cwiseProduct(G.scale);
  }
  return g_ug.cwiseProduct(G.scale);
}

/// Component translations on a centered lattice in [-0.5, 0.5]^3 with
/// near-cubic factorization of `count` (mean zero by construction).
template <typename T>
std::vector<Vec3<T>> warp_lattice(int count) {
  std::array<int, 3> dims = {1, 1, 1};
  int rest = count;
  // Greedy split of the prime factors onto the currently smallest axis.
  std::vector<int> factors;
  for (int f = 2; f * f <= rest; ++f)
    while (rest % f == 0) {
      factors.push_back(f);
      rest /= f;
    }
  if (rest > 1) factors.push_back(rest);
  std::sort(factors.rbegin(), factors.rend());
  for (int f : factors) *std::min_element(dims.begin(), dims.end()) *= f;
  std::sort(dims.rbegin(), dims.rend());
  auto coord = [](int i, int n) { return n == 1 ? T(0) : T(-0.5) + T(i) / T(n - 1); };
  std::vector<Vec3<T>> out;
  out.reserve(count);
  for (int k = 0; k < dims[2]; ++k)
    for (int j = 0; j < dims[1]; ++j)
      for (int i = 0; i < dims[0]; ++i) out.emplace_back(coord(i, dims[0]), coord(j, dims[1]), coord(k, dims[2]));
  return out;
}

}  // namespace volfit
