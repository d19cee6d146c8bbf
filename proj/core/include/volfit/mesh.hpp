#pragma once

#include "volfit/common.hpp"

#include <array>
#include <filesystem>
#include <optional>
#include <vector>

namespace volfit {

/// Colored triangle mesh in world coordinates.
template <typename T>
struct TriMesh {
  std::vector<Vec3<T>> vertices;
  std::vector<std::array<int, 3>> triangles;
  std::vector<Vec3<T>> colors;  // per vertex

  /// Throws ShapeError on out-of-range indices, missing colors or degenerate faces.
  void validate() const {
    if (colors.size() != vertices.size()) throw ShapeError("mesh needs one color per vertex");
    for (const auto& tri : triangles) {
      for (int i : tri)
        if (i < 0 || i >= static_cast<int>(vertices.size())) throw ShapeError("mesh triangle index out of range");
      const T area = (vertices[tri[1]] - vertices[tri[0]]).cross(vertices[tri[2]] - vertices[tri[0]]).norm() / T(2);
      if (!(area > T(1e-12))) throw ShapeError("mesh has a degenerate triangle");
    }
  }

  template <typename U>
  TriMesh<U> cast() const {
    TriMesh<U> m;
    for (const auto& v : vertices) m.vertices.push_back(v.template cast<U>());
    m.triangles = triangles;
    for (const auto& c : colors) m.colors.push_back(c.template cast<U>());
    return m;
  }
};

template <typename T>
struct MeshHit {
  T t;
  Vec3<T> color;
};

/// Möller–Trumbore against every triangle, both faces. Returns the nearest hit
/// with t > 0 and its barycentric-interpolated vertex color.
template <typename T>
std::optional<MeshHit<T>> intersect_mesh(const TriMesh<T>& mesh, const Vec3<T>& origin, const Vec3<T>& dir) {
  std::optional<MeshHit<T>> best;
  for (const auto& tri : mesh.triangles) {
    const Vec3<T>& v0 = mesh.vertices[tri[0]];
    const Vec3<T> e1 = mesh.vertices[tri[1]] - v0;
    const Vec3<T> e2 = mesh.vertices[tri[2]] - v0;
    const Vec3<T> pv = dir.cross(e2);
    const T det = e1.dot(pv);
    if (std::abs(det) < T(1e-12)) continue;
    const T inv = T(1) / det;
    const Vec3<T> tv = origin - v0;
    const T u = tv.dot(pv) * inv;
    if (u < T(0) || u > T(1)) continue;
    const Vec3<T> qv = tv.cross(e1);
    const T v = dir.dot(qv) * inv;
    if (v < T(0) || u + v > T(1)) continue;
    const T t = e2.dot(qv) * inv;
    if (t <= T(0)) continue;
    if (!best || t < best->t) {
      const Vec3<T> c = (T(1) - u - v) * mesh.colors[tri[0]] + u * mesh.colors[tri[1]] + v * mesh.colors[tri[2]];
      best = MeshHit<T>{t, c};
    }
  }
  return best;
}

/// ASCII OBJ subset: `v x y z [r g b]` and `f a b c ...` (1-based or negative
/// indices, `a/b/c` forms accepted; polygons are fan-triangulated). Vertices
/// without colors default to white.
TriMesh<double> read_obj(const std::filesystem::path& path);
void write_obj(const std::filesystem::path& path, const TriMesh<double>& mesh);

}  // namespace volfit
