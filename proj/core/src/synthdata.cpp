#include "volfit/synthdata.hpp"

#include "volfit/parallel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

namespace volfit {

namespace {

using V3 = std::array<double, 3>;

constexpr double kPi = std::numbers::pi;

struct SceneName {
  SceneKind kind;
  const char* name;
};
constexpr SceneName kSceneNames[] = {{SceneKind::solid_sphere, "solid_sphere"},
                                     {SceneKind::translucent_sphere, "translucent_sphere"},
                                     {SceneKind::two_blob_articulated, "two_blob_articulated"},
                                     {SceneKind::smoke_noise, "smoke_noise"},
                                     {SceneKind::colored_cube, "colored_cube"}};

double dist2(const Vec3<double>& a, const Vec3<double>& b) { return (a - b).squaredNorm(); }

/// Second blob of the articulated scene swings 90 degrees about the origin.
Vec3<double> blob_b_center(int frame, int frames) {
  const double theta = frames > 1 ? 0.5 * kPi * frame / (frames - 1) : 0.0;
  return {0.42 * std::cos(theta), 0.42 * std::sin(theta), 0.0};
}

std::array<double, 9> smoke_phases(std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x5eed5eedULL);
  std::uniform_real_distribution<double> u(0.0, 2.0 * kPi);
  std::array<double, 9> p{};
  for (auto& v : p) v = u(rng);
  return p;
}

}  // namespace

SceneKind parse_scene_kind(const std::string& name) {
  for (const auto& s : kSceneNames)
    if (name == s.name) return s.kind;
  throw ConfigError("unknown scene '" + name + "'");
}

const char* to_string(SceneKind kind) {
  for (const auto& s : kSceneNames)
    if (kind == s.kind) return s.name;
  return "?";
}

AnalyticScene AnalyticScene::preset(SceneKind kind, int frames, std::uint64_t seed) {
  AnalyticScene s;
  s.kind = kind;
  s.frames = std::max(1, frames);
  s.seed = seed;
  switch (kind) {
    case SceneKind::solid_sphere:
      s.radius = 0.5;
      s.density = 20.0;
      s.color = {0.9, 0.45, 0.2};
      break;
    case SceneKind::translucent_sphere:
      s.radius = 0.55;
      s.density = 0.8;
      s.color = {0.2, 0.6, 0.95};
      break;
    case SceneKind::two_blob_articulated:
      s.radius = 0.28;
      s.density = 12.0;
      s.color = {0.9, 0.3, 0.2};
      break;
    case SceneKind::smoke_noise:
      s.radius = 1.0;
      s.density = 1.0;
      s.smoke_mean = 1.0;
      s.color = {0.85, 0.85, 0.9};
      break;
    case SceneKind::colored_cube:
      s.radius = 0.45;
      s.density = 30.0;
      s.color = {0.5, 0.5, 0.5};
      break;
  }
  return s;
}

Vec3<double> sphere_center(const AnalyticScene& scene, int frame) {
  if (scene.frames <= 1) return Vec3<double>::Zero();
  const double phi = 2.0 * kPi * frame / scene.frames;
  return {0.25 * std::cos(phi), 0.25 * std::sin(phi), 0.0};
}

VolumeSample<double> eval_analytic(const AnalyticScene& scene, int frame, const Vec3<double>& x) {
  const VolumeSample<double> empty{Vec3<double>::Zero(), 0.0};
  switch (scene.kind) {
    case SceneKind::solid_sphere:
    case SceneKind::translucent_sphere:
      if (dist2(x, sphere_center(scene, frame)) <= scene.radius * scene.radius) return {scene.color, scene.density};
      return empty;
    case SceneKind::two_blob_articulated: {
      const double r2 = scene.radius * scene.radius;
      if (dist2(x, Vec3<double>(-0.3, 0.0, 0.0)) <= r2) return {scene.color, scene.density};
      if (dist2(x, blob_b_center(frame, scene.frames)) <= r2) return {Vec3<double>(0.2, 0.5, 0.9), scene.density};
      return empty;
    }
    case SceneKind::smoke_noise: {
      if (x.cwiseAbs().maxCoeff() > 1.0) return empty;
      // Integer multiples of π per axis integrate to zero over [-1, 1], so
      // the cube mean of the density is exactly smoke_mean.
      const auto ph = smoke_phases(scene.seed);
      const double drift = 0.35 * frame;
      const double s1 = std::sin(kPi * x.x() + ph[0] + drift) * std::sin(kPi * x.y() + ph[1]) *
                        std::sin(kPi * x.z() + ph[2]);
      const double s2 = std::sin(2 * kPi * x.x() + ph[3]) * std::sin(2 * kPi * x.y() + ph[4] + drift) *
                        std::sin(2 * kPi * x.z() + ph[5]);
      const double s3 = std::sin(3 * kPi * x.x() + ph[6]) * std::sin(3 * kPi * x.y() + ph[7]) *
                        std::sin(3 * kPi * x.z() + ph[8] + drift);
      return {scene.color, scene.smoke_mean * (1.0 + 0.5 * s1 + 0.25 * s2 + 0.15 * s3)};
    }
    case SceneKind::colored_cube: {
      const double h = scene.radius;
      if (x.cwiseAbs().maxCoeff() > h) return empty;
      Vec3<double> c;
      for (int k = 0; k < 3; ++k) c[k] = std::clamp(0.5 + 0.45 * x[k] / h, 0.05, 0.95);
      return {c, scene.density};
    }
  }
  return empty;
}

std::vector<RigCamera> make_rig(const RigOptions& opt) {
  if (opt.cameras < 2) throw ShapeError("make_rig needs at least 2 cameras");
  if (opt.holdout < 0 || opt.holdout >= opt.cameras) throw ShapeError("make_rig: invalid held-out count");
  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> u(0.0, 2.0 * kPi);
  const double offset = u(rng);
  const double golden = kPi * (3.0 - std::sqrt(5.0));
  // Frame the sphere inscribed in the bounds with a small margin.
  const double extent = 0.5 * opt.bounds.side * 1.15;
  const double half_fov = std::asin(std::min(0.95, extent / opt.radius));
  const double focal = 0.5 * opt.width / std::tan(half_fov);

  std::vector<RigCamera> rig;
  for (int i = 0; i < opt.cameras; ++i) {
    const double z = 0.15 + 0.7 * (i + 0.5) / opt.cameras;
    const double r = std::sqrt(1.0 - z * z);
    const double phi = offset + golden * i;
    const Vec3<double> eye = opt.bounds.center + opt.radius * Vec3<double>(r * std::cos(phi), r * std::sin(phi), z);
    char name[32];
    std::snprintf(name, sizeof name, "cam%02d", i);
    RigCamera rc;
    rc.camera = look_at_camera<double>(name, eye, opt.bounds.center, Vec3<double>::UnitZ(), focal, opt.width,
                                       opt.height);
    rig.push_back(std::move(rc));
  }
  for (int j = 0; j < opt.holdout; ++j) rig[(2 * j + 1) * opt.cameras / (2 * opt.holdout)].holdout = true;
  return rig;
}

namespace {

// ---- oracle helpers: plain arrays, no production code paths ----------------

V3 sub(const V3& a, const V3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
double dot(const V3& a, const V3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
V3 cross(const V3& a, const V3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

/// Inverse of a 3x3 matrix by cofactors.
std::array<double, 9> invert3(const std::array<double, 9>& m) {
  const double a = m[0], b = m[1], c = m[2], d = m[3], e = m[4], f = m[5], g = m[6], h = m[7], i = m[8];
  const double A = e * i - f * h, B = -(d * i - f * g), C = d * h - e * g;
  const double det = a * A + b * B + c * C;
  if (std::abs(det) < 1e-300) throw InvalidCameraError("oracle: singular intrinsics");
  const double s = 1.0 / det;
  return {A * s, -(b * i - c * h) * s, (b * f - c * e) * s, B * s, (a * i - c * g) * s, -(a * f - c * d) * s,
          C * s, -(a * h - b * g) * s, (a * e - b * d) * s};
}

/// Nearest triangle hit via plane intersection and inside-edge tests.
bool oracle_mesh_hit(const TriMesh<double>& mesh, const V3& o, const V3& d, double& t_hit, V3& color) {
  bool found = false;
  for (const auto& tri : mesh.triangles) {
    V3 p[3], c[3];
    for (int k = 0; k < 3; ++k) {
      const auto& v = mesh.vertices[tri[k]];
      const auto& col = mesh.colors[tri[k]];
      p[k] = {v.x(), v.y(), v.z()};
      c[k] = {col.x(), col.y(), col.z()};
    }
    const V3 n = cross(sub(p[1], p[0]), sub(p[2], p[0]));
    const double denom = dot(n, d);
    if (std::abs(denom) < 1e-14) continue;
    const double t = dot(n, sub(p[0], o)) / denom;
    if (!(t > 0)) continue;
    const V3 x = {o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]};
    const double nn = dot(n, n);
    const double l0 = dot(cross(sub(p[1], x), sub(p[2], x)), n) / nn;
    const double l1 = dot(cross(sub(p[2], x), sub(p[0], x)), n) / nn;
    const double l2 = 1.0 - l0 - l1;
    if (l0 < 0 || l1 < 0 || l2 < 0) continue;
    if (!found || t < t_hit) {
      found = true;
      t_hit = t;
      for (int k = 0; k < 3; ++k) color[k] = l0 * c[0][k] + l1 * c[1][k] + l2 * c[2][k];
    }
  }
  return found;
}

}  // namespace

Image<double> oracle_render(const VolumeFn& volume, const Camera<double>& camera, const Aabb<double>& bounds,
                            int step_count, const TriMesh<double>* mesh, Image<double>* alpha_out,
                            Image<double>* depth_out) {
  const int w = camera.width, h = camera.height;
  std::array<double, 9> k{};
  std::array<double, 9> r{};
  V3 tr{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      k[3 * i + j] = camera.intrinsics(i, j);
      r[3 * i + j] = camera.extrinsics(i, j);
    }
    tr[i] = camera.extrinsics(i, 3);
  }
  const auto kinv = invert3(k);
  // center = -R^T t
  V3 center{};
  for (int j = 0; j < 3; ++j) center[j] = -(r[j] * tr[0] + r[3 + j] * tr[1] + r[6 + j] * tr[2]);

  Image<double> out(w, h, 3);
  if (alpha_out) *alpha_out = Image<double>(w, h, 1);
  if (depth_out) *depth_out = Image<double>(w, h, 1);
  const double scale = 2.0 / bounds.side;
  const double to_world = bounds.side / 2.0;
  const double step = 2.0 / step_count;

  for (int py = 0; py < h; ++py) {
    for (int px = 0; px < w; ++px) {
      const double u = px + 0.5, v = py + 0.5;
      V3 cam{kinv[0] * u + kinv[1] * v + kinv[2], kinv[3] * u + kinv[4] * v + kinv[5], kinv[6] * u + kinv[7] * v + kinv[8]};
      const V3 rel = sub(cam, tr);
      V3 focal{};
      for (int j = 0; j < 3; ++j) focal[j] = r[j] * rel[0] + r[3 + j] * rel[1] + r[6 + j] * rel[2];
      V3 dir = sub(focal, center);
      const double len = std::sqrt(dot(dir, dir));
      for (double& c : dir) c /= len;

      // Normalized-cube origin; direction is unchanged (uniform scaling).
      V3 o{};
      for (int j = 0; j < 3; ++j) o[j] = (center[j] - bounds.center[j]) * scale;

      bool hit_box = true;
      double t0 = -std::numeric_limits<double>::infinity(), t1 = std::numeric_limits<double>::infinity();
      for (int j = 0; j < 3; ++j) {
        if (dir[j] == 0.0) {
          if (o[j] < -1.0 || o[j] > 1.0) hit_box = false;
          continue;
        }
        const double ta = (-1.0 - o[j]) / dir[j];
        const double tb = (1.0 - o[j]) / dir[j];
        t0 = std::max(t0, std::min(ta, tb));
        t1 = std::min(t1, std::max(ta, tb));
      }
      if (t0 < 0.0) t0 = 0.0;
      if (!(t0 < t1)) hit_box = false;

      double mesh_t = 0.0;
      V3 mesh_color{};
      bool hit_mesh = false;
      if (mesh) {
        double tw = 0.0;
        hit_mesh = oracle_mesh_hit(*mesh, center, dir, tw, mesh_color);
        mesh_t = tw / to_world;
      }

      double ir = 0, ig = 0, ib = 0, ia = 0, depth = 0;
      bool saturated = false;
      if (hit_box) {
        double t_end = t1;
        if (hit_mesh && mesh_t < t_end) t_end = mesh_t;
        depth = t_end;
        if (t0 < t_end) {
          for (int s = 1;; ++s) {
            const double t = t0 + s * step;
            if (t > t_end) break;
            const VolumeSample<double> vs =
                volume(Vec3<double>(o[0] + t * dir[0], o[1] + t * dir[1], o[2] + t * dir[2]));
            double da = ia + step * vs.alpha;
            if (da > 1.0) da = 1.0;
            da -= ia;
            ir += vs.rgb[0] * da;
            ig += vs.rgb[1] * da;
            ib += vs.rgb[2] * da;
            ia += da;
            if (ia >= 1.0) {
              ia = 1.0;
              saturated = true;
              depth = t;
              break;
            }
          }
        }
      }
      if (hit_mesh && !saturated) {
        ir += (1.0 - ia) * mesh_color[0];
        ig += (1.0 - ia) * mesh_color[1];
        ib += (1.0 - ia) * mesh_color[2];
        ia = 1.0;
        depth = mesh_t;
      }
      const double fg[3] = {ir, ig, ib};
      for (int c = 0; c < 3; ++c) {
        const double bg = camera.background ? camera.background->at(px, py, c) : 0.0;
        out.at(px, py, c) = (1.0 - ia) * bg + camera.gain[c] * fg[c] + camera.bias[c];
      }
      if (alpha_out) alpha_out->at(px, py, 0) = ia;
      if (depth_out) depth_out->at(px, py, 0) = (hit_box || hit_mesh) ? depth * to_world : 0.0;
    }
  }
  return out;
}

namespace {

std::array<double, 9> oracle_rotation(const Vec4<double>& q) {
  const double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
  if (!(n > 1e-8)) throw DegenerateParameterError("oracle: degenerate quaternion");
  const double a = q[0] / n, b = q[1] / n, c = q[2] / n, d = q[3] / n;
  return {a * a + b * b - c * c - d * d, 2 * (b * c - a * d),         2 * (b * d + a * c),
          2 * (b * c + a * d),         a * a - b * b + c * c - d * d, 2 * (c * d - a * b),
          2 * (b * d - a * c),         2 * (c * d + a * b),         a * a - b * b - c * c + d * d};
}

V3 oracle_affine(const std::array<double, 9>& rot, const Vec3<double>& s, const Vec3<double>& t, const V3& x) {
  const V3 u = {s[0] * (x[0] - t[0]), s[1] * (x[1] - t[1]), s[2] * (x[2] - t[2])};
  return {rot[0] * u[0] + rot[1] * u[1] + rot[2] * u[2], rot[3] * u[0] + rot[4] * u[1] + rot[5] * u[2],
          rot[6] * u[0] + rot[7] * u[1] + rot[8] * u[2]};
}

/// The eight-term trilinear formula on channel c; `clamp` selects clamp-to-edge.
double oracle_trilinear(const VoxelGrid<double>& g, int c, V3 x, bool clamp) {
  const int d = g.resolution();
  for (double& u : x) {
    if (u >= -1.0 && u <= 1.0) continue;
    if (!clamp) return 0.0;
    u = u < -1.0 ? -1.0 : 1.0;
  }
  int i0[3];
  double f[3];
  for (int a = 0; a < 3; ++a) {
    const double gc = (x[a] + 1.0) * 0.5 * (d - 1);
    int i = static_cast<int>(std::floor(gc));
    if (i > d - 2) i = d - 2;
    if (i < 0) i = 0;
    i0[a] = i;
    f[a] = gc - i;
  }
  double sum = 0.0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const double wgt = (dx ? f[0] : 1 - f[0]) * (dy ? f[1] : 1 - f[1]) * (dz ? f[2] : 1 - f[2]);
        sum += wgt * g.at(c, i0[2] + dz, i0[1] + dy, i0[0] + dx);
      }
  return sum;
}

}  // namespace

VolumeFn reference_volume(const SceneState<double>& state) {
  return [&state](const Vec3<double>& x) -> VolumeSample<double> {
    V3 y = {x[0], x[1], x[2]};
    if (state.warp) {
      const WarpField<double>& wf = *state.warp;
      const V3 xg = oracle_affine(oracle_rotation(wf.global.quat), wf.global.scale, wf.global.trans, y);
      const int n = wf.size();
      std::vector<V3> p(n);
      std::vector<double> w(n);
      double total = 0.0;
      for (int i = 0; i < n; ++i) {
        const auto& c = wf.components[i];
        p[i] = oracle_affine(oracle_rotation(c.quat), c.scale, c.trans, xg);
        w[i] = oracle_trilinear(wf.weights, i, wf.space == MixtureSpace::warped ? p[i] : xg, true);
        total += w[i];
      }
      y = {0.0, 0.0, 0.0};
      for (int i = 0; i < n; ++i)
        for (int k = 0; k < 3; ++k) y[k] += w[i] / total * p[i][k];
    }
    return {Vec3<double>(oracle_trilinear(state.tmpl, 0, y, false), oracle_trilinear(state.tmpl, 1, y, false),
                         oracle_trilinear(state.tmpl, 2, y, false)),
            oracle_trilinear(state.tmpl, 3, y, false)};
  };
}

Image<float> procedural_background(int width, int height, int camera_index, std::uint64_t seed) {
  std::mt19937_64 rng(seed * 1000003ULL + static_cast<std::uint64_t>(camera_index));
  std::uniform_real_distribution<double> u(0.0, 2.0 * kPi);
  const double p0 = u(rng), p1 = u(rng), p2 = u(rng);
  Image<float> bg(width, height, 3);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double sx = static_cast<double>(x) / width, sy = static_cast<double>(y) / height;
      bg.at(x, y, 0) = static_cast<float>(0.45 + 0.3 * std::sin(2 * kPi * 1.3 * sx + p0));
      bg.at(x, y, 1) = static_cast<float>(0.5 + 0.25 * std::cos(2 * kPi * 1.1 * sy + p1));
      bg.at(x, y, 2) = static_cast<float>(0.5 + 0.2 * std::sin(2 * kPi * (0.8 * sx + 0.9 * sy) + p2));
    }
  return bg;
}

Dataset synthesize(const SynthOptions& opt) {
  Dataset d;
  d.rig.frames = opt.scene.frames;
  d.rig.bounds = opt.rig.bounds;
  d.rig.cameras = make_rig(opt.rig);
  const int ncam = d.cameras();

  std::mt19937_64 rng(opt.rig.seed ^ 0xca11b4a7ULL);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Camera<double>> cams;
  for (int c = 0; c < ncam; ++c) {
    Camera<double> cam = d.rig.cameras[c].camera;
    if (opt.calibration_noise)
      for (int k = 0; k < 3; ++k) {
        cam.gain[k] = 1.0 + 0.05 * u(rng);
        cam.bias[k] = 0.05 * u(rng);
      }
    if (opt.backgrounds) {
      const Image<float> bg = procedural_background(cam.width, cam.height, c, opt.rig.seed);
      d.backgrounds.emplace_back(bg);
      cam.background = bg.cast<double>();
    } else {
      d.backgrounds.emplace_back();
    }
    cams.push_back(std::move(cam));
  }

  d.images.assign(ncam, std::vector<Image<float>>(d.rig.frames));
  const std::size_t jobs = static_cast<std::size_t>(ncam) * d.rig.frames;
  WorkerPool pool(resolve_thread_count(opt.threads));
  pool.for_dynamic(jobs, 1, [&](std::size_t begin, std::size_t end, int) {
    for (std::size_t j = begin; j < end; ++j) {
      const int c = static_cast<int>(j / d.rig.frames), f = static_cast<int>(j % d.rig.frames);
      const VolumeFn fn = [&](const Vec3<double>& x) { return eval_analytic(opt.scene, f, x); };
      d.images[c][f] = oracle_render(fn, cams[c], d.rig.bounds, opt.step_count).cast<float>();
    }
  });
  for (auto& rc : d.rig.cameras) rc.images.assign(d.rig.frames, std::string());
  return d;
}

}  // namespace volfit
