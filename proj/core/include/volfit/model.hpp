#pragma once

#include "volfit/autodiff.hpp"
#include "volfit/common.hpp"
#include "volfit/geometry.hpp"
#include "volfit/nn.hpp"
#include "volfit/volume.hpp"
#include "volfit/warp.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace volfit {

enum class ModelMode { direct, latent };
enum class LatentSource { encoder, free };

struct ModelConfig {
  ModelMode mode = ModelMode::direct;
  int template_res = 32;

  bool warp_enabled = true;
  int warp_count = 16;
  int warp_res = 32;
  MixtureSpace mixture_space = MixtureSpace::warped;

  std::array<double, 3> bounds_center = {0.0, 0.0, 0.0};
  double bounds_side = 1.0;

  int latent_dim = 8;
  int conditioning_dim = 0;
  bool view_conditioning = false;
  LatentSource latent_source = LatentSource::encoder;
  int frame_count = 1;  // number of free latent codes

  int encoder_views = 3;
  int encoder_res = 16;
  int encoder_hidden = 256;

  int decoder_hidden = 128;
  int decoder_bottleneck = 4;
  int warp_hidden = 32;
  double leaky_slope = 0.2;

  double quat_noise = 0.01;
  std::uint64_t init_seed = 1;
};

/// Per-frame latent distribution and its sample.
template <typename T>
struct LatentCode {
  std::vector<T> mu;
  std::vector<T> log_std;
  std::vector<T> z;
};

/// z = μ + exp(log_std) ∘ ε.
template <typename T>
std::vector<T> reparameterize(std::span<const T> mu, std::span<const T> log_std, std::span<const T> eps) {
  std::vector<T> z(mu.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = mu[i] + std::exp(log_std[i]) * eps[i];
  return z;
}

/// (1 - t) z_a + t z_b.
template <typename T>
std::vector<T> latent_interpolate(std::span<const T> za, std::span<const T> zb, T t) {
  if (za.size() != zb.size()) throw ShapeError("latent codes have different lengths");
  std::vector<T> z(za.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = (T(1) - t) * za[i] + t * zb[i];
  return z;
}

/// Number of raw values describing the affine part of a warp field
/// (global + components, 10 each: quaternion, scale, translation).
inline int warp_affine_size(int components) { return 10 * (components + 1); }

/// Builds an activated warp field from raw values. With `decoded` set the raw
/// affine values are offsets from the identity (and the lattice translations);
/// otherwise they are the parameters themselves.
template <typename T>
WarpField<T> warp_from_raw(std::span<const T> affine, std::span<const T> weight_raw, int count, int res,
                           MixtureSpace space, bool decoded) {
  WarpField<T> wf;
  wf.space = space;
  const auto lattice = warp_lattice<T>(count);
  auto read = [&](int slot, AffineWarp<T>& a, const Vec3<T>& base_t) {
    const T* v = affine.data() + 10 * slot;
    a.quat = Vec4<T>(v[0], v[1], v[2], v[3]);
    a.scale = Vec3<T>(v[4], v[5], v[6]);
    a.trans = Vec3<T>(v[7], v[8], v[9]);
    if (decoded) {
      a.quat[0] += T(1);
      a.scale += Vec3<T>::Ones();
      a.trans += base_t;
    }
  };
  read(0, wf.global, Vec3<T>::Zero());
  wf.components.resize(count);
  for (int i = 0; i < count; ++i) read(i + 1, wf.components[i], lattice[i]);
  wf.weights = VoxelGrid<T>(count, res);
  for (std::size_t i = 0; i < wf.weights.size(); ++i) wf.weights.data()[i] = std::exp(weight_raw[i]);
  return wf;
}

/// Reverse mode of warp_from_raw (accumulates).
template <typename T>
void warp_from_raw_backward(const WarpField<T>& wf, const WarpGrad<T>& g, std::span<T> g_affine,
                            std::span<T> g_weight_raw) {
  auto write = [&](int slot, const AffineWarp<T>& a, const typename WarpGrad<T>::Affine& ga) {
    T* v = g_affine.data() + 10 * slot;
    const Vec4<T> gq = quat_rotmat_adjoint(a.quat, ga.rotation);
    for (int k = 0; k < 4; ++k) v[k] += gq[k];
    for (int k = 0; k < 3; ++k) {
      v[4 + k] += ga.scale[k];
      v[7 + k] += ga.trans[k];
    }
  };
  write(0, wf.global, g.global);
  for (int i = 0; i < wf.size(); ++i) write(i + 1, wf.components[i], g.components[i]);
  for (std::size_t i = 0; i < wf.weights.size(); ++i) g_weight_raw[i] += g.weights.data()[i] * wf.weights.data()[i];
}

/// The fittable scene: parameters plus the maps from parameters to a
/// SceneState. Direct mode keeps template and warp as free tensors; latent
/// mode decodes them from a code z (from the encoder or a free per-frame code).
template <typename T>
class SceneModel {
 public:
  struct EncodeCache {
    typename Mlp<T>::Cache mlp;
  };
  struct DecodeCache {
    std::vector<T> input;
    std::vector<T> rgb_input;
    typename Mlp<T>::Cache tmpl, rgb, warp;
    std::vector<T> tmpl_raw;
    std::vector<T> warp_raw;
  };

  explicit SceneModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
    validate_config();
    const int d = cfg_.template_res;
    const Shape grid = {4, d, d, d};
    if (cfg_.mode == ModelMode::direct) {
      tmpl_raw_ = params_.add("template.raw", grid, ParamGroup::direct);
      if (cfg_.warp_enabled) {
        warp_global_ = add_affine("warp.global");
        for (int i = 0; i < cfg_.warp_count; ++i) warp_comps_.push_back(add_affine("warp.comp" + std::to_string(i)));
        const int r = cfg_.warp_res;
        warp_weights_ = params_.add("warp.weights", {cfg_.warp_count, r, r, r}, ParamGroup::direct);
      }
    } else {
      const T slope = static_cast<T>(cfg_.leaky_slope);
      const int in = cfg_.latent_dim + cfg_.conditioning_dim;
      if (cfg_.latent_source == LatentSource::encoder) {
        encoder_ = Mlp<T>(params_, "enc", {encoder_input_size(), cfg_.encoder_hidden, 2 * cfg_.latent_dim}, slope,
                          ParamGroup::network);
      } else {
        codes_ = params_.add("latent.codes", {cfg_.frame_count, cfg_.latent_dim}, ParamGroup::network);
      }
      const int voxels = d * d * d;
      if (cfg_.view_conditioning) {
        tmpl_ = Mlp<T>(params_, "dec.alpha", {in, cfg_.decoder_hidden, cfg_.decoder_bottleneck, voxels}, slope,
                       ParamGroup::network);
        rgb_ = Mlp<T>(params_, "dec.rgb", {in + 3, cfg_.decoder_hidden, cfg_.decoder_bottleneck, 3 * voxels}, slope,
                      ParamGroup::network);
      } else {
        tmpl_ = Mlp<T>(params_, "dec.tmpl", {in, cfg_.decoder_hidden, cfg_.decoder_bottleneck, 4 * voxels}, slope,
                       ParamGroup::network);
      }
      if (cfg_.warp_enabled) {
        const int r = cfg_.warp_res;
        warp_ = Mlp<T>(params_, "dec.warp",
                       {in, cfg_.warp_hidden, warp_affine_size(cfg_.warp_count) + cfg_.warp_count * r * r * r}, slope,
                       ParamGroup::network);
      }
    }
    initialize();
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  Aabb<T> bounds() const {
    return {Vec3<T>(cfg_.bounds_center[0], cfg_.bounds_center[1], cfg_.bounds_center[2]),
            static_cast<T>(cfg_.bounds_side)};
  }

  bool is_direct() const { return cfg_.mode == ModelMode::direct; }
  bool uses_encoder() const { return !is_direct() && cfg_.latent_source == LatentSource::encoder; }

  int encoder_input_size() const { return cfg_.encoder_views * cfg_.encoder_res * cfg_.encoder_res * 3; }

  /// Re-draws every parameter from the initialization distribution.
  void initialize() {
    std::mt19937_64 rng(cfg_.init_seed);
    if (is_direct()) {
      auto& t = params_[tmpl_raw_].value.data;
      std::fill(t.begin(), t.end(), T(0));
      if (cfg_.warp_enabled) {
        std::normal_distribution<double> noise(0.0, cfg_.quat_noise);
        const auto lattice = warp_lattice<T>(cfg_.warp_count);
        auto init_affine = [&](const AffineSlots& s, const Vec3<T>& trans) {
          auto& q = params_[s.quat].value.data;
          q = {T(1), T(0), T(0), T(0)};
          for (auto& v : q) v += static_cast<T>(noise(rng));
          params_[s.scale].value.data = {T(1), T(1), T(1)};
          params_[s.trans].value.data = {trans.x(), trans.y(), trans.z()};
        };
        init_affine(warp_global_, Vec3<T>::Zero());
        for (int i = 0; i < cfg_.warp_count; ++i) init_affine(warp_comps_[i], lattice[i]);
        auto& w = params_[warp_weights_].value.data;
        std::fill(w.begin(), w.end(), T(0));
      }
    } else {
      if (encoder_) encoder_->init(params_, rng);
      if (codes_) {
        std::normal_distribution<double> normal(0.0, 0.1);
        for (auto& v : params_[*codes_].value.data) v = static_cast<T>(normal(rng));
      }
      tmpl_.init(params_, rng);
      if (rgb_) rgb_->init(params_, rng);
      if (warp_) warp_->init(params_, rng);
    }
  }

  // ---- direct mode -------------------------------------------------------

  SceneState<T> direct_state() const {
    require(is_direct(), "direct_state on a latent model");
    SceneState<T> s;
    s.bounds = bounds();
    s.tmpl = VoxelGrid<T>(4, cfg_.template_res);
    const auto& raw = params_[tmpl_raw_].value.data;
    for (std::size_t i = 0; i < raw.size(); ++i) s.tmpl.data()[i] = softplus(raw[i]);
    if (cfg_.warp_enabled) {
      const std::vector<T> affine = gather_affine();
      s.warp = warp_from_raw<T>(affine, params_[warp_weights_].value.data, cfg_.warp_count, cfg_.warp_res,
                                cfg_.mixture_space, false);
    }
    return s;
  }

  void direct_backward(const SceneState<T>& state, const SceneStateGrad<T>& g) {
    require(is_direct(), "direct_backward on a latent model");
    const auto& raw = params_[tmpl_raw_].value.data;
    auto& graw = params_[tmpl_raw_].grad.data;
    for (std::size_t i = 0; i < raw.size(); ++i) graw[i] += g.tmpl.data()[i] * sigmoid(raw[i]);
    if (cfg_.warp_enabled && state.warp && g.warp) {
      std::vector<T> g_affine(warp_affine_size(cfg_.warp_count), T(0));
      warp_from_raw_backward<T>(*state.warp, *g.warp, g_affine, params_[warp_weights_].grad.data);
      scatter_affine_grad(g_affine);
    }
  }

  // ---- latent mode -------------------------------------------------------

  /// Encoder forward: returns μ, log σ and z = μ (inference sample).
  LatentCode<T> encode(std::span<const T> views, EncodeCache* cache) const {
    require(uses_encoder(), "encode requires a latent model with an encoder");
    if (static_cast<int>(views.size()) != encoder_input_size())
      throw ShapeError("encoder expects " + std::to_string(encoder_input_size()) + " inputs, got " +
                       std::to_string(views.size()));
    const std::vector<T> out = encoder_->forward(params_, views, cache ? &cache->mlp : nullptr);
    LatentCode<T> code;
    const int l = cfg_.latent_dim;
    code.mu.assign(out.begin(), out.begin() + l);
    code.log_std.assign(out.begin() + l, out.end());
    code.z = code.mu;
    return code;
  }

  void encode_backward(const EncodeCache& cache, std::span<const T> g_mu, std::span<const T> g_log_std) {
    std::vector<T> g(g_mu.begin(), g_mu.end());
    g.insert(g.end(), g_log_std.begin(), g_log_std.end());
    encoder_->backward(params_, cache.mlp, g);
  }

  /// Free per-frame code (latent source `free`): μ = code, log σ = 0.
  LatentCode<T> free_code(int frame) const {
    require(codes_.has_value(), "model has no free latent codes");
    if (frame < 0 || frame >= cfg_.frame_count) throw ShapeError("frame index out of range for latent codes");
    const auto& v = params_[*codes_].value.data;
    LatentCode<T> code;
    code.mu.assign(v.begin() + frame * cfg_.latent_dim, v.begin() + (frame + 1) * cfg_.latent_dim);
    code.log_std.assign(cfg_.latent_dim, T(0));
    code.z = code.mu;
    return code;
  }

  void free_code_backward(int frame, std::span<const T> g_mu) {
    auto& g = params_[*codes_].grad.data;
    for (int i = 0; i < cfg_.latent_dim; ++i) g[frame * cfg_.latent_dim + i] += g_mu[i];
  }

  /// Decodes z (with conditioning c and optional view direction) into an
  /// activated SceneState.
  SceneState<T> decode(std::span<const T> z, std::span<const T> c, const std::optional<Vec3<T>>& view_dir,
                       DecodeCache* cache) const {
    require(!is_direct(), "decode on a direct model");
    if (static_cast<int>(z.size()) != cfg_.latent_dim) throw ShapeError("latent code has wrong length");
    if (static_cast<int>(c.size()) != cfg_.conditioning_dim) throw ShapeError("conditioning vector has wrong length");
    DecodeCache local;
    DecodeCache& dc = cache ? *cache : local;
    dc.input.assign(z.begin(), z.end());
    dc.input.insert(dc.input.end(), c.begin(), c.end());

    const int d = cfg_.template_res;
    const std::size_t voxels = static_cast<std::size_t>(d) * d * d;
    if (cfg_.view_conditioning) {
      if (!view_dir) throw ShapeError("view-conditioned decode needs a view direction");
      dc.rgb_input = dc.input;
      for (int k = 0; k < 3; ++k) dc.rgb_input.push_back((*view_dir)[k]);
      const std::vector<T> alpha = tmpl_.forward(params_, dc.input, &dc.tmpl);
      const std::vector<T> rgb = rgb_->forward(params_, dc.rgb_input, &dc.rgb);
      dc.tmpl_raw = rgb;
      dc.tmpl_raw.insert(dc.tmpl_raw.end(), alpha.begin(), alpha.end());
    } else {
      dc.tmpl_raw = tmpl_.forward(params_, dc.input, &dc.tmpl);
    }
    SceneState<T> s;
    s.bounds = bounds();
    s.tmpl = VoxelGrid<T>(4, d);
    for (std::size_t i = 0; i < 4 * voxels; ++i) s.tmpl.data()[i] = softplus(dc.tmpl_raw[i]);
    if (cfg_.warp_enabled) {
      dc.warp_raw = warp_->forward(params_, dc.input, &dc.warp);
      const std::size_t na = warp_affine_size(cfg_.warp_count);
      s.warp = warp_from_raw<T>(std::span<const T>(dc.warp_raw).subspan(0, na),
                                std::span<const T>(dc.warp_raw).subspan(na), cfg_.warp_count, cfg_.warp_res,
                                cfg_.mixture_space, true);
    }
    return s;
  }

  /// Reverse mode of decode; accumulates decoder gradients, returns dL/dz.
  std::vector<T> decode_backward(const DecodeCache& dc, const SceneState<T>& state, const SceneStateGrad<T>& g) {
    const int d = cfg_.template_res;
    const std::size_t voxels = static_cast<std::size_t>(d) * d * d;
    std::vector<T> g_raw(4 * voxels);
    for (std::size_t i = 0; i < g_raw.size(); ++i) g_raw[i] = g.tmpl.data()[i] * sigmoid(dc.tmpl_raw[i]);
    std::vector<T> g_in(dc.input.size(), T(0));
    auto add = [&](const std::vector<T>& v) {
      for (std::size_t i = 0; i < g_in.size(); ++i) g_in[i] += v[i];
    };
    if (cfg_.view_conditioning) {
      add(rgb_->backward(params_, dc.rgb, std::span<const T>(g_raw).subspan(0, 3 * voxels)));
      add(tmpl_.backward(params_, dc.tmpl, std::span<const T>(g_raw).subspan(3 * voxels)));
    } else {
      add(tmpl_.backward(params_, dc.tmpl, g_raw));
    }
    if (cfg_.warp_enabled && state.warp && g.warp) {
      std::vector<T> g_warp(dc.warp_raw.size(), T(0));
      const std::size_t na = warp_affine_size(cfg_.warp_count);
      warp_from_raw_backward<T>(*state.warp, *g.warp, std::span<T>(g_warp).subspan(0, na),
                                std::span<T>(g_warp).subspan(na));
      add(warp_->backward(params_, dc.warp, g_warp));
    }
    g_in.resize(cfg_.latent_dim);
    return g_in;
  }

 private:
  struct AffineSlots {
    std::size_t quat, scale, trans;
  };

  static void require(bool ok, const char* what) {
    if (!ok) throw ShapeError(what);
  }

  void validate_config() const {
    if (cfg_.template_res < 2) throw ShapeError("template resolution must be >= 2");
    if (cfg_.warp_enabled && (cfg_.warp_count < 1 || cfg_.warp_count > kMaxWarpComponents))
      throw ShapeError("warp count out of range");
    if (cfg_.warp_enabled && cfg_.warp_res < 2) throw ShapeError("warp resolution must be >= 2");
    if (!(cfg_.bounds_side > 0)) throw ShapeError("bounds side must be positive");
    if (cfg_.mode == ModelMode::latent) {
      if (cfg_.latent_dim < 1) throw ShapeError("latent dimension must be positive");
      if (cfg_.conditioning_dim < 0) throw ShapeError("conditioning dimension must be non-negative");
      if (cfg_.latent_source == LatentSource::free && cfg_.frame_count < 1)
        throw ShapeError("free latent codes need at least one frame");
    } else if (cfg_.view_conditioning) {
      throw ShapeError("view conditioning requires latent mode");
    }
  }

  AffineSlots add_affine(const std::string& base) {
    return {params_.add(base + ".quat", {4}, ParamGroup::direct), params_.add(base + ".scale", {3}, ParamGroup::direct),
            params_.add(base + ".trans", {3}, ParamGroup::direct)};
  }

  std::vector<T> gather_affine() const {
    std::vector<T> out;
    out.reserve(warp_affine_size(cfg_.warp_count));
    auto put = [&](const AffineSlots& s) {
      for (std::size_t idx : {s.quat, s.scale, s.trans})
        out.insert(out.end(), params_[idx].value.data.begin(), params_[idx].value.data.end());
    };
    put(warp_global_);
    for (const auto& s : warp_comps_) put(s);
    return out;
  }

  void scatter_affine_grad(std::span<const T> g) {
    std::size_t off = 0;
    auto take = [&](const AffineSlots& s) {
      for (std::size_t idx : {s.quat, s.scale, s.trans})
        for (auto& v : params_[idx].grad.data) v += g[off++];
    };
    take(warp_global_);
    for (const auto& s : warp_comps_) take(s);
  }

  ModelConfig cfg_;
  ParamStore<T> params_;

  std::size_t tmpl_raw_ = 0;
  AffineSlots warp_global_{};
  std::vector<AffineSlots> warp_comps_;
  std::size_t warp_weights_ = 0;

  std::optional<Mlp<T>> encoder_;
  std::optional<std::size_t> codes_;
  Mlp<T> tmpl_;
  std::optional<Mlp<T>> rgb_;
  std::optional<Mlp<T>> warp_;
};

/// Normalized direction from the camera center toward the volume center.
template <typename T>
Vec3<T> view_direction(const Camera<T>& camera, const Aabb<T>& bounds) {
  return (bounds.center - camera.center()).normalized();
}

}  // namespace volfit
