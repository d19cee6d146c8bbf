#pragma once

#include "volfit/branch_trace.hpp"
#include "volfit/common.hpp"
#include "volfit/grid.hpp"

#include <algorithm>
#include <cmath>
#include <span>

namespace volfit {

struct LossWeights {
  double kl = 0.001;
  double tv = 0.01;
  double beta = 0.1;
  double beta_eps = 1e-5;
  double tv_eps = 1e-5;
};

/// The terms of one objective evaluation; `kl`, `tv` and `beta` are already
/// weighted except kl (the total applies λ_KL).
struct LossTerms {
  double mse = 0.0;
  double kl = 0.0;
  double tv = 0.0;
  double beta = 0.0;
  double total = 0.0;
};

/// (1/P) Σ_p ‖pred_p − target_p‖² over interleaved RGB pixels. When `grad`
/// is non-empty it receives dL/dpred (overwritten).
template <typename T>
T mse_loss(std::span<const T> pred, std::span<const T> target, std::span<T> grad = {}) {
  if (pred.size() != target.size() || pred.size() % 3 != 0) throw ShapeError("mse_loss: pixel sets differ");
  const std::size_t pixels = pred.size() / 3;
  if (pixels == 0) return T(0);
  T sum = T(0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const T d = pred[i] - target[i];
    sum += d * d;
    if (!grad.empty()) grad[i] = T(2) * d / T(pixels);
  }
  return sum / T(pixels);
}

/// (1/N) Σ λ ‖∇ log max(α, ε)‖ over the α channel (channel 3) of an RGBα
/// grid, with forward differences (zero past the + boundary). `grad` (when
/// non-null) accumulates dL/dgrid.
template <typename T>
T tv_log_prior(const VoxelGrid<T>& grid, T lambda, T eps, VoxelGrid<T>* grad = nullptr) {
  const int d = grid.resolution();
  const int c = grid.channels() - 1;
  const std::size_t n = static_cast<std::size_t>(d) * d * d;
  const bool trace = BranchTrace::active();
  std::vector<T> logs(n);
  const T* alpha = grid.channel(c).data();
  for (std::size_t i = 0; i < n; ++i) {
    const bool clamped = alpha[i] < eps;
    if (trace) BranchTrace::record(trace_tag::kLogClamp, static_cast<std::int64_t>(i), clamped);
    logs[i] = std::log(clamped ? eps : alpha[i]);
  }
  std::vector<T> g_log;
  if (grad) g_log.assign(n, T(0));
  const std::size_t stride[3] = {1, static_cast<std::size_t>(d), static_cast<std::size_t>(d) * d};
  T sum = T(0);
  for (int z = 0; z < d; ++z)
    for (int y = 0; y < d; ++y)
      for (int x = 0; x < d; ++x) {
        const std::size_t i = (static_cast<std::size_t>(z) * d + y) * d + x;
        const int pos[3] = {x, y, z};
        T diff[3];
        T sq = T(0);
        for (int a = 0; a < 3; ++a) {
          diff[a] = pos[a] + 1 < d ? logs[i + stride[a]] - logs[i] : T(0);
          sq += diff[a] * diff[a];
        }
        const T norm = std::sqrt(sq);
        if (trace) BranchTrace::record(trace_tag::kTvZeroNorm, static_cast<std::int64_t>(i), norm == T(0));
        sum += norm;
        if (grad && norm > T(0)) {
          for (int a = 0; a < 3; ++a) {
            if (pos[a] + 1 >= d) continue;
            const T g = lambda * diff[a] / (norm * T(n));
            g_log[i + stride[a]] += g;
            g_log[i] -= g;
          }
        }
      }
  if (grad) {
    T* ga = grad->channel(c).data();
    for (std::size_t i = 0; i < n; ++i)
      if (alpha[i] >= eps) ga[i] += g_log[i] / alpha[i];
  }
  return lambda * sum / T(n);
}

/// (1/P) Σ λ [log c + log(1 − c)] with c = clamp(α, ε, 1 − ε). `grad`
/// (when non-empty) receives dL/dα (overwritten).
template <typename T>
T beta_prior(std::span<const T> alpha, T lambda, T eps, std::span<T> grad = {}) {
  if (alpha.empty()) return T(0);
  const T p = T(alpha.size());
  const bool trace = BranchTrace::active();
  T sum = T(0);
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    const bool lo = alpha[i] < eps, hi = alpha[i] > T(1) - eps;
    if (trace) BranchTrace::record(trace_tag::kLogClamp, static_cast<std::int64_t>(i), lo ? 1 : hi ? 2 : 0);
    const T c = lo ? eps : hi ? T(1) - eps : alpha[i];
    sum += std::log(c) + std::log(T(1) - c);
    if (!grad.empty()) grad[i] = (lo || hi) ? T(0) : lambda * (T(1) / c - T(1) / (T(1) - c)) / p;
  }
  return lambda * sum / p;
}

/// Σ ½(μ² + σ² − 1 − 2 log σ). Gradients (when non-empty) are accumulated.
template <typename T>
T kl_normal(std::span<const T> mu, std::span<const T> log_std, std::span<T> g_mu = {}, std::span<T> g_log_std = {},
            T scale = T(1)) {
  if (mu.size() != log_std.size()) throw ShapeError("kl_normal: length mismatch");
  T sum = T(0);
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const T var = std::exp(T(2) * log_std[i]);
    sum += T(0.5) * (mu[i] * mu[i] + var - T(1) - T(2) * log_std[i]);
    if (!g_mu.empty()) g_mu[i] += scale * mu[i];
    if (!g_log_std.empty()) g_log_std[i] += scale * (var - T(1));
  }
  return sum;
}

/// mse + λ_KL·kl + tv + beta (the prior terms carry their own weights).
inline double total_loss(const LossTerms& t, const LossWeights& w) { return t.mse + w.kl * t.kl + t.tv + t.beta; }

}  // namespace volfit
