#pragma once

#include "volfit/autodiff.hpp"
#include "volfit/branch_trace.hpp"

#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace volfit {

template <typename T>
T softplus(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

/// y = W x + b with W stored row-major as [out, in].
template <typename T>
void dense_forward(std::span<const T> w, std::span<const T> b, std::span<const T> x, std::span<T> y) {
  const std::size_t in = x.size();
  for (std::size_t o = 0; o < y.size(); ++o) {
    const T* row = w.data() + o * in;
    T acc = b[o];
    for (std::size_t i = 0; i < in; ++i) acc += row[i] * x[i];
    y[o] = acc;
  }
}

/// Accumulates dW += gy xᵀ, db += gy and (when gx is non-empty) gx += Wᵀ gy.
template <typename T>
void dense_backward(std::span<const T> w, std::span<const T> x, std::span<const T> gy, std::span<T> gw,
                    std::span<T> gb, std::span<T> gx) {
  const std::size_t in = x.size();
  for (std::size_t o = 0; o < gy.size(); ++o) {
    const T g = gy[o];
    gb[o] += g;
    if (g == T(0)) continue;
    T* grow = gw.data() + o * in;
    for (std::size_t i = 0; i < in; ++i) grow[i] += g * x[i];
    if (!gx.empty()) {
      const T* row = w.data() + o * in;
      for (std::size_t i = 0; i < in; ++i) gx[i] += g * row[i];
    }
  }
}

/// Stack of fully-connected layers with leaky-ReLU between layers (none after
/// the last). Parameters live in a ParamStore as `<prefix>.fc<k>.weight|bias`.
template <typename T>
class Mlp {
 public:
  struct Cache {
    std::vector<std::vector<T>> inputs;  // input of each layer
    std::vector<std::vector<T>> pre;     // pre-activation output of each layer
  };

  Mlp() = default;
  Mlp(ParamStore<T>& store, const std::string& prefix, std::vector<int> widths, T slope, ParamGroup group)
      : widths_(std::move(widths)), slope_(slope) {
    for (std::size_t k = 0; k + 1 < widths_.size(); ++k) {
      const std::string base = prefix + ".fc" + std::to_string(k + 1);
      weight_.push_back(store.add(base + ".weight", {widths_[k + 1], widths_[k]}, group));
      bias_.push_back(store.add(base + ".bias", {widths_[k + 1]}, group));
    }
  }

  /// Fan-in scaled uniform weights U(-1/sqrt(in), 1/sqrt(in)); zero biases.
  void init(ParamStore<T>& store, std::mt19937_64& rng) const {
    for (std::size_t k = 0; k < weight_.size(); ++k) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(widths_[k]));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (auto& v : store[weight_[k]].value.data) v = static_cast<T>(u(rng));
      std::fill(store[bias_[k]].value.data.begin(), store[bias_[k]].value.data.end(), T(0));
    }
  }

  int in_size() const { return widths_.front(); }
  int out_size() const { return widths_.back(); }
  std::size_t layers() const { return weight_.size(); }

  std::vector<T> forward(const ParamStore<T>& store, std::span<const T> input, Cache* cache) const {
    if (static_cast<int>(input.size()) != in_size())
      throw ShapeError("MLP input size " + std::to_string(input.size()) + " != " + std::to_string(in_size()));
    std::vector<T> x(input.begin(), input.end());
    if (cache) {
      cache->inputs.clear();
      cache->pre.clear();
    }
    for (std::size_t k = 0; k < weight_.size(); ++k) {
      std::vector<T> y(widths_[k + 1]);
      dense_forward<T>(store[weight_[k]].value.data, store[bias_[k]].value.data, x, y);
      if (cache) {
        cache->inputs.push_back(x);
        cache->pre.push_back(y);
      }
      if (k + 1 < weight_.size()) {
        const bool trace = BranchTrace::active();
        for (auto& v : y) {
          if (trace) BranchTrace::record(trace_tag::kLeakyRelu, v < T(0) ? 1 : 0);
          if (v < T(0)) v *= slope_;
        }
      }
      x = std::move(y);
    }
    return x;
  }

  /// Accumulates parameter gradients; returns dL/dinput.
  std::vector<T> backward(ParamStore<T>& store, const Cache& cache, std::span<const T> g_out) const {
    std::vector<T> g(g_out.begin(), g_out.end());
    for (std::size_t kk = weight_.size(); kk-- > 0;) {
      if (kk + 1 < weight_.size())
        for (std::size_t i = 0; i < g.size(); ++i)
          if (cache.pre[kk][i] < T(0)) g[i] *= slope_;
      std::vector<T> gx(widths_[kk], T(0));
      dense_backward<T>(store[weight_[kk]].value.data, cache.inputs[kk], g, store[weight_[kk]].grad.data,
                        store[bias_[kk]].grad.data, gx);
      g = std::move(gx);
    }
    return g;
  }

 private:
  std::vector<int> widths_;
  T slope_ = T(0.2);
  std::vector<std::size_t> weight_;
  std::vector<std::size_t> bias_;
};

}  // namespace volfit
