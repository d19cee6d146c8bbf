#pragma once

#include "volfit/branch_trace.hpp"
#include "volfit/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace volfit {

using Shape = std::vector<std::int64_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, std::int64_t b) { return a * static_cast<std::size_t>(b); });
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
  return s + "]";
}

template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), data(shape_size(shape), fill) {}
  std::size_t size() const { return data.size(); }
  std::span<T> span() { return data; }
  std::span<const T> span() const { return data; }
};

/// Learning-rate groups.
enum class ParamGroup { network, direct, background, calibration };

template <typename T>
struct Param {
  std::string name;
  ParamGroup group = ParamGroup::network;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;
};

/// Named parameter tensors with mirrored gradient tensors, in insertion order.
template <typename T>
class ParamStore {
 public:
  std::size_t add(const std::string& name, Shape shape, ParamGroup group, T fill = T(0)) {
    if (index_.count(name)) throw ShapeError("parameter '" + name + "' registered twice");
    Param<T> p;
    p.name = name;
    p.group = group;
    p.value = Tensor<T>(shape, fill);
    p.grad = Tensor<T>(std::move(shape), T(0));
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return params_.size() - 1;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ShapeError("unknown parameter '" + name + "'");
    return it->second;
  }
  Param<T>& operator[](std::size_t i) { return params_[i]; }
  const Param<T>& operator[](std::size_t i) const { return params_[i]; }
  Param<T>& get(const std::string& name) { return params_[index(name)]; }
  const Param<T>& get(const std::string& name) const { return params_[index(name)]; }

  std::vector<Param<T>>& params() { return params_; }
  const std::vector<Param<T>>& params() const { return params_; }
  std::size_t size() const { return params_.size(); }

  void zero_grad() {
    for (auto& p : params_) std::fill(p.grad.data.begin(), p.grad.data.end(), T(0));
  }

  /// Throws NonFiniteError naming the first gradient tensor with NaN/Inf.
  void check_finite_grads() const {
    for (const auto& p : params_)
      for (T v : p.grad.data)
        if (!std::isfinite(static_cast<double>(v))) throw NonFiniteError(p.name);
  }

 private:
  std::vector<Param<T>> params_;
  std::map<std::string, std::size_t> index_;
};

/// Minimal reverse-mode tape: forward code records one adjoint closure per
/// operation; backward replays them in exact reverse order.
class Tape {
 public:
  void push(std::function<void()> adjoint) { ops_.push_back(std::move(adjoint)); }
  std::size_t size() const { return ops_.size(); }
  void clear() { ops_.clear(); }

  void replay() {
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    ops_.clear();
  }

 private:
  std::vector<std::function<void()>> ops_;
};

/// Replays the tape into the store's gradients, then faults on NaN/Inf.
template <typename T>
void backward(Tape& tape, const ParamStore<T>& store) {
  tape.replay();
  store.check_finite_grads();
}

struct FiniteDiffOptions {
  double eps = 1e-4;
  double tol = 1e-4;
  /// Coordinates probed per tensor (all when the tensor is smaller).
  int max_coords = 64;
  /// Extra random-direction probes for tensors larger than max_coords.
  int directional_probes = 4;
  /// Skip probes whose ±eps evaluations take different discrete branches.
  bool exclude_nonsmooth = true;
  std::uint64_t seed = 7;
  /// When non-empty, only tensors whose name starts with one of these prefixes.
  std::vector<std::string> only;
};

struct TensorCheck {
  std::string name;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  double grad_scale = 0.0;
  int checked = 0;
  int excluded = 0;
  bool passed = true;
};

struct FiniteDiffReport {
  std::vector<TensorCheck> tensors;
  double max_rel_err = 0.0;
  bool passed = true;
};

/// Compares the analytic gradients already stored in `store` against central
/// differences of `loss` (which must read the current parameter values).
///
/// Per tensor the error is max|a - n| / max(max|a|, max|n|, 1e-8) over the
/// probes that stayed on one smooth piece. Parameter values are restored.
template <typename T>
FiniteDiffReport finite_diff_check(ParamStore<T>& store, const std::function<double()>& loss,
                                   const FiniteDiffOptions& opt = {}) {
  auto eval = [&](std::uint64_t* signature) {
    BranchTrace trace;
    const double v = loss();
    if (signature) *signature = trace.signature();
    return v;
  };
  std::uint64_t base_sig = 0, base_sig2 = 0;
  const double f0 = eval(&base_sig);
  const double f0b = eval(&base_sig2);
  if (f0 != f0b || base_sig != base_sig2)
    throw InvalidCheckError("loss is not deterministic (two evaluations differ)");

  std::mt19937_64 rng(opt.seed);
  FiniteDiffReport report;
  for (auto& p : store.params()) {
    if (!p.trainable) continue;
    if (!opt.only.empty() &&
        std::none_of(opt.only.begin(), opt.only.end(), [&](const std::string& pre) { return p.name.rfind(pre, 0) == 0; }))
      continue;
    TensorCheck tc;
    tc.name = p.name;
    double max_diff = 0.0, max_mag = 0.0;

    auto probe = [&](const std::function<void(double)>& shift, double analytic) {
      std::uint64_t sp = 0, sm = 0;
      shift(+opt.eps);
      const double fp = eval(&sp);
      shift(-2 * opt.eps);
      const double fm = eval(&sm);
      shift(+opt.eps);
      if (opt.exclude_nonsmooth && (sp != base_sig || sm != base_sig)) {
        ++tc.excluded;
        return;
      }
      const double numeric = (fp - fm) / (2 * opt.eps);
      max_diff = std::max(max_diff, std::abs(analytic - numeric));
      max_mag = std::max({max_mag, std::abs(analytic), std::abs(numeric)});
      ++tc.checked;
    };

    const std::size_t n = p.value.size();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), 0);
    if (n > static_cast<std::size_t>(opt.max_coords)) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opt.max_coords);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      const T original = p.value.data[i];
      probe([&](double d) { p.value.data[i] = static_cast<T>(static_cast<double>(p.value.data[i]) + d); },
            static_cast<double>(p.grad.data[i]));
      p.value.data[i] = original;
    }
    if (n > static_cast<std::size_t>(opt.max_coords)) {
      std::normal_distribution<double> normal;
      for (int k = 0; k < opt.directional_probes; ++k) {
        std::vector<double> dir(n);
        double norm = 0.0;
        for (auto& d : dir) {
          d = normal(rng);
          norm += d * d;
        }
        norm = std::sqrt(norm);
        double analytic = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          dir[i] /= norm;
          analytic += dir[i] * static_cast<double>(p.grad.data[i]);
        }
        const std::vector<T> original = p.value.data;
        probe(
            [&](double d) {
              for (std::size_t i = 0; i < n; ++i)
                p.value.data[i] = static_cast<T>(static_cast<double>(p.value.data[i]) + d * dir[i]);
            },
            analytic);
        p.value.data = original;
      }
    }
    tc.max_abs_err = max_diff;
    tc.grad_scale = max_mag;
    tc.max_rel_err = max_diff / std::max(max_mag, 1e-8);
    tc.passed = tc.max_rel_err < opt.tol;
    report.max_rel_err = std::max(report.max_rel_err, tc.max_rel_err);
    report.passed = report.passed && tc.passed;
    report.tensors.push_back(tc);
  }
  return report;
}

}  // namespace volfit
