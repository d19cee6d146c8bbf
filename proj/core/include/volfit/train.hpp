#pragma once

#include "volfit/autodiff.hpp"
#include "volfit/checkpoint.hpp"
#include "volfit/config.hpp"
#include "volfit/dataset.hpp"
#include "volfit/model.hpp"
#include "volfit/objective.hpp"
#include "volfit/parallel.hpp"
#include "volfit/render.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace volfit {

// ---- optimizer -------------------------------------------------------------

struct AdamOptions {
  double lr = 1e-4;
  double lr_background = 1e-1;
  double lr_calibration = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamOptions from(const TrainConfig& t) {
    return {t.lr, t.lr_background, t.lr_calibration, t.beta1, t.beta2, t.adam_eps};
  }
  double rate(ParamGroup g) const {
    switch (g) {
      case ParamGroup::background: return lr_background;
      case ParamGroup::calibration: return lr_calibration;
      default: return lr;
    }
  }
};

/// First/second moments mirroring the parameter store, plus the step count.
template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m, v;
  std::int64_t step = 0;

  void resize(const ParamStore<T>& store) {
    m.clear();
    v.clear();
    for (const auto& p : store.params()) {
      m.emplace_back(p.value.shape);
      v.emplace_back(p.value.shape);
    }
  }
};

/// One bias-corrected Adam update of every trainable parameter:
/// θ ← θ − lr·m̂/(√v̂ + ε). Non-finite gradients raise NonFiniteError.
template <typename T>
void adam_step(ParamStore<T>& store, AdamState<T>& state, const AdamOptions& opt) {
  store.check_finite_grads();
  if (state.m.size() != store.size()) state.resize(store);
  ++state.step;
  const T b1 = T(opt.beta1), b2 = T(opt.beta2), eps = T(opt.eps);
  const T c1 = T(1) - std::pow(b1, T(state.step));
  const T c2 = T(1) - std::pow(b2, T(state.step));
  for (std::size_t k = 0; k < store.size(); ++k) {
    Param<T>& p = store[k];
    if (!p.trainable) continue;
    const T lr = T(opt.rate(p.group));
    auto& m = state.m[k].data;
    auto& v = state.v[k].data;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const T g = p.grad.data[i];
      m[i] = b1 * m[i] + (T(1) - b1) * g;
      v[i] = b2 * v[i] + (T(1) - b2) * g * g;
      p.value.data[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
}

// ---- minibatches -----------------------------------------------------------

/// `count` distinct pixel indices (y·width + x), uniform without replacement.
std::vector<std::uint32_t> sample_pixels(std::mt19937_64& rng, int width, int height, int count);

struct BatchPair {
  int frame = 0;
  int camera = 0;  // index into the rig
  std::vector<std::uint32_t> pixels;
};

template <typename T>
struct Batch {
  std::vector<BatchPair> pairs;
  std::vector<std::vector<T>> eps;  // per frame reparameterization noise (encoder source)
};

// ---- metrics ---------------------------------------------------------------

struct CameraMetrics {
  std::string camera;
  double mse = 0.0;  // mean over frames, pixels and channels
  double psnr = 0.0;
};

struct EvalReport {
  std::vector<CameraMetrics> cameras;
  double mse = 0.0;
  double psnr = 0.0;
  double mse_e4() const { return mse * 1e4; }
};

/// 10·log10(1/mse), capped at 99 dB.
double psnr_from_mse(double mse);

// ---- trainer ---------------------------------------------------------------

/// Fills the dataset-derived model fields (bounds, frame count, conditioning size).
void bind_config_to_dataset(RunConfig& cfg, const Dataset& data);

/// Owns the model, the per-camera parameters and the optimizer state for one
/// dataset, and evaluates the objective with hand-written adjoints.
template <typename T>
class Trainer {
 public:
  Trainer(RunConfig cfg, std::shared_ptr<const Dataset> data, int threads);

  const RunConfig& config() const { return cfg_; }
  const Dataset& dataset() const { return *data_; }
  SceneModel<T>& model() { return model_; }
  const SceneModel<T>& model() const { return model_; }
  ParamStore<T>& params() { return model_.params(); }
  const ParamStore<T>& params() const { return model_.params(); }
  AdamState<T>& adam() { return adam_; }
  WorkerPool& pool() { return *pool_; }
  std::int64_t step() const { return adam_.step; }

  Batch<T> sample_batch(std::mt19937_64& rng) const;
  /// Every pixel of the given (frame, camera) pairs, zero noise.
  Batch<T> full_batch(const std::vector<std::pair<int, int>>& pairs) const;

  /// Objective on a batch; with `gradients` the parameter gradients are
  /// zeroed and then filled (NaN/Inf raises NonFiniteError).
  LossTerms evaluate_batch(const Batch<T>& batch, bool gradients);

  /// sample → objective → backward → Adam.
  LossTerms train_step(std::mt19937_64& rng);

  /// Inference latent code of a frame (z = μ). Direct mode returns an empty code.
  LatentCode<T> latent(int frame) const;
  /// Activated scene for (frame, camera); `z` overrides the frame's code.
  SceneState<T> scene_state(int frame, int camera, const std::vector<T>* z = nullptr) const;
  /// Camera with the current gain/bias and the background of this run's mode.
  Camera<T> render_camera(int camera) const;

  RenderOutput<T> render(int camera, int frame, const TriMesh<T>* mesh = nullptr, const std::vector<T>* z = nullptr);
  EvalReport evaluate(const std::vector<int>& cameras);

  Checkpoint checkpoint() const;
  /// Restores parameters (and optimizer state when present).
  void restore(const Checkpoint& ckpt);

 private:
  struct CameraSlots {
    std::optional<std::size_t> gain, bias, background;
  };

  const Image<T>* background_image(int camera) const;

  RunConfig cfg_;
  std::shared_ptr<const Dataset> data_;
  std::unique_ptr<WorkerPool> pool_;
  SceneModel<T> model_;
  AdamState<T> adam_;
  std::vector<Camera<T>> cameras_;
  std::vector<CameraSlots> slots_;
  std::vector<std::optional<Image<T>>> fixed_backgrounds_;
  std::vector<Image<T>> targets_;  // camera-major, frame-minor
  std::vector<std::vector<T>> encoder_inputs_;
  std::vector<int> train_cameras_;
  std::vector<SceneStateGrad<T>> worker_grads_;
};

extern template class Trainer<float>;
extern template class Trainer<double>;

/// Loads the config and parameters of a checkpoint written by fit. `data`
/// overrides the dataset directory recorded in the checkpoint.
RunConfig checkpoint_config(const Checkpoint& ckpt);
std::filesystem::path checkpoint_data_dir(const Checkpoint& ckpt);

// ---- fitting loop ----------------------------------------------------------

struct FitOptions {
  std::filesystem::path out_dir;  // empty: nothing written
  std::function<void(std::int64_t step, const LossTerms&)> on_step;
  bool evaluate_holdout = true;
};

struct FitResult {
  std::vector<LossTerms> losses;
  std::optional<EvalReport> holdout;
  std::filesystem::path checkpoint;
};

/// The training loop. Writes `loss.txt`, `fit.log`, `config.json` and
/// `checkpoint.nvckpt` into out_dir. A non-finite loss or gradient saves
/// `diverged.nvckpt` (parameters before the failing step) and throws
/// DivergenceError.
template <typename T>
FitResult fit(Trainer<T>& trainer, const FitOptions& options);

extern template FitResult fit<float>(Trainer<float>&, const FitOptions&);
extern template FitResult fit<double>(Trainer<double>&, const FitOptions&);

}  // namespace volfit
