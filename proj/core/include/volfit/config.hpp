#pragma once

#include "volfit/model.hpp"
#include "volfit/objective.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace volfit {

enum class BackgroundMode { known, learned, none };

struct TrainConfig {
  int batch_size = 16;  // frame-camera pairs per step
  int pixels_per_image = 128 * 128;
  int iterations = 2000;
  std::uint64_t seed = 1;
  bool double_precision = false;
  bool priors = true;
  BackgroundMode background = BackgroundMode::known;
  bool learn_calibration = true;
  int step_count = 128;

  double lr = 1e-4;
  double lr_background = 1e-1;
  double lr_calibration = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  int background_median_frames = 8;
  int checkpoint_every = 0;  // 0: final checkpoint only
  int eval_every = 0;        // 0: evaluate held-out cameras at the end only
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  LossWeights loss;
};

const char* to_string(ModelMode m);
const char* to_string(LatentSource s);
const char* to_string(MixtureSpace s);
const char* to_string(BackgroundMode m);

/// Pretty JSON with sections "model", "train" and "loss".
std::string config_to_json(const RunConfig& cfg);

/// Applies a JSON document on top of `base`. Unknown sections or keys and
/// ill-typed values raise ConfigError.
RunConfig config_from_json(const std::string& text, const RunConfig& base = {});
RunConfig load_config(const std::filesystem::path& path, const RunConfig& base = {});

/// Sets one value addressed as "section.key"; `value` is parsed as JSON and
/// falls back to a bare string (so `train.background=learned` works).
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

}  // namespace volfit
