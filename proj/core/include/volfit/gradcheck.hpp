#pragma once

#include "volfit/autodiff.hpp"
#include "volfit/config.hpp"
#include "volfit/dataset.hpp"

#include <cstdint>

namespace volfit {

/// Tiny in-memory dataset: `cameras` cameras on the default rig, uniform
/// random target images and backgrounds. No cameras are held out.
Dataset random_dataset(int cameras, int size, int frames, std::uint64_t seed);

struct GradcheckOptions {
  ModelMode mode = ModelMode::direct;
  LatentSource latent_source = LatentSource::free;
  bool view_conditioning = false;
  bool warp = true;
  MixtureSpace mixture_space = MixtureSpace::warped;
  BackgroundMode background = BackgroundMode::learned;
  int resolution = 4;
  int cameras = 2;
  int image_size = 8;
  int frames = 1;
  int step_count = 32;
  std::uint64_t seed = 1;
  FiniteDiffOptions fd{.eps = 1e-6};
};

struct GradcheckResult {
  FiniteDiffReport report;
  double loss = 0.0;
};

/// Random double-precision instance (parameters perturbed away from their
/// initial values, priors on), analytic gradients of the full objective over
/// every pixel, then central finite differences on a single worker.
GradcheckResult run_gradcheck(const GradcheckOptions& opt);

}  // namespace volfit
