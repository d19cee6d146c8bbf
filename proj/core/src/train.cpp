#include "volfit/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <numeric>

namespace volfit {

std::vector<std::uint32_t> sample_pixels(std::mt19937_64& rng, int width, int height, int count) {
  const std::uint32_t n = static_cast<std::uint32_t>(width) * static_cast<std::uint32_t>(height);
  if (count < 0 || static_cast<std::uint32_t>(count) > n) throw ShapeError("sample_pixels: count exceeds pixel count");
  std::vector<std::uint32_t> all(n);
  std::iota(all.begin(), all.end(), 0u);
  // Partial Fisher-Yates: the first `count` slots become the sample.
  for (std::uint32_t i = 0; i < static_cast<std::uint32_t>(count); ++i) {
    std::uniform_int_distribution<std::uint32_t> pick(i, n - 1);
    std::swap(all[i], all[pick(rng)]);
  }
  all.resize(count);
  return all;
}

double psnr_from_mse(double mse) {
  if (!(mse > 0)) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

void bind_config_to_dataset(RunConfig& cfg, const Dataset& data) {
  const Aabb<double>& b = data.rig.bounds;
  cfg.model.bounds_center = {b.center.x(), b.center.y(), b.center.z()};
  cfg.model.bounds_side = b.side;
  cfg.model.frame_count = data.frames();
  cfg.model.conditioning_dim = data.rig.conditioning.empty() ? 0 : static_cast<int>(data.rig.conditioning[0].size());
}

namespace {

std::string camera_param(const std::string& id, const char* what) { return "cam." + id + "." + what; }

template <typename T>
Vec3<T> vec3_of(const Param<T>& p) {
  return {p.value.data[0], p.value.data[1], p.value.data[2]};
}

}  // namespace

template <typename T>
Trainer<T>::Trainer(RunConfig cfg, std::shared_ptr<const Dataset> data, int threads)
    : cfg_(std::move(cfg)),
      data_(std::move(data)),
      pool_(std::make_unique<WorkerPool>(resolve_thread_count(threads))),
      model_(cfg_.model) {
  const Dataset& d = *data_;
  d.validate();
  if (d.frames() < 1) throw ShapeError("dataset has no frames");
  train_cameras_ = d.train_cameras();
  if (train_cameras_.empty()) throw ShapeError("dataset has no training cameras");
  if (!model_.is_direct() && cfg_.model.latent_source == LatentSource::free && cfg_.model.frame_count != d.frames())
    throw ShapeError("free latent codes: model frame_count does not match the dataset");
  if (cfg_.model.conditioning_dim > 0 && static_cast<int>(d.rig.conditioning.size()) != d.frames())
    throw ShapeError("model expects conditioning vectors but the rig has none");

  for (int c = 0; c < d.cameras(); ++c) {
    cameras_.push_back(d.rig.cameras[c].camera.template cast<T>());
    for (int f = 0; f < d.frames(); ++f) targets_.push_back(d.images[c][f].template cast<T>());
    fixed_backgrounds_.emplace_back();
    if (c < static_cast<int>(d.backgrounds.size()) && d.backgrounds[c])
      fixed_backgrounds_[c] = d.backgrounds[c]->template cast<T>();
  }

  // Per-camera calibration and (learned) backgrounds for training cameras.
  slots_.resize(d.cameras());
  ParamStore<T>& store = model_.params();
  for (int c : train_cameras_) {
    const Camera<T>& cam = cameras_[c];
    slots_[c].gain = store.add(camera_param(cam.id, "gain"), {3}, ParamGroup::calibration, T(1));
    slots_[c].bias = store.add(camera_param(cam.id, "bias"), {3}, ParamGroup::calibration, T(0));
    store[*slots_[c].gain].trainable = cfg_.train.learn_calibration;
    store[*slots_[c].bias].trainable = cfg_.train.learn_calibration;
    if (cfg_.train.background == BackgroundMode::learned) {
      slots_[c].background = store.add(camera_param(cam.id, "background"), {cam.height, cam.width, 3},
                                        ParamGroup::background);
      std::vector<const Image<float>*> frames;
      for (int f = 0; f < std::min(d.frames(), std::max(1, cfg_.train.background_median_frames)); ++f)
        frames.push_back(&d.images[c][f]);
      const Image<float> med = median_image(frames);
      auto& v = store[*slots_[c].background].value.data;
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(med.data()[i]);
    }
  }
  for (int c = 0; c < d.cameras(); ++c) {
    if (slots_[c].background) continue;
    if (cfg_.train.background == BackgroundMode::known && !fixed_backgrounds_[c])
      throw ShapeError("background mode 'known' but camera '" + cameras_[c].id + "' has no background image");
    if (cfg_.train.background == BackgroundMode::learned && !fixed_backgrounds_[c]) {
      // Held-out camera without a recorded background: median of its own frames.
      std::vector<const Image<float>*> frames;
      for (int f = 0; f < std::min(d.frames(), std::max(1, cfg_.train.background_median_frames)); ++f)
        frames.push_back(&d.images[c][f]);
      fixed_backgrounds_[c] = median_image(frames).template cast<T>();
    }
  }

  if (model_.uses_encoder()) {
    std::vector<int> enc;
    for (const auto& name : d.rig.encoder_cameras) enc.push_back(d.rig.find(name));
    if (enc.empty())
      for (int c : train_cameras_)
        if (static_cast<int>(enc.size()) < cfg_.model.encoder_views) enc.push_back(c);
    if (static_cast<int>(enc.size()) != cfg_.model.encoder_views)
      throw ShapeError("encoder expects " + std::to_string(cfg_.model.encoder_views) + " views but " +
                       std::to_string(enc.size()) + " cameras are available");
    const int r = cfg_.model.encoder_res;
    for (int f = 0; f < d.frames(); ++f) {
      std::vector<T> in;
      for (int c : enc) {
        const Image<float> small = downsample_area(d.images[c][f], r, r);
        for (float v : small.data()) in.push_back(static_cast<T>(v));
      }
      encoder_inputs_.push_back(std::move(in));
    }
  }
  adam_.resize(store);
}

template <typename T>
const Image<T>* Trainer<T>::background_image(int camera) const {
  if (cfg_.train.background == BackgroundMode::none) return nullptr;
  return fixed_backgrounds_[camera] ? &*fixed_backgrounds_[camera] : nullptr;
}

template <typename T>
Batch<T> Trainer<T>::sample_batch(std::mt19937_64& rng) const {
  Batch<T> b;
  std::uniform_int_distribution<int> frame(0, data_->frames() - 1);
  std::uniform_int_distribution<std::size_t> cam(0, train_cameras_.size() - 1);
  for (int k = 0; k < cfg_.train.batch_size; ++k) {
    BatchPair p;
    p.frame = frame(rng);
    p.camera = train_cameras_[cam(rng)];
    const Camera<T>& c = cameras_[p.camera];
    p.pixels = sample_pixels(rng, c.width, c.height, std::min(cfg_.train.pixels_per_image, c.width * c.height));
    b.pairs.push_back(std::move(p));
  }
  if (model_.uses_encoder()) {
    std::normal_distribution<double> normal;
    for (int f = 0; f < data_->frames(); ++f) {
      std::vector<T> e(cfg_.model.latent_dim);
      for (auto& v : e) v = static_cast<T>(normal(rng));
      b.eps.push_back(std::move(e));
    }
  }
  return b;
}

template <typename T>
Batch<T> Trainer<T>::full_batch(const std::vector<std::pair<int, int>>& pairs) const {
  Batch<T> b;
  for (const auto& [f, c] : pairs) {
    BatchPair p;
    p.frame = f;
    p.camera = c;
    p.pixels.resize(static_cast<std::size_t>(cameras_[c].width) * cameras_[c].height);
    std::iota(p.pixels.begin(), p.pixels.end(), 0u);
    b.pairs.push_back(std::move(p));
  }
  if (model_.uses_encoder()) b.eps.assign(data_->frames(), std::vector<T>(cfg_.model.latent_dim, T(0)));
  return b;
}

template <typename T>
LatentCode<T> Trainer<T>::latent(int frame) const {
  if (model_.is_direct()) return {};
  if (model_.uses_encoder()) return model_.encode(encoder_inputs_.at(frame), nullptr);
  return model_.free_code(frame);
}

template <typename T>
SceneState<T> Trainer<T>::scene_state(int frame, int camera, const std::vector<T>* z) const {
  if (model_.is_direct()) return model_.direct_state();
  std::vector<T> code = z ? *z : latent(frame).z;
  std::vector<T> c;
  if (cfg_.model.conditioning_dim > 0)
    for (double v : data_->rig.conditioning.at(frame)) c.push_back(static_cast<T>(v));
  std::optional<Vec3<T>> view;
  if (cfg_.model.view_conditioning) view = view_direction(cameras_[camera], model_.bounds());
  return model_.decode(code, c, view, nullptr);
}

template <typename T>
Camera<T> Trainer<T>::render_camera(int camera) const {
  Camera<T> cam = cameras_[camera];
  const ParamStore<T>& store = model_.params();
  const CameraSlots& s = slots_[camera];
  if (s.gain) cam.gain = vec3_of(store[*s.gain]);
  if (s.bias) cam.bias = vec3_of(store[*s.bias]);
  if (s.background && cfg_.train.background != BackgroundMode::none) {
    Image<T> bg(cam.width, cam.height, 3);
    bg.data() = store[*s.background].value.data;
    cam.background = std::move(bg);
  } else if (const Image<T>* bg = background_image(camera)) {
    cam.background = *bg;
  }
  return cam;
}

template <typename T>
LossTerms Trainer<T>::evaluate_batch(const Batch<T>& batch, bool gradients) {
  const Dataset& d = *data_;
  const bool priors = cfg_.train.priors;
  const T lambda_kl = static_cast<T>(cfg_.loss.kl);
  const T lambda_tv = priors ? static_cast<T>(cfg_.loss.tv) : T(0);
  const T lambda_beta = priors ? static_cast<T>(cfg_.loss.beta) : T(0);
  const T beta_eps = static_cast<T>(cfg_.loss.beta_eps);
  const T tv_eps = static_cast<T>(cfg_.loss.tv_eps);
  const T step = step_size<T>(cfg_.train.step_count);
  ParamStore<T>& store = model_.params();
  if (batch.pairs.empty()) throw ShapeError("empty batch");
  if (gradients) store.zero_grad();

  Tape tape;
  LossTerms terms;
  const std::size_t npairs = batch.pairs.size();

  // Latent codes, one per distinct frame.
  struct CodeSlot {
    int frame;
    LatentCode<T> code;
    typename SceneModel<T>::EncodeCache cache;
    std::vector<T> g_z;
    T weight;
  };
  std::vector<CodeSlot> codes;
  std::map<int, std::size_t> code_of_frame;
  if (!model_.is_direct()) {
    std::map<int, int> counts;
    for (const auto& p : batch.pairs) ++counts[p.frame];
    codes.reserve(counts.size());
    for (const auto& [f, n] : counts) {
      CodeSlot s;
      s.frame = f;
      s.weight = T(n) / T(npairs);
      if (model_.uses_encoder()) {
        s.code = model_.encode(encoder_inputs_.at(f), &s.cache);
        s.code.z = reparameterize<T>(s.code.mu, s.code.log_std, batch.eps.at(f));
      } else {
        s.code = model_.free_code(f);
      }
      s.g_z.assign(cfg_.model.latent_dim, T(0));
      terms.kl += static_cast<double>(s.weight * kl_normal<T>(s.code.mu, s.code.log_std));
      code_of_frame[f] = codes.size();
      codes.push_back(std::move(s));
    }
    for (std::size_t i = 0; i < codes.size(); ++i)
      tape.push([this, &codes, i, lambda_kl, &batch] {
        CodeSlot& s = codes[i];
        const std::size_t l = s.g_z.size();
        std::vector<T> g_mu(s.g_z), g_ls(l, T(0));
        if (model_.uses_encoder()) {
          const std::vector<T>& eps = batch.eps.at(s.frame);
          for (std::size_t k = 0; k < l; ++k) g_ls[k] = s.g_z[k] * eps[k] * std::exp(s.code.log_std[k]);
        }
        kl_normal<T>(s.code.mu, s.code.log_std, g_mu, g_ls, lambda_kl * s.weight);
        if (model_.uses_encoder())
          model_.encode_backward(s.cache, g_mu, g_ls);
        else
          model_.free_code_backward(s.frame, g_mu);
      });
  }

  // Decoded scene states, one per distinct (frame[, camera]).
  struct StateSlot {
    int frame, camera;
    SceneState<T> state;
    typename SceneModel<T>::DecodeCache cache;
    std::optional<SceneStateGrad<T>> grad;
  };
  std::vector<StateSlot> states;
  std::vector<std::size_t> state_of_pair(npairs);
  {
    std::map<std::pair<int, int>, std::size_t> index;
    for (std::size_t k = 0; k < npairs; ++k) {
      const BatchPair& p = batch.pairs[k];
      std::pair<int, int> key{0, -1};
      if (!model_.is_direct()) key = {p.frame, cfg_.model.view_conditioning ? p.camera : -1};
      auto it = index.find(key);
      if (it == index.end()) it = index.emplace(key, index.size()).first;
      state_of_pair[k] = it->second;
    }
    states.resize(index.size());
    for (const auto& [key, i] : index) {
      StateSlot& s = states[i];
      s.frame = key.first;
      s.camera = key.second;
    }
  }
  for (std::size_t i = 0; i < states.size(); ++i) {
    StateSlot& s = states[i];
    if (model_.is_direct()) {
      s.state = model_.direct_state();
    } else {
      std::vector<T> c;
      if (cfg_.model.conditioning_dim > 0)
        for (double v : d.rig.conditioning.at(s.frame)) c.push_back(static_cast<T>(v));
      std::optional<Vec3<T>> view;
      if (cfg_.model.view_conditioning) view = view_direction(cameras_[s.camera], model_.bounds());
      s.state = model_.decode(codes[code_of_frame.at(s.frame)].code.z, c, view, &s.cache);
    }
    if (gradients) s.grad.emplace(s.state);
    tape.push([this, &states, &codes, &code_of_frame, i] {
      StateSlot& s = states[i];
      if (model_.is_direct()) {
        model_.direct_backward(s.state, *s.grad);
      } else {
        const std::vector<T> g_z = model_.decode_backward(s.cache, s.state, *s.grad);
        auto& dst = codes[code_of_frame.at(s.frame)].g_z;
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += g_z[k];
      }
    });
    if (lambda_tv > T(0)) {
      const T lam = lambda_tv / T(states.size());
      terms.tv += static_cast<double>(tv_log_prior(s.state.tmpl, lam, tv_eps));
      tape.push([&states, i, lam, tv_eps] { tv_log_prior(states[i].state.tmpl, lam, tv_eps, &states[i].grad->tmpl); });
    }
  }

  // Rendering of the sampled pixels.
  std::size_t total_pixels = 0;
  for (const auto& p : batch.pairs) total_pixels += p.pixels.size();
  const T inv_p = T(1) / T(total_pixels);
  struct PixelOut {
    Vec3<T> rgb, composite, background;
    T alpha;
  };
  std::vector<std::vector<PixelOut>> outputs(npairs);
  double sum_sq = 0.0, sum_beta = 0.0;
  for (std::size_t k = 0; k < npairs; ++k) {
    const BatchPair& p = batch.pairs[k];
    const Camera<T> cam = render_camera(p.camera);
    const Image<T>& target = targets_[static_cast<std::size_t>(p.camera) * d.frames() + p.frame];
    const SceneState<T>& st = states[state_of_pair[k]].state;
    const VolumeSampler<T> sampler(st);
    const RayGenerator<T> gen(cam);
    auto& out = outputs[k];
    out.resize(p.pixels.size());
    pool_->for_static(p.pixels.size(), [&](std::size_t begin, std::size_t end, int) {
      for (std::size_t i = begin; i < end; ++i) {
        const int x = static_cast<int>(p.pixels[i] % cam.width), y = static_cast<int>(p.pixels[i] / cam.width);
        const NormalizedRay<T> ray = normalize_ray(gen(pixel_center<T>(x, y)), st.bounds);
        const RayState<T> rs = march_hybrid(sampler, ray, step);
        PixelOut& o = out[i];
        o.background = cam.background ? Vec3<T>(cam.background->at(x, y, 0), cam.background->at(x, y, 1),
                                                cam.background->at(x, y, 2))
                                      : Vec3<T>::Zero();
        o.rgb = rs.rgb;
        o.alpha = rs.alpha;
        o.composite = composite(rs.rgb, rs.alpha, o.background, cam.gain, cam.bias);
      }
    });
    for (std::size_t i = 0; i < out.size(); ++i) {
      const std::uint32_t idx = p.pixels[i];
      for (int c = 0; c < 3; ++c) {
        const double diff = static_cast<double>(out[i].composite[c]) - target.data()[3 * idx + c];
        sum_sq += diff * diff;
      }
    }
    if (lambda_beta > T(0)) {
      std::vector<T> alphas(out.size());
      for (std::size_t i = 0; i < out.size(); ++i) alphas[i] = out[i].alpha;
      // beta_prior averages over its own input; reweight to the batch mean.
      sum_beta += static_cast<double>(beta_prior<T>(alphas, T(1), beta_eps)) * static_cast<double>(out.size());
    }

    if (!gradients) continue;
    tape.push([this, &batch, &states, &state_of_pair, &outputs, &target, k, inv_p, lambda_beta, beta_eps, step] {
      const BatchPair& p = batch.pairs[k];
      const Camera<T> cam = render_camera(p.camera);
      StateSlot& ss = states[state_of_pair[k]];
      const SceneState<T>& st = ss.state;
      const VolumeSampler<T> sampler(st);
      const RayGenerator<T> gen(cam);
      const auto& out = outputs[k];
      const CameraSlots& slots = slots_[p.camera];
      ParamStore<T>& store = model_.params();
      T* g_bg = slots.background ? store[*slots.background].grad.data.data() : nullptr;

      const int workers = pool_->size();
      if (static_cast<int>(worker_grads_.size()) < workers) worker_grads_.resize(workers);
      std::vector<Vec3<T>> g_gain(workers, Vec3<T>::Zero()), g_bias(workers, Vec3<T>::Zero());
      std::vector<char> used(workers, 0);
      pool_->for_static(p.pixels.size(), [&](std::size_t begin, std::size_t end, int w) {
        SceneStateGrad<T>* g = &*ss.grad;
        if (w > 0) {
          SceneStateGrad<T>& buf = worker_grads_[w];
          if (buf.tmpl.size() != ss.grad->tmpl.size() || buf.warp.has_value() != ss.grad->warp.has_value())
            buf = SceneStateGrad<T>(st);
          buf.zero();
          g = &buf;
          used[w] = 1;
        }
        std::vector<MarchRecord<T>> scratch;
        auto volume_adjoint = [&](const Vec3<T>& x, const Vec3<T>& g_rgb, T g_a) { sampler.adjoint(x, g_rgb, g_a, g); };
        for (std::size_t i = begin; i < end; ++i) {
          const std::uint32_t idx = p.pixels[i];
          const int x = static_cast<int>(idx % cam.width), y = static_cast<int>(idx / cam.width);
          const PixelOut& o = out[i];
          Vec3<T> g_c;
          for (int c = 0; c < 3; ++c) g_c[c] = T(2) * (o.composite[c] - target.data()[3 * idx + c]) * inv_p;
          T g_alpha = -o.background.dot(g_c);
          if (lambda_beta > T(0)) {
            const T a = o.alpha;
            if (a >= beta_eps && a <= T(1) - beta_eps) g_alpha += lambda_beta * (T(1) / a - T(1) / (T(1) - a)) * inv_p;
          }
          g_gain[w] += g_c.cwiseProduct(o.rgb);
          g_bias[w] += g_c;
          if (g_bg)
            for (int c = 0; c < 3; ++c) g_bg[3 * idx + c] += (T(1) - o.alpha) * g_c[c];
          const Vec3<T> g_rgb = cam.gain.cwiseProduct(g_c);
          const NormalizedRay<T> ray = normalize_ray(gen(pixel_center<T>(x, y)), st.bounds);
          march_hybrid_adjoint(sampler, volume_adjoint, ray, step, g_rgb, g_alpha, scratch);
        }
      });
      for (int w = 1; w < workers; ++w)
        if (used[w]) ss.grad->add(worker_grads_[w]);
      Vec3<T> gg = Vec3<T>::Zero(), gb = Vec3<T>::Zero();
      for (int w = 0; w < workers; ++w) {
        gg += g_gain[w];
        gb += g_bias[w];
      }
      if (slots.gain)
        for (int c = 0; c < 3; ++c) store[*slots.gain].grad.data[c] += gg[c];
      if (slots.bias)
        for (int c = 0; c < 3; ++c) store[*slots.bias].grad.data[c] += gb[c];
    });
  }
  terms.mse = sum_sq / static_cast<double>(total_pixels);
  terms.beta = static_cast<double>(lambda_beta) * sum_beta / static_cast<double>(total_pixels);
  terms.total = total_loss(terms, cfg_.loss);
  if (gradients) backward(tape, store);
  return terms;
}

template <typename T>
LossTerms Trainer<T>::train_step(std::mt19937_64& rng) {
  const Batch<T> batch = sample_batch(rng);
  const LossTerms terms = evaluate_batch(batch, true);
  if (!std::isfinite(terms.total)) throw NonFiniteError("loss");
  adam_step(model_.params(), adam_, AdamOptions::from(cfg_.train));
  return terms;
}

template <typename T>
RenderOutput<T> Trainer<T>::render(int camera, int frame, const TriMesh<T>* mesh, const std::vector<T>* z) {
  if (camera < 0 || camera >= data_->cameras()) throw ShapeError("camera index out of range");
  if (frame < 0 || frame >= data_->frames()) throw ShapeError("frame index out of range");
  const SceneState<T> st = scene_state(frame, camera, z);
  return render_image(st, render_camera(camera), mesh, cfg_.train.step_count, *pool_);
}

template <typename T>
EvalReport Trainer<T>::evaluate(const std::vector<int>& cameras) {
  EvalReport report;
  for (int c : cameras) {
    double sum = 0.0;
    std::size_t count = 0;
    for (int f = 0; f < data_->frames(); ++f) {
      const RenderOutput<T> out = render(c, f);
      const Image<T>& target = targets_[static_cast<std::size_t>(c) * data_->frames() + f];
      for (std::size_t i = 0; i < target.data().size(); ++i) {
        const double diff = static_cast<double>(out.composite.data()[i]) - static_cast<double>(target.data()[i]);
        sum += diff * diff;
      }
      count += target.data().size();
    }
    CameraMetrics m;
    m.camera = cameras_[c].id;
    m.mse = sum / static_cast<double>(count);
    m.psnr = psnr_from_mse(m.mse);
    report.cameras.push_back(m);
    report.mse += m.mse;
  }
  if (!report.cameras.empty()) report.mse /= static_cast<double>(report.cameras.size());
  report.psnr = psnr_from_mse(report.mse);
  return report;
}

template <typename T>
Checkpoint Trainer<T>::checkpoint() const {
  Checkpoint ckpt;
  add_params(ckpt, model_.params());
  const ParamStore<T>& store = model_.params();
  if (adam_.m.size() == store.size()) {
    for (std::size_t k = 0; k < store.size(); ++k) {
      ckpt.add("adam.m." + store[k].name, adam_.m[k]);
      ckpt.add("adam.v." + store[k].name, adam_.v[k]);
    }
  }
  ckpt.add("adam.step", {1}, {static_cast<float>(adam_.step)});
  ckpt.add_text("meta.config", config_to_json(cfg_));
  ckpt.add_text("meta.rig", rig_to_json(data_->rig));
  ckpt.add_text("meta.data", data_->root.string());
  return ckpt;
}

template <typename T>
void Trainer<T>::restore(const Checkpoint& ckpt) {
  load_params(ckpt, model_.params());
  const ParamStore<T>& store = model_.params();
  adam_.resize(store);
  if (const CheckpointTensor* s = ckpt.find("adam.step")) adam_.step = static_cast<std::int64_t>(s->data.at(0));
  for (std::size_t k = 0; k < store.size(); ++k) {
    const CheckpointTensor* m = ckpt.find("adam.m." + store[k].name);
    const CheckpointTensor* v = ckpt.find("adam.v." + store[k].name);
    if (!m || !v) continue;
    if (m->data.size() != adam_.m[k].size() || v->data.size() != adam_.v[k].size())
      throw ShapeError("optimizer state of tensor '" + store[k].name + "' does not match the model");
    for (std::size_t i = 0; i < m->data.size(); ++i) {
      adam_.m[k].data[i] = static_cast<T>(m->data[i]);
      adam_.v[k].data[i] = static_cast<T>(v->data[i]);
    }
  }
}

RunConfig checkpoint_config(const Checkpoint& ckpt) {
  const auto text = ckpt.text("meta.config");
  if (!text) throw CheckpointError("checkpoint carries no configuration");
  return config_from_json(*text);
}

std::filesystem::path checkpoint_data_dir(const Checkpoint& ckpt) {
  const auto text = ckpt.text("meta.data");
  if (!text) throw CheckpointError("checkpoint does not record its dataset directory");
  return *text;
}

namespace {

std::string timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[64];
  std::strftime(buf, sizeof buf, "%Y-%m-%d %H:%M:%S", std::localtime(&now));
  return buf;
}

std::string format_eval(const EvalReport& r) {
  std::string s;
  char line[256];
  for (const auto& c : r.cameras) {
    std::snprintf(line, sizeof line, "  %-12s mse=%.9g mse_x1e4=%.6f psnr=%.4f\n", c.camera.c_str(), c.mse, c.mse * 1e4,
                  c.psnr);
    s += line;
  }
  std::snprintf(line, sizeof line, "  %-12s mse=%.9g mse_x1e4=%.6f psnr=%.4f\n", "mean", r.mse, r.mse_e4(), r.psnr);
  return s + line;
}

}  // namespace

template <typename T>
FitResult fit(Trainer<T>& trainer, const FitOptions& options) {
  const RunConfig& cfg = trainer.config();
  FitResult result;
  const bool write = !options.out_dir.empty();
  std::ofstream loss_log, log;
  if (write) {
    std::filesystem::create_directories(options.out_dir);
    loss_log.open(options.out_dir / "loss.txt", std::ios::trunc);
    log.open(options.out_dir / "fit.log", std::ios::trunc);
    log << "# volfit fit started " << timestamp() << "\n";
    log << "workers " << trainer.pool().size() << " precision " << (sizeof(T) == 8 ? "double" : "float") << "\n";
    std::ofstream(options.out_dir / "config.json", std::ios::trunc) << config_to_json(cfg);
  }

  auto save = [&](const std::string& name) {
    const std::filesystem::path path = options.out_dir / name;
    save_checkpoint(path, trainer.checkpoint());
    return path;
  };

  std::mt19937_64 rng(cfg.train.seed);
  const std::vector<int> holdout = trainer.dataset().holdout_cameras();
  for (int it = 0; it < cfg.train.iterations; ++it) {
    const std::int64_t step = trainer.step() + 1;
    LossTerms terms;
    try {
      const Batch<T> batch = trainer.sample_batch(rng);
      terms = trainer.evaluate_batch(batch, true);
      if (!std::isfinite(terms.total)) throw NonFiniteError("loss");
    } catch (const NonFiniteError& e) {
      std::string path;
      if (write) {
        path = save("diverged.nvckpt").string();
        log << "diverged at step " << step << ": " << e.what() << "\n";
      }
      throw DivergenceError(static_cast<long>(step), path);
    }
    adam_step(trainer.params(), trainer.adam(), AdamOptions::from(cfg.train));
    result.losses.push_back(terms);
    if (write) {
      char line[256];
      std::snprintf(line, sizeof line, "%lld %.9g %.9g %.9g %.9g %.9g\n", static_cast<long long>(step), terms.mse,
                    terms.kl, terms.tv, terms.beta, terms.total);
      loss_log << line;
      loss_log.flush();
      if (cfg.train.checkpoint_every > 0 && step % cfg.train.checkpoint_every == 0)
        save("checkpoint_" + std::to_string(step) + ".nvckpt");
    }
    if (options.on_step) options.on_step(step, terms);
    if (write && cfg.train.eval_every > 0 && step % cfg.train.eval_every == 0 && !holdout.empty() &&
        options.evaluate_holdout) {
      log << "step " << step << " holdout\n" << format_eval(trainer.evaluate(holdout));
      log.flush();
    }
  }
  if (options.evaluate_holdout && !holdout.empty()) result.holdout = trainer.evaluate(holdout);
  if (write) {
    result.checkpoint = save("checkpoint.nvckpt");
    if (result.holdout) {
      log << "final step " << trainer.step() << " holdout\n" << format_eval(*result.holdout);
      char line[128];
      std::snprintf(line, sizeof line, "final holdout psnr %.4f\n", result.holdout->psnr);
      log << line;
    }
  }
  return result;
}

template class Trainer<float>;
template class Trainer<double>;
template FitResult fit<float>(Trainer<float>&, const FitOptions&);
template FitResult fit<double>(Trainer<double>&, const FitOptions&);

}  // namespace volfit
