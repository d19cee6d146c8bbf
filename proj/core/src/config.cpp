#include "volfit/config.hpp"

#include <json.hpp>

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace volfit {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

template <typename E>
struct EnumNames {
  std::vector<std::pair<E, const char*>> items;

  const char* name(E v) const {
    for (const auto& [e, n] : items)
      if (e == v) return n;
    return "?";
  }
  E parse(const std::string& s, const std::string& key) const {
    for (const auto& [e, n] : items)
      if (s == n) return e;
    std::string allowed;
    for (const auto& [e, n] : items) allowed += (allowed.empty() ? "" : "|") + std::string(n);
    throw ConfigError("config key '" + key + "': expected one of " + allowed + ", got '" + s + "'");
  }
};

const EnumNames<ModelMode> kModes{{{ModelMode::direct, "direct"}, {ModelMode::latent, "latent"}}};
const EnumNames<LatentSource> kSources{{{LatentSource::encoder, "encoder"}, {LatentSource::free, "free"}}};
const EnumNames<MixtureSpace> kSpaces{{{MixtureSpace::warped, "warped"}, {MixtureSpace::world, "world"}}};
const EnumNames<BackgroundMode> kBackgrounds{
    {{BackgroundMode::known, "known"}, {BackgroundMode::learned, "learned"}, {BackgroundMode::none, "none"}}};

/// One binding between a JSON key and a config field.
struct Binding {
  std::function<ordered_json()> get;
  std::function<void(const json&, const std::string&)> set;
};

template <typename V>
Binding bind(V& field) {
  return {[&field] { return ordered_json(field); },
          [&field](const json& j, const std::string& key) {
            try {
              if constexpr (std::is_same_v<V, bool>) {
                if (!j.is_boolean()) throw ConfigError("config key '" + key + "': expected a boolean");
              } else if constexpr (std::is_integral_v<V>) {
                if (!j.is_number_integer()) throw ConfigError("config key '" + key + "': expected an integer");
              } else if constexpr (std::is_floating_point_v<V>) {
                if (!j.is_number()) throw ConfigError("config key '" + key + "': expected a number");
              }
              field = j.get<V>();
            } catch (const json::exception& e) {
              throw ConfigError("config key '" + key + "': " + e.what());
            }
          }};
}

template <typename E>
Binding bind_enum(E& field, const EnumNames<E>& names) {
  return {[&field, &names] { return ordered_json(names.name(field)); },
          [&field, &names](const json& j, const std::string& key) {
            if (!j.is_string()) throw ConfigError("config key '" + key + "': expected a string");
            field = names.parse(j.get<std::string>(), key);
          }};
}

Binding bind_center(std::array<double, 3>& field) {
  return {[&field] { return ordered_json(field); },
          [&field](const json& j, const std::string& key) {
            if (!j.is_array() || j.size() != 3) throw ConfigError("config key '" + key + "': expected 3 numbers");
            for (int i = 0; i < 3; ++i) field[i] = j[i].get<double>();
          }};
}

using Section = std::vector<std::pair<std::string, Binding>>;

std::vector<std::pair<std::string, Section>> bindings(RunConfig& c) {
  ModelConfig& m = c.model;
  TrainConfig& t = c.train;
  LossWeights& l = c.loss;
  return {
      {"model",
       {{"mode", bind_enum(m.mode, kModes)},
        {"template_res", bind(m.template_res)},
        {"warp", bind(m.warp_enabled)},
        {"warp_count", bind(m.warp_count)},
        {"warp_res", bind(m.warp_res)},
        {"mixture_space", bind_enum(m.mixture_space, kSpaces)},
        {"bounds_center", bind_center(m.bounds_center)},
        {"bounds_side", bind(m.bounds_side)},
        {"latent_dim", bind(m.latent_dim)},
        {"conditioning_dim", bind(m.conditioning_dim)},
        {"view_conditioning", bind(m.view_conditioning)},
        {"latent_source", bind_enum(m.latent_source, kSources)},
        {"frame_count", bind(m.frame_count)},
        {"encoder_views", bind(m.encoder_views)},
        {"encoder_res", bind(m.encoder_res)},
        {"encoder_hidden", bind(m.encoder_hidden)},
        {"decoder_hidden", bind(m.decoder_hidden)},
        {"decoder_bottleneck", bind(m.decoder_bottleneck)},
        {"warp_hidden", bind(m.warp_hidden)},
        {"leaky_slope", bind(m.leaky_slope)},
        {"quat_noise", bind(m.quat_noise)},
        {"init_seed", bind(m.init_seed)}}},
      {"train",
       {{"batch_size", bind(t.batch_size)},
        {"pixels_per_image", bind(t.pixels_per_image)},
        {"iterations", bind(t.iterations)},
        {"seed", bind(t.seed)},
        {"double_precision", bind(t.double_precision)},
        {"priors", bind(t.priors)},
        {"background", bind_enum(t.background, kBackgrounds)},
        {"learn_calibration", bind(t.learn_calibration)},
        {"step_count", bind(t.step_count)},
        {"lr", bind(t.lr)},
        {"lr_background", bind(t.lr_background)},
        {"lr_calibration", bind(t.lr_calibration)},
        {"beta1", bind(t.beta1)},
        {"beta2", bind(t.beta2)},
        {"adam_eps", bind(t.adam_eps)},
        {"background_median_frames", bind(t.background_median_frames)},
        {"checkpoint_every", bind(t.checkpoint_every)},
        {"eval_every", bind(t.eval_every)}}},
      {"loss",
       {{"kl", bind(l.kl)},
        {"tv", bind(l.tv)},
        {"beta", bind(l.beta)},
        {"beta_eps", bind(l.beta_eps)},
        {"tv_eps", bind(l.tv_eps)}}},
  };
}

void validate(const RunConfig& c) {
  auto positive = [](long long v, const char* key) {
    if (v <= 0) throw ConfigError(std::string("config key '") + key + "' must be positive");
  };
  positive(c.model.template_res - 1, "model.template_res");
  positive(c.train.batch_size, "train.batch_size");
  positive(c.train.pixels_per_image, "train.pixels_per_image");
  positive(c.train.step_count, "train.step_count");
  if (c.train.iterations < 0) throw ConfigError("config key 'train.iterations' must be >= 0");
  for (double w : {c.loss.kl, c.loss.tv, c.loss.beta, c.loss.beta_eps, c.loss.tv_eps, c.train.lr, c.train.lr_background,
                   c.train.lr_calibration})
    if (!(w >= 0)) throw ConfigError("loss weights and learning rates must be non-negative");
}

}  // namespace

const char* to_string(ModelMode m) { return kModes.name(m); }
const char* to_string(LatentSource s) { return kSources.name(s); }
const char* to_string(MixtureSpace s) { return kSpaces.name(s); }
const char* to_string(BackgroundMode m) { return kBackgrounds.name(m); }

std::string config_to_json(const RunConfig& cfg) {
  RunConfig copy = cfg;
  ordered_json doc = ordered_json::object();
  for (auto& [section, fields] : bindings(copy)) {
    ordered_json s = ordered_json::object();
    for (auto& [key, b] : fields) s[key] = b.get();
    doc[section] = s;
  }
  return doc.dump(2) + "\n";
}

RunConfig config_from_json(const std::string& text, const RunConfig& base) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig cfg = base;
  auto table = bindings(cfg);
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    auto sec = std::find_if(table.begin(), table.end(), [&](const auto& s) { return s.first == it.key(); });
    if (sec == table.end()) throw ConfigError("unknown config section '" + it.key() + "'");
    if (!it.value().is_object()) throw ConfigError("config section '" + it.key() + "' must be an object");
    for (auto kv = it.value().begin(); kv != it.value().end(); ++kv) {
      auto f = std::find_if(sec->second.begin(), sec->second.end(), [&](const auto& b) { return b.first == kv.key(); });
      if (f == sec->second.end()) throw ConfigError("unknown config key '" + it.key() + "." + kv.key() + "'");
      f->second.set(kv.value(), it.key() + "." + kv.key());
    }
  }
  validate(cfg);
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path, const RunConfig& base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str(), base);
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto dot = key.find('.');
  if (dot == std::string::npos) throw ConfigError("config override '" + key + "' must look like section.key");
  json v;
  try {
    v = json::parse(value);
  } catch (const json::exception&) {
    v = value;
  }
  json doc;
  doc[key.substr(0, dot)][key.substr(dot + 1)] = v;
  cfg = config_from_json(doc.dump(), cfg);
}

}  // namespace volfit
