#pragma once

#include "volfit/autodiff.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace volfit {

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
  std::uint32_t crc = 0;  // CRC32 of the little-endian payload bytes
};

/// In-memory form of an "NVCKPT1" file: an ordered list of named f32
/// tensors. Text metadata (config, rig) is stored as tensors holding one
/// byte value per element under `meta.*` names.
class Checkpoint {
 public:
  static constexpr std::uint32_t kVersion = 1;

  void add(const std::string& name, Shape shape, std::vector<float> data);
  template <typename T>
  void add(const std::string& name, const Tensor<T>& t) {
    add(name, t.shape, std::vector<float>(t.data.begin(), t.data.end()));
  }
  void add_text(const std::string& name, const std::string& text);

  const CheckpointTensor* find(const std::string& name) const;
  const CheckpointTensor& get(const std::string& name) const;
  std::optional<std::string> text(const std::string& name) const;

  const std::vector<CheckpointTensor>& tensors() const { return tensors_; }

 private:
  std::vector<CheckpointTensor> tensors_;
};

std::uint32_t payload_crc32(std::span<const float> data);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws CheckpointError on bad magic/version, truncation or CRC mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path);

template <typename T>
void add_params(Checkpoint& ckpt, const ParamStore<T>& store) {
  for (const auto& p : store.params()) ckpt.add(p.name, p.value);
}

/// Copies every parameter of `store` from the checkpoint. A missing tensor
/// raises CheckpointError, a shape mismatch ShapeError (both name the tensor).
template <typename T>
void load_params(const Checkpoint& ckpt, ParamStore<T>& store) {
  for (auto& p : store.params()) {
    const CheckpointTensor* t = ckpt.find(p.name);
    if (!t) throw CheckpointError("checkpoint has no tensor '" + p.name + "'");
    if (t->shape != p.value.shape)
      throw ShapeError("tensor '" + p.name + "' has shape " + shape_string(t->shape) + " in the checkpoint but " +
                       shape_string(p.value.shape) + " in the model");
    for (std::size_t i = 0; i < t->data.size(); ++i) p.value.data[i] = static_cast<T>(t->data[i]);
  }
}

}  // namespace volfit
