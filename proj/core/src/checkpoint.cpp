#include "volfit/checkpoint.hpp"

#include "volfit/detail/binary_io.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

namespace volfit {

namespace {

constexpr char kMagic[7] = {'N', 'V', 'C', 'K', 'P', 'T', '1'};

std::vector<unsigned char> payload_bytes(std::span<const float> data) { return detail::f32_bytes(data); }

std::uint32_t crc_of(const std::vector<unsigned char>& bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    crc = crc32(crc, bytes.data() + off, chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::uint32_t payload_crc32(std::span<const float> data) { return crc_of(payload_bytes(data)); }

void Checkpoint::add(const std::string& name, Shape shape, std::vector<float> data) {
  if (name.empty() || name.size() > 0xffff) throw CheckpointError("invalid tensor name length");
  if (shape_size(shape) != data.size()) throw ShapeError("tensor '" + name + "' payload does not match its shape");
  if (find(name)) throw CheckpointError("duplicate checkpoint tensor '" + name + "'");
  CheckpointTensor t{name, std::move(shape), std::move(data), 0};
  t.crc = payload_crc32(t.data);
  tensors_.push_back(std::move(t));
}

void Checkpoint::add_text(const std::string& name, const std::string& text) {
  std::vector<float> data(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) data[i] = static_cast<float>(static_cast<unsigned char>(text[i]));
  Shape shape{static_cast<std::int64_t>(data.size())};
  add(name, std::move(shape), std::move(data));
}

const CheckpointTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors_)
    if (t.name == name) return &t;
  return nullptr;
}

const CheckpointTensor& Checkpoint::get(const std::string& name) const {
  if (const auto* t = find(name)) return *t;
  throw CheckpointError("checkpoint has no tensor '" + name + "'");
}

std::optional<std::string> Checkpoint::text(const std::string& name) const {
  const CheckpointTensor* t = find(name);
  if (!t) return std::nullopt;
  std::string s(t->data.size(), '\0');
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = static_cast<char>(static_cast<unsigned char>(t->data[i]));
  return s;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof kMagic);
    detail::write_u32(out, Checkpoint::kVersion);
    detail::write_u32(out, static_cast<std::uint32_t>(ckpt.tensors().size()));
    for (const auto& t : ckpt.tensors()) {
      detail::write_u16(out, static_cast<std::uint16_t>(t.name.size()));
      out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
      detail::write_u32(out, static_cast<std::uint32_t>(t.shape.size()));
      for (auto d : t.shape) detail::write_u32(out, static_cast<std::uint32_t>(d));
      const auto bytes = payload_bytes(t.data);
      out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
      detail::write_u32(out, crc_of(bytes));
    }
    if (!out) throw CheckpointError("failed while writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::string where = "checkpoint " + path.string();
  const auto file_size = std::filesystem::file_size(path);
  char magic[sizeof kMagic] = {};
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw CheckpointError(where + ": bad magic");
  const std::uint32_t version = detail::read_u32(in);
  if (!in) throw CheckpointError(where + ": truncated header");
  if (version != Checkpoint::kVersion)
    throw CheckpointError(where + ": unsupported version " + std::to_string(version));
  const std::uint32_t count = detail::read_u32(in);
  if (!in) throw CheckpointError(where + ": truncated header");
  Checkpoint ckpt;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint16_t len = detail::read_u16(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    const std::uint32_t rank = detail::read_u32(in);
    if (!in || rank > 16) throw CheckpointError(where + ": truncated or corrupt tensor header #" + std::to_string(k));
    Shape shape(rank);
    for (auto& d : shape) d = detail::read_u32(in);
    if (!in) throw CheckpointError(where + ": truncated shape of tensor '" + name + "'");
    const std::size_t n = shape_size(shape);
    if (n * 4 > file_size - static_cast<std::uintmax_t>(in.tellg()))
      throw CheckpointError(where + ": truncated payload of tensor '" + name + "'");
    std::vector<unsigned char> bytes(n * 4);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    const std::uint32_t crc = detail::read_u32(in);
    if (!in) throw CheckpointError(where + ": truncated payload of tensor '" + name + "'");
    if (crc != crc_of(bytes)) throw CheckpointError(where + ": CRC mismatch in tensor '" + name + "'");
    std::vector<float> data(n);
    detail::f32_from_bytes(bytes, data);
    ckpt.add(name, std::move(shape), std::move(data));
  }
  return ckpt;
}

}  // namespace volfit
