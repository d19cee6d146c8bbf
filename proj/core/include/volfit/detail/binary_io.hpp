#pragma once

// Little-endian primitives shared by the image and checkpoint formats.

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <vector>

namespace volfit::detail {

inline void write_u16(std::ostream& out, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  out.write(b, 2);
}

inline void write_u32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>(v >> 24)};
  out.write(b, 4);
}

inline std::uint16_t read_u16(std::istream& in) {
  unsigned char b[2] = {0, 0};
  in.read(reinterpret_cast<char*>(b), 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

inline std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4] = {0, 0, 0, 0};
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

/// Serializes floats to little-endian bytes.
inline std::vector<unsigned char> f32_bytes(std::span<const float> values) {
  std::vector<unsigned char> bytes(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto u = std::bit_cast<std::uint32_t>(values[i]);
    bytes[4 * i + 0] = static_cast<unsigned char>(u & 0xff);
    bytes[4 * i + 1] = static_cast<unsigned char>((u >> 8) & 0xff);
    bytes[4 * i + 2] = static_cast<unsigned char>((u >> 16) & 0xff);
    bytes[4 * i + 3] = static_cast<unsigned char>(u >> 24);
  }
  return bytes;
}

inline void f32_from_bytes(std::span<const unsigned char> bytes, std::span<float> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint32_t u = static_cast<std::uint32_t>(bytes[4 * i]) |
                            (static_cast<std::uint32_t>(bytes[4 * i + 1]) << 8) |
                            (static_cast<std::uint32_t>(bytes[4 * i + 2]) << 16) |
                            (static_cast<std::uint32_t>(bytes[4 * i + 3]) << 24);
    values[i] = std::bit_cast<float>(u);
  }
}

inline void write_f32_array(std::ostream& out, std::span<const float> values) {
  const auto bytes = f32_bytes(values);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline void read_f32_array(std::istream& in, std::span<float> values) {
  std::vector<unsigned char> bytes(values.size() * 4);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in) return;
  f32_from_bytes(bytes, values);
}

}  // namespace volfit::detail
