#pragma once

#include "volfit/common.hpp"

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace volfit {

/// Interleaved row-major image: pixel (x, y) channel c lives at
/// `(y * width + x) * channels + c`.
template <typename T>
class Image {
 public:
  Image() = default;
  Image(int width, int height, int channels, T fill = T(0))
      : width_(width), height_(height), channels_(channels),
        data_(static_cast<std::size_t>(width) * height * channels, fill) {
    if (width <= 0 || height <= 0 || channels <= 0) throw ShapeError("image dimensions must be positive");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }
  bool empty() const { return data_.empty(); }

  T& at(int x, int y, int c) { return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c]; }
  T at(int x, int y, int c) const { return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c]; }

  std::span<T> pixel(std::size_t index) { return {data_.data() + index * channels_, static_cast<std::size_t>(channels_)}; }
  std::span<const T> pixel(std::size_t index) const {
    return {data_.data() + index * channels_, static_cast<std::size_t>(channels_)};
  }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  template <typename U>
  Image<U> cast() const {
    Image<U> out(width_, height_, channels_);
    for (std::size_t i = 0; i < data_.size(); ++i) out.data()[i] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<T> data_;
};

/// Lossless float image ("NVIMG1" magic, u32 width/height/channels, LE f32 payload).
void write_f32img(const std::filesystem::path& path, const Image<float>& image);
Image<float> read_f32img(const std::filesystem::path& path);

/// 8-bit PNG. Values are clamped to [0,1] and rounded; 1- and 3-channel images supported.
void write_png(const std::filesystem::path& path, const Image<float>& image);
/// Reads gray/RGB(A) 8- or 16-bit PNG into a 3-channel float image in [0,1].
Image<float> read_png(const std::filesystem::path& path);

/// Dispatches on extension: `.f32img` or `.png`.
Image<float> read_image(const std::filesystem::path& path);

/// Box-filter downsample to an exact `width x height` grid (area averaging).
Image<float> downsample_area(const Image<float>& image, int width, int height);

}  // namespace volfit
