#include "volfit/image.hpp"
#include "volfit/detail/binary_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace volfit {

namespace {

constexpr char kImageMagic[6] = {'N', 'V', 'I', 'M', 'G', '1'};

std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

}  // namespace

void write_f32img(const std::filesystem::path& path, const Image<float>& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  out.write(kImageMagic, sizeof(kImageMagic));
  detail::write_u32(out, static_cast<std::uint32_t>(image.width()));
  detail::write_u32(out, static_cast<std::uint32_t>(image.height()));
  detail::write_u32(out, static_cast<std::uint32_t>(image.channels()));
  detail::write_f32_array(out, image.data());
  if (!out) throw FormatError("failed writing '" + path.string() + "'");
}

Image<float> read_f32img(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open image '" + path.string() + "'");
  char magic[sizeof(kImageMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kImageMagic, sizeof(magic)) != 0)
    throw FormatError("'" + path.string() + "' is not an NVIMG1 image");
  const std::uint32_t w = detail::read_u32(in);
  const std::uint32_t h = detail::read_u32(in);
  const std::uint32_t c = detail::read_u32(in);
  if (!in || w == 0 || h == 0 || c == 0 || w > (1u << 16) || h > (1u << 16) || c > 16)
    throw FormatError("'" + path.string() + "' has an invalid header");
  Image<float> image(static_cast<int>(w), static_cast<int>(h), static_cast<int>(c));
  detail::read_f32_array(in, image.data());
  if (!in) throw FormatError("'" + path.string() + "' is truncated");
  return image;
}

void write_png(const std::filesystem::path& path, const Image<float>& image) {
  if (image.channels() != 1 && image.channels() != 3)
    throw FormatError("PNG output supports 1 or 3 channels");
  png_image desc;
  std::memset(&desc, 0, sizeof(desc));
  desc.version = PNG_IMAGE_VERSION;
  desc.width = static_cast<png_uint_32>(image.width());
  desc.height = static_cast<png_uint_32>(image.height());
  desc.format = image.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<png_byte> bytes(image.data().size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const float v = std::clamp(image.data()[i], 0.0f, 1.0f);
    bytes[i] = static_cast<png_byte>(std::lround(v * 255.0f));
  }
  if (!png_image_write_to_file(&desc, path.string().c_str(), 0, bytes.data(), 0, nullptr))
    throw FormatError("failed writing PNG '" + path.string() + "': " + desc.message);
}

Image<float> read_png(const std::filesystem::path& path) {
  png_image desc;
  std::memset(&desc, 0, sizeof(desc));
  desc.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&desc, path.string().c_str()))
    throw FormatError("cannot read PNG '" + path.string() + "': " + desc.message);
  desc.format = PNG_FORMAT_RGB;
  std::vector<png_byte> bytes(PNG_IMAGE_SIZE(desc));
  if (!png_image_finish_read(&desc, nullptr, bytes.data(), 0, nullptr))
    throw FormatError("cannot decode PNG '" + path.string() + "': " + desc.message);
  Image<float> image(static_cast<int>(desc.width), static_cast<int>(desc.height), 3);
  for (std::size_t i = 0; i < bytes.size(); ++i) image.data()[i] = static_cast<float>(bytes[i]) / 255.0f;
  return image;
}

Image<float> read_image(const std::filesystem::path& path) {
  const std::string ext = lower_extension(path);
  if (ext == ".f32img") return read_f32img(path);
  if (ext == ".png") return read_png(path);
  throw FormatError("unsupported image extension '" + ext + "' for '" + path.string() + "'");
}

Image<float> downsample_area(const Image<float>& image, int width, int height) {
  Image<float> out(width, height, image.channels());
  const double sx = static_cast<double>(image.width()) / width;
  const double sy = static_cast<double>(image.height()) / height;
  for (int oy = 0; oy < height; ++oy) {
    const double y0 = oy * sy, y1 = (oy + 1) * sy;
    for (int ox = 0; ox < width; ++ox) {
      const double x0 = ox * sx, x1 = (ox + 1) * sx;
      std::vector<double> acc(image.channels(), 0.0);
      double area = 0.0;
      for (int iy = static_cast<int>(std::floor(y0)); iy < std::min<int>(image.height(), static_cast<int>(std::ceil(y1))); ++iy) {
        const double wy = std::min<double>(iy + 1, y1) - std::max<double>(iy, y0);
        if (wy <= 0) continue;
        for (int ix = static_cast<int>(std::floor(x0)); ix < std::min<int>(image.width(), static_cast<int>(std::ceil(x1))); ++ix) {
          const double wx = std::min<double>(ix + 1, x1) - std::max<double>(ix, x0);
          if (wx <= 0) continue;
          for (int c = 0; c < image.channels(); ++c) acc[c] += wx * wy * image.at(ix, iy, c);
          area += wx * wy;
        }
      }
      for (int c = 0; c < image.channels(); ++c) out.at(ox, oy, c) = static_cast<float>(acc[c] / area);
    }
  }
  return out;
}

}  // namespace volfit
