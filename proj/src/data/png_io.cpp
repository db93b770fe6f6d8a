#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "rrwnet/data.hpp"

namespace rrwnet::data {

namespace {

struct PngImage {
  png_image image{};
  PngImage() {
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
  }
  ~PngImage() { png_image_free(&image); }
};

// Reads into interleaved pixels of the requested simplified-API format.
template <typename Pixel>
std::vector<Pixel> read_interleaved(const std::filesystem::path& path, png_uint_32 format,
                                    std::size_t& height, std::size_t& width) {
  PngImage png;
  if (!png_image_begin_read_from_file(&png.image, path.c_str())) {
    throw DataError("cannot read PNG " + path.string() + ": " + png.image.message);
  }
  png.image.format = format;
  std::vector<Pixel> buf(PNG_IMAGE_SIZE(png.image) / sizeof(Pixel));
  if (!png_image_finish_read(&png.image, nullptr, buf.data(), 0, nullptr)) {
    throw DataError("cannot decode PNG " + path.string() + ": " + png.image.message);
  }
  height = png.image.height;
  width = png.image.width;
  return buf;
}

template <typename Pixel>
void write_interleaved(const std::filesystem::path& path, png_uint_32 format, std::size_t height,
                       std::size_t width, const std::vector<Pixel>& buf) {
  PngImage png;
  png.image.width = static_cast<png_uint_32>(width);
  png.image.height = static_cast<png_uint_32>(height);
  png.image.format = format;
  if (!png_image_write_to_file(&png.image, path.c_str(), 0, buf.data(), 0, nullptr)) {
    throw DataError("cannot write PNG " + path.string() + ": " + png.image.message);
  }
}

}  // namespace

ByteImage read_png_rgb(const std::filesystem::path& path) {
  std::size_t h = 0, w = 0;
  auto buf = read_interleaved<std::uint8_t>(path, PNG_FORMAT_RGB, h, w);
  ByteImage out(3, h, w);
  for (std::size_t i = 0; i < h * w; ++i) {
    for (std::size_t c = 0; c < 3; ++c) out.data[c * h * w + i] = buf[3 * i + c];
  }
  return out;
}

ByteImage read_png_gray8(const std::filesystem::path& path) {
  std::size_t h = 0, w = 0;
  auto buf = read_interleaved<std::uint8_t>(path, PNG_FORMAT_GRAY, h, w);
  ByteImage out(1, h, w);
  out.data = std::move(buf);
  return out;
}

Raster<std::uint16_t> read_png_gray16(const std::filesystem::path& path) {
  PngImage probe;
  if (!png_image_begin_read_from_file(&probe.image, path.c_str())) {
    throw DataError("cannot read PNG " + path.string() + ": " + probe.image.message);
  }
  const bool wide = (probe.image.format & PNG_FORMAT_FLAG_LINEAR) != 0;
  png_image_free(&probe.image);

  std::size_t h = 0, w = 0;
  Raster<std::uint16_t> out;
  if (wide) {
    auto buf = read_interleaved<std::uint16_t>(path, PNG_FORMAT_LINEAR_Y, h, w);
    out = Raster<std::uint16_t>(1, h, w);
    out.data = std::move(buf);
  } else {
    auto buf = read_interleaved<std::uint8_t>(path, PNG_FORMAT_GRAY, h, w);
    out = Raster<std::uint16_t>(1, h, w);
    for (std::size_t i = 0; i < buf.size(); ++i) out.data[i] = static_cast<std::uint16_t>(buf[i] * 257);
  }
  return out;
}

void write_png_rgb8(const std::filesystem::path& path, const ByteImage& rgb) {
  if (rgb.channels != 3) throw DataError("write_png_rgb8: need 3 channels");
  const std::size_t n = rgb.plane_size();
  std::vector<std::uint8_t> buf(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < 3; ++c) buf[3 * i + c] = rgb.data[c * n + i];
  }
  write_interleaved(path, PNG_FORMAT_RGB, rgb.height, rgb.width, buf);
}

void write_png_gray8(const std::filesystem::path& path, const ByteImage& gray) {
  if (gray.channels != 1) throw DataError("write_png_gray8: need 1 channel");
  write_interleaved(path, PNG_FORMAT_GRAY, gray.height, gray.width, gray.data);
}

void write_png_gray16(const std::filesystem::path& path, const Raster<std::uint16_t>& gray) {
  if (gray.channels != 1) throw DataError("write_png_gray16: need 1 channel");
  write_interleaved(path, PNG_FORMAT_LINEAR_Y, gray.height, gray.width, gray.data);
}

Raster<std::uint16_t> quantize16(const FloatImage& prob) {
  Raster<std::uint16_t> out(prob.channels, prob.height, prob.width);
  for (std::size_t i = 0; i < prob.data.size(); ++i) {
    const double p = std::clamp(static_cast<double>(prob.data[i]), 0.0, 1.0);
    out.data[i] = static_cast<std::uint16_t>(std::lround(p * 65535.0));
  }
  return out;
}

FloatImage dequantize16(const Raster<std::uint16_t>& codes) {
  FloatImage out(codes.channels, codes.height, codes.width);
  for (std::size_t i = 0; i < codes.data.size(); ++i) {
    out.data[i] = static_cast<float>(codes.data[i] / 65535.0);
  }
  return out;
}

}  // namespace rrwnet::data
