#include <algorithm>
#include <cmath>

#include "rrwnet/data.hpp"

namespace rrwnet::data {

DatasetKind parse_dataset_kind(const std::string& name) {
  if (name == "rite") return DatasetKind::rite;
  if (name == "les_av") return DatasetKind::les_av;
  if (name == "hrf") return DatasetKind::hrf;
  if (name == "custom") return DatasetKind::custom;
  throw DataError("unknown dataset kind '" + name + "' (expected rite, les_av, hrf or custom)");
}

std::string dataset_kind_name(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::rite: return "rite";
    case DatasetKind::les_av: return "les_av";
    case DatasetKind::hrf: return "hrf";
    case DatasetKind::custom: return "custom";
  }
  return "custom";
}

std::size_t working_width(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::hrf: return 1024;
    case DatasetKind::les_av: return 576;
    default: return 0;
  }
}

ResizeSpec resize_policy(DatasetKind kind, std::size_t height, std::size_t width) {
  ResizeSpec spec{height, width, height, width};
  const std::size_t target = working_width(kind);
  if (target == 0 || target == width) return spec;
  spec.working_width = target;
  // round(height * target / width), halves rounded up, in exact integers.
  spec.working_height = (2 * height * target + width) / (2 * width);
  return spec;
}

FloatImage resize_bilinear(const FloatImage& image, std::size_t height, std::size_t width) {
  if (image.same_size(height, width)) return image;
  FloatImage out(image.channels, height, width);
  const double sy = static_cast<double>(image.height) / static_cast<double>(height);
  const double sx = static_cast<double>(image.width) / static_cast<double>(width);
  const auto max_y = static_cast<double>(image.height - 1);
  const auto max_x = static_cast<double>(image.width - 1);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, max_y);
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, max_x);
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < image.channels; ++c) {
        const double top = (1 - wx) * image.at(c, y0, x0) + wx * image.at(c, y0, x1);
        const double bot = (1 - wx) * image.at(c, y1, x0) + wx * image.at(c, y1, x1);
        out.at(c, y, x) = static_cast<float>((1 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

Mask resize_nearest(const Mask& mask, std::size_t height, std::size_t width) {
  if (mask.same_size(height, width)) return mask;
  Mask out(mask.channels, height, width);
  for (std::size_t y = 0; y < height; ++y) {
    const std::size_t sy = std::min(mask.height - 1, (2 * y + 1) * mask.height / (2 * height));
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t sx = std::min(mask.width - 1, (2 * x + 1) * mask.width / (2 * width));
      for (std::size_t c = 0; c < mask.channels; ++c) out.at(c, y, x) = mask.at(c, sy, sx);
    }
  }
  return out;
}

PadSpec pad_spec(std::size_t height, std::size_t width, std::size_t factor) {
  if (factor == 0 || (factor & (factor - 1)) != 0) {
    throw DataError("pad factor must be a power of two, got " + std::to_string(factor));
  }
  const auto up = [factor](std::size_t v) { return (v + factor - 1) / factor * factor; };
  return {height, width, up(height), up(width)};
}

namespace {

// Mirror index without repeating the edge sample; periodic for long pads.
std::size_t reflect(std::size_t i, std::size_t n) {
  if (n == 1) return 0;
  const std::size_t period = 2 * (n - 1);
  const std::size_t r = i % period;
  return r < n ? r : period - r;
}

}  // namespace

template <typename T>
Raster<T> pad_to_multiple(const Raster<T>& image, std::size_t factor, PadSpec* spec_out) {
  const PadSpec spec = pad_spec(image.height, image.width, factor);
  if (spec_out) *spec_out = spec;
  if (spec.padded_height == image.height && spec.padded_width == image.width) return image;
  Raster<T> out(image.channels, spec.padded_height, spec.padded_width);
  for (std::size_t c = 0; c < image.channels; ++c) {
    for (std::size_t y = 0; y < spec.padded_height; ++y) {
      const std::size_t sy = reflect(y, image.height);
      for (std::size_t x = 0; x < spec.padded_width; ++x) {
        out.at(c, y, x) = image.at(c, sy, reflect(x, image.width));
      }
    }
  }
  return out;
}

Mask pad_mask(const Mask& mask, const PadSpec& spec) {
  Mask out(mask.channels, spec.padded_height, spec.padded_width, 0);
  for (std::size_t c = 0; c < mask.channels; ++c) {
    for (std::size_t y = 0; y < mask.height; ++y) {
      for (std::size_t x = 0; x < mask.width; ++x) out.at(c, y, x) = mask.at(c, y, x);
    }
  }
  return out;
}

template <typename T>
Raster<T> crop(const Raster<T>& image, const PadSpec& spec) {
  if (image.height < spec.original_height || image.width < spec.original_width) {
    throw DataError("crop window larger than image");
  }
  Raster<T> out(image.channels, spec.original_height, spec.original_width);
  for (std::size_t c = 0; c < image.channels; ++c) {
    for (std::size_t y = 0; y < spec.original_height; ++y) {
      for (std::size_t x = 0; x < spec.original_width; ++x) out.at(c, y, x) = image.at(c, y, x);
    }
  }
  return out;
}

template Raster<float> pad_to_multiple(const Raster<float>&, std::size_t, PadSpec*);
template Raster<std::uint8_t> pad_to_multiple(const Raster<std::uint8_t>&, std::size_t, PadSpec*);
template Raster<float> crop(const Raster<float>&, const PadSpec&);
template Raster<std::uint8_t> crop(const Raster<std::uint8_t>&, const PadSpec&);

}  // namespace rrwnet::data
