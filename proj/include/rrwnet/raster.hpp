#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rrwnet {

// Planar image: channel-major, then rows. The same layout as a [C,H,W] tensor.
template <typename T>
struct Raster {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<T> data;

  Raster() = default;
  Raster(std::size_t c, std::size_t h, std::size_t w, T fill = T{})
      : channels(c), height(h), width(w), data(c * h * w, fill) {}

  std::size_t plane_size() const { return height * width; }
  bool empty() const { return data.empty(); }
  bool same_size(std::size_t h, std::size_t w) const { return height == h && width == w; }
  template <typename U>
  bool same_size(const Raster<U>& o) const { return height == o.height && width == o.width; }

  T& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
  const T& at(std::size_t c, std::size_t y, std::size_t x) const {
    return data[(c * height + y) * width + x];
  }
  std::span<T> plane(std::size_t c) { return {data.data() + c * plane_size(), plane_size()}; }
  std::span<const T> plane(std::size_t c) const {
    return {data.data() + c * plane_size(), plane_size()};
  }

  Raster channel(std::size_t c) const {
    Raster out(1, height, width);
    auto p = plane(c);
    std::copy(p.begin(), p.end(), out.data.begin());
    return out;
  }

  bool operator==(const Raster&) const = default;
};

using ByteImage = Raster<std::uint8_t>;
using FloatImage = Raster<float>;
// Single-channel 0/1.
using Mask = Raster<std::uint8_t>;

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rrwnet
