#include <algorithm>
#include <cmath>

#include "rrwnet/data.hpp"

namespace rrwnet::data {

GtMaps decode_gt_rgb(const ByteImage& rgb) {
  if (rgb.channels != 3) {
    throw DataError("decode_gt_rgb: expected 3 channels, got " + std::to_string(rgb.channels));
  }
  const std::size_t h = rgb.height, w = rgb.width, n = rgb.plane_size();
  GtMaps gt{Mask(1, h, w), Mask(1, h, w), Mask(1, h, w), Mask(1, h, w), Mask(1, h, w)};
  for (std::size_t i = 0; i < n; ++i) {
    const bool a = rgb.data[i] >= kBinarizeLevel;
    const bool v = rgb.data[n + i] >= kBinarizeLevel;
    const bool b = rgb.data[2 * n + i] >= kBinarizeLevel;
    gt.artery.data[i] = a;
    gt.vein.data[i] = v;
    gt.vessel.data[i] = b || a || v;
    gt.crossing.data[i] = a && v;
    gt.uncertain.data[i] = b && !a && !v;
  }
  return gt;
}

ByteImage encode_gt_rgb(const FloatImage& artery, const FloatImage& vein, const FloatImage& vessel) {
  if (artery.channels != 1 || vein.channels != 1 || vessel.channels != 1 ||
      !artery.same_size(vein) || !artery.same_size(vessel)) {
    throw DataError("encode_gt_rgb: A, V and BV must be single-channel maps of equal size");
  }
  ByteImage out(3, artery.height, artery.width);
  const std::size_t n = artery.plane_size();
  const FloatImage* maps[3] = {&artery, &vein, &vessel};
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      const double p = std::clamp(static_cast<double>(maps[c]->data[i]), 0.0, 1.0);
      out.data[c * n + i] = static_cast<std::uint8_t>(std::lround(255.0 * p));
    }
  }
  return out;
}

FloatImage gt_to_float(const GtMaps& gt) {
  FloatImage out(3, gt.artery.height, gt.artery.width);
  const std::size_t n = out.plane_size();
  for (std::size_t i = 0; i < n; ++i) {
    out.data[i] = gt.artery.data[i];
    out.data[n + i] = gt.vein.data[i];
    out.data[2 * n + i] = gt.vessel.data[i];
  }
  return out;
}

}  // namespace rrwnet::data
