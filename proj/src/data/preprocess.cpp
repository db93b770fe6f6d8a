#include <algorithm>
#include <cmath>
#include <queue>

#include "rrwnet/data.hpp"

namespace rrwnet::data {

namespace {

// Separable Gaussian with zero boundary, in double.
std::vector<double> gaussian_blur(const std::vector<double>& src, std::size_t h, std::size_t w,
                                  double sigma) {
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
  }
  std::vector<double> tmp(h * w, 0.0), out(h * w, 0.0);
  const auto H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(w);
  for (std::ptrdiff_t y = 0; y < H; ++y) {
    for (std::ptrdiff_t x = 0; x < W; ++x) {
      double acc = 0;
      const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(-radius, -x);
      const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(radius, W - 1 - x);
      for (std::ptrdiff_t k = lo; k <= hi; ++k) acc += kernel[k + radius] * src[y * W + x + k];
      tmp[y * W + x] = acc;
    }
  }
  for (std::ptrdiff_t y = 0; y < H; ++y) {
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(-radius, -y);
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(radius, H - 1 - y);
    for (std::ptrdiff_t x = 0; x < W; ++x) {
      double acc = 0;
      for (std::ptrdiff_t k = lo; k <= hi; ++k) acc += kernel[k + radius] * tmp[(y + k) * W + x];
      out[y * W + x] = acc;
    }
  }
  return out;
}

double percentile(std::vector<double> values, double pct) {
  // Nearest-rank on the sorted sample.
  std::sort(values.begin(), values.end());
  const double pos = pct / 100.0 * static_cast<double>(values.size() - 1);
  return values[static_cast<std::size_t>(std::lround(pos))];
}

}  // namespace

FloatImage preprocess(const ByteImage& rgb, const Mask& roi, const PreprocessConfig& config) {
  if (rgb.channels != 3) throw DataError("preprocess: expected an RGB image");
  if (roi.channels != 1 || !roi.same_size(rgb)) throw DataError("preprocess: ROI size mismatch");
  const std::size_t h = rgb.height, w = rgb.width, n = rgb.plane_size();
  std::size_t roi_count = 0;
  for (auto m : roi.data) roi_count += m != 0;
  if (roi_count == 0) throw DataError("preprocess: empty ROI");

  std::vector<double> roi_d(n);
  for (std::size_t i = 0; i < n; ++i) roi_d[i] = roi.data[i] ? 1.0 : 0.0;
  const double sigma = std::max(0.5, config.sigma_fraction * static_cast<double>(w));
  const auto roi_blur = gaussian_blur(roi_d, h, w, sigma);

  FloatImage out(3, h, w, 0.0f);
  for (std::size_t c = 0; c < 3; ++c) {
    // Global contrast: percentile stretch over ROI pixels.
    std::vector<double> inside;
    inside.reserve(roi_count);
    for (std::size_t i = 0; i < n; ++i) {
      if (roi.data[i]) inside.push_back(rgb.data[c * n + i]);
    }
    const double lo = percentile(inside, config.low_percentile);
    const double hi = percentile(inside, config.high_percentile);
    std::vector<double> x(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      if (!roi.data[i]) continue;
      x[i] = hi > lo ? std::clamp((rgb.data[c * n + i] - lo) / (hi - lo), 0.0, 1.0) : 0.0;
    }

    // Local normalization, ROI-normalized so the border does not bleed in.
    const auto bg = gaussian_blur(x, h, w, sigma);
    std::vector<double> dev(n, 0.0), dev2(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      if (!roi.data[i]) continue;
      dev[i] = x[i] - bg[i] / roi_blur[i];
      dev2[i] = dev[i] * dev[i];
    }
    const auto var = gaussian_blur(dev2, h, w, sigma);
    for (std::size_t i = 0; i < n; ++i) {
      if (!roi.data[i]) continue;
      const double sd = std::sqrt(std::max(0.0, var[i] / roi_blur[i]));
      const double v = dev[i] / (config.std_scale * (sd + config.std_floor));
      out.data[c * n + i] = static_cast<float>(std::clamp(v, -1.0, 1.0));
    }
  }
  return out;
}

Mask synthesize_roi(const ByteImage& rgb, std::uint8_t threshold) {
  if (rgb.channels != 3) throw DataError("synthesize_roi: expected an RGB image");
  const std::size_t h = rgb.height, w = rgb.width, n = rgb.plane_size();
  std::vector<std::uint8_t> fg(n);
  for (std::size_t i = 0; i < n; ++i) {
    fg[i] = std::max({rgb.data[i], rgb.data[n + i], rgb.data[2 * n + i]}) > threshold;
  }

  auto label = [&](const std::vector<std::uint8_t>& on, bool eight, std::vector<int>& labels) {
    labels.assign(n, -1);
    int next = 0;
    std::vector<std::size_t> stack;
    for (std::size_t s = 0; s < n; ++s) {
      if (!on[s] || labels[s] >= 0) continue;
      labels[s] = next;
      stack.push_back(s);
      while (!stack.empty()) {
        const std::size_t p = stack.back();
        stack.pop_back();
        const long py = static_cast<long>(p / w), px = static_cast<long>(p % w);
        for (long dy = -1; dy <= 1; ++dy) {
          for (long dx = -1; dx <= 1; ++dx) {
            if ((dy == 0 && dx == 0) || (!eight && dy != 0 && dx != 0)) continue;
            const long y = py + dy, x = px + dx;
            if (y < 0 || x < 0 || y >= static_cast<long>(h) || x >= static_cast<long>(w)) continue;
            const std::size_t q = static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x);
            if (on[q] && labels[q] < 0) {
              labels[q] = next;
              stack.push_back(q);
            }
          }
        }
      }
      ++next;
    }
    return next;
  };

  std::vector<int> labels;
  const int count = label(fg, true, labels);
  Mask roi(1, h, w, 0);
  if (count == 0) return roi;
  std::vector<std::size_t> sizes(count, 0);
  for (int l : labels) {
    if (l >= 0) ++sizes[l];
  }
  const int largest = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  for (std::size_t i = 0; i < n; ++i) roi.data[i] = labels[i] == largest;

  // Fill holes: background components (4-connected) not touching the border.
  std::vector<std::uint8_t> bg(n);
  for (std::size_t i = 0; i < n; ++i) bg[i] = !roi.data[i];
  std::vector<int> bg_labels;
  const int bg_count = label(bg, false, bg_labels);
  std::vector<std::uint8_t> touches(bg_count, 0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (y != 0 && x != 0 && y + 1 != h && x + 1 != w) continue;
      const int l = bg_labels[y * w + x];
      if (l >= 0) touches[l] = 1;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (bg_labels[i] >= 0 && !touches[bg_labels[i]]) roi.data[i] = 1;
  }
  return roi;
}

}  // namespace rrwnet::data
