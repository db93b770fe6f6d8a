#include <cmath>
#include <numbers>

#include "rrwnet/training.hpp"

namespace rrwnet::train {

AugmentationConfig AugmentationConfig::disabled() {
  AugmentationConfig c;
  c.color_enabled = false;
  c.affine_enabled = false;
  c.hflip_p = 0.0;
  c.vflip_p = 0.0;
  c.cutout_enabled = false;
  return c;
}

namespace {

template <typename T>
void flip(Raster<T>& r, bool horizontal) {
  for (std::size_t c = 0; c < r.channels; ++c) {
    for (std::size_t y = 0; y < r.height; ++y) {
      for (std::size_t x = 0; x < r.width; ++x) {
        const std::size_t ty = horizontal ? y : r.height - 1 - y;
        const std::size_t tx = horizontal ? r.width - 1 - x : x;
        if (ty * r.width + tx <= y * r.width + x) continue;
        std::swap(r.at(c, y, x), r.at(c, ty, tx));
      }
    }
  }
}

void flip_all(FundusSample& s, bool horizontal) {
  flip(s.image, horizontal);
  flip(s.gt, horizontal);
  flip(s.roi, horizontal);
  flip(s.crossing, horizontal);
  flip(s.uncertain, horizontal);
}

// Inverse map from an output pixel to source coordinates about the centre.
struct Affine {
  double a, b, c, d;  // inverse 2x2
  double cy, cx;
  void source(std::size_t y, std::size_t x, double& sy, double& sx) const {
    const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
    sx = a * dx + b * dy + cx;
    sy = c * dx + d * dy + cy;
  }
};

template <typename T>
Raster<T> warp_nearest(const Raster<T>& src, const Affine& m) {
  Raster<T> out(src.channels, src.height, src.width, T(0));
  for (std::size_t y = 0; y < src.height; ++y) {
    for (std::size_t x = 0; x < src.width; ++x) {
      double sy, sx;
      m.source(y, x, sy, sx);
      const long iy = std::lround(sy), ix = std::lround(sx);
      if (iy < 0 || ix < 0 || iy >= static_cast<long>(src.height) || ix >= static_cast<long>(src.width)) {
        continue;
      }
      for (std::size_t c = 0; c < src.channels; ++c) {
        out.at(c, y, x) = src.at(c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
      }
    }
  }
  return out;
}

FloatImage warp_bilinear(const FloatImage& src, const Affine& m) {
  FloatImage out(src.channels, src.height, src.width, 0.0f);
  const auto h = static_cast<long>(src.height), w = static_cast<long>(src.width);
  for (std::size_t y = 0; y < src.height; ++y) {
    for (std::size_t x = 0; x < src.width; ++x) {
      double sy, sx;
      m.source(y, x, sy, sx);
      const long y0 = static_cast<long>(std::floor(sy)), x0 = static_cast<long>(std::floor(sx));
      const double wy = sy - static_cast<double>(y0), wx = sx - static_cast<double>(x0);
      for (std::size_t c = 0; c < src.channels; ++c) {
        auto sample = [&](long yy, long xx) -> double {
          if (yy < 0 || xx < 0 || yy >= h || xx >= w) return 0.0;
          return src.at(c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
        };
        const double v = (1 - wy) * ((1 - wx) * sample(y0, x0) + wx * sample(y0, x0 + 1)) +
                         wy * ((1 - wx) * sample(y0 + 1, x0) + wx * sample(y0 + 1, x0 + 1));
        out.at(c, y, x) = static_cast<float>(v);
      }
    }
  }
  return out;
}

}  // namespace

FundusSample augment(const FundusSample& sample, const AugmentationConfig& cfg, std::mt19937_64& rng) {
  FundusSample s = sample;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  if (cfg.hflip_p > 0 && unit(rng) < cfg.hflip_p) flip_all(s, true);
  if (cfg.vflip_p > 0 && unit(rng) < cfg.vflip_p) flip_all(s, false);

  if (cfg.affine_enabled) {
    constexpr double deg = std::numbers::pi / 180.0;
    const double theta = uniform(-cfg.rotation_deg, cfg.rotation_deg) * deg;
    const double scale = uniform(cfg.scale_min, cfg.scale_max);
    const double shear = uniform(-cfg.shear_deg, cfg.shear_deg) * deg;
    // Forward map: rotation * shear_x * scale.
    const double ct = std::cos(theta), st = std::sin(theta), sh = std::tan(shear);
    const double f00 = scale * ct, f01 = scale * (ct * sh - st);
    const double f10 = scale * st, f11 = scale * (st * sh + ct);
    const double det = f00 * f11 - f01 * f10;
    Affine inv{f11 / det, -f01 / det, -f10 / det, f00 / det,
               (static_cast<double>(s.image.height) - 1) / 2, (static_cast<double>(s.image.width) - 1) / 2};
    s.image = warp_bilinear(s.image, inv);
    s.gt = warp_nearest(s.gt, inv);
    s.roi = warp_nearest(s.roi, inv);
    s.crossing = warp_nearest(s.crossing, inv);
    s.uncertain = warp_nearest(s.uncertain, inv);
  }

  if (cfg.color_enabled) {
    const std::size_t n = s.image.plane_size();
    for (std::size_t c = 0; c < s.image.channels; ++c) {
      const double gain = uniform(cfg.gain_min, cfg.gain_max);
      const double shift = uniform(cfg.shift_min, cfg.shift_max);
      for (std::size_t i = 0; i < n; ++i) {
        if (!s.roi.data[i]) continue;
        float& v = s.image.data[c * n + i];
        v = static_cast<float>(std::clamp(v * gain + shift, -1.0, 1.0));
      }
    }
  }

  if (cfg.cutout_enabled && cfg.cutout_max >= cfg.cutout_min && cfg.cutout_min >= 0) {
    std::uniform_int_distribution<std::int64_t> count(cfg.cutout_min, cfg.cutout_max);
    const std::int64_t rects = count(rng);
    const double total = static_cast<double>(s.image.plane_size());
    for (std::int64_t r = 0; r < rects; ++r) {
      const double area = uniform(0.0, cfg.cutout_max_area) * total;
      const double aspect = std::exp(uniform(std::log(0.5), std::log(2.0)));
      const auto rh = std::min<std::size_t>(s.image.height, static_cast<std::size_t>(std::sqrt(area * aspect)));
      const auto rw = std::min<std::size_t>(s.image.width, static_cast<std::size_t>(std::sqrt(area / aspect)));
      if (rh == 0 || rw == 0) continue;
      std::uniform_int_distribution<std::size_t> py(0, s.image.height - rh), px(0, s.image.width - rw);
      const std::size_t y0 = py(rng), x0 = px(rng);
      for (std::size_t c = 0; c < s.image.channels; ++c) {
        for (std::size_t y = y0; y < y0 + rh; ++y) {
          for (std::size_t x = x0; x < x0 + rw; ++x) s.image.at(c, y, x) = 0.0f;
        }
      }
    }
  }
  return s;
}

}  // namespace rrwnet::train
