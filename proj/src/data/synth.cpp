#include "rrwnet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

namespace rrwnet::synth {

namespace fs = std::filesystem;

namespace {

struct Point {
  double y, x;
};

struct Curve {
  std::vector<Point> pts;
  std::vector<double> arclength;  // normalized to [0,1]
  double radius;
  bool artery;
  double rev_begin, rev_end;
  double phase, period;
};

Point border_point(std::mt19937_64& rng, double size, int side) {
  std::uniform_real_distribution<double> along(0.1 * size, 0.9 * size);
  switch (side) {
    case 0: return {0.0, along(rng)};
    case 1: return {size - 1, along(rng)};
    case 2: return {along(rng), 0.0};
    default: return {along(rng), size - 1};
  }
}

Curve make_curve(std::mt19937_64& rng, const SynthConfig& cfg) {
  const double size = static_cast<double>(cfg.size);
  std::uniform_int_distribution<int> side(0, 3);
  std::uniform_real_distribution<double> inside(0.15 * size, 0.85 * size);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int s0 = side(rng);
  int s1 = side(rng);
  while (s1 == s0) s1 = side(rng);
  const Point p0 = border_point(rng, size, s0), p3 = border_point(rng, size, s1);
  const Point p1{inside(rng), inside(rng)}, p2{inside(rng), inside(rng)};

  Curve c;
  constexpr int kSamples = 600;
  c.pts.reserve(kSamples + 1);
  for (int i = 0; i <= kSamples; ++i) {
    const double t = static_cast<double>(i) / kSamples, u = 1 - t;
    const double b0 = u * u * u, b1 = 3 * u * u * t, b2 = 3 * u * t * t, b3 = t * t * t;
    c.pts.push_back({b0 * p0.y + b1 * p1.y + b2 * p2.y + b3 * p3.y, b0 * p0.x + b1 * p1.x + b2 * p2.x + b3 * p3.x});
  }
  c.arclength.assign(c.pts.size(), 0.0);
  for (std::size_t i = 1; i < c.pts.size(); ++i) {
    c.arclength[i] = c.arclength[i - 1] + std::hypot(c.pts[i].y - c.pts[i - 1].y, c.pts[i].x - c.pts[i - 1].x);
  }
  const double total = c.arclength.back();
  for (auto& a : c.arclength) a /= total;

  std::uniform_int_distribution<int> width(cfg.min_width, cfg.max_width);
  c.radius = width(rng) / 2.0;
  c.artery = unit(rng) < 0.5;
  const double len = cfg.reverse_min + (cfg.reverse_max - cfg.reverse_min) * unit(rng);
  c.rev_begin = (1.0 - len) * unit(rng);
  c.rev_end = c.rev_begin + len;
  c.phase = 2 * std::numbers::pi * unit(rng);
  c.period = 0.3 + 0.4 * unit(rng);
  return c;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

}  // namespace

std::uint64_t image_seed(std::uint64_t seed, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), 0x5157u};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

SynthImage generate(std::uint64_t seed, const SynthConfig& cfg) {
  if (cfg.size < 8 || cfg.min_curves < 1 || cfg.max_curves < cfg.min_curves || cfg.min_width < 1 ||
      cfg.max_width < cfg.min_width) {
    throw std::invalid_argument("synth: invalid generator configuration");
  }
  std::mt19937_64 rng(seed);
  const std::size_t n = cfg.size;
  std::uniform_int_distribution<int> count(cfg.min_curves, cfg.max_curves);
  std::vector<Curve> curves(static_cast<std::size_t>(count(rng)));
  for (auto& c : curves) c = make_curve(rng, cfg);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double gy = unit(rng) * 2 * std::numbers::pi, gx = unit(rng) * 2 * std::numbers::pi;
  std::normal_distribution<double> noise(0.0, cfg.noise);

  SynthImage out;
  out.rgb = ByteImage(3, n, n);
  out.gt_rgb = ByteImage(3, n, n);
  out.roi = Mask(1, n, n, 1);
  out.reversed = Mask(1, n, n, 0);

  const double base[3] = {175.0, 95.0, 55.0};
  const double darken[3] = {0.22, 0.38, 0.0};
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const double fy = static_cast<double>(y) / static_cast<double>(n);
      const double fx = static_cast<double>(x) / static_cast<double>(n);
      const double illum = 0.88 + 0.12 * std::cos(2 * std::numbers::pi * fy + gy) * std::cos(2 * std::numbers::pi * fx + gx);
      bool artery = false, vein = false, rev = false;
      double cue = 0.0;
      int hits = 0;
      for (const auto& c : curves) {
        double best = 1e18;
        std::size_t arg = 0;
        for (std::size_t i = 0; i < c.pts.size(); ++i) {
          const double dy = c.pts[i].y - static_cast<double>(y), dx = c.pts[i].x - static_cast<double>(x);
          const double d = dy * dy + dx * dx;
          if (d < best) {
            best = d;
            arg = i;
          }
        }
        const double r = c.radius + 0.25;
        if (best > r * r) continue;
        ++hits;
        (c.artery ? artery : vein) = true;
        const double t = c.arclength[arg];
        const bool flipped = t >= c.rev_begin && t <= c.rev_end;
        rev = rev || flipped;
        const double strength = 0.7 + 0.3 * std::sin(2 * std::numbers::pi * t / c.period + c.phase);
        cue += (c.artery != flipped ? 1.0 : -1.0) * strength * cfg.cue;
      }
      for (std::size_t ch = 0; ch < 3; ++ch) {
        double v = base[ch] * illum;
        if (hits) v *= 1.0 - darken[ch];
        if (ch == 2) v += cue;
        out.rgb.at(ch, y, x) = to_byte(v + noise(rng));
      }
      out.gt_rgb.at(0, y, x) = artery ? 255 : 0;
      out.gt_rgb.at(1, y, x) = vein ? 255 : 0;
      out.gt_rgb.at(2, y, x) = (artery || vein) ? 255 : 0;
      out.reversed.at(0, y, x) = rev && !(artery && vein);
    }
  }
  return out;
}

FundusSample to_sample(const SynthImage& img, const std::string& identifier) {
  FundusSample s;
  s.identifier = identifier;
  const auto gt = data::decode_gt_rgb(img.gt_rgb);
  s.image = data::preprocess(img.rgb, img.roi);
  s.gt = data::gt_to_float(gt);
  s.roi = img.roi;
  s.crossing = gt.crossing;
  s.uncertain = gt.uncertain;
  s.resize = {img.rgb.height, img.rgb.width, img.rgb.height, img.rgb.width};
  data::validate_sample(s);
  return s;
}

FundusSample generate_sample(std::uint64_t seed, const SynthConfig& config) {
  char id[32];
  std::snprintf(id, sizeof id, "synth_%llu", static_cast<unsigned long long>(seed));
  return to_sample(generate(seed, config), id);
}

void write_dataset(const fs::path& root, std::size_t train_count, std::size_t test_count, std::uint64_t seed,
                   const SynthConfig& config) {
  auto write_split = [&](const std::string& split, std::size_t begin, std::size_t count) {
    for (const char* sub : {"images", "av", "mask"}) fs::create_directories(root / split / sub);
    for (std::size_t i = 0; i < count; ++i) {
      const auto img = generate(image_seed(seed, begin + i), config);
      char name[32];
      std::snprintf(name, sizeof name, "%03zu.png", begin + i);
      data::write_png_rgb8(root / split / "images" / name, img.rgb);
      data::write_png_rgb8(root / split / "av" / name, img.gt_rgb);
      ByteImage mask(1, img.roi.height, img.roi.width);
      for (std::size_t k = 0; k < mask.data.size(); ++k) mask.data[k] = img.roi.data[k] ? 255 : 0;
      data::write_png_gray8(root / split / "mask" / name, mask);
    }
  };
  write_split("train", 0, train_count);
  write_split("test", train_count, test_count);
}

}  // namespace rrwnet::synth
