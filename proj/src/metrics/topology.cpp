#include <algorithm>
#include <cmath>
#include <deque>
#include <random>

#include "rrwnet/metrics.hpp"

namespace rrwnet::metrics {

namespace {

constexpr int kDy[8] = {-1, -1, 0, 1, 1, 1, 0, -1};
constexpr int kDx[8] = {0, 1, 1, 1, 0, -1, -1, -1};

}  // namespace

Mask skeletonize(const Mask& binary) {
  const std::size_t h = binary.height, w = binary.width;
  Mask img(1, h, w);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = binary.data[i] ? 1 : 0;
  auto px = [&](long y, long x) -> int {
    if (y < 0 || x < 0 || y >= static_cast<long>(h) || x >= static_cast<long>(w)) return 0;
    return img.data[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
  };
  std::vector<std::size_t> remove;
  bool changed = true;
  while (changed) {
    changed = false;
    for (int pass = 0; pass < 2; ++pass) {
      remove.clear();
      for (long y = 0; y < static_cast<long>(h); ++y) {
        for (long x = 0; x < static_cast<long>(w); ++x) {
          if (!px(y, x)) continue;
          // P2..P9 clockwise from north.
          int p[8];
          for (int k = 0; k < 8; ++k) p[k] = px(y + kDy[k], x + kDx[k]);
          int b = 0, a = 0;
          for (int k = 0; k < 8; ++k) {
            b += p[k];
            a += (!p[k] && p[(k + 1) % 8]);
          }
          if (b < 2 || b > 6 || a != 1) continue;
          const bool c1 = pass == 0 ? !(p[0] && p[2] && p[4]) : !(p[0] && p[2] && p[6]);
          const bool c2 = pass == 0 ? !(p[2] && p[4] && p[6]) : !(p[0] && p[4] && p[6]);
          if (c1 && c2) remove.push_back(static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x));
        }
      }
      for (auto i : remove) img.data[i] = 0;
      changed = changed || !remove.empty();
    }
  }
  return img;
}

std::int64_t shortest_path(const Mask& mask, std::size_t from, std::size_t to) {
  const std::size_t n = mask.plane_size();
  if (from >= n || to >= n || !mask.data[from] || !mask.data[to]) return -1;
  if (from == to) return 0;
  const long h = static_cast<long>(mask.height), w = static_cast<long>(mask.width);
  std::vector<std::int32_t> dist(n, -1);
  std::deque<std::size_t> queue{from};
  dist[from] = 0;
  while (!queue.empty()) {
    const std::size_t cur = queue.front();
    queue.pop_front();
    const long y = static_cast<long>(cur) / w, x = static_cast<long>(cur) % w;
    for (int k = 0; k < 8; ++k) {
      const long ny = y + kDy[k], nx = x + kDx[k];
      if (ny < 0 || nx < 0 || ny >= h || nx >= w) continue;
      const auto ni = static_cast<std::size_t>(ny * w + nx);
      if (!mask.data[ni] || dist[ni] >= 0) continue;
      dist[ni] = dist[cur] + 1;
      if (ni == to) return dist[ni];
      queue.push_back(ni);
    }
  }
  return -1;
}

void TopoConfig::validate() const {
  if (n_paths == 0) throw MetricError("TopoConfig: n_paths must be positive");
  if (!(tolerance > 0)) throw MetricError("TopoConfig: tolerance must be positive");
  if (snap_radius < 0) throw MetricError("TopoConfig: snap_radius must be non-negative");
}

std::size_t default_paths(data::DatasetKind kind) {
  return kind == data::DatasetKind::hrf || kind == data::DatasetKind::les_av ? 100 : 1000;
}

std::uint64_t topo_stream(std::uint64_t seed, const std::string& identifier, std::size_t class_index) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char c : identifier) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32),
                    static_cast<std::uint32_t>(class_index)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

namespace {

std::vector<std::vector<std::size_t>> components(const Mask& m) {
  const long h = static_cast<long>(m.height), w = static_cast<long>(m.width);
  std::vector<std::uint8_t> seen(m.plane_size(), 0);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < m.plane_size(); ++start) {
    if (!m.data[start] || seen[start]) continue;
    std::vector<std::size_t> comp{start};
    seen[start] = 1;
    for (std::size_t head = 0; head < comp.size(); ++head) {
      const long y = static_cast<long>(comp[head]) / w, x = static_cast<long>(comp[head]) % w;
      for (int k = 0; k < 8; ++k) {
        const long ny = y + kDy[k], nx = x + kDx[k];
        if (ny < 0 || nx < 0 || ny >= h || nx >= w) continue;
        const auto ni = static_cast<std::size_t>(ny * w + nx);
        if (m.data[ni] && !seen[ni]) {
          seen[ni] = 1;
          comp.push_back(ni);
        }
      }
    }
    out.push_back(std::move(comp));
  }
  return out;
}

// Nearest set pixel within the radius (Euclidean), ties in raster order.
std::optional<std::size_t> snap(const Mask& m, std::size_t at, int radius) {
  const long h = static_cast<long>(m.height), w = static_cast<long>(m.width);
  const long y = static_cast<long>(at) / w, x = static_cast<long>(at) % w;
  std::optional<std::size_t> best;
  long best_d = static_cast<long>(radius) * radius + 1;
  for (long dy = -radius; dy <= radius; ++dy) {
    for (long dx = -radius; dx <= radius; ++dx) {
      const long ny = y + dy, nx = x + dx, d = dy * dy + dx * dx;
      if (ny < 0 || nx < 0 || ny >= h || nx >= w || d >= best_d) continue;
      const auto ni = static_cast<std::size_t>(ny * w + nx);
      if (!m.data[ni]) continue;
      best = ni;
      best_d = d;
    }
  }
  return best;
}

}  // namespace

TopoResult topo_cor_inf(const Mask& gt, const Mask& pred, const TopoConfig& config, std::uint64_t stream) {
  config.validate();
  if (!gt.same_size(pred.height, pred.width) || gt.channels != 1 || pred.channels != 1) {
    throw MetricError("topo_cor_inf: GT and prediction differ in size");
  }
  const Mask skel = skeletonize(gt);
  const auto comps = components(skel);
  if (comps.empty()) throw MetricError("topo_cor_inf: empty GT skeleton");
  std::vector<std::uint64_t> cumulative;
  std::uint64_t total = 0;
  for (const auto& c : comps) {
    total += static_cast<std::uint64_t>(c.size()) * (c.size() - 1);
    cumulative.push_back(total);
  }
  if (total == 0) throw MetricError("topo_cor_inf: GT skeleton has no connected pixel pairs");

  std::mt19937_64 rng(stream);
  std::size_t correct = 0, infeasible = 0;
  for (std::size_t path = 0; path < config.n_paths; ++path) {
    const std::uint64_t r = std::uniform_int_distribution<std::uint64_t>(0, total - 1)(rng);
    const auto& comp = comps[static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), r) -
                                                      cumulative.begin())];
    const std::size_t ia = std::uniform_int_distribution<std::size_t>(0, comp.size() - 1)(rng);
    std::size_t ib = std::uniform_int_distribution<std::size_t>(0, comp.size() - 2)(rng);
    if (ib >= ia) ++ib;
    const std::size_t a = comp[ia], b = comp[ib];

    const auto pa = snap(pred, a, config.snap_radius), pb = snap(pred, b, config.snap_radius);
    if (!pa || !pb) {
      ++infeasible;
      continue;
    }
    const std::int64_t lp = shortest_path(pred, *pa, *pb);
    if (lp < 0) {
      ++infeasible;
      continue;
    }
    const std::int64_t lg = shortest_path(gt, a, b);
    if (std::abs(static_cast<double>(lp - lg)) / static_cast<double>(lg) < config.tolerance) ++correct;
  }
  const double n = static_cast<double>(config.n_paths);
  return {100.0 * static_cast<double>(correct) / n, 100.0 * static_cast<double>(infeasible) / n, config.n_paths};
}

}  // namespace rrwnet::metrics
