#pragma once

// Brute-force reference implementations used to cross-check the metrics.

#include <cmath>
#include <cstdint>
#include <deque>
#include <optional>
#include <vector>

#include "rrwnet/metrics.hpp"

namespace rrwnet::testing {

// P(score_pos > score_neg) + 0.5 P(equal) over all pairs.
inline double pairwise_auroc(const std::vector<float>& s, const std::vector<std::uint8_t>& l,
                             const std::vector<std::uint8_t>& included = {}) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!l[i] || (!included.empty() && !included[i])) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (l[j] || (!included.empty() && !included[j])) continue;
      pairs += 1;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return wins / pairs;
}

// Recount precision and recall at every distinct threshold from scratch.
inline double sweep_aupr(const std::vector<float>& s, const std::vector<std::uint8_t>& l) {
  std::vector<float> thresholds(s.begin(), s.end());
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  std::uint64_t positives = 0;
  for (auto v : l) positives += v != 0;
  const double p = static_cast<double>(positives);
  double area = 0;
  std::uint64_t prev_tp = 0;
  for (float t : thresholds) {
    std::uint64_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] >= t) (l[i] ? tp : fp) += 1;
    }
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    area += static_cast<double>(tp - prev_tp) / p * precision;
    prev_tp = tp;
  }
  return area;
}

// Fraction of all 2^n sign patterns whose positive rank sum reaches the
// observed one.
inline double enumerate_wilcoxon(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) d.push_back(a[i] - b[i]);
  }
  const std::size_t n = d.size();
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    double below = 0, equal = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (std::abs(d[j]) < std::abs(d[i])) below += 1;
      if (std::abs(d[j]) == std::abs(d[i])) equal += 1;
    }
    rank[i] = below + (equal + 1) / 2;
  }
  double observed = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (d[i] > 0) observed += rank[i];
  }
  std::uint64_t hits = 0;
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) {
    double w = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask >> i & 1) w += rank[i];
    }
    if (w >= observed) ++hits;
  }
  return static_cast<double>(hits) / std::ldexp(1.0, static_cast<int>(n));
}

inline std::vector<std::int64_t> bfs_all(const Mask& m, std::size_t from) {
  const long h = static_cast<long>(m.height), w = static_cast<long>(m.width);
  std::vector<std::int64_t> dist(m.plane_size(), -1);
  if (!m.data[from]) return dist;
  std::deque<std::size_t> q{from};
  dist[from] = 0;
  while (!q.empty()) {
    const auto cur = q.front();
    q.pop_front();
    const long y = static_cast<long>(cur) / w, x = static_cast<long>(cur) % w;
    for (long dy = -1; dy <= 1; ++dy) {
      for (long dx = -1; dx <= 1; ++dx) {
        const long ny = y + dy, nx = x + dx;
        if ((!dy && !dx) || ny < 0 || nx < 0 || ny >= h || nx >= w) continue;
        const auto ni = static_cast<std::size_t>(ny * w + nx);
        if (m.data[ni] && dist[ni] < 0) {
          dist[ni] = dist[cur] + 1;
          q.push_back(ni);
        }
      }
    }
  }
  return dist;
}

inline std::optional<std::size_t> brute_snap(const Mask& m, std::size_t at, int radius) {
  const long w = static_cast<long>(m.width);
  const long y = static_cast<long>(at) / w, x = static_cast<long>(at) % w;
  std::optional<std::size_t> best;
  long best_d = 0;
  for (std::size_t i = 0; i < m.plane_size(); ++i) {
    if (!m.data[i]) continue;
    const long dy = static_cast<long>(i) / w - y, dx = static_cast<long>(i) % w - x;
    const long d = dy * dy + dx * dx;
    if (d > static_cast<long>(radius) * radius) continue;
    if (!best || d < best_d) {
      best = i;
      best_d = d;
    }
  }
  return best;
}

// COR/INF over every ordered pair of connected skeleton pixels.
inline metrics::TopoResult all_pairs_cor_inf(const Mask& gt, const Mask& pred, const metrics::TopoConfig& cfg) {
  const Mask skel = metrics::skeletonize(gt);
  std::size_t pairs = 0, correct = 0, infeasible = 0;
  for (std::size_t a = 0; a < skel.plane_size(); ++a) {
    if (!skel.data[a]) continue;
    const auto in_skel = bfs_all(skel, a);
    const auto in_gt = bfs_all(gt, a);
    const auto sa = brute_snap(pred, a, cfg.snap_radius);
    std::vector<std::int64_t> in_pred;
    if (sa) in_pred = bfs_all(pred, *sa);
    for (std::size_t b = 0; b < skel.plane_size(); ++b) {
      if (b == a || !skel.data[b] || in_skel[b] < 0) continue;
      ++pairs;
      const auto sb = brute_snap(pred, b, cfg.snap_radius);
      if (!sa || !sb || in_pred[*sb] < 0) {
        ++infeasible;
        continue;
      }
      const double lg = static_cast<double>(in_gt[b]), lp = static_cast<double>(in_pred[*sb]);
      if (std::abs(lp - lg) / lg < cfg.tolerance) ++correct;
    }
  }
  const double n = static_cast<double>(pairs);
  return {100.0 * static_cast<double>(correct) / n, 100.0 * static_cast<double>(infeasible) / n, pairs};
}

}  // namespace rrwnet::testing
