#include <algorithm>
#include <cmath>
#include <numeric>

#include "rrwnet/metrics.hpp"

namespace rrwnet::metrics {

double wilcoxon_signed_rank_one_tailed(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw MetricError("wilcoxon: paired samples differ in length");
  if (a.size() < 5) throw MetricError("wilcoxon: need at least 5 pairs, got " + std::to_string(a.size()));
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) throw MetricError("wilcoxon: non-finite sample");
    if (a[i] != b[i]) d.push_back(a[i] - b[i]);
  }
  if (d.empty()) throw MetricError("wilcoxon: all differences are zero");
  const std::size_t n = d.size();

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return std::abs(d[i]) < std::abs(d[j]); });
  // Doubled ranks keep averaged ties integral.
  std::vector<std::uint64_t> rank2(n);
  double tie_term = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
    for (std::size_t k = i; k <= j; ++k) rank2[order[k]] = (i + 1) + (j + 1);
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }
  std::uint64_t w2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (d[i] > 0) w2 += rank2[i];
  }

  if (n <= 25) {
    const std::uint64_t max_sum = std::accumulate(rank2.begin(), rank2.end(), std::uint64_t{0});
    std::vector<double> count(max_sum + 1, 0.0);
    count[0] = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::uint64_t s = max_sum; s + 1 > rank2[i]; --s) count[s] += count[s - rank2[i]];
    }
    double tail = 0;
    for (std::uint64_t s = w2; s <= max_sum; ++s) tail += count[s];
    return tail / std::ldexp(1.0, static_cast<int>(n));
  }

  const double nn = static_cast<double>(n);
  const double mean = nn * (nn + 1) / 4;
  const double var = nn * (nn + 1) * (2 * nn + 1) / 24 - tie_term / 48;
  const double w = static_cast<double>(w2) / 2;
  const double z = (w - mean - 0.5) / std::sqrt(var);
  return 0.5 * std::erfc(z / std::sqrt(2.0));
}

}  // namespace rrwnet::metrics
