#pragma once

// Central finite-difference gradient checks for double-precision graphs.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "rrwnet/tensor.hpp"

namespace rrwnet::testing {

struct GradCheckResult {
  std::size_t checked = 0;
  std::size_t failed = 0;
  double worst = 0.0;
};

// loss_fn rebuilds the graph from the (mutable) leaves each call. Every
// element is checked unless max_per_tensor caps it, in which case a seeded
// sample of positions is used. Error is |analytic - fd| / max(floor, |fd|, |analytic|).
inline GradCheckResult gradcheck(const std::function<ad::Tensor<double>()>& loss_fn,
                                 std::vector<ad::Tensor<double>> leaves, double eps = 1e-6,
                                 double tol = 1e-4, std::size_t max_per_tensor = 0,
                                 std::uint64_t seed = 7, double floor = 1.0) {
  for (auto& l : leaves) l.zero_grad();
  loss_fn().backward();
  std::vector<std::vector<double>> analytic;
  for (auto& l : leaves) {
    analytic.emplace_back(l.grad().begin(), l.grad().end());
    if (analytic.back().empty()) analytic.back().assign(l.size(), 0.0);
  }

  std::mt19937_64 rng(seed);
  GradCheckResult res;
  for (std::size_t t = 0; t < leaves.size(); ++t) {
    auto values = leaves[t].mutable_values();
    std::vector<std::size_t> idx(values.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (max_per_tensor && idx.size() > max_per_tensor) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(max_per_tensor);
    }
    for (std::size_t i : idx) {
      const double orig = values[i];
      values[i] = orig + eps;
      const double up = loss_fn().item();
      values[i] = orig - eps;
      const double down = loss_fn().item();
      values[i] = orig;
      const double fd = (up - down) / (2 * eps);
      const double err = std::abs(analytic[t][i] - fd) /
                         std::max({floor, std::abs(fd), std::abs(analytic[t][i])});
      res.worst = std::max(res.worst, err);
      ++res.checked;
      if (!(err < tol)) ++res.failed;
    }
  }
  return res;
}

inline ad::Tensor<double> random_tensor(ad::Shape shape, std::mt19937_64& rng, double lo = -1.0,
                                        double hi = 1.0, bool requires_grad = true) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = dist(rng);
  return ad::Tensor<double>(std::move(shape), std::move(v), requires_grad);
}

// Direct nested-loop same-padded cross-correlation.
inline std::vector<double> naive_conv2d(const std::vector<double>& in, std::size_t cin,
                                        std::size_t h, std::size_t w,
                                        const std::vector<double>& kernel, std::size_t cout,
                                        std::size_t k, const std::vector<double>& bias) {
  const long pad = static_cast<long>(k / 2);
  std::vector<double> out(cout * h * w);
  for (std::size_t co = 0; co < cout; ++co) {
    for (long y = 0; y < static_cast<long>(h); ++y) {
      for (long x = 0; x < static_cast<long>(w); ++x) {
        double acc = bias[co];
        for (std::size_t ci = 0; ci < cin; ++ci) {
          for (long ky = 0; ky < static_cast<long>(k); ++ky) {
            for (long kx = 0; kx < static_cast<long>(k); ++kx) {
              const long iy = y + ky - pad, ix = x + kx - pad;
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) {
                continue;
              }
              acc += in[(ci * h + iy) * w + ix] * kernel[((co * cin + ci) * k + ky) * k + kx];
            }
          }
        }
        out[(co * h + y) * w + x] = acc;
      }
    }
  }
  return out;
}

// Uniform [-1,1) values from a dedicated seed, no gradient.
template <typename T>
inline ad::Tensor<T> random_tensor(ad::Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<T> v(ad::numel(shape));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return ad::Tensor<T>(std::move(shape), std::move(v));
}

}  // namespace rrwnet::testing
