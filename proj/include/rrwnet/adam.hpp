#pragma once

#include <cstdint>
#include <vector>

#include "rrwnet/tensor.hpp"

namespace rrwnet::ad {

struct AdamHyper {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  AdamHyper hyper;
  std::uint64_t step_count = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
};

// Moments sized to match params, all zero.
template <typename T>
AdamState<T> make_adam_state(const std::vector<Tensor<T>>& params, AdamHyper hyper);

// One bias-corrected Adam update, in place. Every parameter must carry a
// gradient (throws std::logic_error otherwise). Gradients are left untouched;
// the caller zeroes them before the next accumulation.
template <typename T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state);

}  // namespace rrwnet::ad
