#include "rrwnet/adam.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace rrwnet::ad {

template <typename T>
AdamState<T> make_adam_state(const std::vector<Tensor<T>>& params, AdamHyper hyper) {
  if (!(hyper.learning_rate > 0) || !(hyper.beta1 > 0 && hyper.beta1 < 1) ||
      !(hyper.beta2 > 0 && hyper.beta2 < 1) || !(hyper.epsilon > 0)) {
    throw std::invalid_argument("adam: hyperparameters out of range");
  }
  AdamState<T> state;
  state.hyper = hyper;
  for (const auto& p : params) {
    state.first_moment.emplace_back(p.size(), T(0));
    state.second_moment.emplace_back(p.size(), T(0));
  }
  return state;
}

template <typename T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state) {
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw ShapeError("adam: state tracks " + std::to_string(state.first_moment.size()) +
                     " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) {
      throw std::logic_error("adam: parameter " + std::to_string(i) + " has no gradient");
    }
    if (state.first_moment[i].size() != params[i].size()) {
      throw ShapeError("adam: moment size mismatch for parameter " + std::to_string(i));
    }
  }

  const auto& h = state.hyper;
  const std::uint64_t t = ++state.step_count;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params[i].mutable_values();
    const auto grad = params[i].grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = grad[j];
      const double mj = h.beta1 * m[j] + (1.0 - h.beta1) * g;
      const double vj = h.beta2 * v[j] + (1.0 - h.beta2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double update = h.learning_rate * (mj / c1) / (std::sqrt(vj / c2) + h.epsilon);
      values[j] = static_cast<T>(values[j] - update);
    }
  }
}

template AdamState<float> make_adam_state(const std::vector<Tensor<float>>&, AdamHyper);
template AdamState<double> make_adam_state(const std::vector<Tensor<double>>&, AdamHyper);
template void adam_step(std::vector<Tensor<float>>&, AdamState<float>&);
template void adam_step(std::vector<Tensor<double>>&, AdamState<double>&);

}  // namespace rrwnet::ad
