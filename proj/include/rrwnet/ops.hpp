#pragma once

// Differentiable array ops used by the networks and the training loss.
// Image-like tensors are laid out [C,H,W], row-major.

#include <optional>

#include "rrwnet/tensor.hpp"

namespace rrwnet::ad {

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

template <typename T>
Tensor<T> sum(const Tensor<T>& a);

template <typename T>
Tensor<T> relu(const Tensor<T>& a);

// Numerically stable logistic; output stays strictly inside (0,1) for finite
// inputs down to the denormal range.
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a);

// Same-padded 2-D cross-correlation. input [Cin,H,W], kernel [Cout,Cin,k,k]
// with k odd (padding k/2), bias [Cout].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias);

// 2x2 stride-2 max pooling; H and W must be even. Ties send the gradient to
// the first position in row-major order.
template <typename T>
Tensor<T> max_pool2(const Tensor<T>& input);

// Nearest-neighbour 2x upsampling.
template <typename T>
Tensor<T> upsample2(const Tensor<T>& input);

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

// Channels [begin, begin+count) of a [C,H,W] tensor.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& a, std::size_t begin, std::size_t count);

inline constexpr double kBceClamp = 1e-7;

// Mean binary cross-entropy. pred is clamped to [kBceClamp, 1-kBceClamp];
// the gradient is evaluated at the clamped value. If mask is given it has the
// trailing [H,W] shape of pred (or pred's full shape) and the mean runs over
// the selected elements only.
template <typename T>
Tensor<T> bce(const Tensor<T>& pred, const Tensor<T>& target,
              const std::optional<Tensor<T>>& mask = std::nullopt);

template <typename T>
Tensor<T> bce(const Tensor<T>& pred, const Tensor<T>& target, const Tensor<T>& mask) {
  return bce(pred, target, std::optional<Tensor<T>>(mask));
}

}  // namespace rrwnet::ad
