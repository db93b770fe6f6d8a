#include <stdexcept>

#include "rrwnet/ops.hpp"
#include "rrwnet/training.hpp"

namespace rrwnet::train {

std::vector<double> iteration_weights(std::int64_t K) {
  if (K < 0) throw std::invalid_argument("iteration_weights: K must be non-negative, got " + std::to_string(K));
  std::vector<double> w(static_cast<std::size_t>(K) + 1);
  w[0] = 1.0;
  const double z = static_cast<double>(K) * static_cast<double>(K + 1) / 2.0;
  for (std::int64_t k = 1; k <= K; ++k) w[static_cast<std::size_t>(k)] = static_cast<double>(k) / z;
  return w;
}

template <typename T>
Tensor<T> segmentation_loss(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<T>& roi) {
  if (pred.shape() != gt.shape()) {
    throw ad::ShapeError("segmentation_loss: prediction " + ad::shape_str(pred.shape()) +
                         " vs ground truth " + ad::shape_str(gt.shape()));
  }
  if (pred.rank() != 3 || roi.shape() != ad::Shape{pred.dim(1), pred.dim(2)}) {
    throw ad::ShapeError("segmentation_loss: ROI " + ad::shape_str(roi.shape()) +
                         " does not match maps " + ad::shape_str(pred.shape()));
  }
  Tensor<T> loss;
  for (std::size_t c = 0; c < pred.dim(0); ++c) {
    auto term = ad::bce(ad::slice_channels(pred, c, 1), ad::slice_channels(gt, c, 1), roi);
    loss = loss.defined() ? ad::add(loss, term) : term;
  }
  return loss;
}

template <typename T>
Tensor<T> total_loss(const std::vector<Tensor<T>>& stages, const Tensor<T>& gt, const Tensor<T>& roi,
                     std::optional<std::size_t> expected_K) {
  if (stages.empty()) throw std::invalid_argument("total_loss: no stages");
  if (expected_K && stages.size() != *expected_K + 1) {
    throw std::invalid_argument("total_loss: got " + std::to_string(stages.size()) +
                                " stages, configured K=" + std::to_string(*expected_K) + " needs " +
                                std::to_string(*expected_K + 1));
  }
  const auto w = iteration_weights(static_cast<std::int64_t>(stages.size()) - 1);
  Tensor<T> loss = segmentation_loss(stages[0], gt, roi);
  for (std::size_t k = 1; k < stages.size(); ++k) {
    loss = ad::add(loss, ad::scale(segmentation_loss(stages[k], gt, roi), static_cast<T>(w[k])));
  }
  return loss;
}

template Tensor<float> segmentation_loss(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&);
template Tensor<double> segmentation_loss(const Tensor<double>&, const Tensor<double>&,
                                          const Tensor<double>&);
template Tensor<float> total_loss(const std::vector<Tensor<float>>&, const Tensor<float>&,
                                  const Tensor<float>&, std::optional<std::size_t>);
template Tensor<double> total_loss(const std::vector<Tensor<double>>&, const Tensor<double>&,
                                   const Tensor<double>&, std::optional<std::size_t>);

}  // namespace rrwnet::train
