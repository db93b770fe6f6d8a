#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "rrwnet/data.hpp"
#include "rrwnet/networks.hpp"
#include "rrwnet/tensor.hpp"

namespace rrwnet::train {

using ad::Tensor;
using data::FundusSample;

// Per-stage loss weights: w_0 = 1, w_k = k / (1 + 2 + ... + K) for k >= 1.
std::vector<double> iteration_weights(std::int64_t K);

// Sum over the three structures of the ROI-restricted mean BCE.
template <typename T>
Tensor<T> segmentation_loss(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<T>& roi);

// Weighted sum of per-stage segmentation losses. When expected_K is given the
// stage list must have exactly expected_K + 1 entries.
template <typename T>
Tensor<T> total_loss(const std::vector<Tensor<T>>& stages, const Tensor<T>& gt, const Tensor<T>& roi,
                     std::optional<std::size_t> expected_K = std::nullopt);

struct AugmentationConfig {
  bool color_enabled = true;
  double gain_min = 0.8;
  double gain_max = 1.2;
  double shift_min = -0.1;
  double shift_max = 0.1;
  bool affine_enabled = true;
  double rotation_deg = 45.0;
  double scale_min = 0.9;
  double scale_max = 1.1;
  double shear_deg = 10.0;
  double hflip_p = 0.5;
  double vflip_p = 0.5;
  bool cutout_enabled = true;
  std::int64_t cutout_min = 1;
  std::int64_t cutout_max = 3;
  double cutout_max_area = 0.10;

  static AugmentationConfig disabled();
};

// Geometric transforms hit image, GT, ROI and the crossing/uncertain masks
// identically (bilinear for the image, nearest for label maps). Colour jitter
// and cutout touch the image only.
FundusSample augment(const FundusSample& sample, const AugmentationConfig& config,
                     std::mt19937_64& rng);

struct TrainConfig {
  std::int64_t K = 6;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::int64_t batch_size = 1;
  std::int64_t early_stop_patience = 200;
  std::int64_t max_epochs = 2000;
  std::uint64_t seed = 0;
  std::int64_t fold_count = 4;
  nn::Variant variant = nn::Variant::rrwnet;
  std::int64_t base_channels = 64;
  std::int64_t depth = 5;
  AugmentationConfig augmentation;

  void validate() const;
  // K = 0 with a refining variant yields the base-only (unet_only) network.
  nn::RRWNetConfig network() const;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Flat `key = value` text using the TrainConfig / AugmentationConfig field
// names. Unknown keys, bad values and duplicates are errors carrying the
// line number.
TrainConfig parse_train_config(const std::string& text, const std::string& source = "<config>");
TrainConfig load_train_config(const std::filesystem::path& path);
std::string format_train_config(const TrainConfig& config);

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

// Seeded shuffle, then contiguous validation blocks whose sizes differ by at
// most one.
std::vector<Fold> cross_validation_split(std::size_t dataset_size, std::size_t folds,
                                         std::uint64_t seed);

// Seeded shuffle of `indices`, then the first round(fraction * n) go to
// validation. Returns (train, validation), each sorted.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> holdout_split(std::vector<std::size_t> indices,
                                                                            double validation_fraction,
                                                                            std::uint64_t seed);

class EarlyStopping {
 public:
  explicit EarlyStopping(std::int64_t patience);

  // Returns true if the value is a new best.
  bool update(std::int64_t epoch, double value);
  bool should_stop(std::int64_t epoch) const { return epoch - best_epoch_ >= patience_; }
  double best() const { return best_; }
  std::int64_t best_epoch() const { return best_epoch_; }

 private:
  std::int64_t patience_;
  double best_;
  std::int64_t best_epoch_ = 0;
};

struct EpochRecord {
  std::int64_t epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double best_so_far = 0;
  double seconds = 0;
};

// `epoch,train_loss,val_loss,best_so_far,seconds`
std::string format_log_line(const EpochRecord& record);

struct PreparedSample {
  Tensor<float> image;
  Tensor<float> gt;
  Tensor<float> roi;
};

// Pads to the network's size multiple (reflect for image and GT, zero for
// ROI so padded pixels never enter the loss).
PreparedSample prepare_sample(const FundusSample& sample, std::size_t size_multiple);

struct Trainer {
  nn::RRWNetConfig network;
  nn::ParameterSet<float> params;
  ad::AdamState<float> optimizer;

  static Trainer create(const TrainConfig& config);
  static Trainer resume(const nn::ModelCheckpoint& checkpoint);

  // Forward + backward + Adam update; returns the pre-update loss.
  double step(const PreparedSample& sample);
  // Loss without updating anything.
  double evaluate(const PreparedSample& sample) const;
  nn::ModelCheckpoint snapshot(const nn::Provenance& provenance, bool with_optimizer) const;
};

class NumericFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainHooks {
  // Replaces the validation pass (epoch -> loss). Used for testing.
  std::function<double(std::int64_t)> validation_override;
  // Receives one formatted line per epoch.
  std::ostream* log = nullptr;
  // Where the diagnostic checkpoint goes when the loss turns non-finite.
  std::optional<std::filesystem::path> diagnostic_path;
  std::int64_t fold = -1;
  std::optional<nn::ModelCheckpoint> initial;
  // Steps per epoch cap (0 = whole training set).
  std::size_t steps_per_epoch = 0;
};

struct TrainResult {
  nn::ModelCheckpoint best;
  std::vector<EpochRecord> log;
  std::int64_t stopped_epoch = 0;
};

TrainResult train(const std::vector<FundusSample>& training, const std::vector<FundusSample>& validation,
                  const TrainConfig& config, const TrainHooks& hooks = {});

}  // namespace rrwnet::train
