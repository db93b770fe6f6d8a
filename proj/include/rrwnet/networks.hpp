#pragma once

// U-Net subnetworks, the recursive refinement composition, and the ablation
// variants.
//
// Every network output is a list of stages. For the default variant stage 0
// is the Base subnetwork's A/V/BV maps; stage k > 0 holds the refiner's
// k-th A/V estimate (fed only the previous stage's A/V maps) concatenated
// with the stage-0 BV map.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rrwnet/adam.hpp"
#include "rrwnet/checkpoint.hpp"
#include "rrwnet/tensor.hpp"

namespace rrwnet::nn {

using ad::Shape;
using ad::Tensor;

inline constexpr std::size_t kArtery = 0;
inline constexpr std::size_t kVein = 1;
inline constexpr std::size_t kVessel = 2;

struct UNetConfig {
  std::size_t in_channels = 3;
  std::size_t out_channels = 3;
  std::size_t base_channels = 64;
  std::size_t depth = 5;

  void validate() const;
  // Feature channels at encoder level `level` (0-based): N * 2^level.
  std::size_t level_channels(std::size_t level) const { return base_channels << level; }
  // Spatial dims must be multiples of this.
  std::size_t size_multiple() const { return std::size_t{1} << (depth - 1); }

  bool operator==(const UNetConfig&) const = default;
};

enum class Variant { rrwnet, rrwnet_all, unet_only, wnet, rrunet };

Variant parse_variant(const std::string& name);
std::string variant_name(Variant v);
const std::vector<Variant>& all_variants();

struct RRWNetConfig {
  UNetConfig base;
  UNetConfig refiner;
  std::size_t K = 6;
  Variant variant = Variant::rrwnet;

  // Builds a consistent config for a variant (wnet forces K = 1, unet_only
  // K = 0, rrunet widens the base input by the 3 map channels).
  static RRWNetConfig make(Variant variant, std::size_t base_channels = 64,
                           std::size_t depth = 5, std::size_t K = 6,
                           std::size_t image_channels = 3);

  void validate() const;
  bool has_refiner() const;
  std::size_t image_channels() const;
  std::size_t stage_count() const { return K + 1; }
  std::size_t size_multiple() const { return base.size_multiple(); }

  bool operator==(const RRWNetConfig&) const = default;
};

struct ConvSpec {
  std::string name;
  std::size_t in_channels;
  std::size_t out_channels;
  std::size_t kernel;
};

// The U-Net's convolutions in forward order. Each contributes
// `<name>.weight` [out,in,k,k] and `<name>.bias` [out].
std::vector<ConvSpec> unet_layers(const UNetConfig& config);
std::size_t unet_parameter_count(const UNetConfig& config);

template <typename T>
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Tensor<T> tensor;
  };

  void add(std::string name, Tensor<T> tensor);
  const Tensor<T>& at(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::size_t element_count() const;

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::vector<Tensor<T>> tensors() const;
  void zero_grad();

 private:
  std::vector<Entry> entries_;
};

// He/fan-in normal kernels, zero biases.
template <typename T>
void init_unet(ParameterSet<T>& params, const UNetConfig& config, const std::string& prefix,
               std::mt19937_64& rng);

template <typename T>
ParameterSet<T> init_parameters(const RRWNetConfig& config, std::uint64_t seed);

// Sigmoid maps [out,H,W]. Throws ShapeError naming the required padding when
// H or W is not a multiple of 2^(depth-1).
template <typename T>
Tensor<T> unet_forward(const Tensor<T>& image, const ParameterSet<T>& params,
                       const UNetConfig& config, const std::string& prefix);

template <typename T>
Tensor<T> base_forward(const Tensor<T>& image, const ParameterSet<T>& params,
                       const RRWNetConfig& config);

// The refiner sees map channels only.
template <typename T>
Tensor<T> rr_forward(const Tensor<T>& maps, const ParameterSet<T>& params,
                     const RRWNetConfig& config);

// Stages [y_0 ... y_K] of the default (and wnet) composition.
template <typename T>
std::vector<Tensor<T>> rrwnet_forward(const Tensor<T>& image, const ParameterSet<T>& params,
                                      const RRWNetConfig& config);

// Stages for any variant.
template <typename T>
std::vector<Tensor<T>> variant_forward(const Tensor<T>& image, const ParameterSet<T>& params,
                                       const RRWNetConfig& config);

template <typename To, typename From>
ParameterSet<To> cast_parameters(const ParameterSet<From>& params, bool requires_grad = true);

struct Provenance {
  std::uint64_t seed = 0;
  std::int64_t epoch = 0;
  std::int64_t fold = -1;
  double val_loss = 0.0;
};

struct ModelCheckpoint {
  RRWNetConfig config;
  ParameterSet<float> params;
  Provenance provenance;
  std::optional<ad::AdamState<float>> optimizer;
};

ad::CheckpointFile to_checkpoint_file(const ModelCheckpoint& model);
ModelCheckpoint from_checkpoint_file(const ad::CheckpointFile& file);
void save_model(const std::filesystem::path& path, const ModelCheckpoint& model);
ModelCheckpoint load_model(const std::filesystem::path& path);

}  // namespace rrwnet::nn
