#pragma once

// Inference, standalone refinement, prediction files and cross-validated
// training: the workflow layer shared by the command-line tool and the
// Python module.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "rrwnet/data.hpp"
#include "rrwnet/metrics.hpp"
#include "rrwnet/networks.hpp"
#include "rrwnet/training.hpp"

namespace rrwnet::pipeline {

// All stages for a preprocessed image at working resolution. Padding is
// added and cropped away internally.
std::vector<FloatImage> predict_stages(const nn::ModelCheckpoint& model, const FloatImage& image);

// Final-stage maps for a loaded sample, resized back to the original
// resolution.
FloatImage predict(const nn::ModelCheckpoint& model, const data::FundusSample& sample);

// Applies the refiner K times to [A, V] (or [A, V, BV] for rrwnet_all).
// Channels the refiner does not see pass through untouched.
FloatImage refine(const nn::ModelCheckpoint& model, const FloatImage& maps, std::size_t K);

// <dir>/<id>_artery.png, _vein.png, _vessel.png as 16-bit gray plus
// <dir>/<id>_rgb.png as an 8-bit composite.
inline const std::vector<std::string>& map_suffixes() {
  static const std::vector<std::string> s = {"artery", "vein", "vessel"};
  return s;
}
std::filesystem::path map_path(const std::filesystem::path& dir, const std::string& id, std::size_t channel);
void write_prediction(const std::filesystem::path& dir, const std::string& id, const FloatImage& maps);

struct MapSet {
  std::string identifier;
  // 16-bit codes per channel as read (8-bit files are widened).
  std::vector<Raster<std::uint16_t>> codes;
  bool has_vessel = false;

  FloatImage maps() const;
};

// Every `<id>_artery.png` under dir with a matching `_vein.png`; `_vessel`
// is optional unless required. Problems are collected per file.
std::vector<MapSet> read_map_sets(const std::filesystem::path& dir, bool require_vessel);

// Accuracy (%) of the A-vs-V decision on GT artery-only / vein-only pixels
// inside the ROI.
double av_accuracy(const FloatImage& maps, const data::FundusSample& sample);

struct FoldRun {
  std::size_t fold = 0;
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  train::TrainResult result;
};

struct CrossValidationOptions {
  // fold_<k>.ckpt are written here when set.
  std::optional<std::filesystem::path> checkpoint_dir;
  // train_fold_<k>.csv are written here when set.
  std::optional<std::filesystem::path> log_dir;
  std::ostream* progress = nullptr;
};

// fold_count >= 2: k-fold split, each fold validated on its held-out block.
// fold_count == 1: a single 80/20 holdout.
std::vector<FoldRun> train_cross_validated(const std::vector<data::FundusSample>& samples,
                                           const train::TrainConfig& config,
                                           const CrossValidationOptions& options = {});

std::size_t best_fold(const std::vector<FoldRun>& runs);

// Each fold's best model predicts its own validation images; the union is
// evaluated as one report (working resolution).
metrics::MetricReport evaluate_folds(const std::vector<FoldRun>& runs, const std::vector<data::FundusSample>& samples,
                                     const metrics::EvalConfig& config);

}  // namespace rrwnet::pipeline
