#pragma once

// Fundus dataset ingestion: the RGB ground-truth codec, preprocessing,
// working-resolution rules, U-Net padding and dataset layouts.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rrwnet/raster.hpp"

namespace rrwnet::data {

// ---- PNG I/O ---------------------------------------------------------------

// Any PNG, converted to 8-bit RGB (gray is replicated, alpha dropped).
ByteImage read_png_rgb(const std::filesystem::path& path);
// Any PNG, converted to 8-bit gray.
ByteImage read_png_gray8(const std::filesystem::path& path);
// Any PNG as 16-bit gray. 8-bit sources are widened by 257.
Raster<std::uint16_t> read_png_gray16(const std::filesystem::path& path);

void write_png_rgb8(const std::filesystem::path& path, const ByteImage& rgb);
void write_png_gray8(const std::filesystem::path& path, const ByteImage& gray);
void write_png_gray16(const std::filesystem::path& path, const Raster<std::uint16_t>& gray);

// Probability in [0,1] <-> 16-bit code.
Raster<std::uint16_t> quantize16(const FloatImage& prob);
FloatImage dequantize16(const Raster<std::uint16_t>& codes);

// ---- Ground-truth colour codec ---------------------------------------------

inline constexpr std::uint8_t kBinarizeLevel = 128;

struct GtMaps {
  Mask artery;
  Mask vein;
  Mask vessel;
  Mask crossing;
  Mask uncertain;
};

// R -> artery, G -> vein, B (or either of them) -> vessel. White pixels are
// crossings; pure blue pixels are uncertain vessels.
GtMaps decode_gt_rgb(const ByteImage& rgb);

// R = 255*A, G = 255*V, B = 255*BV, rounding to nearest. Accepts binary or
// probability maps.
ByteImage encode_gt_rgb(const FloatImage& artery, const FloatImage& vein, const FloatImage& vessel);

// ---- Preprocessing ---------------------------------------------------------

struct PreprocessConfig {
  double low_percentile = 1.0;
  double high_percentile = 99.0;
  // Background blur sigma as a fraction of image width.
  double sigma_fraction = 1.0 / 30.0;
  double std_floor = 0.05;
  double std_scale = 4.0;
};

// Global per-channel percentile stretch, then local background subtraction
// and contrast normalization. Output in [-1,1], zero outside the ROI.
FloatImage preprocess(const ByteImage& rgb, const Mask& roi, const PreprocessConfig& config = {});

// Max-channel intensity above `threshold`, largest 8-connected component,
// holes filled.
Mask synthesize_roi(const ByteImage& rgb, std::uint8_t threshold = 15);

// ---- Resolution handling ---------------------------------------------------

enum class DatasetKind { rite, les_av, hrf, custom };

DatasetKind parse_dataset_kind(const std::string& name);
std::string dataset_kind_name(DatasetKind kind);

struct ResizeSpec {
  std::size_t original_height = 0;
  std::size_t original_width = 0;
  std::size_t working_height = 0;
  std::size_t working_width = 0;

  bool identity() const {
    return original_height == working_height && original_width == working_width;
  }
};

// Working width for a dataset kind (0 = native resolution).
std::size_t working_width(DatasetKind kind);
ResizeSpec resize_policy(DatasetKind kind, std::size_t height, std::size_t width);

// Bilinear with half-pixel centres.
FloatImage resize_bilinear(const FloatImage& image, std::size_t height, std::size_t width);
Mask resize_nearest(const Mask& mask, std::size_t height, std::size_t width);

struct PadSpec {
  std::size_t original_height = 0;
  std::size_t original_width = 0;
  std::size_t padded_height = 0;
  std::size_t padded_width = 0;
};

PadSpec pad_spec(std::size_t height, std::size_t width, std::size_t factor);
// Reflect-pads right/bottom to the next multiple of `factor` (a power of two).
template <typename T>
Raster<T> pad_to_multiple(const Raster<T>& image, std::size_t factor, PadSpec* spec = nullptr);
// Zero-pads instead (used for masks, so padding never enters a loss).
Mask pad_mask(const Mask& mask, const PadSpec& spec);
template <typename T>
Raster<T> crop(const Raster<T>& image, const PadSpec& spec);

// ---- Samples and layouts ---------------------------------------------------

struct FundusSample {
  std::string identifier;
  FloatImage image;  // 3 x H x W, preprocessed
  FloatImage gt;     // 3 x H x W, binary A, V, BV
  Mask roi;
  Mask crossing;
  Mask uncertain;
  ResizeSpec resize;  // original -> working resolution
};

// Throws DataError naming the first violated invariant.
void validate_sample(const FundusSample& sample);

FloatImage gt_to_float(const GtMaps& gt);

struct DatasetLayout {
  std::filesystem::path root;
  DatasetKind kind = DatasetKind::custom;
  std::string images_dir = "images";
  std::string gt_dir = "av";
  std::string mask_dir = "mask";
  std::string train_dir = "train";
  std::string test_dir = "test";

  // Defaults for a kind (directory names per the documented conventions).
  static DatasetLayout for_kind(DatasetKind kind, std::filesystem::path root);
};

// `key = value` lines: kind, images, gt, masks, train, test. Relative to the
// manifest's directory unless `root` is given.
DatasetLayout parse_layout_manifest(const std::filesystem::path& path);

// Locates the layout for a data directory: <dir>/layout.cfg when present,
// otherwise the custom conventions.
DatasetLayout resolve_layout(const std::filesystem::path& data_dir,
                             const std::optional<std::filesystem::path>& manifest = std::nullopt);

struct LoadOptions {
  bool apply_resize = true;
  bool apply_preprocess = true;
  PreprocessConfig preprocess;
};

struct LoadedDataset {
  std::vector<FundusSample> train;
  std::vector<FundusSample> test;
};

struct SampleFiles {
  std::string identifier;
  std::filesystem::path image;
  std::filesystem::path gt;
  std::optional<std::filesystem::path> mask;
  bool is_test = false;
};

// Enumerates files per the layout, sorted by identifier.
std::vector<SampleFiles> list_samples(const DatasetLayout& layout);

FundusSample load_sample(const SampleFiles& files, DatasetKind kind, const LoadOptions& options);

// Every problem is collected first and reported together.
LoadedDataset load_dataset(const DatasetLayout& layout, const LoadOptions& options = {});

}  // namespace rrwnet::data
