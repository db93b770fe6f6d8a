#pragma once

// Evaluation: ROC/PR areas, one-vs-all vessel and one-vs-one A/V
// classification, COR/INF path topology and the paired significance test.
// Percentages are reported on a 0-100 scale; undefined values are NaN.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rrwnet/data.hpp"

namespace rrwnet::metrics {

class MetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Pixels that take part in an evaluation. An empty `included` means every
// pixel.
struct EvalMask {
  std::vector<std::uint8_t> included;

  // ROI minus crossings and uncertain vessels.
  static EvalMask artery_vein(const data::FundusSample& sample);
  static EvalMask vessel(const data::FundusSample& sample);
  bool contains(std::size_t i) const { return included.empty() || included[i]; }
};

struct CurvePoint {
  double threshold;
  double x;  // FPR for ROC, recall for PR
  double y;  // TPR for ROC, precision for PR
};

struct CurveResult {
  std::vector<CurvePoint> curve;
  double area = 0.0;
};

// One point per distinct score (descending), starting at (0,0). Trapezoidal
// area, so tied scores count half a win.
CurveResult roc_auc(std::span<const float> scores, std::span<const std::uint8_t> labels, const EvalMask& mask = {});

// Step-wise area: sum over distinct thresholds of (recall gain) * precision.
CurveResult pr_auc(std::span<const float> scores, std::span<const std::uint8_t> labels, const EvalMask& mask = {});

inline constexpr double kDefaultThreshold = 0.5;

// value >= threshold -> 1
Mask binarize(const FloatImage& map, double threshold = kDefaultThreshold);

struct Confusion {
  std::uint64_t tp = 0, fn = 0, tn = 0, fp = 0;

  double sensitivity() const;
  double specificity() const;
  double accuracy() const;
  std::uint64_t total() const { return tp + fn + tn + fp; }
};

enum class Protocol { intersection, all_gt };
std::string protocol_name(Protocol p);

// Artery is the positive class. The A/V decision is pred_A >= pred_V. Only
// GT vessel pixels inside the mask are evaluated; the intersection protocol
// additionally requires pred_BV >= threshold.
Confusion av_classification(std::span<const float> pred_artery, std::span<const float> pred_vein,
                            std::span<const std::uint8_t> gt_artery, std::span<const std::uint8_t> gt_vein,
                            std::span<const float> pred_vessel, const EvalMask& mask, Protocol protocol,
                            double threshold = kDefaultThreshold);

// Binarized vessel map vs GT over the ROI; vessel is the positive class.
Confusion bv_classification(std::span<const float> pred_vessel, std::span<const std::uint8_t> gt_vessel,
                            const EvalMask& roi, double threshold = kDefaultThreshold);

// ---- Topology --------------------------------------------------------------

// Zhang-Suen thinning.
Mask skeletonize(const Mask& binary);

struct TopoConfig {
  std::size_t n_paths = 1000;
  double tolerance = 0.10;
  double threshold = kDefaultThreshold;
  std::uint64_t seed = 0;
  int snap_radius = 3;

  void validate() const;
};

// 1000 for RITE and custom data, 100 for HRF and LES-AV.
std::size_t default_paths(data::DatasetKind kind);

struct TopoResult {
  double cor = 0.0;  // percent of sampled paths
  double inf = 0.0;
  std::size_t paths = 0;
};

// Ordered pairs (a != b) of GT skeleton pixels in the same 8-connected
// skeleton component are drawn uniformly. The reference length is the
// shortest 8-connected path inside the GT mask; the predicted length is the
// shortest path inside the predicted mask between the endpoints snapped to
// the nearest predicted pixel within snap_radius. Missing snap or path means
// infeasible; otherwise correct when |len_pred - len_gt| / len_gt < tolerance.
TopoResult topo_cor_inf(const Mask& gt, const Mask& pred, const TopoConfig& config, std::uint64_t stream);

// Seed for one (image, class) sampling stream.
std::uint64_t topo_stream(std::uint64_t seed, const std::string& identifier, std::size_t class_index);

// Shortest 8-connected path length (in steps) between two pixels inside a
// mask, or -1.
std::int64_t shortest_path(const Mask& mask, std::size_t from, std::size_t to);

// ---- Significance ----------------------------------------------------------

// One-tailed test of a > b. Zero differences are dropped; exact null
// distribution for up to 25 nonzero differences, tie- and
// continuity-corrected normal approximation above.
double wilcoxon_signed_rank_one_tailed(std::span<const double> a, std::span<const double> b);

// ---- Reports ---------------------------------------------------------------

struct AvbValues {
  double artery = 0, vein = 0, vessel = 0;
};

struct Rates {
  double sensitivity = 0, specificity = 0, accuracy = 0;
};

struct TopoPair {
  double cor = 0, inf = 0;
};

struct ImageMetrics {
  std::string identifier;
  AvbValues auroc;
  AvbValues aupr;
  Rates av_intersection;
  Rates av_all_gt;
  Rates bv;
  TopoPair topo_artery;
  TopoPair topo_vein;
};

struct StructureCurves {
  std::string identifier;
  std::string structure;
  CurveResult roc;
  CurveResult pr;
};

struct MetricReport {
  std::vector<ImageMetrics> images;
  ImageMetrics mean;  // identifier "mean"; NaN entries are skipped per field
  std::vector<StructureCurves> curves;
  TopoConfig topo;
};

struct Prediction {
  std::string identifier;
  FloatImage maps;  // 3 x H x W probabilities (A, V, BV)
};

struct EvalConfig {
  TopoConfig topo;
  double threshold = kDefaultThreshold;
  bool keep_curves = false;
};

// Predictions are matched to samples by identifier; any mismatch aborts with
// every offending identifier listed.
MetricReport evaluate(const std::vector<Prediction>& predictions, const std::vector<data::FundusSample>& samples,
                      const EvalConfig& config);

ImageMetrics evaluate_image(const Prediction& prediction, const data::FundusSample& sample,
                            const EvalConfig& config);

std::string report_json(const MetricReport& report);
std::string report_csv(const MetricReport& report);
std::string curves_csv(const MetricReport& report);

// Flat list of (name, value) pairs in the order used by the CSV columns.
std::vector<std::pair<std::string, double>> flatten(const ImageMetrics& m);

}  // namespace rrwnet::metrics
