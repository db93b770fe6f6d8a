#include <algorithm>
#include <cmath>
#include <numeric>

#include "rrwnet/metrics.hpp"

namespace rrwnet::metrics {

EvalMask EvalMask::artery_vein(const data::FundusSample& s) {
  EvalMask m;
  m.included.resize(s.roi.data.size());
  for (std::size_t i = 0; i < m.included.size(); ++i) {
    m.included[i] = s.roi.data[i] && !s.crossing.data[i] && !s.uncertain.data[i];
  }
  return m;
}

EvalMask EvalMask::vessel(const data::FundusSample& s) {
  EvalMask m;
  m.included.assign(s.roi.data.begin(), s.roi.data.end());
  for (auto& v : m.included) v = v ? 1 : 0;
  return m;
}

namespace {

struct Scored {
  float score;
  bool positive;
};

std::vector<Scored> collect(std::span<const float> scores, std::span<const std::uint8_t> labels, const EvalMask& mask,
                            std::uint64_t& pos, std::uint64_t& neg, const char* who) {
  if (scores.size() != labels.size() || (!mask.included.empty() && mask.included.size() != scores.size())) {
    throw MetricError(std::string(who) + ": scores, labels and mask differ in length");
  }
  std::vector<Scored> v;
  v.reserve(scores.size());
  pos = neg = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!mask.contains(i)) continue;
    const bool p = labels[i] != 0;
    v.push_back({scores[i], p});
    (p ? pos : neg) += 1;
  }
  std::sort(v.begin(), v.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });
  return v;
}

// Calls f(threshold, tp, fp) after each group of tied scores.
template <typename F>
void sweep(const std::vector<Scored>& v, F&& f) {
  std::uint64_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < v.size();) {
    const float t = v[i].score;
    for (; i < v.size() && v[i].score == t; ++i) (v[i].positive ? tp : fp) += 1;
    f(static_cast<double>(t), tp, fp);
  }
}

}  // namespace

CurveResult roc_auc(std::span<const float> scores, std::span<const std::uint8_t> labels, const EvalMask& mask) {
  std::uint64_t pos, neg;
  const auto v = collect(scores, labels, mask, pos, neg, "roc_auc");
  if (pos == 0) throw MetricError("roc_auc: no positive pixels inside the mask");
  if (neg == 0) throw MetricError("roc_auc: no negative pixels inside the mask");
  CurveResult r;
  r.curve.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  // Twice the area in units of (1/pos)(1/neg), kept integral.
  long double twice = 0;
  std::uint64_t prev_tp = 0, prev_fp = 0;
  sweep(v, [&](double t, std::uint64_t tp, std::uint64_t fp) {
    twice += static_cast<long double>(fp - prev_fp) * static_cast<long double>(tp + prev_tp);
    prev_tp = tp;
    prev_fp = fp;
    r.curve.push_back({t, static_cast<double>(fp) / static_cast<double>(neg),
                       static_cast<double>(tp) / static_cast<double>(pos)});
  });
  r.area = static_cast<double>(twice / (2.0L * static_cast<long double>(pos) * static_cast<long double>(neg)));
  return r;
}

CurveResult pr_auc(std::span<const float> scores, std::span<const std::uint8_t> labels, const EvalMask& mask) {
  std::uint64_t pos, neg;
  const auto v = collect(scores, labels, mask, pos, neg, "pr_auc");
  if (pos == 0) throw MetricError("pr_auc: no positive pixels inside the mask");
  CurveResult r;
  std::uint64_t prev_tp = 0;
  const double p = static_cast<double>(pos);
  sweep(v, [&](double t, std::uint64_t tp, std::uint64_t fp) {
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    r.area += static_cast<double>(tp - prev_tp) / p * precision;
    prev_tp = tp;
    r.curve.push_back({t, static_cast<double>(tp) / p, precision});
  });
  return r;
}

Mask binarize(const FloatImage& map, double threshold) {
  Mask out(map.channels, map.height, map.width);
  for (std::size_t i = 0; i < map.data.size(); ++i) out.data[i] = map.data[i] >= threshold ? 1 : 0;
  return out;
}

namespace {
double percent(std::uint64_t num, std::uint64_t den) {
  return den ? 100.0 * static_cast<double>(num) / static_cast<double>(den) : std::nan("");
}
}  // namespace

double Confusion::sensitivity() const { return percent(tp, tp + fn); }
double Confusion::specificity() const { return percent(tn, tn + fp); }
double Confusion::accuracy() const { return percent(tp + tn, total()); }

std::string protocol_name(Protocol p) { return p == Protocol::intersection ? "intersection" : "all_gt"; }

Confusion av_classification(std::span<const float> pa, std::span<const float> pv, std::span<const std::uint8_t> ga,
                            std::span<const std::uint8_t> gv, std::span<const float> pbv, const EvalMask& mask,
                            Protocol protocol, double threshold) {
  const std::size_t n = pa.size();
  if (pv.size() != n || ga.size() != n || gv.size() != n || pbv.size() != n ||
      (!mask.included.empty() && mask.included.size() != n)) {
    throw MetricError("av_classification: maps differ in size");
  }
  Confusion c;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask.contains(i)) continue;
    const bool a = ga[i] != 0, v = gv[i] != 0;
    if (a == v) continue;  // background, or a crossing the mask let through
    if (protocol == Protocol::intersection && !(pbv[i] >= threshold)) continue;
    const bool says_artery = pa[i] >= pv[i];
    if (a) {
      (says_artery ? c.tp : c.fn) += 1;
    } else {
      (says_artery ? c.fp : c.tn) += 1;
    }
  }
  if (c.total() == 0) {
    throw MetricError("av_classification: no pixels to evaluate under the " + protocol_name(protocol) + " protocol");
  }
  return c;
}

Confusion bv_classification(std::span<const float> pbv, std::span<const std::uint8_t> gbv, const EvalMask& roi,
                            double threshold) {
  if (pbv.size() != gbv.size() || (!roi.included.empty() && roi.included.size() != pbv.size())) {
    throw MetricError("bv_classification: maps differ in size");
  }
  Confusion c;
  for (std::size_t i = 0; i < pbv.size(); ++i) {
    if (!roi.contains(i)) continue;
    const bool p = pbv[i] >= threshold, g = gbv[i] != 0;
    if (g) {
      (p ? c.tp : c.fn) += 1;
    } else {
      (p ? c.fp : c.tn) += 1;
    }
  }
  return c;
}

}  // namespace rrwnet::metrics
