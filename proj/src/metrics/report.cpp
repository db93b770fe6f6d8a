#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "json.hpp"
#include "rrwnet/metrics.hpp"
#include "rrwnet/parallel.hpp"

namespace rrwnet::metrics {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::uint8_t> labels_of(const FloatImage& gt, std::size_t channel) {
  const auto plane = gt.plane(channel);
  std::vector<std::uint8_t> out(plane.size());
  for (std::size_t i = 0; i < plane.size(); ++i) out[i] = plane[i] > 0.5f ? 1 : 0;
  return out;
}

template <typename F>
double or_nan(F&& f) {
  try {
    return f();
  } catch (const MetricError&) {
    return kNaN;
  }
}

Rates rates(const Confusion& c) { return {c.sensitivity(), c.specificity(), c.accuracy()}; }

}  // namespace

ImageMetrics evaluate_image(const Prediction& pred, const data::FundusSample& s, const EvalConfig& config) {
  const std::size_t h = s.roi.height, w = s.roi.width;
  if (pred.maps.channels != 3 || !pred.maps.same_size(h, w)) {
    throw MetricError(s.identifier + ": prediction is " + std::to_string(pred.maps.channels) + "x" +
                      std::to_string(pred.maps.height) + "x" + std::to_string(pred.maps.width) +
                      ", ground truth is 3x" + std::to_string(h) + "x" + std::to_string(w));
  }
  ImageMetrics m;
  m.identifier = s.identifier;
  const auto av_mask = EvalMask::artery_vein(s);
  const auto bv_mask = EvalMask::vessel(s);
  const auto ga = labels_of(s.gt, 0), gv = labels_of(s.gt, 1), gbv = labels_of(s.gt, 2);
  const auto pa = pred.maps.plane(0), pv = pred.maps.plane(1), pbv = pred.maps.plane(2);

  m.auroc.artery = or_nan([&] { return roc_auc(pa, ga, av_mask).area; });
  m.auroc.vein = or_nan([&] { return roc_auc(pv, gv, av_mask).area; });
  m.auroc.vessel = or_nan([&] { return roc_auc(pbv, gbv, bv_mask).area; });
  m.aupr.artery = or_nan([&] { return pr_auc(pa, ga, av_mask).area; });
  m.aupr.vein = or_nan([&] { return pr_auc(pv, gv, av_mask).area; });
  m.aupr.vessel = or_nan([&] { return pr_auc(pbv, gbv, bv_mask).area; });

  auto av = [&](Protocol p) -> Rates {
    try {
      return rates(av_classification(pa, pv, ga, gv, pbv, av_mask, p, config.threshold));
    } catch (const MetricError&) {
      return {kNaN, kNaN, kNaN};
    }
  };
  m.av_intersection = av(Protocol::intersection);
  m.av_all_gt = av(Protocol::all_gt);
  m.bv = rates(bv_classification(pbv, gbv, bv_mask, config.threshold));

  auto topo = [&](std::size_t ch) -> TopoPair {
    Mask gt(1, h, w), pr(1, h, w);
    const auto g = s.gt.plane(ch), p = pred.maps.plane(ch);
    for (std::size_t i = 0; i < g.size(); ++i) {
      gt.data[i] = g[i] > 0.5f;
      pr.data[i] = s.roi.data[i] && p[i] >= config.topo.threshold;
    }
    try {
      const auto r = topo_cor_inf(gt, pr, config.topo, topo_stream(config.topo.seed, s.identifier, ch));
      return {r.cor, r.inf};
    } catch (const MetricError&) {
      return {kNaN, kNaN};
    }
  };
  m.topo_artery = topo(0);
  m.topo_vein = topo(1);
  return m;
}

std::vector<std::pair<std::string, double>> flatten(const ImageMetrics& m) {
  return {
      {"auroc_artery", m.auroc.artery},
      {"auroc_vein", m.auroc.vein},
      {"auroc_vessel", m.auroc.vessel},
      {"aupr_artery", m.aupr.artery},
      {"aupr_vein", m.aupr.vein},
      {"aupr_vessel", m.aupr.vessel},
      {"av_intersection_sensitivity", m.av_intersection.sensitivity},
      {"av_intersection_specificity", m.av_intersection.specificity},
      {"av_intersection_accuracy", m.av_intersection.accuracy},
      {"av_all_gt_sensitivity", m.av_all_gt.sensitivity},
      {"av_all_gt_specificity", m.av_all_gt.specificity},
      {"av_all_gt_accuracy", m.av_all_gt.accuracy},
      {"bv_sensitivity", m.bv.sensitivity},
      {"bv_specificity", m.bv.specificity},
      {"bv_accuracy", m.bv.accuracy},
      {"cor_artery", m.topo_artery.cor},
      {"inf_artery", m.topo_artery.inf},
      {"cor_vein", m.topo_vein.cor},
      {"inf_vein", m.topo_vein.inf},
  };
}

namespace {

ImageMetrics mean_of(const std::vector<ImageMetrics>& images) {
  ImageMetrics out;
  out.identifier = "mean";
  std::vector<double*> fields = {
      &out.auroc.artery,         &out.auroc.vein,           &out.auroc.vessel,          &out.aupr.artery,
      &out.aupr.vein,            &out.aupr.vessel,          &out.av_intersection.sensitivity,
      &out.av_intersection.specificity, &out.av_intersection.accuracy, &out.av_all_gt.sensitivity,
      &out.av_all_gt.specificity, &out.av_all_gt.accuracy, &out.bv.sensitivity,        &out.bv.specificity,
      &out.bv.accuracy,          &out.topo_artery.cor,      &out.topo_artery.inf,       &out.topo_vein.cor,
      &out.topo_vein.inf};
  std::vector<double> sum(fields.size(), 0.0);
  std::vector<std::size_t> count(fields.size(), 0);
  for (const auto& m : images) {
    const auto flat = flatten(m);
    for (std::size_t k = 0; k < flat.size(); ++k) {
      if (std::isnan(flat[k].second)) continue;
      sum[k] += flat[k].second;
      ++count[k];
    }
  }
  for (std::size_t k = 0; k < fields.size(); ++k) *fields[k] = count[k] ? sum[k] / static_cast<double>(count[k]) : kNaN;
  return out;
}

}  // namespace

MetricReport evaluate(const std::vector<Prediction>& predictions, const std::vector<data::FundusSample>& samples,
                      const EvalConfig& config) {
  config.topo.validate();
  std::map<std::string, const Prediction*> by_id;
  std::vector<std::string> problems;
  for (const auto& p : predictions) {
    if (!by_id.emplace(p.identifier, &p).second) problems.push_back("duplicate prediction " + p.identifier);
  }
  std::vector<const Prediction*> matched(samples.size(), nullptr);
  std::map<std::string, bool> used;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto it = by_id.find(samples[i].identifier);
    if (it == by_id.end()) {
      problems.push_back("missing prediction for " + samples[i].identifier);
    } else {
      matched[i] = it->second;
      used[it->first] = true;
    }
  }
  for (const auto& [id, _] : by_id) {
    if (!used.count(id)) problems.push_back("prediction without ground truth: " + id);
  }
  if (samples.empty()) problems.push_back("no samples to evaluate");
  if (!problems.empty()) {
    std::string msg = "evaluate: " + std::to_string(problems.size()) + " identifier problem(s):";
    for (const auto& p : problems) msg += "\n  " + p;
    throw MetricError(msg);
  }

  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return samples[a].identifier < samples[b].identifier; });

  MetricReport report;
  report.topo = config.topo;
  report.images.resize(samples.size());
  std::vector<std::string> errors(samples.size());
  parallel_for(samples.size(), [&](std::size_t k) {
    const std::size_t i = order[k];
    try {
      report.images[k] = evaluate_image(*matched[i], samples[i], config);
    } catch (const std::exception& e) {
      errors[k] = e.what();
    }
  });
  for (const auto& e : errors) {
    if (!e.empty()) throw MetricError(e);
  }
  report.mean = mean_of(report.images);

  if (config.keep_curves) {
    for (std::size_t i : order) {
      const auto& s = samples[i];
      const auto& p = *matched[i];
      const auto av_mask = EvalMask::artery_vein(s);
      const auto bv_mask = EvalMask::vessel(s);
      const char* names[3] = {"artery", "vein", "vessel"};
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const auto labels = labels_of(s.gt, ch);
        const auto& mask = ch == 2 ? bv_mask : av_mask;
        StructureCurves c{s.identifier, names[ch], {}, {}};
        try {
          c.roc = roc_auc(p.maps.plane(ch), labels, mask);
          c.pr = pr_auc(p.maps.plane(ch), labels, mask);
        } catch (const MetricError&) {
          continue;
        }
        report.curves.push_back(std::move(c));
      }
    }
  }
  return report;
}

namespace {

nlohmann::json to_json(const ImageMetrics& m) {
  auto num = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
  auto avb = [&](const AvbValues& v) {
    return nlohmann::json{{"artery", num(v.artery)}, {"vein", num(v.vein)}, {"vessel", num(v.vessel)}};
  };
  auto rates = [&](const Rates& r) {
    return nlohmann::json{
        {"sensitivity", num(r.sensitivity)}, {"specificity", num(r.specificity)}, {"accuracy", num(r.accuracy)}};
  };
  auto topo = [&](const TopoPair& t) { return nlohmann::json{{"cor", num(t.cor)}, {"inf", num(t.inf)}}; };
  return {
      {"identifier", m.identifier},
      {"auroc", avb(m.auroc)},
      {"aupr", avb(m.aupr)},
      {"av", {{"intersection", rates(m.av_intersection)}, {"all_gt", rates(m.av_all_gt)}}},
      {"bv", rates(m.bv)},
      {"topology", {{"artery", topo(m.topo_artery)}, {"vein", topo(m.topo_vein)}}},
  };
}

std::string fmt(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

}  // namespace

std::string report_json(const MetricReport& r) {
  nlohmann::json images = nlohmann::json::array();
  for (const auto& m : r.images) images.push_back(to_json(m));
  nlohmann::json doc{
      {"images", images},
      {"mean", to_json(r.mean)},
      {"topology_config",
       {{"n_paths", r.topo.n_paths},
        {"tolerance", r.topo.tolerance},
        {"threshold", r.topo.threshold},
        {"seed", r.topo.seed},
        {"snap_radius", r.topo.snap_radius}}},
  };
  return doc.dump(2) + "\n";
}

std::string report_csv(const MetricReport& r) {
  std::ostringstream os;
  os << "identifier";
  for (const auto& [name, _] : flatten(r.mean)) os << ',' << name;
  os << '\n';
  auto row = [&](const ImageMetrics& m) {
    os << m.identifier;
    for (const auto& [_, v] : flatten(m)) os << ',' << fmt(v);
    os << '\n';
  };
  for (const auto& m : r.images) row(m);
  row(r.mean);
  return os.str();
}

std::string curves_csv(const MetricReport& r) {
  std::ostringstream os;
  os.precision(10);
  os << "identifier,structure,curve,threshold,x,y\n";
  for (const auto& c : r.curves) {
    for (const auto& p : c.roc.curve) {
      os << c.identifier << ',' << c.structure << ",roc," << p.threshold << ',' << p.x << ',' << p.y << '\n';
    }
    for (const auto& p : c.pr.curve) {
      os << c.identifier << ',' << c.structure << ",pr," << p.threshold << ',' << p.x << ',' << p.y << '\n';
    }
  }
  return os.str();
}

}  // namespace rrwnet::metrics
