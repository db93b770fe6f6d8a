#include "rrwnet/cli.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "rrwnet/metrics.hpp"
#include "rrwnet/pipeline.hpp"
#include "rrwnet/synth.hpp"
#include "rrwnet/training.hpp"

namespace rrwnet::cli {

namespace fs = std::filesystem;

// ---- manifest and lock -----------------------------------------------------

std::string format_manifest(const RunManifest& m) {
  std::ostringstream os;
  os << "command = " << m.command << '\n'
     << "config = " << m.config_path << '\n'
     << "seed = " << m.seed << '\n'
     << "layout = " << m.layout << '\n';
  for (const auto& c : m.checkpoints) os << "checkpoint = " << c << '\n';
  os << "out_dir = " << m.out_dir << '\n'
     << "timestamp = " << m.timestamp << '\n'
     << "version = " << m.version << '\n';
  return os.str();
}

void write_manifest(const fs::path& out_dir, const RunManifest& m) {
  fs::create_directories(out_dir);
  std::ofstream f(out_dir / "manifest.txt");
  f << format_manifest(m);
  if (!f) throw std::runtime_error("cannot write " + (out_dir / "manifest.txt").string());
}

OutputLock::OutputLock(const fs::path& out_dir) : path_(out_dir / ".rrwnet.lock") {
  fs::create_directories(out_dir);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    throw UsageError("output directory " + out_dir.string() + " is locked by another run (remove " +
                     path_.string() + " if that run is gone)");
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

OutputLock::~OutputLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

// ---- errors ------------------------------------------------------------------

int report_error(const std::exception& e, std::ostream& err) {
  int code = kInternal;
  const char* name = "E_INTERNAL";
  if (dynamic_cast<const UsageError*>(&e) || dynamic_cast<const train::ConfigError*>(&e) ||
      dynamic_cast<const std::invalid_argument*>(&e)) {
    code = kUsage;
    name = "E_USAGE";
  } else if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const metrics::MetricError*>(&e) ||
             dynamic_cast<const ad::CheckpointError*>(&e)) {
    code = kData;
    name = "E_DATA";
  } else if (dynamic_cast<const train::NumericFailure*>(&e)) {
    code = kNumeric;
    name = "E_NUMERIC";
  }
  err << "error code=" << name << " exit=" << code << '\n' << e.what() << '\n';
  return code;
}

int run(const Options& options, std::ostream& out, std::ostream& err) {
  try {
    execute(options, out);
    return kOk;
  } catch (const std::exception& e) {
    return report_error(e, err);
  }
}

// ---- shared helpers ----------------------------------------------------------

namespace {

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

const fs::path& need(const std::optional<fs::path>& p, const char* flag, const std::string& command) {
  if (!p) throw UsageError(command + ": " + flag + " is required");
  return *p;
}

train::TrainConfig resolve_config(const Options& o) {
  train::TrainConfig c = o.config ? train::load_train_config(*o.config) : train::TrainConfig{};
  if (o.seed) c.seed = *o.seed;
  if (o.K) c.K = *o.K;
  if (o.variant) c.variant = nn::parse_variant(*o.variant);
  if (o.folds) c.fold_count = *o.folds;
  if (o.max_epochs) c.max_epochs = *o.max_epochs;
  c.validate();
  c.network();
  return c;
}

std::vector<data::FundusSample> pick_split(data::LoadedDataset ds, const std::string& split) {
  if (split == "train") return std::move(ds.train);
  if (split == "test") return std::move(ds.test);
  auto all = std::move(ds.train);
  for (auto& s : ds.test) all.push_back(std::move(s));
  return all;
}

void check_split(const std::string& split) {
  if (split != "train" && split != "test" && split != "all") {
    throw UsageError("--split must be train, test or all, got '" + split + "'");
  }
}

std::string describe(const data::DatasetLayout& l) { return data::dataset_kind_name(l.kind) + " " + l.root.string(); }

// Ground truth at native resolution, for scoring.
std::vector<data::FundusSample> load_truth(const data::DatasetLayout& layout, const std::string& split) {
  data::LoadOptions raw;
  raw.apply_resize = false;
  raw.apply_preprocess = false;
  auto samples = pick_split(data::load_dataset(layout, raw), split);
  if (samples.empty()) throw DataError("no " + split + " samples under " + layout.root.string());
  return samples;
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream f(path);
  f << text;
  if (!f) throw std::runtime_error("cannot write " + path.string());
}

metrics::EvalConfig eval_config(const Options& o, data::DatasetKind kind) {
  metrics::EvalConfig c;
  c.threshold = o.threshold;
  c.topo.threshold = o.threshold;
  c.topo.n_paths = o.paths ? *o.paths : metrics::default_paths(kind);
  c.topo.seed = o.seed.value_or(0);
  c.keep_curves = o.curves;
  c.topo.validate();
  return c;
}

void write_report(const fs::path& dir, const std::string& stem, const metrics::MetricReport& r, bool curves) {
  write_text(dir / (stem + ".json"), metrics::report_json(r));
  write_text(dir / (stem + ".csv"), metrics::report_csv(r));
  if (curves) write_text(dir / (stem + "_curves.csv"), metrics::curves_csv(r));
}

// ---- comparison tables -----------------------------------------------------

struct TableRow {
  const char* key;
  bool percent;
};

const std::vector<TableRow>& table_rows() {
  static const std::vector<TableRow> rows = {
      {"auroc_artery", true},          {"auroc_vein", true},           {"auroc_vessel", true},
      {"aupr_artery", true},           {"aupr_vein", true},            {"aupr_vessel", true},
      {"av_all_gt_sensitivity", false}, {"av_all_gt_specificity", false}, {"av_all_gt_accuracy", false},
      {"bv_sensitivity", false},       {"bv_specificity", false},      {"bv_accuracy", false},
  };
  return rows;
}

struct Column {
  std::string name;
  // row key -> per-image values (identifier order), NaN where undefined
  std::map<std::string, std::vector<double>> values;
};

Column column_of(const std::string& name, const metrics::MetricReport& r) {
  Column c{name, {}};
  for (const auto& m : r.images) {
    for (const auto& [key, v] : metrics::flatten(m)) c.values[key].push_back(v);
  }
  for (const auto& row : table_rows()) {
    if (!row.percent) continue;
    for (auto& v : c.values[row.key]) v *= 100.0;
  }
  return c;
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
  double s = 0, n = 0;
  for (double x : v) {
    if (!std::isnan(x)) s += x, n += 1;
  }
  if (n == 0) return {std::nan(""), std::nan("")};
  const double mean = s / n;
  double ss = 0;
  for (double x : v) {
    if (!std::isnan(x)) ss += (x - mean) * (x - mean);
  }
  return {mean, n > 1 ? std::sqrt(ss / (n - 1)) : 0.0};
}

std::string num(double v) {
  if (std::isnan(v)) return "NA";
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

// Columns sorted by mean for one row, best first (ties keep column order).
std::vector<std::size_t> ranking(const std::vector<Column>& cols, const std::string& key) {
  std::vector<std::size_t> order(cols.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  auto mean_of = [&](std::size_t i) {
    const double m = mean_std(cols[i].values.at(key)).first;
    return std::isnan(m) ? -INFINITY : m;
  };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return mean_of(a) > mean_of(b); });
  return order;
}

std::string paired_p_value(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> x, y;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
    if (std::isnan(a[i]) || std::isnan(b[i])) continue;
    x.push_back(a[i]);
    y.push_back(b[i]);
  }
  try {
    return num(metrics::wilcoxon_signed_rank_one_tailed(x, y));
  } catch (const metrics::MetricError&) {
    return "NA";
  }
}

std::string comparison_table(const std::vector<Column>& cols, bool significance) {
  std::ostringstream os;
  os << "metric";
  for (const auto& c : cols) os << ',' << c.name << "_mean," << c.name << "_std";
  os << ",best";
  if (significance) os << ",second,p_value";
  os << '\n';
  for (const auto& row : table_rows()) {
    os << row.key;
    for (const auto& c : cols) {
      const auto [m, s] = mean_std(c.values.at(row.key));
      os << ',' << num(m) << ',' << num(s);
    }
    const auto order = ranking(cols, row.key);
    os << ',' << cols[order[0]].name;
    if (significance) {
      os << ',' << cols[order[1]].name << ','
         << paired_p_value(cols[order[0]].values.at(row.key), cols[order[1]].values.at(row.key));
    }
    os << '\n';
  }
  return os.str();
}

// Mean over the AUROC, AUPR and accuracy rows of a column's row means.
double selection_score(const Column& c) {
  double s = 0, n = 0;
  for (const auto& row : table_rows()) {
    const std::string key = row.key;
    if (key.rfind("auroc", 0) != 0 && key.rfind("aupr", 0) != 0 && key.find("accuracy") == std::string::npos) continue;
    const double m = mean_std(c.values.at(key)).first;
    if (!std::isnan(m)) s += m, n += 1;
  }
  return n ? s / n : std::nan("");
}

std::vector<data::FundusSample> training_samples(const data::DatasetLayout& layout) {
  auto ds = data::load_dataset(layout);
  if (ds.train.empty()) throw DataError("no training samples under " + layout.root.string());
  return std::move(ds.train);
}

// ---- commands ----------------------------------------------------------------

void cmd_train(const Options& o, RunManifest& m, std::ostream& out) {
  const auto cfg = resolve_config(o);
  const auto layout = data::resolve_layout(need(o.data, "--data", o.command), o.layout);
  const auto ckpt_dir = o.out / "checkpoints";
  m.seed = cfg.seed;
  m.layout = describe(layout);
  const std::size_t n_models = cfg.fold_count == 1 ? 1 : static_cast<std::size_t>(cfg.fold_count);
  for (std::size_t f = 0; f < n_models; ++f) m.checkpoints.push_back((ckpt_dir / ("fold_" + std::to_string(f) + ".ckpt")).string());
  m.checkpoints.push_back((ckpt_dir / "best.ckpt").string());
  OutputLock lock(o.out);
  write_manifest(o.out, m);

  const auto samples = training_samples(layout);
  write_text(o.out / "reports" / "config.cfg", train::format_train_config(cfg));
  out << "training " << nn::variant_name(cfg.variant) << " (K=" << cfg.K << ") on " << samples.size() << " images\n";
  const auto runs = pipeline::train_cross_validated(samples, cfg, {ckpt_dir, o.out / "reports", &out});
  const std::size_t best = pipeline::best_fold(runs);
  nn::save_model(ckpt_dir / "best.ckpt", runs[best].result.best);

  std::ostringstream summary;
  summary << "fold,best_epoch,best_val_loss,stopped_epoch\n";
  for (const auto& r : runs) {
    summary << r.fold << ',' << r.result.best.provenance.epoch << ',' << std::setprecision(9)
            << r.result.best.provenance.val_loss << ',' << r.result.stopped_epoch << '\n';
  }
  write_text(o.out / "reports" / "folds.csv", summary.str());
  out << "best fold " << best << " -> " << (ckpt_dir / "best.ckpt").string() << '\n';
}

void check_compatible(const Options& o, const nn::ModelCheckpoint& model) {
  if (o.config) {
    const auto want = resolve_config(o).network();
    if (!(want == model.config)) {
      throw UsageError("checkpoint/config mismatch: checkpoint holds " + nn::variant_name(model.config.variant) +
                       " K=" + std::to_string(model.config.K) + " N=" + std::to_string(model.config.base.base_channels) +
                       " depth=" + std::to_string(model.config.base.depth) + ", config asks for " +
                       nn::variant_name(want.variant) + " K=" + std::to_string(want.K) +
                       " N=" + std::to_string(want.base.base_channels) + " depth=" + std::to_string(want.base.depth));
    }
  }
  if (o.variant && nn::parse_variant(*o.variant) != model.config.variant) {
    throw UsageError("checkpoint/config mismatch: checkpoint holds " + nn::variant_name(model.config.variant) +
                     ", --variant asks for " + *o.variant);
  }
}

void cmd_predict(const Options& o, RunManifest& m, std::ostream& out) {
  check_split(o.split);
  const auto& ckpt = need(o.checkpoint, "--checkpoint", o.command);
  const auto layout = data::resolve_layout(need(o.data, "--data", o.command), o.layout);
  m.layout = describe(layout);
  m.checkpoints = {ckpt.string()};
  OutputLock lock(o.out);
  write_manifest(o.out, m);

  const auto model = nn::load_model(ckpt);
  check_compatible(o, model);
  if (o.K && static_cast<std::size_t>(*o.K) != model.config.K) {
    throw UsageError("checkpoint/config mismatch: checkpoint was trained with K=" + std::to_string(model.config.K) +
                     ", --k asks for " + std::to_string(*o.K) + " (use `refine` to change the iteration count)");
  }
  const auto samples = pick_split(data::load_dataset(layout), o.split);
  if (samples.empty()) throw DataError("no " + o.split + " samples under " + layout.root.string());
  for (const auto& s : samples) pipeline::write_prediction(o.out / "predictions", s.identifier, pipeline::predict(model, s));
  out << "wrote " << samples.size() << " predictions to " << (o.out / "predictions").string() << '\n';
}

void cmd_refine(const Options& o, RunManifest& m, std::ostream& out) {
  const auto& ckpt = need(o.checkpoint, "--checkpoint", o.command);
  const auto& maps_dir = need(o.maps, "--maps", o.command);
  check_split(o.split);
  if (o.K && *o.K < 0) throw UsageError("--k must be non-negative");
  std::optional<data::DatasetLayout> layout;
  if (o.data) {
    layout = data::resolve_layout(*o.data, o.layout);
    m.layout = describe(*layout);
  }
  m.checkpoints = {ckpt.string()};
  OutputLock lock(o.out);
  write_manifest(o.out, m);

  const auto model = nn::load_model(ckpt);
  check_compatible(o, model);
  if (!model.config.has_refiner()) {
    throw UsageError("variant " + nn::variant_name(model.config.variant) + " has no separate refiner to apply");
  }
  const std::size_t K = o.K ? static_cast<std::size_t>(*o.K) : model.config.K;
  const std::size_t seen = model.config.refiner.in_channels;
  const auto sets = pipeline::read_map_sets(maps_dir, seen == 3);

  const auto pred_dir = o.out / "predictions";
  fs::create_directories(pred_dir);
  std::vector<metrics::Prediction> before, after;
  for (const auto& set : sets) {
    const FloatImage in = set.maps();
    const FloatImage refined = pipeline::refine(model, in, K);
    for (std::size_t c = 0; c < set.codes.size(); ++c) {
      // Unrefined channels keep their exact input codes.
      const bool touched = K > 0 && c < seen;
      data::write_png_gray16(pipeline::map_path(pred_dir, set.identifier, c),
                             touched ? data::quantize16(refined.channel(c)) : set.codes[c]);
    }
    auto full = [&](const FloatImage& x) {
      if (x.channels == 3) return x;
      FloatImage f(3, x.height, x.width);
      std::copy(x.data.begin(), x.data.end(), f.data.begin());
      for (std::size_t i = 0; i < x.plane_size(); ++i) f.plane(2)[i] = std::max(x.plane(0)[i], x.plane(1)[i]);
      return f;
    };
    if (set.has_vessel) {
      data::write_png_rgb8(pred_dir / (set.identifier + "_rgb.png"),
                           data::encode_gt_rgb(refined.channel(0), refined.channel(1), refined.channel(2)));
    }
    before.push_back({set.identifier, full(in)});
    after.push_back({set.identifier, full(refined)});
  }
  out << "refined " << sets.size() << " map set(s) with K=" << K << '\n';

  if (layout) {
    const auto truth = load_truth(*layout, o.split);
    const auto cfg = eval_config(o, layout->kind);
    const auto rb = metrics::evaluate(before, truth, cfg);
    const auto ra = metrics::evaluate(after, truth, cfg);
    write_report(o.out / "reports", "before", rb, o.curves);
    write_report(o.out / "reports", "after", ra, o.curves);
    std::ostringstream acc;
    acc << "identifier,accuracy_before,accuracy_after\n";
    std::map<std::string, const data::FundusSample*> by_id;
    for (const auto& s : truth) by_id[s.identifier] = &s;
    double sb = 0, sa = 0;
    for (std::size_t i = 0; i < before.size(); ++i) {
      const auto& s = *by_id.at(before[i].identifier);
      const double b = pipeline::av_accuracy(before[i].maps, s), a = pipeline::av_accuracy(after[i].maps, s);
      sb += b;
      sa += a;
      acc << before[i].identifier << ',' << num(b) << ',' << num(a) << '\n';
    }
    const double n = static_cast<double>(before.size());
    acc << "mean," << num(sb / n) << ',' << num(sa / n) << '\n';
    write_text(o.out / "reports" / "refine_accuracy.csv", acc.str());
    out << "mean A/V accuracy " << num(sb / n) << " -> " << num(sa / n) << '\n';
  }
}

void cmd_evaluate(const Options& o, RunManifest& m, std::ostream& out) {
  check_split(o.split);
  fs::path pred_dir = need(o.predictions, "--predictions", o.command);
  if (fs::is_directory(pred_dir / "predictions")) pred_dir /= "predictions";
  const auto layout = data::resolve_layout(need(o.data, "--data", o.command), o.layout);
  m.layout = describe(layout);
  OutputLock lock(o.out);
  write_manifest(o.out, m);

  const auto sets = pipeline::read_map_sets(pred_dir, true);
  std::vector<metrics::Prediction> preds;
  for (const auto& s : sets) preds.push_back({s.identifier, s.maps()});
  const auto truth = load_truth(layout, o.split);
  const auto report = metrics::evaluate(preds, truth, eval_config(o, layout.kind));
  write_report(o.out / "reports", "metrics", report, o.curves);
  out << "evaluated " << report.images.size() << " images: A/V accuracy " << num(report.mean.av_all_gt.accuracy)
      << ", artery AUROC " << num(100 * report.mean.auroc.artery) << ", vein AUROC "
      << num(100 * report.mean.auroc.vein) << '\n';
}

void cmd_ksearch(const Options& o, RunManifest& m, std::ostream& out) {
  auto cfg = resolve_config(o);
  if (o.k_list.empty()) throw UsageError("--k-list is empty");
  for (auto K : o.k_list) {
    if (K < 0) throw UsageError("--k-list entries must be non-negative");
  }
  const auto layout = data::resolve_layout(need(o.data, "--data", o.command), o.layout);
  m.seed = cfg.seed;
  m.layout = describe(layout);
  OutputLock lock(o.out);
  write_manifest(o.out, m);

  const auto samples = training_samples(layout);
  const auto ecfg = eval_config(o, layout.kind);
  std::vector<Column> cols;
  for (auto K : o.k_list) {
    cfg.K = K;
    const std::string name = "K=" + std::to_string(K);
    out << "== " << name << '\n';
    const auto tag = "K" + std::to_string(K);
    const auto runs = pipeline::train_cross_validated(
        samples, cfg, {o.out / "checkpoints" / tag, o.out / "reports" / tag, &out});
    const auto report = pipeline::evaluate_folds(runs, samples, ecfg);
    write_report(o.out / "reports" / tag, "validation", report, o.curves);
    cols.push_back(column_of(name, report));
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < cols.size(); ++i) {
    if (selection_score(cols[i]) > selection_score(cols[best])) best = i;
  }
  std::ostringstream table;
  table << comparison_table(cols, false);
  table << "score";
  for (const auto& c : cols) table << ',' << num(selection_score(c)) << ',';
  table << ',' << cols[best].name << '\n';
  write_text(o.out / "reports" / "ksearch.csv", table.str());
  write_text(o.out / "reports" / "ksearch_selected.txt",
             "K = " + std::to_string(o.k_list[best]) + "\nscore = " + num(selection_score(cols[best])) + "\n");
  out << "selected K = " << o.k_list[best] << " (score " << num(selection_score(cols[best])) << ")\n";
}

void cmd_ablate(const Options& o, RunManifest& m, std::ostream& out) {
  auto cfg = resolve_config(o);
  if (o.variants.empty()) throw UsageError("--variants is empty");
  std::vector<nn::Variant> variants;
  for (const auto& v : o.variants) {
    try {
      variants.push_back(nn::parse_variant(v));
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  const auto layout = data::resolve_layout(need(o.data, "--data", o.command), o.layout);
  m.seed = cfg.seed;
  m.layout = describe(layout);
  OutputLock lock(o.out);
  write_manifest(o.out, m);

  const auto samples = training_samples(layout);
  const auto ecfg = eval_config(o, layout.kind);
  std::vector<Column> cols;
  for (auto v : variants) {
    cfg.variant = v;
    const auto name = nn::variant_name(v);
    out << "== " << name << '\n';
    const auto runs = pipeline::train_cross_validated(
        samples, cfg, {o.out / "checkpoints" / name, o.out / "reports" / name, &out});
    const auto report = pipeline::evaluate_folds(runs, samples, ecfg);
    write_report(o.out / "reports" / name, "validation", report, o.curves);
    cols.push_back(column_of(name, report));
  }
  write_text(o.out / "reports" / "ablation.csv", comparison_table(cols, cols.size() > 1));
  out << "wrote " << (o.out / "reports" / "ablation.csv").string() << '\n';
}

void cmd_synth(const Options& o, RunManifest& m, std::ostream& out) {
  if (o.image_size < 16) throw UsageError("--size must be at least 16");
  if (o.train_count + o.test_count == 0) throw UsageError("nothing to generate");
  m.seed = o.seed.value_or(0);
  m.layout = "custom " + o.out.string();
  OutputLock lock(o.out);
  write_manifest(o.out, m);
  synth::SynthConfig sc;
  sc.size = o.image_size;
  synth::write_dataset(o.out, o.train_count, o.test_count, m.seed, sc);
  out << "wrote " << o.train_count << " train and " << o.test_count << " test images to " << o.out.string() << '\n';
}

}  // namespace

void execute(const Options& o, std::ostream& out) {
  if (o.out.empty()) throw UsageError(o.command + ": --out is required");
  RunManifest m;
  m.command = o.command;
  m.config_path = o.config ? o.config->string() : "";
  m.seed = o.seed.value_or(0);
  m.out_dir = o.out.string();
  m.timestamp = utc_timestamp();
  if (o.command == "train") return cmd_train(o, m, out);
  if (o.command == "predict") return cmd_predict(o, m, out);
  if (o.command == "refine") return cmd_refine(o, m, out);
  if (o.command == "evaluate") return cmd_evaluate(o, m, out);
  if (o.command == "ksearch") return cmd_ksearch(o, m, out);
  if (o.command == "ablate") return cmd_ablate(o, m, out);
  if (o.command == "synth") return cmd_synth(o, m, out);
  throw UsageError("unknown command '" + o.command + "'");
}

}  // namespace rrwnet::cli
