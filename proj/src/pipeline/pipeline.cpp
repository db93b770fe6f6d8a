#include "rrwnet/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

namespace rrwnet::pipeline {

namespace fs = std::filesystem;
using ad::Tensor;

namespace {

Tensor<float> to_tensor(const FloatImage& r) { return Tensor<float>({r.channels, r.height, r.width}, r.data); }

FloatImage to_image(const Tensor<float>& t) {
  FloatImage r(t.dim(0), t.dim(1), t.dim(2));
  std::copy(t.values().begin(), t.values().end(), r.data.begin());
  return r;
}

nn::ParameterSet<float> frozen(const nn::ModelCheckpoint& model) {
  return nn::cast_parameters<float>(model.params, false);
}

}  // namespace

std::vector<FloatImage> predict_stages(const nn::ModelCheckpoint& model, const FloatImage& image) {
  if (image.channels != model.config.image_channels()) {
    throw DataError("image has " + std::to_string(image.channels) + " channels, model expects " +
                    std::to_string(model.config.image_channels()));
  }
  ad::NoGradGuard no_grad;
  data::PadSpec spec;
  const auto padded = data::pad_to_multiple(image, model.config.size_multiple(), &spec);
  const auto stages = nn::variant_forward(to_tensor(padded), frozen(model), model.config);
  std::vector<FloatImage> out;
  out.reserve(stages.size());
  for (const auto& s : stages) out.push_back(data::crop(to_image(s), spec));
  return out;
}

FloatImage predict(const nn::ModelCheckpoint& model, const data::FundusSample& sample) {
  auto maps = predict_stages(model, sample.image).back();
  const auto& r = sample.resize;
  if (!r.identity()) maps = data::resize_bilinear(maps, r.original_height, r.original_width);
  return maps;
}

FloatImage refine(const nn::ModelCheckpoint& model, const FloatImage& maps, std::size_t K) {
  const auto& c = model.config;
  if (!c.has_refiner()) {
    throw std::invalid_argument("variant " + nn::variant_name(c.variant) + " has no separate refiner");
  }
  const std::size_t seen = c.refiner.in_channels;
  if (maps.channels < seen) {
    throw DataError("refiner needs " + std::to_string(seen) + " map channels, got " +
                    std::to_string(maps.channels));
  }
  if (K == 0) return maps;
  ad::NoGradGuard no_grad;
  const auto params = frozen(model);
  FloatImage in(seen, maps.height, maps.width);
  std::copy_n(maps.data.begin(), in.data.size(), in.data.begin());
  data::PadSpec spec;
  auto x = to_tensor(data::pad_to_multiple(in, c.size_multiple(), &spec));
  for (std::size_t k = 0; k < K; ++k) x = nn::rr_forward(x, params, c);
  const auto refined = data::crop(to_image(x), spec);
  FloatImage out = maps;
  std::copy(refined.data.begin(), refined.data.end(), out.data.begin());
  return out;
}

fs::path map_path(const fs::path& dir, const std::string& id, std::size_t channel) {
  return dir / (id + "_" + map_suffixes().at(channel) + ".png");
}

void write_prediction(const fs::path& dir, const std::string& id, const FloatImage& maps) {
  if (maps.channels != 3) throw std::invalid_argument("write_prediction: expected 3 maps");
  fs::create_directories(dir);
  for (std::size_t c = 0; c < 3; ++c) data::write_png_gray16(map_path(dir, id, c), data::quantize16(maps.channel(c)));
  data::write_png_rgb8(dir / (id + "_rgb.png"),
                       data::encode_gt_rgb(maps.channel(0), maps.channel(1), maps.channel(2)));
}

FloatImage MapSet::maps() const {
  const auto& first = codes.front();
  FloatImage out(codes.size(), first.height, first.width);
  for (std::size_t c = 0; c < codes.size(); ++c) {
    const auto f = data::dequantize16(codes[c]);
    std::copy(f.data.begin(), f.data.end(), out.plane(c).begin());
  }
  return out;
}

std::vector<MapSet> read_map_sets(const fs::path& dir, bool require_vessel) {
  if (!fs::is_directory(dir)) throw DataError("map directory not found: " + dir.string());
  const std::string suffix = "_artery.png";
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
      ids.push_back(name.substr(0, name.size() - suffix.size()));
    }
  }
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) throw DataError("no *_artery.png maps under " + dir.string());

  std::vector<MapSet> out;
  std::vector<std::string> problems;
  for (const auto& id : ids) {
    MapSet m;
    m.identifier = id;
    try {
      for (std::size_t c = 0; c < 3; ++c) {
        const auto p = map_path(dir, id, c);
        if (!fs::exists(p)) {
          if (c == 2 && !require_vessel) break;
          throw DataError(p.string() + " is missing");
        }
        auto codes = data::read_png_gray16(p);
        if (!m.codes.empty() && !codes.same_size(m.codes.front())) {
          throw DataError(p.string() + " size differs from " + map_path(dir, id, 0).string());
        }
        m.codes.push_back(std::move(codes));
      }
      m.has_vessel = m.codes.size() == 3;
      out.push_back(std::move(m));
    } catch (const DataError& e) {
      problems.push_back(e.what());
    }
  }
  if (!problems.empty()) {
    std::string msg = "failed to read " + std::to_string(problems.size()) + " map set(s):";
    for (const auto& p : problems) msg += "\n  " + p;
    throw DataError(msg);
  }
  return out;
}

double av_accuracy(const FloatImage& maps, const data::FundusSample& s) {
  const std::size_t n = s.roi.plane_size();
  if (maps.channels < 2 || !maps.same_size(s.roi)) throw std::invalid_argument("av_accuracy: map size mismatch");
  std::size_t hit = 0, total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const bool a = s.gt.data[i] > 0.5f, v = s.gt.data[n + i] > 0.5f;
    if (!s.roi.data[i] || a == v) continue;
    ++total;
    hit += (maps.data[i] >= maps.data[n + i]) == a;
  }
  if (total == 0) throw std::invalid_argument("av_accuracy: no artery or vein pixels");
  return 100.0 * static_cast<double>(hit) / static_cast<double>(total);
}

std::vector<FoldRun> train_cross_validated(const std::vector<data::FundusSample>& samples,
                                           const train::TrainConfig& config, const CrossValidationOptions& options) {
  config.validate();
  std::vector<train::Fold> folds;
  if (config.fold_count == 1) {
    std::vector<std::size_t> all(samples.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    auto [tr, val] = train::holdout_split(all, 0.2, config.seed);
    folds.push_back({tr, val});
  } else {
    folds = train::cross_validation_split(samples.size(), static_cast<std::size_t>(config.fold_count), config.seed);
  }
  if (options.checkpoint_dir) fs::create_directories(*options.checkpoint_dir);
  if (options.log_dir) fs::create_directories(*options.log_dir);

  std::vector<FoldRun> runs;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    std::vector<data::FundusSample> tr, val;
    for (auto i : folds[f].train) tr.push_back(samples[i]);
    for (auto i : folds[f].validation) val.push_back(samples[i]);

    train::TrainHooks hooks;
    hooks.fold = static_cast<std::int64_t>(f);
    std::ofstream log;
    if (options.log_dir) {
      log.open(*options.log_dir / ("train_fold_" + std::to_string(f) + ".csv"));
      log << "epoch,train_loss,val_loss,best_so_far,seconds\n";
      hooks.log = &log;
    }
    if (options.checkpoint_dir) hooks.diagnostic_path = *options.checkpoint_dir / "diagnostic.ckpt";
    if (options.progress) {
      *options.progress << "fold " << f + 1 << "/" << folds.size() << ": " << tr.size() << " train, " << val.size()
                        << " validation\n";
    }
    FoldRun run{f, folds[f].train, folds[f].validation, train::train(tr, val, config, hooks)};
    if (options.checkpoint_dir) {
      nn::save_model(*options.checkpoint_dir / ("fold_" + std::to_string(f) + ".ckpt"), run.result.best);
    }
    if (options.progress) {
      *options.progress << "fold " << f + 1 << ": best validation loss " << run.result.best.provenance.val_loss
                        << " at epoch " << run.result.best.provenance.epoch << "\n";
    }
    runs.push_back(std::move(run));
  }
  return runs;
}

std::size_t best_fold(const std::vector<FoldRun>& runs) {
  if (runs.empty()) throw std::invalid_argument("best_fold: no runs");
  std::size_t best = 0;
  for (std::size_t i = 1; i < runs.size(); ++i) {
    if (runs[i].result.best.provenance.val_loss < runs[best].result.best.provenance.val_loss) best = i;
  }
  return best;
}

metrics::MetricReport evaluate_folds(const std::vector<FoldRun>& runs, const std::vector<data::FundusSample>& samples,
                                     const metrics::EvalConfig& config) {
  std::vector<metrics::Prediction> preds;
  std::vector<data::FundusSample> truth;
  for (const auto& run : runs) {
    for (auto i : run.validation) {
      const auto& s = samples.at(i);
      preds.push_back({s.identifier, predict_stages(run.result.best, s.image).back()});
      truth.push_back(s);
    }
  }
  return metrics::evaluate(preds, truth, config);
}

}  // namespace rrwnet::pipeline
