#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>
#include <sstream>

#include "rrwnet/cli.hpp"
#include "rrwnet/data.hpp"
#include "rrwnet/metrics.hpp"
#include "rrwnet/networks.hpp"
#include "rrwnet/pipeline.hpp"
#include "rrwnet/synth.hpp"
#include "rrwnet/training.hpp"

namespace py = pybind11;
using namespace rrwnet;

namespace {

using F32 = py::array_t<float, py::array::c_style | py::array::forcecast>;
using U8 = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

template <typename T>
py::array_t<T> to_array(const Raster<T>& r, bool squeeze = false) {
  std::vector<py::ssize_t> shape;
  if (!(squeeze && r.channels == 1)) shape.push_back(static_cast<py::ssize_t>(r.channels));
  shape.push_back(static_cast<py::ssize_t>(r.height));
  shape.push_back(static_cast<py::ssize_t>(r.width));
  py::array_t<T> out(shape);
  std::memcpy(out.mutable_data(), r.data.data(), r.data.size() * sizeof(T));
  return out;
}

// Accepts [C,H,W] or [H,W] (one channel).
template <typename T, typename A>
Raster<T> to_raster(const A& a, const char* what) {
  Raster<T> r;
  if (a.ndim() == 2) {
    r = Raster<T>(1, a.shape(0), a.shape(1));
  } else if (a.ndim() == 3) {
    r = Raster<T>(a.shape(0), a.shape(1), a.shape(2));
  } else {
    throw py::value_error(std::string(what) + ": expected a [C,H,W] or [H,W] array");
  }
  std::memcpy(r.data.data(), a.data(), r.data.size() * sizeof(T));
  return r;
}

// [H,W,3] interleaved RGB <-> planar.
ByteImage from_hwc(const U8& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw py::value_error("expected an [H,W,3] uint8 array");
  const std::size_t h = a.shape(0), w = a.shape(1);
  ByteImage r(3, h, w);
  const auto* p = a.data();
  for (std::size_t i = 0; i < h * w; ++i)
    for (std::size_t c = 0; c < 3; ++c) r.data[c * h * w + i] = p[i * 3 + c];
  return r;
}

U8 to_hwc(const ByteImage& r) {
  U8 out({static_cast<py::ssize_t>(r.height), static_cast<py::ssize_t>(r.width), py::ssize_t{3}});
  auto* p = out.mutable_data();
  const std::size_t n = r.plane_size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 3; ++c) p[i * 3 + c] = r.data[c * n + i];
  return out;
}

py::dict sample_dict(const data::FundusSample& s) {
  py::dict d;
  d["identifier"] = s.identifier;
  d["image"] = to_array(s.image);
  d["gt"] = to_array(s.gt);
  d["roi"] = to_array(s.roi, true);
  d["crossing"] = to_array(s.crossing, true);
  d["uncertain"] = to_array(s.uncertain, true);
  return d;
}

data::FundusSample sample_from(const py::dict& d) {
  data::FundusSample s;
  s.identifier = d.contains("identifier") ? d["identifier"].cast<std::string>() : "sample";
  s.image = to_raster<float>(d["image"].cast<F32>(), "image");
  s.gt = to_raster<float>(d["gt"].cast<F32>(), "gt");
  s.roi = d.contains("roi") ? to_raster<std::uint8_t>(d["roi"].cast<U8>(), "roi")
                            : Mask(1, s.gt.height, s.gt.width, 1);
  s.crossing = d.contains("crossing") ? to_raster<std::uint8_t>(d["crossing"].cast<U8>(), "crossing")
                                      : Mask(1, s.gt.height, s.gt.width, 0);
  s.uncertain = d.contains("uncertain") ? to_raster<std::uint8_t>(d["uncertain"].cast<U8>(), "uncertain")
                                        : Mask(1, s.gt.height, s.gt.width, 0);
  s.resize.original_height = s.resize.working_height = s.gt.height;
  s.resize.original_width = s.resize.working_width = s.gt.width;
  data::validate_sample(s);
  return s;
}

std::vector<data::FundusSample> samples_from(const py::list& l) {
  std::vector<data::FundusSample> out;
  for (const auto& item : l) out.push_back(sample_from(item.cast<py::dict>()));
  return out;
}

py::dict metrics_dict(const metrics::ImageMetrics& m) {
  py::dict d;
  for (const auto& [k, v] : metrics::flatten(m)) d[py::str(k)] = v;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Retinal artery/vein segmentation with recursive refinement";
  m.attr("__version__") = cli::kToolVersion;

  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<train::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<train::NumericFailure>(m, "NumericFailure", PyExc_ArithmeticError);
  py::register_exception<ad::CheckpointError>(m, "CheckpointError", PyExc_IOError);
  py::register_exception<ad::ShapeError>(m, "ShapeError", PyExc_ValueError);

  m.def(
      "decode_gt",
      [](const U8& rgb) {
        const auto gt = data::decode_gt_rgb(from_hwc(rgb));
        py::dict d;
        d["artery"] = to_array(gt.artery, true);
        d["vein"] = to_array(gt.vein, true);
        d["vessel"] = to_array(gt.vessel, true);
        d["crossing"] = to_array(gt.crossing, true);
        d["uncertain"] = to_array(gt.uncertain, true);
        return d;
      },
      py::arg("rgb"), "Decode an [H,W,3] ground-truth image into binary masks.");

  m.def(
      "encode_gt",
      [](const F32& maps) {
        const auto r = to_raster<float>(maps, "maps");
        if (r.channels != 3) throw py::value_error("encode_gt: expected [3,H,W] maps (A, V, BV)");
        return to_hwc(data::encode_gt_rgb(r.channel(0), r.channel(1), r.channel(2)));
      },
      py::arg("maps"), "Encode [3,H,W] A/V/BV maps as an [H,W,3] uint8 image.");

  m.def("iteration_weights", &train::iteration_weights, py::arg("K"));

  m.def(
      "synth_sample",
      [](std::uint64_t seed, std::size_t index, std::size_t size) {
        synth::SynthConfig c;
        c.size = size;
        auto s = synth::generate_sample(synth::image_seed(seed, index), c);
        return sample_dict(s);
      },
      py::arg("seed") = 0, py::arg("index") = 0, py::arg("size") = 64,
      "One preprocessed sample of the synthetic benchmark.");

  m.def(
      "write_synthetic_dataset",
      [](const std::filesystem::path& root, std::size_t train_count, std::size_t test_count, std::uint64_t seed,
         std::size_t size) {
        synth::SynthConfig c;
        c.size = size;
        synth::write_dataset(root, train_count, test_count, seed, c);
      },
      py::arg("root"), py::arg("train_count") = 20, py::arg("test_count") = 20, py::arg("seed") = 0,
      py::arg("size") = 64);

  m.def(
      "load_dataset",
      [](const std::filesystem::path& dir, const std::string& split) {
        const auto loaded = data::load_dataset(data::resolve_layout(dir));
        py::list out;
        if (split == "train" || split == "all")
          for (const auto& s : loaded.train) out.append(sample_dict(s));
        if (split == "test" || split == "all")
          for (const auto& s : loaded.test) out.append(sample_dict(s));
        if (split != "train" && split != "test" && split != "all")
          throw py::value_error("split must be train, test or all");
        return out;
      },
      py::arg("data_dir"), py::arg("split") = "test");

  m.def(
      "parse_train_config",
      [](const std::string& text) { return train::format_train_config(train::parse_train_config(text)); },
      py::arg("text"), "Validate a key = value config; returns its normalized form.");

  py::class_<nn::ModelCheckpoint>(m, "Model")
      .def(py::init([](const std::string& variant, std::int64_t base_channels, std::int64_t depth, std::int64_t K,
                       std::uint64_t seed) {
             nn::ModelCheckpoint mc;
             mc.config = nn::RRWNetConfig::make(nn::parse_variant(variant), base_channels, depth, K);
             mc.params = nn::init_parameters<float>(mc.config, seed);
             mc.provenance.seed = seed;
             return mc;
           }),
           py::arg("variant") = "rrwnet", py::arg("base_channels") = 64, py::arg("depth") = 5, py::arg("K") = 6,
           py::arg("seed") = 0)
      .def_static("load", &nn::load_model, py::arg("path"))
      .def("save", [](const nn::ModelCheckpoint& mc, const std::filesystem::path& p) { nn::save_model(p, mc); })
      .def_property_readonly("variant", [](const nn::ModelCheckpoint& mc) { return nn::variant_name(mc.config.variant); })
      .def_property_readonly("K", [](const nn::ModelCheckpoint& mc) { return mc.config.K; })
      .def_property_readonly("depth", [](const nn::ModelCheckpoint& mc) { return mc.config.base.depth; })
      .def_property_readonly("base_channels",
                             [](const nn::ModelCheckpoint& mc) { return mc.config.base.base_channels; })
      .def_property_readonly("parameter_count",
                             [](const nn::ModelCheckpoint& mc) { return mc.params.element_count(); })
      .def(
          "predict_stages",
          [](const nn::ModelCheckpoint& mc, const F32& image) {
            const auto img = to_raster<float>(image, "image");
            std::vector<FloatImage> stages;
            {
              py::gil_scoped_release release;
              stages = pipeline::predict_stages(mc, img);
            }
            py::list out;
            for (const auto& s : stages) out.append(to_array(s));
            return out;
          },
          py::arg("image"), "All stages [y_0 ... y_K] for a preprocessed [3,H,W] image.")
      .def(
          "predict",
          [](const nn::ModelCheckpoint& mc, const F32& image) {
            const auto img = to_raster<float>(image, "image");
            FloatImage last;
            {
              py::gil_scoped_release release;
              last = pipeline::predict_stages(mc, img).back();
            }
            return to_array(last);
          },
          py::arg("image"), "Final-stage [3,H,W] maps.")
      .def(
          "refine",
          [](const nn::ModelCheckpoint& mc, const F32& maps, std::optional<std::size_t> K) {
            const auto r = to_raster<float>(maps, "maps");
            FloatImage out;
            {
              py::gil_scoped_release release;
              out = pipeline::refine(mc, r, K.value_or(mc.config.K));
            }
            return to_array(out);
          },
          py::arg("maps"), py::arg("K") = py::none(), "Apply the refiner K times to external maps.");

  m.def(
      "train",
      [](const py::list& training, const py::list& validation, const std::string& config_text) {
        const auto cfg = train::parse_train_config(config_text);
        const auto tr = samples_from(training);
        const auto va = samples_from(validation);
        train::TrainResult result;
        {
          py::gil_scoped_release release;
          result = train::train(tr, va, cfg);
        }
        py::list log;
        for (const auto& r : result.log) log.append(py::make_tuple(r.epoch, r.train_loss, r.val_loss));
        return py::make_tuple(result.best, log);
      },
      py::arg("training"), py::arg("validation"), py::arg("config") = "",
      "Train with early stopping; returns (best model, [(epoch, train_loss, val_loss)]).");

  m.def(
      "evaluate",
      [](const F32& maps, const py::dict& sample, std::size_t n_paths, std::uint64_t seed, double threshold) {
        metrics::EvalConfig c;
        c.topo.n_paths = n_paths;
        c.topo.seed = seed;
        c.topo.threshold = threshold;
        c.threshold = threshold;
        const auto s = sample_from(sample);
        const metrics::Prediction p{s.identifier, to_raster<float>(maps, "maps")};
        return metrics_dict(metrics::evaluate_image(p, s, c));
      },
      py::arg("maps"), py::arg("sample"), py::arg("n_paths") = 1000, py::arg("seed") = 0,
      py::arg("threshold") = 0.5, "Per-image metrics for [3,H,W] predicted maps.");

  m.def(
      "av_accuracy",
      [](const F32& maps, const py::dict& sample) {
        return pipeline::av_accuracy(to_raster<float>(maps, "maps"), sample_from(sample));
      },
      py::arg("maps"), py::arg("sample"));

  m.def(
      "roc_auc",
      [](const F32& scores, const U8& labels) {
        if (scores.size() != labels.size()) throw py::value_error("roc_auc: size mismatch");
        return metrics::roc_auc({scores.data(), static_cast<std::size_t>(scores.size())},
                                {labels.data(), static_cast<std::size_t>(labels.size())})
            .area;
      },
      py::arg("scores"), py::arg("labels"));

  m.def(
      "pr_auc",
      [](const F32& scores, const U8& labels) {
        if (scores.size() != labels.size()) throw py::value_error("pr_auc: size mismatch");
        return metrics::pr_auc({scores.data(), static_cast<std::size_t>(scores.size())},
                               {labels.data(), static_cast<std::size_t>(labels.size())})
            .area;
      },
      py::arg("scores"), py::arg("labels"));

  m.def(
      "wilcoxon_greater",
      [](const std::vector<double>& a, const std::vector<double>& b) {
        return metrics::wilcoxon_signed_rank_one_tailed(a, b);
      },
      py::arg("a"), py::arg("b"), "One-tailed Wilcoxon signed-rank p-value for a > b.");
}
