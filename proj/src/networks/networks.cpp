#include "rrwnet/networks.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "rrwnet/ops.hpp"

namespace rrwnet::nn {

void UNetConfig::validate() const {
  if (in_channels == 0 || out_channels == 0 || base_channels == 0) {
    throw std::invalid_argument("UNetConfig: channel counts must be positive");
  }
  if (depth == 0 || depth > 12) {
    throw std::invalid_argument("UNetConfig: depth must be in [1,12], got " + std::to_string(depth));
  }
}

Variant parse_variant(const std::string& name) {
  for (Variant v : all_variants()) {
    if (variant_name(v) == name) return v;
  }
  throw std::invalid_argument("unknown variant '" + name +
                              "' (expected rrwnet, rrwnet_all, unet_only, wnet or rrunet)");
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::rrwnet: return "rrwnet";
    case Variant::rrwnet_all: return "rrwnet_all";
    case Variant::unet_only: return "unet_only";
    case Variant::wnet: return "wnet";
    case Variant::rrunet: return "rrunet";
  }
  throw std::logic_error("bad variant");
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> v = {Variant::unet_only, Variant::wnet, Variant::rrunet,
                                         Variant::rrwnet_all, Variant::rrwnet};
  return v;
}

RRWNetConfig RRWNetConfig::make(Variant variant, std::size_t base_channels, std::size_t depth,
                                std::size_t K, std::size_t image_channels) {
  RRWNetConfig c;
  c.variant = variant;
  c.K = K;
  c.base = {image_channels, 3, base_channels, depth};
  c.refiner = {2, 2, base_channels, depth};
  switch (variant) {
    case Variant::rrwnet: break;
    case Variant::wnet: c.K = 1; break;
    case Variant::rrwnet_all: c.refiner = {3, 3, base_channels, depth}; break;
    case Variant::unet_only:
      c.K = 0;
      c.refiner = {};
      break;
    case Variant::rrunet:
      c.base.in_channels = image_channels + 3;
      c.refiner = {};
      break;
  }
  c.validate();
  return c;
}

bool RRWNetConfig::has_refiner() const {
  return variant == Variant::rrwnet || variant == Variant::wnet || variant == Variant::rrwnet_all;
}

std::size_t RRWNetConfig::image_channels() const {
  return variant == Variant::rrunet ? base.in_channels - 3 : base.in_channels;
}

void RRWNetConfig::validate() const {
  base.validate();
  if (base.out_channels != 3) throw std::invalid_argument("base subnetwork must output 3 maps");
  switch (variant) {
    case Variant::rrwnet:
    case Variant::wnet:
      refiner.validate();
      if (refiner.in_channels != 2 || refiner.out_channels != 2) {
        throw std::invalid_argument("refiner must map 2 channels (A,V) to 2 channels");
      }
      if (refiner.depth != base.depth) {
        throw std::invalid_argument("refiner and base depths must match");
      }
      if (variant == Variant::wnet && K != 1) throw std::invalid_argument("wnet requires K = 1");
      break;
    case Variant::rrwnet_all:
      refiner.validate();
      if (refiner.in_channels != 3 || refiner.out_channels != 3) {
        throw std::invalid_argument("rrwnet_all refiner must map 3 channels to 3 channels");
      }
      if (refiner.depth != base.depth) {
        throw std::invalid_argument("refiner and base depths must match");
      }
      break;
    case Variant::unet_only:
      if (K != 0) throw std::invalid_argument("unet_only has no refinement stages (K = 0)");
      break;
    case Variant::rrunet:
      if (base.in_channels < 4) throw std::invalid_argument("rrunet input must include 3 map channels");
      break;
  }
}

std::vector<ConvSpec> unet_layers(const UNetConfig& c) {
  c.validate();
  std::vector<ConvSpec> layers;
  std::size_t prev = c.in_channels;
  for (std::size_t l = 0; l < c.depth; ++l) {
    const std::size_t ch = c.level_channels(l);
    const std::string p = "enc" + std::to_string(l);
    layers.push_back({p + ".conv1", prev, ch, 3});
    layers.push_back({p + ".conv2", ch, ch, 3});
    prev = ch;
  }
  for (std::size_t l = c.depth - 1; l-- > 0;) {
    const std::size_t ch = c.level_channels(l);
    const std::string p = "dec" + std::to_string(l);
    layers.push_back({p + ".up", c.level_channels(l + 1), ch, 3});
    layers.push_back({p + ".conv1", 2 * ch, ch, 3});
    layers.push_back({p + ".conv2", ch, ch, 3});
  }
  layers.push_back({"head", c.base_channels, c.out_channels, 1});
  return layers;
}

std::size_t unet_parameter_count(const UNetConfig& config) {
  std::size_t n = 0;
  for (const auto& l : unet_layers(config)) {
    n += l.out_channels * l.in_channels * l.kernel * l.kernel + l.out_channels;
  }
  return n;
}

template <typename T>
void ParameterSet<T>::add(std::string name, Tensor<T> tensor) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter " + name);
  entries_.push_back({std::move(name), std::move(tensor)});
}

template <typename T>
const Tensor<T>& ParameterSet<T>::at(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e.tensor;
  }
  throw std::out_of_range("missing parameter " + name);
}

template <typename T>
bool ParameterSet<T>::contains(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return true;
  }
  return false;
}

template <typename T>
std::size_t ParameterSet<T>::element_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

template <typename T>
std::vector<Tensor<T>> ParameterSet<T>::tensors() const {
  std::vector<Tensor<T>> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.tensor);
  return out;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

template <typename T>
void init_unet(ParameterSet<T>& params, const UNetConfig& config, const std::string& prefix,
               std::mt19937_64& rng) {
  for (const auto& l : unet_layers(config)) {
    const std::size_t fan_in = l.in_channels * l.kernel * l.kernel;
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    std::vector<T> w(l.out_channels * fan_in);
    for (auto& v : w) v = static_cast<T>(dist(rng));
    params.add(prefix + l.name + ".weight",
               Tensor<T>({l.out_channels, l.in_channels, l.kernel, l.kernel}, std::move(w), true));
    params.add(prefix + l.name + ".bias", Tensor<T>::zeros({l.out_channels}, true));
  }
}

template <typename T>
ParameterSet<T> init_parameters(const RRWNetConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  ParameterSet<T> params;
  init_unet(params, config.base, "base.", rng);
  if (config.has_refiner()) init_unet(params, config.refiner, "refiner.", rng);
  return params;
}

namespace {

template <typename T>
Tensor<T> conv(const Tensor<T>& x, const ParameterSet<T>& params, const std::string& name) {
  return ad::conv2d(x, params.at(name + ".weight"), params.at(name + ".bias"));
}

template <typename T>
Tensor<T> double_conv(const Tensor<T>& x, const ParameterSet<T>& params, const std::string& name) {
  auto h = ad::relu(conv(x, params, name + ".conv1"));
  return ad::relu(conv(h, params, name + ".conv2"));
}

}  // namespace

template <typename T>
Tensor<T> unet_forward(const Tensor<T>& image, const ParameterSet<T>& params,
                       const UNetConfig& config, const std::string& prefix) {
  config.validate();
  if (image.rank() != 3 || image.dim(0) != config.in_channels) {
    throw ad::ShapeError("unet_forward: expected [" + std::to_string(config.in_channels) +
                         ",H,W] input, got " + ad::shape_str(image.shape()));
  }
  const std::size_t m = config.size_multiple();
  const std::size_t h = image.dim(1), w = image.dim(2);
  if (h % m || w % m) {
    const std::size_t ph = (m - h % m) % m, pw = (m - w % m) % m;
    throw ad::ShapeError("unet_forward: " + std::to_string(h) + "x" + std::to_string(w) +
                         " input is not a multiple of " + std::to_string(m) + "; pad by " +
                         std::to_string(ph) + " rows and " + std::to_string(pw) + " columns");
  }

  std::vector<Tensor<T>> skips;
  Tensor<T> x = image;
  for (std::size_t l = 0; l < config.depth; ++l) {
    x = double_conv(x, params, prefix + "enc" + std::to_string(l));
    if (l + 1 < config.depth) {
      skips.push_back(x);
      x = ad::max_pool2(x);
    }
  }
  for (std::size_t l = config.depth - 1; l-- > 0;) {
    const std::string p = prefix + "dec" + std::to_string(l);
    auto up = conv(ad::upsample2(x), params, p + ".up");
    x = double_conv(ad::concat_channels(skips[l], up), params, p);
  }
  return ad::sigmoid(conv(x, params, prefix + "head"));
}

template <typename T>
Tensor<T> base_forward(const Tensor<T>& image, const ParameterSet<T>& params,
                       const RRWNetConfig& config) {
  return unet_forward(image, params, config.base, "base.");
}

template <typename T>
Tensor<T> rr_forward(const Tensor<T>& maps, const ParameterSet<T>& params,
                     const RRWNetConfig& config) {
  if (!config.has_refiner()) {
    throw std::invalid_argument("variant " + variant_name(config.variant) + " has no refiner");
  }
  if (maps.rank() != 3 || maps.dim(0) != config.refiner.in_channels) {
    throw ad::ShapeError("rr_forward: refiner takes exactly " +
                         std::to_string(config.refiner.in_channels) + " map channels, got " +
                         ad::shape_str(maps.shape()));
  }
  return unet_forward(maps, params, config.refiner, "refiner.");
}

template <typename T>
std::vector<Tensor<T>> rrwnet_forward(const Tensor<T>& image, const ParameterSet<T>& params,
                                      const RRWNetConfig& config) {
  if (config.variant != Variant::rrwnet && config.variant != Variant::wnet) {
    throw std::invalid_argument("rrwnet_forward: variant " + variant_name(config.variant) +
                                " does not follow the A/V-only refinement scheme");
  }
  std::vector<Tensor<T>> stages{base_forward(image, params, config)};
  const Tensor<T> vessels = ad::slice_channels(stages[0], kVessel, 1);
  for (std::size_t k = 1; k <= config.K; ++k) {
    auto av = rr_forward(ad::slice_channels(stages.back(), kArtery, 2), params, config);
    stages.push_back(ad::concat_channels(av, vessels));
  }
  return stages;
}

template <typename T>
std::vector<Tensor<T>> variant_forward(const Tensor<T>& image, const ParameterSet<T>& params,
                                       const RRWNetConfig& config) {
  switch (config.variant) {
    case Variant::rrwnet:
    case Variant::wnet:
      return rrwnet_forward(image, params, config);
    case Variant::unet_only:
      return {base_forward(image, params, config)};
    case Variant::rrwnet_all: {
      std::vector<Tensor<T>> stages{base_forward(image, params, config)};
      for (std::size_t k = 1; k <= config.K; ++k) {
        stages.push_back(rr_forward(stages.back(), params, config));
      }
      return stages;
    }
    case Variant::rrunet: {
      if (image.rank() != 3) {
        throw ad::ShapeError("rrunet: expected [C,H,W] image, got " + ad::shape_str(image.shape()));
      }
      std::vector<Tensor<T>> stages;
      Tensor<T> prev = Tensor<T>::zeros({3, image.dim(1), image.dim(2)});
      for (std::size_t k = 0; k <= config.K; ++k) {
        stages.push_back(base_forward(ad::concat_channels(image, prev), params, config));
        prev = stages.back();
      }
      return stages;
    }
  }
  throw std::invalid_argument("unknown variant");
}

template <typename To, typename From>
ParameterSet<To> cast_parameters(const ParameterSet<From>& params, bool requires_grad) {
  ParameterSet<To> out;
  for (const auto& e : params.entries()) {
    std::vector<To> v(e.tensor.values().begin(), e.tensor.values().end());
    out.add(e.name, Tensor<To>(e.tensor.shape(), std::move(v), requires_grad));
  }
  return out;
}

// --- checkpoint glue -------------------------------------------------------

namespace {

std::string fmt_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s, const std::string& key) {
  double v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw ad::CheckpointError("bad numeric metadata " + key + "=" + s);
  }
  return v;
}

std::int64_t parse_int(const std::string& s, const std::string& key) {
  std::int64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw ad::CheckpointError("bad integer metadata " + key + "=" + s);
  }
  return v;
}

const std::string& need(const ad::CheckpointFile& f, const std::string& key) {
  auto it = f.metadata.find(key);
  if (it == f.metadata.end()) throw ad::CheckpointError("checkpoint lacks metadata key " + key);
  return it->second;
}

void put_unet(std::map<std::string, std::string>& m, const std::string& p, const UNetConfig& c) {
  m[p + ".in_channels"] = std::to_string(c.in_channels);
  m[p + ".out_channels"] = std::to_string(c.out_channels);
  m[p + ".base_channels"] = std::to_string(c.base_channels);
  m[p + ".depth"] = std::to_string(c.depth);
}

UNetConfig get_unet(const ad::CheckpointFile& f, const std::string& p) {
  UNetConfig c;
  c.in_channels = static_cast<std::size_t>(parse_int(need(f, p + ".in_channels"), p));
  c.out_channels = static_cast<std::size_t>(parse_int(need(f, p + ".out_channels"), p));
  c.base_channels = static_cast<std::size_t>(parse_int(need(f, p + ".base_channels"), p));
  c.depth = static_cast<std::size_t>(parse_int(need(f, p + ".depth"), p));
  return c;
}

}  // namespace

ad::CheckpointFile to_checkpoint_file(const ModelCheckpoint& model) {
  ad::CheckpointFile f;
  auto& m = f.metadata;
  m["arch.variant"] = variant_name(model.config.variant);
  m["arch.K"] = std::to_string(model.config.K);
  put_unet(m, "arch.base", model.config.base);
  if (model.config.has_refiner()) put_unet(m, "arch.refiner", model.config.refiner);
  m["provenance.seed"] = std::to_string(model.provenance.seed);
  m["provenance.epoch"] = std::to_string(model.provenance.epoch);
  m["provenance.fold"] = std::to_string(model.provenance.fold);
  m["provenance.val_loss"] = fmt_double(model.provenance.val_loss);
  m["init"] = "he_normal_fan_in";

  for (const auto& e : model.params.entries()) {
    f.tensors.push_back({e.name, e.tensor.shape(),
                         std::vector<float>(e.tensor.values().begin(), e.tensor.values().end())});
  }
  if (model.optimizer) {
    const auto& s = *model.optimizer;
    m["adam.step_count"] = std::to_string(s.step_count);
    m["adam.learning_rate"] = fmt_double(s.hyper.learning_rate);
    m["adam.beta1"] = fmt_double(s.hyper.beta1);
    m["adam.beta2"] = fmt_double(s.hyper.beta2);
    m["adam.epsilon"] = fmt_double(s.hyper.epsilon);
    const auto& entries = model.params.entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
      f.tensors.push_back({"adam.m." + entries[i].name, entries[i].tensor.shape(), s.first_moment[i]});
      f.tensors.push_back({"adam.v." + entries[i].name, entries[i].tensor.shape(), s.second_moment[i]});
    }
  }
  return f;
}

ModelCheckpoint from_checkpoint_file(const ad::CheckpointFile& f) {
  ModelCheckpoint model;
  auto& c = model.config;
  c.variant = parse_variant(need(f, "arch.variant"));
  c.K = static_cast<std::size_t>(parse_int(need(f, "arch.K"), "arch.K"));
  c.base = get_unet(f, "arch.base");
  c.refiner = c.has_refiner() ? get_unet(f, "arch.refiner") : UNetConfig{};
  c.validate();

  model.provenance.seed = static_cast<std::uint64_t>(parse_int(need(f, "provenance.seed"), "seed"));
  model.provenance.epoch = parse_int(need(f, "provenance.epoch"), "epoch");
  model.provenance.fold = parse_int(need(f, "provenance.fold"), "fold");
  model.provenance.val_loss = parse_double(need(f, "provenance.val_loss"), "val_loss");

  auto load_net = [&](const UNetConfig& net, const std::string& prefix) {
    for (const auto& l : unet_layers(net)) {
      for (const char* suffix : {".weight", ".bias"}) {
        const std::string name = prefix + l.name + suffix;
        const auto* t = f.find(name);
        if (!t) throw ad::CheckpointError("checkpoint lacks tensor " + name);
        const Shape expect = std::string(suffix) == ".bias"
                                 ? Shape{l.out_channels}
                                 : Shape{l.out_channels, l.in_channels, l.kernel, l.kernel};
        if (t->shape != expect) {
          throw ad::CheckpointError("tensor " + name + " has shape " + ad::shape_str(t->shape) +
                                    ", architecture expects " + ad::shape_str(expect));
        }
        model.params.add(name, Tensor<float>(t->shape, t->values, true));
      }
    }
  };
  load_net(c.base, "base.");
  if (c.has_refiner()) load_net(c.refiner, "refiner.");

  if (f.metadata.count("adam.step_count")) {
    ad::AdamState<float> s;
    s.step_count = static_cast<std::uint64_t>(parse_int(need(f, "adam.step_count"), "adam"));
    s.hyper.learning_rate = parse_double(need(f, "adam.learning_rate"), "adam");
    s.hyper.beta1 = parse_double(need(f, "adam.beta1"), "adam");
    s.hyper.beta2 = parse_double(need(f, "adam.beta2"), "adam");
    s.hyper.epsilon = parse_double(need(f, "adam.epsilon"), "adam");
    for (const auto& e : model.params.entries()) {
      const auto* m = f.find("adam.m." + e.name);
      const auto* v = f.find("adam.v." + e.name);
      if (!m || !v) throw ad::CheckpointError("checkpoint lacks optimizer moments for " + e.name);
      s.first_moment.push_back(m->values);
      s.second_moment.push_back(v->values);
    }
    model.optimizer = std::move(s);
  }
  return model;
}

void save_model(const std::filesystem::path& path, const ModelCheckpoint& model) {
  ad::save_checkpoint(path, to_checkpoint_file(model));
}

ModelCheckpoint load_model(const std::filesystem::path& path) {
  return from_checkpoint_file(ad::load_checkpoint(path));
}

#define RRWNET_INSTANTIATE_NN(T)                                                                \
  template class ParameterSet<T>;                                                               \
  template void init_unet(ParameterSet<T>&, const UNetConfig&, const std::string&,              \
                          std::mt19937_64&);                                                    \
  template ParameterSet<T> init_parameters(const RRWNetConfig&, std::uint64_t);                 \
  template Tensor<T> unet_forward(const Tensor<T>&, const ParameterSet<T>&, const UNetConfig&,  \
                                  const std::string&);                                          \
  template Tensor<T> base_forward(const Tensor<T>&, const ParameterSet<T>&,                     \
                                  const RRWNetConfig&);                                         \
  template Tensor<T> rr_forward(const Tensor<T>&, const ParameterSet<T>&, const RRWNetConfig&); \
  template std::vector<Tensor<T>> rrwnet_forward(const Tensor<T>&, const ParameterSet<T>&,      \
                                                 const RRWNetConfig&);                          \
  template std::vector<Tensor<T>> variant_forward(const Tensor<T>&, const ParameterSet<T>&,     \
                                                  const RRWNetConfig&);

RRWNET_INSTANTIATE_NN(float)
RRWNET_INSTANTIATE_NN(double)

template ParameterSet<double> cast_parameters(const ParameterSet<float>&, bool);
template ParameterSet<float> cast_parameters(const ParameterSet<double>&, bool);
template ParameterSet<float> cast_parameters(const ParameterSet<float>&, bool);

#undef RRWNET_INSTANTIATE_NN

}  // namespace rrwnet::nn
