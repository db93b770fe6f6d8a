#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "rrwnet/training.hpp"

namespace rrwnet::train {

void TrainConfig::validate() const {
  if (K < 0) throw ConfigError("K must be non-negative");
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
  if (!(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1)) throw ConfigError("beta1/beta2 must lie in (0,1)");
  if (batch_size != 1) throw ConfigError("batch_size must be 1");
  if (early_stop_patience <= 0) throw ConfigError("early_stop_patience must be positive");
  if (max_epochs <= 0) throw ConfigError("max_epochs must be positive");
  if (fold_count < 1) throw ConfigError("fold_count must be at least 1");
  if (base_channels <= 0 || depth <= 0) throw ConfigError("base_channels and depth must be positive");
  const auto& a = augmentation;
  if (a.gain_min > a.gain_max || a.shift_min > a.shift_max || a.scale_min > a.scale_max ||
      a.cutout_min > a.cutout_max || a.cutout_min < 0) {
    throw ConfigError("augmentation range with min above max");
  }
  if (a.hflip_p < 0 || a.hflip_p > 1 || a.vflip_p < 0 || a.vflip_p > 1) {
    throw ConfigError("flip probabilities must lie in [0,1]");
  }
  if (a.cutout_max_area < 0 || a.cutout_max_area > 1) throw ConfigError("cutout_max_area must lie in [0,1]");
}

nn::RRWNetConfig TrainConfig::network() const {
  // Zero refinement iterations leave the refiner outside the graph.
  const bool base_only = K == 0 && (variant == nn::Variant::rrwnet || variant == nn::Variant::rrwnet_all);
  return nn::RRWNetConfig::make(base_only ? nn::Variant::unet_only : variant, static_cast<std::size_t>(base_channels),
                                static_cast<std::size_t>(depth), static_cast<std::size_t>(K));
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename V>
V parse_number(const std::string& text) {
  V v{};
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) throw std::invalid_argument("not a number");
  return v;
}

bool parse_bool(const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw std::invalid_argument("not a boolean");
}

using Setter = std::function<void(TrainConfig&, const std::string&)>;

const std::vector<std::pair<std::string, Setter>>& setters() {
  static const std::vector<std::pair<std::string, Setter>> table = {
      {"K", [](TrainConfig& c, const std::string& v) { c.K = parse_number<std::int64_t>(v); }},
      {"learning_rate", [](TrainConfig& c, const std::string& v) { c.learning_rate = parse_number<double>(v); }},
      {"beta1", [](TrainConfig& c, const std::string& v) { c.beta1 = parse_number<double>(v); }},
      {"beta2", [](TrainConfig& c, const std::string& v) { c.beta2 = parse_number<double>(v); }},
      {"batch_size", [](TrainConfig& c, const std::string& v) { c.batch_size = parse_number<std::int64_t>(v); }},
      {"early_stop_patience",
       [](TrainConfig& c, const std::string& v) { c.early_stop_patience = parse_number<std::int64_t>(v); }},
      {"max_epochs", [](TrainConfig& c, const std::string& v) { c.max_epochs = parse_number<std::int64_t>(v); }},
      {"seed", [](TrainConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>(v); }},
      {"fold_count", [](TrainConfig& c, const std::string& v) { c.fold_count = parse_number<std::int64_t>(v); }},
      {"variant", [](TrainConfig& c, const std::string& v) { c.variant = nn::parse_variant(v); }},
      {"base_channels",
       [](TrainConfig& c, const std::string& v) { c.base_channels = parse_number<std::int64_t>(v); }},
      {"depth", [](TrainConfig& c, const std::string& v) { c.depth = parse_number<std::int64_t>(v); }},
      {"color_enabled",
       [](TrainConfig& c, const std::string& v) { c.augmentation.color_enabled = parse_bool(v); }},
      {"gain_min", [](TrainConfig& c, const std::string& v) { c.augmentation.gain_min = parse_number<double>(v); }},
      {"gain_max", [](TrainConfig& c, const std::string& v) { c.augmentation.gain_max = parse_number<double>(v); }},
      {"shift_min", [](TrainConfig& c, const std::string& v) { c.augmentation.shift_min = parse_number<double>(v); }},
      {"shift_max", [](TrainConfig& c, const std::string& v) { c.augmentation.shift_max = parse_number<double>(v); }},
      {"affine_enabled",
       [](TrainConfig& c, const std::string& v) { c.augmentation.affine_enabled = parse_bool(v); }},
      {"rotation_deg",
       [](TrainConfig& c, const std::string& v) { c.augmentation.rotation_deg = parse_number<double>(v); }},
      {"scale_min", [](TrainConfig& c, const std::string& v) { c.augmentation.scale_min = parse_number<double>(v); }},
      {"scale_max", [](TrainConfig& c, const std::string& v) { c.augmentation.scale_max = parse_number<double>(v); }},
      {"shear_deg", [](TrainConfig& c, const std::string& v) { c.augmentation.shear_deg = parse_number<double>(v); }},
      {"hflip_p", [](TrainConfig& c, const std::string& v) { c.augmentation.hflip_p = parse_number<double>(v); }},
      {"vflip_p", [](TrainConfig& c, const std::string& v) { c.augmentation.vflip_p = parse_number<double>(v); }},
      {"cutout_enabled",
       [](TrainConfig& c, const std::string& v) { c.augmentation.cutout_enabled = parse_bool(v); }},
      {"cutout_min",
       [](TrainConfig& c, const std::string& v) { c.augmentation.cutout_min = parse_number<std::int64_t>(v); }},
      {"cutout_max",
       [](TrainConfig& c, const std::string& v) { c.augmentation.cutout_max = parse_number<std::int64_t>(v); }},
      {"cutout_max_area",
       [](TrainConfig& c, const std::string& v) { c.augmentation.cutout_max_area = parse_number<double>(v); }},
  };
  return table;
}

}  // namespace

TrainConfig parse_train_config(const std::string& text, const std::string& source) {
  TrainConfig config;
  std::istringstream in(text);
  std::string line;
  std::set<std::string> seen;
  int line_no = 0;
  auto fail = [&](const std::string& msg) {
    throw ConfigError(source + ":" + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto& table = setters();
    auto it = std::find_if(table.begin(), table.end(), [&](const auto& e) { return e.first == key; });
    if (it == table.end()) fail("unknown key '" + key + "'");
    if (!seen.insert(key).second) fail("duplicate key '" + key + "'");
    try {
      it->second(config, value);
    } catch (const std::exception& e) {
      fail("bad value '" + value + "' for " + key + " (" + e.what() + ")");
    }
  }
  try {
    config.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return config;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_train_config(ss.str(), path.string());
}

std::string format_train_config(const TrainConfig& c) {
  std::ostringstream os;
  // Shortest text that parses back to the same double.
  auto d = [](double v) {
    char buf[32];
    return std::string(buf, std::to_chars(buf, buf + sizeof buf, v).ptr);
  };
  const auto& a = c.augmentation;
  os << "K = " << c.K << "\nlearning_rate = " << d(c.learning_rate) << "\nbeta1 = " << d(c.beta1)
     << "\nbeta2 = " << d(c.beta2) << "\nbatch_size = " << c.batch_size
     << "\nearly_stop_patience = " << c.early_stop_patience << "\nmax_epochs = " << c.max_epochs
     << "\nseed = " << c.seed << "\nfold_count = " << c.fold_count
     << "\nvariant = " << nn::variant_name(c.variant) << "\nbase_channels = " << c.base_channels
     << "\ndepth = " << c.depth << std::boolalpha << "\ncolor_enabled = " << a.color_enabled
     << "\ngain_min = " << d(a.gain_min) << "\ngain_max = " << d(a.gain_max) << "\nshift_min = " << d(a.shift_min)
     << "\nshift_max = " << d(a.shift_max) << "\naffine_enabled = " << a.affine_enabled
     << "\nrotation_deg = " << d(a.rotation_deg) << "\nscale_min = " << d(a.scale_min)
     << "\nscale_max = " << d(a.scale_max) << "\nshear_deg = " << d(a.shear_deg) << "\nhflip_p = " << d(a.hflip_p)
     << "\nvflip_p = " << d(a.vflip_p) << "\ncutout_enabled = " << a.cutout_enabled
     << "\ncutout_min = " << a.cutout_min << "\ncutout_max = " << a.cutout_max
     << "\ncutout_max_area = " << d(a.cutout_max_area) << "\n";
  return os.str();
}

std::vector<Fold> cross_validation_split(std::size_t n, std::size_t folds, std::uint64_t seed) {
  if (folds < 2) throw std::invalid_argument("cross_validation_split: need at least 2 folds");
  if (n < folds) {
    throw std::invalid_argument("cross_validation_split: " + std::to_string(n) +
                                " samples cannot fill " + std::to_string(folds) + " folds");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  // Fisher-Yates with an explicit draw so the permutation does not depend on
  // the standard library's shuffle implementation.
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  std::vector<Fold> out(folds);
  std::size_t begin = 0;
  for (std::size_t f = 0; f < folds; ++f) {
    const std::size_t size = n / folds + (f < n % folds ? 1 : 0);
    for (std::size_t i = 0; i < n; ++i) {
      (i >= begin && i < begin + size ? out[f].validation : out[f].train).push_back(order[i]);
    }
    std::sort(out[f].validation.begin(), out[f].validation.end());
    std::sort(out[f].train.begin(), out[f].train.end());
    begin += size;
  }
  return out;
}

}  // namespace rrwnet::train
