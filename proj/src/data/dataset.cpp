#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "rrwnet/data.hpp"
#include "rrwnet/parallel.hpp"

namespace rrwnet::data {

namespace fs = std::filesystem;

DatasetLayout DatasetLayout::for_kind(DatasetKind kind, fs::path root) {
  DatasetLayout l;
  l.root = std::move(root);
  l.kind = kind;
  if (kind == DatasetKind::rite) {
    l.train_dir = "training";
    l.test_dir = "test";
  }
  return l;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool is_png(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png";
}

std::vector<fs::path> png_files(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && is_png(e.path())) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::optional<fs::path> find_mask(const fs::path& dir, const std::string& id) {
  for (const auto& name : {id + ".png", id + "_mask.png"}) {
    const auto p = dir / name;
    if (fs::exists(p)) return p;
  }
  return std::nullopt;
}

// HRF identifiers look like "07_dr": test split is the first five of each
// category.
bool hrf_is_test(const std::string& id) {
  const auto us = id.find('_');
  if (us == std::string::npos) throw DataError("HRF identifier without category: " + id);
  int number = 0;
  try {
    number = std::stoi(id.substr(0, us));
  } catch (const std::exception&) {
    throw DataError("HRF identifier without leading number: " + id);
  }
  return number <= 5;
}

ByteImage resize_bytes(const ByteImage& rgb, std::size_t h, std::size_t w) {
  FloatImage f(rgb.channels, rgb.height, rgb.width);
  for (std::size_t i = 0; i < rgb.data.size(); ++i) f.data[i] = rgb.data[i];
  const auto r = resize_bilinear(f, h, w);
  ByteImage out(rgb.channels, h, w);
  for (std::size_t i = 0; i < r.data.size(); ++i) {
    out.data[i] = static_cast<std::uint8_t>(std::clamp(std::lround(r.data[i]), 0L, 255L));
  }
  return out;
}

}  // namespace

DatasetLayout parse_layout_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open layout manifest " + path.string());
  DatasetLayout layout;
  layout.root = path.parent_path();
  std::map<std::string, std::string> kv;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected key = value");
    }
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  if (kv.count("kind")) layout = DatasetLayout::for_kind(parse_dataset_kind(kv["kind"]), layout.root);
  for (const auto& [k, v] : kv) {
    if (k == "kind") continue;
    else if (k == "root") layout.root = fs::path(v).is_absolute() ? fs::path(v) : path.parent_path() / v;
    else if (k == "images") layout.images_dir = v;
    else if (k == "gt") layout.gt_dir = v;
    else if (k == "masks") layout.mask_dir = v;
    else if (k == "train") layout.train_dir = v;
    else if (k == "test") layout.test_dir = v;
    else throw DataError(path.string() + ": unknown layout key '" + k + "'");
  }
  return layout;
}

DatasetLayout resolve_layout(const fs::path& data_dir, const std::optional<fs::path>& manifest) {
  if (manifest) return parse_layout_manifest(*manifest);
  if (!fs::is_directory(data_dir)) throw DataError("dataset directory not found: " + data_dir.string());
  const auto cfg = data_dir / "layout.cfg";
  if (fs::exists(cfg)) return parse_layout_manifest(cfg);
  return DatasetLayout::for_kind(DatasetKind::custom, data_dir);
}

std::vector<SampleFiles> list_samples(const DatasetLayout& layout) {
  if (!fs::is_directory(layout.root)) {
    throw DataError("dataset directory not found: " + layout.root.string());
  }
  std::vector<SampleFiles> out;
  auto scan = [&](const fs::path& base, auto is_test) {
    for (const auto& img : png_files(base / layout.images_dir)) {
      SampleFiles f;
      f.identifier = img.stem().string();
      f.image = img;
      f.gt = base / layout.gt_dir / (f.identifier + ".png");
      f.mask = find_mask(base / layout.mask_dir, f.identifier);
      f.is_test = is_test(f.identifier);
      out.push_back(std::move(f));
    }
  };
  switch (layout.kind) {
    case DatasetKind::rite:
    case DatasetKind::custom:
      scan(layout.root / layout.train_dir, [](const std::string&) { return false; });
      scan(layout.root / layout.test_dir, [](const std::string&) { return true; });
      break;
    case DatasetKind::hrf:
      scan(layout.root, hrf_is_test);
      break;
    case DatasetKind::les_av:
      scan(layout.root, [](const std::string&) { return true; });
      break;
  }
  std::stable_sort(out.begin(), out.end(), [](const SampleFiles& a, const SampleFiles& b) {
    return a.is_test != b.is_test ? !a.is_test : a.identifier < b.identifier;
  });
  return out;
}

void validate_sample(const FundusSample& s) {
  const std::size_t h = s.roi.height, w = s.roi.width, n = h * w;
  if (s.gt.channels != 3 || !s.gt.same_size(h, w) || !s.crossing.same_size(h, w) ||
      !s.uncertain.same_size(h, w)) {
    throw DataError(s.identifier + ": ground-truth and ROI sizes disagree");
  }
  if (!s.image.empty() && (s.image.channels != 3 || !s.image.same_size(h, w))) {
    throw DataError(s.identifier + ": image and ground-truth sizes disagree");
  }
  for (std::size_t i = 0; i < n; ++i) {
    const bool a = s.gt.data[i] > 0.5f, v = s.gt.data[n + i] > 0.5f, bv = s.gt.data[2 * n + i] > 0.5f;
    if ((a || v) && !bv) throw DataError(s.identifier + ": artery/vein pixel outside the vessel map");
    if (s.crossing.data[i] != (a && v)) throw DataError(s.identifier + ": crossing mask is not A and V");
    if (s.uncertain.data[i] && (a || v)) {
      throw DataError(s.identifier + ": uncertain pixel labelled artery or vein");
    }
    if (bv && !s.roi.data[i]) throw DataError(s.identifier + ": vessel pixel outside the ROI");
  }
}

FundusSample load_sample(const SampleFiles& files, DatasetKind kind, const LoadOptions& options) {
  const ByteImage rgb = read_png_rgb(files.image);
  if (!fs::exists(files.gt)) throw DataError(files.identifier + ": missing ground truth " + files.gt.string());
  const ByteImage gt_rgb = read_png_rgb(files.gt);
  if (!gt_rgb.same_size(rgb)) {
    throw DataError(files.identifier + ": ground truth is " + std::to_string(gt_rgb.width) + "x" +
                    std::to_string(gt_rgb.height) + ", image is " + std::to_string(rgb.width) + "x" +
                    std::to_string(rgb.height));
  }
  Mask roi;
  if (files.mask) {
    const ByteImage m = read_png_gray8(*files.mask);
    if (!m.same_size(rgb)) throw DataError(files.identifier + ": ROI mask size differs from image");
    roi = Mask(1, m.height, m.width);
    for (std::size_t i = 0; i < m.data.size(); ++i) roi.data[i] = m.data[i] >= kBinarizeLevel;
  } else {
    roi = synthesize_roi(rgb);
  }
  const GtMaps gt = decode_gt_rgb(gt_rgb);

  FundusSample s;
  s.identifier = files.identifier;
  s.gt = gt_to_float(gt);
  s.roi = roi;
  s.crossing = gt.crossing;
  s.uncertain = gt.uncertain;
  s.resize = options.apply_resize ? resize_policy(kind, rgb.height, rgb.width)
                                  : ResizeSpec{rgb.height, rgb.width, rgb.height, rgb.width};
  validate_sample(s);

  ByteImage work = rgb;
  if (!s.resize.identity()) {
    const std::size_t h = s.resize.working_height, w = s.resize.working_width;
    work = resize_bytes(rgb, h, w);
    Mask a = resize_nearest(gt.artery, h, w), v = resize_nearest(gt.vein, h, w);
    Mask bv = resize_nearest(gt.vessel, h, w);
    GtMaps small{a, v, bv, resize_nearest(gt.crossing, h, w), resize_nearest(gt.uncertain, h, w)};
    s.gt = gt_to_float(small);
    s.crossing = small.crossing;
    s.uncertain = small.uncertain;
    s.roi = resize_nearest(roi, h, w);
    // Nearest sampling can drop ROI pixels under a vessel at the border.
    for (std::size_t i = 0; i < s.roi.data.size(); ++i) s.roi.data[i] |= small.vessel.data[i];
  }
  if (options.apply_preprocess) {
    s.image = preprocess(work, s.roi, options.preprocess);
  } else {
    s.image = FloatImage(3, work.height, work.width);
    for (std::size_t i = 0; i < work.data.size(); ++i) s.image.data[i] = work.data[i] / 255.0f;
  }
  return s;
}

LoadedDataset load_dataset(const DatasetLayout& layout, const LoadOptions& options) {
  const auto files = list_samples(layout);
  if (files.empty()) throw DataError("no images found under " + layout.root.string());
  std::vector<std::optional<FundusSample>> loaded(files.size());
  std::vector<std::string> errors(files.size());
  parallel_for(files.size(), [&](std::size_t i) {
    try {
      loaded[i] = load_sample(files[i], layout.kind, options);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });
  std::ostringstream report;
  std::size_t n_errors = 0;
  for (const auto& e : errors) {
    if (e.empty()) continue;
    report << "\n  " << e;
    ++n_errors;
  }
  if (n_errors) {
    throw DataError("failed to load " + std::to_string(n_errors) + " sample(s):" + report.str());
  }
  LoadedDataset out;
  for (std::size_t i = 0; i < files.size(); ++i) {
    (files[i].is_test ? out.test : out.train).push_back(std::move(*loaded[i]));
  }
  return out;
}

}  // namespace rrwnet::data
