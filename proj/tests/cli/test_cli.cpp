#include "doctest.h"

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "rrwnet/cli.hpp"
#include "rrwnet/data.hpp"
#include "rrwnet/pipeline.hpp"
#include "rrwnet/synth.hpp"

namespace fs = std::filesystem;
using namespace rrwnet;

namespace {

const fs::path kTool = RRWNET_CLI_PATH;
const fs::path kGolden = RRWNET_GOLDEN_DIR;

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

fs::path scratch() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "rrwnet_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Result tool(const std::string& args) {
  const auto out = scratch() / "stdout.txt", err = scratch() / "stderr.txt";
  const std::string cmd = kTool.string() + " " + args + " > " + out.string() + " 2> " + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

void write_file(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << text;
}

// A small synthetic dataset plus a tiny-network config, shared by the tests.
const fs::path& dataset() {
  static const fs::path d = [] {
    const auto dir = scratch() / "ds";
    synth::write_dataset(dir, 10, 6, 11);
    return dir;
  }();
  return d;
}

const fs::path& tiny_config() {
  static const fs::path p = [] {
    const auto path = scratch() / "tiny.cfg";
    write_file(path, "K = 2\nbase_channels = 4\ndepth = 3\nmax_epochs = 3\nearly_stop_patience = 5\n");
    return path;
  }();
  return p;
}

const fs::path& trained_run() {
  static const fs::path run = [] {
    const auto out = scratch() / "train";
    const auto r = tool("train --config " + tiny_config().string() + " --data " + dataset().string() + " --out " +
                          out.string() + " --folds 2");
    REQUIRE(r.code == 0);
    return out;
  }();
  return run;
}

}  // namespace

TEST_CASE("help output matches the golden files") {
  for (std::string cmd : {"", "train", "predict", "refine", "evaluate", "ksearch", "ablate", "synth"}) {
    const auto r = tool(cmd + " --help");
    CHECK(r.code == 0);
    const auto golden = kGolden / ("help_" + (cmd.empty() ? std::string("main") : cmd) + ".txt");
    INFO("subcommand: ", cmd);
    CHECK(r.out == slurp(golden));
  }
}

TEST_CASE("usage errors exit 2 with a machine-readable first line") {
  auto r = tool("");
  CHECK(r.code == cli::kUsage);
  CHECK(first_line(r.err) == "error code=E_USAGE exit=2");
  r = tool("train --out " + (scratch() / "u1").string());
  CHECK(r.code == cli::kUsage);
  r = tool("bogus");
  CHECK(r.code == cli::kUsage);

  write_file(scratch() / "bad.cfg", "K = 2\nlearning_rat = 1\n");
  r = tool("train --config " + (scratch() / "bad.cfg").string() + " --data " + dataset().string() + " --out " +
             (scratch() / "u2").string());
  CHECK(r.code == cli::kUsage);
  CHECK(first_line(r.err) == "error code=E_USAGE exit=2");
  CHECK(r.err.find("bad.cfg:2: unknown key") != std::string::npos);

  r = tool("ablate --variants rrwnet,vnet --data " + dataset().string() + " --out " + (scratch() / "u3").string());
  CHECK(r.code == cli::kUsage);
  CHECK(r.err.find("vnet") != std::string::npos);
  CHECK(!fs::exists(scratch() / "u3" / "checkpoints"));
}

TEST_CASE("missing dataset is a data error naming the path") {
  const auto missing = scratch() / "no_such_dataset";
  const auto r = tool("train --data " + missing.string() + " --out " + (scratch() / "m").string());
  CHECK(r.code == cli::kData);
  CHECK(first_line(r.err) == "error code=E_DATA exit=3");
  CHECK(r.err.find(missing.string()) != std::string::npos);
}

TEST_CASE("synth is seeded") {
  CHECK(tool("synth --out " + (scratch() / "s1").string() + " --train-count 2 --test-count 1 --seed 4").code == 0);
  CHECK(tool("synth --out " + (scratch() / "s2").string() + " --train-count 2 --test-count 1 --seed 4").code == 0);
  for (const char* rel : {"train/images/000.png", "train/av/001.png", "test/images/002.png", "test/mask/002.png"}) {
    CHECK(slurp(scratch() / "s1" / rel) == slurp(scratch() / "s2" / rel));
  }
  CHECK(fs::exists(scratch() / "s1" / "manifest.txt"));
}

TEST_CASE("train writes the manifest, fold checkpoints and best.ckpt") {
  const auto& run = trained_run();
  for (const char* rel : {"manifest.txt", "checkpoints/fold_0.ckpt", "checkpoints/fold_1.ckpt",
                          "checkpoints/best.ckpt", "reports/train_fold_0.csv", "reports/folds.csv"}) {
    CHECK(fs::exists(run / rel));
  }
  CHECK(!fs::exists(run / ".rrwnet.lock"));
  const auto manifest = slurp(run / "manifest.txt");
  for (const char* key : {"command = train", "seed = 0", "layout = custom", "checkpoint = ", "timestamp = ",
                          "version = "}) {
    CHECK(manifest.find(key) != std::string::npos);
  }
  const auto log = slurp(run / "reports" / "train_fold_0.csv");
  CHECK(log.rfind("epoch,train_loss,val_loss,best_so_far,seconds\n1,", 0) == 0);
}

TEST_CASE("four folds by default") {
  const auto out = scratch() / "train4";
  const auto r = tool("train --config " + tiny_config().string() + " --data " + dataset().string() + " --out " +
                        out.string() + " --max-epochs 1");
  REQUIRE(r.code == 0);
  for (int f = 0; f < 4; ++f) CHECK(fs::exists(out / "checkpoints" / ("fold_" + std::to_string(f) + ".ckpt")));
  CHECK(fs::exists(out / "checkpoints" / "best.ckpt"));
}

TEST_CASE("single-fold smoke run with the default network") {
  const auto out = scratch() / "smoke";
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = tool("train --data " + dataset().string() + " --out " + out.string() + " --folds 1 --max-epochs 2");
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(r.code == 0);
  CHECK(fs::exists(out / "checkpoints" / "best.ckpt"));
  MESSAGE("default-network smoke run took " << seconds << " s");
  CHECK(seconds < 300);
}

TEST_CASE("predict writes four files per image at the original size, reproducibly") {
  const auto ckpt = trained_run() / "checkpoints" / "best.ckpt";
  const auto a = scratch() / "pa", b = scratch() / "pb";
  REQUIRE(tool("predict --checkpoint " + ckpt.string() + " --data " + dataset().string() + " --out " + a.string()).code ==
          0);
  REQUIRE(tool("predict --checkpoint " + ckpt.string() + " --data " + dataset().string() + " --out " + b.string()).code ==
          0);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a / "predictions")) {
    ++files;
    CHECK(slurp(e.path()) == slurp(b / "predictions" / e.path().filename()));
  }
  CHECK(files == 6 * 4);
  const auto img = data::read_png_rgb(dataset() / "test" / "images" / "010.png");
  const auto map = data::read_png_gray16(a / "predictions" / "010_vein.png");
  CHECK((map.height == img.height && map.width == img.width));

  write_file(scratch() / "other.cfg", "K = 3\nbase_channels = 4\ndepth = 3\n");
  auto r = tool("predict --checkpoint " + ckpt.string() + " --data " + dataset().string() + " --out " +
                  (scratch() / "pc").string() + " --config " + (scratch() / "other.cfg").string());
  CHECK(r.code == cli::kUsage);
  CHECK(r.err.find("checkpoint/config mismatch") != std::string::npos);
  r = tool("predict --checkpoint " + (scratch() / "nope.ckpt").string() + " --data " + dataset().string() +
             " --out " + (scratch() / "pd").string());
  CHECK(r.code == cli::kData);
}

TEST_CASE("evaluate: ground truth against itself, then one tampered pixel") {
  const auto pred = scratch() / "gt_as_pred";
  data::LoadOptions raw;
  raw.apply_preprocess = false;
  const auto ds = data::load_dataset(data::resolve_layout(dataset()), raw);
  for (const auto& s : ds.test) pipeline::write_prediction(pred, s.identifier, s.gt);

  auto r = tool("evaluate --predictions " + pred.string() + " --data " + dataset().string() + " --out " +
                  (scratch() / "e1").string() + " --paths 200 --curves");
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(slurp(scratch() / "e1" / "reports" / "metrics.json"));
  CHECK(j["mean"]["auroc"]["vessel"].get<double>() == 1.0);
  CHECK(j["mean"]["av"]["all_gt"]["accuracy"].get<double>() == 100.0);
  CHECK(j["mean"]["bv"]["sensitivity"].get<double>() == 100.0);
  CHECK(j["mean"]["topology"]["artery"]["cor"].get<double>() == 100.0);
  CHECK(j["mean"]["topology"]["vein"]["inf"].get<double>() == 0.0);
  CHECK(j["topology_config"]["n_paths"].get<int>() == 200);
  CHECK(j["images"].size() == ds.test.size());
  for (const char* key : {"identifier", "auroc", "aupr", "av", "bv", "topology"}) CHECK(j["images"][0].contains(key));
  CHECK(fs::exists(scratch() / "e1" / "reports" / "metrics.csv"));
  CHECK(fs::exists(scratch() / "e1" / "reports" / "metrics_curves.csv"));

  // Flip one vessel pixel of the first image to background.
  const auto& s = ds.test.front();
  auto tampered = s.gt;
  const std::size_t n = s.roi.plane_size();
  std::size_t i = 0;
  while (tampered.data[2 * n + i] < 0.5f) ++i;
  for (std::size_t c = 0; c < 3; ++c) tampered.data[c * n + i] = 0.0f;
  pipeline::write_prediction(pred, s.identifier, tampered);
  r = tool("evaluate --predictions " + pred.string() + " --data " + dataset().string() + " --out " +
             (scratch() / "e2").string() + " --paths 200");
  REQUIRE(r.code == 0);
  CHECK(slurp(scratch() / "e2" / "reports" / "metrics.csv") != slurp(scratch() / "e1" / "reports" / "metrics.csv"));

  fs::remove(pipeline::map_path(pred, s.identifier, 1));
  r = tool("evaluate --predictions " + pred.string() + " --data " + dataset().string() + " --out " +
             (scratch() / "e3").string());
  CHECK(r.code == cli::kData);
  CHECK(r.err.find(s.identifier + "_vein.png") != std::string::npos);
}

TEST_CASE("refine: K=0 passes maps through, before/after reports with ground truth") {
  const auto ckpt = trained_run() / "checkpoints" / "best.ckpt";
  const auto maps = scratch() / "ext_maps";
  data::LoadOptions raw;
  raw.apply_preprocess = false;
  const auto ds = data::load_dataset(data::resolve_layout(dataset()), raw);
  for (const auto& s : ds.test) {
    FloatImage soft = s.gt;
    for (auto& v : soft.data) v = 0.2f + 0.6f * v;
    pipeline::write_prediction(maps, s.identifier, soft);
    fs::remove(maps / (s.identifier + "_rgb.png"));
  }
  REQUIRE(tool("refine --checkpoint " + ckpt.string() + " --maps " + maps.string() + " --k 0 --out " +
                 (scratch() / "r0").string())
              .code == 0);
  for (const auto& s : ds.test) {
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(data::read_png_gray16(pipeline::map_path(scratch() / "r0" / "predictions", s.identifier, c)) ==
            data::read_png_gray16(pipeline::map_path(maps, s.identifier, c)));
    }
  }

  const auto r = tool("refine --checkpoint " + ckpt.string() + " --maps " + maps.string() + " --data " +
                        dataset().string() + " --out " + (scratch() / "r2").string() + " --paths 50");
  REQUIRE(r.code == 0);
  for (const char* rel : {"reports/before.json", "reports/after.json", "reports/refine_accuracy.csv"}) {
    CHECK(fs::exists(scratch() / "r2" / rel));
  }
  // The vessel map is never refined.
  const auto id = ds.test.front().identifier;
  CHECK(data::read_png_gray16(pipeline::map_path(scratch() / "r2" / "predictions", id, 2)) ==
        data::read_png_gray16(pipeline::map_path(maps, id, 2)));
  CHECK(data::read_png_gray16(pipeline::map_path(scratch() / "r2" / "predictions", id, 0)) !=
        data::read_png_gray16(pipeline::map_path(maps, id, 0)));

  fs::remove(pipeline::map_path(maps, id, 1));
  const auto bad = tool("refine --checkpoint " + ckpt.string() + " --maps " + maps.string() + " --out " +
                          (scratch() / "r3").string());
  CHECK(bad.code == cli::kData);
  CHECK(bad.err.find(id + "_vein.png") != std::string::npos);
}

TEST_CASE("a locked output directory is refused") {
  const auto out = scratch() / "locked";
  fs::create_directories(out);
  std::ofstream(out / ".rrwnet.lock") << "1\n";
  const auto r = tool("synth --out " + out.string() + " --train-count 1 --test-count 0");
  CHECK(r.code == cli::kUsage);
  CHECK(r.err.find("locked") != std::string::npos);
  CHECK(!fs::exists(out / "manifest.txt"));
}

TEST_CASE("non-finite training aborts with exit 4 and a diagnostic checkpoint") {
  write_file(scratch() / "explode.cfg", "K = 1\nbase_channels = 4\ndepth = 2\nlearning_rate = 1e30\nmax_epochs = 20\n");
  const auto out = scratch() / "explode";
  const auto r = tool("train --config " + (scratch() / "explode.cfg").string() + " --data " + dataset().string() +
                        " --out " + out.string() + " --folds 2");
  CHECK(r.code == cli::kNumeric);
  CHECK(first_line(r.err) == "error code=E_NUMERIC exit=4");
  CHECK(fs::exists(out / "checkpoints" / "diagnostic.ckpt"));
}

TEST_CASE("ksearch and ablate tables") {
  auto r = tool("ksearch --config " + tiny_config().string() + " --data " + dataset().string() + " --out " +
                  (scratch() / "k0").string() + " --k-list 0 --folds 2 --max-epochs 1 --paths 50");
  REQUIRE(r.code == 0);
  auto table = slurp(scratch() / "k0" / "reports" / "ksearch.csv");
  CHECK(table.rfind("metric,K=0_mean,K=0_std,best\n", 0) == 0);
  CHECK(table.find("\nauroc_artery,") != std::string::npos);
  CHECK(table.find("\nbv_accuracy,") != std::string::npos);
  CHECK(slurp(scratch() / "k0" / "reports" / "ksearch_selected.txt").rfind("K = 0\n", 0) == 0);

  r = tool("ablate --config " + tiny_config().string() + " --data " + dataset().string() + " --out " +
             (scratch() / "a1").string() + " --variants unet_only --folds 2 --max-epochs 1 --paths 50");
  REQUIRE(r.code == 0);
  table = slurp(scratch() / "a1" / "reports" / "ablation.csv");
  CHECK(table.rfind("metric,unet_only_mean,unet_only_std,best\n", 0) == 0);
  CHECK(table.find("p_value") == std::string::npos);

  r = tool("ablate --config " + tiny_config().string() + " --data " + dataset().string() + " --out " +
             (scratch() / "a2").string() + " --variants unet_only,wnet --folds 2 --max-epochs 1 --paths 50");
  REQUIRE(r.code == 0);
  std::istringstream rows(slurp(scratch() / "a2" / "reports" / "ablation.csv"));
  std::string line;
  std::getline(rows, line);
  CHECK(line == "metric,unet_only_mean,unet_only_std,wnet_mean,wnet_std,best,second,p_value");
  std::size_t n_rows = 0;
  while (std::getline(rows, line)) {
    ++n_rows;
    const auto p = line.substr(line.rfind(',') + 1);
    if (p == "NA") continue;
    const double v = std::stod(p);
    CHECK(v > 0.0);
    CHECK(v <= 1.0);
  }
  CHECK(n_rows == 12);
}
