#pragma once

// Commands behind the `rrwnet` tool. Each one takes an output directory,
// locks it, writes manifest.txt before doing any work, and lays its results
// out as checkpoints/, predictions/ and reports/.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace rrwnet::cli {

inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kInternal = 1, kUsage = 2, kData = 3, kNumeric = 4 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string command;
  std::filesystem::path out;
  std::optional<std::filesystem::path> config;
  std::optional<std::filesystem::path> data;
  std::optional<std::filesystem::path> layout;
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> maps;
  std::optional<std::filesystem::path> predictions;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> K;
  std::optional<std::string> variant;
  std::optional<std::int64_t> folds;
  std::optional<std::int64_t> max_epochs;
  std::optional<std::size_t> paths;
  double threshold = 0.5;
  std::string split = "test";
  std::vector<std::int64_t> k_list = {2, 3, 6, 8, 11};
  std::vector<std::string> variants = {"unet_only", "wnet", "rrunet", "rrwnet_all", "rrwnet"};
  std::size_t train_count = 20;
  std::size_t test_count = 20;
  std::size_t image_size = 64;
  bool curves = false;
};

struct RunManifest {
  std::string command;
  std::string config_path;
  std::uint64_t seed = 0;
  std::string layout;
  std::vector<std::string> checkpoints;
  std::string out_dir;
  std::string timestamp;
  std::string version = kToolVersion;
};

std::string format_manifest(const RunManifest& manifest);
void write_manifest(const std::filesystem::path& out_dir, const RunManifest& manifest);

// Exclusive <out>/.rrwnet.lock for the lifetime of the object.
class OutputLock {
 public:
  explicit OutputLock(const std::filesystem::path& out_dir);
  ~OutputLock();
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  std::filesystem::path path_;
};

// Runs the command; exceptions propagate.
void execute(const Options& options, std::ostream& out);

// Maps an exception to its exit code and prints
// `error code=<NAME> exit=<n>` followed by the message.
int report_error(const std::exception& e, std::ostream& err);

// execute() plus report_error().
int run(const Options& options, std::ostream& out, std::ostream& err);

}  // namespace rrwnet::cli
