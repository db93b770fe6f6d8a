#pragma once

// Binary checkpoint container. Layout (all integers little-endian):
//
//   "RRWN"                          4 bytes magic
//   u32 version                     currently 1
//   u32 n_meta
//   n_meta x { str key, str value } str = u32 byte length + UTF-8 bytes
//   u32 n_tensors
//   n_tensors x {
//     str name
//     u32 ndim, ndim x u32 dims
//     prod(dims) x f32 values       IEEE-754 binary32, little-endian
//   }
//
// Metadata carries the architecture config and training provenance as text
// so the container stays independent of any network definition.

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "rrwnet/tensor.hpp"

namespace rrwnet::ad {

inline constexpr char kCheckpointMagic[4] = {'R', 'R', 'W', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StoredTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct CheckpointFile {
  std::map<std::string, std::string> metadata;
  std::vector<StoredTensor> tensors;

  const StoredTensor* find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const CheckpointFile& ckpt);
CheckpointFile load_checkpoint(const std::filesystem::path& path);

std::string encode_checkpoint(const CheckpointFile& ckpt);
CheckpointFile decode_checkpoint(const std::string& bytes);

}  // namespace rrwnet::ad
