#pragma once

#include "fvig/tensor.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace fvig {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct Checkpoint {
  std::string metadata;  // UTF-8 key=value lines, may be empty
  std::vector<NamedTensor> tensors;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (all integers little-endian u32, payload little-endian f64):
//   "FVIG" | version | count | metadata length | metadata bytes |
//   count x (name length | name | rank | dims... | values...)
void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws FormatError on bad magic, unsupported version, or truncation.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fvig
