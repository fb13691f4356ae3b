#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rce/tensor.hpp"

namespace rce {

struct NamedTensor {
  std::string name;
  Tensor tensor;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

inline constexpr char kCheckpointMagic[4] = {'R', 'C', 'E', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary tensor container, all integers little-endian:
///
///   "RCE1" | u32 version | u32 tensor count |
///   per tensor: u32 name length | UTF-8 name | u32 rank | u32 extents[rank] |
///               f64 data[prod(extents)]
void write_tensors(std::ostream& out, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> read_tensors(std::istream& in);

void save_tensors(const std::filesystem::path& path, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> load_tensors(const std::filesystem::path& path);

/// Path of the JSON sidecar that accompanies a binary checkpoint.
std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint);

/// Thrown for malformed or truncated checkpoint files.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rce
