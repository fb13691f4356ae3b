#include "rce/serialization.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

#include <fmt/format.h>

namespace rce {

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                         static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  out.write(bytes, 4);
}

void put_f64(std::ostream& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  out.write(bytes, 8);
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > std::numeric_limits<std::uint32_t>::max()) {
    throw std::length_error(fmt::format("{} {} does not fit the checkpoint format", what, v));
  }
  return static_cast<std::uint32_t>(v);
}

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  void bytes(char* dst, std::size_t n, const char* what) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw FormatError(fmt::format("truncated checkpoint while reading {} at offset {}", what, offset_));
    }
    offset_ += n;
  }

  std::uint32_t u32(const char* what) {
    unsigned char b[4];
    bytes(reinterpret_cast<char*>(b), 4, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }

  double f64(const char* what) {
    unsigned char b[8];
    bytes(reinterpret_cast<char*>(b), 8, what);
    std::uint64_t bits = 0;
    for (int i = 7; i >= 0; --i) bits = (bits << 8) | b[i];
    return std::bit_cast<double>(bits);
  }

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::istream& in_;
  std::size_t offset_ = 0;
};

}  // namespace

void write_tensors(std::ostream& out, std::span<const NamedTensor> tensors) {
  out.write(kCheckpointMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, checked_u32(tensors.size(), "tensor count"));
  for (const auto& nt : tensors) {
    put_u32(out, checked_u32(nt.name.size(), "name length"));
    out.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
    put_u32(out, checked_u32(nt.tensor.rank(), "rank"));
    for (auto e : nt.tensor.shape()) put_u32(out, checked_u32(e, "extent"));
    for (double v : nt.tensor.data()) put_f64(out, v);
  }
  if (!out) throw std::runtime_error("failed writing checkpoint stream");
}

std::vector<NamedTensor> read_tensors(std::istream& in) {
  Reader r(in);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw FormatError("bad checkpoint magic at offset 0");
  const auto version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError(fmt::format("unsupported checkpoint version {} at offset 4", version));
  }
  const auto count = r.u32("tensor count");
  std::vector<NamedTensor> result;
  result.reserve(count);
  for (std::uint32_t t = 0; t < count; ++t) {
    NamedTensor nt;
    const auto name_len = r.u32("name length");
    nt.name.resize(name_len);
    r.bytes(nt.name.data(), name_len, "name");
    const auto rank = r.u32("rank");
    Shape shape(rank);
    for (auto& e : shape) {
      e = r.u32("extent");
      if (e == 0) throw FormatError(fmt::format("zero extent in tensor '{}' at offset {}", nt.name, r.offset() - 4));
    }
    Buffer data(shape_size(shape));
    for (auto& v : data) v = r.f64("tensor data");
    nt.tensor = Tensor(std::move(shape), std::move(data));
    result.push_back(std::move(nt));
  }
  return result;
}

void save_tensors(const std::filesystem::path& path, std::span<const NamedTensor> tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_tensors(out, tensors);
}

std::vector<NamedTensor> load_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_tensors(in);
}

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  p += ".json";
  return p;
}

}  // namespace rce
