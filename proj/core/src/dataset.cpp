#include "rce/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include <fmt/format.h>

#include "rce/numeric.hpp"
#include "rce/serialization.hpp"

namespace rce::data {

Shape Dataset::image_shape() const {
  const auto& s = images.shape();
  return Shape(s.begin() + 1, s.end());
}

Tensor Dataset::image(std::size_t i) const { return images.row(i); }

Tensor Dataset::gather(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw std::invalid_argument("gather of zero items");
  Shape s = images.shape();
  const std::size_t stride = images.size() / s[0];
  s[0] = indices.size();
  Buffer data(indices.size() * stride);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= size()) throw std::out_of_range(fmt::format("item {} of dataset with {}", indices[k], size()));
    std::copy_n(images.raw() + indices[k] * stride, stride, data.data() + k * stride);
  }
  return Tensor(std::move(s), std::move(data));
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset d;
  d.images = gather(indices);
  d.labels.reserve(indices.size());
  for (auto i : indices) d.labels.push_back(labels[i]);
  d.classes = classes;
  d.split = split;
  return d;
}

Dataset Dataset::head(std::size_t n) const { return range(0, std::min(n, size())); }

Dataset Dataset::range(std::size_t begin, std::size_t end) const {
  Dataset d;
  d.images = images.slice(begin, end);
  d.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(begin), labels.begin() + static_cast<std::ptrdiff_t>(end));
  d.classes = classes;
  d.split = split;
  return d;
}

void Dataset::validate() const {
  if (images.rank() != 4) throw std::invalid_argument("dataset images must be N x C x H x W, got " + shape_string(images.shape()));
  if (images.extent(0) != labels.size()) {
    throw std::invalid_argument(fmt::format("{} images but {} labels", images.extent(0), labels.size()));
  }
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!(images[i] >= kPixelMin && images[i] <= kPixelMax)) {
      throw std::invalid_argument(fmt::format("pixel {} = {} outside [-0.5, 0.5]", i, images[i]));
    }
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) throw std::invalid_argument(fmt::format("label {} of item {} not below {}", labels[i], i, classes));
  }
}

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t offset, const std::filesystem::path& path) {
  if (offset + 4 > b.size()) {
    throw FormatError(fmt::format("{}: truncated IDX header at offset {}", path.string(), offset));
  }
  return (static_cast<std::uint32_t>(b[offset]) << 24) | (static_cast<std::uint32_t>(b[offset + 1]) << 16) |
         (static_cast<std::uint32_t>(b[offset + 2]) << 8) | static_cast<std::uint32_t>(b[offset + 3]);
}

}  // namespace

Dataset load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels, std::string split) {
  const auto ib = read_file(images);
  const auto lb = read_file(labels);

  const auto imagic = be32(ib, 0, images);
  if (imagic != 0x00000803) {
    throw FormatError(fmt::format("{}: bad image magic 0x{:08x} at offset 0", images.string(), imagic));
  }
  const auto lmagic = be32(lb, 0, labels);
  if (lmagic != 0x00000801) {
    throw FormatError(fmt::format("{}: bad label magic 0x{:08x} at offset 0", labels.string(), lmagic));
  }
  const std::size_t n = be32(ib, 4, images);
  const std::size_t rows = be32(ib, 8, images);
  const std::size_t cols = be32(ib, 12, images);
  const std::size_t nl = be32(lb, 4, labels);
  if (n != nl) {
    throw FormatError(fmt::format("image count {} (offset 4 of {}) does not match label count {} (offset 4 of {})", n,
                                  images.string(), nl, labels.string()));
  }
  if (n == 0 || rows == 0 || cols == 0) throw FormatError(images.string() + ": empty IDX dimensions at offset 4");
  const std::size_t pixels = rows * cols;
  if (ib.size() < 16 + n * pixels) {
    throw FormatError(fmt::format("{}: truncated image data at offset {}", images.string(), ib.size()));
  }
  if (lb.size() < 8 + n) throw FormatError(fmt::format("{}: truncated label data at offset {}", labels.string(), lb.size()));

  Dataset d;
  d.images = Tensor(Shape{n, 1, rows, cols});
  for (std::size_t i = 0; i < n * pixels; ++i) d.images[i] = scale_pixel(ib[16 + i]);
  d.labels.resize(n);
  std::size_t max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    d.labels[i] = lb[8 + i];
    max_label = std::max(max_label, d.labels[i]);
  }
  d.classes = std::max<std::size_t>(10, max_label + 1);
  d.split = std::move(split);
  return d;
}

Dataset load_mnist(const std::filesystem::path& dir, const std::string& split) {
  const std::string prefix = (split == "test" || split == "t10k") ? "t10k" : "train";
  return load_mnist_idx(dir / (prefix + "-images-idx3-ubyte"), dir / (prefix + "-labels-idx1-ubyte"),
                        prefix == "t10k" ? "test" : "train");
}

Dataset load_cifar_binary(std::span<const std::filesystem::path> paths, std::string split) {
  constexpr std::size_t kRecord = 3073;
  constexpr std::size_t kPixels = 3072;
  std::vector<std::uint8_t> all;
  for (const auto& p : paths) {
    auto b = read_file(p);
    if (b.size() % kRecord != 0) {
      throw FormatError(fmt::format("{}: size {} is not a multiple of {} (trailing record at offset {})", p.string(),
                                    b.size(), kRecord, b.size() - b.size() % kRecord));
    }
    all.insert(all.end(), b.begin(), b.end());
  }
  const std::size_t n = all.size() / kRecord;
  if (n == 0) throw FormatError("no CIFAR records found");
  Dataset d;
  d.images = Tensor(Shape{n, 3, 32, 32});
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* rec = all.data() + i * kRecord;
    if (rec[0] > 9) throw FormatError(fmt::format("label byte {} out of range at offset {}", rec[0], i * kRecord));
    d.labels[i] = rec[0];
    for (std::size_t j = 0; j < kPixels; ++j) d.images[i * kPixels + j] = scale_pixel(rec[1 + j]);
  }
  d.classes = 10;
  d.split = std::move(split);
  return d;
}

Tensor crop_and_flip(const Tensor& image, std::size_t offset_y, std::size_t offset_x, bool flip) {
  constexpr std::size_t kSize = 32;
  constexpr std::size_t kPad = 4;
  if (image.rank() != 3 || image.extent(1) != kSize || image.extent(2) != kSize) {
    throw std::invalid_argument("crop_and_flip expects C x 32 x 32, got " + shape_string(image.shape()));
  }
  if (offset_y > 2 * kPad || offset_x > 2 * kPad) {
    throw std::invalid_argument(fmt::format("crop offset ({}, {}) outside [0, 8]", offset_y, offset_x));
  }
  const std::size_t C = image.extent(0);
  Tensor out(image.shape(), kPixelMin);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t y = 0; y < kSize; ++y) {
      const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + offset_y) - static_cast<std::ptrdiff_t>(kPad);
      if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(kSize)) continue;
      for (std::size_t x = 0; x < kSize; ++x) {
        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + offset_x) - static_cast<std::ptrdiff_t>(kPad);
        if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(kSize)) continue;
        const std::size_t dx = flip ? kSize - 1 - x : x;
        out.at({c, y, dx}) = image.at({c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx)});
      }
    }
  }
  return out;
}

Tensor augment_cifar(const Tensor& batch, std::uint64_t seed) {
  if (batch.rank() != 4 || batch.extent(2) != 32 || batch.extent(3) != 32) {
    throw std::invalid_argument("augment_cifar expects N x C x 32 x 32, got " + shape_string(batch.shape()));
  }
  Rng rng(seed);
  std::vector<Tensor> out;
  out.reserve(batch.extent(0));
  for (std::size_t n = 0; n < batch.extent(0); ++n) {
    const auto oy = static_cast<std::size_t>(rng() % 9);
    const auto ox = static_cast<std::size_t>(rng() % 9);
    const bool flip = (rng() & 1U) != 0;
    out.push_back(crop_and_flip(batch.row(n), oy, ox, flip));
  }
  return stack(out);
}

Dataset synthetic_blobs(const BlobsConfig& config) {
  if (!(config.separation > 0.0)) throw std::invalid_argument("blobs: separation must be positive");
  if (config.classes == 0 || config.per_class == 0 || config.dim == 0) {
    throw std::invalid_argument("blobs: classes, per_class and dim must be positive");
  }
  std::size_t side = 0;
  if (config.as_image) {
    side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(config.dim))));
    if (side * side != config.dim) {
      throw std::invalid_argument(fmt::format("blobs: dim {} is not square, cannot shape as an image", config.dim));
    }
  }

  Rng rng(config.seed);
  std::uniform_real_distribution<double> unit(-0.4, 0.4);
  std::vector<std::vector<double>> centers;
  constexpr int kMaxTries = 100000;
  int tries = 0;
  while (centers.size() < config.classes) {
    if (++tries > kMaxTries) {
      throw std::invalid_argument(fmt::format("blobs: cannot place {} centers {} apart in {} dimensions", config.classes,
                                              config.separation, config.dim));
    }
    std::vector<double> c(config.dim);
    for (auto& v : c) v = unit(rng);
    bool ok = true;
    for (const auto& other : centers) {
      double d2 = 0.0;
      for (std::size_t i = 0; i < config.dim; ++i) d2 += (c[i] - other[i]) * (c[i] - other[i]);
      if (std::sqrt(d2) < config.separation) {
        ok = false;
        break;
      }
    }
    if (ok) centers.push_back(std::move(c));
  }

  const std::size_t n = config.classes * config.per_class;
  Shape shape = config.as_image ? Shape{n, 1, side, side} : Shape{n, 1, 1, config.dim};
  Dataset d;
  d.images = Tensor(shape);
  d.labels.resize(n);
  d.classes = config.classes;
  d.split = "synthetic";
  std::normal_distribution<double> noise(0.0, config.spread);
  for (std::size_t k = 0; k < config.classes; ++k) {
    for (std::size_t j = 0; j < config.per_class; ++j) {
      const std::size_t idx = k * config.per_class + j;
      d.labels[idx] = k;
      for (std::size_t i = 0; i < config.dim; ++i) {
        d.images[idx * config.dim + i] = std::clamp(centers[k][i] + noise(rng), kPixelMin, kPixelMax);
      }
    }
  }
  return d;
}

}  // namespace rce::data
