#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rce/tensor.hpp"

namespace rce::data {

inline constexpr double kPixelMin = -0.5;
inline constexpr double kPixelMax = 0.5;

/// Maps a 0..255 byte onto [-0.5, 0.5] as v/255 - 0.5.
inline double scale_pixel(std::uint8_t v) { return static_cast<double>(v) / 255.0 - 0.5; }

/// Labeled images in N x C x H x W layout, pixels in [-0.5, 0.5].
struct Dataset {
  Tensor images;
  std::vector<std::size_t> labels;
  std::size_t classes = 0;
  std::string split;

  std::size_t size() const noexcept { return labels.size(); }
  Shape image_shape() const;
  Tensor image(std::size_t i) const;
  Tensor gather(std::span<const std::size_t> indices) const;
  Dataset subset(std::span<const std::size_t> indices) const;
  Dataset head(std::size_t n) const;
  /// Items [begin, end).
  Dataset range(std::size_t begin, std::size_t end) const;

  /// Throws unless pixels lie in [-0.5, 0.5] and labels in [0, classes).
  void validate() const;
};

/// Parses an IDX image file (magic 0x00000803) and label file (magic 0x00000801).
Dataset load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                       std::string split = "");

/// Loads `train` or `t10k` files from a directory holding the standard MNIST names.
Dataset load_mnist(const std::filesystem::path& dir, const std::string& split);

/// CIFAR-10 binary batches: 3073-byte records of one label byte followed by
/// 3072 channel-major pixels (3 x 32 x 32).
Dataset load_cifar_binary(std::span<const std::filesystem::path> paths, std::string split = "");

/// Pads a 32x32 image by 4 pixels per side (40x40), crops the 32x32 window at
/// (offset_y, offset_x) and optionally mirrors it along the width axis.
/// Padding is raw byte 0, i.e. -0.5 after scaling.
Tensor crop_and_flip(const Tensor& image, std::size_t offset_y, std::size_t offset_x, bool flip);

/// Seeded random crop + horizontal flip of every image in an N x C x 32 x 32 batch.
Tensor augment_cifar(const Tensor& batch, std::uint64_t seed);

struct BlobsConfig {
  std::size_t classes = 3;
  std::size_t per_class = 100;
  std::size_t dim = 16;
  double separation = 0.5;
  /// Per-coordinate standard deviation of each cluster.
  double spread = 0.05;
  std::uint64_t seed = 0;
  /// Shape samples as 1 x k x k images (dim must be a perfect square);
  /// otherwise they are 1 x 1 x dim.
  bool as_image = false;
};

/// Gaussian clusters with pairwise center distance >= separation, clipped to
/// the pixel domain. Samples are ordered class by class.
Dataset synthetic_blobs(const BlobsConfig& config);

}  // namespace rce::data
