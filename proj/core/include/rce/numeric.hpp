#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "rce/tensor.hpp"

namespace rce {

/// The one PRNG used everywhere a seed is accepted.
using Rng = std::mt19937_64;

/// Derives an independent stream seed from a parent seed and a stage tag.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stage);

/// Max-shifted softmax of a single logit vector. Throws on non-finite input.
std::vector<double> softmax(std::span<const double> logits);

/// Row-wise softmax of a [N x L] tensor.
Tensor softmax_rows(const Tensor& logits);

double log_sum_exp(std::span<const double> values);

/// Index of the largest element; ties resolve to the lowest index.
std::size_t argmax(std::span<const double> values);
/// Index of the smallest element; ties resolve to the lowest index.
std::size_t argmin(std::span<const double> values);

/// Linear-interpolation percentile, q in [0, 100].
double percentile(std::vector<double> values, double q);

double median(std::vector<double> values);

/// -1, 0 or +1.
inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

/// Seeded Fisher-Yates permutation of [0, n).
std::vector<std::size_t> permutation(std::size_t n, Rng& rng);

}  // namespace rce
