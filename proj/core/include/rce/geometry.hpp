#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rce/numeric.hpp"
#include "rce/tensor.hpp"

namespace rce::geometry {

/// Final softmax layer z -> W z + b with W [L x m], b [L].
struct SoftmaxGeometry {
  Tensor weight;
  Tensor bias;

  std::size_t classes() const { return weight.extent(0); }
  std::size_t hidden() const { return weight.extent(1); }
  /// Throws unless shapes agree, L >= 2 and the rows of W are pairwise distinct.
  void validate() const;
};

/// Standard normal W and b; m drawn from [L, L + 4] when `hidden` is 0.
SoftmaxGeometry random_geometry(std::size_t classes, Rng& rng, std::size_t hidden = 0);

std::vector<double> logits_at(const SoftmaxGeometry& geom, std::span<const double> z);

/// Least-squares (minimum-norm) solution z of W z + b = target.
struct Solve {
  std::vector<double> z;
  double residual = 0.0;
};
Solve solve_logits(const SoftmaxGeometry& geom, std::span<const double> target);

struct Shift {
  std::vector<double> z;
  double residual = 0.0;
  /// z' still has `label` as its argmax.
  bool in_region = true;
};

/// z' with W z' + b = W z + b + delta. `delta` must be equal on every class
/// except `label`. Throws when the residual is 1e-9 or larger.
Shift shift_along_manifold(const SoftmaxGeometry& geom, std::span<const double> z, std::size_t label,
                           std::span<const double> delta);

/// Non-ME of softmax(logits).
double non_me_of_logits(std::span<const double> logits);

/// Closed-form max of F_yhat over Q0 on the decision boundary:
/// 1 / (2 + sum_{i != yhat, k} exp(C_ik)) with k the largest non-yhat logit.
double theorem1_bound(std::span<const double> logits, std::size_t label);

/// ||softmax(Z) - R_y||_inf.
double reverse_error(std::span<const double> logits, std::size_t y);

struct Report {
  explicit Report(std::string report_name = {}) : name(std::move(report_name)) {}

  std::string name;
  bool passed = true;
  std::size_t checks = 0;
  std::size_t skipped = 0;
  double max_error = 0.0;
  std::string witness;

  void fail(std::string what);
  void observe(double error) { max_error = error > max_error ? error : max_error; }
};

/// Manifold-shift constancy, the log(L - 1) maximum on S_yhat and strictness
/// off it, for `trials` random points of one geometry.
Report verify_lemma1(const SoftmaxGeometry& geom, std::size_t trials, Rng& rng);

/// Equal-logit points give F_yhat = 1/L; on random Q0 manifolds the closed
/// form matches the largest F_yhat found by line bisection to the boundary.
Report verify_theorem1_boundary(const SoftmaxGeometry& geom, std::size_t trials, Rng& rng, std::size_t lines = 64);

/// Premise-filtered random logits; `trials` accepted samples per class count.
Report verify_theorem2(std::size_t trials, std::span<const std::size_t> class_counts, std::uint64_t seed);

struct SuiteConfig {
  std::size_t geometries = 1000;
  std::size_t trials_per_geometry = 4;
  std::size_t theorem2_trials = 10000;
  std::vector<std::size_t> theorem2_classes{2, 3, 10};
  std::size_t min_classes = 2;
  std::size_t max_classes = 10;
  std::uint64_t seed = 0;
};

/// Non-ME and boundary checks over random geometries, plus the RCE consistency check.
std::vector<Report> verify_all(const SuiteConfig& config);

}  // namespace rce::geometry
