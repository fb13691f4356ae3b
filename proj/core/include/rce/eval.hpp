#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "rce/attacks.hpp"
#include "rce/dataset.hpp"
#include "rce/detector.hpp"
#include "rce/network.hpp"

namespace rce::eval {

inline constexpr std::array<double, 5> kEpsilonGrid{0.02, 0.05, 0.1, 0.2, 0.3};

/// P(normal score > adversarial score) with ties counted 1/2.
double roc_auc(std::span<const double> normal, std::span<const double> adversarial);

/// Test points the model classifies correctly whose attacked version
/// succeeds, paired by position.
struct Cohort {
  std::vector<std::size_t> indices;
  std::vector<std::size_t> labels;
  Tensor normal;       ///< empty when the cohort is empty
  Tensor adversarial;  ///< empty when the cohort is empty
  std::vector<attack::AttackResult> results;

  std::size_t size() const noexcept { return indices.size(); }
  bool empty() const noexcept { return indices.empty(); }
};

Cohort build_detection_cohort(const nn::NetworkModel& model, const data::Dataset& test,
                              std::span<const attack::AttackResult> results);
Cohort build_detection_cohort(const nn::NetworkModel& model, const attack::AttackConfig& config,
                              const data::Dataset& test, const detect::DetectorState* detector = nullptr);

/// Detection AUC of the detector's metric on a cohort.
double detection_auc(const detect::DetectorState& detector, const nn::NetworkModel& model, const Cohort& cohort);

struct Series {
  std::vector<double> epsilons;
  std::vector<double> accuracy;
};

/// Accuracy on attacked inputs for every epsilon; epsilon 0 gives clean accuracy.
Series accuracy_vs_epsilon(const nn::NetworkModel& model, attack::Family family, std::span<const double> epsilons,
                           const data::Dataset& subset, std::size_t iterations = 10);

/// ||x - x*||_2 / sqrt(d) with pixels mapped from [-0.5, 0.5] to [0, 255].
double distortion(const Tensor& x, const Tensor& adversarial);

struct DistortionSummary {
  /// NaN where every round failed.
  std::vector<double> per_image;
  double mean = 0.0;
  std::size_t failures = 0;
};

DistortionSummary summarize_distortion(const Tensor& x, std::span<const attack::AttackResult> results);
DistortionSummary minimal_distortion(const nn::NetworkModel& model, const Tensor& x,
                                     std::span<const std::size_t> targets, const attack::AttackConfig& cw_config);

struct Ratio {
  std::size_t positive = 0;
  std::size_t total = 0;
  /// NaN when total is 0.
  double value() const;
};

/// Share of successful C&W-wb results with f2 > 0.
Ratio f2_positive_ratio(std::span<const attack::AttackResult> results);

struct TransferResult {
  /// Inputs correctly classified by both models.
  std::size_t n = 0;
  double direct_rate = 0.0;
  double transfer_rate = 0.0;
  /// Target-side detection AUC on transferred examples, NaN if none fooled the target.
  double auc = 0.0;
  std::size_t transferred = 0;
};

/// Crafts on `substitute`, replays on `target`.
TransferResult transfer_eval(const nn::NetworkModel& substitute, const nn::NetworkModel& target,
                             const detect::DetectorState& target_detector, const attack::AttackConfig& config,
                             const data::Dataset& subset, const detect::DetectorState* substitute_detector = nullptr);

}  // namespace rce::eval
