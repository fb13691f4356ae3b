#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "rce/dataset.hpp"
#include "rce/network.hpp"
#include "rce/tape.hpp"

namespace rce::detect {

enum class Metric { Confidence, NonMe, KDensity };

std::string_view to_string(Metric metric);
Metric parse_metric(std::string_view text);

/// F(x)_yhat.
double confidence_metric(std::span<const double> probs);
/// Entropy of the non-maximal probabilities renormalized to sum 1.
double non_me_metric(std::span<const double> probs);

/// exp(-|a - b|^2 / sigma2).
double gaussian_kernel(std::span<const double> a, std::span<const double> b, double sigma2);
/// log of the mean Gaussian kernel between `z` and the rows of `bank` [n x m].
double log_kdensity(const Tensor& bank, std::span<const double> z, double sigma2);
double kdensity(const Tensor& bank, std::span<const double> z, double sigma2);

/// Row r of the result is log KD(hidden_r) against *banks[r]; hidden [N x m] -> [N].
/// Gradients flow into `hidden`.
Var log_kdensity(Tape& tape, Var hidden, std::span<const Tensor* const> banks, double sigma2);

/// 1/0.26 for CE-style objectives, 0.1/0.26 for RCE.
double default_bandwidth(nn::Objective objective);

struct DetectorConfig {
  Metric metric = Metric::KDensity;
  double sigma2 = 1.0 / 0.26;
  /// Per-class bank size limit, 0 for unlimited. Larger classes are
  /// sub-sampled with `seed`.
  std::size_t bank_cap = 0;
  std::uint64_t seed = 0;
};

/// Fitted detector: per-class hidden banks, bandwidth and threshold.
///
/// Scores live in a "score domain" where larger means more normal: the
/// probability for confidence, the entropy for non-ME and log KD for
/// K-density. The threshold T is kept in the same domain, which leaves
/// every comparison and AUC unchanged while avoiding underflow of KD.
class DetectorState {
 public:
  DetectorState() = default;

  static DetectorState fit(const nn::NetworkModel& model, const data::Dataset& train, const DetectorConfig& config);
  /// Builds a state from explicit banks (one [n_k x m] tensor per class).
  static DetectorState from_banks(Metric metric, std::vector<Tensor> banks, double sigma2);

  Metric metric() const noexcept { return metric_; }
  double sigma2() const noexcept { return sigma2_; }
  double threshold() const noexcept { return threshold_; }
  double percentile_q() const noexcept { return q_; }
  void set_threshold(double threshold, double q);
  bool fitted() const noexcept { return !banks_.empty(); }

  std::size_t classes() const noexcept { return banks_.size(); }
  const Tensor& bank(std::size_t label) const;
  std::vector<std::size_t> class_counts() const;

  /// Score-domain metric for every row of an evaluation.
  std::vector<double> scores(const nn::Evaluation& ev) const;
  std::vector<double> scores(const nn::NetworkModel& model, const Tensor& batch) const;

  /// K-density (not its log) of one input [C x H x W] under its predicted class.
  double kdensity_score(const nn::NetworkModel& model, const Tensor& image) const;
  /// log KD of hidden vector `z` against the bank of `label`.
  double log_kdensity_of(std::span<const double> z, std::size_t label) const;

  void save(const std::filesystem::path& path) const;
  static DetectorState load(const std::filesystem::path& path);

 private:
  void require_fitted() const;

  Metric metric_ = Metric::KDensity;
  double sigma2_ = 1.0;
  double threshold_ = -std::numeric_limits<double>::infinity();
  double q_ = 0.0;
  std::vector<Tensor> banks_;
};

/// Median of -log KD over `train`, each item scored against the bank of its
/// predicted class with its own bank entry left out. Exact copies of the
/// query in the bank count as its own entry.
double training_median_neg_log_kd(const DetectorState& state, const nn::NetworkModel& model,
                                  const data::Dataset& train);

/// q-th percentile of the score over correctly classified reference points.
/// q = 0 returns a value just below the minimum so every reference point passes.
double threshold_select(const DetectorState& state, const nn::NetworkModel& model, const data::Dataset& reference,
                        double q);
/// Same rule over already-filtered reference scores.
double threshold_from_scores(std::vector<double> scores, double q);

/// Label when the metric strictly exceeds T, std::nullopt (NOT SURE) otherwise.
std::optional<std::size_t> thresholded_predict(double score, std::size_t label, double threshold);
std::vector<std::optional<std::size_t>> thresholded_predict(const DetectorState& state, const nn::NetworkModel& model,
                                                            const Tensor& batch);

}  // namespace rce::detect
