#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "rce/dataset.hpp"
#include "rce/network.hpp"
#include "rce/optimizer.hpp"

namespace rce {

struct TrainConfig {
  nn::Objective objective = nn::Objective::CrossEntropy;
  /// Label smoothing weight; ignored by the other objectives.
  double lambda = 0.0;
  std::size_t batch_size = 128;
  std::size_t steps = 1000;
  LrSchedule schedule = LrSchedule::constant(0.05);
  double momentum = 0.9;
  double weight_decay = 2e-4;
  std::uint64_t seed = 0;
  std::size_t log_every = 100;
  /// Random crop and flip of 32x32 inputs.
  bool augment = false;

  void validate() const;
};

struct LossPoint {
  std::size_t step = 0;
  /// Mean batch loss over the steps since the previous point.
  double loss = 0.0;
};

struct TrainResult {
  nn::NetworkModel model;
  std::vector<LossPoint> trace;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t step, double loss);
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

using TrainObserver = std::function<void(const LossPoint&)>;

/// Mini-batch SGD on the configured objective. Each epoch visits a seeded
/// permutation of the data; a trailing partial batch is skipped.
/// The model's objective tag is set from the config.
TrainResult train(nn::NetworkModel model, const data::Dataset& dataset, const TrainConfig& config,
                  const TrainObserver& observer = {});

/// Fraction of items whose predicted label matches.
double accuracy(const nn::NetworkModel& model, const data::Dataset& dataset);

}  // namespace rce
