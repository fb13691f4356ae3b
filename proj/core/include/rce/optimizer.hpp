#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "rce/tensor.hpp"

namespace rce {

/// Step-indexed piecewise-constant learning rate.
///
/// `rates` has one more entry than `boundaries`. Intervals are half-open: a
/// step equal to a boundary already uses the next rate, and steps past the last
/// boundary keep the last rate.
struct LrSchedule {
  std::vector<std::size_t> boundaries;
  std::vector<double> rates{0.1};

  static LrSchedule constant(double rate) { return LrSchedule{{}, {rate}}; }

  double at(std::size_t step) const;
  void validate() const;
};

struct SgdConfig {
  LrSchedule schedule;
  double momentum = 0.9;
  double weight_decay = 0.0;
};

/// SGD with momentum:  v <- mu * v + g + wd * p;  p <- p - lr(step) * v.
class SgdMomentum {
 public:
  explicit SgdMomentum(SgdConfig config);

  const SgdConfig& config() const noexcept { return config_; }
  std::span<const Tensor> velocities() const noexcept { return velocities_; }

  /// Updates `params` in place. Velocity buffers are created on first use
  /// and must keep matching the parameter shapes afterwards.
  void step(std::span<Tensor> params, std::span<const Tensor> grads, std::size_t step_index);

 private:
  SgdConfig config_;
  std::vector<Tensor> velocities_;
};

}  // namespace rce
