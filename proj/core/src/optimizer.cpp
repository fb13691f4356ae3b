#include "rce/optimizer.hpp"

#include <algorithm>
#include <stdexcept>

#include <fmt/format.h>

namespace rce {

double LrSchedule::at(std::size_t step) const {
  const auto it = std::upper_bound(boundaries.begin(), boundaries.end(), step);
  const auto idx = static_cast<std::size_t>(it - boundaries.begin());
  return rates[std::min(idx, rates.size() - 1)];
}

void LrSchedule::validate() const {
  if (rates.size() != boundaries.size() + 1) {
    throw std::invalid_argument(
        fmt::format("lr schedule needs {} rates for {} boundaries, got {}", boundaries.size() + 1, boundaries.size(),
                    rates.size()));
  }
  if (!std::is_sorted(boundaries.begin(), boundaries.end())) {
    throw std::invalid_argument("lr schedule boundaries must be non-decreasing");
  }
  for (double r : rates) {
    if (!(r >= 0.0)) throw std::invalid_argument(fmt::format("learning rate {} is negative", r));
  }
}

SgdMomentum::SgdMomentum(SgdConfig config) : config_(std::move(config)) { config_.schedule.validate(); }

void SgdMomentum::step(std::span<Tensor> params, std::span<const Tensor> grads, std::size_t step_index) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument(fmt::format("sgd: {} parameters but {} gradients", params.size(), grads.size()));
  }
  if (velocities_.empty()) {
    for (const auto& p : params) velocities_.emplace_back(p.shape(), 0.0);
  }
  if (velocities_.size() != params.size()) {
    throw std::invalid_argument("sgd: parameter count changed between steps");
  }
  const double lr = config_.schedule.at(step_index);
  const double mu = config_.momentum;
  const double wd = config_.weight_decay;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params[k];
    const Tensor& g = grads[k];
    Tensor& v = velocities_[k];
    if (p.shape() != g.shape() || p.shape() != v.shape()) {
      throw std::invalid_argument(fmt::format("sgd: parameter {} has shape {}, gradient {}, velocity {}", k,
                                              shape_string(p.shape()), shape_string(g.shape()),
                                              shape_string(v.shape())));
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = mu * v[i] + g[i] + wd * p[i];
      p[i] -= lr * v[i];
    }
  }
}

}  // namespace rce
