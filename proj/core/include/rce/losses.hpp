#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "rce/network.hpp"
#include "rce/tape.hpp"

namespace rce {

/// Floor applied to probabilities before every log.
inline constexpr double kProbFloor = 1e-12;

/// -log(probs[y]).
double ce_loss(std::span<const double> probs, std::size_t y);
/// -(1 / (L - 1)) * sum_{i != y} log(probs[i]).
double rce_loss(std::span<const double> probs, std::size_t y);
/// ce_loss + lambda * rce_loss.
double label_smoothing_loss(std::span<const double> probs, std::size_t y, double lambda);

/// R_y: 0 at y, 1 / (L - 1) elsewhere.
std::vector<double> reverse_label(std::size_t classes, std::size_t y);
/// P^lambda = (1_y + lambda * R_y) / (1 + lambda).
std::vector<double> smoothed_target(std::size_t classes, std::size_t y, double lambda);

/// Per-row soft-target cross-entropy -sum_k t_k log(max(softmax(z)_k, floor)).
/// logits [N x L], targets [N x L] -> [N]. Targets need not be normalized.
Var soft_target_loss(Tape& tape, Var logits, const Tensor& targets);

/// Per-row training loss of `objective` on Z_pre. RCE is evaluated on
/// softmax(Z_pre); the negation only enters at prediction time.
Var objective_loss(Tape& tape, nn::Objective objective, Var logits, std::span<const std::size_t> labels,
                   double lambda = 0.0);

/// Target rows used by objective_loss, [N x L].
Tensor objective_targets(nn::Objective objective, std::size_t classes, std::span<const std::size_t> labels,
                         double lambda = 0.0);

}  // namespace rce
