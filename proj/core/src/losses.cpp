#include "rce/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "rce/numeric.hpp"

namespace rce {

namespace {

void check_label(std::size_t classes, std::size_t y) {
  if (y >= classes) throw std::invalid_argument(fmt::format("label {} out of range for {} classes", y, classes));
}

double floored_log(double p) { return std::log(std::max(p, kProbFloor)); }

}  // namespace

double ce_loss(std::span<const double> probs, std::size_t y) {
  check_label(probs.size(), y);
  return -floored_log(probs[y]);
}

double rce_loss(std::span<const double> probs, std::size_t y) {
  check_label(probs.size(), y);
  if (probs.size() < 2) throw std::invalid_argument("rce_loss needs at least 2 classes");
  double s = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (i != y) s += floored_log(probs[i]);
  }
  return -s / static_cast<double>(probs.size() - 1);
}

double label_smoothing_loss(std::span<const double> probs, std::size_t y, double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument(fmt::format("label smoothing lambda {} must be >= 0", lambda));
  if (lambda == 0.0) return ce_loss(probs, y);
  return ce_loss(probs, y) + lambda * rce_loss(probs, y);
}

std::vector<double> reverse_label(std::size_t classes, std::size_t y) {
  check_label(classes, y);
  if (classes < 2) throw std::invalid_argument("reverse label needs at least 2 classes");
  std::vector<double> r(classes, 1.0 / static_cast<double>(classes - 1));
  r[y] = 0.0;
  return r;
}

std::vector<double> smoothed_target(std::size_t classes, std::size_t y, double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument(fmt::format("label smoothing lambda {} must be >= 0", lambda));
  auto t = reverse_label(classes, y);
  for (auto& v : t) v *= lambda;
  t[y] += 1.0;
  for (auto& v : t) v /= 1.0 + lambda;
  return t;
}

Var soft_target_loss(Tape& tape, Var logits, const Tensor& targets) {
  const Tensor& z = tape.value(logits);
  if (z.rank() != 2 || targets.shape() != z.shape()) {
    throw std::invalid_argument(fmt::format("soft_target_loss: logits {} vs targets {}", shape_string(z.shape()),
                                            shape_string(targets.shape())));
  }
  const std::size_t n = z.extent(0), L = z.extent(1);
  Tensor probs = softmax_rows(z);
  Tensor loss(Shape{n}, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < L; ++k) {
      const double t = targets[r * L + k];
      if (t != 0.0) s -= t * floored_log(probs[r * L + k]);
    }
    loss[r] = s;
  }
  return tape.record(std::move(loss), {logits},
                     [probs = std::move(probs), targets, n, L](const Tensor& g, std::span<Tensor* const> grads) {
                       Tensor* gz = grads[0];
                       if (gz == nullptr) return;
                       for (std::size_t r = 0; r < n; ++r) {
                         // Floored entries are constant and contribute nothing.
                         double active = 0.0;
                         for (std::size_t k = 0; k < L; ++k) {
                           if (probs[r * L + k] > kProbFloor) active += targets[r * L + k];
                         }
                         for (std::size_t j = 0; j < L; ++j) {
                           const double p = probs[r * L + j];
                           const double tj = p > kProbFloor ? targets[r * L + j] : 0.0;
                           (*gz)[r * L + j] += g[r] * (p * active - tj);
                         }
                       }
                     });
}

Tensor objective_targets(nn::Objective objective, std::size_t classes, std::span<const std::size_t> labels,
                         double lambda) {
  Tensor t(Shape{labels.size(), classes}, 0.0);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    check_label(classes, labels[r]);
    double* row = t.raw() + r * classes;
    switch (objective) {
      case nn::Objective::CrossEntropy: row[labels[r]] = 1.0; break;
      case nn::Objective::Reverse: {
        const auto rev = reverse_label(classes, labels[r]);
        std::copy(rev.begin(), rev.end(), row);
        break;
      }
      case nn::Objective::LabelSmoothing: {
        if (!(lambda >= 0.0)) throw std::invalid_argument(fmt::format("label smoothing lambda {} must be >= 0", lambda));
        const auto rev = reverse_label(classes, labels[r]);
        for (std::size_t k = 0; k < classes; ++k) row[k] = lambda * rev[k];
        row[labels[r]] += 1.0;
        break;
      }
    }
  }
  return t;
}

Var objective_loss(Tape& tape, nn::Objective objective, Var logits, std::span<const std::size_t> labels, double lambda) {
  const Tensor& z = tape.value(logits);
  if (z.rank() != 2 || z.extent(0) != labels.size()) {
    throw std::invalid_argument(fmt::format("objective_loss: logits {} for {} labels", shape_string(z.shape()), labels.size()));
  }
  return soft_target_loss(tape, logits, objective_targets(objective, z.extent(1), labels, lambda));
}

}  // namespace rce
