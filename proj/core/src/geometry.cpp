#include "rce/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "rce/detector.hpp"

namespace rce::geometry {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMatrix> weight_map(const SoftmaxGeometry& g) {
  return {g.weight.raw(), static_cast<Eigen::Index>(g.classes()), static_cast<Eigen::Index>(g.hidden())};
}

std::string vec_string(std::span<const double> v) {
  std::string s = "(";
  for (std::size_t i = 0; i < v.size(); ++i) s += fmt::format("{}{:.17g}", i == 0 ? "" : ", ", v[i]);
  return s + ")";
}

/// Largest logit among classes other than `label`.
std::size_t top_rival(std::span<const double> logits, std::size_t label) {
  std::size_t k = label == 0 ? 1 : 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (i != label && logits[i] > logits[k]) k = i;
  }
  return k;
}

std::vector<double> random_hidden(std::size_t m, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> z(m);
  for (auto& v : z) v = n(rng);
  return z;
}

}  // namespace

void SoftmaxGeometry::validate() const {
  if (weight.rank() != 2 || bias.rank() != 1 || bias.extent(0) != weight.extent(0)) {
    throw std::invalid_argument(fmt::format("geometry weight {} and bias {} disagree", shape_string(weight.shape()),
                                            shape_string(bias.shape())));
  }
  if (classes() < 2) throw std::invalid_argument("geometry needs at least 2 classes");
  const auto W = weight_map(*this);
  for (Eigen::Index i = 0; i < W.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < W.rows(); ++j) {
      if (W.row(i) == W.row(j)) throw std::invalid_argument(fmt::format("rows {} and {} of W coincide", i, j));
    }
  }
}

SoftmaxGeometry random_geometry(std::size_t classes, Rng& rng, std::size_t hidden) {
  if (classes < 2) throw std::invalid_argument("geometry needs at least 2 classes");
  if (hidden == 0) hidden = classes + static_cast<std::size_t>(rng() % 5);
  std::normal_distribution<double> n(0.0, 1.0);
  SoftmaxGeometry g{Tensor(Shape{classes, hidden}), Tensor(Shape{classes})};
  for (auto& v : g.weight.data()) v = n(rng);
  for (auto& v : g.bias.data()) v = n(rng);
  g.validate();
  return g;
}

std::vector<double> logits_at(const SoftmaxGeometry& geom, std::span<const double> z) {
  if (z.size() != geom.hidden()) {
    throw std::invalid_argument(fmt::format("hidden vector of size {} for a geometry with m = {}", z.size(), geom.hidden()));
  }
  std::vector<double> out(geom.classes());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double s = geom.bias[i];
    for (std::size_t k = 0; k < z.size(); ++k) s += geom.weight[i * z.size() + k] * z[k];
    out[i] = s;
  }
  return out;
}

Solve solve_logits(const SoftmaxGeometry& geom, std::span<const double> target) {
  if (target.size() != geom.classes()) {
    throw std::invalid_argument(fmt::format("{} target logits for {} classes", target.size(), geom.classes()));
  }
  const auto W = weight_map(geom);
  Eigen::VectorXd rhs(static_cast<Eigen::Index>(target.size()));
  for (std::size_t i = 0; i < target.size(); ++i) rhs[static_cast<Eigen::Index>(i)] = target[i] - geom.bias[i];
  const Eigen::VectorXd z = W.completeOrthogonalDecomposition().solve(rhs);
  Solve s;
  s.z.assign(z.data(), z.data() + z.size());
  const auto got = logits_at(geom, s.z);
  for (std::size_t i = 0; i < got.size(); ++i) s.residual = std::max(s.residual, std::abs(got[i] - target[i]));
  return s;
}

Shift shift_along_manifold(const SoftmaxGeometry& geom, std::span<const double> z, std::size_t label,
                           std::span<const double> delta) {
  const std::size_t L = geom.classes();
  if (label >= L || delta.size() != L) throw std::invalid_argument("shift: label or offset size out of range");
  const std::size_t ref = label == 0 ? 1 : 0;
  for (std::size_t i = 0; i < L; ++i) {
    if (i != label && delta[i] != delta[ref]) {
      throw std::invalid_argument(fmt::format("shift offsets must be equal off class {}: {}", label, vec_string(delta)));
    }
  }
  auto target = logits_at(geom, z);
  for (std::size_t i = 0; i < L; ++i) target[i] += delta[i];
  Solve s = solve_logits(geom, target);
  if (!(s.residual < 1e-9)) {
    throw std::invalid_argument(fmt::format("shift {} infeasible: residual {:.3g}", vec_string(delta), s.residual));
  }
  Shift out;
  out.residual = s.residual;
  out.z = std::move(s.z);
  out.in_region = argmax(logits_at(geom, out.z)) == label;
  return out;
}

double non_me_of_logits(std::span<const double> logits) {
  if (logits.size() < 2) throw std::invalid_argument("non-ME needs at least 2 classes");
  // The renormalized non-max probabilities are the softmax of the non-max
  // logits, which stays exact when their total mass underflows.
  const std::size_t top = argmax(logits);
  std::vector<double> rest;
  rest.reserve(logits.size() - 1);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (i != top) rest.push_back(logits[i]);
  }
  const auto q = softmax(rest);
  double h = 0.0;
  for (double v : q) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

double theorem1_bound(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size() || logits.size() < 2) throw std::invalid_argument("theorem1_bound: bad label");
  const std::size_t k = top_rival(logits, label);
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (i != label && i != k) s += std::exp(logits[i] - logits[k]);
  }
  return 1.0 / (2.0 + s);
}

double reverse_error(std::span<const double> logits, std::size_t y) {
  const auto p = softmax(logits);
  const double off = 1.0 / static_cast<double>(p.size() - 1);
  double a = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) a = std::max(a, std::abs(p[i] - (i == y ? 0.0 : off)));
  return a;
}

void Report::fail(std::string what) {
  if (passed) witness = std::move(what);
  passed = false;
}

Report verify_lemma1(const SoftmaxGeometry& geom, std::size_t trials, Rng& rng) {
  if (trials < 1) throw std::invalid_argument("trials must be >= 1");
  geom.validate();
  const std::size_t L = geom.classes(), m = geom.hidden();
  const double top = std::log(static_cast<double>(L - 1));
  std::uniform_real_distribution<double> u(-1.0, 1.0), frac(-2.0, 1.0), gap(0.1, 3.0);
  Report r{"lemma1"};
  for (std::size_t t = 0; t < trials; ++t) {
    const auto z = random_hidden(m, rng);
    const auto logits = logits_at(geom, z);
    const std::size_t yhat = argmax(logits);
    const double base = non_me_of_logits(logits);

    // Constancy under an equal shift of the non-max logits.
    const double g0 = logits[yhat] - logits[top_rival(logits, yhat)];
    const double a = u(rng);
    std::vector<double> delta(L, a + frac(rng) * g0);
    delta[yhat] = a;
    const Shift s = shift_along_manifold(geom, z, yhat, delta);
    if (!s.in_region) {
      ++r.skipped;
    } else {
      ++r.checks;
      const double err = std::abs(non_me_of_logits(logits_at(geom, s.z)) - base);
      r.observe(err);
      if (err > 1e-9) r.fail(fmt::format("shift {} of z = {} changed non-ME by {:.3g}", vec_string(delta), vec_string(z), err));
    }

    // Maximum log(L - 1) on S_yhat.
    std::vector<double> target(L, logits[yhat] - gap(rng));
    target[yhat] = logits[yhat];
    const Solve on = solve_logits(geom, target);
    if (!(on.residual < 1e-9)) {
      ++r.skipped;
    } else {
      ++r.checks;
      const double err = std::abs(non_me_of_logits(logits_at(geom, on.z)) - top);
      r.observe(err);
      if (err > 1e-9) r.fail(fmt::format("point on S_yhat with logits {} has non-ME off log(L-1) by {:.3g}", vec_string(target), err));
    }

    // Strictly below the maximum off S_yhat.
    double spread = 0.0;
    for (std::size_t i = 0; i < L; ++i) {
      for (std::size_t j = 0; j < L; ++j) {
        if (i != yhat && j != yhat) spread = std::max(spread, std::abs(logits[i] - logits[j]));
      }
    }
    if (spread > 1e-6) {
      ++r.checks;
      if (!(base < top)) r.fail(fmt::format("logits {} off S_yhat reach non-ME {:.17g} >= log(L-1)", vec_string(logits), base));
    }
  }
  return r;
}

Report verify_theorem1_boundary(const SoftmaxGeometry& geom, std::size_t trials, Rng& rng, std::size_t lines) {
  if (trials < 1 || lines < 1) throw std::invalid_argument("trials and lines must be >= 1");
  geom.validate();
  const std::size_t L = geom.classes(), m = geom.hidden();
  Report r{"theorem1"};
  std::uniform_real_distribution<double> u(-3.0, 3.0), rate(0.05, 2.0);

  for (std::size_t t = 0; t < trials; ++t) {
    // All logits equal: F_yhat = 1/L.
    const std::vector<double> equal(L, u(rng));
    const Solve eq = solve_logits(geom, equal);
    if (!(eq.residual < 1e-9)) {
      ++r.skipped;
    } else {
      ++r.checks;
      const auto lg = logits_at(geom, eq.z);
      const auto p = softmax(lg);
      const double err = std::abs(p[argmax(lg)] - 1.0 / static_cast<double>(L));
      r.observe(err);
      if (err > 1e-9) r.fail(fmt::format("equal-logit point {} has F_yhat off 1/L by {:.3g}", vec_string(lg), err));
    }

    // Closed form against bisection along random lines of Q0 to the boundary.
    const auto z0 = random_hidden(m, rng);
    const auto l0 = logits_at(geom, z0);
    const std::size_t yhat = argmax(l0);
    const double closed = theorem1_bound(l0, yhat);
    if (closed < 1.0 / static_cast<double>(L) - 1e-12) {
      r.fail(fmt::format("closed form {:.17g} below 1/L at logits {}", closed, vec_string(l0)));
    }
    double best = -1.0;
    for (std::size_t line = 0; line < lines; ++line) {
      // Direction with equal logit change off yhat and a faster drop on yhat.
      const double s = u(rng);
      std::vector<double> dl(L, s);
      dl[yhat] = s - rate(rng);
      std::vector<double> target(L);
      for (std::size_t i = 0; i < L; ++i) target[i] = l0[i] + dl[i];
      const Solve step = solve_logits(geom, target);
      if (!(step.residual < 1e-9)) {
        ++r.skipped;
        continue;
      }
      std::vector<double> v(m);
      for (std::size_t k = 0; k < m; ++k) v[k] = step.z[k] - z0[k];
      auto gap_at = [&](double tt) {
        std::vector<double> z(m);
        for (std::size_t k = 0; k < m; ++k) z[k] = z0[k] + tt * v[k];
        const auto lg = logits_at(geom, z);
        return std::pair{lg[yhat] - lg[top_rival(lg, yhat)], lg};
      };
      double lo = 0.0, hi = 1.0;
      while (gap_at(hi).first > 0.0) hi *= 2.0;
      for (int it = 0; it < 200 && hi - lo > 1e-15 * std::max(1.0, hi); ++it) {
        const double mid = 0.5 * (lo + hi);
        (gap_at(mid).first > 0.0 ? lo : hi) = mid;
      }
      const auto lg = gap_at(lo).second;
      best = std::max(best, softmax(lg)[yhat]);
    }
    if (best < 0.0) {
      ++r.skipped;
      continue;
    }
    ++r.checks;
    const double err = std::abs(best - closed);
    r.observe(err);
    if (err > 1e-6) {
      r.fail(fmt::format("z0 = {}: closed form {:.12g} vs boundary search {:.12g}", vec_string(z0), closed, best));
    }
  }
  return r;
}

Report verify_theorem2(std::size_t trials, std::span<const std::size_t> class_counts, std::uint64_t seed) {
  if (trials < 1) throw std::invalid_argument("trials must be >= 1");
  Report r{"theorem2"};
  Rng rng(seed);
  std::uniform_real_distribution<double> depth(2.0, 40.0), log_noise(-8.0, 0.0), unit(-1.0, 1.0);
  for (std::size_t L : class_counts) {
    if (L < 2) throw std::invalid_argument("RCE consistency check needs L >= 2");
    const double cutoff = 0.5 / static_cast<double>(L);
    const double l1 = static_cast<double>(L - 1);
    std::size_t accepted = 0;
    std::size_t drawn = 0;
    while (accepted < trials) {
      if (++drawn > 1000 * trials) {
        r.fail(fmt::format("L = {}: only {} of {} samples met the premise", L, accepted, trials));
        break;
      }
      const std::size_t y = static_cast<std::size_t>(rng() % L);
      const double noise = std::pow(10.0, log_noise(rng));
      std::vector<double> z(L);
      const double shift = 5.0 * unit(rng);
      for (std::size_t i = 0; i < L; ++i) z[i] = shift + noise * unit(rng);
      z[y] = shift - depth(rng);
      const double alpha = reverse_error(z, y);
      if (!(alpha <= cutoff)) {
        ++r.skipped;
        continue;
      }
      ++accepted;
      ++r.checks;
      std::vector<double> neg(L);
      for (std::size_t i = 0; i < L; ++i) neg[i] = -z[i];
      const auto q = softmax(neg);
      double dev = 0.0, spread = 0.0;
      for (std::size_t i = 0; i < L; ++i) dev = std::max(dev, std::abs(q[i] - (i == y ? 1.0 : 0.0)));
      for (std::size_t j = 0; j < L; ++j) {
        for (std::size_t k = 0; k < L; ++k) {
          if (j != y && k != y) spread = std::max(spread, std::abs(q[j] - q[k]));
        }
      }
      const double b1 = alpha * l1 * l1;
      const double b2 = 2.0 * alpha * alpha * l1 * l1;
      r.observe(std::max(dev - b1, spread - b2));
      if (dev > b1 + 1e-9 || spread > b2 + 1e-9) {
        r.fail(fmt::format("L = {}, y = {}, Z = {}: alpha {:.6g}, deviation {:.6g} (bound {:.6g}), spread {:.6g} (bound {:.6g})",
                           L, y, vec_string(z), alpha, dev, b1, spread, b2));
      }
    }
  }
  return r;
}

std::vector<Report> verify_all(const SuiteConfig& config) {
  if (config.min_classes < 2 || config.max_classes < config.min_classes) {
    throw std::invalid_argument("class range must satisfy 2 <= min <= max");
  }
  Rng rng(derive_seed(config.seed, 1));
  Report lemma{"lemma1"}, thm1{"theorem1"};
  const std::size_t span_classes = config.max_classes - config.min_classes + 1;
  for (std::size_t g = 0; g < config.geometries; ++g) {
    const std::size_t L = config.min_classes + static_cast<std::size_t>(rng() % span_classes);
    const auto geom = random_geometry(L, rng);
    for (auto [dst, src] : {std::pair{&lemma, verify_lemma1(geom, config.trials_per_geometry, rng)},
                            std::pair{&thm1, verify_theorem1_boundary(geom, config.trials_per_geometry, rng)}}) {
      dst->checks += src.checks;
      dst->skipped += src.skipped;
      dst->observe(src.max_error);
      if (!src.passed) dst->fail(fmt::format("geometry {} (L = {}): {}", g, L, src.witness));
    }
  }
  return {lemma, thm1, verify_theorem2(config.theorem2_trials, config.theorem2_classes, derive_seed(config.seed, 2))};
}

}  // namespace rce::geometry
