#include "rce/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "rce/dataset.hpp"
#include "rce/losses.hpp"
#include "rce/numeric.hpp"
#include "rce/ops.hpp"
#include "rce/tape.hpp"

namespace rce::attack {

std::string_view to_string(Family family) {
  switch (family) {
    case Family::Fgsm: return "fgsm";
    case Family::Bim: return "bim";
    case Family::Ilcm: return "ilcm";
    case Family::Jsma: return "jsma";
    case Family::Cw: return "cw";
    case Family::CwHc: return "cw_hc";
    case Family::CwWb: return "cw_wb";
    case Family::Rand: return "rand";
  }
  return "?";
}

Family parse_family(std::string_view text) {
  for (Family f : {Family::Fgsm, Family::Bim, Family::Ilcm, Family::Jsma, Family::Cw, Family::CwHc, Family::CwWb,
                   Family::Rand}) {
    if (text == to_string(f)) return f;
  }
  throw std::invalid_argument(
      fmt::format("unknown attack '{}' (expected fgsm, bim, ilcm, jsma, cw, cw_hc, cw_wb or rand)", text));
}

bool epsilon_bounded(Family family) {
  return family == Family::Fgsm || family == Family::Bim || family == Family::Ilcm || family == Family::Rand;
}

bool targeted(Family family) {
  return family == Family::Jsma || family == Family::Cw || family == Family::CwHc || family == Family::CwWb;
}

AttackConfig AttackConfig::defaults(Family family) {
  AttackConfig c;
  c.family = family;
  if (family == Family::CwHc) c.kappa = 10.0;
  if (family == Family::Rand) c.epsilon = 0.04;
  return c;
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw std::invalid_argument(fmt::format("epsilon {} must be >= 0", epsilon));
  if (iterations < 1) throw std::invalid_argument("iterations must be >= 1");
  if (!(kappa >= 0.0)) throw std::invalid_argument(fmt::format("kappa {} must be >= 0", kappa));
  if (rounds < 1) throw std::invalid_argument("binary search rounds must be >= 1");
  if (max_iterations < 1) throw std::invalid_argument("max iterations must be >= 1");
  if (!(step_size > 0.0)) throw std::invalid_argument(fmt::format("step size {} must be > 0", step_size));
  if (!(initial_c > 0.0) || !(c_upper > initial_c)) {
    throw std::invalid_argument(fmt::format("c search needs 0 < initial c ({}) < upper ({})", initial_c, c_upper));
  }
  if (!(jsma_offset > 0.0)) throw std::invalid_argument(fmt::format("JSMA offset {} must be > 0", jsma_offset));
  if (jsma_max_pixels < 1) throw std::invalid_argument("JSMA pixel budget must be >= 1");
  if (std::isnan(eta)) throw std::invalid_argument("eta is NaN");
}

namespace {

double clip_domain(double v) { return std::clamp(v, data::kPixelMin, data::kPixelMax); }

void check_batch(const Tensor& x, std::size_t n) {
  if (x.rank() != 4) throw std::invalid_argument("attack input must be N x C x H x W, got " + shape_string(x.shape()));
  if (x.extent(0) != n) throw std::invalid_argument(fmt::format("{} inputs but {} labels", x.extent(0), n));
}

std::size_t row_size(const Tensor& x) { return x.size() / x.extent(0); }

/// Gradient of the summed per-row training loss toward `labels` w.r.t. x.
Tensor loss_gradient(const nn::NetworkModel& model, const Tensor& x, std::span<const std::size_t> labels, double* loss) {
  Tape tape;
  auto params = model.bind(tape, false);
  Var xv = tape.leaf(x, true);
  auto out = model.forward(tape, xv, params);
  Var l = ops::sum(tape, objective_loss(tape, model.objective(), out.logits, labels, model.smoothing_lambda()));
  tape.backward(l);
  if (loss != nullptr) *loss = tape.value(l).item();
  Tensor g = tape.grad(xv);
  if (!g.all_finite()) throw std::runtime_error("attack gradient is not finite");
  return g;
}

std::vector<AttackResult> package(const nn::NetworkModel& model, const Tensor& adv, std::span<const std::size_t> targets) {
  const auto preds = model.predict(adv);
  std::vector<AttackResult> out(preds.size());
  for (std::size_t n = 0; n < out.size(); ++n) {
    out[n].adversarial = adv.row(n);
    out[n].label = preds[n].label;
    out[n].target = targets[n];
  }
  return out;
}

/// Shared BIM / ILCM loop; `direction` is +1 to ascend the loss, -1 to descend.
std::vector<AttackResult> iterative_sign(const nn::NetworkModel& model, const Tensor& x,
                                         std::span<const std::size_t> labels, double epsilon, std::size_t r,
                                         double direction) {
  if (!(epsilon >= 0.0)) throw std::invalid_argument(fmt::format("epsilon {} must be >= 0", epsilon));
  if (r < 1) throw std::invalid_argument("iteration count must be >= 1");
  Tensor adv = x;
  const double step = epsilon / static_cast<double>(r);
  double loss = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    const Tensor g = loss_gradient(model, adv, labels, &loss);
    for (std::size_t k = 0; k < adv.size(); ++k) {
      const double v = adv[k] + direction * step * sign(g[k]);
      adv[k] = clip_domain(std::clamp(v, x[k] - epsilon, x[k] + epsilon));
    }
  }
  auto out = package(model, adv, labels);
  for (auto& res : out) {
    res.iterations = r;
    res.objective = loss;
  }
  return out;
}

/// Per-row C&W margin max(max_{i != t} z_i - z_t, -kappa) as a tape op.
Var cw_margin(Tape& tape, Var logits, std::span<const std::size_t> targets, double kappa) {
  const Tensor& z = tape.value(logits);
  const std::size_t n = z.extent(0), L = z.extent(1);
  Tensor out(Shape{n});
  std::vector<std::size_t> rival(n);
  std::vector<bool> active(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = z.raw() + r * L;
    const std::size_t t = targets[r];
    std::size_t best = t == 0 ? 1 : 0;
    for (std::size_t i = 0; i < L; ++i) {
      if (i != t && row[i] > row[best]) best = i;
    }
    rival[r] = best;
    const double m = row[best] - row[t];
    active[r] = m > -kappa;
    out[r] = std::max(m, -kappa);
  }
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  return tape.record(std::move(out), {logits},
                     [rival = std::move(rival), active = std::move(active), tgt = std::move(tgt), L](
                         const Tensor& g, std::span<Tensor* const> grads) {
                       if (grads[0] == nullptr) return;
                       for (std::size_t r = 0; r < rival.size(); ++r) {
                         if (!active[r]) continue;
                         (*grads[0])[r * L + rival[r]] += g[r];
                         (*grads[0])[r * L + tgt[r]] -= g[r];
                       }
                     });
}

bool cw_success(std::span<const double> logits, std::size_t target, double kappa) {
  if (argmax(logits) != target) return false;
  double rival = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (i != target) rival = std::max(rival, logits[i]);
  }
  return rival - logits[target] <= -kappa;
}

}  // namespace

std::vector<AttackResult> fgsm(const nn::NetworkModel& model, const Tensor& x, std::span<const std::size_t> labels,
                               double epsilon) {
  check_batch(x, labels.size());
  if (!(epsilon >= 0.0)) throw std::invalid_argument(fmt::format("epsilon {} must be >= 0", epsilon));
  double loss = 0.0;
  const Tensor g = loss_gradient(model, x, labels, &loss);
  Tensor adv = x;
  for (std::size_t k = 0; k < adv.size(); ++k) adv[k] = clip_domain(x[k] + epsilon * sign(g[k]));
  auto out = package(model, adv, labels);
  for (std::size_t n = 0; n < out.size(); ++n) {
    out[n].iterations = 1;
    out[n].objective = loss;
    out[n].success = out[n].label != labels[n];
  }
  return out;
}

std::vector<AttackResult> bim(const nn::NetworkModel& model, const Tensor& x, std::span<const std::size_t> labels,
                              double epsilon, std::size_t r) {
  check_batch(x, labels.size());
  auto out = iterative_sign(model, x, labels, epsilon, r, 1.0);
  for (std::size_t n = 0; n < out.size(); ++n) out[n].success = out[n].label != labels[n];
  return out;
}

std::vector<AttackResult> ilcm(const nn::NetworkModel& model, const Tensor& x, double epsilon, std::size_t r) {
  if (x.rank() != 4) throw std::invalid_argument("attack input must be N x C x H x W, got " + shape_string(x.shape()));
  const Tensor probs = model.probabilities(x);
  const std::size_t L = probs.extent(1);
  std::vector<std::size_t> least(x.extent(0));
  for (std::size_t n = 0; n < least.size(); ++n) least[n] = argmin(probs.data().subspan(n * L, L));
  auto out = iterative_sign(model, x, least, epsilon, r, -1.0);
  for (std::size_t n = 0; n < out.size(); ++n) out[n].success = out[n].label == least[n];
  return out;
}

double jsma_saliency(double d_target, double d_other) {
  if (d_target < 0.0 || d_other > 0.0) return 0.0;
  return d_target * std::abs(d_other);
}

std::vector<AttackResult> jsma(const nn::NetworkModel& model, const Tensor& x, std::span<const std::size_t> targets,
                               double offset, std::size_t max_pixels) {
  check_batch(x, targets.size());
  if (!(offset > 0.0)) throw std::invalid_argument(fmt::format("JSMA offset {} must be > 0", offset));
  if (max_pixels < 1) throw std::invalid_argument("JSMA pixel budget must be >= 1");
  const std::size_t N = x.extent(0), d = row_size(x), L = model.classes();
  for (auto t : targets) {
    if (t >= L) throw std::invalid_argument(fmt::format("target {} out of range for {} classes", t, L));
  }
  Tensor cur = x;
  std::vector<std::size_t> changed(N, 0);
  std::vector<bool> done(N, false), hit(N, false);
  std::vector<std::vector<bool>> used(N, std::vector<bool>(d, false));

  while (true) {
    std::vector<std::size_t> active;
    for (std::size_t n = 0; n < N; ++n) {
      if (!done[n]) active.push_back(n);
    }
    if (active.empty()) break;
    const std::size_t A = active.size();
    Tape tape;
    auto params = model.bind(tape, false);
    Tensor xb = Tensor(Shape{A, x.extent(1), x.extent(2), x.extent(3)});
    for (std::size_t a = 0; a < A; ++a) std::copy_n(cur.raw() + active[a] * d, d, xb.raw() + a * d);
    Var xv = tape.leaf(std::move(xb), true);
    auto out = model.forward(tape, xv, params);
    Var zp = model.prediction_logits(tape, out.logits);
    const Tensor& z = tape.value(zp);

    Tensor mask_t(Shape{A, L}, 0.0), mask_o(Shape{A, L}, 1.0);
    std::vector<bool> needs_step(A, false);
    for (std::size_t a = 0; a < A; ++a) {
      const std::size_t n = active[a];
      if (argmax(z.data().subspan(a * L, L)) == targets[n]) {
        hit[n] = true;
        done[n] = true;
      } else if (changed[n] >= max_pixels) {
        done[n] = true;
      } else {
        needs_step[a] = true;
      }
      mask_t[a * L + targets[n]] = 1.0;
      mask_o[a * L + targets[n]] = 0.0;
    }
    if (std::none_of(needs_step.begin(), needs_step.end(), [](bool b) { return b; })) continue;

    tape.backward(ops::sum(tape, ops::mul(tape, zp, tape.constant(mask_t))));
    const Tensor gt = tape.grad(xv);
    tape.backward(ops::sum(tape, ops::mul(tape, zp, tape.constant(mask_o))));
    const Tensor go = tape.grad(xv);

    for (std::size_t a = 0; a < A; ++a) {
      if (!needs_step[a]) continue;
      const std::size_t n = active[a];
      double best = 0.0;
      std::size_t pick = d;
      for (std::size_t i = 0; i < d; ++i) {
        if (used[n][i] || cur[n * d + i] >= data::kPixelMax) continue;
        const double s = jsma_saliency(gt[a * d + i], go[a * d + i]);
        if (s > best) {
          best = s;
          pick = i;
        }
      }
      if (pick == d) {
        done[n] = true;
        continue;
      }
      cur[n * d + pick] = clip_domain(cur[n * d + pick] + offset);
      used[n][pick] = true;
      ++changed[n];
    }
  }

  auto res = package(model, cur, targets);
  for (std::size_t n = 0; n < N; ++n) {
    res[n].success = hit[n];
    res[n].iterations = changed[n];
    res[n].objective = static_cast<double>(changed[n]);
  }
  return res;
}

double cw_objective(std::span<const double> logits, std::size_t target, double kappa) {
  if (target >= logits.size() || logits.size() < 2) {
    throw std::invalid_argument(fmt::format("target {} invalid for {} logits", target, logits.size()));
  }
  double rival = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (i != target) rival = std::max(rival, logits[i]);
  }
  return std::max(rival - logits[target], -kappa);
}

std::vector<AttackResult> cw(const nn::NetworkModel& model, const Tensor& x, std::span<const std::size_t> targets,
                             const AttackConfig& config, const detect::DetectorState* detector) {
  config.validate();
  check_batch(x, targets.size());
  const std::size_t N = x.extent(0), d = row_size(x), L = model.classes();
  for (auto t : targets) {
    if (t >= L) throw std::invalid_argument(fmt::format("target {} out of range for {} classes", t, L));
  }
  std::vector<const Tensor*> banks;
  if (detector != nullptr) {
    for (auto t : targets) banks.push_back(&detector->bank(t));
  }

  Tensor w0 = x;
  for (auto& v : w0.data()) v = std::atanh(2.0 * v * 0.999999);
  const Tensor x_const = x;

  std::vector<double> lower(N, 0.0), upper(N, config.c_upper), c(N, config.initial_c);
  std::vector<double> best_dist(N, std::numeric_limits<double>::infinity());
  std::vector<AttackResult> res(N);
  for (std::size_t n = 0; n < N; ++n) {
    res[n].adversarial = x.row(n);
    res[n].target = targets[n];
  }
  const std::size_t check_every = std::max<std::size_t>(config.max_iterations / 10, 1);
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kAdamEps = 1e-8;

  for (std::size_t round = 0; round < config.rounds; ++round) {
    Tensor w = w0;
    Tensor m(w.shape(), 0.0), v(w.shape(), 0.0);
    std::vector<double> prev(N, std::numeric_limits<double>::infinity());
    std::vector<bool> active(N, true);
    std::vector<bool> round_ok(N, false);
    Tensor c_tensor(Shape{N});
    for (std::size_t n = 0; n < N; ++n) c_tensor[n] = c[n];

    for (std::size_t it = 0; it < config.max_iterations; ++it) {
      Tape tape;
      auto params = model.bind(tape, false);
      Var wv = tape.leaf(w, true);
      Var xa = ops::scale(tape, ops::tanh(tape, wv), 0.5);
      auto out = model.forward(tape, xa, params);
      Var zp = model.prediction_logits(tape, out.logits);
      Var cv = tape.constant(c_tensor);
      Var dist = ops::sum_rows(tape, ops::square(tape, ops::sub(tape, xa, tape.constant(x_const))));
      Var penalty = cw_margin(tape, zp, targets, config.kappa);
      Var f2;
      if (detector != nullptr) {
        Var lkd = detect::log_kdensity(tape, out.hidden, banks, detector->sigma2());
        f2 = ops::leaky_relu(tape, ops::add_scalar(tape, ops::neg(tape, lkd), -config.eta), 0.0);
        penalty = ops::add(tape, penalty, f2);
      }
      Var per = ops::add(tape, dist, ops::mul(tape, cv, penalty));
      Var total = ops::sum(tape, per);

      const Tensor& xav = tape.value(xa);
      const Tensor& zv = tape.value(zp);
      const Tensor& dv = tape.value(dist);
      const Tensor& pv = tape.value(per);
      for (std::size_t n = 0; n < N; ++n) {
        if (!active[n]) continue;
        const auto zrow = zv.data().subspan(n * L, L);
        if (!cw_success(zrow, targets[n], config.kappa)) continue;
        round_ok[n] = true;
        if (dv[n] < best_dist[n]) {
          best_dist[n] = dv[n];
          res[n].adversarial = xav.row(n);
          res[n].success = true;
          res[n].label = argmax(zrow);
          res[n].objective = pv[n];
          res[n].c = c[n];
          if (detector != nullptr) res[n].f2 = tape.value(f2)[n];
        }
      }
      if (config.abort_early && it > 0 && it % check_every == 0) {
        for (std::size_t n = 0; n < N; ++n) {
          if (!active[n]) continue;
          if (pv[n] > prev[n] * 0.9999) active[n] = false;
          prev[n] = pv[n];
        }
      } else if (it == 0) {
        for (std::size_t n = 0; n < N; ++n) prev[n] = pv[n];
      }
      if (std::none_of(active.begin(), active.end(), [](bool b) { return b; })) break;

      tape.backward(total);
      const Tensor g = tape.grad(wv);
      const double t = static_cast<double>(it + 1);
      const double lr = config.step_size * std::sqrt(1.0 - std::pow(kBeta2, t)) / (1.0 - std::pow(kBeta1, t));
      for (std::size_t n = 0; n < N; ++n) {
        if (!active[n]) continue;
        ++res[n].iterations;
        for (std::size_t k = n * d; k < (n + 1) * d; ++k) {
          m[k] = kBeta1 * m[k] + (1.0 - kBeta1) * g[k];
          v[k] = kBeta2 * v[k] + (1.0 - kBeta2) * g[k] * g[k];
          w[k] -= lr * m[k] / (std::sqrt(v[k]) + kAdamEps);
        }
      }
    }

    for (std::size_t n = 0; n < N; ++n) {
      if (round_ok[n]) {
        upper[n] = std::min(upper[n], c[n]);
        if (upper[n] < config.c_upper) c[n] = 0.5 * (lower[n] + upper[n]);
      } else {
        lower[n] = std::max(lower[n], c[n]);
        c[n] = upper[n] < config.c_upper ? 0.5 * (lower[n] + upper[n]) : c[n] * 10.0;
      }
    }
  }

  // Unsuccessful searches still report the model's verdict on the returned point.
  std::vector<std::size_t> idle;
  for (std::size_t n = 0; n < N; ++n) {
    if (!res[n].success) idle.push_back(n);
  }
  if (!idle.empty()) {
    std::vector<Tensor> rows;
    for (auto n : idle) rows.push_back(res[n].adversarial);
    const auto preds = model.predict(stack(rows));
    for (std::size_t k = 0; k < idle.size(); ++k) res[idle[k]].label = preds[k].label;
  }
  return res;
}

std::vector<AttackResult> rand_noise(const Tensor& x, double epsilon, std::uint64_t seed) {
  if (!(epsilon >= 0.0)) throw std::invalid_argument(fmt::format("epsilon {} must be >= 0", epsilon));
  if (x.rank() != 4) throw std::invalid_argument("attack input must be N x C x H x W, got " + shape_string(x.shape()));
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-epsilon, epsilon);
  Tensor adv = x;
  if (epsilon > 0.0) {
    for (auto& v : adv.data()) v = clip_domain(v + u(rng));
  }
  std::vector<AttackResult> out(x.extent(0));
  for (std::size_t n = 0; n < out.size(); ++n) {
    out[n].adversarial = adv.row(n);
    out[n].iterations = 1;
  }
  return out;
}

std::vector<std::size_t> random_targets(std::span<const std::size_t> labels, std::size_t classes, std::uint64_t seed) {
  if (classes < 2) throw std::invalid_argument("targets need at least 2 classes");
  Rng rng(seed);
  std::vector<std::size_t> t(labels.size());
  for (std::size_t n = 0; n < labels.size(); ++n) {
    const auto k = static_cast<std::size_t>(rng() % (classes - 1));
    t[n] = k >= labels[n] ? k + 1 : k;
  }
  return t;
}

std::vector<AttackResult> run(const nn::NetworkModel& model, const Tensor& x, std::span<const std::size_t> labels,
                              const AttackConfig& config, std::span<const std::size_t> targets,
                              const detect::DetectorState* detector) {
  config.validate();
  check_batch(x, labels.size());
  std::vector<std::size_t> drawn;
  if (targeted(config.family) && targets.empty()) {
    drawn = random_targets(labels, model.classes(), config.seed);
    targets = drawn;
  }
  if (targeted(config.family) && targets.size() != labels.size()) {
    throw std::invalid_argument(fmt::format("{} targets for {} inputs", targets.size(), labels.size()));
  }
  switch (config.family) {
    case Family::Fgsm: return fgsm(model, x, labels, config.epsilon);
    case Family::Bim: return bim(model, x, labels, config.epsilon, config.iterations);
    case Family::Ilcm: return ilcm(model, x, config.epsilon, config.iterations);
    case Family::Jsma: return jsma(model, x, targets, config.jsma_offset, config.jsma_max_pixels);
    case Family::Cw:
    case Family::CwHc: return cw(model, x, targets, config);
    case Family::CwWb:
      if (detector == nullptr || !detector->fitted()) throw std::invalid_argument("cw_wb needs a fitted K-density detector");
      return cw(model, x, targets, config, detector);
    case Family::Rand: {
      auto out = rand_noise(x, config.epsilon, config.seed);
      const auto preds = model.predict(stack_adversarial(out));
      for (std::size_t n = 0; n < out.size(); ++n) {
        out[n].label = preds[n].label;
        out[n].target = labels[n];
        out[n].success = preds[n].label != labels[n];
      }
      return out;
    }
  }
  throw std::logic_error("unhandled attack family");
}

Tensor stack_adversarial(std::span<const AttackResult> results) {
  std::vector<Tensor> rows;
  rows.reserve(results.size());
  for (const auto& r : results) rows.push_back(r.adversarial);
  return stack(rows);
}

}  // namespace rce::attack
