#include "rce/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

namespace rce::eval {

double roc_auc(std::span<const double> normal, std::span<const double> adversarial) {
  if (normal.empty() || adversarial.empty()) throw std::invalid_argument("roc_auc needs two nonempty score sets");
  for (double v : normal) {
    if (std::isnan(v)) throw std::invalid_argument("roc_auc: NaN score");
  }
  for (double v : adversarial) {
    if (std::isnan(v)) throw std::invalid_argument("roc_auc: NaN score");
  }
  // Rank-sum over the merged sample: 2 * wins + ties, counted exactly.
  std::vector<std::pair<double, int>> all;
  all.reserve(normal.size() + adversarial.size());
  for (double v : normal) all.emplace_back(v, 1);
  for (double v : adversarial) all.emplace_back(v, 0);
  std::sort(all.begin(), all.end());
  unsigned long long twice = 0;
  unsigned long long adv_below = 0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    unsigned long long n_norm = 0, n_adv = 0;
    while (j < all.size() && all[j].first == all[i].first) {
      (all[j].second == 1 ? n_norm : n_adv) += 1;
      ++j;
    }
    twice += n_norm * (2 * adv_below + n_adv);
    adv_below += n_adv;
    i = j;
  }
  return static_cast<double>(twice) / (2.0 * static_cast<double>(normal.size()) * static_cast<double>(adversarial.size()));
}

Cohort build_detection_cohort(const nn::NetworkModel& model, const data::Dataset& test,
                              std::span<const attack::AttackResult> results) {
  if (results.size() != test.size()) {
    throw std::invalid_argument(fmt::format("{} attack results for {} test points", results.size(), test.size()));
  }
  Cohort c;
  if (test.size() == 0) return c;
  const auto preds = model.predict(test.images);
  std::vector<Tensor> normal, adv;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (preds[i].label != test.labels[i] || !results[i].success) continue;
    c.indices.push_back(i);
    c.labels.push_back(test.labels[i]);
    c.results.push_back(results[i]);
    normal.push_back(test.image(i));
    adv.push_back(results[i].adversarial);
  }
  if (!c.empty()) {
    c.normal = stack(normal);
    c.adversarial = stack(adv);
  }
  return c;
}

Cohort build_detection_cohort(const nn::NetworkModel& model, const attack::AttackConfig& config,
                              const data::Dataset& test, const detect::DetectorState* detector) {
  const auto results = attack::run(model, test.images, test.labels, config, {}, detector);
  return build_detection_cohort(model, test, results);
}

double detection_auc(const detect::DetectorState& detector, const nn::NetworkModel& model, const Cohort& cohort) {
  if (cohort.empty()) return std::numeric_limits<double>::quiet_NaN();
  const auto normal = detector.scores(model, cohort.normal);
  const auto adv = detector.scores(model, cohort.adversarial);
  return roc_auc(normal, adv);
}

Series accuracy_vs_epsilon(const nn::NetworkModel& model, attack::Family family, std::span<const double> epsilons,
                           const data::Dataset& subset, std::size_t iterations) {
  if (!attack::epsilon_bounded(family)) {
    throw std::invalid_argument(fmt::format("accuracy curve needs an epsilon-bounded attack, got {}", attack::to_string(family)));
  }
  if (subset.size() == 0) throw std::invalid_argument("accuracy curve on an empty subset");
  Series s;
  for (double eps : epsilons) {
    auto config = attack::AttackConfig::defaults(family);
    config.epsilon = eps;
    config.iterations = iterations;
    const auto results = attack::run(model, subset.images, subset.labels, config);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < results.size(); ++i) correct += results[i].label == subset.labels[i] ? 1 : 0;
    s.epsilons.push_back(eps);
    s.accuracy.push_back(static_cast<double>(correct) / static_cast<double>(subset.size()));
  }
  return s;
}

double distortion(const Tensor& x, const Tensor& adversarial) {
  if (x.shape() != adversarial.shape()) {
    throw std::invalid_argument(fmt::format("distortion of {} vs {}", shape_string(x.shape()), shape_string(adversarial.shape())));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = 255.0 * (x[i] - adversarial[i]);
    s += d * d;
  }
  return std::sqrt(s) / std::sqrt(static_cast<double>(x.size()));
}

DistortionSummary summarize_distortion(const Tensor& x, std::span<const attack::AttackResult> results) {
  if (x.rank() != 4 || x.extent(0) != results.size()) throw std::invalid_argument("distortion summary: batch and results disagree");
  DistortionSummary s;
  double total = 0.0;
  std::size_t ok = 0;
  for (std::size_t n = 0; n < results.size(); ++n) {
    if (!results[n].success) {
      s.per_image.push_back(std::numeric_limits<double>::quiet_NaN());
      ++s.failures;
      continue;
    }
    const double d = distortion(x.row(n), results[n].adversarial);
    s.per_image.push_back(d);
    total += d;
    ++ok;
  }
  s.mean = ok > 0 ? total / static_cast<double>(ok) : std::numeric_limits<double>::quiet_NaN();
  return s;
}

DistortionSummary minimal_distortion(const nn::NetworkModel& model, const Tensor& x,
                                     std::span<const std::size_t> targets, const attack::AttackConfig& cw_config) {
  const auto results = attack::cw(model, x, targets, cw_config);
  return summarize_distortion(x, results);
}

double Ratio::value() const {
  return total == 0 ? std::numeric_limits<double>::quiet_NaN() : static_cast<double>(positive) / static_cast<double>(total);
}

Ratio f2_positive_ratio(std::span<const attack::AttackResult> results) {
  Ratio r;
  for (const auto& res : results) {
    if (!res.success) continue;
    ++r.total;
    if (res.f2 > 0.0) ++r.positive;
  }
  return r;
}

TransferResult transfer_eval(const nn::NetworkModel& substitute, const nn::NetworkModel& target,
                             const detect::DetectorState& target_detector, const attack::AttackConfig& config,
                             const data::Dataset& subset, const detect::DetectorState* substitute_detector) {
  const auto ps = substitute.predict(subset.images);
  const auto pt = target.predict(subset.images);
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < subset.size(); ++i) {
    if (ps[i].label == subset.labels[i] && pt[i].label == subset.labels[i]) keep.push_back(i);
  }
  TransferResult t;
  t.n = keep.size();
  t.auc = std::numeric_limits<double>::quiet_NaN();
  if (keep.empty()) return t;
  const auto both = subset.subset(keep);
  const auto results = attack::run(substitute, both.images, both.labels, config, {}, substitute_detector);
  std::vector<Tensor> crafted;
  std::vector<std::size_t> crafted_idx;
  std::size_t direct = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (!results[i].success) continue;
    ++direct;
    crafted.push_back(results[i].adversarial);
    crafted_idx.push_back(i);
  }
  t.direct_rate = static_cast<double>(direct) / static_cast<double>(t.n);
  if (crafted.empty()) return t;
  const Tensor adv = stack(crafted);
  const auto replay = target.predict(adv);
  std::vector<Tensor> fooled;
  for (std::size_t k = 0; k < replay.size(); ++k) {
    if (replay[k].label != both.labels[crafted_idx[k]]) fooled.push_back(crafted[k]);
  }
  t.transferred = fooled.size();
  t.transfer_rate = static_cast<double>(fooled.size()) / static_cast<double>(t.n);
  if (!fooled.empty()) {
    const auto normal = target_detector.scores(target, both.images);
    const auto adv_scores = target_detector.scores(target, stack(fooled));
    t.auc = roc_auc(normal, adv_scores);
  }
  return t;
}

}  // namespace rce::eval
