#include "rce/detector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <fmt/format.h>
#include <json.hpp>

#include "rce/numeric.hpp"
#include "rce/serialization.hpp"

namespace rce::detect {

using json = nlohmann::ordered_json;

std::string_view to_string(Metric metric) {
  switch (metric) {
    case Metric::Confidence: return "confidence";
    case Metric::NonMe: return "non_me";
    case Metric::KDensity: return "kdensity";
  }
  return "?";
}

Metric parse_metric(std::string_view text) {
  if (text == "confidence") return Metric::Confidence;
  if (text == "non_me" || text == "nonME" || text == "non-me") return Metric::NonMe;
  if (text == "kdensity" || text == "k-density") return Metric::KDensity;
  throw std::invalid_argument(fmt::format("unknown metric '{}' (expected confidence, non_me or kdensity)", text));
}

double confidence_metric(std::span<const double> probs) {
  if (probs.empty()) throw std::invalid_argument("confidence of an empty vector");
  return probs[argmax(probs)];
}

double non_me_metric(std::span<const double> probs) {
  if (probs.size() < 2) throw std::invalid_argument("non-ME needs at least 2 classes");
  const std::size_t top = argmax(probs);
  double mass = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (i != top) mass += probs[i];
  }
  if (!(mass > 0.0)) return 0.0;
  double h = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (i == top || probs[i] <= 0.0) continue;
    const double p = probs[i] / mass;
    h -= p * std::log(p);
  }
  return h;
}

double gaussian_kernel(std::span<const double> a, std::span<const double> b, double sigma2) {
  if (a.size() != b.size()) throw std::invalid_argument(fmt::format("kernel of vectors sized {} and {}", a.size(), b.size()));
  double d2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d2 += (a[i] - b[i]) * (a[i] - b[i]);
  return std::exp(-d2 / sigma2);
}

namespace {

void check_bank(const Tensor& bank, std::size_t dim) {
  if (bank.rank() != 2 || bank.extent(1) != dim) {
    throw std::invalid_argument(fmt::format("bank {} does not hold {}-dimensional rows", shape_string(bank.shape()), dim));
  }
}

/// Exponents -|z_i - z|^2 / sigma2 for every bank row.
std::vector<double> exponents(const Tensor& bank, std::span<const double> z, double sigma2) {
  check_bank(bank, z.size());
  const std::size_t n = bank.extent(0), m = z.size();
  std::vector<double> e(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = bank.raw() + i * m;
    double d2 = 0.0;
    for (std::size_t k = 0; k < m; ++k) d2 += (row[k] - z[k]) * (row[k] - z[k]);
    e[i] = -d2 / sigma2;
  }
  return e;
}

}  // namespace

double log_kdensity(const Tensor& bank, std::span<const double> z, double sigma2) {
  const auto e = exponents(bank, z, sigma2);
  return log_sum_exp(e) - std::log(static_cast<double>(e.size()));
}

double kdensity(const Tensor& bank, std::span<const double> z, double sigma2) {
  const auto e = exponents(bank, z, sigma2);
  double s = 0.0;
  for (double v : e) s += std::exp(v);
  return s / static_cast<double>(e.size());
}

Var log_kdensity(Tape& tape, Var hidden, std::span<const Tensor* const> banks, double sigma2) {
  const Tensor& h = tape.value(hidden);
  if (h.rank() != 2 || h.extent(0) != banks.size()) {
    throw std::invalid_argument(fmt::format("log_kdensity: hidden {} for {} banks", shape_string(h.shape()), banks.size()));
  }
  const std::size_t n = h.extent(0), m = h.extent(1);
  Tensor out(Shape{n});
  // Per row: softmax weights over bank points, reused by backward.
  std::vector<std::vector<double>> weights(n);
  for (std::size_t r = 0; r < n; ++r) {
    auto e = exponents(*banks[r], h.data().subspan(r * m, m), sigma2);
    const double lse = log_sum_exp(e);
    out[r] = lse - std::log(static_cast<double>(e.size()));
    for (auto& v : e) v = std::exp(v - lse);
    weights[r] = std::move(e);
  }
  std::vector<const Tensor*> bank_ptrs(banks.begin(), banks.end());
  return tape.record(std::move(out), {hidden},
                     [weights = std::move(weights), bank_ptrs = std::move(bank_ptrs), h, n, m, sigma2](
                         const Tensor& g, std::span<Tensor* const> grads) {
                       Tensor* gh = grads[0];
                       if (gh == nullptr) return;
                       for (std::size_t r = 0; r < n; ++r) {
                         const Tensor& bank = *bank_ptrs[r];
                         const double* z = h.raw() + r * m;
                         for (std::size_t i = 0; i < weights[r].size(); ++i) {
                           const double w = weights[r][i] * g[r] * (-2.0 / sigma2);
                           if (w == 0.0) continue;
                           const double* zi = bank.raw() + i * m;
                           for (std::size_t k = 0; k < m; ++k) (*gh)[r * m + k] += w * (z[k] - zi[k]);
                         }
                       }
                     });
}

double default_bandwidth(nn::Objective objective) {
  return objective == nn::Objective::Reverse ? 0.1 / 0.26 : 1.0 / 0.26;
}

DetectorState DetectorState::from_banks(Metric metric, std::vector<Tensor> banks, double sigma2) {
  if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) throw std::invalid_argument(fmt::format("bandwidth {} must be > 0", sigma2));
  if (banks.empty()) throw std::invalid_argument("detector needs at least one class bank");
  const std::size_t m = banks.front().rank() == 2 ? banks.front().extent(1) : 0;
  for (std::size_t k = 0; k < banks.size(); ++k) {
    if (banks[k].rank() != 2 || banks[k].extent(0) == 0) throw std::invalid_argument(fmt::format("class {} has an empty bank", k));
    check_bank(banks[k], m);
  }
  DetectorState s;
  s.metric_ = metric;
  s.sigma2_ = sigma2;
  s.banks_ = std::move(banks);
  return s;
}

DetectorState DetectorState::fit(const nn::NetworkModel& model, const data::Dataset& train, const DetectorConfig& config) {
  if (train.size() == 0) throw std::invalid_argument("detector fit on an empty dataset");
  const std::size_t L = model.classes();
  std::vector<std::vector<std::size_t>> members(L);
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (train.labels[i] >= L) throw std::invalid_argument(fmt::format("label {} outside model classes", train.labels[i]));
    members[train.labels[i]].push_back(i);
  }
  for (std::size_t k = 0; k < L; ++k) {
    if (members[k].empty()) throw std::invalid_argument(fmt::format("class {} has no training points", k));
  }
  if (config.bank_cap > 0) {
    for (std::size_t k = 0; k < L; ++k) {
      if (members[k].size() <= config.bank_cap) continue;
      Rng rng(derive_seed(config.seed, k));
      const auto perm = permutation(members[k].size(), rng);
      std::vector<std::size_t> kept(config.bank_cap);
      for (std::size_t j = 0; j < config.bank_cap; ++j) kept[j] = members[k][perm[j]];
      std::sort(kept.begin(), kept.end());
      members[k] = std::move(kept);
    }
  }

  const nn::Evaluation ev = model.evaluate(train.images);
  const std::size_t m = ev.hidden.extent(1);
  std::vector<Tensor> banks;
  banks.reserve(L);
  for (std::size_t k = 0; k < L; ++k) {
    Tensor b(Shape{members[k].size(), m});
    for (std::size_t j = 0; j < members[k].size(); ++j) {
      std::copy_n(ev.hidden.raw() + members[k][j] * m, m, b.raw() + j * m);
    }
    banks.push_back(std::move(b));
  }
  return from_banks(config.metric, std::move(banks), config.sigma2);
}

void DetectorState::set_threshold(double threshold, double q) {
  if (std::isnan(threshold) || threshold == std::numeric_limits<double>::infinity()) {
    throw std::invalid_argument(fmt::format("threshold {} is not usable", threshold));
  }
  threshold_ = threshold;
  q_ = q;
}

void DetectorState::require_fitted() const {
  if (!fitted()) throw std::logic_error("detector state is not fitted");
}

const Tensor& DetectorState::bank(std::size_t label) const {
  require_fitted();
  if (label >= banks_.size()) throw std::out_of_range(fmt::format("no bank for class {}", label));
  return banks_[label];
}

std::vector<std::size_t> DetectorState::class_counts() const {
  std::vector<std::size_t> c;
  for (const auto& b : banks_) c.push_back(b.extent(0));
  return c;
}

double DetectorState::log_kdensity_of(std::span<const double> z, std::size_t label) const {
  return detect::log_kdensity(bank(label), z, sigma2_);
}

std::vector<double> DetectorState::scores(const nn::Evaluation& ev) const {
  const std::size_t n = ev.probs.extent(0), L = ev.probs.extent(1);
  std::vector<double> out(n);
  for (std::size_t r = 0; r < n; ++r) {
    const auto p = ev.probs.data().subspan(r * L, L);
    switch (metric_) {
      case Metric::Confidence: out[r] = confidence_metric(p); break;
      case Metric::NonMe: out[r] = non_me_metric(p); break;
      case Metric::KDensity: {
        const std::size_t m = ev.hidden.extent(1);
        out[r] = log_kdensity_of(ev.hidden.data().subspan(r * m, m), argmax(p));
        break;
      }
    }
  }
  return out;
}

std::vector<double> DetectorState::scores(const nn::NetworkModel& model, const Tensor& batch) const {
  if (metric_ == Metric::KDensity) require_fitted();
  return scores(model.evaluate(batch));
}

double DetectorState::kdensity_score(const nn::NetworkModel& model, const Tensor& image) const {
  require_fitted();
  Shape s{1};
  s.insert(s.end(), image.shape().end() - 3, image.shape().end());
  const auto ev = model.evaluate(image.reshaped(s));
  return detect::kdensity(bank(argmax(ev.probs.data())), ev.hidden.data(), sigma2_);
}

void DetectorState::save(const std::filesystem::path& path) const {
  require_fitted();
  std::vector<NamedTensor> tensors;
  for (std::size_t k = 0; k < banks_.size(); ++k) tensors.push_back({fmt::format("bank.{}", k), banks_[k]});
  save_tensors(path, tensors);
  json meta;
  meta["metric"] = std::string(to_string(metric_));
  meta["sigma2"] = sigma2_;
  meta["T"] = std::isfinite(threshold_) ? json(threshold_) : json(nullptr);
  meta["q"] = q_;
  meta["class_counts"] = class_counts();
  meta["score_domain"] = metric_ == Metric::KDensity ? "log" : "linear";
  std::ofstream out(sidecar_path(path), std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + sidecar_path(path).string());
  out << meta.dump(2) << '\n';
}

DetectorState DetectorState::load(const std::filesystem::path& path) {
  std::ifstream in(sidecar_path(path));
  if (!in) throw std::runtime_error("missing detector sidecar " + sidecar_path(path).string());
  const json meta = json::parse(in);
  auto tensors = load_tensors(path);
  std::vector<Tensor> banks;
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    if (tensors[k].name != fmt::format("bank.{}", k)) {
      throw FormatError(fmt::format("detector tensor {} is named '{}'", k, tensors[k].name));
    }
    banks.push_back(std::move(tensors[k].tensor));
  }
  auto s = from_banks(parse_metric(meta.at("metric").get<std::string>()), std::move(banks), meta.at("sigma2").get<double>());
  const auto& t = meta.at("T");
  s.set_threshold(t.is_null() ? -std::numeric_limits<double>::infinity() : t.get<double>(), meta.value("q", 0.0));
  return s;
}

double training_median_neg_log_kd(const DetectorState& state, const nn::NetworkModel& model,
                                  const data::Dataset& train) {
  if (train.size() == 0) throw std::invalid_argument("training set is empty");
  const auto ev = model.evaluate(train.images);
  const std::size_t m = ev.hidden.extent(1), L = ev.probs.extent(1);
  std::vector<double> neg;
  neg.reserve(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto z = ev.hidden.data().subspan(i * m, m);
    const auto label = nn::predict_label(ev.probs.data().subspan(i * L, L)).label;
    double zz = 0.0;
    for (double v : z) zz += v * v;
    const double self = 1e-24 * (1.0 + zz) / state.sigma2();
    auto e = exponents(state.bank(label), z, state.sigma2());
    e.erase(std::remove_if(e.begin(), e.end(), [&](double v) { return -v <= self; }), e.end());
    if (e.empty()) continue;
    neg.push_back(std::log(static_cast<double>(e.size())) - log_sum_exp(e));
  }
  if (neg.empty()) throw std::invalid_argument("no training item has a bank neighbour besides itself");
  return median(std::move(neg));
}

double threshold_from_scores(std::vector<double> scores, double q) {
  if (scores.empty()) throw std::invalid_argument("no correctly classified reference points");
  if (!(q >= 0.0 && q < 100.0)) throw std::invalid_argument(fmt::format("threshold percentile {} outside [0, 100)", q));
  if (q == 0.0) {
    const double lo = *std::min_element(scores.begin(), scores.end());
    return std::nextafter(lo, -std::numeric_limits<double>::infinity());
  }
  return percentile(std::move(scores), q);
}

double threshold_select(const DetectorState& state, const nn::NetworkModel& model, const data::Dataset& reference,
                        double q) {
  if (reference.size() == 0) throw std::invalid_argument("empty reference set");
  const auto ev = model.evaluate(reference.images);
  const auto all = state.scores(ev);
  const std::size_t L = ev.probs.extent(1);
  std::vector<double> kept;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    if (argmax(ev.probs.data().subspan(i * L, L)) == reference.labels[i]) kept.push_back(all[i]);
  }
  return threshold_from_scores(std::move(kept), q);
}

std::optional<std::size_t> thresholded_predict(double score, std::size_t label, double threshold) {
  if (score > threshold) return label;
  return std::nullopt;
}

std::vector<std::optional<std::size_t>> thresholded_predict(const DetectorState& state, const nn::NetworkModel& model,
                                                            const Tensor& batch) {
  const auto ev = model.evaluate(batch);
  const auto s = state.scores(ev);
  const std::size_t L = ev.probs.extent(1);
  std::vector<std::optional<std::size_t>> out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    out[i] = thresholded_predict(s[i], argmax(ev.probs.data().subspan(i * L, L)), state.threshold());
  }
  return out;
}

}  // namespace rce::detect
