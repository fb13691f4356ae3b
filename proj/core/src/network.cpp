#include "rce/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <fmt/format.h>
#include <json.hpp>

#include "rce/numeric.hpp"
#include "rce/ops.hpp"

namespace rce::nn {

using json = nlohmann::ordered_json;

std::string_view to_string(Objective objective) {
  switch (objective) {
    case Objective::CrossEntropy: return "ce";
    case Objective::LabelSmoothing: return "ls";
    case Objective::Reverse: return "rce";
  }
  return "?";
}

Objective parse_objective(std::string_view text) {
  if (text == "ce") return Objective::CrossEntropy;
  if (text == "ls") return Objective::LabelSmoothing;
  if (text == "rce") return Objective::Reverse;
  throw std::invalid_argument(fmt::format("unknown objective '{}' (expected ce, ls or rce)", text));
}

std::string_view to_string(Architecture arch) {
  switch (arch) {
    case Architecture::Mlp: return "mlp";
    case Architecture::Small: return "small";
    case Architecture::Deep: return "deep";
  }
  return "?";
}

Architecture parse_architecture(std::string_view text) {
  if (text == "mlp") return Architecture::Mlp;
  if (text == "small") return Architecture::Small;
  if (text == "deep") return Architecture::Deep;
  throw std::invalid_argument(fmt::format("unknown architecture '{}' (expected mlp, small or deep)", text));
}

namespace {

struct ConvBlock {
  std::size_t out_channels;
  std::size_t padding;
};

std::vector<ConvBlock> conv_blocks(Architecture arch) {
  switch (arch) {
    case Architecture::Mlp: return {};
    case Architecture::Small: return {{16, 0}, {32, 0}};
    case Architecture::Deep: return {{16, 1}, {32, 1}, {32, 1}};
  }
  return {};
}

constexpr std::size_t kKernel = 3;
constexpr std::size_t kPool = 2;

/// Flattened feature count entering the hidden dense layer.
std::size_t feature_count(const ModelSpec& spec) {
  std::size_t c = spec.channels, h = spec.height, w = spec.width;
  for (const auto& b : conv_blocks(spec.architecture)) {
    if (h + 2 * b.padding < kKernel || w + 2 * b.padding < kKernel) {
      throw std::invalid_argument(fmt::format("input {}x{}x{} too small for architecture {}", spec.channels,
                                              spec.height, spec.width, to_string(spec.architecture)));
    }
    h = h + 2 * b.padding - kKernel + 1;
    w = w + 2 * b.padding - kKernel + 1;
    if (h < kPool || w < kPool) {
      throw std::invalid_argument(fmt::format("input {}x{}x{} too small for architecture {}", spec.channels,
                                              spec.height, spec.width, to_string(spec.architecture)));
    }
    h /= kPool;
    w /= kPool;
    c = b.out_channels;
  }
  return c * h * w;
}

Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

void validate_spec(const ModelSpec& spec) {
  if (spec.channels == 0 || spec.height == 0 || spec.width == 0) throw std::invalid_argument("model input extents must be positive");
  if (spec.classes < 2) throw std::invalid_argument(fmt::format("model needs at least 2 classes, got {}", spec.classes));
  if (spec.hidden == 0) throw std::invalid_argument("hidden width must be positive");
  if (!(spec.leak >= 0.0 && spec.leak < 1.0)) throw std::invalid_argument(fmt::format("leak {} not in [0, 1)", spec.leak));
}

}  // namespace

NetworkModel NetworkModel::initialize(const ModelSpec& spec, Objective objective, std::uint64_t seed,
                                      double smoothing_lambda) {
  validate_spec(spec);
  NetworkModel m;
  m.spec_ = spec;
  m.set_objective(objective, smoothing_lambda);
  m.seed_ = seed;
  Rng rng(seed);
  std::size_t in_channels = spec.channels;
  std::size_t idx = 1;
  for (const auto& b : conv_blocks(spec.architecture)) {
    const std::size_t fan_in = in_channels * kKernel * kKernel;
    m.params_.push_back({fmt::format("conv{}.weight", idx), he_normal({b.out_channels, in_channels, kKernel, kKernel}, fan_in, rng)});
    m.params_.push_back({fmt::format("conv{}.bias", idx), Tensor(Shape{b.out_channels}, 0.0)});
    in_channels = b.out_channels;
    ++idx;
  }
  const std::size_t features = feature_count(spec);
  m.params_.push_back({"hidden.weight", he_normal({spec.hidden, features}, features, rng)});
  m.params_.push_back({"hidden.bias", Tensor(Shape{spec.hidden}, 0.0)});
  m.params_.push_back({"logits.weight", he_normal({spec.classes, spec.hidden}, spec.hidden, rng)});
  m.params_.push_back({"logits.bias", Tensor(Shape{spec.classes}, 0.0)});
  return m;
}

void NetworkModel::set_objective(Objective objective, double smoothing_lambda) {
  if (objective == Objective::LabelSmoothing && !(smoothing_lambda >= 0.0)) {
    throw std::invalid_argument(fmt::format("label smoothing lambda {} must be >= 0", smoothing_lambda));
  }
  objective_ = objective;
  lambda_ = objective == Objective::LabelSmoothing ? smoothing_lambda : 0.0;
}

std::size_t NetworkModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

std::vector<Var> NetworkModel::bind(Tape& tape, bool trainable) const {
  std::vector<Var> vars;
  vars.reserve(params_.size());
  for (const auto& p : params_) vars.push_back(tape.leaf(p.tensor, trainable));
  return vars;
}

ForwardVars NetworkModel::forward(Tape& tape, Var x, std::span<const Var> params) const {
  if (params.size() != params_.size()) {
    throw std::invalid_argument(fmt::format("forward: {} parameter vars for a model with {}", params.size(), params_.size()));
  }
  const Tensor& xv = tape.value(x);
  if (xv.rank() != 4 || xv.extent(1) != spec_.channels || xv.extent(2) != spec_.height || xv.extent(3) != spec_.width) {
    throw std::invalid_argument(fmt::format("forward: input {} does not match model input {}", shape_string(xv.shape()),
                                            shape_string(spec_.input_shape())));
  }
  const std::size_t n = xv.extent(0);
  Var h = x;
  std::size_t p = 0;
  for (std::size_t b = 0; b < conv_blocks(spec_.architecture).size(); ++b) {
    const auto block = conv_blocks(spec_.architecture)[b];
    h = ops::conv2d(tape, h, params[p], 1, block.padding);
    h = ops::add_channel_bias(tape, h, params[p + 1]);
    h = ops::leaky_relu(tape, h, spec_.leak);
    h = ops::max_pool2d(tape, h, kPool);
    p += 2;
  }
  h = ops::reshape(tape, h, Shape{n, tape.value(h).size() / n});
  Var hidden = ops::leaky_relu(tape, ops::linear(tape, h, params[p], params[p + 1]), spec_.leak);
  Var logits = ops::linear(tape, hidden, params[p + 2], params[p + 3]);
  return {hidden, logits};
}

Var NetworkModel::prediction_logits(Tape& tape, Var logits) const {
  return objective_ == Objective::Reverse ? ops::neg(tape, logits) : logits;
}

Tensor NetworkModel::prediction_logits(const Tensor& logits) const {
  if (objective_ != Objective::Reverse) return logits;
  Tensor out = logits;
  for (auto& v : out.data()) v = -v;
  return out;
}

Evaluation NetworkModel::evaluate(const Tensor& batch, std::size_t chunk) const {
  if (batch.rank() != 4) throw std::invalid_argument("evaluate expects N x C x H x W, got " + shape_string(batch.shape()));
  const std::size_t n = batch.extent(0);
  chunk = std::max<std::size_t>(chunk, 1);
  Evaluation ev{Tensor(Shape{n, spec_.hidden}), Tensor(Shape{n, spec_.classes}), Tensor(Shape{n, spec_.classes})};
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t end = std::min(n, begin + chunk);
    Tape tape;
    auto params = bind(tape, false);
    Var x = tape.constant(batch.slice(begin, end));
    auto out = forward(tape, x, params);
    const Tensor& hid = tape.value(out.hidden);
    const Tensor& lg = tape.value(out.logits);
    const Tensor probs = softmax_rows(prediction_logits(lg));
    std::copy(hid.data().begin(), hid.data().end(), ev.hidden.raw() + begin * spec_.hidden);
    std::copy(lg.data().begin(), lg.data().end(), ev.logits.raw() + begin * spec_.classes);
    std::copy(probs.data().begin(), probs.data().end(), ev.probs.raw() + begin * spec_.classes);
  }
  return ev;
}

std::vector<Prediction> NetworkModel::predict(const Tensor& batch) const {
  const Tensor probs = probabilities(batch);
  const std::size_t L = spec_.classes;
  std::vector<Prediction> out(batch.extent(0));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = predict_label(probs.data().subspan(i * L, L));
  return out;
}

void NetworkModel::save(const std::filesystem::path& path) const {
  save_tensors(path, params_);
  json meta;
  meta["objective"] = std::string(to_string(objective_));
  meta["architecture"] = std::string(to_string(spec_.architecture));
  meta["L"] = spec_.classes;
  meta["seed"] = seed_;
  meta["train_steps"] = train_steps_;
  meta["input"] = {spec_.channels, spec_.height, spec_.width};
  meta["hidden"] = spec_.hidden;
  meta["leak"] = spec_.leak;
  meta["lambda"] = lambda_;
  std::ofstream out(sidecar_path(path), std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + sidecar_path(path).string());
  out << meta.dump(2) << '\n';
}

NetworkModel NetworkModel::load(const std::filesystem::path& path) {
  std::ifstream in(sidecar_path(path));
  if (!in) throw std::runtime_error("missing model sidecar " + sidecar_path(path).string());
  const json meta = json::parse(in);
  ModelSpec spec;
  spec.architecture = parse_architecture(meta.at("architecture").get<std::string>());
  spec.classes = meta.at("L").get<std::size_t>();
  const auto input = meta.at("input").get<std::vector<std::size_t>>();
  if (input.size() != 3) throw FormatError("model sidecar 'input' must list C, H, W");
  spec.channels = input[0];
  spec.height = input[1];
  spec.width = input[2];
  spec.hidden = meta.at("hidden").get<std::size_t>();
  spec.leak = meta.at("leak").get<double>();
  validate_spec(spec);

  NetworkModel m;
  m.spec_ = spec;
  m.set_objective(parse_objective(meta.at("objective").get<std::string>()), meta.value("lambda", 0.0));
  m.seed_ = meta.at("seed").get<std::uint64_t>();
  m.train_steps_ = meta.at("train_steps").get<std::size_t>();
  m.params_ = load_tensors(path);

  const NetworkModel reference = initialize(spec, m.objective_, 0, m.lambda_);
  if (reference.params_.size() != m.params_.size()) {
    throw FormatError(fmt::format("checkpoint holds {} tensors, architecture {} needs {}", m.params_.size(),
                                  to_string(spec.architecture), reference.params_.size()));
  }
  for (std::size_t i = 0; i < m.params_.size(); ++i) {
    if (m.params_[i].name != reference.params_[i].name || m.params_[i].tensor.shape() != reference.params_[i].tensor.shape()) {
      throw FormatError(fmt::format("checkpoint tensor {} '{}' {} does not match expected '{}' {}", i, m.params_[i].name,
                                    shape_string(m.params_[i].tensor.shape()), reference.params_[i].name,
                                    shape_string(reference.params_[i].tensor.shape())));
    }
  }
  return m;
}

Tensor reverse_logits_predict(const Tensor& logits) {
  Tensor neg = logits;
  for (auto& v : neg.data()) v = -v;
  return softmax_rows(neg);
}

Tensor reverse_logits_predict(const NetworkModel& model, const Tensor& batch) {
  return reverse_logits_predict(model.evaluate(batch).logits);
}

Prediction predict_label(std::span<const double> probs) {
  const std::size_t i = argmax(probs);
  return {i, probs[i]};
}

Prediction predict_label(const NetworkModel& model, const Tensor& image) {
  Shape s{1};
  s.insert(s.end(), image.shape().end() - 3, image.shape().end());
  return model.predict(image.reshaped(s)).front();
}

}  // namespace rce::nn
