#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rce/serialization.hpp"
#include "rce/tape.hpp"
#include "rce/tensor.hpp"

namespace rce::nn {

/// Training objective. Reverse-trained models predict with negated logits.
enum class Objective { CrossEntropy, LabelSmoothing, Reverse };

std::string_view to_string(Objective objective);
Objective parse_objective(std::string_view text);

/// Mlp:   flatten -> dense(hidden) -> leaky-ReLU (= Z) -> dense(L)
/// Small: conv(16,3x3) -> lrelu -> pool -> conv(32,3x3) -> lrelu -> pool
///        -> dense(hidden) -> lrelu (= Z) -> dense(L)
/// Deep:  three padded conv(3x3) blocks of 16/32/32 channels with pooling,
///        then the same head as Small.
enum class Architecture { Mlp, Small, Deep };

std::string_view to_string(Architecture arch);
Architecture parse_architecture(std::string_view text);

struct ModelSpec {
  Architecture architecture = Architecture::Small;
  std::size_t channels = 1;
  std::size_t height = 28;
  std::size_t width = 28;
  std::size_t classes = 10;
  std::size_t hidden = 64;
  double leak = 0.1;

  Shape input_shape() const { return {channels, height, width}; }
};

/// Symbolic outputs of one forward pass.
struct ForwardVars {
  Var hidden;  ///< final hidden vector Z, [N x hidden]
  Var logits;  ///< Z_pre = W_s Z + b_s, [N x L]
};

/// Concrete outputs of a forward pass over a batch.
struct Evaluation {
  Tensor hidden;  ///< [N x hidden]
  Tensor logits;  ///< Z_pre, [N x L]
  Tensor probs;   ///< prediction-rule probabilities, [N x L]
};

struct Prediction {
  std::size_t label = 0;
  double confidence = 0.0;
};

/// A trained or freshly initialized classifier F(X, theta).
///
/// The objective is a property of the model: `probabilities` applies
/// softmax(Z_pre) for CE / label smoothing and softmax(-Z_pre) for RCE.
/// A model is immutable once trained and safe to evaluate concurrently.
class NetworkModel {
 public:
  NetworkModel() = default;

  /// He fan-in initialization of every weight, zero biases.
  static NetworkModel initialize(const ModelSpec& spec, Objective objective, std::uint64_t seed,
                                 double smoothing_lambda = 0.0);

  const ModelSpec& spec() const noexcept { return spec_; }
  Objective objective() const noexcept { return objective_; }
  void set_objective(Objective objective, double smoothing_lambda = 0.0);
  double smoothing_lambda() const noexcept { return lambda_; }
  std::size_t classes() const noexcept { return spec_.classes; }

  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t train_steps() const noexcept { return train_steps_; }
  void set_train_steps(std::size_t steps) noexcept { train_steps_ = steps; }

  std::span<NamedTensor> parameters() noexcept { return params_; }
  std::span<const NamedTensor> parameters() const noexcept { return params_; }
  std::size_t parameter_count() const;

  /// Records every parameter on `tape`, as gradient leaves when `trainable`.
  std::vector<Var> bind(Tape& tape, bool trainable) const;

  /// x: [N x C x H x W].
  ForwardVars forward(Tape& tape, Var x, std::span<const Var> params) const;

  /// Z_pre for CE / label smoothing, -Z_pre for RCE.
  Var prediction_logits(Tape& tape, Var logits) const;
  Tensor prediction_logits(const Tensor& logits) const;

  /// Forward pass in chunks without gradient bookkeeping.
  Evaluation evaluate(const Tensor& batch, std::size_t chunk = 256) const;
  Tensor probabilities(const Tensor& batch) const { return evaluate(batch).probs; }
  std::vector<Prediction> predict(const Tensor& batch) const;

  /// Writes the binary parameters to `path` and metadata to `path.json`.
  void save(const std::filesystem::path& path) const;
  static NetworkModel load(const std::filesystem::path& path);

 private:
  ModelSpec spec_;
  Objective objective_ = Objective::CrossEntropy;
  double lambda_ = 0.0;
  std::uint64_t seed_ = 0;
  std::size_t train_steps_ = 0;
  std::vector<NamedTensor> params_;
};

/// softmax(-Z_pre) for every row of a [N x L] logit tensor.
Tensor reverse_logits_predict(const Tensor& logits);
/// softmax(-Z_pre(x)) under `model`, regardless of the model's objective tag.
Tensor reverse_logits_predict(const NetworkModel& model, const Tensor& batch);

/// Label = argmax (lowest index on ties) with its probability.
Prediction predict_label(std::span<const double> probs);
/// Prediction of a single image [C x H x W] or batch row under the model's rule.
Prediction predict_label(const NetworkModel& model, const Tensor& image);

}  // namespace rce::nn
