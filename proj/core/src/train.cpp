#include "rce/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "rce/losses.hpp"
#include "rce/numeric.hpp"
#include "rce/ops.hpp"
#include "rce/tape.hpp"

namespace rce {

void TrainConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
  if (objective == nn::Objective::LabelSmoothing && !(lambda >= 0.0)) {
    throw std::invalid_argument(fmt::format("label smoothing lambda {} must be >= 0", lambda));
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument(fmt::format("momentum {} not in [0, 1)", momentum));
  if (!(weight_decay >= 0.0)) throw std::invalid_argument(fmt::format("weight decay {} must be >= 0", weight_decay));
  schedule.validate();
}

TrainingDiverged::TrainingDiverged(std::size_t step, double loss)
    : std::runtime_error(fmt::format("training diverged at step {} (loss {})", step, loss)), step_(step) {}

TrainResult train(nn::NetworkModel model, const data::Dataset& dataset, const TrainConfig& config,
                  const TrainObserver& observer) {
  config.validate();
  model.set_objective(config.objective, config.lambda);
  TrainResult result;
  if (config.steps == 0) {
    result.model = std::move(model);
    return result;
  }
  if (dataset.size() == 0) throw std::invalid_argument("cannot train on an empty dataset");
  if (dataset.classes > model.classes()) {
    throw std::invalid_argument(fmt::format("dataset has {} classes, model {}", dataset.classes, model.classes()));
  }

  const std::size_t batch = std::min(config.batch_size, dataset.size());
  SgdMomentum optimizer(SgdConfig{config.schedule, config.momentum, config.weight_decay});
  std::vector<std::size_t> order;
  std::size_t cursor = dataset.size();
  std::size_t epoch = 0;
  double window = 0.0;
  std::size_t window_count = 0;

  auto params = model.parameters();
  std::vector<Tensor> values(params.size());
  std::vector<Tensor> grads(params.size());
  std::vector<std::size_t> labels(batch);

  for (std::size_t step = 0; step < config.steps; ++step) {
    if (cursor + batch > dataset.size()) {
      Rng rng(derive_seed(config.seed, epoch++));
      order = permutation(dataset.size(), rng);
      cursor = 0;
    }
    std::span<const std::size_t> idx(order.data() + cursor, batch);
    cursor += batch;
    Tensor x = dataset.gather(idx);
    if (config.augment) x = data::augment_cifar(x, derive_seed(config.seed ^ 0xA5A5A5A5ULL, step));
    for (std::size_t i = 0; i < batch; ++i) labels[i] = dataset.labels[idx[i]];

    Tape tape;
    auto vars = model.bind(tape, true);
    Var xv = tape.constant(std::move(x));
    auto out = model.forward(tape, xv, vars);
    if (!tape.value(out.logits).all_finite()) throw TrainingDiverged(step, std::numeric_limits<double>::quiet_NaN());
    Var loss = ops::mean(tape, objective_loss(tape, config.objective, out.logits, labels, config.lambda));
    const double value = tape.value(loss).item();
    if (!std::isfinite(value)) throw TrainingDiverged(step, value);
    tape.backward(loss);

    for (std::size_t p = 0; p < params.size(); ++p) {
      values[p] = std::move(params[p].tensor);
      grads[p] = tape.grad(vars[p]);
    }
    optimizer.step(values, grads, step);
    for (std::size_t p = 0; p < params.size(); ++p) params[p].tensor = std::move(values[p]);

    window += value;
    ++window_count;
    const bool last = step + 1 == config.steps;
    if ((config.log_every > 0 && (step + 1) % config.log_every == 0) || last) {
      LossPoint point{step + 1, window / static_cast<double>(window_count)};
      result.trace.push_back(point);
      if (observer) observer(point);
      window = 0.0;
      window_count = 0;
    }
  }
  model.set_train_steps(model.train_steps() + config.steps);
  result.model = std::move(model);
  return result;
}

double accuracy(const nn::NetworkModel& model, const data::Dataset& dataset) {
  if (dataset.size() == 0) throw std::invalid_argument("accuracy of an empty dataset");
  const auto preds = model.predict(dataset.images);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i].label == dataset.labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

}  // namespace rce
