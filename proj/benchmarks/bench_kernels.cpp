#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "rce/attacks.hpp"
#include "rce/detector.hpp"
#include "rce/network.hpp"
#include "rce/ops.hpp"
#include "rce/tape.hpp"

namespace {

using namespace rce;

Tensor uniform(Shape shape, std::uint64_t seed, double lo = -0.5, double hi = 0.5) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = uniform({n, n}, 1), b = uniform({n, n}, 2);
  for (auto _ : state) {
    Tape tape;
    benchmark::DoNotOptimize(tape.value(ops::matmul(tape, tape.constant(a), tape.constant(b))));
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_Conv2d(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const Tensor x = uniform({batch, 16, 14, 14}, 3), w = uniform({32, 16, 3, 3}, 4);
  for (auto _ : state) {
    Tape tape;
    benchmark::DoNotOptimize(tape.value(ops::conv2d(tape, tape.constant(x), tape.constant(w), 1, 0)));
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * batch));
}
BENCHMARK(BM_Conv2d)->Arg(1)->Arg(32)->Arg(128);

void BM_LogKdensity(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor bank = uniform({n, 64}, 5, -2.0, 2.0);
  const Tensor z = uniform({1, 64}, 6, -2.0, 2.0);
  for (auto _ : state) benchmark::DoNotOptimize(detect::log_kdensity(bank, z.data(), 0.1 / 0.26));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
}
BENCHMARK(BM_LogKdensity)->Arg(1000)->Arg(5500);

void BM_SmallCnnForward(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const auto model = nn::NetworkModel::initialize(nn::ModelSpec{}, nn::Objective::Reverse, 7);
  const Tensor x = uniform({batch, 1, 28, 28}, 8);
  for (auto _ : state) benchmark::DoNotOptimize(model.evaluate(x));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * batch));
}
BENCHMARK(BM_SmallCnnForward)->Arg(1)->Arg(128);

void BM_SmallCnnForwardBackward(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const auto model = nn::NetworkModel::initialize(nn::ModelSpec{}, nn::Objective::Reverse, 7);
  const Tensor x = uniform({batch, 1, 28, 28}, 9);
  for (auto _ : state) {
    Tape tape;
    const auto params = model.bind(tape, true);
    const Var in = tape.constant(x);
    const auto out = model.forward(tape, in, params);
    const Var loss = ops::sum(tape, out.logits);
    tape.backward(loss);
    benchmark::DoNotOptimize(tape.grad(params.front()));
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * batch));
}
BENCHMARK(BM_SmallCnnForwardBackward)->Arg(128);

void BM_Fgsm(benchmark::State& state) {
  const auto model = nn::NetworkModel::initialize(nn::ModelSpec{}, nn::Objective::Reverse, 7);
  const Tensor x = uniform({32, 1, 28, 28}, 10);
  const std::vector<std::size_t> y(32, 3);
  for (auto _ : state) benchmark::DoNotOptimize(attack::fgsm(model, x, y, 0.1));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 32));
}
BENCHMARK(BM_Fgsm);

}  // namespace

BENCHMARK_MAIN();
