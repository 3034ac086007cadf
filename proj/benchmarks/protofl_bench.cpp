#include <benchmark/benchmark.h>

#include <random>

#include "protofl/data/datasets.hpp"
#include "protofl/diff/ops.hpp"
#include "protofl/eval/metrics.hpp"
#include "protofl/fed/fedengine.hpp"
#include "protofl/losses/losses.hpp"
#include "protofl/ocnf/flow.hpp"
#include "protofl/rng.hpp"

using namespace protofl;

namespace {

diff::Tensor random_batch(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  diff::Tensor t(diff::Shape{rows, cols});
  for (auto& v : t.data()) v = nd(rng);
  return t;
}

repr::EncoderConfig bench_encoder() { return {16, {64, 64}, 32, 8}; }

}  // namespace

static void BM_EncoderForward(benchmark::State& state) {
  Rng rng(1);
  const auto enc = repr::Encoder::initialize(bench_encoder(), rng);
  const auto x = random_batch(static_cast<std::size_t>(state.range(0)), 16, 2);
  for (auto _ : state) benchmark::DoNotOptimize(enc.encode(x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EncoderForward)->Arg(32)->Arg(256);

static void BM_EncoderPhase1Backward(benchmark::State& state) {
  Rng rng(1);
  const auto enc = repr::Encoder::initialize(bench_encoder(), rng);
  const auto x = random_batch(32, 16, 2), x_hat = random_batch(32, 16, 3);
  const auto proto = random_batch(1, 32, 4).reshaped({32});
  for (auto _ : state) {
    diff::Tape tape;
    const auto bound = repr::bind(tape, enc.params(), true);
    const auto r = enc.forward(bound, tape.constant(x));
    const auto r_hat = enc.forward(bound, tape.constant(x_hat));
    const auto grads = tape.backward(losses::phase1_loss(r, r_hat, proto, {}));
    benchmark::DoNotOptimize(repr::gather_gradients(grads, bound, enc.params().layout()));
  }
}
BENCHMARK(BM_EncoderPhase1Backward);

static void BM_FlowInverse(benchmark::State& state) {
  ocnf::FlowConfig cfg;
  Rng rng(5);
  auto flow = ocnf::FlowModel::initialize(cfg, rng);
  std::normal_distribution<double> nd(0.0, 0.1);
  for (auto& v : flow.mutable_params().values()) v += nd(rng);
  const auto r = random_batch(static_cast<std::size_t>(state.range(0)), cfg.dim, 6);
  for (auto _ : state) benchmark::DoNotOptimize(flow.flow_inverse(r));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_FlowInverse)->Arg(16)->Arg(256);

static void BM_FedAvg(benchmark::State& state) {
  Rng rng(7);
  std::vector<repr::ParamVector> clients;
  std::vector<std::size_t> counts;
  for (int k = 0; k < state.range(0); ++k) {
    clients.push_back(repr::Encoder::initialize(bench_encoder(), rng).params());
    counts.push_back(200 + static_cast<std::size_t>(k));
  }
  for (auto _ : state) benchmark::DoNotOptimize(fed::fedavg(clients, counts));
}
BENCHMARK(BM_FedAvg)->Arg(8)->Arg(64);

static void BM_Auroc(benchmark::State& state) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> nd;
  std::vector<eval::ScoredExample> v;
  for (std::int64_t i = 0; i < state.range(0); ++i) {
    const bool target = i % 8 == 0;
    v.push_back({static_cast<std::uint64_t>(i), target, nd(rng) + (target ? 0.0 : 1.5)});
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(eval::auroc(v));
    benchmark::DoNotOptimize(eval::eer(v));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Auroc)->Arg(480)->Arg(10000);
BENCHMARK_MAIN();
