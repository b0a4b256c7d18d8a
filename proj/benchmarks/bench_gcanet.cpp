#include <benchmark/benchmark.h>

#include "gcanet/attention.hpp"
#include "gcanet/loss.hpp"
#include "gcanet/metrics.hpp"
#include "gcanet/model.hpp"

namespace {

using namespace gcanet;

Tensor<float> random_input(Shape s, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t(s);
  for (auto& v : t.vec()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

// Square-ish [1, C, H, W] with H * W = tokens.
Shape token_shape(std::int64_t channels, std::int64_t tokens) {
  std::int64_t h = 1;
  while (h * h * 4 <= tokens) h *= 2;
  return {1, channels, h, tokens / h};
}

void BM_DsaForward(benchmark::State& state) {
  const std::int64_t c = state.range(0), n = state.range(1);
  ParameterStore<float> store;
  const auto p = attn::make_dsa(store, "dsa", c, 1);
  const auto x = random_input(token_shape(c, n), 2);
  for (auto _ : state) {
    Graph<float> g(false);
    benchmark::DoNotOptimize(attn::dsa_forward(g.constant(x), p).value().data());
  }
  state.counters["macs"] = static_cast<double>(attn::dsa_flops(c, n));
}
BENCHMARK(BM_DsaForward)->Args({128, 1024})->Args({128, 4096})->Unit(benchmark::kMillisecond);

void BM_MsaForward(benchmark::State& state) {
  const std::int64_t c = state.range(0), n = state.range(1);
  ParameterStore<float> store;
  const auto p = attn::make_msa(store, "msa", c, 8, 1);
  const auto x = random_input(token_shape(c, n), 2);
  for (auto _ : state) {
    Graph<float> g(false);
    benchmark::DoNotOptimize(attn::msa_forward(g.constant(x), p).value().data());
  }
  state.counters["macs"] = static_cast<double>(attn::msa_flops(c, n));
}
BENCHMARK(BM_MsaForward)->Args({128, 1024})->Args({128, 4096})->Unit(benchmark::kMillisecond);

void BM_ModelForward(benchmark::State& state) {
  model::ModelConfig cfg;
  cfg.input_size = state.range(0);
  const auto net = model::GcaNet<float>::build(cfg, 0);
  const auto x = random_input(Shape{1, 3, cfg.input_size, cfg.input_size}, 3);
  for (auto _ : state) {
    Graph<float> g(false);
    benchmark::DoNotOptimize(net.forward(g.constant(x)).sides[0].value().data());
  }
}
BENCHMARK(BM_ModelForward)->Arg(96)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  model::ModelConfig cfg;
  cfg.input_size = 96;
  auto net = model::GcaNet<float>::build(cfg, 0);
  const auto x = random_input(Shape{1, 3, 96, 96}, 4);
  Tensor<float> mask(Shape{1, 1, 96, 96});
  for (std::int64_t i = 32; i < 64; ++i)
    for (std::int64_t j = 32; j < 64; ++j) mask.at(0, 0, i, j) = 1.0f;
  for (auto _ : state) {
    Graph<float> g(true);
    const auto out = net.forward(g.constant(x));
    const auto l = loss::total_loss<float>(std::span<const Var<float>>(out.sides), g.constant(mask));
    g.backward(l.total);
    net.params().zero_grad();
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

void BM_EvaluateMetrics(benchmark::State& state) {
  const std::int64_t n = state.range(0);
  Rng rng(5);
  Tensor<double> s(Shape{1, 1, n, n}), g(Shape{1, 1, n, n});
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = rng.uniform(0.0, 1.0);
    g[i] = rng.bernoulli(0.2) ? 1.0 : 0.0;
  }
  for (auto _ : state) benchmark::DoNotOptimize(metrics::evaluate(s, g).s_measure);
}
BENCHMARK(BM_EvaluateMetrics)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
