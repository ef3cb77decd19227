#include <benchmark/benchmark.h>

#include <random>

#include "advenc/encoders.hpp"
#include "advenc/frequency.hpp"
#include "advenc/generator.hpp"

namespace {

advenc::Tensor random_batch(std::size_t n, std::uint64_t seed) {
  advenc::Tensor x({n, 3, 64, 64});
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = u(rng);
  return x;
}

void BM_HighFrequencyComponent(benchmark::State& state) {
  const advenc::Tensor x = random_batch(static_cast<std::size_t>(state.range(0)), 1);
  const advenc::FrequencyFilterSpec spec{};
  for (auto _ : state) benchmark::DoNotOptimize(advenc::high_freq_component(x, spec));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_HighFrequencyComponent)->Arg(1)->Arg(64);

void BM_EncoderForward(benchmark::State& state) {
  const advenc::EncoderHandle enc = advenc::random_toy_encoder({3, 64, 64}, 7);
  const advenc::Tensor x = random_batch(static_cast<std::size_t>(state.range(0)), 2);
  for (auto _ : state) benchmark::DoNotOptimize(enc.forward(x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EncoderForward)->Arg(1)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_GeneratorForward(benchmark::State& state) {
  const advenc::GeneratorNet gen = advenc::make_generator(100, {3, 64, 64}, 3);
  const std::vector<double> z = advenc::sample_latent(100, 100);
  for (auto _ : state) benchmark::DoNotOptimize(advenc::generate_noise(gen, z));
}
BENCHMARK(BM_GeneratorForward)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
