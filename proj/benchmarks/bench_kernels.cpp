#include <benchmark/benchmark.h>

#include <vector>

#include "lightnn/codebook.hpp"
#include "lightnn/inference.hpp"
#include "lightnn/rng.hpp"
#include "lightnn/tensor.hpp"

using namespace lightnn;

namespace {

Tensor random_tensor(Rng& rng, std::vector<int> shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  std::vector<float> data(static_cast<size_t>(n));
  for (float& x : data) x = rng.uniform(-1.f, 1.f);
  return Tensor(std::move(shape), std::move(data));
}

void BM_matmul(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(1);
  const Tensor a = random_tensor(rng, {n, n});
  const Tensor b = random_tensor(rng, {n, n});
  for (auto _ : state) {
    Tensor c = matmul(a, b);
    benchmark::DoNotOptimize(c.data.data());
  }
  state.SetItemsProcessed(state.iterations() * int64_t{n} * n * n);
}
BENCHMARK(BM_matmul)->Arg(64)->Arg(256);

void BM_quantize_nearest(benchmark::State& state) {
  const CodebookSpec spec = CodebookSpec::k_ones(2);
  Rng rng(2);
  std::vector<float> weights(78400);
  for (float& w : weights) w = rng.uniform(-2.f, 2.f);
  for (auto _ : state) {
    for (float w : weights) benchmark::DoNotOptimize(approx_nearest(w, spec));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(weights.size()));
}
BENCHMARK(BM_quantize_nearest);

void BM_quantize_stochastic(benchmark::State& state) {
  const CodebookSpec spec = CodebookSpec::k_ones(2);
  Rng rng(3);
  std::vector<float> weights(78400);
  for (float& w : weights) w = rng.uniform(-2.f, 2.f);
  Rng draw(4);
  for (auto _ : state) {
    for (float w : weights) benchmark::DoNotOptimize(approx_stochastic(w, spec, draw));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(weights.size()));
}
BENCHMARK(BM_quantize_stochastic);

void BM_shift_add_dot(benchmark::State& state) {
  const int n = 784;
  const CodebookSpec spec = CodebookSpec::k_ones(2);
  Rng rng(5);
  std::vector<WeightCode> codes(n);
  std::vector<float> x(n);
  for (int i = 0; i < n; ++i) {
    codes[static_cast<size_t>(i)] = approx_nearest(rng.uniform(-2.f, 2.f), spec);
    x[static_cast<size_t>(i)] = rng.uniform(-1.f, 1.f);
  }
  for (auto _ : state)
    benchmark::DoNotOptimize(shift_add_dot(codes.data(), x.data(), n));
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_shift_add_dot);

void BM_float_dot(benchmark::State& state) {
  const int n = 784;
  Rng rng(6);
  std::vector<float> w(n), x(n);
  for (int i = 0; i < n; ++i) {
    w[static_cast<size_t>(i)] = rng.uniform(-2.f, 2.f);
    x[static_cast<size_t>(i)] = rng.uniform(-1.f, 1.f);
  }
  for (auto _ : state) {
    float acc = 0.f;
    for (int i = 0; i < n; ++i) acc += w[static_cast<size_t>(i)] * x[static_cast<size_t>(i)];
    benchmark::DoNotOptimize(acc);
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_float_dot);

}  // namespace

BENCHMARK_MAIN();
