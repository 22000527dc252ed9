#include <benchmark/benchmark.h>

#include <string>
#include <vector>

#include "lightnn/inference.hpp"
#include "lightnn/network.hpp"
#include "lightnn/rng.hpp"
#include "lightnn/trainer.hpp"
#include "lightnn/variant.hpp"

using namespace lightnn;

namespace {

QuantizedModel build_model(ModelVariant v) {
  const NetworkSpec net = make_preset("mnist-1hidden", v);
  Rng rng(static_cast<uint64_t>(v) + 10);
  const Parameters params = project_nearest(init_parameters(net, rng), net);
  return quantize_model(params, net);
}

Tensor fake_images(int items) {
  Rng rng(99);
  std::vector<float> data(static_cast<size_t>(items) * 784);
  for (float& x : data) x = rng.uniform(0.f, 1.f);
  return Tensor({items, 784}, std::move(data));
}

void BM_infer_float(benchmark::State& state) {
  const ModelVariant v = static_cast<ModelVariant>(state.range(0));
  const QuantizedModel model = build_model(v);
  const Tensor batch = fake_images(1);
  for (auto _ : state) {
    Tensor scores = infer_float(model, batch);
    benchmark::DoNotOptimize(scores.data.data());
  }
  state.SetLabel(variant_name(v));
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_infer_float)->DenseRange(0, 6);

void BM_infer_fixed_q48(benchmark::State& state) {
  const QuantizedModel model = build_model(ModelVariant::lightnn2);
  const Tensor batch = fake_images(1);
  const FixedPointFormat fmt{12, 8};
  for (auto _ : state) {
    Tensor scores = infer_fixed(model, batch, fmt);
    benchmark::DoNotOptimize(scores.data.data());
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_infer_fixed_q48);

void BM_infer_binary_fast(benchmark::State& state) {
  const ModelVariant v = static_cast<ModelVariant>(state.range(0));
  const QuantizedModel model = build_model(v);
  const Tensor batch = fake_images(1);
  for (auto _ : state) {
    Tensor scores = infer_binary_fast(model, batch);
    benchmark::DoNotOptimize(scores.data.data());
  }
  state.SetLabel(variant_name(v));
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_infer_binary_fast)
    ->Arg(static_cast<int>(ModelVariant::lightnn2_bin))
    ->Arg(static_cast<int>(ModelVariant::lightnn1_bin))
    ->Arg(static_cast<int>(ModelVariant::binarynet));

void BM_infer_batch100(benchmark::State& state) {
  const QuantizedModel model = build_model(ModelVariant::lightnn1);
  const Tensor batch = fake_images(100);
  for (auto _ : state) {
    Tensor scores = infer_float(model, batch);
    benchmark::DoNotOptimize(scores.data.data());
  }
  state.SetItemsProcessed(state.iterations() * 100);
}
BENCHMARK(BM_infer_batch100);

}  // namespace
