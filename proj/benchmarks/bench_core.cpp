#include <benchmark/benchmark.h>

#include "flowface/image_ops.hpp"
#include "flowface/nn.hpp"

using namespace flowface;
using namespace flowface::ad;

static void BM_Conv2dForward(benchmark::State& state) {
  Rng rng(1);
  const int n = int(state.range(0));
  auto x = Value<float>::constant(Tensor<float>::random_normal({n, 16, 48, 48}, rng));
  auto w = Value<float>::leaf(Tensor<float>::random_normal({32, 16, 3, 3}, rng, 0.1f));
  auto b = Value<float>::leaf(Tensor<float>({32}));
  for (auto _ : state) {
    auto y = conv2d(x, w, b, 2, 1);
    benchmark::DoNotOptimize(y.val().data());
  }
}
BENCHMARK(BM_Conv2dForward)->Arg(5)->Arg(10);

static void BM_Conv2dTrainStep(benchmark::State& state) {
  Rng rng(2);
  const int n = int(state.range(0));
  auto x = Value<float>::constant(Tensor<float>::random_normal({n, 16, 48, 48}, rng));
  auto w = Value<float>::leaf(Tensor<float>::random_normal({32, 16, 3, 3}, rng, 0.1f));
  auto b = Value<float>::leaf(Tensor<float>({32}));
  for (auto _ : state) {
    w.zero_grad();
    b.zero_grad();
    auto y = conv2d(x, w, b, 2, 1);
    auto loss = mean(mul(y, y));
    loss.backward();
    benchmark::DoNotOptimize(w.grad().data());
  }
}
BENCHMARK(BM_Conv2dTrainStep)->Arg(5)->Arg(10);

static void BM_MatmulLarge(benchmark::State& state) {
  Rng rng(3);
  auto a = Value<float>::constant(Tensor<float>::random_normal({5, 9216}, rng));
  auto b = Value<float>::leaf(Tensor<float>::random_normal({9216, 128}, rng, 0.02f));
  for (auto _ : state) {
    auto y = matmul(a, b);
    benchmark::DoNotOptimize(y.val().data());
  }
}
BENCHMARK(BM_MatmulLarge);

BENCHMARK_MAIN();
