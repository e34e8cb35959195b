#include <benchmark/benchmark.h>

#include "xai/rng.hpp"
#include "xai/tensor.hpp"

namespace {

using namespace xai;

Tensor random_tensor(std::vector<int> shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

void BM_Conv2dForward(benchmark::State& state) {
  const int channels = static_cast<int>(state.range(0));
  const Tensor input = random_tensor({1, 32, 32}, 1);
  const Tensor kernels = random_tensor({channels, 1, 3, 3}, 2);
  const Tensor bias = random_tensor({channels}, 3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(conv2d_forward(input, kernels, bias, 1, 1));
  }
}
BENCHMARK(BM_Conv2dForward)->Arg(8)->Arg(16);

void BM_MatMul(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const Tensor a = random_tensor({n, n}, 4);
  const Tensor b = random_tensor({n, n}, 5);
  for (auto _ : state) {
    benchmark::DoNotOptimize(matmul(a, b));
  }
}
BENCHMARK(BM_MatMul)->Arg(64)->Arg(128);

void BM_BilinearResize(benchmark::State& state) {
  const Tensor map = random_tensor({16, 16}, 6);
  for (auto _ : state) {
    benchmark::DoNotOptimize(bilinear_resize(map, 224, 224));
  }
}
BENCHMARK(BM_BilinearResize);

void BM_ReduceSum(benchmark::State& state) {
  const Tensor t = random_tensor({64, 64, 64}, 7);
  for (auto _ : state) {
    benchmark::DoNotOptimize(reduce(t, {0, 1, 2}, ReduceMode::Sum));
  }
}
BENCHMARK(BM_ReduceSum);

}  // namespace
