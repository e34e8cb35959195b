#include <benchmark/benchmark.h>

#include "xai/gradcam.hpp"
#include "xai/lime.hpp"
#include "xai/lrp.hpp"
#include "xai/netgraph.hpp"
#include "xai/rng.hpp"
#include "xai/shap.hpp"

namespace {

using namespace xai;

Tensor random_tensor(std::vector<int> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(0.0, 1.0);
  return t;
}

// Small conv net shaped like the pipeline's toy model.
Network bench_net(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Layer> layers;
  auto conv = [&](int ic, int oc) {
    Layer c;
    c.kind = LayerKind::Conv2D;
    c.weight = random_tensor({oc, ic, 3, 3}, rng);
    c.bias = Tensor({oc});
    c.pad = 1;
    layers.push_back(std::move(c));
    Layer r;
    r.kind = LayerKind::ReLU;
    layers.push_back(r);
  };
  conv(1, 8);
  Layer mp;
  mp.kind = LayerKind::MaxPool2D;
  mp.window = 2;
  mp.stride = 2;
  layers.push_back(mp);
  conv(8, 16);
  Layer f;
  f.kind = LayerKind::Flatten;
  layers.push_back(f);
  Layer d;
  d.kind = LayerKind::Dense;
  d.weight = random_tensor({4, 16 * 16 * 16}, rng);
  d.bias = Tensor({4});
  layers.push_back(std::move(d));
  return Network(std::move(layers), {1, 32, 32}, 4);
}

void BM_Forward(benchmark::State& state) {
  const Network net = bench_net(1);
  Rng rng(2);
  const Tensor x = random_tensor({1, 32, 32}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(forward(net, x));
  }
}
BENCHMARK(BM_Forward);

void BM_BackwardGradient(benchmark::State& state) {
  const Network net = bench_net(1);
  Rng rng(3);
  const Tensor x = random_tensor({1, 32, 32}, rng);
  const ForwardResult fwd = forward(net, x);
  for (auto _ : state) {
    benchmark::DoNotOptimize(backward_gradient(net, fwd.cache, 0));
  }
}
BENCHMARK(BM_BackwardGradient);

void BM_GradCam(benchmark::State& state) {
  const Network net = bench_net(1);
  Rng rng(4);
  const Tensor x = random_tensor({1, 32, 32}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(grad_cam(net, x, 0, kLastConv));
  }
}
BENCHMARK(BM_GradCam);

void BM_Lrp(benchmark::State& state) {
  const Network net = bench_net(1);
  Rng rng(5);
  const Tensor x = random_tensor({1, 32, 32}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(lrp(net, x, 0, {1e-6}));
  }
}
BENCHMARK(BM_Lrp);

void BM_SlicSegmentation(benchmark::State& state) {
  Rng rng(6);
  const Tensor x = random_tensor({1, 32, 32}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(segment_superpixels(x, 24, 0));
  }
}
BENCHMARK(BM_SlicSegmentation);

void BM_ExactShapley(benchmark::State& state) {
  const int M = static_cast<int>(state.range(0));
  Rng rng(7);
  std::vector<double> table(static_cast<std::size_t>(1) << M);
  for (double& t : table) t = rng.uniform(-1.0, 1.0);
  const CoalitionValueFn v = [&table, M](const std::vector<std::uint8_t>& z) {
    std::uint32_t mask = 0;
    for (int i = 0; i < M; ++i) {
      if (z[static_cast<std::size_t>(i)]) mask |= 1u << i;
    }
    return table[mask];
  };
  for (auto _ : state) {
    benchmark::DoNotOptimize(exact_shapley(v, M));
  }
}
BENCHMARK(BM_ExactShapley)->Arg(8)->Arg(12);

void BM_KernelShapSolve(benchmark::State& state) {
  const int M = 24;
  Rng rng(8);
  std::vector<double> weights(static_cast<std::size_t>(M));
  for (double& w : weights) w = rng.uniform(-1.0, 1.0);
  const CoalitionValueFn v = [&weights](const std::vector<std::uint8_t>& z) {
    double out = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      if (z[i]) out += weights[i];
    }
    return out;
  };
  for (auto _ : state) {
    benchmark::DoNotOptimize(kernel_shap_solve(v, M, 256, 1, nullptr, nullptr));
  }
}
BENCHMARK(BM_KernelShapSolve);

void BM_LassoSurrogate(benchmark::State& state) {
  Rng rng(9);
  const Tensor img = random_tensor({1, 32, 32}, rng);
  const SuperpixelMap sp = segment_superpixels(img, 24, 0);
  LimeConfig cfg;
  cfg.num_samples = 256;
  cfg.seed = 1;
  const PredictFn f = [](const Tensor& h) {
    double sum = 0.0;
    for (double v : h.data()) sum += v;
    return sum / static_cast<double>(h.size());
  };
  const LimeSampleSet samples = sample_neighborhood(img, sp, cfg, f);
  for (auto _ : state) {
    benchmark::DoNotOptimize(fit_surrogate(samples, sp, cfg));
  }
}
BENCHMARK(BM_LassoSurrogate);

}  // namespace
