#include <benchmark/benchmark.h>

#include "xai/eval.hpp"
#include "xai/rng.hpp"

namespace {

using namespace xai;

void BM_Iou(benchmark::State& state) {
  Rng rng(1);
  SegmentationMask a, b;
  a.mask = Tensor({224, 224});
  b.mask = Tensor({224, 224});
  for (std::int64_t i = 0; i < a.mask.size(); ++i) {
    a.mask[i] = rng.bernoulli(0.2);
    b.mask[i] = rng.bernoulli(0.2);
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(iou(a, b));
  }
}
BENCHMARK(BM_Iou);

void BM_Auroc(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(2);
  std::vector<double> scores(static_cast<std::size_t>(n));
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    scores[static_cast<std::size_t>(i)] = rng.uniform();
    labels[static_cast<std::size_t>(i)] = rng.bernoulli(0.3);
  }
  labels[0] = 1;
  labels[1] = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(auroc(scores, labels));
  }
}
BENCHMARK(BM_Auroc)->Arg(1000)->Arg(10000);

void BM_Aggregate(benchmark::State& state) {
  Rng rng(3);
  std::vector<IoURecord> records;
  for (int i = 0; i < 2000; ++i) {
    records.push_back({"img_" + std::to_string(i % 500), i % 4,
                       i % 2 ? "gradcam" : "lime", 0.5, rng.uniform(), false});
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(aggregate(records));
  }
}
BENCHMARK(BM_Aggregate);

}  // namespace
