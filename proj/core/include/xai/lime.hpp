#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "xai/netgraph.hpp"
#include "xai/tensor.hpp"

namespace xai {

/// Per-pixel segment ids in [0, num_segments); every id occurs at least once.
struct SuperpixelMap {
  int height = 0;
  int width = 0;
  std::vector<int> labels;  // row-major [H*W]
  int num_segments = 0;

  int at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
};

enum class Baseline { MeanColor, Zero };

struct LimeConfig {
  int num_samples = 1000;
  double kernel_width = 0.25;
  double lasso_lambda = -1.0;  // < 0 selects the auto lambda path
  int max_features = 10;
  int target_segments = 50;
  Baseline baseline = Baseline::MeanColor;
  std::uint64_t seed = 0;

  static constexpr const char* kSurrogateFamily = "sparse linear (lasso)";
};

struct LimeSample {
  std::vector<std::uint8_t> z;  // presence bits, one per superpixel
  double prediction = 0.0;      // f(h(z))
  double weight = 0.0;          // exp(-d(z,1)^2 / kernel_width^2), cosine d
};

struct LimeSampleSet {
  std::vector<LimeSample> rows;  // num_samples rows plus the all-ones row last
  int num_segments = 0;
};

struct LimeExplanation {
  std::vector<double> coefficients;  // one per superpixel
  double intercept = 0.0;
  double r2 = 0.0;      // clipped to [0,1]
  double r2_raw = 0.0;  // unclipped
  double lambda_used = 0.0;
  Tensor heatmap;  // [H,W], coefficient painted over each segment
  LimeConfig config;
  std::vector<std::string> warnings;
};

using PredictFn = std::function<double(const Tensor&)>;

/// Deterministic SLIC-style k-means on (intensity, x, y) with a fixed
/// iteration count. The result does not depend on the seed; the parameter is
/// part of the stable interface.
SuperpixelMap segment_superpixels(const Tensor& image, int target_segments, std::uint64_t seed);

/// h(z): superpixels with z=0 replaced by the baseline value; z all ones
/// returns the instance bit-for-bit.
Tensor apply_mask(const Tensor& x, const SuperpixelMap& sp, std::span<const std::uint8_t> z,
                  Baseline baseline);

LimeSampleSet sample_neighborhood(const Tensor& x, const SuperpixelMap& sp,
                                  const LimeConfig& cfg, const PredictFn& predict);

/// Weighted lasso by coordinate descent. lasso_lambda < 0 walks a geometric
/// path (factor 0.7) down from lambda_max and keeps the last lambda whose fit
/// stays within max_features nonzero coefficients.
LimeExplanation fit_surrogate(const LimeSampleSet& samples, const SuperpixelMap& sp,
                              const LimeConfig& cfg);

LimeExplanation explain_lime(const Network& net, const Tensor& x, int class_index,
                             const LimeConfig& cfg);

}  // namespace xai
