#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "xai/lime.hpp"
#include "xai/netgraph.hpp"
#include "xai/tensor.hpp"

namespace xai {

using CoalitionValueFn = std::function<double(const std::vector<std::uint8_t>&)>;

/// Exact Shapley values by subset enumeration:
/// phi_i = sum_{z not containing i} |z|!(M-|z|-1)!/M! (v(z+i) - v(z)).
/// Requires M <= 20.
std::vector<double> exact_shapley(const CoalitionValueFn& value_fn, int M);

/// KernelSHAP weight for a coalition of size s out of M features.
double shapley_kernel_weight(int M, int s);

struct ShapConfig {
  int num_coalitions = 2000;
  int target_segments = 50;
  Baseline baseline = Baseline::MeanColor;
  std::uint64_t seed = 0;
};

struct ShapExplanation {
  std::vector<double> phi;  // per-superpixel attribution
  double base_value = 0.0;  // f(h(0))
  double fx = 0.0;          // f(x); base_value + sum(phi) == fx by constraint
  Tensor heatmap;           // [H,W] painted from phi
  int num_coalitions = 0;
  bool exact = false;  // full coalition enumeration was used
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;
};

/// Weighted least squares over sampled coalitions with the Shapley kernel
/// weights and the efficiency constraint imposed exactly. Sampling is uniform
/// over proper nonempty coalitions, paired with complements; a budget
/// covering all 2^M - 2 coalitions switches to full enumeration.
std::vector<double> kernel_shap_solve(const CoalitionValueFn& value_fn, int M,
                                      int num_coalitions, std::uint64_t seed, bool* exact_out,
                                      std::vector<std::string>* warnings);

ShapExplanation kernel_shap(const Network& net, const Tensor& x, int class_index,
                            const SuperpixelMap& sp, const ShapConfig& cfg);

}  // namespace xai
