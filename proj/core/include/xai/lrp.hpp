#pragma once

#include <filesystem>
#include <vector>

#include "xai/netgraph.hpp"
#include "xai/tensor.hpp"

namespace xai {

struct LrpConfig {
  double epsilon = 1e-6;  // >= 0; 0 recovers the unstabilized rule
};

struct RelevanceMap {
  // layer_relevance[l] is the relevance at the INPUT of layer l; the seed at
  // the logits is y_c at class_index and 0 elsewhere.
  std::vector<Tensor> layer_relevance;
  Tensor input_relevance;  // [C,H,W]
  Tensor input_heatmap;    // [H,W], channel-summed, signed
  double epsilon = 0.0;
  int class_index = -1;
  // Relevance absorbed by bias terms (and the stabilizer), per layer and in
  // total: leakage[l] = sum(R at layer l+1 input) - sum(R at layer l input).
  std::vector<double> per_layer_leakage;
  double total_leakage = 0.0;
};

/// Layer-wise relevance propagation with the epsilon-stabilized z-rule on
/// Dense/Conv2D layers (BatchNorm folded into the adjacent linear layer),
/// winner-take-all routing through MaxPool2D, uniform redistribution through
/// GlobalAvgPool, and active-unit gating through ReLU.
RelevanceMap lrp(const Network& net, const Tensor& x, int class_index, const LrpConfig& cfg);

/// Debugging aid: one TNSR file per layer relevance under dir.
void dump_relevances(const RelevanceMap& map, const std::filesystem::path& dir);

}  // namespace xai
