#pragma once

#include <vector>

#include "xai/netgraph.hpp"
#include "xai/tensor.hpp"

namespace xai {

/// Selects the final convolutional layer when passed as target_layer.
inline constexpr int kLastConv = -1;

struct GradCamMap {
  int target_layer = -1;
  std::vector<double> alpha;  // channel weights: spatial mean of d y_c / d A^k
  Tensor raw_map;             // [H',W'] at feature resolution, ReLU-gated
  Tensor heatmap;             // [H,W] bilinear-upsampled to input resolution
  int class_index = -1;
};

/// Highest-index Conv2D layer; throws when the network has none.
int select_last_conv(const Network& net);

/// Channel-importance weights from the class-logit gradient at the target
/// convolution (post-activation when a ReLU follows), ReLU-gated weighted
/// activation sum, upsampled to input resolution.
GradCamMap grad_cam(const Network& net, const Tensor& x, int class_index,
                    int target_layer = kLastConv);

}  // namespace xai
