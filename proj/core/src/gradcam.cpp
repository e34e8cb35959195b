#include "xai/gradcam.hpp"

#include <span>
#include <string>

#include "xai/errors.hpp"

namespace xai {

int select_last_conv(const Network& net) {
  for (int i = net.layer_count(); i-- > 0;) {
    if (net.layers()[static_cast<std::size_t>(i)].kind == LayerKind::Conv2D) return i;
  }
  throw ContractError("network has no Conv2D layer; Grad-CAM needs one");
}

GradCamMap grad_cam(const Network& net, const Tensor& x, int class_index, int target_layer) {
  if (class_index < 0 || class_index >= net.num_classes()) {
    throw ContractError("class index " + std::to_string(class_index) + " out of range [0," +
                        std::to_string(net.num_classes()) + ")");
  }
  if (target_layer == kLastConv) target_layer = select_last_conv(net);
  if (target_layer < 0 || target_layer >= net.layer_count() ||
      net.layers()[static_cast<std::size_t>(target_layer)].kind != LayerKind::Conv2D) {
    std::string eligible;
    for (int i = 0; i < net.layer_count(); ++i) {
      if (net.layers()[static_cast<std::size_t>(i)].kind == LayerKind::Conv2D) {
        if (!eligible.empty()) eligible += ", ";
        eligible += std::to_string(i);
      }
    }
    throw ContractError("target layer " + std::to_string(target_layer) +
                        " is not a Conv2D layer; eligible layers: " +
                        (eligible.empty() ? "none" : eligible));
  }

  const ForwardResult fwd = forward(net, x);
  const GradientResult grads = backward_gradient(net, fwd.cache, class_index);

  // Activation maps are taken post-activation when a ReLU directly follows
  // the target convolution.
  int act_layer = target_layer;
  if (target_layer + 1 < net.layer_count() &&
      net.layers()[static_cast<std::size_t>(target_layer + 1)].kind == LayerKind::ReLU) {
    act_layer = target_layer + 1;
  }
  const Tensor& A = fwd.cache.outputs[static_cast<std::size_t>(act_layer)];
  const Tensor& G = grads.activation_gradients[static_cast<std::size_t>(act_layer)];

  const int K = A.extent(0), FH = A.extent(1), FW = A.extent(2);
  const std::int64_t hw = static_cast<std::int64_t>(FH) * FW;

  GradCamMap map;
  map.target_layer = target_layer;
  map.class_index = class_index;
  map.alpha.resize(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    const std::span<const double> slab(G.data().data() + k * hw, static_cast<std::size_t>(hw));
    map.alpha[static_cast<std::size_t>(k)] = pairwise_sum(slab) / static_cast<double>(hw);
  }

  map.raw_map = Tensor({FH, FW});
  for (int h = 0; h < FH; ++h) {
    for (int w = 0; w < FW; ++w) {
      double acc = 0.0;
      for (int k = 0; k < K; ++k) {
        acc += map.alpha[static_cast<std::size_t>(k)] * A.at3(k, h, w);
      }
      map.raw_map.at2(h, w) = acc > 0.0 ? acc : 0.0;
    }
  }
  map.heatmap = bilinear_resize(map.raw_map, net.input_shape()[1], net.input_shape()[2]);
  return map;
}

}  // namespace xai
