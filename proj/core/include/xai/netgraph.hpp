#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "xai/tensor.hpp"

namespace xai {

enum class LayerKind {
  Conv2D,
  Dense,
  ReLU,
  Sigmoid,
  MaxPool2D,
  GlobalAvgPool,
  BatchNorm,
  Flatten,
};

std::string layer_kind_name(LayerKind kind);
LayerKind parse_layer_kind(const std::string& name);  // throws listing supported kinds

struct Layer {
  LayerKind kind = LayerKind::ReLU;
  // Conv2D: weight [K,C,kh,kw], bias [K]; Dense: weight [out,in], bias [out].
  Tensor weight;
  Tensor bias;
  // BatchNorm (frozen statistics, trainable scale/shift), all [C].
  Tensor bn_mean, bn_var, bn_scale, bn_shift;
  int stride = 1;
  int pad = 0;
  int window = 2;  // MaxPool2D
};

// Ordered layer graph with a per-class sigmoid head. Shapes are validated on
// construction; layer_output_shape(i) is the inferred output of layer i.
class Network {
 public:
  Network(std::vector<Layer> layers, std::vector<int> input_shape, int num_classes);

  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& mutable_layers() { return layers_; }
  const std::vector<int>& input_shape() const { return input_shape_; }
  int num_classes() const { return num_classes_; }
  const std::vector<int>& layer_output_shape(int i) const {
    return output_shapes_[static_cast<std::size_t>(i)];
  }
  int layer_count() const { return static_cast<int>(layers_.size()); }

  /// Re-checks shape composition after in-place weight edits.
  void revalidate();

 private:
  std::vector<Layer> layers_;
  std::vector<int> input_shape_;
  int num_classes_ = 0;
  std::vector<std::vector<int>> output_shapes_;
};

struct ActivationCache {
  std::vector<Tensor> inputs;   // per layer
  std::vector<Tensor> outputs;  // per layer
  // For MaxPool2D layers: flat input index of each output's winner.
  std::vector<std::vector<std::int64_t>> pool_argmax;
};

struct ForwardResult {
  Tensor logits;  // [num_classes]
  Tensor probs;   // sigmoid(logits)
  ActivationCache cache;
};

ForwardResult forward(const Network& net, const Tensor& input);

struct GradientResult {
  Tensor input_gradient;
  // d y_c / d output(layer l), one per layer.
  std::vector<Tensor> activation_gradients;
};

/// Gradient of the pre-sigmoid class logit with respect to the input and to
/// every cached activation. ReLU uses subgradient 0 at exactly 0.
GradientResult backward_gradient(const Network& net, const ActivationCache& cache,
                                 int class_index);

struct TrainConfig {
  int epochs = 30;
  int batch_size = 16;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

struct LabeledSample {
  Tensor image;
  std::vector<double> labels;  // {0,1}^num_classes
};

struct TrainResult {
  Network net;
  std::vector<double> epoch_losses;  // mean BCE per epoch
};

/// Adam (beta1 0.9, beta2 0.999, eps 1e-8) on per-class binary cross-entropy.
/// Deterministic given the seed. BatchNorm statistics stay frozen; scale and
/// shift train.
TrainResult train(const Network& net, const std::vector<LabeledSample>& dataset,
                  const TrainConfig& config);

// Model manifest: JSON listing layers in order with kind, hyperparameters and
// relative TNSR weight paths; top-level input_shape, num_classes,
// format_version.
Network load_model(const std::filesystem::path& manifest_path);
void save_model(const Network& net, const std::filesystem::path& dir);

struct BlobSample {
  std::string id;
  Tensor image;                    // [1,S,S], values on the 1/255 grid
  std::vector<int> labels;         // one per quadrant class
  std::vector<Tensor> masks;       // per class; empty Tensor when label is 0
  std::vector<int> blob_areas;     // declared pixel count per class (0 if absent)
};

struct BlobDataset {
  std::vector<BlobSample> samples;
  int num_classes = 4;
  int image_size = 0;
};

/// Desk-scale stand-in dataset: grayscale images with one bright rectangle
/// per positive quadrant class; the rectangle's pixels are the ground-truth
/// mask for that class.
BlobDataset generate_blob_dataset(int n, int image_size, std::uint64_t seed);

}  // namespace xai
