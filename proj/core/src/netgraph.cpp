#include "xai/netgraph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "xai/rng.hpp"

namespace xai {

namespace {

using nlohmann::json;

const char* kKindNames[] = {"Conv2D",    "Dense",         "ReLU",      "Sigmoid",
                            "MaxPool2D", "GlobalAvgPool", "BatchNorm", "Flatten"};

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::string layer_label(int index, LayerKind kind) {
  return "layer " + std::to_string(index) + " (" + layer_kind_name(kind) + ")";
}

std::int64_t volume(std::span<const int> shape) {
  std::int64_t n = 1;
  for (int e : shape) n *= e;
  return n;
}

}  // namespace

std::string layer_kind_name(LayerKind kind) { return kKindNames[static_cast<int>(kind)]; }

LayerKind parse_layer_kind(const std::string& name) {
  for (int i = 0; i < 8; ++i) {
    if (name == kKindNames[i]) return static_cast<LayerKind>(i);
  }
  std::string supported;
  for (int i = 0; i < 8; ++i) {
    if (i) supported += ", ";
    supported += kKindNames[i];
  }
  throw ContractError("unknown layer kind '" + name + "'; supported kinds: " + supported);
}

Network::Network(std::vector<Layer> layers, std::vector<int> input_shape, int num_classes)
    : layers_(std::move(layers)), input_shape_(std::move(input_shape)),
      num_classes_(num_classes) {
  if (input_shape_.size() != 3) {
    throw ShapeError("network input_shape must be [C,H,W], got " +
                     shape_to_string(input_shape_));
  }
  if (num_classes_ < 1) throw ContractError("num_classes must be >= 1");
  revalidate();
}

void Network::revalidate() {
  output_shapes_.clear();
  std::vector<int> shape = input_shape_;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& L = layers_[i];
    const std::string label = layer_label(static_cast<int>(i), L.kind);
    switch (L.kind) {
      case LayerKind::Conv2D: {
        if (shape.size() != 3) {
          throw ShapeError(label + " expects [C,H,W] input, got " + shape_to_string(shape));
        }
        if (L.weight.rank() != 4) {
          throw ShapeError(label + " weight must be [K,C,kh,kw], got " +
                           shape_to_string(L.weight.shape()));
        }
        const int C = shape[0], H = shape[1], W = shape[2];
        if (L.weight.extent(1) != C) {
          throw ShapeError(label + " kernel channels " + std::to_string(L.weight.extent(1)) +
                           " do not match input channels " + std::to_string(C));
        }
        const int K = L.weight.extent(0), kh = L.weight.extent(2), kw = L.weight.extent(3);
        if (!L.bias.empty() && (L.bias.rank() != 1 || L.bias.extent(0) != K)) {
          throw ShapeError(label + " bias must be [" + std::to_string(K) + "], got " +
                           shape_to_string(L.bias.shape()));
        }
        if (L.stride < 1 || L.pad < 0 || H + 2 * L.pad < kh || W + 2 * L.pad < kw) {
          throw ShapeError(label + " hyperparameters incompatible with input " +
                           shape_to_string(shape));
        }
        shape = {K, (H + 2 * L.pad - kh) / L.stride + 1, (W + 2 * L.pad - kw) / L.stride + 1};
        break;
      }
      case LayerKind::Dense: {
        if (shape.size() != 1) {
          throw ShapeError(label + " expects a flat input, got " + shape_to_string(shape) +
                           " (insert Flatten)");
        }
        if (L.weight.rank() != 2) {
          throw ShapeError(label + " weight must be [out,in], got " +
                           shape_to_string(L.weight.shape()));
        }
        if (L.weight.extent(1) != shape[0]) {
          throw ShapeError(label + " expects input extent " + std::to_string(L.weight.extent(1)) +
                           ", got " + std::to_string(shape[0]));
        }
        const int out = L.weight.extent(0);
        if (!L.bias.empty() && (L.bias.rank() != 1 || L.bias.extent(0) != out)) {
          throw ShapeError(label + " bias must be [" + std::to_string(out) + "], got " +
                           shape_to_string(L.bias.shape()));
        }
        shape = {out};
        break;
      }
      case LayerKind::ReLU:
      case LayerKind::Sigmoid:
        break;
      case LayerKind::MaxPool2D: {
        if (shape.size() != 3) {
          throw ShapeError(label + " expects [C,H,W] input, got " + shape_to_string(shape));
        }
        const int H = shape[1], W = shape[2];
        if (L.window < 1 || L.stride < 1 || H < L.window || W < L.window) {
          throw ShapeError(label + " window " + std::to_string(L.window) +
                           " incompatible with input " + shape_to_string(shape));
        }
        shape = {shape[0], (H - L.window) / L.stride + 1, (W - L.window) / L.stride + 1};
        break;
      }
      case LayerKind::GlobalAvgPool: {
        if (shape.size() != 3) {
          throw ShapeError(label + " expects [C,H,W] input, got " + shape_to_string(shape));
        }
        shape = {shape[0]};
        break;
      }
      case LayerKind::BatchNorm: {
        const int C = shape[0];
        auto check = [&](const Tensor& t, const char* what) {
          if (t.rank() != 1 || t.extent(0) != C) {
            throw ShapeError(label + " " + what + " must be [" + std::to_string(C) + "], got " +
                             shape_to_string(t.shape()));
          }
        };
        check(L.bn_mean, "mean");
        check(L.bn_var, "var");
        check(L.bn_scale, "scale");
        check(L.bn_shift, "shift");
        for (double v : L.bn_var.data()) {
          if (!(v > 0.0)) throw ContractError(label + " variance entries must be > 0");
        }
        break;
      }
      case LayerKind::Flatten: {
        shape = {static_cast<int>(volume(shape))};
        break;
      }
    }
    output_shapes_.push_back(shape);
  }
  if (shape.size() != 1 || shape[0] != num_classes_) {
    throw ShapeError("final layer output " + shape_to_string(shape) + " does not provide " +
                     std::to_string(num_classes_) + " class logits");
  }
}

namespace {

// Per-channel affine form of a frozen BatchNorm layer.
void bn_affine(const Layer& L, std::vector<double>& a, std::vector<double>& c) {
  const int C = L.bn_mean.extent(0);
  a.resize(static_cast<std::size_t>(C));
  c.resize(static_cast<std::size_t>(C));
  for (int i = 0; i < C; ++i) {
    const double inv_sigma = 1.0 / std::sqrt(L.bn_var.at1(i));
    a[static_cast<std::size_t>(i)] = L.bn_scale.at1(i) * inv_sigma;
    c[static_cast<std::size_t>(i)] =
        L.bn_shift.at1(i) - L.bn_scale.at1(i) * L.bn_mean.at1(i) * inv_sigma;
  }
}

Tensor layer_forward(const Layer& L, const Tensor& x, const std::vector<int>& out_shape,
                     std::vector<std::int64_t>* argmax) {
  switch (L.kind) {
    case LayerKind::Conv2D:
      return conv2d_forward(x, L.weight, L.bias, L.stride, L.pad);
    case LayerKind::Dense: {
      const int out = L.weight.extent(0), in = L.weight.extent(1);
      Tensor y({out});
      for (int j = 0; j < out; ++j) {
        double acc = L.bias.empty() ? 0.0 : L.bias.at1(j);
        for (int i = 0; i < in; ++i) acc += L.weight.at2(j, i) * x.at1(i);
        y.at1(j) = acc;
      }
      return y;
    }
    case LayerKind::ReLU: {
      Tensor y = x;
      for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
      return y;
    }
    case LayerKind::Sigmoid: {
      Tensor y = x;
      for (double& v : y.data()) v = sigmoid(v);
      return y;
    }
    case LayerKind::MaxPool2D: {
      const int C = x.extent(0), H = x.extent(1), W = x.extent(2);
      const int OH = out_shape[1], OW = out_shape[2];
      Tensor y({C, OH, OW});
      argmax->assign(static_cast<std::size_t>(y.size()), -1);
      std::int64_t o = 0;
      for (int c = 0; c < C; ++c) {
        for (int oh = 0; oh < OH; ++oh) {
          for (int ow = 0; ow < OW; ++ow, ++o) {
            double best = -std::numeric_limits<double>::infinity();
            std::int64_t best_idx = -1;
            for (int r = 0; r < L.window; ++r) {
              for (int s = 0; s < L.window; ++s) {
                const int ih = oh * L.stride + r;
                const int iw = ow * L.stride + s;
                if (ih >= H || iw >= W) continue;
                const std::int64_t idx =
                    (static_cast<std::int64_t>(c) * H + ih) * W + iw;
                if (x[idx] > best) {
                  best = x[idx];
                  best_idx = idx;
                }
              }
            }
            y[o] = best;
            (*argmax)[static_cast<std::size_t>(o)] = best_idx;
          }
        }
      }
      return y;
    }
    case LayerKind::GlobalAvgPool: {
      const int C = x.extent(0);
      const std::int64_t hw = static_cast<std::int64_t>(x.extent(1)) * x.extent(2);
      Tensor y({C});
      for (int c = 0; c < C; ++c) {
        const std::span<const double> slab(x.data().data() + c * hw,
                                           static_cast<std::size_t>(hw));
        y.at1(c) = pairwise_sum(slab) / static_cast<double>(hw);
      }
      return y;
    }
    case LayerKind::BatchNorm: {
      std::vector<double> a, c;
      bn_affine(L, a, c);
      Tensor y = x;
      const std::int64_t per_ch = x.size() / x.extent(0);
      for (int ch = 0; ch < x.extent(0); ++ch) {
        for (std::int64_t i = 0; i < per_ch; ++i) {
          double& v = y[ch * per_ch + i];
          v = a[static_cast<std::size_t>(ch)] * v + c[static_cast<std::size_t>(ch)];
        }
      }
      return y;
    }
    case LayerKind::Flatten: {
      Tensor y = x;
      return Tensor(out_shape, std::move(y.data()));
    }
  }
  throw ContractError("unreachable layer kind");
}

}  // namespace

ForwardResult forward(const Network& net, const Tensor& input) {
  if (input.shape() != net.input_shape()) {
    throw ShapeError("input shape " + shape_to_string(input.shape()) +
                     " does not match network input " + shape_to_string(net.input_shape()));
  }
  ForwardResult res;
  res.cache.inputs.reserve(net.layers().size());
  res.cache.outputs.reserve(net.layers().size());
  res.cache.pool_argmax.resize(net.layers().size());

  Tensor x = input;
  for (int i = 0; i < net.layer_count(); ++i) {
    const Layer& L = net.layers()[static_cast<std::size_t>(i)];
    res.cache.inputs.push_back(x);
    Tensor y = layer_forward(L, x, net.layer_output_shape(i),
                             &res.cache.pool_argmax[static_cast<std::size_t>(i)]);
    if (!y.all_finite()) {
      throw NumericError("non-finite activation leaving " + layer_label(i, L.kind));
    }
    res.cache.outputs.push_back(y);
    x = std::move(y);
  }
  res.logits = x;
  res.probs = x;
  for (double& v : res.probs.data()) v = sigmoid(v);
  return res;
}

namespace {

struct LayerGrads {
  Tensor weight, bias, bn_scale, bn_shift;
};

struct BackwardResult {
  Tensor input_grad;
  std::vector<Tensor> activation_grads;
  std::vector<LayerGrads> param_grads;
};

void check_cache(const Network& net, const ActivationCache& cache) {
  if (static_cast<int>(cache.inputs.size()) != net.layer_count() ||
      static_cast<int>(cache.outputs.size()) != net.layer_count()) {
    throw ContractError("stale activation cache: layer count mismatch");
  }
  if (net.layer_count() > 0 && cache.inputs[0].shape() != net.input_shape()) {
    throw ContractError("stale activation cache: input shape drifted");
  }
  for (int i = 0; i < net.layer_count(); ++i) {
    if (cache.outputs[static_cast<std::size_t>(i)].shape() != net.layer_output_shape(i)) {
      throw ContractError("stale activation cache: output shape drifted at " +
                          layer_label(i, net.layers()[static_cast<std::size_t>(i)].kind));
    }
  }
}

BackwardResult backward_pass(const Network& net, const ActivationCache& cache, Tensor grad,
                             bool want_params) {
  check_cache(net, cache);
  BackwardResult res;
  res.activation_grads.resize(static_cast<std::size_t>(net.layer_count()));
  if (want_params) res.param_grads.resize(static_cast<std::size_t>(net.layer_count()));

  for (int i = net.layer_count(); i-- > 0;) {
    const Layer& L = net.layers()[static_cast<std::size_t>(i)];
    const Tensor& x = cache.inputs[static_cast<std::size_t>(i)];
    const Tensor& y = cache.outputs[static_cast<std::size_t>(i)];
    res.activation_grads[static_cast<std::size_t>(i)] = grad;

    Tensor dx(x.shape());
    switch (L.kind) {
      case LayerKind::Conv2D: {
        const int C = x.extent(0), H = x.extent(1), W = x.extent(2);
        const int K = L.weight.extent(0), kh = L.weight.extent(2), kw = L.weight.extent(3);
        const int OH = y.extent(1), OW = y.extent(2);
        Tensor* dW = nullptr;
        Tensor* db = nullptr;
        if (want_params) {
          LayerGrads& pg = res.param_grads[static_cast<std::size_t>(i)];
          pg.weight = Tensor(L.weight.shape());
          if (!L.bias.empty()) pg.bias = Tensor(L.bias.shape());
          dW = &pg.weight;
          if (!L.bias.empty()) db = &pg.bias;
        }
        for (int k = 0; k < K; ++k) {
          for (int oh = 0; oh < OH; ++oh) {
            for (int ow = 0; ow < OW; ++ow) {
              const double g = grad.at3(k, oh, ow);
              if (g == 0.0) continue;
              if (db) db->at1(k) += g;
              for (int c = 0; c < C; ++c) {
                for (int r = 0; r < kh; ++r) {
                  const int ih = oh * L.stride - L.pad + r;
                  if (ih < 0 || ih >= H) continue;
                  for (int s = 0; s < kw; ++s) {
                    const int iw = ow * L.stride - L.pad + s;
                    if (iw < 0 || iw >= W) continue;
                    dx.at3(c, ih, iw) += g * L.weight.at4(k, c, r, s);
                    if (dW) dW->at4(k, c, r, s) += g * x.at3(c, ih, iw);
                  }
                }
              }
            }
          }
        }
        break;
      }
      case LayerKind::Dense: {
        const int out = L.weight.extent(0), in = L.weight.extent(1);
        Tensor* dW = nullptr;
        Tensor* db = nullptr;
        if (want_params) {
          LayerGrads& pg = res.param_grads[static_cast<std::size_t>(i)];
          pg.weight = Tensor(L.weight.shape());
          if (!L.bias.empty()) pg.bias = Tensor(L.bias.shape());
          dW = &pg.weight;
          if (!L.bias.empty()) db = &pg.bias;
        }
        for (int j = 0; j < out; ++j) {
          const double g = grad.at1(j);
          if (db) db->at1(j) += g;
          for (int k = 0; k < in; ++k) {
            dx.at1(k) += g * L.weight.at2(j, k);
            if (dW) dW->at2(j, k) += g * x.at1(k);
          }
        }
        break;
      }
      case LayerKind::ReLU: {
        for (std::int64_t k = 0; k < x.size(); ++k) {
          dx[k] = x[k] > 0.0 ? grad[k] : 0.0;
        }
        break;
      }
      case LayerKind::Sigmoid: {
        for (std::int64_t k = 0; k < x.size(); ++k) {
          dx[k] = grad[k] * y[k] * (1.0 - y[k]);
        }
        break;
      }
      case LayerKind::MaxPool2D: {
        const std::vector<std::int64_t>& arg = cache.pool_argmax[static_cast<std::size_t>(i)];
        for (std::int64_t o = 0; o < y.size(); ++o) {
          dx[arg[static_cast<std::size_t>(o)]] += grad[o];
        }
        break;
      }
      case LayerKind::GlobalAvgPool: {
        const int C = x.extent(0);
        const std::int64_t hw = static_cast<std::int64_t>(x.extent(1)) * x.extent(2);
        const double inv = 1.0 / static_cast<double>(hw);
        for (int c = 0; c < C; ++c) {
          const double g = grad.at1(c) * inv;
          for (std::int64_t k = 0; k < hw; ++k) dx[c * hw + k] = g;
        }
        break;
      }
      case LayerKind::BatchNorm: {
        std::vector<double> a, cvec;
        bn_affine(L, a, cvec);
        const int C = x.extent(0);
        const std::int64_t per_ch = x.size() / C;
        Tensor* dscale = nullptr;
        Tensor* dshift = nullptr;
        if (want_params) {
          LayerGrads& pg = res.param_grads[static_cast<std::size_t>(i)];
          pg.bn_scale = Tensor(L.bn_scale.shape());
          pg.bn_shift = Tensor(L.bn_shift.shape());
          dscale = &pg.bn_scale;
          dshift = &pg.bn_shift;
        }
        for (int ch = 0; ch < C; ++ch) {
          const double inv_sigma = 1.0 / std::sqrt(L.bn_var.at1(ch));
          for (std::int64_t k = 0; k < per_ch; ++k) {
            const double g = grad[ch * per_ch + k];
            dx[ch * per_ch + k] = g * a[static_cast<std::size_t>(ch)];
            if (dscale) {
              const double xhat = (x[ch * per_ch + k] - L.bn_mean.at1(ch)) * inv_sigma;
              dscale->at1(ch) += g * xhat;
              dshift->at1(ch) += g;
            }
          }
        }
        break;
      }
      case LayerKind::Flatten: {
        dx = Tensor(x.shape(), std::move(grad.data()));
        break;
      }
    }
    grad = std::move(dx);
  }
  res.input_grad = std::move(grad);
  return res;
}

}  // namespace

GradientResult backward_gradient(const Network& net, const ActivationCache& cache,
                                 int class_index) {
  if (class_index < 0 || class_index >= net.num_classes()) {
    throw ContractError("class index " + std::to_string(class_index) + " out of range [0," +
                        std::to_string(net.num_classes()) + ")");
  }
  Tensor seed({net.num_classes()});
  seed.at1(class_index) = 1.0;
  BackwardResult r = backward_pass(net, cache, std::move(seed), /*want_params=*/false);
  return {std::move(r.input_grad), std::move(r.activation_grads)};
}

namespace {

struct AdamSlot {
  Tensor* param;
  std::vector<double> m, v;
};

double bce_with_logits(double z, double y) {
  return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

}  // namespace

TrainResult train(const Network& net, const std::vector<LabeledSample>& dataset,
                  const TrainConfig& config) {
  if (dataset.empty()) throw ContractError("training dataset is empty");
  for (const LabeledSample& s : dataset) {
    if (static_cast<int>(s.labels.size()) != net.num_classes()) {
      throw ShapeError("sample label count " + std::to_string(s.labels.size()) +
                       " does not match num_classes " + std::to_string(net.num_classes()));
    }
    for (double y : s.labels) {
      if (y != 0.0 && y != 1.0) throw ContractError("labels must be in {0,1}");
    }
  }
  if (config.epochs < 0 || config.batch_size < 1) {
    throw ContractError("invalid training config");
  }

  TrainResult result{net, {}};
  Network& model = result.net;

  std::vector<AdamSlot> slots;
  for (Layer& L : model.mutable_layers()) {
    auto add = [&](Tensor& t) {
      if (t.empty()) return;
      slots.push_back({&t, std::vector<double>(t.data().size(), 0.0),
                       std::vector<double>(t.data().size(), 0.0)});
    };
    if (L.kind == LayerKind::Conv2D || L.kind == LayerKind::Dense) {
      add(L.weight);
      add(L.bias);
    } else if (L.kind == LayerKind::BatchNorm) {
      add(L.bn_scale);
      add(L.bn_shift);
    }
  }

  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  Rng rng(config.seed);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::int64_t step = 0;

  const int C = model.num_classes();
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      const double inv_batch = 1.0 / static_cast<double>(stop - start);

      std::vector<std::vector<double>> grad_acc(slots.size());
      for (std::size_t s = 0; s < slots.size(); ++s) {
        grad_acc[s].assign(slots[s].param->data().size(), 0.0);
      }

      for (std::size_t b = start; b < stop; ++b) {
        const LabeledSample& sample = dataset[order[b]];
        ForwardResult fwd = forward(model, sample.image);
        Tensor seed({C});
        for (int c = 0; c < C; ++c) {
          epoch_loss += bce_with_logits(fwd.logits.at1(c), sample.labels[static_cast<std::size_t>(c)]);
          seed.at1(c) = (fwd.probs.at1(c) - sample.labels[static_cast<std::size_t>(c)]) *
                        inv_batch / static_cast<double>(C);
        }
        BackwardResult bwd = backward_pass(model, fwd.cache, std::move(seed),
                                           /*want_params=*/true);
        std::size_t s = 0;
        for (std::size_t li = 0; li < model.layers().size(); ++li) {
          const Layer& L = model.layers()[li];
          const LayerGrads& pg = bwd.param_grads[li];
          auto accumulate = [&](const Tensor& g) {
            if (g.empty()) return;
            std::vector<double>& acc = grad_acc[s++];
            for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += g.data()[k];
          };
          if (L.kind == LayerKind::Conv2D || L.kind == LayerKind::Dense) {
            accumulate(pg.weight);
            if (!L.bias.empty()) accumulate(pg.bias);
          } else if (L.kind == LayerKind::BatchNorm) {
            accumulate(pg.bn_scale);
            accumulate(pg.bn_shift);
          }
        }
      }

      ++step;
      const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      for (std::size_t s = 0; s < slots.size(); ++s) {
        AdamSlot& slot = slots[s];
        std::vector<double>& p = slot.param->data();
        for (std::size_t k = 0; k < p.size(); ++k) {
          const double g = grad_acc[s][k];
          slot.m[k] = beta1 * slot.m[k] + (1.0 - beta1) * g;
          slot.v[k] = beta2 * slot.v[k] + (1.0 - beta2) * g * g;
          const double mhat = slot.m[k] / bc1;
          const double vhat = slot.v[k] / bc2;
          p[k] -= config.learning_rate * mhat / (std::sqrt(vhat) + eps);
        }
      }
    }
    epoch_loss /= static_cast<double>(dataset.size() * C);
    if (!std::isfinite(epoch_loss)) {
      throw NumericError("training diverged (loss is not finite) at epoch " +
                         std::to_string(epoch) + "; try a smaller learning rate");
    }
    result.epoch_losses.push_back(epoch_loss);
  }
  model.revalidate();
  return result;
}

namespace {

constexpr int kModelFormatVersion = 1;

std::string layer_file_stem(int index, const char* what) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "layer%02d_%s.tnsr", index, what);
  return buf;
}

}  // namespace

Network load_model(const std::filesystem::path& manifest_path) {
  std::ifstream f(manifest_path);
  if (!f) throw IoError("cannot open model manifest " + manifest_path.string());
  json doc;
  try {
    doc = json::parse(f);
  } catch (const json::parse_error& e) {
    throw ParseError("malformed model manifest " + manifest_path.string() + ": " + e.what(),
                     static_cast<std::size_t>(e.byte));
  }
  if (!doc.contains("format_version") || doc["format_version"].get<int>() != kModelFormatVersion) {
    throw ContractError("unsupported model manifest format_version in " + manifest_path.string());
  }
  const std::filesystem::path dir = manifest_path.parent_path();
  auto tensor_field = [&](const json& j, const char* key) -> Tensor {
    if (!j.contains(key)) return {};
    return load_tensor(dir / j[key].get<std::string>());
  };

  try {
    std::vector<Layer> layers;
    for (const json& jl : doc.at("layers")) {
      Layer L;
      L.kind = parse_layer_kind(jl.at("kind").get<std::string>());
      L.pad = jl.value("pad", 0);
      L.window = jl.value("window", 2);
      L.stride = jl.value("stride", L.kind == LayerKind::MaxPool2D ? L.window : 1);
      L.weight = tensor_field(jl, "weight");
      L.bias = tensor_field(jl, "bias");
      L.bn_mean = tensor_field(jl, "mean");
      L.bn_var = tensor_field(jl, "var");
      L.bn_scale = tensor_field(jl, "scale");
      L.bn_shift = tensor_field(jl, "shift");
      layers.push_back(std::move(L));
    }
    return Network(std::move(layers), doc.at("input_shape").get<std::vector<int>>(),
                   doc.at("num_classes").get<int>());
  } catch (const json::exception& e) {
    throw ContractError("invalid model manifest " + manifest_path.string() + ": " + e.what());
  }
}

void save_model(const Network& net, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  json doc;
  doc["format_version"] = kModelFormatVersion;
  doc["input_shape"] = net.input_shape();
  doc["num_classes"] = net.num_classes();
  json jlayers = json::array();
  for (int i = 0; i < net.layer_count(); ++i) {
    const Layer& L = net.layers()[static_cast<std::size_t>(i)];
    json jl;
    jl["kind"] = layer_kind_name(L.kind);
    if (L.kind == LayerKind::Conv2D) {
      jl["stride"] = L.stride;
      jl["pad"] = L.pad;
    }
    if (L.kind == LayerKind::MaxPool2D) {
      jl["window"] = L.window;
      jl["stride"] = L.stride;
    }
    auto emit = [&](const Tensor& t, const char* what, const char* key) {
      if (t.empty()) return;
      const std::string name = layer_file_stem(i, what);
      save_tensor(dir / name, t);
      jl[key] = name;
    };
    emit(L.weight, "weight", "weight");
    emit(L.bias, "bias", "bias");
    emit(L.bn_mean, "mean", "mean");
    emit(L.bn_var, "var", "var");
    emit(L.bn_scale, "scale", "scale");
    emit(L.bn_shift, "shift", "shift");
    jlayers.push_back(std::move(jl));
  }
  doc["layers"] = std::move(jlayers);
  std::ofstream f(dir / "model.json", std::ios::trunc);
  if (!f) throw IoError("cannot write model manifest in " + dir.string());
  f << doc.dump(2) << "\n";
}

BlobDataset generate_blob_dataset(int n, int image_size, std::uint64_t seed) {
  if (image_size < 8) {
    throw ContractError("image_size must be >= 8, got " + std::to_string(image_size));
  }
  if (n < 0) throw ContractError("n must be >= 0");

  constexpr int kClasses = 4;
  constexpr double kBlobProb = 0.35;
  const int half = image_size / 2;
  const int side_lo = std::max(2, (2 * half) / 5);
  const int side_hi = std::max(side_lo, (3 * half) / 4);

  auto quantize = [](double v) { return std::round(v * 255.0) / 255.0; };

  BlobDataset ds;
  ds.num_classes = kClasses;
  ds.image_size = image_size;
  Rng rng(seed);

  for (int i = 0; i < n; ++i) {
    BlobSample s;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "img_%05d", i);
    s.id = buf;
    s.image = Tensor({1, image_size, image_size});
    s.labels.assign(kClasses, 0);
    s.masks.resize(kClasses);
    s.blob_areas.assign(kClasses, 0);

    for (std::int64_t p = 0; p < s.image.size(); ++p) {
      s.image[p] = quantize(rng.uniform(0.0, 0.15));
    }

    for (int cls = 0; cls < kClasses; ++cls) {
      if (!rng.bernoulli(kBlobProb)) continue;
      const int row0 = (cls / 2) * half;
      const int col0 = (cls % 2) * half;
      const int qh = (cls / 2) ? image_size - half : half;
      const int qw = (cls % 2) ? image_size - half : half;
      const int bh = side_lo + static_cast<int>(rng.uniform_int(
                                   static_cast<std::uint64_t>(side_hi - side_lo + 1)));
      const int bw = side_lo + static_cast<int>(rng.uniform_int(
                                   static_cast<std::uint64_t>(side_hi - side_lo + 1)));
      const int top = row0 + static_cast<int>(rng.uniform_int(
                                 static_cast<std::uint64_t>(qh - bh + 1)));
      const int left = col0 + static_cast<int>(rng.uniform_int(
                                  static_cast<std::uint64_t>(qw - bw + 1)));

      s.labels[static_cast<std::size_t>(cls)] = 1;
      s.blob_areas[static_cast<std::size_t>(cls)] = bh * bw;
      Tensor mask({image_size, image_size});
      for (int r = top; r < top + bh; ++r) {
        for (int c = left; c < left + bw; ++c) {
          s.image.at3(0, r, c) = quantize(rng.uniform(0.75, 1.0));
          mask.at2(r, c) = 1.0;
        }
      }
      s.masks[static_cast<std::size_t>(cls)] = std::move(mask);
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace xai
