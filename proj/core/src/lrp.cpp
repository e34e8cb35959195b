#include "xai/lrp.hpp"

#include <cmath>
#include <cstdio>
#include <span>

#include "xai/errors.hpp"

namespace xai {

namespace {

double stabilized(double z, double eps) {
  const double denom = z + (z >= 0.0 ? eps : -eps);
  if (std::abs(denom) < 1e-12) {
    throw NumericError("vanishing pre-activation z_j in relevance redistribution; "
                       "use epsilon > 0");
  }
  return denom;
}

// Per-channel affine view of a frozen BatchNorm: y = a*x + c.
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

// z-rule through a Dense layer with output channel scales (1.0 when no
// BatchNorm is folded in). z = post-BN output, x = pre-layer input.
Tensor dense_rule(const Layer& L, const Tensor& x, const Tensor& z, const Tensor& R,
                  const std::vector<double>& out_scale, double eps) {
  const int out = L.weight.extent(0), in = L.weight.extent(1);
  std::vector<double> s(static_cast<std::size_t>(out));
  for (int j = 0; j < out; ++j) {
    s[static_cast<std::size_t>(j)] =
        R.at1(j) == 0.0 ? 0.0 : R.at1(j) / stabilized(z.at1(j), eps);
  }
  Tensor rin({in});
  for (int j = 0; j < out; ++j) {
    const double sj = s[static_cast<std::size_t>(j)];
    if (sj == 0.0) continue;
    const double scale = out_scale.empty() ? 1.0 : out_scale[static_cast<std::size_t>(j)];
    for (int i = 0; i < in; ++i) {
      rin.at1(i) += scale * L.weight.at2(j, i) * sj;
    }
  }
  for (int i = 0; i < in; ++i) rin.at1(i) *= x.at1(i);
  return rin;
}

Tensor conv_rule(const Layer& L, const Tensor& x, const Tensor& z, const Tensor& R,
                 const std::vector<double>& out_scale, double eps) {
  const int C = x.extent(0), H = x.extent(1), W = x.extent(2);
  const int K = L.weight.extent(0), kh = L.weight.extent(2), kw = L.weight.extent(3);
  const int OH = z.extent(1), OW = z.extent(2);
  Tensor rin({C, H, W});
  for (int k = 0; k < K; ++k) {
    const double scale = out_scale.empty() ? 1.0 : out_scale[static_cast<std::size_t>(k)];
    for (int oh = 0; oh < OH; ++oh) {
      for (int ow = 0; ow < OW; ++ow) {
        const double r = R.at3(k, oh, ow);
        if (r == 0.0) continue;
        const double s = r / stabilized(z.at3(k, oh, ow), eps);
        const double ss = s * scale;
        for (int c = 0; c < C; ++c) {
          for (int r = 0; r < kh; ++r) {
            const int ih = oh * L.stride - L.pad + r;
            if (ih < 0 || ih >= H) continue;
            for (int t = 0; t < kw; ++t) {
              const int iw = ow * L.stride - L.pad + t;
              if (iw < 0 || iw >= W) continue;
              rin.at3(c, ih, iw) += ss * L.weight.at4(k, c, r, t);
            }
          }
        }
      }
    }
  }
  for (std::int64_t i = 0; i < rin.size(); ++i) rin[i] *= x[i];
  return rin;
}

double tensor_sum(const Tensor& t) {
  return pairwise_sum(std::span<const double>(t.data().data(), t.data().size()));
}

}  // namespace

RelevanceMap lrp(const Network& net, const Tensor& x, int class_index, const LrpConfig& cfg) {
  if (class_index < 0 || class_index >= net.num_classes()) {
    throw ContractError("class index " + std::to_string(class_index) + " out of range [0," +
                        std::to_string(net.num_classes()) + ")");
  }
  if (cfg.epsilon < 0.0) throw ContractError("epsilon must be >= 0");

  const ForwardResult fwd = forward(net, x);
  const int L = net.layer_count();

  RelevanceMap map;
  map.epsilon = cfg.epsilon;
  map.class_index = class_index;
  map.layer_relevance.resize(static_cast<std::size_t>(L));
  map.per_layer_leakage.assign(static_cast<std::size_t>(L), 0.0);

  Tensor R({net.num_classes()});
  R.at1(class_index) = fwd.logits.at1(class_index);

  int i = L - 1;
  while (i >= 0) {
    const Layer& layer = net.layers()[static_cast<std::size_t>(i)];
    const Tensor& input = fwd.cache.inputs[static_cast<std::size_t>(i)];
    const Tensor& output = fwd.cache.outputs[static_cast<std::size_t>(i)];
    const double sum_out = tensor_sum(R);
    Tensor rin;
    int consumed_down_to = i;  // lowest layer index consumed by this step

    switch (layer.kind) {
      case LayerKind::BatchNorm: {
        std::vector<double> a, c;
        bn_affine(layer, a, c);
        const bool foldable =
            i > 0 && (net.layers()[static_cast<std::size_t>(i - 1)].kind == LayerKind::Conv2D ||
                      net.layers()[static_cast<std::size_t>(i - 1)].kind == LayerKind::Dense);
        if (foldable) {
          // Fold the affine BN into the preceding linear layer: one z-rule
          // step from the BN output down to the linear input. The relevance
          // at the inner linear/BN boundary is recorded as the incoming R.
          const Layer& lin = net.layers()[static_cast<std::size_t>(i - 1)];
          const Tensor& lin_input = fwd.cache.inputs[static_cast<std::size_t>(i - 1)];
          map.layer_relevance[static_cast<std::size_t>(i)] = R;
          rin = lin.kind == LayerKind::Conv2D
                    ? conv_rule(lin, lin_input, output, R, a, cfg.epsilon)
                    : dense_rule(lin, lin_input, output, R, a, cfg.epsilon);
          consumed_down_to = i - 1;
        } else {
          // Standalone BN: diagonal linear layer under the z-rule.
          rin = Tensor(input.shape());
          const int C = input.extent(0);
          const std::int64_t per_ch = input.size() / C;
          for (int ch = 0; ch < C; ++ch) {
            for (std::int64_t k = 0; k < per_ch; ++k) {
              const std::int64_t idx = ch * per_ch + k;
              if (R[idx] == 0.0) continue;
              const double s = R[idx] / stabilized(output[idx], cfg.epsilon);
              rin[idx] = a[static_cast<std::size_t>(ch)] * input[idx] * s;
            }
          }
        }
        break;
      }
      case LayerKind::Conv2D:
        rin = conv_rule(layer, input, output, R, {}, cfg.epsilon);
        break;
      case LayerKind::Dense:
        rin = dense_rule(layer, input, output, R, {}, cfg.epsilon);
        break;
      case LayerKind::ReLU: {
        rin = Tensor(input.shape());
        for (std::int64_t k = 0; k < input.size(); ++k) {
          rin[k] = input[k] > 0.0 ? R[k] : 0.0;
        }
        break;
      }
      case LayerKind::Sigmoid:
        // Monotone activation: relevance passes through unchanged.
        rin = R;
        break;
      case LayerKind::MaxPool2D: {
        rin = Tensor(input.shape());
        const std::vector<std::int64_t>& arg =
            fwd.cache.pool_argmax[static_cast<std::size_t>(i)];
        for (std::int64_t o = 0; o < R.size(); ++o) {
          rin[arg[static_cast<std::size_t>(o)]] += R[o];
        }
        break;
      }
      case LayerKind::GlobalAvgPool: {
        // z-rule with the pooling weights 1/(H*W): each position receives
        // relevance proportional to its contribution x_i/(H*W) to the mean.
        // This conserves relevance exactly and reduces to a uniform split on
        // constant inputs.
        rin = Tensor(input.shape());
        const int C = input.extent(0);
        const std::int64_t hw = input.size() / C;
        const double inv = 1.0 / static_cast<double>(hw);
        for (int c = 0; c < C; ++c) {
          if (R.at1(c) == 0.0) continue;
          const double s = R.at1(c) / stabilized(output.at1(c), cfg.epsilon);
          for (std::int64_t k = 0; k < hw; ++k) {
            rin[c * hw + k] = input[c * hw + k] * inv * s;
          }
        }
        break;
      }
      case LayerKind::Flatten: {
        Tensor tmp = R;
        rin = Tensor(input.shape(), std::move(tmp.data()));
        break;
      }
    }

    map.layer_relevance[static_cast<std::size_t>(consumed_down_to)] = rin;
    map.per_layer_leakage[static_cast<std::size_t>(consumed_down_to)] =
        sum_out - tensor_sum(rin);
    R = std::move(rin);
    i = consumed_down_to - 1;
  }

  map.input_relevance = R;
  const int H = net.input_shape()[1], W = net.input_shape()[2];
  map.input_heatmap = Tensor({H, W});
  const std::int64_t hw = static_cast<std::int64_t>(H) * W;
  for (int c = 0; c < net.input_shape()[0]; ++c) {
    for (std::int64_t k = 0; k < hw; ++k) {
      map.input_heatmap[k] += map.input_relevance[c * hw + k];
    }
  }
  for (double leak : map.per_layer_leakage) map.total_leakage += leak;
  return map;
}

void dump_relevances(const RelevanceMap& map, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t l = 0; l < map.layer_relevance.size(); ++l) {
    if (map.layer_relevance[l].empty()) continue;
    char name[64];
    std::snprintf(name, sizeof(name), "layer%02zu_relevance.tnsr", l);
    save_tensor(dir / name, map.layer_relevance[l]);
  }
  save_tensor(dir / "input_relevance.tnsr", map.input_relevance);
  save_tensor(dir / "input_heatmap.tnsr", map.input_heatmap);
}

}  // namespace xai
