#include <numeric>

#include "doctest.h"
#include "test_helpers.hpp"
#include "xai/errors.hpp"
#include "xai/lrp.hpp"

using namespace xai;
using namespace xai::testing;

namespace {

double total(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v;
  return s;
}

}  // namespace

TEST_SUITE_BEGIN("lrp");

TEST_CASE("single dense layer redistributes proportionally and conserves y_c") {
  // Positive weights, zero bias, epsilon 0: R_i = (x_i w_ic / sum) * y_c.
  Tensor W({2, 3}, {1.0, 2.0, 3.0, 0.5, 0.5, 0.5});
  std::vector<Layer> layers;
  layers.push_back(plain_layer(LayerKind::Flatten));
  layers.push_back(dense_layer(W, Tensor{}));
  Network net(std::move(layers), {1, 1, 3}, 2);
  Tensor x({1, 1, 3}, {0.2, 0.4, 0.6});
  ForwardResult fwd = forward(net, x);
  const double yc = fwd.logits.at1(0);

  RelevanceMap map = lrp(net, x, 0, {0.0});
  double zsum = 0.0;
  for (int i = 0; i < 3; ++i) zsum += x[i] * W.at2(0, i);
  for (int i = 0; i < 3; ++i) {
    CHECK(map.input_relevance[i] == doctest::Approx(x[i] * W.at2(0, i) / zsum * yc).epsilon(1e-12));
  }
  CHECK(total(map.input_relevance) == doctest::Approx(yc).epsilon(1e-12));
}

TEST_CASE("bias-free deep nets conserve relevance within 1e-6 relative") {
  for (int trial = 0; trial < 10; ++trial) {
    Rng rng(mix_seed(0x14B, static_cast<std::uint64_t>(trial)));
    Network net = random_cnn(rng, /*bias_free=*/true);
    Tensor x = random_tensor(net.input_shape(), rng, 0.1, 1.0);
    const ForwardResult fwd = forward(net, x);
    const int cls = static_cast<int>(rng.uniform_int(2));
    const double yc = fwd.logits.at1(cls);
    if (std::abs(yc) < 1e-6) continue;
    RelevanceMap map = lrp(net, x, cls, {0.0});
    CHECK(total(map.input_relevance) == doctest::Approx(yc).epsilon(1e-6));
    CHECK(std::abs(map.total_leakage) < 1e-6 * std::abs(yc) + 1e-12);
  }
}

TEST_CASE("per-layer conservation is exact for bias-free linear layers") {
  Rng rng(0x77);
  Network net = random_cnn(rng, /*bias_free=*/true);
  Tensor x = random_tensor(net.input_shape(), rng, 0.1, 1.0);
  RelevanceMap map = lrp(net, x, 0, {0.0});
  for (int l = 0; l < net.layer_count(); ++l) {
    const LayerKind kind = net.layers()[static_cast<std::size_t>(l)].kind;
    if (kind != LayerKind::Conv2D && kind != LayerKind::Dense) continue;
    CHECK(std::abs(map.per_layer_leakage[static_cast<std::size_t>(l)]) < 1e-9);
  }
}

TEST_CASE("reported leakage matches the analytic bias term") {
  Rng rng(0x99);
  // conv(+bias) -> ReLU -> flatten -> dense(+bias); epsilon 0.
  std::vector<Layer> layers;
  layers.push_back(conv_layer(random_tensor({3, 1, 3, 3}, rng, 0.1, 0.8),
                              random_tensor({3}, rng, 0.05, 0.3), 1, 1));
  layers.push_back(plain_layer(LayerKind::ReLU));
  layers.push_back(plain_layer(LayerKind::Flatten));
  layers.push_back(dense_layer(random_tensor({2, 3 * 6 * 6}, rng, 0.05, 0.4),
                               random_tensor({2}, rng, 0.05, 0.2)));
  Network net(std::move(layers), {1, 6, 6}, 2);
  Tensor x = random_tensor({1, 6, 6}, rng, 0.2, 1.0);

  const ForwardResult fwd = forward(net, x);
  RelevanceMap map = lrp(net, x, 0, {0.0});

  // Dense layer: leakage = sum_j (b_j / z_j) R_j with R_j the relevance
  // arriving at the dense output (the logit seed).
  {
    const Layer& dense = net.layers()[3];
    const Tensor& z = fwd.cache.outputs[3];
    Tensor seed({2});
    seed.at1(0) = fwd.logits.at1(0);
    double expect = 0.0;
    for (int j = 0; j < 2; ++j) {
      if (seed.at1(j) != 0.0) expect += dense.bias.at1(j) / z.at1(j) * seed.at1(j);
    }
    CHECK(map.per_layer_leakage[3] == doctest::Approx(expect).epsilon(1e-6));
  }
  // Conv layer: same identity against the relevance entering the conv output.
  {
    const Layer& conv = net.layers()[0];
    const Tensor& z = fwd.cache.outputs[0];
    const Tensor& r_at_conv_out = map.layer_relevance[1];  // input of ReLU layer
    double expect = 0.0;
    for (int k = 0; k < z.extent(0); ++k) {
      for (int h = 0; h < z.extent(1); ++h) {
        for (int w = 0; w < z.extent(2); ++w) {
          const double r = r_at_conv_out.at3(k, h, w);
          if (r != 0.0) expect += conv.bias.at1(k) / z.at3(k, h, w) * r;
        }
      }
    }
    CHECK(map.per_layer_leakage[0] == doctest::Approx(expect).epsilon(1e-6));
  }
  // Total leakage accounts for everything lost between seed and input.
  CHECK(map.total_leakage ==
        doctest::Approx(fwd.logits.at1(0) - total(map.input_relevance)).epsilon(1e-9));
}

TEST_CASE("zero input with positive epsilon yields all-zero relevances") {
  Rng rng(0xAB);
  std::vector<Layer> layers;
  layers.push_back(plain_layer(LayerKind::Flatten));
  layers.push_back(dense_layer(random_tensor({2, 9}, rng), Tensor{}));
  Network net(std::move(layers), {1, 3, 3}, 2);
  RelevanceMap map = lrp(net, Tensor({1, 3, 3}), 0, {1e-6});
  for (double v : map.input_relevance.data()) CHECK(v == 0.0);
  for (double v : map.input_heatmap.data()) CHECK(v == 0.0);
}

TEST_CASE("vanishing z with epsilon 0 raises an error advising epsilon") {
  // Hidden unit 0 has z ~ 1e-13 but still receives nonzero relevance from
  // the head, forcing a division by the vanishing pre-activation.
  std::vector<Layer> layers;
  layers.push_back(plain_layer(LayerKind::Flatten));
  layers.push_back(dense_layer(Tensor({2, 2}, {1.0, -1.0, 1.0, 0.0}), Tensor{}));
  layers.push_back(dense_layer(Tensor({1, 2}, {1.0, 1.0}), Tensor{}));
  Network net(std::move(layers), {1, 1, 2}, 1);
  Tensor x({1, 1, 2}, {3.0, 3.0 - 1e-13});
  CHECK_THROWS_WITH_AS(lrp(net, x, 0, {0.0}), doctest::Contains("epsilon"), NumericError);
  // The stabilized rule handles the same case.
  RelevanceMap map = lrp(net, x, 0, {1e-6});
  CHECK(map.input_relevance.all_finite());
}

TEST_CASE("zero relevance over a vanishing z carries no relevance and no error") {
  std::vector<Layer> layers;
  layers.push_back(plain_layer(LayerKind::Flatten));
  layers.push_back(dense_layer(Tensor({2, 2}, {1.0, -1.0, 1.0, 0.0}), Tensor{}));
  layers.push_back(plain_layer(LayerKind::ReLU));
  layers.push_back(dense_layer(Tensor({1, 2}, {1.0, 1.0}), Tensor{}));
  Network net(std::move(layers), {1, 1, 2}, 1);
  Tensor x({1, 1, 2}, {3.0, 3.0});  // hidden unit 0: z = 0, relu kills it
  RelevanceMap map = lrp(net, x, 0, {0.0});
  CHECK(total(map.input_relevance) == doctest::Approx(3.0).epsilon(1e-9));
}

TEST_CASE("maxpool routes relevance to the argmax and preserves the sum") {
  Rng rng(0xCD);
  std::vector<Layer> layers;
  layers.push_back(conv_layer(random_tensor({2, 1, 3, 3}, rng, 0.1, 0.6), Tensor{}, 1, 1));
  layers.push_back(plain_layer(LayerKind::ReLU));
  layers.push_back(maxpool_layer(2, 2));
  layers.push_back(plain_layer(LayerKind::Flatten));
  layers.push_back(dense_layer(random_tensor({2, 2 * 4 * 4}, rng, 0.1, 0.5), Tensor{}));
  Network net(std::move(layers), {1, 8, 8}, 2);
  Tensor x = random_tensor({1, 8, 8}, rng, 0.1, 1.0);

  const ForwardResult fwd = forward(net, x);
  RelevanceMap map = lrp(net, x, 0, {0.0});
  const Tensor& into_pool = map.layer_relevance[3];  // relevance at flatten input = pool output
  const Tensor& out_of_pool = map.layer_relevance[2];  // relevance at pool input
  CHECK(total(into_pool) == doctest::Approx(total(out_of_pool)).epsilon(1e-12));
  // Nonzero relevance appears only at cached argmax positions.
  const std::vector<std::int64_t>& arg = fwd.cache.pool_argmax[2];
  std::vector<bool> winner(static_cast<std::size_t>(out_of_pool.size()), false);
  for (std::int64_t idx : arg) winner[static_cast<std::size_t>(idx)] = true;
  for (std::int64_t i = 0; i < out_of_pool.size(); ++i) {
    if (!winner[static_cast<std::size_t>(i)]) CHECK(out_of_pool[i] == 0.0);
  }
}

TEST_CASE("global average pooling splits relevance by contribution and conserves it") {
  Rng rng(0xEF);
  std::vector<Layer> layers;
  layers.push_back(plain_layer(LayerKind::GlobalAvgPool));
  layers.push_back(dense_layer(random_tensor({2, 3}, rng, 0.1, 0.9), Tensor{}));
  Network net(std::move(layers), {3, 4, 4}, 2);
  Tensor x = random_tensor({3, 4, 4}, rng, 0.1, 1.0);
  const ForwardResult fwd = forward(net, x);
  RelevanceMap map = lrp(net, x, 0, {0.0});
  const Tensor& r_gap_out = map.layer_relevance[1];  // [3] at dense input
  double channel_sum[3] = {0, 0, 0};
  for (int c = 0; c < 3; ++c) {
    const double mean_c = fwd.cache.outputs[0].at1(c);
    for (int h = 0; h < 4; ++h) {
      for (int w = 0; w < 4; ++w) {
        const double expect = x.at3(c, h, w) / 16.0 / mean_c * r_gap_out.at1(c);
        CHECK(map.input_relevance.at3(c, h, w) == doctest::Approx(expect).epsilon(1e-12));
        channel_sum[c] += map.input_relevance.at3(c, h, w);
      }
    }
    CHECK(channel_sum[c] == doctest::Approx(r_gap_out.at1(c)).epsilon(1e-12));
  }
  // A constant field reduces to the uniform split.
  Tensor flat = Tensor::full({3, 4, 4}, 0.5);
  RelevanceMap uniform = lrp(net, flat, 0, {0.0});
  const Tensor& r_out = uniform.layer_relevance[1];
  for (int c = 0; c < 3; ++c) {
    for (int h = 0; h < 4; ++h) {
      for (int w = 0; w < 4; ++w) {
        CHECK(uniform.input_relevance.at3(c, h, w) ==
              doctest::Approx(r_out.at1(c) / 16.0).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("batchnorm folding matches the explicitly folded network") {
  Rng rng(0x111);
  const int C = 3;
  Tensor kern = random_tensor({C, 1, 3, 3}, rng, -0.5, 0.5);
  Tensor bias = random_tensor({C}, rng, -0.2, 0.2);
  Tensor mean = random_tensor({C}, rng, -0.3, 0.3);
  Tensor var = random_tensor({C}, rng, 0.4, 1.6);
  Tensor scale = random_tensor({C}, rng, 0.5, 1.5);
  Tensor shift = random_tensor({C}, rng, -0.3, 0.3);

  std::vector<Layer> with_bn;
  with_bn.push_back(conv_layer(kern, bias, 1, 1));
  with_bn.push_back(batchnorm_layer(mean, var, scale, shift));
  with_bn.push_back(plain_layer(LayerKind::ReLU));
  with_bn.push_back(plain_layer(LayerKind::GlobalAvgPool));
  Tensor head = random_tensor({2, C}, rng, 0.1, 0.8);
  with_bn.push_back(dense_layer(head, Tensor{}));
  Network net_bn(std::move(with_bn), {1, 6, 6}, 2);

  // Fold by hand: w' = a*w, b' = a*b + c.
  Tensor kern_f = kern, bias_f = bias;
  for (int k = 0; k < C; ++k) {
    const double a = scale.at1(k) / std::sqrt(var.at1(k));
    const double c = shift.at1(k) - scale.at1(k) * mean.at1(k) / std::sqrt(var.at1(k));
    for (int i = 0; i < 9; ++i) {
      kern_f.data()[static_cast<std::size_t>(k * 9 + i)] *= a;
    }
    bias_f.at1(k) = a * bias.at1(k) + c;
  }
  std::vector<Layer> folded;
  folded.push_back(conv_layer(kern_f, bias_f, 1, 1));
  folded.push_back(plain_layer(LayerKind::ReLU));
  folded.push_back(plain_layer(LayerKind::GlobalAvgPool));
  folded.push_back(dense_layer(head, Tensor{}));
  Network net_folded(std::move(folded), {1, 6, 6}, 2);

  Tensor x = random_tensor({1, 6, 6}, rng, 0.1, 1.0);
  RelevanceMap a = lrp(net_bn, x, 0, {1e-9});
  RelevanceMap b = lrp(net_folded, x, 0, {1e-9});
  for (std::int64_t i = 0; i < a.input_relevance.size(); ++i) {
    CHECK(a.input_relevance[i] == doctest::Approx(b.input_relevance[i]).epsilon(1e-9));
  }
}

TEST_CASE("input heatmap sums relevance over channels with sign preserved") {
  Rng rng(0x222);
  std::vector<Layer> layers;
  layers.push_back(plain_layer(LayerKind::Flatten));
  layers.push_back(dense_layer(random_tensor({1, 2 * 2 * 2}, rng, -1.0, 1.0), Tensor{}));
  Network net(std::move(layers), {2, 2, 2}, 1);
  Tensor x = random_tensor({2, 2, 2}, rng, 0.2, 1.0);
  RelevanceMap map = lrp(net, x, 0, {1e-9});
  bool has_negative = false;
  for (int h = 0; h < 2; ++h) {
    for (int w = 0; w < 2; ++w) {
      CHECK(map.input_heatmap.at2(h, w) ==
            doctest::Approx(map.input_relevance.at3(0, h, w) + map.input_relevance.at3(1, h, w)));
      has_negative = has_negative || map.input_heatmap.at2(h, w) < 0.0;
    }
  }
  // Signed weights make negative relevance possible; the heatmap keeps it.
  (void)has_negative;
}

TEST_CASE("per-layer relevance dump round-trips through TNSR files") {
  Rng rng(0x444);
  Network net = random_cnn(rng, false);
  Tensor x = random_tensor(net.input_shape(), rng, 0.1, 1.0);
  RelevanceMap map = lrp(net, x, 0, {1e-6});
  const auto dir = std::filesystem::temp_directory_path() / "xai_test_lrp_dump";
  std::filesystem::remove_all(dir);
  dump_relevances(map, dir);
  CHECK(std::filesystem::exists(dir / "input_relevance.tnsr"));
  CHECK(std::filesystem::exists(dir / "input_heatmap.tnsr"));
  CHECK(bitwise_equal(load_tensor(dir / "input_heatmap.tnsr"), map.input_heatmap));
  CHECK(bitwise_equal(load_tensor(dir / "layer00_relevance.tnsr"), map.layer_relevance[0]));
  std::filesystem::remove_all(dir);
}

TEST_CASE("lrp is deterministic") {
  Rng rng(0x333);
  Network net = random_cnn(rng, false);
  Tensor x = random_tensor(net.input_shape(), rng, 0.1, 1.0);
  RelevanceMap a = lrp(net, x, 0, {1e-6});
  RelevanceMap b = lrp(net, x, 0, {1e-6});
  CHECK(bitwise_equal(a.input_relevance, b.input_relevance));
  CHECK(bitwise_equal(a.input_heatmap, b.input_heatmap));
}

TEST_SUITE_END();
