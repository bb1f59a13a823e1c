#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "camlab/explain.hpp"
#include "camlab/network.hpp"
#include "support/random_nets.hpp"
#include "support/reference_net.hpp"

using camlab::Network;
using camlab::Tensor;

namespace {

// GAP -> linear head over a K-channel spatial input; grad_cam at layer 0
// then sees the input itself as the activation.
Network gap_linear_net(std::size_t channels, std::size_t h, std::size_t w,
                       std::size_t classes, std::uint64_t seed) {
  Network net;
  net.input_shape = {channels, h, w};
  net.num_classes = classes;
  net.layers.push_back(camlab::LayerSpec::gap());
  auto l = camlab::LayerSpec::linear(channels, classes);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  for (float& v : l.weight.data) v = dist(rng);
  net.layers.push_back(std::move(l));
  net.validate();
  return net;
}

}  // namespace

TEST_CASE("grad_cam on a disconnected class is all zero") {
  Network net;
  net.input_shape = {2, 3, 3};
  net.num_classes = 2;
  net.layers.push_back(camlab::LayerSpec::gap());
  auto l = camlab::LayerSpec::linear(2, 2);
  l.weight(1, 0) = 0.7f;
  l.weight(1, 1) = -0.4f;
  net.layers.push_back(std::move(l));
  net.validate();
  Tensor x = testsupport::random_input_for(net, 1);
  auto [scores, map] = camlab::grad_cam(net, x, 0, 0);
  for (float v : scores.alphas.data) CHECK(v == 0.0f);
  for (float v : map.raw.data) CHECK(v == 0.0f);
  for (float v : map.upsampled.data) CHECK(v == 0.0f);
}

TEST_CASE("grad_cam closed form on a 1-channel GAP-linear head") {
  Network net;
  net.input_shape = {1, 2, 2};
  net.num_classes = 2;
  net.layers.push_back(camlab::LayerSpec::gap());
  auto l = camlab::LayerSpec::linear(1, 2);
  l.weight(0, 0) = 2.0f;
  l.weight(1, 0) = -1.0f;
  net.layers.push_back(std::move(l));
  net.validate();
  Tensor a({1, 2, 2}, {1.0f, -1.0f, 2.0f, 0.0f});
  auto [scores, map] = camlab::grad_cam(net, a, 0, 0);
  CHECK_THAT(scores.alphas(0), Catch::Matchers::WithinAbs(0.5, 1e-7));
  // relu(0.5 * A)
  CHECK_THAT(map.raw(0, 0), Catch::Matchers::WithinAbs(0.5, 1e-7));
  CHECK(map.raw(0, 1) == 0.0f);
  CHECK_THAT(map.raw(1, 0), Catch::Matchers::WithinAbs(1.0, 1e-7));
  CHECK(map.raw(1, 1) == 0.0f);

  // confirm alpha against a finite difference of the class-0 logit
  auto act = refnet::DTensor::from(a);
  double pooled = 0.0;
  for (std::size_t c = 0; c < 4; ++c)
    pooled += refnet::fd_activation_logit(net, act, 0, c, 0, 1e-3);
  CHECK_THAT(scores.alphas(0),
             Catch::Matchers::WithinAbs(pooled / 4.0, 1e-4));
}

TEST_CASE("grad_cam analytic identity W[i,k]/(H*W) over random heads") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    Network net = gap_linear_net(3, 4, 5, 3, seed);
    Tensor x = testsupport::random_input_for(net, seed + 50);
    const std::size_t class_i = seed % 3;
    auto [scores, map] = camlab::grad_cam(net, x, class_i, 0);
    for (std::size_t k = 0; k < 3; ++k)
      CHECK_THAT(scores.alphas(k),
                 Catch::Matchers::WithinAbs(
                     net.layers[1].weight(class_i, k) / 20.0f, 1e-5));
  }
}

TEST_CASE("grad_cam rejects non-spatial layers and bad classes") {
  Network net = gap_linear_net(2, 2, 2, 2, 3);
  Tensor x = testsupport::random_input_for(net, 4);
  CHECK_THROWS_AS(camlab::grad_cam(net, x, 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(camlab::grad_cam(net, x, 5, 0), std::invalid_argument);
}

TEST_CASE("counterfactual_cam negates alphas bit-exactly") {
  for (std::uint64_t seed : {7ull, 8ull, 9ull}) {
    Network net = testsupport::random_small_net(seed);
    if (net.input_shape.size() != 3) continue;
    Tensor x = testsupport::random_input_for(net, seed + 10);
    const std::size_t layer = camlab::default_spatial_layer(net);
    auto cu = camlab::grad_cam(net, x, 0, layer);
    auto cf = camlab::counterfactual_cam(net, x, 0, layer);
    REQUIRE(cu.first.alphas.size() == cf.first.alphas.size());
    for (std::size_t k = 0; k < cu.first.alphas.size(); ++k)
      CHECK(cf.first.alphas(k) == -cu.first.alphas(k));
  }
}

TEST_CASE("counterfactual_cam closed form mirrors the grad_cam example") {
  Network net;
  net.input_shape = {1, 2, 2};
  net.num_classes = 2;
  net.layers.push_back(camlab::LayerSpec::gap());
  auto l = camlab::LayerSpec::linear(1, 2);
  l.weight(0, 0) = 2.0f;
  net.layers.push_back(std::move(l));
  net.validate();
  Tensor a({1, 2, 2}, {1.0f, -1.0f, 2.0f, 0.0f});
  auto [scores, map] = camlab::counterfactual_cam(net, a, 0, 0);
  CHECK_THAT(scores.alphas(0), Catch::Matchers::WithinAbs(-0.5, 1e-7));
  // relu(-0.5 * A) = [[0, 0.5], [0, 0]]
  CHECK(map.raw(0, 0) == 0.0f);
  CHECK_THAT(map.raw(0, 1), Catch::Matchers::WithinAbs(0.5, 1e-7));
  CHECK(map.raw(1, 0) == 0.0f);
  CHECK(map.raw(1, 1) == 0.0f);
}

TEST_CASE("contrast_cam is tiny when logits saturate at the contrast class") {
  Network net = gap_linear_net(2, 3, 3, 2, 11);
  // scale weights so class 1 dominates by ~80 logits on this input
  Tensor x = Tensor::full({2, 3, 3}, 1.0f);
  net.layers[1].weight(0, 0) = -40.0f;
  net.layers[1].weight(0, 1) = -40.0f;
  net.layers[1].weight(1, 0) = 40.0f;
  net.layers[1].weight(1, 1) = 40.0f;
  auto trace = camlab::forward(net, x);
  Tensor sm = camlab::softmax(trace.logits());
  REQUIRE(std::fabs(sm(1) - 1.0f) < 1e-7f);
  auto [scores, map] =
      camlab::contrast_cam(net, trace, camlab::ContrastQuery{1, 1}, 0);
  for (float v : map.raw.data) CHECK(std::fabs(v) < 1e-5f);
}

TEST_CASE("contrast_cam zero on a disconnected layer") {
  Network net;
  net.input_shape = {1, 2, 2};
  net.num_classes = 2;
  net.layers.push_back(camlab::LayerSpec::gap());
  net.layers.push_back(camlab::LayerSpec::linear(1, 2));  // zero weights
  net.layers[1].bias(0) = 0.3f;
  net.validate();
  Tensor x = Tensor::full({1, 2, 2}, 1.0f);
  auto [scores, map] =
      camlab::contrast_cam(net, x, camlab::ContrastQuery{0, 1}, 0);
  for (float v : map.raw.data) CHECK(v == 0.0f);
}

TEST_CASE("contrast_cam matches a finite-difference oracle") {
  Network net = testsupport::spatial_small_net(1);
  REQUIRE(net.input_shape.size() == 3);
  Tensor x = testsupport::random_input_for(net, 2);
  const std::size_t layer = camlab::default_spatial_layer(net);
  auto trace = camlab::forward(net, x);
  const std::size_t p = camlab::predict(trace.logits());
  const std::size_t q = camlab::default_contrast_class(trace.logits(), p);
  auto [scores, map] =
      camlab::contrast_cam(net, trace, camlab::ContrastQuery{p, q}, layer);

  const Tensor& act_f = trace.activation(layer);
  auto act = refnet::DTensor::from(act_f);
  const std::size_t K = act_f.shape[0];
  const std::size_t plane = act_f.shape[1] * act_f.shape[2];
  std::vector<double> fd_alpha(K, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t i = 0; i < plane; ++i)
      fd_alpha[k] += refnet::fd_activation_loss(net, act, layer,
                                                k * plane + i, q, 1e-3);
    fd_alpha[k] /= static_cast<double>(plane);
  }
  for (std::size_t k = 0; k < K; ++k) {
    const double tol = std::max(1e-3 * std::fabs(fd_alpha[k]), 1e-5);
    CHECK_THAT(scores.alphas(k), Catch::Matchers::WithinAbs(fd_alpha[k], tol));
  }
  // rebuild the raw map from the FD alphas and compare
  for (std::size_t y = 0; y < act_f.shape[1]; ++y)
    for (std::size_t xx = 0; xx < act_f.shape[2]; ++xx) {
      double m = 0.0;
      for (std::size_t k = 0; k < K; ++k)
        m += fd_alpha[k] * act_f(k, y, xx);
      m = std::max(m, 0.0);
      const double tol = std::max(1e-3 * std::fabs(m), 1e-4);
      CHECK_THAT(map.raw(y, xx), Catch::Matchers::WithinAbs(m, tol));
    }
}

TEST_CASE("complete explanation satisfies the sum identity bit-exactly") {
  Network net = testsupport::spatial_small_net(1);
  Tensor x = testsupport::random_input_for(net, 3);
  const std::size_t layer = camlab::default_spatial_layer(net);
  auto ce = camlab::complete_explanation(net, x, layer, 1);
  REQUIRE(ce.complete_raw.size() == ce.correlation.raw.size());
  for (std::size_t i = 0; i < ce.complete_raw.size(); ++i) {
    const float expect = ce.correlation.raw.data[i] +
                         ce.contrastive.raw.data[i] +
                         ce.counterfactual.raw.data[i];
    CHECK(ce.complete_raw.data[i] == expect);
  }
  for (float v : ce.complete_raw.data) CHECK(v >= 0.0f);
}

TEST_CASE("complete explanation of a disconnected layer is zero") {
  Network net;
  net.input_shape = {1, 2, 2};
  net.num_classes = 2;
  net.layers.push_back(camlab::LayerSpec::gap());
  net.layers.push_back(camlab::LayerSpec::linear(1, 2));  // zero weights
  net.validate();
  Tensor x = Tensor::full({1, 2, 2}, 0.5f);
  auto ce = camlab::complete_explanation(net, x, 0, 1);
  for (float v : ce.complete_raw.data) CHECK(v == 0.0f);
  for (float v : ce.complete_upsampled.data) CHECK(v == 0.0f);
}

TEST_CASE("alpha seed linearity across classes") {
  // pre-ReLU alphas add across seeds; the ReLU'd maps need not
  Network net = testsupport::spatial_small_net(1);
  Tensor x = testsupport::random_input_for(net, 4);
  const std::size_t layer = camlab::default_spatial_layer(net);
  auto trace = camlab::forward(net, x);
  Tensor seed_i = Tensor::zeros({net.num_classes});
  Tensor seed_j = Tensor::zeros({net.num_classes});
  seed_i(0) = 1.0f;
  seed_j(1) = 1.0f;
  Tensor seed_sum = seed_i;
  seed_sum(1) = 1.0f;
  Tensor gi = camlab::global_average_pool(
      camlab::backward_to_activation(trace, net, seed_i, layer));
  Tensor gj = camlab::global_average_pool(
      camlab::backward_to_activation(trace, net, seed_j, layer));
  Tensor gs = camlab::global_average_pool(
      camlab::backward_to_activation(trace, net, seed_sum, layer));
  for (std::size_t k = 0; k < gs.size(); ++k) {
    const double expect = static_cast<double>(gi(k)) + gj(k);
    const double tol = std::max(1e-5 * std::fabs(expect), 1e-6);
    CHECK_THAT(gs(k), Catch::Matchers::WithinAbs(expect, tol));
  }
}

TEST_CASE("scaling head weights moves alpha but not the raw argmax") {
  Network net = gap_linear_net(3, 4, 4, 2, 21);
  Tensor x = testsupport::random_input_for(net, 22);
  auto base = camlab::grad_cam(net, x, 0, 0);
  Network scaled = net;
  for (float& v : scaled.layers[1].weight.data) v *= 3.0f;
  auto big = camlab::grad_cam(scaled, x, 0, 0);
  for (std::size_t k = 0; k < base.first.alphas.size(); ++k)
    CHECK_THAT(big.first.alphas(k),
               Catch::Matchers::WithinRel(3.0f * base.first.alphas(k), 1e-4f));
  std::size_t am_base = 0, am_big = 0;
  for (std::size_t i = 0; i < base.second.raw.size(); ++i) {
    if (base.second.raw.data[i] > base.second.raw.data[am_base]) am_base = i;
    if (big.second.raw.data[i] > big.second.raw.data[am_big]) am_big = i;
  }
  CHECK(am_base == am_big);
}

TEST_CASE("postprocess_map normalizes a constant map to 1") {
  Tensor raw = Tensor::full({2, 2}, 3.0f);
  Tensor up = camlab::postprocess_map(raw, 5, 5);
  for (float v : up.data) CHECK(v == 1.0f);
}

TEST_CASE("postprocess_map keeps all-zero maps zero without NaN") {
  Tensor up = camlab::postprocess_map(Tensor::zeros({3, 3}), 6, 6);
  for (float v : up.data) CHECK(v == 0.0f);
}

TEST_CASE("postprocess_map bilinear values match a hand-derived table") {
  Tensor raw({2, 2}, {0.0f, 1.0f, 1.0f, 0.0f});
  Tensor up = camlab::postprocess_map(raw, 4, 4);
  // f(fy,fx) = fx + fy - 2*fx*fy on the corner values [[0,1],[1,0]],
  // sampled at {0, 1/3, 2/3, 1}; max is 1 so normalization is a no-op
  const double grid[4] = {0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0};
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) {
      const double fy = grid[y], fx = grid[x];
      CHECK_THAT(up(y, x),
                 Catch::Matchers::WithinAbs(fx + fy - 2.0 * fx * fy, 1e-6));
    }
}

TEST_CASE("postprocess_map rejects shrinking and negative input") {
  CHECK_THROWS_AS(camlab::postprocess_map(Tensor::zeros({4, 4}), 2, 2),
                  std::invalid_argument);
  CHECK_THROWS_AS(camlab::postprocess_map(Tensor({1, 1}, {-1.0f}), 2, 2),
                  std::invalid_argument);
}

TEST_CASE("default contrast class is the second-highest logit") {
  Tensor logits({4}, {0.1f, 3.0f, 2.5f, -1.0f});
  CHECK(camlab::default_contrast_class(logits, 1) == 2);
}

TEST_CASE("paradigm question strings") {
  auto qs = camlab::paradigm_questions("square", "disk");
  REQUIRE(qs.size() == 3);
  CHECK(qs[0] == "Why square?");
  CHECK(qs[1] == "What if not square?");
  CHECK(qs[2] == "Why square, rather than disk?");
}
