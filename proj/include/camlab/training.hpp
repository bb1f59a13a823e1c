#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "camlab/network.hpp"
#include "camlab/tensor.hpp"

namespace camlab {

struct LabeledSample {
  Tensor image;  // [C,H,W]
  std::size_t label = 0;
  std::optional<Tensor> mask;  // [H,W], {0,1}-valued
};

struct TrainConfig {
  float learning_rate = 0.05f;
  std::size_t epochs = 1;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  bool shuffle = true;

  void validate() const {
    if (!(learning_rate > 0.0f))
      throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
    if (batch_size == 0)
      throw std::invalid_argument("TrainConfig: batch_size must be > 0");
  }
};

struct TrainHistory {
  std::vector<double> loss;      // mean batch loss per epoch
  std::vector<double> accuracy;  // on-the-fly training accuracy per epoch
};

/// theta' = theta - lr * grad, elementwise. lr = 1 applies the raw update.
inline Tensor sgd_step(const Tensor& params, const Tensor& grads, float lr) {
  if (!params.same_shape(grads))
    throw std::invalid_argument("sgd_step: shape mismatch");
  if (!(lr > 0.0f)) throw std::invalid_argument("sgd_step: lr must be > 0");
  require_finite(grads, "sgd_step gradient");
  Tensor out = params;
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data[i] -= lr * grads.data[i];
  return out;
}

inline void init_parameters(Network& net, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& l : net.layers) {
    if (!l.has_params()) continue;
    std::size_t fan_in, fan_out;
    if (l.kind == LayerKind::conv2d) {
      fan_in = l.in_channels * l.kernel * l.kernel;
      fan_out = l.out_channels * l.kernel * l.kernel;
    } else {
      fan_in = l.in_width;
      fan_out = l.out_width;
    }
    const float bound =
        std::sqrt(6.0f / static_cast<float>(fan_in + fan_out));
    std::uniform_real_distribution<float> dist(-bound, bound);
    for (float& v : l.weight.data) v = dist(rng);
    for (float& v : l.bias.data) v = 0.0f;
  }
  net.seed = seed;
}

/// 2 conv blocks, GAP head. The desk-scale classifier used by the CLI.
inline Network make_reference_cnn(std::size_t image_size,
                                  std::size_t num_classes,
                                  std::uint64_t seed) {
  Network net;
  net.input_shape = {1, image_size, image_size};
  net.num_classes = num_classes;
  net.layers.push_back(LayerSpec::conv(1, 8, 3));
  net.layers.push_back(LayerSpec::relu());
  net.layers.push_back(LayerSpec::maxpool());
  net.layers.push_back(LayerSpec::conv(8, 16, 3));
  net.layers.push_back(LayerSpec::relu());
  net.layers.push_back(LayerSpec::maxpool());
  net.layers.push_back(LayerSpec::gap());
  net.layers.push_back(LayerSpec::linear(16, num_classes));
  net.validate();
  init_parameters(net, seed);
  return net;
}

struct TrainResult {
  Network net;
  TrainHistory history;
};

inline TrainResult train(Network net, const std::vector<LabeledSample>& data,
                         const TrainConfig& config) {
  config.validate();
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  for (const auto& s : data)
    if (s.label >= net.num_classes)
      throw std::invalid_argument("train: label out of range");
  net.learning_rate_used = config.learning_rate;

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  TrainHistory history;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    if (config.shuffle) std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0, correct = 0;
    for (std::size_t start = 0; start < order.size();
         start += config.batch_size) {
      const std::size_t end =
          std::min(order.size(), start + config.batch_size);
      const std::size_t bsz = end - start;

      // averaged mini-batch gradients, accumulated at 64-bit
      std::vector<std::vector<double>> acc_w(net.layers.size());
      std::vector<std::vector<double>> acc_b(net.layers.size());
      for (std::size_t li = 0; li < net.layers.size(); ++li)
        if (net.layers[li].has_params()) {
          acc_w[li].assign(net.layers[li].weight.size(), 0.0);
          acc_b[li].assign(net.layers[li].bias.size(), 0.0);
        }

      double batch_loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        const auto& s = data[order[i]];
        ForwardTrace trace = forward(net, s.image);
        batch_loss += cross_entropy_loss(trace.logits(), s.label);
        if (predict(trace.logits()) == s.label) ++correct;
        GradientSet g = backward_params(trace, net, s.label);
        for (std::size_t li = 0; li < net.layers.size(); ++li)
          if (net.layers[li].has_params()) {
            for (std::size_t j = 0; j < g.weight[li].size(); ++j)
              acc_w[li][j] += g.weight[li].data[j];
            for (std::size_t j = 0; j < g.bias[li].size(); ++j)
              acc_b[li][j] += g.bias[li].data[j];
          }
      }
      batch_loss /= static_cast<double>(bsz);
      if (!std::isfinite(batch_loss))
        throw std::runtime_error("train: divergence (non-finite loss) at epoch " +
                                 std::to_string(epoch));
      loss_sum += batch_loss;
      ++batches;

      const double scale = config.learning_rate / static_cast<double>(bsz);
      for (std::size_t li = 0; li < net.layers.size(); ++li)
        if (net.layers[li].has_params()) {
          auto& l = net.layers[li];
          for (std::size_t j = 0; j < l.weight.size(); ++j)
            l.weight.data[j] =
                static_cast<float>(l.weight.data[j] - scale * acc_w[li][j]);
          for (std::size_t j = 0; j < l.bias.size(); ++j)
            l.bias.data[j] =
                static_cast<float>(l.bias.data[j] - scale * acc_b[li][j]);
        }
    }
    history.loss.push_back(loss_sum / static_cast<double>(batches));
    history.accuracy.push_back(static_cast<double>(correct) /
                               static_cast<double>(data.size()));
  }
  net.epochs_trained += static_cast<std::uint32_t>(config.epochs);
  return TrainResult{std::move(net), std::move(history)};
}

inline const std::array<std::string, 3>& shape_class_names() {
  static const std::array<std::string, 3> names = {"square", "disk", "cross"};
  return names;
}

/// 3 classes (filled square, filled disk, plus-cross) on noisy background,
/// with per-sample ground-truth masks. Samples are round-robin over classes,
/// so the class histogram is exactly uniform.
inline std::vector<LabeledSample> generate_shapes_dataset(
    std::uint64_t seed, std::size_t n_per_class, std::size_t image_size) {
  if (image_size < 16)
    throw std::invalid_argument("generate_shapes_dataset: image_size >= 16");
  if (n_per_class < 1)
    throw std::invalid_argument("generate_shapes_dataset: n_per_class >= 1");
  const std::size_t S = image_size;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> bg(0.0f, 0.25f);
  std::uniform_real_distribution<float> fg(0.75f, 1.0f);
  auto randint = [&](std::size_t lo, std::size_t hi) {
    std::uniform_int_distribution<std::size_t> d(lo, hi);
    return d(rng);
  };

  std::vector<LabeledSample> out;
  out.reserve(3 * n_per_class);
  for (std::size_t n = 0; n < n_per_class; ++n)
    for (std::size_t cls = 0; cls < 3; ++cls) {
      LabeledSample s;
      s.label = cls;
      s.image = Tensor::zeros({1, S, S});
      s.mask = Tensor::zeros({S, S});
      for (float& v : s.image.data) v = bg(rng);

      auto put = [&](std::size_t y, std::size_t x) {
        s.image(0, y, x) = fg(rng);
        (*s.mask)(y, x) = 1.0f;
      };

      if (cls == 0) {  // filled square
        const std::size_t side =
            randint((22 * S + 99) / 100, (55 * S) / 100);
        const std::size_t y0 = randint(0, S - side);
        const std::size_t x0 = randint(0, S - side);
        for (std::size_t y = y0; y < y0 + side; ++y)
          for (std::size_t x = x0; x < x0 + side; ++x) put(y, x);
      } else if (cls == 1) {  // filled disk
        const std::size_t r = randint((14 * S + 99) / 100, (26 * S) / 100);
        const std::size_t cy = randint(r, S - 1 - r);
        const std::size_t cx = randint(r, S - 1 - r);
        for (std::size_t y = cy - r; y <= cy + r; ++y)
          for (std::size_t x = cx - r; x <= cx + r; ++x) {
            const long dy = static_cast<long>(y) - static_cast<long>(cy);
            const long dx = static_cast<long>(x) - static_cast<long>(cx);
            if (dy * dy + dx * dx <= static_cast<long>(r * r)) put(y, x);
          }
      } else {  // plus-cross
        const std::size_t t = std::max<std::size_t>(2, (9 * S + 50) / 100);
        const std::size_t len = randint((40 * S + 99) / 100, (60 * S) / 100);
        const std::size_t cy = randint(len / 2, S - 1 - len / 2);
        const std::size_t cx = randint(len / 2, S - 1 - len / 2);
        const std::size_t half_t = t / 2;
        for (std::size_t y = cy - half_t; y <= cy - half_t + t - 1; ++y)
          for (std::size_t x = cx - len / 2; x <= cx - len / 2 + len - 1; ++x)
            put(y, x);
        for (std::size_t y = cy - len / 2; y <= cy - len / 2 + len - 1; ++y)
          for (std::size_t x = cx - half_t; x <= cx - half_t + t - 1; ++x)
            if ((*s.mask)(y, x) == 0.0f) put(y, x);
      }
      out.push_back(std::move(s));
    }
  return out;
}

}  // namespace camlab
