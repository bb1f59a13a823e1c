#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "camlab/network.hpp"
#include "camlab/tensor.hpp"

namespace camlab {

enum class Paradigm { correlation, counterfactual, contrastive };

inline const char* paradigm_name(Paradigm p) {
  switch (p) {
    case Paradigm::correlation:
      return "correlation";
    case Paradigm::counterfactual:
      return "counterfactual";
    case Paradigm::contrastive:
      return "contrastive";
  }
  return "?";
}

/// Per-channel importance weights for one paradigm at one layer.
struct ImportanceScores {
  Tensor alphas;  // [K]
  Paradigm paradigm = Paradigm::correlation;
  std::size_t layer = 0;
  std::size_t predicted = 0;
  std::optional<std::size_t> contrast;
};

/// raw is the post-ReLU map at layer resolution; upsampled is the
/// input-resolution map normalized into [0,1].
struct ExplanationMap {
  Tensor raw;        // [h,w], >= 0
  Tensor upsampled;  // [H,W], in [0,1]
  Paradigm paradigm = Paradigm::correlation;
  std::size_t layer = 0;
  std::size_t predicted = 0;
  std::optional<std::size_t> contrast;
};

/// "Why P, rather than Q?"
struct ContrastQuery {
  std::size_t predicted = 0;
  std::size_t contrast = 0;
};

/// The three paradigm maps and their elementwise sum.
struct CompleteExplanation {
  ExplanationMap correlation;
  ExplanationMap counterfactual;
  ExplanationMap contrastive;
  Tensor complete_raw;        // sum of the three raw maps
  Tensor complete_upsampled;  // [H,W] in [0,1]
};

/// Bilinear upsample to [target_h, target_w], then divide by the global max.
/// All-zero inputs stay all-zero.
inline Tensor postprocess_map(const Tensor& raw, std::size_t target_h,
                              std::size_t target_w) {
  if (raw.rank() != 2) throw std::invalid_argument("postprocess_map: rank 2");
  for (float v : raw.data)
    if (v < 0.0f)
      throw std::invalid_argument("postprocess_map: negative raw value");
  const std::size_t h = raw.shape[0], w = raw.shape[1];
  if (target_h < h || target_w < w)
    throw std::invalid_argument("postprocess_map: target smaller than raw");
  Tensor up = Tensor::zeros({target_h, target_w});
  for (std::size_t y = 0; y < target_h; ++y) {
    const double sy = (h == 1 || target_h == 1)
                          ? 0.0
                          : static_cast<double>(y) *
                                static_cast<double>(h - 1) /
                                static_cast<double>(target_h - 1);
    const std::size_t y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < target_w; ++x) {
      const double sx = (w == 1 || target_w == 1)
                            ? 0.0
                            : static_cast<double>(x) *
                                  static_cast<double>(w - 1) /
                                  static_cast<double>(target_w - 1);
      const std::size_t x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - static_cast<double>(x0);
      const double v = (1.0 - fy) * ((1.0 - fx) * raw(y0, x0) + fx * raw(y0, x1)) +
                       fy * ((1.0 - fx) * raw(y1, x0) + fx * raw(y1, x1));
      up(y, x) = static_cast<float>(v);
    }
  }
  float mx = 0.0f;
  for (float v : up.data) mx = std::max(mx, v);
  if (mx > 0.0f)
    for (float& v : up.data) v /= mx;
  return up;
}

/// Index of the last spatial (rank-3) activation, input included.
inline std::size_t default_spatial_layer(const Network& net) {
  std::vector<std::size_t> shape = net.input_shape;
  std::size_t last = shape.size() == 3 ? 0 : static_cast<std::size_t>(-1);
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    shape = layer_output_shape(net.layers[li], shape);
    if (shape.size() == 3) last = li + 1;
  }
  if (last == static_cast<std::size_t>(-1))
    throw std::invalid_argument("network has no spatial activation");
  return last;
}

/// Most confusable class: the highest logit other than the predicted one.
inline std::size_t default_contrast_class(const Tensor& logits,
                                          std::size_t predicted) {
  std::size_t best = predicted == 0 ? 1 : 0;
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (i != predicted && logits(i) > logits(best)) best = i;
  return best;
}

namespace detail {

inline std::pair<ImportanceScores, ExplanationMap> cam_from_seed(
    const Network& net, const ForwardTrace& trace, const Tensor& seed,
    std::size_t layer, bool negate, Paradigm paradigm, std::size_t predicted,
    std::optional<std::size_t> contrast) {
  const Tensor& act = trace.activation(layer);
  if (act.rank() != 3)
    throw std::invalid_argument("cam: layer activation is not spatial");
  Tensor grads = backward_to_activation(trace, net, seed, layer);
  Tensor alphas = global_average_pool(grads);
  if (negate)
    for (float& v : alphas.data) v = -v;

  const std::size_t K = act.shape[0], h = act.shape[1], w = act.shape[2];
  Tensor weighted = Tensor::zeros({h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < K; ++k)
        acc += static_cast<double>(alphas(k)) * static_cast<double>(act(k, y, x));
      weighted(y, x) = static_cast<float>(acc);
    }
  ImportanceScores scores{alphas, paradigm, layer, predicted, contrast};
  ExplanationMap map;
  map.raw = relu(weighted);
  const std::size_t H = net.input_shape.size() == 3 ? net.input_shape[1]
                                                    : net.input_shape[0];
  const std::size_t W = net.input_shape.size() == 3 ? net.input_shape[2] : 1;
  map.upsampled = postprocess_map(map.raw, H, W);
  map.paradigm = paradigm;
  map.layer = layer;
  map.predicted = predicted;
  map.contrast = contrast;
  return {std::move(scores), std::move(map)};
}

inline Tensor onehot(std::size_t n, std::size_t i) {
  Tensor t = Tensor::zeros({n});
  t(i) = 1.0f;
  return t;
}

}  // namespace detail

/// "Why P?" — pooled gradients of logit class_i at layer_l.
inline std::pair<ImportanceScores, ExplanationMap> grad_cam(
    const Network& net, const ForwardTrace& trace, std::size_t class_i,
    std::size_t layer_l) {
  if (class_i >= net.num_classes)
    throw std::invalid_argument("grad_cam: class out of range");
  return detail::cam_from_seed(net, trace,
                               detail::onehot(net.num_classes, class_i),
                               layer_l, false, Paradigm::correlation, class_i,
                               std::nullopt);
}

inline std::pair<ImportanceScores, ExplanationMap> grad_cam(
    const Network& net, const Tensor& x, std::size_t class_i,
    std::size_t layer_l) {
  return grad_cam(net, forward(net, x), class_i, layer_l);
}

/// "What if not P?" — same backward pass as grad_cam with negated pooling.
inline std::pair<ImportanceScores, ExplanationMap> counterfactual_cam(
    const Network& net, const ForwardTrace& trace, std::size_t class_i,
    std::size_t layer_l) {
  if (class_i >= net.num_classes)
    throw std::invalid_argument("counterfactual_cam: class out of range");
  return detail::cam_from_seed(net, trace,
                               detail::onehot(net.num_classes, class_i),
                               layer_l, true, Paradigm::counterfactual,
                               class_i, std::nullopt);
}

inline std::pair<ImportanceScores, ExplanationMap> counterfactual_cam(
    const Network& net, const Tensor& x, std::size_t class_i,
    std::size_t layer_l) {
  return counterfactual_cam(net, forward(net, x), class_i, layer_l);
}

/// "Why P, rather than Q?" — backpropagates the cross-entropy toward Q, so
/// the seed is softmax(logits) - onehot(Q).
inline std::pair<ImportanceScores, ExplanationMap> contrast_cam(
    const Network& net, const ForwardTrace& trace, const ContrastQuery& query,
    std::size_t layer_l) {
  if (query.predicted >= net.num_classes || query.contrast >= net.num_classes)
    throw std::invalid_argument("contrast_cam: class out of range");
  Tensor seed = softmax(trace.logits());
  seed(query.contrast) -= 1.0f;
  return detail::cam_from_seed(net, trace, seed, layer_l, false,
                               Paradigm::contrastive, query.predicted,
                               query.contrast);
}

inline std::pair<ImportanceScores, ExplanationMap> contrast_cam(
    const Network& net, const Tensor& x, const ContrastQuery& query,
    std::size_t layer_l) {
  return contrast_cam(net, forward(net, x), query, layer_l);
}

/// All three paradigms on one shared forward trace; complete_raw is their
/// elementwise sum. P is the network's prediction.
inline CompleteExplanation complete_explanation(const Network& net,
                                                const Tensor& x,
                                                std::size_t layer_l,
                                                std::size_t contrast_q) {
  if (contrast_q >= net.num_classes)
    throw std::invalid_argument("complete_explanation: contrast out of range");
  ForwardTrace trace = forward(net, x);
  const std::size_t p = predict(trace.logits());
  CompleteExplanation ce;
  ce.correlation = grad_cam(net, trace, p, layer_l).second;
  ce.counterfactual = counterfactual_cam(net, trace, p, layer_l).second;
  ce.contrastive =
      contrast_cam(net, trace, ContrastQuery{p, contrast_q}, layer_l).second;
  ce.complete_raw = ce.correlation.raw;
  for (std::size_t i = 0; i < ce.complete_raw.size(); ++i)
    ce.complete_raw.data[i] = ce.correlation.raw.data[i] +
                              ce.contrastive.raw.data[i] +
                              ce.counterfactual.raw.data[i];
  const std::size_t H = net.input_shape.size() == 3 ? net.input_shape[1]
                                                    : net.input_shape[0];
  const std::size_t W = net.input_shape.size() == 3 ? net.input_shape[2] : 1;
  ce.complete_upsampled = postprocess_map(ce.complete_raw, H, W);
  return ce;
}

/// The three question strings with resolved class names.
inline std::vector<std::string> paradigm_questions(const std::string& p,
                                                   const std::string& q) {
  return {"Why " + p + "?", "What if not " + p + "?",
          "Why " + p + ", rather than " + q + "?"};
}

}  // namespace camlab
