#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "camlab/tensor.hpp"

namespace camlab {

enum class LayerKind : std::uint8_t {
  conv2d = 0,
  relu = 1,
  maxpool2x2 = 2,
  global_average_pool = 3,
  linear = 4,
};

/// One layer of the fixed vocabulary. conv2d uses stride 1, square odd
/// kernels, and zero 'same' padding, so spatial extents are preserved.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;

  // conv2d
  std::size_t in_channels = 0, out_channels = 0, kernel = 0;
  // linear
  std::size_t in_width = 0, out_width = 0;

  Tensor weight;  // conv: [out,in,k,k]; linear: [out,in]
  Tensor bias;    // [out]

  bool has_params() const {
    return kind == LayerKind::conv2d || kind == LayerKind::linear;
  }

  static LayerSpec conv(std::size_t in_ch, std::size_t out_ch, std::size_t k) {
    if (k % 2 == 0 || k == 0)
      throw std::invalid_argument("conv2d: kernel must be odd");
    LayerSpec l;
    l.kind = LayerKind::conv2d;
    l.in_channels = in_ch;
    l.out_channels = out_ch;
    l.kernel = k;
    l.weight = Tensor::zeros({out_ch, in_ch, k, k});
    l.bias = Tensor::zeros({out_ch});
    return l;
  }

  static LayerSpec relu() {
    LayerSpec l;
    l.kind = LayerKind::relu;
    return l;
  }

  static LayerSpec maxpool() {
    LayerSpec l;
    l.kind = LayerKind::maxpool2x2;
    return l;
  }

  static LayerSpec gap() {
    LayerSpec l;
    l.kind = LayerKind::global_average_pool;
    return l;
  }

  static LayerSpec linear(std::size_t in_w, std::size_t out_w) {
    LayerSpec l;
    l.kind = LayerKind::linear;
    l.in_width = in_w;
    l.out_width = out_w;
    l.weight = Tensor::zeros({out_w, in_w});
    l.bias = Tensor::zeros({out_w});
    return l;
  }
};

inline std::vector<std::size_t> layer_output_shape(
    const LayerSpec& l, const std::vector<std::size_t>& in) {
  switch (l.kind) {
    case LayerKind::conv2d:
      if (in.size() != 3 || in[0] != l.in_channels)
        throw std::invalid_argument("conv2d: input channel mismatch");
      return {l.out_channels, in[1], in[2]};
    case LayerKind::relu:
      return in;
    case LayerKind::maxpool2x2:
      if (in.size() != 3 || in[1] % 2 != 0 || in[2] % 2 != 0)
        throw std::invalid_argument("maxpool2x2: needs rank-3 even extents");
      return {in[0], in[1] / 2, in[2] / 2};
    case LayerKind::global_average_pool:
      if (in.size() != 3)
        throw std::invalid_argument("global_average_pool: needs rank-3 input");
      return {in[0]};
    case LayerKind::linear:
      if (in.size() != 1 || in[0] != l.in_width)
        throw std::invalid_argument("linear: input width mismatch");
      return {l.out_width};
  }
  throw std::logic_error("layer_output_shape: unknown kind");
}

/// Ordered layer stack with its parameters plus training metadata.
struct Network {
  std::vector<LayerSpec> layers;
  std::size_t num_classes = 0;
  std::vector<std::size_t> input_shape;  // [C,H,W] or [N]

  // metadata
  std::uint64_t seed = 0;
  float learning_rate_used = 0.0f;
  std::uint32_t epochs_trained = 0;

  void validate() const {
    if (layers.empty()) throw std::invalid_argument("Network: no layers");
    if (num_classes < 2) throw std::invalid_argument("Network: need N >= 2");
    std::vector<std::size_t> shape = input_shape;
    std::size_t gap_count = 0;
    for (const auto& l : layers) {
      if (l.kind == LayerKind::global_average_pool) ++gap_count;
      shape = layer_output_shape(l, shape);
    }
    if (shape.size() != 1 || shape[0] != num_classes)
      throw std::invalid_argument("Network: final layer must produce [N]");
    if (input_shape.size() == 3 && gap_count != 1)
      throw std::invalid_argument(
          "Network: exactly one spatial-to-vector transition required");
  }
};

/// Input plus every per-layer output activation. activation(0) is the input,
/// activation(l) for l in [1,L] is the output of layer l-1, and the logits
/// are the last activation.
struct ForwardTrace {
  Tensor input;
  std::vector<Tensor> activations;

  const Tensor& logits() const { return activations.back(); }
  const Tensor& activation(std::size_t l) const {
    if (l == 0) return input;
    if (l > activations.size())
      throw std::out_of_range("ForwardTrace: activation index out of range");
    return activations[l - 1];
  }
  std::size_t num_activations() const { return activations.size() + 1; }
};

namespace detail {

inline Tensor conv2d_forward(const LayerSpec& l, const Tensor& in) {
  const std::size_t H = in.shape[1], W = in.shape[2];
  const std::size_t k = l.kernel;
  const long pad = static_cast<long>(k / 2);
  Tensor out = Tensor::zeros({l.out_channels, H, W});
  for (std::size_t oc = 0; oc < l.out_channels; ++oc)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        double acc = l.bias(oc);
        for (std::size_t ic = 0; ic < l.in_channels; ++ic)
          for (std::size_t ky = 0; ky < k; ++ky) {
            const long iy = static_cast<long>(y) + static_cast<long>(ky) - pad;
            if (iy < 0 || iy >= static_cast<long>(H)) continue;
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long ix =
                  static_cast<long>(x) + static_cast<long>(kx) - pad;
              if (ix < 0 || ix >= static_cast<long>(W)) continue;
              acc += static_cast<double>(in(ic, static_cast<std::size_t>(iy),
                                            static_cast<std::size_t>(ix))) *
                     static_cast<double>(
                         l.weight.data[((oc * l.in_channels + ic) * k + ky) * k +
                                       kx]);
            }
          }
        out(oc, y, x) = static_cast<float>(acc);
      }
  return out;
}

inline Tensor maxpool_forward(const Tensor& in) {
  const std::size_t C = in.shape[0], H = in.shape[1], W = in.shape[2];
  Tensor out = Tensor::zeros({C, H / 2, W / 2});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H / 2; ++y)
      for (std::size_t x = 0; x < W / 2; ++x) {
        float m = in(c, 2 * y, 2 * x);
        m = std::max(m, in(c, 2 * y, 2 * x + 1));
        m = std::max(m, in(c, 2 * y + 1, 2 * x));
        m = std::max(m, in(c, 2 * y + 1, 2 * x + 1));
        out(c, y, x) = m;
      }
  return out;
}

inline Tensor linear_forward(const LayerSpec& l, const Tensor& in) {
  Tensor out = Tensor::zeros({l.out_width});
  for (std::size_t o = 0; o < l.out_width; ++o) {
    double acc = l.bias(o);
    for (std::size_t i = 0; i < l.in_width; ++i)
      acc += static_cast<double>(l.weight(o, i)) * static_cast<double>(in(i));
    out(o) = static_cast<float>(acc);
  }
  return out;
}

inline Tensor apply_layer(const LayerSpec& l, const Tensor& in) {
  switch (l.kind) {
    case LayerKind::conv2d:
      return conv2d_forward(l, in);
    case LayerKind::relu:
      return relu(in);
    case LayerKind::maxpool2x2:
      return maxpool_forward(in);
    case LayerKind::global_average_pool:
      return global_average_pool(in);
    case LayerKind::linear:
      return linear_forward(l, in);
  }
  throw std::logic_error("apply_layer: unknown kind");
}

// Backward through one layer. grad_w/grad_b, when non-null, receive the
// parameter gradients; the return value is the gradient w.r.t. the input.
inline Tensor layer_backward(const LayerSpec& l, const Tensor& in,
                             const Tensor& grad_out, Tensor* grad_w,
                             Tensor* grad_b) {
  switch (l.kind) {
    case LayerKind::relu: {
      Tensor g = Tensor::zeros(in.shape);
      for (std::size_t i = 0; i < in.size(); ++i)
        g.data[i] = in.data[i] > 0.0f ? grad_out.data[i] : 0.0f;
      return g;
    }
    case LayerKind::maxpool2x2: {
      const std::size_t C = in.shape[0], H = in.shape[1], W = in.shape[2];
      Tensor g = Tensor::zeros(in.shape);
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H / 2; ++y)
          for (std::size_t x = 0; x < W / 2; ++x) {
            // ties route to the first maximal element in raster order
            std::size_t by = 2 * y, bx = 2 * x;
            float m = in(c, by, bx);
            for (std::size_t dy = 0; dy < 2; ++dy)
              for (std::size_t dx = 0; dx < 2; ++dx)
                if (in(c, 2 * y + dy, 2 * x + dx) > m) {
                  m = in(c, 2 * y + dy, 2 * x + dx);
                  by = 2 * y + dy;
                  bx = 2 * x + dx;
                }
            g(c, by, bx) += grad_out(c, y, x);
          }
      return g;
    }
    case LayerKind::global_average_pool: {
      const std::size_t C = in.shape[0], H = in.shape[1], W = in.shape[2];
      Tensor g = Tensor::zeros(in.shape);
      const float inv = 1.0f / static_cast<float>(H * W);
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t x = 0; x < W; ++x) g(c, y, x) = grad_out(c) * inv;
      return g;
    }
    case LayerKind::linear: {
      Tensor g = Tensor::zeros(in.shape);
      for (std::size_t i = 0; i < l.in_width; ++i) {
        double acc = 0.0;
        for (std::size_t o = 0; o < l.out_width; ++o)
          acc += static_cast<double>(l.weight(o, i)) *
                 static_cast<double>(grad_out(o));
        g(i) = static_cast<float>(acc);
      }
      if (grad_w) {
        *grad_w = Tensor::zeros(l.weight.shape);
        for (std::size_t o = 0; o < l.out_width; ++o)
          for (std::size_t i = 0; i < l.in_width; ++i)
            (*grad_w)(o, i) = grad_out(o) * in(i);
      }
      if (grad_b) *grad_b = grad_out;
      return g;
    }
    case LayerKind::conv2d: {
      const std::size_t H = in.shape[1], W = in.shape[2];
      const std::size_t k = l.kernel;
      const long pad = static_cast<long>(k / 2);
      std::vector<double> gin(in.size(), 0.0);
      std::vector<double> gw(l.weight.size(), 0.0);
      std::vector<double> gb(l.bias.size(), 0.0);
      for (std::size_t oc = 0; oc < l.out_channels; ++oc)
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t x = 0; x < W; ++x) {
            const double go = grad_out(oc, y, x);
            if (go == 0.0) continue;
            gb[oc] += go;
            for (std::size_t ic = 0; ic < l.in_channels; ++ic)
              for (std::size_t ky = 0; ky < k; ++ky) {
                const long iy =
                    static_cast<long>(y) + static_cast<long>(ky) - pad;
                if (iy < 0 || iy >= static_cast<long>(H)) continue;
                for (std::size_t kx = 0; kx < k; ++kx) {
                  const long ix =
                      static_cast<long>(x) + static_cast<long>(kx) - pad;
                  if (ix < 0 || ix >= static_cast<long>(W)) continue;
                  const std::size_t in_idx =
                      (ic * H + static_cast<std::size_t>(iy)) * W +
                      static_cast<std::size_t>(ix);
                  const std::size_t w_idx =
                      ((oc * l.in_channels + ic) * k + ky) * k + kx;
                  gin[in_idx] += go * l.weight.data[w_idx];
                  gw[w_idx] += go * in.data[in_idx];
                }
              }
          }
      Tensor g = Tensor::zeros(in.shape);
      for (std::size_t i = 0; i < g.size(); ++i)
        g.data[i] = static_cast<float>(gin[i]);
      if (grad_w) {
        *grad_w = Tensor::zeros(l.weight.shape);
        for (std::size_t i = 0; i < gw.size(); ++i)
          grad_w->data[i] = static_cast<float>(gw[i]);
      }
      if (grad_b) {
        *grad_b = Tensor::zeros(l.bias.shape);
        for (std::size_t i = 0; i < gb.size(); ++i)
          grad_b->data[i] = static_cast<float>(gb[i]);
      }
      return g;
    }
  }
  throw std::logic_error("layer_backward: unknown kind");
}

inline void check_trace(const ForwardTrace& trace, const Network& net) {
  if (trace.activations.size() != net.layers.size() ||
      trace.input.shape != net.input_shape ||
      trace.logits().size() != net.num_classes)
    throw std::invalid_argument("trace does not match network");
}

}  // namespace detail

inline ForwardTrace forward(const Network& net, const Tensor& x) {
  if (x.shape != net.input_shape)
    throw std::invalid_argument("forward: input shape mismatch");
  require_finite(x, "forward input");
  ForwardTrace trace;
  trace.input = x;
  const Tensor* cur = &x;
  for (const auto& l : net.layers) {
    trace.activations.push_back(detail::apply_layer(l, *cur));
    cur = &trace.activations.back();
  }
  return trace;
}

/// Index of the maximum logit; ties break to the lowest index.
inline std::size_t predict(const Tensor& logits) {
  if (logits.size() == 0) throw std::invalid_argument("predict: empty logits");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits(i) > logits(best)) best = i;
  return best;
}

inline double cross_entropy_loss(const Tensor& logits, std::size_t target) {
  if (target >= logits.size())
    throw std::invalid_argument("cross_entropy_loss: target out of range");
  require_finite(logits, "cross_entropy_loss input");
  double mx = logits(0);
  for (float v : logits.data) mx = std::max(mx, static_cast<double>(v));
  double sum = 0.0;
  for (float v : logits.data) sum += std::exp(static_cast<double>(v) - mx);
  return std::log(sum) - (static_cast<double>(logits(target)) - mx);
}

/// One gradient tensor per parameter tensor, indexed by layer. Layers
/// without parameters hold empty tensors.
struct GradientSet {
  std::vector<Tensor> weight;
  std::vector<Tensor> bias;
};

/// Gradient of the chosen scalar objective w.r.t. activation A_layer, where
/// seed is the objective's gradient w.r.t. the logits. layer 0 addresses the
/// network input.
inline Tensor backward_to_activation(const ForwardTrace& trace,
                                     const Network& net, const Tensor& seed,
                                     std::size_t layer) {
  detail::check_trace(trace, net);
  if (seed.rank() != 1 || seed.size() != net.num_classes)
    throw std::invalid_argument("backward_to_activation: bad seed shape");
  if (layer >= trace.num_activations())
    throw std::invalid_argument("backward_to_activation: layer out of range");
  require_finite(seed, "backward_to_activation seed");
  Tensor g = seed;
  for (std::size_t li = net.layers.size(); li-- > layer;) {
    g = detail::layer_backward(net.layers[li], trace.activation(li), g,
                               nullptr, nullptr);
  }
  return g;
}

/// Reverse-mode gradients of cross_entropy_loss(logits, target) w.r.t. every
/// parameter tensor.
inline GradientSet backward_params(const ForwardTrace& trace,
                                   const Network& net, std::size_t target) {
  detail::check_trace(trace, net);
  if (target >= net.num_classes)
    throw std::invalid_argument("backward_params: target out of range");
  Tensor seed = softmax(trace.logits());
  seed(target) -= 1.0f;
  GradientSet grads;
  grads.weight.resize(net.layers.size());
  grads.bias.resize(net.layers.size());
  Tensor g = seed;
  for (std::size_t li = net.layers.size(); li-- > 0;) {
    const auto& l = net.layers[li];
    Tensor* gw = l.has_params() ? &grads.weight[li] : nullptr;
    Tensor* gb = l.has_params() ? &grads.bias[li] : nullptr;
    g = detail::layer_backward(l, trace.activation(li), g, gw, gb);
  }
  return grads;
}

}  // namespace camlab
