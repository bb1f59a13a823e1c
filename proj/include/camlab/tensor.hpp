#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace camlab {

inline std::size_t numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

/// Dense row-major float32 tensor. Feature maps are [C,H,W], logit and
/// importance vectors are [N]. Values are immutable by convention once a
/// tensor leaves the function that built it.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<float> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> s, std::vector<float> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != numel(shape))
      throw std::invalid_argument("Tensor: data length does not match shape");
  }

  static Tensor zeros(std::vector<std::size_t> s) {
    std::vector<float> d(numel(s), 0.0f);
    return Tensor(std::move(s), std::move(d));
  }

  static Tensor full(std::vector<std::size_t> s, float v) {
    std::vector<float> d(numel(s), v);
    return Tensor(std::move(s), std::move(d));
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }

  float operator()(std::size_t i) const { return data[i]; }
  float& operator()(std::size_t i) { return data[i]; }

  float operator()(std::size_t i, std::size_t j) const {
    return data[i * shape[1] + j];
  }
  float& operator()(std::size_t i, std::size_t j) {
    return data[i * shape[1] + j];
  }

  float operator()(std::size_t c, std::size_t h, std::size_t w) const {
    return data[(c * shape[1] + h) * shape[2] + w];
  }
  float& operator()(std::size_t c, std::size_t h, std::size_t w) {
    return data[(c * shape[1] + h) * shape[2] + w];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

inline void require_finite(const Tensor& t, const std::string& what) {
  for (float v : t.data)
    if (!std::isfinite(v))
      throw std::invalid_argument(what + ": non-finite value");
}

inline Tensor relu(const Tensor& t) {
  require_finite(t, "relu input");
  Tensor out = t;
  for (float& v : out.data) v = v > 0.0f ? v : 0.0f;
  return out;
}

/// [C,H,W] -> [C]; output[c] is the spatial mean of channel c.
inline Tensor global_average_pool(const Tensor& t) {
  if (t.rank() != 3)
    throw std::invalid_argument("global_average_pool: expected rank-3 tensor");
  const std::size_t C = t.shape[0], H = t.shape[1], W = t.shape[2];
  if (H == 0 || W == 0)
    throw std::invalid_argument("global_average_pool: zero spatial extent");
  require_finite(t, "global_average_pool input");
  Tensor out = Tensor::zeros({C});
  for (std::size_t c = 0; c < C; ++c) {
    double acc = 0.0;
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w) acc += t(c, h, w);
    out(c) = static_cast<float>(acc / static_cast<double>(H * W));
  }
  return out;
}

/// Exponential normalization with max subtraction; outputs are positive and
/// sum to 1.
inline Tensor softmax(const Tensor& logits) {
  if (logits.rank() != 1 || logits.size() == 0)
    throw std::invalid_argument("softmax: expected nonempty rank-1 tensor");
  require_finite(logits, "softmax input");
  double mx = logits(0);
  for (float v : logits.data) mx = std::max(mx, static_cast<double>(v));
  std::vector<double> e(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    e[i] = std::exp(static_cast<double>(logits(i)) - mx);
    sum += e[i];
  }
  Tensor out = Tensor::zeros(logits.shape);
  for (std::size_t i = 0; i < logits.size(); ++i)
    out(i) = static_cast<float>(e[i] / sum);
  return out;
}

}  // namespace camlab
