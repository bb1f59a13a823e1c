#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "camlab/explain.hpp"
#include "camlab/network.hpp"
#include "camlab/tensor.hpp"
#include "camlab/training.hpp"

namespace camlab {

enum class CurveMode { probabilistic, accuracy };
enum class BaselineKind { zeros, dataset_mean };

struct EvalCurve {
  std::vector<double> fractions;  // strictly increasing, 0..1
  std::vector<double> scores;
  double auc = 0.0;
};

/// Trapezoidal area under (fractions, scores).
inline double curve_auc(const std::vector<double>& fractions,
                        const std::vector<double>& scores) {
  double area = 0.0;
  for (std::size_t i = 1; i < fractions.size(); ++i)
    area += 0.5 * (scores[i] + scores[i - 1]) *
            (fractions[i] - fractions[i - 1]);
  return area;
}

inline Tensor dataset_mean_image(const std::vector<LabeledSample>& samples) {
  if (samples.empty())
    throw std::invalid_argument("dataset_mean_image: empty dataset");
  std::vector<double> acc(samples[0].image.size(), 0.0);
  for (const auto& s : samples)
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += s.image.data[i];
  Tensor mean = Tensor::zeros(samples[0].image.shape);
  for (std::size_t i = 0; i < acc.size(); ++i)
    mean.data[i] = static_cast<float>(acc[i] / samples.size());
  return mean;
}

namespace detail {

/// Pixel indices ordered by descending map value, ties by raster order.
inline std::vector<std::size_t> saliency_order(const Tensor& map) {
  std::vector<std::size_t> order(map.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return map.data[a] > map.data[b];
                   });
  return order;
}

inline void splice_pixels(Tensor& img, const Tensor& src,
                          const std::vector<std::size_t>& order,
                          std::size_t count) {
  const std::size_t C = img.shape[0];
  const std::size_t plane = img.shape[1] * img.shape[2];
  for (std::size_t i = 0; i < count; ++i)
    for (std::size_t c = 0; c < C; ++c)
      img.data[c * plane + order[i]] = src.data[c * plane + order[i]];
}

inline EvalCurve run_curve(const Network& net, const Tensor& start,
                           const Tensor& fill, const Tensor& map,
                           CurveMode mode, std::size_t steps,
                           std::size_t ref_class) {
  const std::size_t total = map.size();
  const auto order = saliency_order(map);
  EvalCurve curve;
  Tensor img = start;
  std::size_t done = 0;
  for (std::size_t s = 0; s <= steps; ++s) {
    const std::size_t want = (s * total) / steps;
    if (want > done) {
      // incremental only in construction; scoring is a fresh forward pass
      Tensor scratch = img;
      splice_pixels(scratch, fill, order, want);
      img = std::move(scratch);
      done = want;
    }
    ForwardTrace trace = forward(net, img);
    double score;
    if (mode == CurveMode::probabilistic)
      score = softmax(trace.logits())(ref_class);
    else
      score = predict(trace.logits()) == ref_class ? 1.0 : 0.0;
    curve.fractions.push_back(static_cast<double>(s) /
                              static_cast<double>(steps));
    curve.scores.push_back(score);
  }
  curve.auc = curve_auc(curve.fractions, curve.scores);
  return curve;
}

}  // namespace detail

/// Replace pixels of x by the baseline in descending map order; score the
/// originally predicted class at each of `steps` equal-count increments.
inline EvalCurve deletion_curve(const Network& net, const Tensor& x,
                                const Tensor& map_upsampled, CurveMode mode,
                                std::size_t steps, const Tensor& baseline) {
  if (steps < 2) throw std::invalid_argument("deletion_curve: steps >= 2");
  if (x.rank() != 3 || map_upsampled.rank() != 2 ||
      map_upsampled.shape[0] != x.shape[1] ||
      map_upsampled.shape[1] != x.shape[2] || baseline.shape != x.shape)
    throw std::invalid_argument("deletion_curve: shape mismatch");
  const std::size_t p0 = predict(forward(net, x).logits());
  return detail::run_curve(net, x, baseline, map_upsampled, mode, steps, p0);
}

/// Mirror image of deletion: start from the baseline and insert original
/// pixels in descending map order.
inline EvalCurve insertion_curve(const Network& net, const Tensor& x,
                                 const Tensor& map_upsampled, CurveMode mode,
                                 std::size_t steps, const Tensor& baseline) {
  if (steps < 2) throw std::invalid_argument("insertion_curve: steps >= 2");
  if (x.rank() != 3 || map_upsampled.rank() != 2 ||
      map_upsampled.shape[0] != x.shape[1] ||
      map_upsampled.shape[1] != x.shape[2] || baseline.shape != x.shape)
    throw std::invalid_argument("insertion_curve: shape mismatch");
  const std::size_t p0 = predict(forward(net, x).logits());
  return detail::run_curve(net, baseline, x, map_upsampled, mode, steps, p0);
}

/// Accuracy of predict over x' = x * map. With a threshold the map is
/// binarized first; without, the continuous map multiplies the image.
inline double masked_accuracy(const Network& net,
                              const std::vector<LabeledSample>& samples,
                              const std::vector<Tensor>& maps,
                              std::optional<float> threshold = std::nullopt) {
  if (samples.size() != maps.size())
    throw std::invalid_argument("masked_accuracy: count mismatch");
  if (samples.empty())
    throw std::invalid_argument("masked_accuracy: empty dataset");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Tensor& img = samples[i].image;
    const Tensor& m = maps[i];
    if (m.rank() != 2 || m.shape[0] != img.shape[1] ||
        m.shape[1] != img.shape[2])
      throw std::invalid_argument("masked_accuracy: map shape mismatch");
    Tensor masked = img;
    const std::size_t plane = img.shape[1] * img.shape[2];
    for (std::size_t c = 0; c < img.shape[0]; ++c)
      for (std::size_t j = 0; j < plane; ++j) {
        float w = m.data[j];
        if (threshold) w = w > *threshold ? 1.0f : 0.0f;
        masked.data[c * plane + j] *= w;
      }
    if (predict(forward(net, masked).logits()) == samples[i].label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

/// Hit when the map's maximum (ties -> first in raster order) lies inside
/// the ground-truth mask. An all-zero map counts as a miss.
inline double pointing_game(const std::vector<Tensor>& maps,
                            const std::vector<LabeledSample>& samples) {
  if (samples.size() != maps.size())
    throw std::invalid_argument("pointing_game: count mismatch");
  if (samples.empty()) throw std::invalid_argument("pointing_game: empty");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!samples[i].mask)
      throw std::invalid_argument("pointing_game: missing mask");
    const Tensor& m = maps[i];
    std::size_t best = 0;
    bool nonzero = false;
    for (std::size_t j = 0; j < m.size(); ++j) {
      if (m.data[j] > m.data[best]) best = j;
      if (m.data[j] != 0.0f) nonzero = true;
    }
    if (nonzero && samples[i].mask->data[best] != 0.0f) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

struct CoverageReport {
  double correlation = 0.0;
  double counterfactual = 0.0;
  double contrastive = 0.0;
  double complete = 0.0;
};

/// coverage(m) = fraction of mask pixels where the normalized map exceeds
/// the threshold.
inline CoverageReport completeness_coverage(const CompleteExplanation& ce,
                                            const Tensor& mask,
                                            float threshold) {
  if (!(threshold > 0.0f && threshold < 1.0f))
    throw std::invalid_argument("completeness_coverage: threshold in (0,1)");
  std::size_t mask_px = 0;
  for (float v : mask.data)
    if (v != 0.0f) ++mask_px;
  if (mask_px == 0)
    throw std::invalid_argument("completeness_coverage: empty mask");
  auto cover = [&](const Tensor& m) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask.data[i] != 0.0f && m.data[i] > threshold) ++n;
    return static_cast<double>(n) / static_cast<double>(mask_px);
  };
  CoverageReport r;
  r.correlation = cover(ce.correlation.upsampled);
  r.counterfactual = cover(ce.counterfactual.upsampled);
  r.contrastive = cover(ce.contrastive.upsampled);
  r.complete = cover(ce.complete_upsampled);
  return r;
}

inline unsigned eval_thread_count() {
  const char* env = std::getenv("CAMLAB_THREADS");
  if (!env) return 0;
  const long v = std::strtol(env, nullptr, 10);
  return v > 0 ? static_cast<unsigned>(v) : 0;
}

/// Per-sample parallel map over [0,n). 0 or 1 threads means sequential.
inline void parallel_for(std::size_t n,
                         const std::function<void(std::size_t)>& fn) {
  const unsigned nthreads = eval_thread_count();
  if (nthreads <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> workers;
  const std::size_t t = std::min<std::size_t>(nthreads, n);
  for (std::size_t w = 0; w < t; ++w)
    workers.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += t) fn(i);
    });
  for (auto& th : workers) th.join();
}

struct MethodMetrics {
  double deletion_auc = 0.0;
  double insertion_auc = 0.0;
  double pointing_game = 0.0;
  double masked_accuracy = 0.0;
};

/// Dataset-level metrics for one map provider (upsampled map per sample).
inline MethodMetrics evaluate_maps(
    const Network& net, const std::vector<LabeledSample>& samples,
    const std::function<Tensor(const LabeledSample&)>& map_for,
    CurveMode mode, std::size_t steps, const Tensor& baseline) {
  if (samples.empty()) throw std::invalid_argument("evaluate_maps: empty");
  std::vector<Tensor> maps(samples.size());
  std::vector<double> del(samples.size()), ins(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    maps[i] = map_for(samples[i]);
    del[i] = deletion_curve(net, samples[i].image, maps[i], mode, steps,
                            baseline)
                 .auc;
    ins[i] = insertion_curve(net, samples[i].image, maps[i], mode, steps,
                             baseline)
                 .auc;
  });
  MethodMetrics m;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    m.deletion_auc += del[i];
    m.insertion_auc += ins[i];
  }
  m.deletion_auc /= static_cast<double>(samples.size());
  m.insertion_auc /= static_cast<double>(samples.size());
  m.pointing_game = pointing_game(maps, samples);
  m.masked_accuracy = masked_accuracy(net, samples, maps);
  return m;
}

/// Aggregated results for a report file.
struct EvalReport {
  std::size_t sample_count = 0;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> config;
  struct Entry {
    std::string method;
    std::vector<std::pair<std::string, double>> metrics;
  };
  std::vector<Entry> entries;
};

}  // namespace camlab
