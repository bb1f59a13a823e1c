#pragma once

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "camlab/data_io.hpp"
#include "camlab/eval.hpp"
#include "camlab/explain.hpp"
#include "camlab/network.hpp"
#include "camlab/training.hpp"

namespace camlab::cli {

namespace detail {

inline std::vector<std::string> class_names(const std::string& csv,
                                            std::size_t n) {
  std::vector<std::string> names;
  if (!csv.empty()) {
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) names.push_back(item);
    if (names.size() != n)
      throw std::invalid_argument("--class-names: expected " +
                                  std::to_string(n) + " names");
    return names;
  }
  if (n == 3) {
    for (const auto& s : shape_class_names()) names.push_back(s);
    return names;
  }
  for (std::size_t i = 0; i < n; ++i) names.push_back("class" + std::to_string(i));
  return names;
}

inline Tensor make_baseline(const std::string& kind,
                            const std::vector<LabeledSample>& samples) {
  if (kind == "zeros") return Tensor::zeros(samples.at(0).image.shape);
  return dataset_mean_image(samples);
}

inline std::size_t resolve_layer(const Network& net, long layer_flag) {
  if (layer_flag < 0) return default_spatial_layer(net);
  return static_cast<std::size_t>(layer_flag);
}

struct EvalOptions {
  std::string model, data, out, baseline = "mean", paradigm = "correlation";
  long layer = -1;
  std::size_t steps = 20;
  bool controls = false;
  std::string against;
};

inline Tensor map_for_paradigm(const Network& net, const LabeledSample& s,
                               const std::string& paradigm,
                               std::size_t layer) {
  ForwardTrace trace = forward(net, s.image);
  const std::size_t p = predict(trace.logits());
  if (paradigm == "correlation")
    return grad_cam(net, trace, p, layer).second.upsampled;
  if (paradigm == "counterfactual")
    return counterfactual_cam(net, trace, p, layer).second.upsampled;
  if (paradigm == "contrastive") {
    const std::size_t q = default_contrast_class(trace.logits(), p);
    return contrast_cam(net, trace, ContrastQuery{p, q}, layer).second.upsampled;
  }
  // complete
  const std::size_t q = default_contrast_class(trace.logits(), p);
  return complete_explanation(net, s.image, layer, q).complete_upsampled;
}

inline EvalReport::Entry eval_one_method(
    const Network& net, const std::vector<LabeledSample>& samples,
    const std::string& name,
    const std::function<Tensor(const LabeledSample&)>& map_for,
    std::size_t steps, const Tensor& baseline) {
  MethodMetrics m = evaluate_maps(net, samples, map_for,
                                  CurveMode::probabilistic, steps, baseline);
  EvalReport::Entry e;
  e.method = name;
  e.metrics = {{"deletion_auc", m.deletion_auc},
               {"insertion_auc", m.insertion_auc},
               {"insertion_minus_deletion", m.insertion_auc - m.deletion_auc},
               {"pointing_game", m.pointing_game},
               {"masked_accuracy", m.masked_accuracy}};
  return e;
}

inline double plain_accuracy(const Network& net,
                             const std::vector<LabeledSample>& samples) {
  std::size_t correct = 0;
  for (const auto& s : samples)
    if (predict(forward(net, s.image).logits()) == s.label) ++correct;
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

inline int run_evaluation(const EvalOptions& opt, bool all_methods,
                          std::ostream& log) {
  Network net = load_weights(opt.model);
  auto samples = load_dataset(opt.data);
  if (samples.empty()) throw std::runtime_error("evaluate: empty dataset");
  const std::size_t layer = resolve_layer(net, opt.layer);
  const Tensor baseline = make_baseline(opt.baseline, samples);

  EvalReport report;
  report.sample_count = samples.size();
  report.seed = net.seed;
  report.config = {{"data", opt.data},
                   {"model", opt.model},
                   {"baseline", opt.baseline},
                   {"steps", std::to_string(opt.steps)},
                   {"layer", std::to_string(layer)}};

  EvalReport::Entry plain;
  plain.method = "unmasked";
  plain.metrics = {{"accuracy", plain_accuracy(net, samples)}};
  report.entries.push_back(plain);

  std::vector<std::string> methods;
  if (all_methods)
    methods = {"correlation", "counterfactual", "contrastive", "complete"};
  else
    methods = {opt.paradigm};
  for (const auto& method : methods) {
    report.entries.push_back(eval_one_method(
        net, samples, method,
        [&](const LabeledSample& s) {
          return map_for_paradigm(net, s, method, layer);
        },
        opt.steps, baseline));
    log << "evaluated " << method << "\n";
  }

  if (all_methods) {
    // mean per-sample coverage of mask pixels at threshold 0.2
    CoverageReport cov_sum;
    std::size_t cov_n = 0;
    for (const auto& s : samples) {
      if (!s.mask) continue;
      ForwardTrace trace = forward(net, s.image);
      const std::size_t p = predict(trace.logits());
      const std::size_t q = default_contrast_class(trace.logits(), p);
      CompleteExplanation ce = complete_explanation(net, s.image, layer, q);
      CoverageReport c = completeness_coverage(ce, *s.mask, 0.2f);
      cov_sum.correlation += c.correlation;
      cov_sum.counterfactual += c.counterfactual;
      cov_sum.contrastive += c.contrastive;
      cov_sum.complete += c.complete;
      ++cov_n;
    }
    if (cov_n > 0) {
      EvalReport::Entry cov;
      cov.method = "coverage";
      const double n = static_cast<double>(cov_n);
      cov.metrics = {{"correlation", cov_sum.correlation / n},
                     {"counterfactual", cov_sum.counterfactual / n},
                     {"contrastive", cov_sum.contrastive / n},
                     {"complete", cov_sum.complete / n}};
      report.entries.push_back(cov);
    }
  }

  if (opt.controls) {
    std::mt19937_64 rng(net.seed);
    const std::size_t H = samples[0].image.shape[1];
    const std::size_t W = samples[0].image.shape[2];
    report.entries.push_back(eval_one_method(
        net, samples, "uniform-control",
        [&](const LabeledSample&) { return Tensor::full({H, W}, 1.0f); },
        opt.steps, baseline));
    std::vector<Tensor> random_maps(samples.size());
    std::uniform_real_distribution<float> dist(0.0f, 1.0f);
    for (auto& m : random_maps) {
      m = Tensor::zeros({H, W});
      for (float& v : m.data) v = dist(rng);
    }
    std::size_t idx = 0;
    report.entries.push_back(eval_one_method(
        net, samples, "random-control",
        [&](const LabeledSample&) { return random_maps[idx++ % random_maps.size()]; },
        opt.steps, baseline));
  }

  write_report(report, opt.out);
  log << "report written to " << opt.out << "\n";

  if (!opt.against.empty()) {
    EvalReport prev = read_report(opt.against);
    log << "delta vs " << opt.against << ":\n";
    for (const auto& e : report.entries)
      for (const auto& [k, v] : e.metrics)
        for (const auto& pe : prev.entries)
          if (pe.method == e.method)
            for (const auto& [pk, pv] : pe.metrics)
              if (pk == k) {
                char num[64];
                std::snprintf(num, sizeof(num), "%+.6f", v - pv);
                log << "  " << e.method << "." << k << ": " << num << "\n";
              }
  }
  return 0;
}

}  // namespace detail

/// Entry point behind main(). Returns 0 on success, 1 on usage error, 2 on
/// runtime failure.
inline int run(std::vector<std::string> args,
               std::ostream& log = std::cout) {
  CLI::App app{"camlab: train small CNNs and produce complete explanations"};
  app.require_subcommand(0, 1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate the shapes dataset");
  std::string gen_out;
  std::uint64_t gen_seed = 7;
  std::size_t gen_n = 400, gen_size = 32;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--seed", gen_seed, "RNG seed");
  gen->add_option("--n-per-class", gen_n, "samples per class");
  gen->add_option("--image-size", gen_size, "square image size");

  // train
  auto* tr = app.add_subcommand("train", "train the reference CNN");
  std::string tr_data, tr_out;
  std::uint64_t tr_seed = 7;
  float tr_lr = 0.05f;
  std::size_t tr_epochs = 20, tr_batch = 16;
  tr->add_option("--data", tr_data, "dataset directory")->required();
  tr->add_option("--out", tr_out, "weights file to write")->required();
  tr->add_option("--seed", tr_seed, "init + shuffle seed");
  tr->add_option("--lr", tr_lr, "learning rate");
  tr->add_option("--epochs", tr_epochs, "epoch count");
  tr->add_option("--batch", tr_batch, "mini-batch size");

  // explain
  auto* ex = app.add_subcommand("explain", "produce explanation maps");
  std::string ex_model, ex_image, ex_out, ex_paradigm = "complete";
  std::string ex_names;
  long ex_layer = -1, ex_class = -1, ex_contrast = -1;
  ex->add_option("--model", ex_model, "weights file")->required();
  ex->add_option("--image", ex_image, "input PGM image")->required();
  ex->add_option("--out", ex_out, "output path prefix")->required();
  ex->add_option("--paradigm", ex_paradigm, "paradigm")
      ->check(CLI::IsMember(
          {"correlation", "counterfactual", "contrastive", "complete"}));
  ex->add_option("--layer", ex_layer, "activation layer (-1 = last spatial)");
  ex->add_option("--class", ex_class, "class index (-1 = predicted)");
  ex->add_option("--contrast", ex_contrast,
                 "contrast class (-1 = second-highest logit)");
  ex->add_option("--class-names", ex_names, "comma-separated class names");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "run metrics for one paradigm");
  detail::EvalOptions ev_opt;
  ev->add_option("--model", ev_opt.model, "weights file")->required();
  ev->add_option("--data", ev_opt.data, "dataset directory")->required();
  ev->add_option("--out", ev_opt.out, "report file")->required();
  ev->add_option("--paradigm", ev_opt.paradigm, "paradigm")
      ->check(CLI::IsMember(
          {"correlation", "counterfactual", "contrastive", "complete"}));
  ev->add_option("--steps", ev_opt.steps, "curve steps");
  ev->add_option("--baseline", ev_opt.baseline, "baseline pixels")
      ->check(CLI::IsMember({"zeros", "mean"}));
  ev->add_option("--layer", ev_opt.layer, "activation layer (-1 = last spatial)");

  // compare
  auto* cp = app.add_subcommand(
      "compare", "run all paradigms (and optional controls) side by side");
  detail::EvalOptions cp_opt;
  cp->add_option("--model", cp_opt.model, "weights file")->required();
  cp->add_option("--data", cp_opt.data, "dataset directory")->required();
  cp->add_option("--out", cp_opt.out, "report file")->required();
  cp->add_option("--steps", cp_opt.steps, "curve steps");
  cp->add_option("--baseline", cp_opt.baseline, "baseline pixels")
      ->check(CLI::IsMember({"zeros", "mean"}));
  cp->add_option("--layer", cp_opt.layer, "activation layer (-1 = last spatial)");
  cp->add_flag("--controls", cp_opt.controls,
               "also evaluate uniform and random map controls");
  cp->add_option("--against", cp_opt.against,
                 "previous report to diff against");

  std::vector<const char*> argv;
  argv.push_back("camlab");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()),
              const_cast<char**>(argv.data()));
  } catch (const CLI::CallForHelp& e) {
    log << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (gen->parsed()) {
      auto samples = generate_shapes_dataset(gen_seed, gen_n, gen_size);
      save_dataset(samples, gen_out);
      log << "wrote " << samples.size() << " samples to " << gen_out << "\n";
      return 0;
    }
    if (tr->parsed()) {
      auto samples = load_dataset(tr_data);
      if (samples.empty()) throw std::runtime_error("train: empty dataset");
      std::size_t n = 0;
      for (const auto& s : samples) n = std::max(n, s.label + 1);
      n = std::max<std::size_t>(n, 2);
      Network net = make_reference_cnn(samples[0].image.shape[1], n, tr_seed);
      TrainConfig config;
      config.learning_rate = tr_lr;
      config.epochs = tr_epochs;
      config.batch_size = tr_batch;
      config.seed = tr_seed;
      TrainResult result = train(std::move(net), samples, config);
      for (std::size_t e = 0; e < result.history.loss.size(); ++e) {
        char line[96];
        std::snprintf(line, sizeof(line),
                      "epoch %zu: loss %.4f accuracy %.4f", e + 1,
                      result.history.loss[e], result.history.accuracy[e]);
        log << line << "\n";
      }
      save_weights(result.net, tr_out);
      log << "weights written to " << tr_out << "\n";
      return 0;
    }
    if (ex->parsed()) {
      Network net = load_weights(ex_model);
      Tensor plane = load_pgm(ex_image);
      Tensor x({1, plane.shape[0], plane.shape[1]}, plane.data);
      if (x.shape != net.input_shape)
        throw std::runtime_error("explain: image does not match model input");
      const std::size_t layer = detail::resolve_layer(net, ex_layer);
      ForwardTrace trace = forward(net, x);
      const std::size_t p = ex_class >= 0 ? static_cast<std::size_t>(ex_class)
                                          : predict(trace.logits());
      const std::size_t q =
          ex_contrast >= 0 ? static_cast<std::size_t>(ex_contrast)
                           : default_contrast_class(trace.logits(), p);
      const auto names = detail::class_names(ex_names, net.num_classes);
      const auto questions = paradigm_questions(names.at(p), names.at(q));

      if (ex_paradigm == "complete") {
        CompleteExplanation ce = complete_explanation(net, x, layer, q);
        for (const auto& qs : questions) log << qs << "\n";
        export_heatmap(ce.correlation, x, ex_out + ".correlation");
        export_heatmap(ce.counterfactual, x, ex_out + ".counterfactual");
        export_heatmap(ce.contrastive, x, ex_out + ".contrastive");
        ExplanationMap complete;
        complete.raw = ce.complete_raw;
        complete.upsampled = ce.complete_upsampled;
        export_heatmap(complete, x, ex_out + ".complete");
      } else if (ex_paradigm == "correlation") {
        log << questions[0] << "\n";
        export_heatmap(grad_cam(net, trace, p, layer).second, x,
                       ex_out + ".correlation");
      } else if (ex_paradigm == "counterfactual") {
        log << questions[1] << "\n";
        export_heatmap(counterfactual_cam(net, trace, p, layer).second, x,
                       ex_out + ".counterfactual");
      } else {
        log << questions[2] << "\n";
        export_heatmap(
            contrast_cam(net, trace, ContrastQuery{p, q}, layer).second, x,
            ex_out + ".contrastive");
      }
      return 0;
    }
    if (ev->parsed()) return detail::run_evaluation(ev_opt, false, log);
    if (cp->parsed()) return detail::run_evaluation(cp_opt, true, log);
    log << app.help();
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace camlab::cli
