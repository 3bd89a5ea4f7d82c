#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "std2p/correspond.hpp"
#include "std2p/error.hpp"
#include "std2p/grid.hpp"
#include "std2p/pooling.hpp"
#include "std2p/rng.hpp"
#include "std2p/synthscene.hpp"

namespace std2p::learn {

// Per-pixel affine classifier: scores = W f + b. Stands in for the
// convolutional trunk that feeds the pooling head.
struct LinearHead {
  std::size_t classes = 0, channels = 0;
  std::vector<double> weights;  // (classes, channels)
  std::vector<double> bias;     // (classes)

  LinearHead() = default;
  LinearHead(std::size_t ncl, std::size_t c) : classes(ncl), channels(c), weights(ncl * c, 0.0), bias(ncl, 0.0) {}

  double& w(std::size_t k, std::size_t c) { return weights[k * channels + c]; }
  double w(std::size_t k, std::size_t c) const { return weights[k * channels + c]; }

  // Small random weights, zero bias.
  static LinearHead random(std::size_t ncl, std::size_t c, std::uint64_t seed, double scale = 0.01) {
    LinearHead h(ncl, c);
    auto rng = SeedSplitter(seed).stream("head-init");
    std::normal_distribution<double> normal(0.0, scale);
    for (auto& v : h.weights) v = normal(rng);
    return h;
  }

  FeatureStack apply(const FeatureStack& features) const {
    if (features.channels() != channels)
      fail("shape-mismatch", "head expects ", channels, " channels, got ", features.channels());
    FeatureStack out(features.frames(), classes, features.height(), features.width());
    const auto hw = features.pixels();
    for (std::size_t i = 0; i < features.frames(); ++i)
      for (std::size_t k = 0; k < classes; ++k) {
        auto dst = out.plane(i, k);
        std::fill(dst.begin(), dst.end(), bias[k]);
        for (std::size_t c = 0; c < channels; ++c) {
          const double wk = w(k, c);
          auto src = features.plane(i, c);
          for (std::size_t q = 0; q < hw; ++q) dst[q] += wk * src[q];
        }
      }
    return out;
  }

  friend bool operator==(const LinearHead&, const LinearHead&) = default;
};

struct HeadGradient {
  std::vector<double> weights;
  std::vector<double> bias;
};

inline HeadGradient head_backward(const LinearHead& head, const FeatureStack& features,
                                  const FeatureStack& grad_scores) {
  if (grad_scores.frames() != features.frames() || grad_scores.channels() != head.classes ||
      grad_scores.height() != features.height() || grad_scores.width() != features.width())
    fail("shape-mismatch", "head backward: score gradient shape does not match features");
  HeadGradient g{std::vector<double>(head.weights.size(), 0.0), std::vector<double>(head.classes, 0.0)};
  const auto hw = features.pixels();
  for (std::size_t i = 0; i < features.frames(); ++i)
    for (std::size_t k = 0; k < head.classes; ++k) {
      auto gs = grad_scores.plane(i, k);
      for (std::size_t q = 0; q < hw; ++q) g.bias[k] += gs[q];
      for (std::size_t c = 0; c < head.channels; ++c) {
        auto f = features.plane(i, c);
        double acc = 0.0;
        for (std::size_t q = 0; q < hw; ++q) acc += gs[q] * f[q];
        g.weights[k * head.channels + c] += acc;
      }
    }
  return g;
}

struct CrossEntropy {
  double loss = 0.0;
  DenseScoreMap grad;
  std::size_t counted = 0;
};

// Mean over labeled pixels of -log softmax(scores)[label]; ignored pixels
// contribute neither loss nor gradient.
inline CrossEntropy cross_entropy(const DenseScoreMap& scores, const LabelMap& labels) {
  if (scores.height != labels.height() || scores.width != labels.width())
    fail("shape-mismatch", "scores ", scores.height, "x", scores.width, " vs labels ",
         labels.height(), "x", labels.width());
  const auto hw = scores.height * scores.width, ncl = scores.channels;
  CrossEntropy out{0.0, DenseScoreMap(ncl, scores.height, scores.width), 0};
  for (std::size_t q = 0; q < hw; ++q) {
    const auto y = labels[q];
    if (y == kIgnoreLabel) continue;
    if (y >= ncl) fail("label-out-of-range", "label ", y, " at pixel ", q, " but ", ncl, " classes");
    ++out.counted;
  }
  if (out.counted == 0) fail("all-pixels-ignored", "no labeled pixel to compute the loss over");
  const double inv = 1.0 / static_cast<double>(out.counted);
  std::vector<double> p(ncl);
  for (std::size_t q = 0; q < hw; ++q) {
    const auto y = labels[q];
    if (y == kIgnoreLabel) continue;
    double top = scores.data[q];
    for (std::size_t k = 1; k < ncl; ++k) top = std::max(top, scores.data[k * hw + q]);
    double z = 0.0;
    for (std::size_t k = 0; k < ncl; ++k) z += (p[k] = std::exp(scores.data[k * hw + q] - top));
    out.loss += (std::log(z) + top - scores.data[y * hw + q]) * inv;
    for (std::size_t k = 0; k < ncl; ++k)
      out.grad.data[k * hw + q] = (p[k] / z - (k == y ? 1.0 : 0.0)) * inv;
  }
  return out;
}

struct OptimizerState {
  double learning_rate = 1e-2;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<std::vector<double>> velocity;  // one buffer per parameter tensor
};

// Classical momentum with L2 weight decay folded into the gradient:
//   v <- momentum * v - lr * (g + wd * p);  p <- p + v
inline void sgd_step(std::vector<std::span<double>> params, std::vector<std::span<const double>> grads,
                     OptimizerState& state) {
  if (params.size() != grads.size())
    fail("shape-mismatch", params.size(), " parameter tensors but ", grads.size(), " gradients");
  if (state.velocity.empty())
    for (auto p : params) state.velocity.emplace_back(p.size(), 0.0);
  if (state.velocity.size() != params.size())
    fail("shape-mismatch", "optimizer holds ", state.velocity.size(), " velocity buffers for ",
         params.size(), " parameters");
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto p = params[t];
    auto g = grads[t];
    auto& v = state.velocity[t];
    if (g.size() != p.size() || v.size() != p.size())
      fail("shape-mismatch", "parameter ", t, " has ", p.size(), " values, gradient ", g.size(),
           ", velocity ", v.size());
    for (std::size_t k = 0; k < p.size(); ++k) {
      v[k] = state.momentum * v[k] - state.learning_rate * (g[k] + state.weight_decay * p[k]);
      p[k] += v[k];
    }
  }
}

inline void sgd_step(LinearHead& head, const HeadGradient& grad, OptimizerState& state) {
  sgd_step({std::span<double>(head.weights), std::span<double>(head.bias)},
           {std::span<const double>(grad.weights), std::span<const double>(grad.bias)}, state);
}

enum class ViewMode { single, multi };

inline const char* to_string(ViewMode v) { return v == ViewMode::single ? "single" : "multi"; }

struct ModelConfig {
  PoolMode spatial = PoolMode::avg;
  PoolMode temporal = PoolMode::avg;
  ViewMode view = ViewMode::multi;
};

// One target frame with its sampled views, ready for the pooling head.
struct Sample {
  FeatureStack features;       // sampled frames only
  SuperpixelStack canonical;   // aligned with `features`
  std::size_t target_position;
  LabelMap labels;             // target-frame ground truth
  CorrespondenceTable table;
  std::vector<std::size_t> frames;
};

// Single-view samples keep only the target frame, so temporal pooling is the
// identity.
inline Sample make_sample(const FeatureStack& features, const SuperpixelStack& superpixels,
                          const FlowSequence& flows, const LabelMap& target_labels, std::size_t target,
                          const SamplingPolicy& policy, double tau, ViewMode view, unsigned threads = 1) {
  validate_stack(features, superpixels);
  validate_flows(flows, features.frames(), features.height(), features.width());
  auto contiguous = relabel_contiguous(superpixels).stack;
  std::vector<std::size_t> frames = view == ViewMode::single
                                        ? std::vector<std::size_t>{target}
                                        : sample_frames(features.frames(), target, policy);
  auto result = build_table(target, frames, contiguous, flows, tau, threads);
  return {select_frames(features, result.frames), std::move(result.canonical), result.target_position,
          target_labels, std::move(result.table), std::move(result.frames)};
}

inline Sample make_sample(const synth::SceneBundle& bundle, const SamplingPolicy& policy, double tau,
                          ViewMode view, unsigned threads = 1) {
  return make_sample(bundle.features, bundle.superpixels, bundle.flows, bundle.labels[bundle.spec.target],
                     bundle.spec.target, policy, tau, view, threads);
}

struct Forward {
  FeatureStack scores;  // per-pixel class scores of every sampled frame
  Std2pHead pool;
  DenseScoreMap output;
};

inline Forward forward(const LinearHead& head, const Sample& s, const ModelConfig& cfg) {
  Forward f{head.apply(s.features), Std2pHead(cfg.spatial, cfg.temporal), {}};
  f.output = f.pool.forward(f.scores, s.canonical, s.target_position, &s.table);
  return f;
}

inline LabelMap argmax_labels(const DenseScoreMap& scores) {
  LabelMap out(scores.height, scores.width, 0u);
  const auto hw = scores.height * scores.width;
  for (std::size_t q = 0; q < hw; ++q) {
    std::uint32_t best = 0;
    for (std::size_t k = 1; k < scores.channels; ++k)
      if (scores.data[k * hw + q] > scores.data[best * hw + q]) best = static_cast<std::uint32_t>(k);
    out[q] = best;
  }
  return out;
}

struct LossAndGrad {
  double loss;
  HeadGradient grad;
};

inline LossAndGrad loss_and_grad(const LinearHead& head, const Sample& s, const ModelConfig& cfg) {
  auto f = forward(head, s, cfg);
  auto ce = cross_entropy(f.output, s.labels);
  auto g_scores = f.pool.backward(ce.grad);
  return {ce.loss, head_backward(head, s.features, g_scores)};
}

// One SGD step per sample (minibatch of one sequence), samples in the given
// order each epoch. Returns the mean pre-step loss of every epoch.
inline std::vector<double> train(const std::vector<Sample>& samples, LinearHead& head,
                                 OptimizerState& optimizer, std::size_t epochs, const ModelConfig& cfg) {
  std::vector<double> trace;
  if (epochs > 0 && samples.empty()) fail("invalid-argument", "no training samples");
  for (std::size_t e = 0; e < epochs; ++e) {
    double total = 0.0;
    for (const auto& s : samples) {
      auto lg = loss_and_grad(head, s, cfg);
      total += lg.loss;
      sgd_step(head, lg.grad, optimizer);
    }
    trace.push_back(total / static_cast<double>(samples.size()));
  }
  return trace;
}

struct GradCheckOptions {
  double step = 1e-5;
  std::size_t samples = 200;  // coordinates checked; all when the input is smaller
  double tolerance = 1e-5;
  // Denominator floor of the relative error, so near-zero gradients are
  // compared in absolute terms.
  double scale_floor = 1e-4;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  std::size_t checked = 0;
  std::size_t worst_index = 0;
  bool passed = false;
};

// Central differences of `f` at `x` against the analytic gradient.
inline GradCheckReport grad_check(const std::function<double(std::span<const double>)>& f,
                                  std::vector<double> x, std::span<const double> analytic,
                                  const GradCheckOptions& opt = {}) {
  if (analytic.size() != x.size())
    fail("shape-mismatch", "gradient has ", analytic.size(), " entries for ", x.size(), " inputs");
  std::vector<std::size_t> coords(x.size());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (coords.size() > opt.samples) {
    auto rng = SeedSplitter(opt.seed).stream("grad-check");
    for (std::size_t k = 0; k < opt.samples; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, coords.size() - 1);
      std::swap(coords[k], coords[pick(rng)]);
    }
    coords.resize(opt.samples);
  }
  GradCheckReport r;
  for (auto k : coords) {
    const double saved = x[k];
    x[k] = saved + opt.step;
    const double up = f(x);
    x[k] = saved - opt.step;
    const double down = f(x);
    x[k] = saved;
    const double numeric = (up - down) / (2.0 * opt.step);
    const double abs_err = std::abs(numeric - analytic[k]);
    const double rel_err = abs_err / std::max({std::abs(numeric), std::abs(analytic[k]), opt.scale_floor});
    if (rel_err > r.max_relative_error) {
      r.max_relative_error = rel_err;
      r.worst_index = k;
    }
    r.max_absolute_error = std::max(r.max_absolute_error, abs_err);
    ++r.checked;
  }
  r.passed = r.max_relative_error < opt.tolerance;
  return r;
}

}  // namespace std2p::learn
