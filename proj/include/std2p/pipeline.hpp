#pragma once

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "std2p/correspond.hpp"
#include "std2p/error.hpp"
#include "std2p/eval.hpp"
#include "std2p/grid.hpp"
#include "std2p/io.hpp"
#include "std2p/learn.hpp"
#include "std2p/pooling.hpp"
#include "std2p/synthscene.hpp"

// Command-level orchestration shared by the CLI and the tests. Every command
// reads a PipelineConfig, writes files under `out`, and reports through the
// given stream. Errors surface as std2p::Error; run() maps them to exit codes.
namespace std2p::pipeline {

namespace fs = std::filesystem;

struct PipelineConfig {
  // Input: either a scene spec file or recorded sequences, never both.
  std::optional<fs::path> scene;
  std::vector<fs::path> bundles;  // directories holding the five bundle files
  std::optional<fs::path> features, superpixels, flows, labels;
  double flow_noise = 0.0;        // extra Gaussian flow noise for generated scenes
  std::optional<std::size_t> target;
  std::optional<std::uint32_t> classes;

  double tau = 0.4;
  SamplingPolicy sampling;
  learn::ModelConfig model;

  std::size_t epochs = 10;
  double learning_rate = 1e-2, momentum = 0.9, weight_decay = 5e-4, init_scale = 0.01;

  std::optional<fs::path> model_file;  // trained head for infer / eval / sweep
  std::optional<fs::path> resume;      // directory of a previous train run
  std::optional<fs::path> prediction;  // label map for eval
  std::optional<fs::path> ground_truth;

  std::vector<double> bpr_tolerances{2.0};
  bool oracle = false;
  std::vector<std::size_t> max_distances{1, 2, 3, 4, 6, 8};

  std::uint64_t seed = 0;
  unsigned threads = 1;
  fs::path out = "out";
};

namespace detail {

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  fail("config-value", key, ": expected a boolean, got \"", v, "\"");
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    T out{};
    if constexpr (std::is_floating_point_v<T>) {
      out = static_cast<T>(std::stod(v, &used));
    } else {
      if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
      out = static_cast<T>(std::stoull(v, &used));
    }
    if (used != v.size()) throw std::invalid_argument("trailing");
    return out;
  } catch (const std::exception&) {
    fail("config-value", key, ": cannot parse \"", v, "\" as a number");
  }
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& v) {
  std::vector<T> out;
  for (const auto& part : io::split(v, ',')) {
    auto b = part.find_first_not_of(' '), e = part.find_last_not_of(' ');
    if (b == std::string::npos) fail("config-value", key, ": empty list element in \"", v, "\"");
    out.push_back(parse_number<T>(key, part.substr(b, e - b + 1)));
  }
  return out;
}

inline PoolMode parse_mode(const std::string& key, const std::string& v) {
  if (v == "avg") return PoolMode::avg;
  if (v == "max") return PoolMode::max;
  fail("config-value", key, ": expected avg or max, got \"", v, "\"");
}

}  // namespace detail

// Applies `key = value` entries in order; later entries override earlier ones
// except `bundle`, which accumulates.
inline void apply_setting(PipelineConfig& c, const std::string& key, const std::string& v) {
  using detail::parse_number;
  if (key == "scene") c.scene = v;
  else if (key == "bundle") for (const auto& p : io::split(v, ',')) c.bundles.emplace_back(p);
  else if (key == "features") c.features = v;
  else if (key == "superpixels") c.superpixels = v;
  else if (key == "flows") c.flows = v;
  else if (key == "labels") c.labels = v;
  else if (key == "flow_noise") c.flow_noise = parse_number<double>(key, v);
  else if (key == "target") c.target = parse_number<std::size_t>(key, v);
  else if (key == "classes") c.classes = parse_number<std::uint32_t>(key, v);
  else if (key == "tau") c.tau = parse_number<double>(key, v);
  else if (key == "interval") c.sampling.interval = parse_number<std::size_t>(key, v);
  else if (key == "max_candidates") c.sampling.max_candidates = parse_number<std::size_t>(key, v);
  else if (key == "sample_size") c.sampling.sample_size = parse_number<std::size_t>(key, v);
  else if (key == "max_distance") c.sampling.max_distance = parse_number<std::size_t>(key, v);
  else if (key == "direction") {
    if (v == "both") c.sampling.direction = SampleDirection::both;
    else if (v == "past") c.sampling.direction = SampleDirection::past_only;
    else fail("config-value", key, ": expected both or past, got \"", v, "\"");
  } else if (key == "spatial_mode") c.model.spatial = detail::parse_mode(key, v);
  else if (key == "temporal_mode") c.model.temporal = detail::parse_mode(key, v);
  else if (key == "view_mode") {
    if (v == "single") c.model.view = learn::ViewMode::single;
    else if (v == "multi") c.model.view = learn::ViewMode::multi;
    else fail("config-value", key, ": expected single or multi, got \"", v, "\"");
  } else if (key == "epochs") c.epochs = parse_number<std::size_t>(key, v);
  else if (key == "learning_rate") c.learning_rate = parse_number<double>(key, v);
  else if (key == "momentum") c.momentum = parse_number<double>(key, v);
  else if (key == "weight_decay") c.weight_decay = parse_number<double>(key, v);
  else if (key == "init_scale") c.init_scale = parse_number<double>(key, v);
  else if (key == "model") c.model_file = v;
  else if (key == "resume") c.resume = v;
  else if (key == "prediction") c.prediction = v;
  else if (key == "ground_truth") c.ground_truth = v;
  else if (key == "bpr_tolerances") c.bpr_tolerances = detail::parse_list<double>(key, v);
  else if (key == "oracle") c.oracle = detail::parse_bool(key, v);
  else if (key == "max_distances") c.max_distances = detail::parse_list<std::size_t>(key, v);
  else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, v);
  else if (key == "threads") c.threads = parse_number<unsigned>(key, v);
  else if (key == "out") c.out = v;
  else fail("config-unknown-key", "unknown setting \"", key, "\"");
}

inline void validate_config(const PipelineConfig& c) {
  if (!(c.tau >= 0.0 && c.tau < 1.0)) fail("config-value", "tau must be in [0, 1), got ", c.tau);
  if (c.threads == 0) fail("config-value", "threads must be >= 1");
  if (!(c.flow_noise >= 0.0)) fail("config-value", "flow_noise must be >= 0");
  const bool paths = c.features || c.superpixels || c.flows || c.labels;
  if (c.scene && (paths || !c.bundles.empty()))
    fail("config-conflict", "give either a scene spec or recorded inputs, not both");
  if (paths && !c.bundles.empty()) fail("config-conflict", "give either bundle directories or explicit paths");
  if (paths && !(c.features && c.superpixels && c.flows && c.labels))
    fail("config-missing", "explicit inputs need features, superpixels, flows and labels");
  auto policy = c.sampling;
  policy.validate();
}

// Input paths inside a config file are relative to that file; `out` and
// flag values stay relative to the working directory.
inline std::string resolve_input_path(const std::string& key, const std::string& value, const fs::path& base) {
  static const std::set<std::string> path_keys{"scene",  "features", "superpixels", "flows",      "labels",
                                               "model",  "resume",   "prediction",  "ground_truth"};
  auto resolve = [&](const std::string& v) {
    fs::path p(v);
    return p.is_relative() && !base.empty() ? (base / p).lexically_normal().string() : v;
  };
  if (key == "bundle") {
    std::string joined;
    for (const auto& part : io::split(value, ',')) joined += (joined.empty() ? "" : ",") + resolve(part);
    return joined;
  }
  return path_keys.count(key) ? resolve(value) : value;
}

// Config file first, then flag overrides in the given order (flags win).
inline PipelineConfig load_config(const std::optional<fs::path>& file,
                                  const std::vector<std::pair<std::string, std::string>>& overrides) {
  PipelineConfig c;
  if (file) {
    const auto text = io::read_file(*file);
    for (const auto& e : io::parse_key_values(text, file->string())) {
      try {
        apply_setting(c, e.key, resolve_input_path(e.key, e.value, file->parent_path()));
      } catch (const Error& err) {
        fail(err.code(), file->string(), ":", e.line, ": ", std::string(err.what()).substr(err.code().size() + 2));
      }
    }
  }
  for (const auto& [k, v] : overrides) apply_setting(c, k, v);
  c.sampling.seed = c.seed;
  validate_config(c);
  return c;
}

// One labeled sequence with its target frame.
struct Sequence {
  std::string name;
  FeatureStack features;
  SuperpixelStack superpixels;
  FlowSequence flows;
  std::vector<LabelMap> labels;
  std::size_t target = 0;
  std::optional<std::uint32_t> classes;
};

inline Sequence read_sequence(const fs::path& features, const fs::path& superpixels, const fs::path& flows,
                              const fs::path& labels, const std::optional<std::size_t>& target) {
  Sequence s{features.parent_path().string(),
             io::to_feature_stack(io::read_tensor(features), features.string()),
             io::to_superpixel_stack(io::read_index_map(superpixels), superpixels.string()),
             io::to_flow_sequence(io::read_tensor(flows), flows.string()),
             io::to_label_maps(io::read_index_map(labels), labels.string()),
             0,
             std::nullopt};
  const auto n = s.features.frames();
  if (s.labels.size() != n)
    fail("shape-mismatch", labels.string(), " holds ", s.labels.size(), " frames, features ", n);
  s.target = target.value_or(n / 2);
  if (s.target >= n) fail("target-out-of-range", "target ", s.target, " but sequence has ", n, " frames");
  validate_stack(s.features, s.superpixels);
  validate_flows(s.flows, n, s.features.height(), s.features.width());
  return s;
}

inline synth::SceneBundle generate_scene(const PipelineConfig& c) {
  if (!c.scene) fail("config-missing", "no scene spec given");
  auto spec = synth::parse_scene_spec(io::read_file(*c.scene), c.scene->string());
  if (c.target) spec.target = *c.target;
  auto bundle = synth::generate(spec);
  if (c.flow_noise > 0.0) bundle = synth::corrupt_flow(bundle, c.flow_noise, c.seed);
  return bundle;
}

inline std::vector<Sequence> load_sequences(const PipelineConfig& c) {
  std::vector<Sequence> out;
  if (c.scene) {
    auto b = generate_scene(c);
    out.push_back({c.scene->string(), std::move(b.features), std::move(b.superpixels), std::move(b.flows),
                   std::move(b.labels), b.spec.target, static_cast<std::uint32_t>(b.spec.num_classes)});
  } else if (!c.bundles.empty()) {
    for (const auto& d : c.bundles)
      out.push_back(read_sequence(d / "features.tnsr", d / "superpixels.imap", d / "flows.tnsr",
                                  d / "labels.imap", c.target));
  } else if (c.features) {
    out.push_back(read_sequence(*c.features, *c.superpixels, *c.flows, *c.labels, c.target));
  } else {
    fail("config-missing", "no input: set scene, bundle, or features/superpixels/flows/labels");
  }
  return out;
}

inline const Sequence& single_sequence(const std::vector<Sequence>& seqs) {
  if (seqs.size() != 1) fail("config-value", "this command takes exactly one sequence, got ", seqs.size());
  return seqs.front();
}

inline std::uint32_t class_count(const PipelineConfig& c, const std::vector<Sequence>& seqs) {
  if (c.classes) return *c.classes;
  std::uint32_t n = 0;
  for (const auto& s : seqs) {
    if (s.classes) n = std::max(n, *s.classes);
    for (const auto& l : s.labels)
      for (auto v : l.values())
        if (v != kIgnoreLabel) n = std::max(n, v + 1);
  }
  if (n == 0) fail("config-missing", "cannot infer the number of classes; set classes");
  return n;
}

inline learn::Sample make_sample(const PipelineConfig& c, const Sequence& s, learn::ViewMode view) {
  return learn::make_sample(s.features, s.superpixels, s.flows, s.labels[s.target], s.target, c.sampling, c.tau,
                            view, c.threads);
}

// Model file: TNSR (classes, channels + 1), bias in the last column.
inline io::Tensor head_tensor(std::size_t classes, std::size_t channels, std::span<const double> weights,
                              std::span<const double> bias) {
  io::Tensor t{{static_cast<std::uint32_t>(classes), static_cast<std::uint32_t>(channels + 1)}, {}};
  for (std::size_t k = 0; k < classes; ++k) {
    for (std::size_t ch = 0; ch < channels; ++ch) t.values.push_back(weights[k * channels + ch]);
    t.values.push_back(bias[k]);
  }
  return t;
}

inline learn::LinearHead head_from_tensor(const io::Tensor& t, const std::string& name) {
  if (t.dims.size() != 2 || t.dims[1] < 2)
    fail_io(name, ": expected a rank-2 model tensor (classes, channels + 1)");
  const std::size_t ncl = t.dims[0], c = t.dims[1] - 1;
  learn::LinearHead h(ncl, c);
  for (std::size_t k = 0; k < ncl; ++k) {
    for (std::size_t ch = 0; ch < c; ++ch) h.w(k, ch) = t.values[k * (c + 1) + ch];
    h.bias[k] = t.values[k * (c + 1) + c];
  }
  return h;
}

inline learn::LinearHead read_model(const fs::path& path) {
  if (!fs::exists(path)) fail("missing-model", path.string(), ": model file not found");
  return head_from_tensor(io::read_tensor(path), path.string());
}

inline void write_model(const fs::path& path, const learn::LinearHead& h) {
  io::write_tensor(path, head_tensor(h.classes, h.channels, h.weights, h.bias));
}

inline std::string format_loss_csv(const std::vector<double>& trace) {
  std::ostringstream os;
  os << "epoch,loss\n";
  for (std::size_t e = 0; e < trace.size(); ++e) os << e + 1 << "," << io::format_real(trace[e]) << "\n";
  return os.str();
}

// Table CSV with region ids translated back to the input's own numbering.
inline std::string format_matches_csv(const CorrespondenceTable& table, const RelabelResult& relabel) {
  std::vector<std::map<std::uint32_t, std::uint32_t>> inverse(relabel.mapping.size());
  for (std::size_t i = 0; i < relabel.mapping.size(); ++i)
    for (const auto& [orig, compact] : relabel.mapping[i]) inverse[i][compact] = orig;
  std::ostringstream os;
  os << "target_region,frame,source_region,iou_fwd,iou_bwd\n";
  for (std::uint32_t j = 0; j < table.regions(); ++j)
    for (const auto& m : table.entries[j])
      os << inverse[table.target].at(j) << "," << m.frame << "," << inverse[m.frame].at(m.source_region) << ","
         << io::format_real(m.score.iou_forward) << "," << io::format_real(m.score.iou_backward) << "\n";
  return os.str();
}

inline void ensure_out(const PipelineConfig& c) {
  std::error_code ec;
  fs::create_directories(c.out, ec);
  if (ec) fail_io(c.out.string(), ": cannot create output directory: ", ec.message());
}

// ---- commands ----

inline void cmd_generate(const PipelineConfig& c, std::ostream& log) {
  auto b = generate_scene(c);
  ensure_out(c);
  io::write_tensor(c.out / "features.tnsr", io::to_tensor(b.features));
  io::write_index_map(c.out / "superpixels.imap", io::to_index_map(b.superpixels));
  io::write_tensor(c.out / "flows.tnsr", io::to_tensor(b.flows, b.spec.height, b.spec.width));
  io::write_index_map(c.out / "labels.imap", io::to_index_map(b.labels));
  io::write_file(c.out / "truth.csv", synth::format_truth_csv(b.truth));
  log << "generated " << b.spec.frames << " frames " << b.spec.height << "x" << b.spec.width << ", "
      << b.superpixels.region_count() << " regions, " << b.truth.size() << " truth rows, target "
      << b.spec.target << " -> " << c.out.string() << "\n";
}

inline void cmd_match(const PipelineConfig& c, std::ostream& log) {
  const auto seqs = load_sequences(c);
  const auto& s = single_sequence(seqs);
  const auto relabel = relabel_contiguous(s.superpixels);
  const auto frames = sample_frames(s.features.frames(), s.target, c.sampling);
  const auto r = build_table(s.target, frames, relabel.stack, s.flows, c.tau, c.threads);
  ensure_out(c);
  io::write_file(c.out / "correspondences.csv", format_matches_csv(r.table, relabel));
  io::write_index_map(c.out / "canonical.imap", io::to_index_map(r.canonical));
  io::write_file(c.out / "stats.csv", format_stats_csv(correspondence_stats({r.table})));
  std::map<std::size_t, std::size_t> per_frame;
  for (const auto& e : r.table.entries)
    for (const auto& m : e) ++per_frame[m.frame];
  for (auto f : r.frames) log << "frame " << f << ": " << per_frame[f] << " matches\n";
  log << r.table.total_matches() << " matches over " << r.frames.size() << " frames -> " << c.out.string()
      << "\n";
}

struct Inference {
  DenseScoreMap scores;
  LabelMap prediction;
  std::size_t frames_used = 0;
};

inline Inference infer_sequence(const PipelineConfig& c, const learn::LinearHead& head, const Sequence& s) {
  auto sample = make_sample(c, s, c.model.view);
  auto f = learn::forward(head, sample, c.model);
  return {f.output, learn::argmax_labels(f.output), sample.frames.size()};
}

inline void cmd_infer(const PipelineConfig& c, std::ostream& log) {
  if (!c.model_file) fail("missing-model", "infer needs model = <path to model.tnsr>");
  const auto head = read_model(*c.model_file);
  const auto seqs = load_sequences(c);
  const auto& s = single_sequence(seqs);
  auto r = infer_sequence(c, head, s);
  ensure_out(c);
  io::write_index_map(c.out / "prediction.imap", io::to_index_map(r.prediction));
  io::write_tensor(c.out / "scores.tnsr",
                   {{static_cast<std::uint32_t>(r.scores.channels), static_cast<std::uint32_t>(r.scores.height),
                     static_cast<std::uint32_t>(r.scores.width)},
                    r.scores.data});
  log << "inferred target frame " << s.target << " from " << r.frames_used << " frame(s) ("
      << to_string(c.model.spatial) << "/" << to_string(c.model.temporal) << ", " << learn::to_string(c.model.view)
      << " view) -> " << c.out.string() << "\n";
}

inline void cmd_train(const PipelineConfig& c, std::ostream& log) {
  const auto seqs = load_sequences(c);
  std::vector<learn::Sample> samples;
  for (const auto& s : seqs) samples.push_back(make_sample(c, s, c.model.view));
  const auto ncl = class_count(c, seqs);
  const auto channels = seqs.front().features.channels();

  learn::OptimizerState opt{c.learning_rate, c.momentum, c.weight_decay, {}};
  auto head = learn::LinearHead::random(ncl, channels, c.seed, c.init_scale);
  if (c.resume) {
    head = read_model(*c.resume / "model.tnsr");
    auto v = head_from_tensor(io::read_tensor(*c.resume / "optimizer.tnsr"),
                              (*c.resume / "optimizer.tnsr").string());
    opt.velocity = {v.weights, v.bias};
  }
  if (head.classes != ncl || head.channels != channels)
    fail("shape-mismatch", "model is ", head.classes, "x", head.channels, " but data needs ", ncl, "x", channels);

  const auto trace = learn::train(samples, head, opt, c.epochs, c.model);
  ensure_out(c);
  write_model(c.out / "model.tnsr", head);
  if (opt.velocity.empty()) opt.velocity = {std::vector<double>(head.weights.size()), std::vector<double>(ncl)};
  io::write_tensor(c.out / "optimizer.tnsr", head_tensor(ncl, channels, opt.velocity[0], opt.velocity[1]));
  io::write_file(c.out / "loss.csv", format_loss_csv(trace));
  log << "trained " << c.epochs << " epoch(s) on " << samples.size() << " sequence(s)";
  if (!trace.empty()) log << ", final loss " << io::format_real(trace.back());
  log << " -> " << c.out.string() << "\n";
}

inline LabelMap read_label_frame(const fs::path& path, std::size_t frame) {
  auto maps = io::to_label_maps(io::read_index_map(path), path.string());
  if (maps.size() == 1) return maps.front();
  if (frame >= maps.size()) fail("target-out-of-range", path.string(), " has ", maps.size(), " frames");
  return maps[frame];
}

inline void cmd_eval(const PipelineConfig& c, std::ostream& log) {
  std::vector<Sequence> seqs;
  if (c.scene || !c.bundles.empty() || c.features) seqs = load_sequences(c);
  const Sequence* s = seqs.empty() ? nullptr : &single_sequence(seqs);
  const std::size_t target = s ? s->target : c.target.value_or(0);

  auto load_gt = [&]() -> LabelMap {
    if (c.ground_truth) return read_label_frame(*c.ground_truth, target);
    if (!s) fail("config-missing", "eval needs ground_truth or an input sequence");
    return s->labels[target];
  };
  auto load_pred = [&]() -> LabelMap {
    if (c.prediction) return read_label_frame(*c.prediction, target);
    if (c.model_file && s) return infer_sequence(c, read_model(*c.model_file), *s).prediction;
    fail("config-missing", "eval needs prediction = <path> or a model with an input sequence");
  };
  const LabelMap gt = load_gt();
  const LabelMap pred = load_pred();

  std::uint32_t ncl = c.classes.value_or(0);
  if (!c.classes) {
    if (s && s->classes) ncl = *s->classes;
    for (const auto* m : {&gt, &pred})
      for (auto v : m->values())
        if (v != kIgnoreLabel) ncl = std::max(ncl, v + 1);
  }
  eval::ConfusionMatrix cm(std::max<std::uint32_t>(ncl, 1));
  eval::accumulate(cm, pred, gt);
  const auto m = eval::metrics(cm);
  std::string csv = "metric,value\n" + eval::format_metrics_csv(m);
  if (c.oracle) {
    if (!s) fail("config-missing", "oracle rows need the superpixels of an input sequence");
    eval::ConfusionMatrix ocm(cm.classes());
    eval::accumulate(ocm, eval::oracle_label(s->superpixels, target, gt), gt);
    csv += eval::format_metrics_csv(eval::metrics(ocm), "oracle_");
  }
  ensure_out(c);
  io::write_file(c.out / "metrics.csv", csv);
  io::write_file(c.out / "bpr.csv", eval::format_bpr_csv(eval::boundary_pr_curve(pred, gt, c.bpr_tolerances)));
  log << eval::format_metrics_table(m);
}

// Multi-view accuracy as the sampling window widens.
inline void cmd_sweep(const PipelineConfig& c, std::ostream& log) {
  if (!c.model_file) fail("missing-model", "sweep needs model = <path to model.tnsr>");
  const auto head = read_model(*c.model_file);
  const auto seqs = load_sequences(c);
  const auto ncl = std::max(class_count(c, seqs), head.classes > 0 ? static_cast<std::uint32_t>(head.classes) : 1u);
  std::ostringstream os;
  os << "max_distance,mean_frames,pixel_acc,mean_acc,mean_iou,fw_iou\n";
  for (auto d : c.max_distances) {
    auto cfg = c;
    cfg.sampling.max_distance = d;
    cfg.model.view = learn::ViewMode::multi;
    eval::ConfusionMatrix cm(ncl);
    double frames = 0;
    for (const auto& s : seqs) {
      auto r = infer_sequence(cfg, head, s);
      eval::accumulate(cm, r.prediction, s.labels[s.target]);
      frames += static_cast<double>(r.frames_used);
    }
    const auto m = eval::metrics(cm);
    os << d << "," << io::format_real(frames / static_cast<double>(seqs.size())) << ","
       << io::format_real(m.pixel_acc) << "," << io::format_real(m.mean_acc) << "," << io::format_real(m.mean_iou)
       << "," << io::format_real(m.fw_iou) << "\n";
    log << "max_distance " << d << ": mean_iou " << io::format_real(m.mean_iou) << "\n";
  }
  ensure_out(c);
  io::write_file(c.out / "sweep.csv", os.str());
}

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"generate", "match", "infer", "train", "eval", "sweep"};
  return names;
}

inline int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::validation: return 1;
    case ErrorKind::io: return 2;
    case ErrorKind::internal: return 3;
  }
  return 3;
}

inline void dispatch(const std::string& command, const PipelineConfig& c, std::ostream& log) {
  if (command == "generate") cmd_generate(c, log);
  else if (command == "match") cmd_match(c, log);
  else if (command == "infer") cmd_infer(c, log);
  else if (command == "train") cmd_train(c, log);
  else if (command == "eval") cmd_eval(c, log);
  else if (command == "sweep") cmd_sweep(c, log);
  else fail("unknown-command", "unknown command \"", command, "\"");
}

// 0 ok, 1 validation, 2 I/O, 3 internal.
inline int run(const std::string& command, const std::optional<fs::path>& config_file,
               const std::vector<std::pair<std::string, std::string>>& overrides, std::ostream& log,
               std::ostream& err) {
  try {
    dispatch(command, load_config(config_file, overrides), log);
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    err << "error: internal: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace std2p::pipeline
