#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "std2p/error.hpp"
#include "std2p/grid.hpp"
#include "std2p/io.hpp"
#include "std2p/rng.hpp"

namespace std2p::synth {

// Axis-aligned rectangle translating by an integer velocity each frame.
struct SceneObject {
  int row = 0;
  int col = 0;
  int height = 1;
  int width = 1;
  int vrow = 0;
  int vcol = 0;
  std::uint32_t label = 1;
  int splits = 1;  // vertical strips, each its own superpixel
};

struct SceneSpec {
  std::size_t frames = 1;
  std::size_t height = 8;
  std::size_t width = 8;
  std::size_t channels = 1;
  std::uint32_t num_classes = 2;
  std::uint32_t background = 0;
  std::size_t target = 0;  // frame the truth table is anchored to
  std::vector<SceneObject> objects;
  std::vector<std::vector<double>> class_means;  // num_classes x channels
  double noise_std = 0.0;
  std::uint64_t seed = 0;
};

struct TruthRow {
  std::size_t frame;
  std::uint32_t src_region;
  std::uint32_t target_region;
  friend auto operator<=>(const TruthRow&, const TruthRow&) = default;
};

struct SceneBundle {
  SceneSpec spec;
  FeatureStack features;
  SuperpixelStack superpixels;
  FlowSequence flows;
  std::vector<LabelMap> labels;
  std::vector<TruthRow> truth;  // sorted by (frame, src_region)
};

inline void validate_spec(const SceneSpec& s) {
  if (s.frames == 0 || s.height == 0 || s.width == 0 || s.channels == 0)
    fail("invalid-spec", "frames, height, width and channels must be >= 1");
  if (s.num_classes == 0 || s.background >= s.num_classes)
    fail("invalid-spec", "background class ", s.background, " outside [0, ", s.num_classes, ")");
  if (s.target >= s.frames) fail("invalid-spec", "target frame ", s.target, " >= frames ", s.frames);
  if (!(s.noise_std >= 0.0)) fail("invalid-spec", "noise_std must be >= 0");
  if (s.class_means.size() != s.num_classes)
    fail("invalid-spec", "expected ", s.num_classes, " class means, got ", s.class_means.size());
  for (std::size_t k = 0; k < s.class_means.size(); ++k)
    if (s.class_means[k].size() != s.channels)
      fail("invalid-spec", "class mean ", k, " has ", s.class_means[k].size(),
           " channels, expected ", s.channels);
  const int last = static_cast<int>(s.frames) - 1;
  for (std::size_t o = 0; o < s.objects.size(); ++o) {
    const auto& ob = s.objects[o];
    if (ob.height < 1 || ob.width < 1) fail("invalid-spec", "object ", o, " has empty size");
    if (ob.splits < 1 || ob.splits > ob.width)
      fail("invalid-spec", "object ", o, " splits ", ob.splits, " must be in [1, width=", ob.width,
           "]");
    if (ob.label >= s.num_classes)
      fail("invalid-spec", "object ", o, " class ", ob.label, " >= ", s.num_classes);
    for (int i : {0, last}) {
      const int r = ob.row + ob.vrow * i, c = ob.col + ob.vcol * i;
      if (r < 0 || c < 0 || r + ob.height > static_cast<int>(s.height) ||
          c + ob.width > static_cast<int>(s.width))
        fail("object-leaves-grid", "object ", o, " at frame ", i, " spans rows [", r, ",",
             r + ob.height, ") cols [", c, ",", c + ob.width, ") outside ", s.height, "x",
             s.width);
    }
  }
}

// Renders the scene. Later objects overwrite earlier ones (painter's order).
// Superpixels per frame are numbered by first appearance in row-major order.
inline SceneBundle generate(const SceneSpec& spec) {
  validate_spec(spec);
  const std::size_t n = spec.frames, h = spec.height, w = spec.width, hw = h * w;

  // Track ids: 0 = background, then each object's strips in order.
  std::vector<std::uint32_t> first_track(spec.objects.size());
  std::uint32_t tracks = 1;
  for (std::size_t o = 0; o < spec.objects.size(); ++o) {
    first_track[o] = tracks;
    tracks += static_cast<std::uint32_t>(spec.objects[o].splits);
  }

  std::vector<std::uint32_t> track_map(n * hw, 0);
  std::vector<LabelMap> labels;
  FlowSequence flows;
  for (std::size_t k = 0; k + 1 < n; ++k) {
    flows.forward.emplace_back(h, w, FlowDirection::forward);
    flows.backward.emplace_back(h, w, FlowDirection::backward);
  }
  for (std::size_t i = 0; i < n; ++i) {
    LabelMap lab(h, w, spec.background);
    for (std::size_t o = 0; o < spec.objects.size(); ++o) {
      const auto& ob = spec.objects[o];
      const int r0 = ob.row + ob.vrow * static_cast<int>(i);
      const int c0 = ob.col + ob.vcol * static_cast<int>(i);
      for (int dr = 0; dr < ob.height; ++dr)
        for (int dc = 0; dc < ob.width; ++dc) {
          const auto x = static_cast<std::size_t>(r0 + dr), y = static_cast<std::size_t>(c0 + dc);
          const auto strip = static_cast<std::uint32_t>(dc * ob.splits / ob.width);
          track_map[i * hw + x * w + y] = first_track[o] + strip;
          lab(x, y) = ob.label;
          if (i + 1 < n) flows.forward[i].set(x, y, ob.vrow, ob.vcol);
          if (i > 0) flows.backward[i - 1].set(x, y, -ob.vrow, -ob.vcol);
        }
    }
    labels.push_back(std::move(lab));
  }

  auto relabeled = relabel_contiguous(SuperpixelStack(n, h, w, track_map, tracks));

  std::vector<TruthRow> truth;
  const auto& target_map = relabeled.mapping[spec.target];
  for (std::size_t i = 0; i < n; ++i)
    for (auto [track, local] : relabeled.mapping[i])
      if (auto it = target_map.find(track); it != target_map.end())
        truth.push_back({i, local, it->second});
  std::sort(truth.begin(), truth.end());

  FeatureStack features(n, spec.channels, h, w);
  auto rng = SeedSplitter(spec.seed).stream("features");
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < spec.channels; ++c)
      for (std::size_t x = 0; x < h; ++x)
        for (std::size_t y = 0; y < w; ++y) {
          double v = spec.class_means[labels[i](x, y)][c];
          if (spec.noise_std > 0.0) v += spec.noise_std * normal(rng);
          features(i, c, x, y) = v;
        }

  return {spec, std::move(features), std::move(relabeled.stack), std::move(flows),
          std::move(labels), std::move(truth)};
}

// Adds iid Gaussian noise to every flow component in both directions.
inline SceneBundle corrupt_flow(const SceneBundle& bundle, double noise_std, std::uint64_t seed) {
  if (!(noise_std >= 0.0)) fail("invalid-argument", "noise_std must be >= 0, got ", noise_std);
  SceneBundle out = bundle;
  if (noise_std == 0.0) return out;
  auto rng = SeedSplitter(seed).stream("flow-noise");
  std::normal_distribution<double> normal(0.0, noise_std);
  for (std::size_t k = 0; k < out.flows.steps(); ++k)
    for (auto* f : {&out.flows.forward[k], &out.flows.backward[k]})
      for (auto& v : f->values()) v += normal(rng);
  return out;
}

// Parameters for randomly laid out scenes whose objects occupy disjoint
// horizontal lanes, so every object stays fully visible in every frame.
struct LaneSceneParams {
  std::size_t frames = 5;
  std::size_t height = 24;
  std::size_t width = 32;
  std::size_t channels = 3;
  std::uint32_t num_classes = 3;
  std::size_t lanes = 3;
  int min_size = 3;
  int max_size = 6;
  int max_speed = 1;
  int max_splits = 2;
  double mean_scale = 1.0;  // class k has mean mean_scale * e_(k mod channels)
  double noise_std = 0.0;
};

inline SceneSpec make_lane_scene(const LaneSceneParams& p, std::uint64_t seed) {
  SceneSpec s;
  s.frames = p.frames;
  s.height = p.height;
  s.width = p.width;
  s.channels = p.channels;
  s.num_classes = p.num_classes;
  s.background = 0;
  s.target = p.frames / 2;
  s.noise_std = p.noise_std;
  s.seed = seed;
  for (std::uint32_t k = 0; k < p.num_classes; ++k) {
    std::vector<double> mean(p.channels, 0.0);
    mean[k % p.channels] = p.mean_scale;
    s.class_means.push_back(std::move(mean));
  }
  auto rng = SeedSplitter(seed).stream("layout");
  auto uniform = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  const int lane_h = static_cast<int>(p.height / std::max<std::size_t>(p.lanes, 1));
  const int span = static_cast<int>(p.frames) - 1;
  for (std::size_t lane = 0; lane < p.lanes; ++lane) {
    SceneObject ob;
    ob.height = std::min(uniform(p.min_size, p.max_size), lane_h - 1);
    ob.width = uniform(p.min_size, p.max_size);
    ob.vrow = 0;
    ob.vcol = uniform(-p.max_speed, p.max_speed);
    // Keep the whole trajectory inside the grid.
    const int travel = ob.vcol * span;
    const int lo = std::max(0, -travel);
    const int hi = static_cast<int>(p.width) - ob.width - std::max(0, travel);
    if (hi < lo || ob.height < 1) continue;
    ob.col = uniform(lo, hi);
    ob.row = static_cast<int>(lane) * lane_h + uniform(0, lane_h - 1 - ob.height);
    ob.label = p.num_classes > 1 ? static_cast<std::uint32_t>(uniform(1, p.num_classes - 1)) : 0;
    ob.splits = std::min(uniform(1, p.max_splits), ob.width);
    s.objects.push_back(ob);
  }
  return s;
}

// ---- text config ----

inline SceneSpec parse_scene_spec(std::string_view text, const std::string& name = "<scene>") {
  SceneSpec s;
  bool means_given = false;
  auto to_int = [&](const io::ConfigEntry& e) -> long long {
    try {
      std::size_t used = 0;
      long long v = std::stoll(e.value, &used);
      if (used != e.value.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      fail("invalid-spec", name, ":", e.line, ": key '", e.key, "' expects an integer, got '",
           e.value, "'");
    }
  };
  auto to_real = [&](const io::ConfigEntry& e, const std::string& v) -> double {
    try {
      std::size_t used = 0;
      double d = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument("trailing");
      return d;
    } catch (const std::exception&) {
      fail("invalid-spec", name, ":", e.line, ": key '", e.key, "' expects a number, got '", v,
           "'");
    }
  };
  auto nonneg = [&](const io::ConfigEntry& e) {
    auto v = to_int(e);
    if (v < 0) fail("invalid-spec", name, ":", e.line, ": key '", e.key, "' must be >= 0");
    return v;
  };
  bool target_given = false;
  for (const auto& e : io::parse_key_values(text, name)) {
    if (e.key == "frames") s.frames = static_cast<std::size_t>(nonneg(e));
    else if (e.key == "height") s.height = static_cast<std::size_t>(nonneg(e));
    else if (e.key == "width") s.width = static_cast<std::size_t>(nonneg(e));
    else if (e.key == "channels") s.channels = static_cast<std::size_t>(nonneg(e));
    else if (e.key == "classes") s.num_classes = static_cast<std::uint32_t>(nonneg(e));
    else if (e.key == "background") s.background = static_cast<std::uint32_t>(nonneg(e));
    else if (e.key == "target") { s.target = static_cast<std::size_t>(nonneg(e)); target_given = true; }
    else if (e.key == "noise_std") s.noise_std = to_real(e, e.value);
    else if (e.key == "seed") s.seed = static_cast<std::uint64_t>(nonneg(e));
    else if (e.key == "class_mean") {
      std::vector<double> mean;
      for (const auto& part : io::split(e.value, ',')) mean.push_back(to_real(e, part));
      s.class_means.push_back(std::move(mean));
      means_given = true;
    } else if (e.key == "object") {
      auto parts = io::split(e.value, ',');
      if (parts.size() != 8)
        fail("invalid-spec", name, ":", e.line,
             ": object expects row,col,height,width,vrow,vcol,class,splits");
      std::vector<int> v;
      for (const auto& part : parts) {
        io::ConfigEntry sub{e.key, part, e.line};
        v.push_back(static_cast<int>(to_int(sub)));
      }
      if (v[6] < 0) fail("invalid-spec", name, ":", e.line, ": object class must be >= 0");
      s.objects.push_back({v[0], v[1], v[2], v[3], v[4], v[5], static_cast<std::uint32_t>(v[6]), v[7]});
    } else {
      fail("invalid-spec", name, ":", e.line, ": unknown key '", e.key, "'");
    }
  }
  if (!target_given) s.target = s.frames / 2;
  if (!means_given) {
    // One-hot class means by default.
    for (std::uint32_t k = 0; k < s.num_classes; ++k) {
      std::vector<double> mean(s.channels, 0.0);
      mean[k % std::max<std::size_t>(s.channels, 1)] = 1.0;
      s.class_means.push_back(std::move(mean));
    }
  }
  validate_spec(s);
  return s;
}

inline std::string format_scene_spec(const SceneSpec& s) {
  std::ostringstream os;
  os << "frames = " << s.frames << "\nheight = " << s.height << "\nwidth = " << s.width
     << "\nchannels = " << s.channels << "\nclasses = " << s.num_classes
     << "\nbackground = " << s.background << "\ntarget = " << s.target
     << "\nnoise_std = " << io::format_real(s.noise_std) << "\nseed = " << s.seed << "\n";
  for (const auto& mean : s.class_means) {
    os << "class_mean = ";
    for (std::size_t c = 0; c < mean.size(); ++c) os << (c ? "," : "") << io::format_real(mean[c]);
    os << "\n";
  }
  for (const auto& o : s.objects)
    os << "object = " << o.row << "," << o.col << "," << o.height << "," << o.width << "," << o.vrow
       << "," << o.vcol << "," << o.label << "," << o.splits << "\n";
  return os.str();
}

inline std::string format_truth_csv(const std::vector<TruthRow>& truth) {
  std::ostringstream os;
  os << "frame,src_region,target_region\n";
  for (const auto& r : truth) os << r.frame << "," << r.src_region << "," << r.target_region << "\n";
  return os.str();
}

}  // namespace std2p::synth
