#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "std2p/correspond.hpp"
#include "std2p/error.hpp"
#include "std2p/grid.hpp"

// Spatio-temporal data-driven pooling: spatial pooling over superpixels,
// temporal pooling over matched frames, and broadcasting region values back
// to the target frame's pixels. All three layers are parameter-free.
namespace std2p {

// Per-frame region features, shape (N, C, P). Entries whose region is absent
// from a frame are masked out and never read.
struct RegionFeatureStack {
  std::size_t frames = 0, channels = 0, regions = 0;
  PoolMode mode = PoolMode::avg;
  std::vector<double> data;           // (N, C, P)
  std::vector<std::uint8_t> present;  // (N, P)
  std::vector<std::int64_t> argmax;   // (N, C, P) linear pixel index; max mode only

  RegionFeatureStack() = default;
  RegionFeatureStack(std::size_t n, std::size_t c, std::size_t p, PoolMode m = PoolMode::avg)
      : frames(n), channels(c), regions(p), mode(m), data(n * c * p, 0.0), present(n * p, 0) {
    if (m == PoolMode::max) argmax.assign(n * c * p, -1);
  }

  std::size_t offset(std::size_t i, std::size_t c, std::size_t j) const {
    return (i * channels + c) * regions + j;
  }
  double& operator()(std::size_t i, std::size_t c, std::size_t j) { return data[offset(i, c, j)]; }
  double operator()(std::size_t i, std::size_t c, std::size_t j) const { return data[offset(i, c, j)]; }
  bool is_present(std::size_t i, std::size_t j) const { return present[i * regions + j] != 0; }

  bool same_shape(const RegionFeatureStack& o) const {
    return frames == o.frames && channels == o.channels && regions == o.regions;
  }
};

// Fused region features, shape (C, P), with the matched-frame count K_j.
struct RegionFeatureMap {
  std::size_t channels = 0, regions = 0;
  PoolMode mode = PoolMode::avg;
  std::vector<double> data;              // (C, P)
  std::vector<std::size_t> matched;      // K_j, (P)
  std::vector<std::int64_t> arg_frame;   // (C, P); max mode only

  RegionFeatureMap() = default;
  RegionFeatureMap(std::size_t c, std::size_t p, PoolMode m = PoolMode::avg)
      : channels(c), regions(p), mode(m), data(c * p, 0.0), matched(p, 0) {
    if (m == PoolMode::max) arg_frame.assign(c * p, -1);
  }

  double& operator()(std::size_t c, std::size_t j) { return data[c * regions + j]; }
  double operator()(std::size_t c, std::size_t j) const { return data[c * regions + j]; }

  bool same_shape(const RegionFeatureMap& o) const {
    return channels == o.channels && regions == o.regions;
  }
};

// Dense per-pixel output, shape (C, H, W).
struct DenseScoreMap {
  std::size_t channels = 0, height = 0, width = 0;
  std::vector<double> data;

  DenseScoreMap() = default;
  DenseScoreMap(std::size_t c, std::size_t h, std::size_t w)
      : channels(c), height(h), width(w), data(c * h * w, 0.0) {}

  double& operator()(std::size_t c, std::size_t x, std::size_t y) { return data[(c * height + x) * width + y]; }
  double operator()(std::size_t c, std::size_t x, std::size_t y) const {
    return data[(c * height + x) * width + y];
  }
  std::span<const double> plane(std::size_t c) const { return {data.data() + c * height * width, height * width}; }

  bool same_shape(const DenseScoreMap& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
};

namespace detail {

inline void check_canonical(const SuperpixelStack& s) {
  const auto p = s.region_count();
  for (std::size_t i = 0; i < s.frames(); ++i) {
    const auto lab = s.frame(i);
    for (std::size_t k = 0; k < lab.size(); ++k)
      if (lab[k] >= p && lab[k] != kNoRegion)
        fail("non-canonical-superpixels", "index ", lab[k], " at (frame ", i, ", row ",
             k / s.width(), ", col ", k % s.width(), ") is neither a region in [0, ", p,
             ") nor the no-match sentinel");
  }
}

}  // namespace detail

inline RegionFeatureStack spatial_pool_fwd(const FeatureStack& input, const SuperpixelStack& superpixels,
                                           PoolMode mode) {
  if (input.frames() != superpixels.frames() || input.height() != superpixels.height() ||
      input.width() != superpixels.width())
    fail("shape-mismatch", "features (N,H,W)=(", input.frames(), ",", input.height(), ",",
         input.width(), ") vs superpixels (", superpixels.frames(), ",", superpixels.height(), ",",
         superpixels.width(), ")");
  detail::check_canonical(superpixels);
  const auto n = input.frames(), c_n = input.channels();
  const auto p = superpixels.region_count();
  RegionFeatureStack out(n, c_n, p, mode);
  for (std::size_t i = 0; i < n; ++i)
    for (std::uint32_t j = 0; j < p; ++j) {
      const auto& omega = superpixels.region(i, j);
      if (omega.empty()) continue;
      out.present[i * p + j] = 1;
      for (std::size_t c = 0; c < c_n; ++c) {
        const auto plane = input.plane(i, c);
        if (mode == PoolMode::avg) {
          double sum = 0.0;
          for (auto k : omega) sum += plane[k];
          out(i, c, j) = sum / static_cast<double>(omega.size());
        } else {
          // Strict comparison keeps the first (lowest row-major) maximum.
          std::size_t best = omega.front();
          for (auto k : omega)
            if (plane[k] > plane[best]) best = k;
          out(i, c, j) = plane[best];
          out.argmax[out.offset(i, c, j)] = static_cast<std::int64_t>(best);
        }
      }
    }
  return out;
}

// dL/dI_s(i,c,x,y) = dL/dO_s(i,c,j) / |Ω_ij| for avg; routed to the recorded
// argmax pixel for max.
inline FeatureStack spatial_pool_bwd(const RegionFeatureStack& grad_out, const RegionFeatureStack& saved,
                                     const SuperpixelStack& superpixels, PoolMode mode) {
  if (!grad_out.same_shape(saved) || saved.frames != superpixels.frames() ||
      saved.regions != superpixels.region_count())
    fail("shape-mismatch", "spatial backward: gradient (", grad_out.frames, ",", grad_out.channels,
         ",", grad_out.regions, ") vs forward (", saved.frames, ",", saved.channels, ",",
         saved.regions, ") and superpixels (", superpixels.frames(), ", P=",
         superpixels.region_count(), ")");
  if (mode != saved.mode) fail("mode-mismatch", "backward mode differs from forward mode");
  FeatureStack grad(saved.frames, saved.channels, superpixels.height(), superpixels.width());
  for (std::size_t i = 0; i < saved.frames; ++i)
    for (std::uint32_t j = 0; j < saved.regions; ++j) {
      if (!saved.is_present(i, j)) continue;
      const auto& omega = superpixels.region(i, j);
      for (std::size_t c = 0; c < saved.channels; ++c) {
        auto plane = grad.plane(i, c);
        const double g = grad_out(i, c, j);
        if (mode == PoolMode::avg) {
          const double share = g / static_cast<double>(omega.size());
          for (auto k : omega) plane[k] += share;
        } else {
          plane[static_cast<std::size_t>(saved.argmax[saved.offset(i, c, j)])] += g;
        }
      }
    }
  return grad;
}

// O_t(c,j) = (1/K_j) Σ_{i: Ω_ij ≠ ∅} I_t(i,c,j) for avg; maximum over present
// frames (first frame wins ties) for max.
inline RegionFeatureMap temporal_pool_fwd(const RegionFeatureStack& input, PoolMode mode) {
  RegionFeatureMap out(input.channels, input.regions, mode);
  for (std::size_t j = 0; j < input.regions; ++j) {
    std::size_t k = 0;
    for (std::size_t i = 0; i < input.frames; ++i) k += input.is_present(i, j) ? 1 : 0;
    if (k == 0) fail("no-present-frame", "region ", j, " is present in no frame");
    out.matched[j] = k;
    for (std::size_t c = 0; c < input.channels; ++c) {
      if (mode == PoolMode::avg) {
        double sum = 0.0;
        for (std::size_t i = 0; i < input.frames; ++i)
          if (input.is_present(i, j)) sum += input(i, c, j);
        out(c, j) = sum / static_cast<double>(k);
      } else {
        std::int64_t best = -1;
        for (std::size_t i = 0; i < input.frames; ++i)
          if (input.is_present(i, j) &&
              (best < 0 || input(i, c, j) > input(static_cast<std::size_t>(best), c, j)))
            best = static_cast<std::int64_t>(i);
        out(c, j) = input(static_cast<std::size_t>(best), c, j);
        out.arg_frame[c * input.regions + j] = best;
      }
    }
  }
  return out;
}

// dL/dI_t(i,c,j) = dL/dO_t(c,j) / K_j at present entries for avg; routed to
// the recorded frame for max. Absent entries get exactly zero.
inline RegionFeatureStack temporal_pool_bwd(const RegionFeatureMap& grad_out, const RegionFeatureStack& saved_input,
                                            const RegionFeatureMap& saved_output, PoolMode mode) {
  if (!grad_out.same_shape(saved_output) || saved_output.channels != saved_input.channels ||
      saved_output.regions != saved_input.regions)
    fail("shape-mismatch", "temporal backward: gradient (", grad_out.channels, ",",
         grad_out.regions, ") vs forward output (", saved_output.channels, ",",
         saved_output.regions, ") and input (", saved_input.channels, ",", saved_input.regions, ")");
  if (mode != saved_output.mode) fail("mode-mismatch", "backward mode differs from forward mode");
  RegionFeatureStack grad(saved_input.frames, saved_input.channels, saved_input.regions);
  grad.present = saved_input.present;
  for (std::size_t j = 0; j < saved_input.regions; ++j)
    for (std::size_t c = 0; c < saved_input.channels; ++c) {
      const double g = grad_out(c, j);
      if (mode == PoolMode::avg) {
        const double share = g / static_cast<double>(saved_output.matched[j]);
        for (std::size_t i = 0; i < saved_input.frames; ++i)
          if (saved_input.is_present(i, j)) grad(i, c, j) = share;
      } else {
        const auto i = saved_output.arg_frame[c * saved_input.regions + j];
        grad(static_cast<std::size_t>(i), c, j) = g;
      }
    }
  return grad;
}

// O_r(c,x,y) = I_r(c, S_target(x,y)).
inline DenseScoreMap region_to_pixel_fwd(const RegionFeatureMap& input, const SuperpixelStack& superpixels,
                                         std::size_t frame) {
  if (frame >= superpixels.frames())
    fail("frame-out-of-range", "frame ", frame, " but stack has ", superpixels.frames());
  const auto lab = superpixels.frame(frame);
  const auto h = superpixels.height(), w = superpixels.width();
  DenseScoreMap out(input.channels, h, w);
  for (std::size_t q = 0; q < lab.size(); ++q) {
    const auto j = lab[q];
    if (j >= input.regions || input.matched[j] == 0)
      fail("missing-region-value", "pixel (row ", q / w, ", col ", q % w, ") has region ", j,
           " with no pooled value");
  }
  for (std::size_t c = 0; c < input.channels; ++c)
    for (std::size_t q = 0; q < lab.size(); ++q) out.data[c * h * w + q] = input(c, lab[q]);
  return out;
}

// dL/dI_r(c,j) = Σ_{S_target(x,y)=j} dL/dO_r(c,x,y), summed in row-major order.
inline RegionFeatureMap region_to_pixel_bwd(const DenseScoreMap& grad_out, const SuperpixelStack& superpixels,
                                            std::size_t frame, std::size_t regions) {
  if (frame >= superpixels.frames())
    fail("frame-out-of-range", "frame ", frame, " but stack has ", superpixels.frames());
  if (grad_out.height != superpixels.height() || grad_out.width != superpixels.width())
    fail("shape-mismatch", "region-to-pixel backward: gradient ", grad_out.height, "x",
         grad_out.width, " vs superpixels ", superpixels.height(), "x", superpixels.width());
  const auto lab = superpixels.frame(frame);
  const auto hw = lab.size();
  RegionFeatureMap grad(grad_out.channels, regions);
  for (std::size_t q = 0; q < hw; ++q)
    if (lab[q] >= regions)
      fail("missing-region-value", "pixel (row ", q / grad_out.width, ", col ", q % grad_out.width,
           ") has region ", lab[q], " outside [0, ", regions, ")");
  for (std::size_t c = 0; c < grad_out.channels; ++c)
    for (std::size_t q = 0; q < hw; ++q) grad(c, lab[q]) += grad_out.data[c * hw + q];
  return grad;
}

// The full pooling head: spatial -> temporal -> region-to-pixel over a
// canonical stack whose frame `target_position` is the target frame.
class Std2pHead {
 public:
  Std2pHead(PoolMode spatial, PoolMode temporal) : spatial_(spatial), temporal_(temporal) {}

  PoolMode spatial_mode() const { return spatial_; }
  PoolMode temporal_mode() const { return temporal_; }

  // When a table is given, the matched-frame counts implied by the canonical
  // stack must agree with it.
  DenseScoreMap forward(const FeatureStack& input, const SuperpixelStack& canonical,
                        std::size_t target_position, const CorrespondenceTable* table = nullptr) {
    if (target_position >= canonical.frames())
      fail("frame-out-of-range", "target position ", target_position, " but stack has ",
           canonical.frames(), " frames");
    State s{canonical, target_position, spatial_pool_fwd(input, canonical, spatial_), {}};
    s.fused = temporal_pool_fwd(s.pooled, temporal_);
    if (table) {
      if (table->regions() != canonical.region_count())
        fail_internal("table has ", table->regions(), " regions, canonical stack ",
                      canonical.region_count());
      for (std::uint32_t j = 0; j < table->regions(); ++j)
        if (table->matched_frames(j) != s.fused.matched[j])
          fail_internal("region ", j, ": table K=", table->matched_frames(j),
                        " but canonical stack gives K=", s.fused.matched[j]);
    }
    auto out = region_to_pixel_fwd(s.fused, canonical, target_position);
    state_.emplace(std::move(s));
    return out;
  }

  FeatureStack backward(const DenseScoreMap& grad_out) const {
    if (!state_) fail_internal("backward called before forward");
    const auto& s = *state_;
    auto g_fused = region_to_pixel_bwd(grad_out, s.canonical, s.target_position, s.fused.regions);
    auto g_pooled = temporal_pool_bwd(g_fused, s.pooled, s.fused, temporal_);
    return spatial_pool_bwd(g_pooled, s.pooled, s.canonical, spatial_);
  }

  const RegionFeatureMap& fused() const {
    if (!state_) fail_internal("no forward state");
    return state_->fused;
  }

 private:
  struct State {
    SuperpixelStack canonical;
    std::size_t target_position;
    RegionFeatureStack pooled;
    RegionFeatureMap fused;
  };
  PoolMode spatial_, temporal_;
  std::optional<State> state_;
};

// Restricts a feature stack to the given frames, in order.
inline FeatureStack select_frames(const FeatureStack& input, const std::vector<std::size_t>& frames) {
  FeatureStack out(frames.size(), input.channels(), input.height(), input.width());
  for (std::size_t k = 0; k < frames.size(); ++k) {
    if (frames[k] >= input.frames())
      fail("frame-out-of-range", "frame ", frames[k], " but stack has ", input.frames());
    for (std::size_t c = 0; c < input.channels(); ++c) {
      auto src = input.plane(frames[k], c);
      std::copy(src.begin(), src.end(), out.plane(k, c).begin());
    }
  }
  return out;
}

}  // namespace std2p
