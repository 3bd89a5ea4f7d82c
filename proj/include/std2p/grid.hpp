#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <vector>

#include "std2p/error.hpp"

namespace std2p {

// Reserved region index for pixels that belong to no pooling region
// (unmatched pixels of non-target frames in a canonical stack).
inline constexpr std::uint32_t kNoRegion = std::numeric_limits<std::uint32_t>::max();
// Reserved class value for unlabeled pixels.
inline constexpr std::uint32_t kIgnoreLabel = std::numeric_limits<std::uint32_t>::max();

// (row, col) grid coordinate.
struct Pixel {
  int row = 0;
  int col = 0;
  friend bool operator==(const Pixel&, const Pixel&) = default;
  friend auto operator<=>(const Pixel&, const Pixel&) = default;
};

enum class PoolMode { avg, max };

inline const char* to_string(PoolMode m) { return m == PoolMode::avg ? "avg" : "max"; }

// Dense per-frame features, shape (N, C, H, W), row-major with frame outermost.
// Also used for feature-shaped gradients.
class FeatureStack {
 public:
  FeatureStack(std::size_t frames, std::size_t channels, std::size_t height, std::size_t width)
      : FeatureStack(frames, channels, height, width,
                     std::vector<double>(frames * channels * height * width, 0.0)) {}

  FeatureStack(std::size_t frames, std::size_t channels, std::size_t height, std::size_t width,
               std::vector<double> values)
      : n_(frames), c_(channels), h_(height), w_(width), data_(std::move(values)) {
    if (n_ == 0 || c_ == 0 || h_ == 0 || w_ == 0)
      fail("shape-mismatch", "feature stack dimensions must be >= 1, got (", n_, ",", c_, ",", h_,
           ",", w_, ")");
    if (data_.size() != n_ * c_ * h_ * w_)
      fail("shape-mismatch", "feature stack payload has ", data_.size(), " values, expected ",
           n_ * c_ * h_ * w_);
  }

  std::size_t frames() const { return n_; }
  std::size_t channels() const { return c_; }
  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }
  std::size_t pixels() const { return h_ * w_; }
  std::size_t size() const { return data_.size(); }

  std::size_t offset(std::size_t i, std::size_t c, std::size_t x, std::size_t y) const {
    return ((i * c_ + c) * h_ + x) * w_ + y;
  }
  double& operator()(std::size_t i, std::size_t c, std::size_t x, std::size_t y) {
    return data_[offset(i, c, x, y)];
  }
  double operator()(std::size_t i, std::size_t c, std::size_t x, std::size_t y) const {
    return data_[offset(i, c, x, y)];
  }

  // Contiguous H*W plane of one (frame, channel).
  std::span<double> plane(std::size_t i, std::size_t c) {
    return {data_.data() + (i * c_ + c) * h_ * w_, h_ * w_};
  }
  std::span<const double> plane(std::size_t i, std::size_t c) const {
    return {data_.data() + (i * c_ + c) * h_ * w_, h_ * w_};
  }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  bool same_shape(const FeatureStack& o) const {
    return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
  }

 private:
  std::size_t n_, c_, h_, w_;
  std::vector<double> data_;
};

// Per-frame region-index maps, shape (N, H, W). Region pixel sets are built
// eagerly at construction and stored as row-major linear pixel indices.
class SuperpixelStack {
 public:
  SuperpixelStack(std::size_t frames, std::size_t height, std::size_t width,
                  std::vector<std::uint32_t> labels, std::uint32_t region_count)
      : n_(frames), h_(height), w_(width), p_(region_count), labels_(std::move(labels)) {
    if (n_ == 0 || h_ == 0 || w_ == 0)
      fail("shape-mismatch", "superpixel stack dimensions must be >= 1, got (", n_, ",", h_, ",",
           w_, ")");
    if (labels_.size() != n_ * h_ * w_)
      fail("shape-mismatch", "superpixel payload has ", labels_.size(), " labels, expected ",
           n_ * h_ * w_);
    regions_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) {
      auto& sets = regions_[i];
      sets.resize(p_);
      const std::uint32_t* lab = labels_.data() + i * h_ * w_;
      for (std::size_t k = 0; k < h_ * w_; ++k)
        if (lab[k] < p_) sets[lab[k]].push_back(static_cast<std::uint32_t>(k));
    }
  }

  // Region count inferred as max label + 1 (sentinels excluded).
  static SuperpixelStack from_labels(std::size_t frames, std::size_t height, std::size_t width,
                                     std::vector<std::uint32_t> labels) {
    std::uint32_t p = 0;
    for (auto v : labels)
      if (v != kNoRegion) p = std::max(p, v + 1);
    return SuperpixelStack(frames, height, width, std::move(labels), p);
  }

  std::size_t frames() const { return n_; }
  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }
  std::size_t pixels() const { return h_ * w_; }
  std::uint32_t region_count() const { return p_; }

  std::uint32_t operator()(std::size_t i, std::size_t x, std::size_t y) const {
    return labels_[(i * h_ + x) * w_ + y];
  }
  std::span<const std::uint32_t> frame(std::size_t i) const {
    return {labels_.data() + i * h_ * w_, h_ * w_};
  }
  std::span<const std::uint32_t> labels() const { return labels_; }

  // Ω_ij as sorted linear pixel indices; empty when region j is absent from frame i.
  const std::vector<std::uint32_t>& region(std::size_t i, std::uint32_t j) const {
    return regions_[i][j];
  }
  bool present(std::size_t i, std::uint32_t j) const { return !regions_[i][j].empty(); }

  bool same_grid(const SuperpixelStack& o) const { return h_ == o.h_ && w_ == o.w_; }

 private:
  std::size_t n_, h_, w_;
  std::uint32_t p_;
  std::vector<std::uint32_t> labels_;
  std::vector<std::vector<std::vector<std::uint32_t>>> regions_;
};

enum class FlowDirection { forward, backward };

// Per-pixel displacement (drow, dcol), shape (H, W, 2).
class FlowField {
 public:
  FlowField(std::size_t height, std::size_t width, FlowDirection direction)
      : FlowField(height, width, direction, std::vector<double>(height * width * 2, 0.0)) {}

  FlowField(std::size_t height, std::size_t width, FlowDirection direction,
            std::vector<double> displacement)
      : h_(height), w_(width), dir_(direction), data_(std::move(displacement)) {
    if (h_ == 0 || w_ == 0) fail("shape-mismatch", "flow field dimensions must be >= 1");
    if (data_.size() != h_ * w_ * 2)
      fail("shape-mismatch", "flow payload has ", data_.size(), " values, expected ", h_ * w_ * 2);
  }

  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }
  FlowDirection direction() const { return dir_; }

  double drow(std::size_t x, std::size_t y) const { return data_[(x * w_ + y) * 2]; }
  double dcol(std::size_t x, std::size_t y) const { return data_[(x * w_ + y) * 2 + 1]; }
  void set(std::size_t x, std::size_t y, double dr, double dc) {
    data_[(x * w_ + y) * 2] = dr;
    data_[(x * w_ + y) * 2 + 1] = dc;
  }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

 private:
  std::size_t h_, w_;
  FlowDirection dir_;
  std::vector<double> data_;
};

// Flows between consecutive frames: forward[k] maps frame k to k+1,
// backward[k] maps frame k+1 to k.
struct FlowSequence {
  std::vector<FlowField> forward;
  std::vector<FlowField> backward;

  std::size_t steps() const { return forward.size(); }
};

// Per-pixel class indices, shape (H, W); kIgnoreLabel marks unlabeled pixels.
class LabelMap {
 public:
  LabelMap(std::size_t height, std::size_t width, std::uint32_t fill = kIgnoreLabel)
      : h_(height), w_(width), data_(height * width, fill) {
    if (h_ == 0 || w_ == 0) fail("shape-mismatch", "label map dimensions must be >= 1");
  }
  LabelMap(std::size_t height, std::size_t width, std::vector<std::uint32_t> labels)
      : h_(height), w_(width), data_(std::move(labels)) {
    if (h_ == 0 || w_ == 0) fail("shape-mismatch", "label map dimensions must be >= 1");
    if (data_.size() != h_ * w_)
      fail("shape-mismatch", "label payload has ", data_.size(), " values, expected ", h_ * w_);
  }

  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }
  std::size_t pixels() const { return data_.size(); }

  std::uint32_t& operator()(std::size_t x, std::size_t y) { return data_[x * w_ + y]; }
  std::uint32_t operator()(std::size_t x, std::size_t y) const { return data_[x * w_ + y]; }
  std::uint32_t& operator[](std::size_t k) { return data_[k]; }
  std::uint32_t operator[](std::size_t k) const { return data_[k]; }

  std::span<const std::uint32_t> values() const { return data_; }

  bool same_shape(const LabelMap& o) const { return h_ == o.h_ && w_ == o.w_; }
  friend bool operator==(const LabelMap&, const LabelMap&) = default;

 private:
  std::size_t h_, w_;
  std::vector<std::uint32_t> data_;
};

// Throws on the first violated invariant, naming the offending element.
inline void validate_stack(const FeatureStack& features, const SuperpixelStack& superpixels) {
  if (features.frames() != superpixels.frames() || features.height() != superpixels.height() ||
      features.width() != superpixels.width())
    fail("shape-mismatch", "features (N,H,W)=(", features.frames(), ",", features.height(), ",",
         features.width(), ") vs superpixels (", superpixels.frames(), ",", superpixels.height(),
         ",", superpixels.width(), ")");
  for (std::size_t i = 0; i < features.frames(); ++i)
    for (std::size_t c = 0; c < features.channels(); ++c)
      for (std::size_t x = 0; x < features.height(); ++x)
        for (std::size_t y = 0; y < features.width(); ++y)
          if (!std::isfinite(features(i, c, x, y)))
            fail("non-finite-value", "feature at (frame ", i, ", channel ", c, ", row ", x,
                 ", col ", y, ") is ", features(i, c, x, y));
  const auto p = superpixels.region_count();
  for (std::size_t i = 0; i < superpixels.frames(); ++i)
    for (std::size_t x = 0; x < superpixels.height(); ++x)
      for (std::size_t y = 0; y < superpixels.width(); ++y) {
        auto v = superpixels(i, x, y);
        if (v >= p && v != kNoRegion)
          fail("region-index-out-of-range", "region index ", v, " at (frame ", i, ", row ", x,
               ", col ", y, ") is outside [0, ", p, ")");
      }
}

inline void validate_flows(const FlowSequence& flows, std::size_t frames, std::size_t height,
                           std::size_t width) {
  const std::size_t need = frames > 0 ? frames - 1 : 0;
  if (flows.forward.size() != need || flows.backward.size() != need)
    fail("shape-mismatch", "expected ", need, " forward and backward flow fields, got ",
         flows.forward.size(), " and ", flows.backward.size());
  auto check = [&](const FlowField& f, std::size_t k, const char* dir) {
    if (f.height() != height || f.width() != width)
      fail("shape-mismatch", dir, " flow ", k, " is ", f.height(), "x", f.width(), ", expected ",
           height, "x", width);
    auto v = f.values();
    for (std::size_t q = 0; q < v.size(); ++q)
      if (!std::isfinite(v[q]))
        fail("non-finite-value", dir, " flow ", k, " at (row ", q / 2 / width, ", col ",
             (q / 2) % width, ") is not finite");
  };
  for (std::size_t k = 0; k < need; ++k) {
    check(flows.forward[k], k, "forward");
    check(flows.backward[k], k, "backward");
  }
}

inline void validate_labels(const LabelMap& labels, std::uint32_t num_classes) {
  for (std::size_t x = 0; x < labels.height(); ++x)
    for (std::size_t y = 0; y < labels.width(); ++y) {
      auto v = labels(x, y);
      if (v != kIgnoreLabel && v >= num_classes)
        fail("label-out-of-range", "class ", v, " at (row ", x, ", col ", y, ") is outside [0, ",
             num_classes, ")");
    }
}

// Ω_ij for every region used in the frame, pixels in row-major order.
inline std::map<std::uint32_t, std::vector<Pixel>> region_pixel_sets(
    const SuperpixelStack& superpixels, std::size_t frame) {
  if (frame >= superpixels.frames())
    fail("frame-out-of-range", "frame ", frame, " but stack has ", superpixels.frames(),
         " frames");
  std::map<std::uint32_t, std::vector<Pixel>> out;
  const auto w = superpixels.width();
  auto lab = superpixels.frame(frame);
  for (std::size_t k = 0; k < lab.size(); ++k)
    out[lab[k]].push_back({static_cast<int>(k / w), static_cast<int>(k % w)});
  return out;
}

struct RelabelResult {
  SuperpixelStack stack;
  // Per frame: old index -> new index.
  std::vector<std::map<std::uint32_t, std::uint32_t>> mapping;
};

// Compacts used indices per frame to 0..n_i-1 in first-appearance (row-major)
// order. kNoRegion pixels are left untouched.
inline RelabelResult relabel_contiguous(const SuperpixelStack& superpixels) {
  const auto n = superpixels.frames();
  const auto hw = superpixels.pixels();
  std::vector<std::uint32_t> out(n * hw);
  std::vector<std::map<std::uint32_t, std::uint32_t>> mapping(n);
  std::uint32_t p = 0;
  for (std::size_t i = 0; i < n; ++i) {
    auto lab = superpixels.frame(i);
    auto& m = mapping[i];
    for (std::size_t k = 0; k < hw; ++k) {
      const auto v = lab[k];
      if (v == kNoRegion) {
        out[i * hw + k] = kNoRegion;
        continue;
      }
      auto [it, inserted] = m.try_emplace(v, static_cast<std::uint32_t>(m.size()));
      out[i * hw + k] = it->second;
    }
    p = std::max(p, static_cast<std::uint32_t>(m.size()));
  }
  return {SuperpixelStack(n, superpixels.height(), superpixels.width(), std::move(out), p),
          std::move(mapping)};
}

}  // namespace std2p
