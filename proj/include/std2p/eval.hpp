#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "std2p/correspond.hpp"
#include "std2p/error.hpp"
#include "std2p/grid.hpp"
#include "std2p/io.hpp"
#include "std2p/pooling.hpp"

namespace std2p::eval {

// counts[g][p]: pixels with ground truth g predicted as p.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::uint32_t classes) : n_(classes), counts_(std::size_t{classes} * classes, 0) {
    if (classes == 0) fail("invalid-argument", "confusion matrix needs at least one class");
  }

  std::uint32_t classes() const { return n_; }
  std::uint64_t operator()(std::uint32_t g, std::uint32_t p) const { return counts_[std::size_t{g} * n_ + p]; }
  std::uint64_t& operator()(std::uint32_t g, std::uint32_t p) { return counts_[std::size_t{g} * n_ + p]; }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto v : counts_) t += v;
    return t;
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    if (o.n_ != n_) fail("shape-mismatch", "adding ", o.n_, "-class matrix to ", n_, "-class matrix");
    for (std::size_t k = 0; k < counts_.size(); ++k) counts_[k] += o.counts_[k];
    return *this;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::uint32_t n_;
  std::vector<std::uint64_t> counts_;
};

// Adds one count per pixel where both ground truth and prediction carry a
// class; pixels where either is kIgnoreLabel are skipped.
inline ConfusionMatrix& accumulate(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& gt) {
  if (!pred.same_shape(gt))
    fail("shape-mismatch", "prediction ", pred.height(), "x", pred.width(), " vs ground truth ",
         gt.height(), "x", gt.width());
  for (std::size_t q = 0; q < gt.pixels(); ++q) {
    const auto g = gt[q], p = pred[q];
    if (g == kIgnoreLabel || p == kIgnoreLabel) continue;
    if (g >= cm.classes() || p >= cm.classes())
      fail("label-out-of-range", "pixel (row ", q / gt.width(), ", col ", q % gt.width(), ") gt ", g,
           " pred ", p, " with ", cm.classes(), " classes");
    ++cm(g, p);
  }
  return cm;
}

struct Metrics {
  double pixel_acc = 0.0;
  double mean_acc = 0.0;
  double mean_iou = 0.0;
  double fw_iou = 0.0;
};

inline Metrics metrics(const ConfusionMatrix& cm) {
  const auto n = cm.classes();
  std::vector<std::uint64_t> t(n, 0), s(n, 0), d(n, 0);
  std::uint64_t total = 0, correct = 0;
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t j = 0; j < n; ++j) {
      t[i] += cm(i, j);
      s[j] += cm(i, j);
      total += cm(i, j);
    }
  if (total == 0) fail("empty-matrix", "confusion matrix holds no pixels");
  for (std::uint32_t i = 0; i < n; ++i) correct += (d[i] = cm(i, i));

  Metrics m;
  m.pixel_acc = static_cast<double>(correct) / static_cast<double>(total);
  double acc_sum = 0.0, iou_sum = 0.0, fw_sum = 0.0;
  std::size_t acc_n = 0, iou_n = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    if (t[i] > 0) {
      acc_sum += static_cast<double>(d[i]) / static_cast<double>(t[i]);
      ++acc_n;
    }
    const auto uni = t[i] + s[i] - d[i];
    if (uni > 0) {
      const double iou = static_cast<double>(d[i]) / static_cast<double>(uni);
      iou_sum += iou;
      fw_sum += static_cast<double>(t[i]) * iou;
      ++iou_n;
    }
  }
  m.mean_acc = acc_n ? acc_sum / static_cast<double>(acc_n) : 0.0;
  m.mean_iou = iou_n ? iou_sum / static_cast<double>(iou_n) : 0.0;
  m.fw_iou = fw_sum / static_cast<double>(total);
  return m;
}

// Pixels whose label differs from a 4-neighbour's. Edges touching an ignored
// pixel are skipped unless `ignore_adjacent` is set.
class BoundaryMap {
 public:
  explicit BoundaryMap(const LabelMap& labels, bool ignore_adjacent = false)
      : h_(labels.height()), w_(labels.width()), on_(labels.pixels(), 0) {
    auto edge = [&](std::size_t a, std::size_t b) {
      const auto la = labels[a], lb = labels[b];
      if (la == lb) return;
      if (!ignore_adjacent && (la == kIgnoreLabel || lb == kIgnoreLabel)) return;
      on_[a] = on_[b] = 1;
    };
    for (std::size_t x = 0; x < h_; ++x)
      for (std::size_t y = 0; y < w_; ++y) {
        const auto q = x * w_ + y;
        if (y + 1 < w_) edge(q, q + 1);
        if (x + 1 < h_) edge(q, q + w_);
      }
  }

  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }
  bool operator()(std::size_t x, std::size_t y) const { return on_[x * w_ + y] != 0; }
  std::size_t count() const { return static_cast<std::size_t>(std::count(on_.begin(), on_.end(), 1)); }

 private:
  std::size_t h_, w_;
  std::vector<std::uint8_t> on_;
};

struct BoundaryScore {
  double precision = 1.0;
  double recall = 1.0;
  double f_measure = 1.0;
};

namespace detail {

// Fraction of `from` boundary pixels within Euclidean distance `tol` of some
// `to` boundary pixel; 1 when `from` is empty.
inline double boundary_hit_rate(const BoundaryMap& from, const BoundaryMap& to, double tol) {
  const auto h = static_cast<long long>(from.height()), w = static_cast<long long>(from.width());
  const auto r = static_cast<long long>(std::floor(tol));
  std::size_t total = 0, hit = 0;
  for (long long x = 0; x < h; ++x)
    for (long long y = 0; y < w; ++y) {
      if (!from(x, y)) continue;
      ++total;
      bool found = false;
      for (long long dx = -r; dx <= r && !found; ++dx)
        for (long long dy = -r; dy <= r && !found; ++dy) {
          const auto nx = x + dx, ny = y + dy;
          if (nx < 0 || ny < 0 || nx >= h || ny >= w) continue;
          if (static_cast<double>(dx * dx + dy * dy) <= tol * tol && to(nx, ny)) found = true;
        }
      hit += found ? 1 : 0;
    }
  return total == 0 ? 1.0 : static_cast<double>(hit) / static_cast<double>(total);
}

}  // namespace detail

// Precision: predicted boundary pixels near a ground-truth boundary. Recall:
// the converse. An empty side scores 1; F is 0 when P + R is 0.
inline BoundaryScore boundary_pr(const LabelMap& pred, const LabelMap& gt, double tolerance_px,
                                 bool ignore_adjacent = false) {
  if (!pred.same_shape(gt))
    fail("shape-mismatch", "prediction ", pred.height(), "x", pred.width(), " vs ground truth ",
         gt.height(), "x", gt.width());
  if (!(tolerance_px >= 0.0)) fail("invalid-argument", "tolerance must be >= 0");
  const BoundaryMap bp(pred, ignore_adjacent), bg(gt, ignore_adjacent);
  BoundaryScore s;
  s.precision = detail::boundary_hit_rate(bp, bg, tolerance_px);
  s.recall = detail::boundary_hit_rate(bg, bp, tolerance_px);
  s.f_measure = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

struct BoundaryCurvePoint {
  double tolerance;
  BoundaryScore score;
};

inline std::vector<BoundaryCurvePoint> boundary_pr_curve(const LabelMap& pred, const LabelMap& gt,
                                                         const std::vector<double>& tolerances) {
  std::vector<BoundaryCurvePoint> out;
  for (double t : tolerances) out.push_back({t, boundary_pr(pred, gt, t)});
  return out;
}

// Modal ground-truth class per region (ties: lowest class); regions with no
// labeled pixel stay ignored.
inline LabelMap oracle_label(std::span<const std::uint32_t> regions, const LabelMap& gt) {
  if (regions.size() != gt.pixels())
    fail("shape-mismatch", "region map has ", regions.size(), " pixels, ground truth ", gt.pixels());
  std::map<std::uint32_t, std::map<std::uint32_t, std::size_t>> votes;
  for (std::size_t q = 0; q < gt.pixels(); ++q)
    if (gt[q] != kIgnoreLabel) ++votes[regions[q]][gt[q]];
  std::map<std::uint32_t, std::uint32_t> winner;
  for (const auto& [r, v] : votes) {
    auto best = v.begin();
    for (auto it = v.begin(); it != v.end(); ++it)
      if (it->second > best->second) best = it;
    winner[r] = best->first;
  }
  LabelMap out(gt.height(), gt.width(), kIgnoreLabel);
  for (std::size_t q = 0; q < gt.pixels(); ++q)
    if (auto it = winner.find(regions[q]); it != winner.end()) out[q] = it->second;
  return out;
}

inline LabelMap oracle_label(const SuperpixelStack& superpixels, std::size_t frame, const LabelMap& gt) {
  if (frame >= superpixels.frames())
    fail("frame-out-of-range", "frame ", frame, " but stack has ", superpixels.frames());
  if (superpixels.height() != gt.height() || superpixels.width() != gt.width())
    fail("shape-mismatch", "superpixels ", superpixels.height(), "x", superpixels.width(),
         " vs ground truth ", gt.height(), "x", gt.width());
  return oracle_label(superpixels.frame(frame), gt);
}

struct Propagation {
  LabelMap labels;
  double coverage = 0.0;  // fraction of target pixels that received a label
};

// Transfers reference-frame ground truth to the target frame through the
// region matches: each target region matched in `reference_frame` takes the
// oracle label of its source region.
inline Propagation oracle_propagate(const CorrespondenceTable& table, std::size_t reference_frame,
                                    std::span<const std::uint32_t> reference_regions,
                                    const LabelMap& reference_gt,
                                    std::span<const std::uint32_t> target_regions) {
  if (target_regions.size() != reference_gt.pixels() || reference_regions.size() != reference_gt.pixels())
    fail("shape-mismatch", "region maps and ground truth differ in size");
  std::vector<std::size_t> sizes(table.regions(), 0);
  for (auto j : target_regions) {
    if (j >= table.regions())
      fail("frame-mismatch", "target region ", j, " is not in the table (", table.regions(), " regions)");
    ++sizes[j];
  }
  if (sizes != table.region_sizes)
    fail("frame-mismatch", "target superpixels do not match the table's target frame ", table.target);

  const auto reference_oracle = oracle_label(reference_regions, reference_gt);
  std::map<std::uint32_t, std::uint32_t> source_label;
  for (std::size_t q = 0; q < reference_regions.size(); ++q)
    if (reference_oracle[q] != kIgnoreLabel) source_label[reference_regions[q]] = reference_oracle[q];

  std::vector<std::uint32_t> region_label(table.regions(), kIgnoreLabel);
  for (std::uint32_t j = 0; j < table.regions(); ++j)
    for (const auto& m : table.entries[j])
      if (m.frame == reference_frame)
        if (auto it = source_label.find(m.source_region); it != source_label.end()) region_label[j] = it->second;

  Propagation out{LabelMap(reference_gt.height(), reference_gt.width(), kIgnoreLabel), 0.0};
  std::size_t labeled = 0;
  for (std::size_t q = 0; q < target_regions.size(); ++q) {
    out.labels[q] = region_label[target_regions[q]];
    labeled += out.labels[q] != kIgnoreLabel ? 1 : 0;
  }
  out.coverage = static_cast<double>(labeled) / static_cast<double>(target_regions.size());
  return out;
}

// Multi-view fusion without regions: each target pixel averages the features
// found along its own flow track in every sampled frame; tracks that leave
// the grid drop out of the average.
inline DenseScoreMap pixel_correspondence_baseline(const FeatureStack& features, const FlowSequence& flows,
                                                   const std::vector<std::size_t>& frames, std::size_t target) {
  if (target >= features.frames())
    fail("frame-out-of-range", "target ", target, " but stack has ", features.frames(), " frames");
  if (std::find(frames.begin(), frames.end(), target) == frames.end())
    fail("invalid-argument", "target frame ", target, " not among the sampled frames");
  const auto h = features.height(), w = features.width(), hw = h * w, c_n = features.channels();
  std::vector<double> sum(c_n * hw, 0.0);
  std::vector<std::size_t> count(hw, 0);
  std::vector<std::size_t> ordered = frames;
  std::sort(ordered.begin(), ordered.end());
  ordered.erase(std::unique(ordered.begin(), ordered.end()), ordered.end());
  for (auto f : ordered) {
    if (f >= features.frames())
      fail("frame-out-of-range", "frame ", f, " but stack has ", features.frames(), " frames");
    const auto disp = compose_flow(flows, target, f, h, w);
    for (std::size_t q = 0; q < hw; ++q) {
      const auto d = disp.destination(q);
      if (d < 0) continue;
      ++count[q];
      for (std::size_t c = 0; c < c_n; ++c) sum[c * hw + q] += features.plane(f, c)[static_cast<std::size_t>(d)];
    }
  }
  DenseScoreMap out(c_n, h, w);
  for (std::size_t c = 0; c < c_n; ++c)
    for (std::size_t q = 0; q < hw; ++q) out.data[c * hw + q] = sum[c * hw + q] / static_cast<double>(count[q]);
  return out;
}

inline std::string format_metrics_csv(const Metrics& m, const std::string& prefix = "") {
  std::ostringstream os;
  os << prefix << "pixel_acc," << io::format_real(m.pixel_acc) << "\n"
     << prefix << "mean_acc," << io::format_real(m.mean_acc) << "\n"
     << prefix << "mean_iou," << io::format_real(m.mean_iou) << "\n"
     << prefix << "fw_iou," << io::format_real(m.fw_iou) << "\n";
  return os.str();
}

inline std::string format_metrics_table(const Metrics& m) {
  const char* heads[] = {"Pixel Acc.", "Mean Acc.", "Mean IoU", "f.w. IoU"};
  const double values[] = {m.pixel_acc, m.mean_acc, m.mean_iou, m.fw_iou};
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  for (int k = 0; k < 4; ++k) os << (k ? "   " : "") << heads[k];
  os << "\n";
  for (int k = 0; k < 4; ++k)
    os << (k ? "   " : "") << std::setw(static_cast<int>(std::string_view(heads[k]).size())) << 100.0 * values[k];
  os << "\n";
  return os.str();
}

inline std::string format_bpr_csv(const std::vector<BoundaryCurvePoint>& curve) {
  std::ostringstream os;
  os << "tolerance,precision,recall,f_measure\n";
  for (const auto& p : curve)
    os << io::format_real(p.tolerance) << "," << io::format_real(p.score.precision) << ","
       << io::format_real(p.score.recall) << "," << io::format_real(p.score.f_measure) << "\n";
  return os.str();
}

}  // namespace std2p::eval
