#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "std2p/error.hpp"
#include "std2p/grid.hpp"
#include "std2p/io.hpp"
#include "std2p/rng.hpp"

namespace std2p {

// Nearest-integer rounding with halves rounded up; used for every
// continuous-to-grid conversion so warps are reproducible.
inline long long round_to_grid(double v) { return static_cast<long long>(std::floor(v + 0.5)); }

// Total per-pixel displacement between two frames. Pixels whose track left
// the grid are marked lost.
class Displacement {
 public:
  Displacement(std::size_t height, std::size_t width)
      : h_(height), w_(width), data_(height * width * 2, 0.0), lost_(height * width, 0) {}

  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }

  bool lost(std::size_t k) const { return lost_[k] != 0; }
  double drow(std::size_t k) const { return data_[2 * k]; }
  double dcol(std::size_t k) const { return data_[2 * k + 1]; }

  void set(std::size_t k, double dr, double dc) {
    data_[2 * k] = dr;
    data_[2 * k + 1] = dc;
  }
  void mark_lost(std::size_t k) { lost_[k] = 1; }

  // Destination grid cell of pixel k, or nullopt-like -1 when lost.
  long long destination(std::size_t k) const {
    if (lost(k)) return -1;
    const auto x = round_to_grid(static_cast<double>(k / w_) + drow(k));
    const auto y = round_to_grid(static_cast<double>(k % w_) + dcol(k));
    if (x < 0 || y < 0 || x >= static_cast<long long>(h_) || y >= static_cast<long long>(w_))
      return -1;
    return x * static_cast<long long>(w_) + y;
  }

 private:
  std::size_t h_, w_;
  std::vector<double> data_;
  std::vector<std::uint8_t> lost_;
};

// Chains consecutive flows by stepwise advection: a tracked point moves by
// the flow sampled at its nearest grid cell; it is lost once it rounds off
// the grid. Forward flows are used when from < to, backward otherwise.
// from == to gives the zero displacement.
inline Displacement compose_flow(const FlowSequence& flows, std::size_t from, std::size_t to,
                                 std::size_t height, std::size_t width) {
  const std::size_t hi = std::max(from, to);
  if (hi > flows.steps())
    fail("missing-flow-field", "need flows covering frames ", std::min(from, to), "..", hi,
         " but only ", flows.steps(), " consecutive pairs exist");
  Displacement out(height, width);
  if (from == to) return out;
  const bool forward = from < to;
  const auto H = static_cast<long long>(height), W = static_cast<long long>(width);
  for (std::size_t k = 0; k < height * width; ++k) {
    double r = static_cast<double>(k / width), c = static_cast<double>(k % width);
    bool lost = false;
    for (std::size_t f = from; f != to; forward ? ++f : --f) {
      const FlowField& field = forward ? flows.forward[f] : flows.backward[f - 1];
      if (field.height() != height || field.width() != width)
        fail("shape-mismatch", "flow field ", f, " is ", field.height(), "x", field.width(),
             ", expected ", height, "x", width);
      const auto x = round_to_grid(r), y = round_to_grid(c);
      const auto ux = static_cast<std::size_t>(x), uy = static_cast<std::size_t>(y);
      r += field.drow(ux, uy);
      c += field.dcol(ux, uy);
      const auto nx = round_to_grid(r), ny = round_to_grid(c);
      if (nx < 0 || ny < 0 || nx >= H || ny >= W) {
        lost = true;
        break;
      }
    }
    if (lost)
      out.mark_lost(k);
    else
      out.set(k, r - static_cast<double>(k / width), c - static_cast<double>(k % width));
  }
  return out;
}

// Displaces each pixel (linear index), rounds to the grid, drops lost pixels.
// Result is sorted and duplicate-free.
inline std::vector<std::uint32_t> warp_region(const std::vector<std::uint32_t>& pixels,
                                              const Displacement& displacement) {
  std::vector<std::uint32_t> out;
  out.reserve(pixels.size());
  for (auto k : pixels) {
    const auto d = displacement.destination(k);
    if (d >= 0) out.push_back(static_cast<std::uint32_t>(d));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

inline std::vector<Pixel> warp_region(const std::vector<Pixel>& pixels,
                                      const Displacement& displacement) {
  std::vector<std::uint32_t> linear;
  for (auto p : pixels)
    linear.push_back(static_cast<std::uint32_t>(p.row * static_cast<int>(displacement.width()) + p.col));
  std::vector<Pixel> out;
  const int w = static_cast<int>(displacement.width());
  for (auto k : warp_region(linear, displacement))
    out.push_back({static_cast<int>(k) / w, static_cast<int>(k) % w});
  return out;
}

// |A ∩ B| / |A ∪ B| for sorted, duplicate-free sets; 0 when both are empty.
template <typename T>
double iou(const std::vector<T>& a, const std::vector<T>& b) {
  std::size_t inter = 0;
  auto ia = a.begin(), ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia < *ib) ++ia;
    else if (*ib < *ia) ++ib;
    else { ++inter; ++ia; ++ib; }
  }
  const std::size_t uni = a.size() + b.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

struct MatchScore {
  double iou_forward = 0.0;   // other-frame region warped into the target frame
  double iou_backward = 0.0;  // target region warped into the other frame
  double score() const { return std::min(iou_forward, iou_backward); }
};

struct PairMatch {
  std::uint32_t target_region;
  std::uint32_t source_region;
  MatchScore score;
};

namespace detail {

inline void check_tau(double tau) {
  if (!(tau >= 0.0 && tau < 1.0)) fail("invalid-argument", "tau must be in [0, 1), got ", tau);
}

inline std::uint32_t frame_region_count(std::span<const std::uint32_t> labels) {
  std::uint32_t p = 0;
  for (auto v : labels)
    if (v != kNoRegion) p = std::max(p, v + 1);
  return p;
}

}  // namespace detail

// Regions R_t (frame t) and R_u (frame u) match when
// min(IoU(warp(R_u -> t), R_t), IoU(warp(R_t -> u), R_u)) > tau. Each target
// region keeps its best-scoring source region (ties: lowest source index).
// Result is sorted by target region.
inline std::vector<PairMatch> match_frame_pair(std::size_t t, std::size_t u,
                                               const SuperpixelStack& superpixels,
                                               const FlowSequence& flows, double tau) {
  detail::check_tau(tau);
  if (t == u) fail("invalid-argument", "target and other frame are both ", t);
  if (t >= superpixels.frames() || u >= superpixels.frames())
    fail("frame-out-of-range", "frames ", t, ",", u, " but stack has ", superpixels.frames());
  const auto h = superpixels.height(), w = superpixels.width();
  const auto to_target = compose_flow(flows, u, t, h, w);
  const auto to_other = compose_flow(flows, t, u, h, w);
  const auto lab_t = superpixels.frame(t), lab_u = superpixels.frame(u);
  const auto p_t = detail::frame_region_count(lab_t), p_u = detail::frame_region_count(lab_u);

  using Key = std::pair<std::uint32_t, std::uint32_t>;  // (target j, source r)
  std::map<Key, std::size_t> inter_fwd, inter_bwd;
  std::vector<std::size_t> warped_src_size(p_u, 0), warped_tgt_size(p_t, 0);

  for (std::uint32_t r = 0; r < p_u; ++r) {
    if (!superpixels.present(u, r)) continue;
    const auto warped = warp_region(superpixels.region(u, r), to_target);
    warped_src_size[r] = warped.size();
    for (auto q : warped)
      if (lab_t[q] != kNoRegion) ++inter_fwd[{lab_t[q], r}];
  }
  for (std::uint32_t j = 0; j < p_t; ++j) {
    if (!superpixels.present(t, j)) continue;
    const auto warped = warp_region(superpixels.region(t, j), to_other);
    warped_tgt_size[j] = warped.size();
    for (auto q : warped)
      if (lab_u[q] != kNoRegion) ++inter_bwd[{j, lab_u[q]}];
  }

  std::vector<PairMatch> best;
  for (const auto& [key, fwd] : inter_fwd) {
    const auto [j, r] = key;
    const auto it = inter_bwd.find(key);
    if (it == inter_bwd.end()) continue;
    const auto bwd = it->second;
    const double size_t_j = static_cast<double>(superpixels.region(t, j).size());
    const double size_u_r = static_cast<double>(superpixels.region(u, r).size());
    MatchScore s;
    s.iou_forward = static_cast<double>(fwd) /
                    (static_cast<double>(warped_src_size[r]) + size_t_j - static_cast<double>(fwd));
    s.iou_backward = static_cast<double>(bwd) /
                     (static_cast<double>(warped_tgt_size[j]) + size_u_r - static_cast<double>(bwd));
    if (!(s.score() > tau)) continue;
    // Map iteration is ordered by (j, r): a later r only wins on a strictly higher score.
    if (!best.empty() && best.back().target_region == j) {
      if (s.score() > best.back().score.score()) best.back() = {j, r, s};
    } else {
      best.push_back({j, r, s});
    }
  }
  return best;
}

struct Match {
  std::size_t frame;
  std::uint32_t source_region;
  MatchScore score;
};

// Region correspondences anchored at one target frame. entries[j] lists the
// matched (frame, source region) pairs for target region j in ascending frame
// order, including the target frame itself.
struct CorrespondenceTable {
  std::size_t target = 0;
  std::vector<std::vector<Match>> entries;
  std::vector<std::size_t> region_sizes;  // |Ω_tj| in the target frame

  std::uint32_t regions() const { return static_cast<std::uint32_t>(entries.size()); }
  std::size_t matched_frames(std::uint32_t j) const { return entries[j].size(); }
  std::size_t total_matches() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.size();
    return n;
  }
};

struct CorrespondenceResult {
  CorrespondenceTable table;
  // Sampled frames in ascending order; frame k of `canonical` is frames[k].
  std::vector<std::size_t> frames;
  std::size_t target_position = 0;
  // Matched source regions renamed to their target region index, every other
  // pixel of a non-target frame set to kNoRegion.
  SuperpixelStack canonical;
};

// Matches every sampled frame against the target and builds the canonical
// stack. A source region that is the best match of several target regions is
// kept only for the highest-scoring one (ties: lowest target index), so each
// pixel of the canonical stack has exactly one owner.
inline CorrespondenceResult build_table(std::size_t target, std::vector<std::size_t> frames,
                                        const SuperpixelStack& superpixels,
                                        const FlowSequence& flows, double tau,
                                        unsigned threads = 1) {
  detail::check_tau(tau);
  std::sort(frames.begin(), frames.end());
  frames.erase(std::unique(frames.begin(), frames.end()), frames.end());
  const auto tpos_it = std::find(frames.begin(), frames.end(), target);
  if (tpos_it == frames.end()) fail("invalid-argument", "target frame ", target, " not sampled");
  for (auto f : frames)
    if (f >= superpixels.frames())
      fail("frame-out-of-range", "frame ", f, " but stack has ", superpixels.frames());
  const auto target_pos = static_cast<std::size_t>(tpos_it - frames.begin());
  const auto hw = superpixels.pixels();
  const auto lab_t = superpixels.frame(target);
  const auto p = detail::frame_region_count(lab_t);

  std::vector<std::vector<PairMatch>> per_frame(frames.size());
  auto work = [&](std::size_t begin, std::size_t step) {
    for (std::size_t k = begin; k < frames.size(); k += step)
      if (frames[k] != target)
        per_frame[k] = match_frame_pair(target, frames[k], superpixels, flows, tau);
  };
  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(frames.size())));
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (unsigned k = 0; k < workers; ++k)
      pool.emplace_back([&, k] {
        try {
          work(k, workers);
        } catch (...) {
          errors[k] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  CorrespondenceTable table;
  table.target = target;
  table.entries.resize(p);
  table.region_sizes.resize(p);
  for (std::uint32_t j = 0; j < p; ++j) table.region_sizes[j] = superpixels.region(target, j).size();

  std::vector<std::uint32_t> canonical(frames.size() * hw, kNoRegion);
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const auto f = frames[k];
    std::uint32_t* out = canonical.data() + k * hw;
    if (f == target) {
      std::copy(lab_t.begin(), lab_t.end(), out);
      for (std::uint32_t j = 0; j < p; ++j)
        if (table.region_sizes[j] > 0) table.entries[j].push_back({f, j, {1.0, 1.0}});
      continue;
    }
    // Resolve sources claimed by several target regions.
    std::map<std::uint32_t, const PairMatch*> owner;
    for (const auto& m : per_frame[k]) {
      auto [it, inserted] = owner.try_emplace(m.source_region, &m);
      if (!inserted && m.score.score() > it->second->score.score()) it->second = &m;
    }
    std::vector<std::uint32_t> rename(detail::frame_region_count(superpixels.frame(f)), kNoRegion);
    for (const auto& [src, m] : owner) {
      rename[src] = m->target_region;
      table.entries[m->target_region].push_back({f, src, m->score});
    }
    const auto lab = superpixels.frame(f);
    for (std::size_t q = 0; q < hw; ++q)
      if (lab[q] != kNoRegion) out[q] = rename[lab[q]];
  }
  for (auto& e : table.entries)
    std::sort(e.begin(), e.end(), [](const Match& a, const Match& b) { return a.frame < b.frame; });

  return {std::move(table), frames, target_pos,
          SuperpixelStack(frames.size(), superpixels.height(), superpixels.width(),
                          std::move(canonical), p)};
}

enum class SampleDirection { both, past_only };

struct SamplingPolicy {
  std::size_t interval = 3;
  std::size_t max_candidates = 100;
  std::size_t sample_size = 11;
  SampleDirection direction = SampleDirection::both;
  std::uint64_t seed = 0;
  // Largest allowed |frame - target|; 0 means unbounded.
  std::size_t max_distance = 0;

  void validate() const {
    if (interval < 1) fail("invalid-policy", "interval must be >= 1");
    if (sample_size < 1) fail("invalid-policy", "sample_size must be >= 1");
    if (max_candidates + 1 < sample_size)
      fail("invalid-policy", "max_candidates (", max_candidates, ") must be >= sample_size - 1 (",
           sample_size - 1, ")");
  }
};

// Candidate frames at target ± k*interval, alternating +,- by increasing k,
// continuing on one side once the other is exhausted.
inline std::vector<std::size_t> candidate_frames(std::size_t length, std::size_t target,
                                                 const SamplingPolicy& policy) {
  policy.validate();
  if (target >= length) fail("target-out-of-range", "target ", target, " >= length ", length);
  std::vector<std::size_t> out;
  auto within = [&](std::size_t dist) { return policy.max_distance == 0 || dist <= policy.max_distance; };
  for (std::size_t k = 1; out.size() < policy.max_candidates; ++k) {
    const std::size_t dist = k * policy.interval;
    const bool plus_ok = policy.direction == SampleDirection::both && target + dist < length && within(dist);
    const bool minus_ok = dist <= target && within(dist);
    if (!plus_ok && !minus_ok) break;
    if (plus_ok) out.push_back(target + dist);
    if (minus_ok && out.size() < policy.max_candidates) out.push_back(target - dist);
  }
  return out;
}

// Target plus (sample_size - 1) candidates drawn uniformly without
// replacement; ascending order.
inline std::vector<std::size_t> sample_frames(std::size_t length, std::size_t target,
                                              const SamplingPolicy& policy) {
  auto candidates = candidate_frames(length, target, policy);
  const std::size_t want = std::min(policy.sample_size - 1, candidates.size());
  auto rng = SeedSplitter(policy.seed).stream("sample-frames", target);
  for (std::size_t k = 0; k < want; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, candidates.size() - 1);
    std::swap(candidates[k], candidates[pick(rng)]);
  }
  candidates.resize(want);
  candidates.push_back(target);
  std::sort(candidates.begin(), candidates.end());
  return candidates;
}

struct StatsBucket {
  std::size_t lo;
  std::size_t hi;  // exclusive; 0 for the open-ended last bucket
  std::size_t regions;
  double fraction;
  double mean_matches;
};

inline std::vector<std::size_t> default_size_edges() {
  std::vector<std::size_t> edges;
  for (std::size_t e = 1; e < 2000; e *= 2) edges.push_back(e);
  edges.push_back(2000);
  return edges;
}

// Region-size histogram of target regions and mean matched-frame count per
// size bucket. Only non-empty buckets are reported.
inline std::vector<StatsBucket> correspondence_stats(const std::vector<CorrespondenceTable>& tables,
                                                     std::vector<std::size_t> edges = default_size_edges()) {
  std::sort(edges.begin(), edges.end());
  struct Acc {
    std::size_t regions = 0;
    double k_sum = 0.0;
  };
  std::vector<Acc> acc(edges.size());
  std::size_t total = 0;
  for (const auto& t : tables)
    for (std::uint32_t j = 0; j < t.regions(); ++j) {
      const auto size = t.region_sizes[j];
      if (size == 0 || edges.empty() || size < edges.front()) continue;
      const auto b = static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), size) - edges.begin()) - 1;
      acc[b].regions += 1;
      acc[b].k_sum += static_cast<double>(t.matched_frames(j));
      ++total;
    }
  std::vector<StatsBucket> out;
  for (std::size_t b = 0; b < edges.size(); ++b)
    if (acc[b].regions > 0)
      out.push_back({edges[b], b + 1 < edges.size() ? edges[b + 1] : 0, acc[b].regions,
                     static_cast<double>(acc[b].regions) / static_cast<double>(total),
                     acc[b].k_sum / static_cast<double>(acc[b].regions)});
  return out;
}

inline std::string format_table_csv(const CorrespondenceTable& table) {
  std::ostringstream os;
  os << "target_region,frame,source_region,iou_fwd,iou_bwd\n";
  for (std::uint32_t j = 0; j < table.regions(); ++j)
    for (const auto& m : table.entries[j])
      os << j << "," << m.frame << "," << m.source_region << "," << io::format_real(m.score.iou_forward)
         << "," << io::format_real(m.score.iou_backward) << "\n";
  return os.str();
}

inline std::string format_stats_csv(const std::vector<StatsBucket>& buckets) {
  std::ostringstream os;
  os << "size_lo,size_hi,regions,fraction,mean_matches\n";
  for (const auto& b : buckets)
    os << b.lo << "," << (b.hi == 0 ? std::string("inf") : std::to_string(b.hi)) << "," << b.regions
       << "," << io::format_real(b.fraction) << "," << io::format_real(b.mean_matches) << "\n";
  return os.str();
}

}  // namespace std2p
