#include <gtest/gtest.h>

#include <set>
#include <tuple>

#include "oracles.hpp"
#include "std2p/correspond.hpp"
#include "std2p/synthscene.hpp"

using namespace std2p;

namespace {

FlowSequence uniform_flows(std::size_t steps, std::size_t h, std::size_t w, double dr, double dc) {
  FlowSequence seq;
  for (std::size_t k = 0; k < steps; ++k) {
    seq.forward.emplace_back(h, w, FlowDirection::forward);
    seq.backward.emplace_back(h, w, FlowDirection::backward);
    for (std::size_t x = 0; x < h; ++x)
      for (std::size_t y = 0; y < w; ++y) {
        seq.forward[k].set(x, y, dr, dc);
        seq.backward[k].set(x, y, -dr, -dc);
      }
  }
  return seq;
}

std::set<std::pair<int, int>> as_set(const std::vector<std::uint32_t>& linear, std::size_t w) {
  std::set<std::pair<int, int>> s;
  for (auto k : linear) s.insert({static_cast<int>(k / w), static_cast<int>(k % w)});
  return s;
}

synth::LaneSceneParams lane_params(std::size_t frames) {
  synth::LaneSceneParams p;
  p.frames = frames;
  p.max_speed = 1;
  return p;
}

std::vector<std::size_t> all_frames(std::size_t n) {
  std::vector<std::size_t> f(n);
  for (std::size_t k = 0; k < n; ++k) f[k] = k;
  return f;
}

}  // namespace

TEST(ComposeFlow, SingleStepUniform) {
  auto flows = uniform_flows(1, 4, 4, 0.0, 1.0);
  auto d = compose_flow(flows, 0, 1, 4, 4);
  for (std::size_t k = 0; k < 16; ++k) {
    if (k % 4 == 3) {
      EXPECT_TRUE(d.lost(k));  // last column leaves the grid
      continue;
    }
    EXPECT_EQ(d.drow(k), 0.0);
    EXPECT_EQ(d.dcol(k), 1.0);
    EXPECT_EQ(d.destination(k), static_cast<long long>(k + 1));
  }
}

TEST(ComposeFlow, TwoStepsAccumulate) {
  // Hand advection on 4x4: columns 0,1 travel two to the right, columns 2,3 are lost.
  auto flows = uniform_flows(2, 4, 4, 0.0, 1.0);
  auto d = compose_flow(flows, 0, 2, 4, 4);
  for (std::size_t k = 0; k < 16; ++k) {
    if (k % 4 >= 2) {
      EXPECT_TRUE(d.lost(k)) << k;
    } else {
      EXPECT_EQ(d.dcol(k), 2.0);
      EXPECT_EQ(d.drow(k), 0.0);
    }
  }
}

TEST(ComposeFlow, SamplesFlowAtCurrentPosition) {
  auto flows = uniform_flows(2, 4, 4, 0.0, 1.0);
  for (std::size_t x = 0; x < 4; ++x)
    for (std::size_t y = 0; y < 4; ++y) flows.forward[1].set(x, y, y == 2 ? 1.0 : 0.0, 0.0);
  auto d = compose_flow(flows, 0, 2, 4, 4);
  // (0,1) -> (0,2) -> picks up (1,0) at column 2 -> (1,2).
  EXPECT_EQ(d.drow(1), 1.0);
  EXPECT_EQ(d.dcol(1), 1.0);
  // (0,0) -> (0,1) -> no second move.
  EXPECT_EQ(d.drow(0), 0.0);
  EXPECT_EQ(d.dcol(0), 1.0);
}

TEST(ComposeFlow, BackwardUsesBackwardFields) {
  auto flows = uniform_flows(2, 3, 5, 0.0, 1.0);
  auto d = compose_flow(flows, 2, 0, 3, 5);
  EXPECT_EQ(d.dcol(2), -2.0);
  EXPECT_TRUE(d.lost(1));
}

TEST(ComposeFlow, MissingField) {
  auto flows = uniform_flows(1, 3, 3, 0.0, 0.0);
  EXPECT_THROW(compose_flow(flows, 0, 2, 3, 3), Error);
  try {
    compose_flow(flows, 0, 2, 3, 3);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "missing-flow-field");
  }
}

TEST(WarpRegion, IntegerShift) {
  auto flows = uniform_flows(1, 3, 3, 1.0, 0.0);
  auto d = compose_flow(flows, 0, 1, 3, 3);
  EXPECT_EQ(warp_region(std::vector<Pixel>{{0, 0}, {0, 1}}, d), (std::vector<Pixel>{{1, 0}, {1, 1}}));
}

TEST(WarpRegion, FullyAdvectedOffGridIsEmpty) {
  auto flows = uniform_flows(1, 3, 3, 0.0, 5.0);
  auto d = compose_flow(flows, 0, 1, 3, 3);
  EXPECT_TRUE(warp_region(std::vector<Pixel>{{0, 0}, {1, 2}}, d).empty());
}

TEST(WarpRegion, TwoPixelsRoundOntoOne) {
  // (0,0) + (0.4, 0) -> (0.4, 0) -> (0,0); (1,0) + (-0.6, 0) -> (0.4, 0) -> (0,0).
  FlowSequence flows = uniform_flows(1, 3, 3, 0.0, 0.0);
  flows.forward[0].set(0, 0, 0.4, 0.0);
  flows.forward[0].set(1, 0, -0.6, 0.0);
  auto d = compose_flow(flows, 0, 1, 3, 3);
  EXPECT_EQ(warp_region(std::vector<Pixel>{{0, 0}, {1, 0}}, d), (std::vector<Pixel>{{0, 0}}));
}

TEST(Iou, Cases) {
  std::vector<std::uint32_t> a{1, 2, 3, 4}, b{3, 4, 5, 6}, empty;
  EXPECT_EQ(iou(a, a), 1.0);
  EXPECT_EQ(iou(a, std::vector<std::uint32_t>{7, 8}), 0.0);
  // Enumerated: intersection {3,4}, union {1..6}.
  EXPECT_DOUBLE_EQ(iou(a, b), 2.0 / 6.0);
  EXPECT_EQ(iou(empty, empty), 0.0);
}

TEST(Iou, AgreesWithSetOracle) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::uint32_t> a, b;
    for (std::uint32_t k = 0; k < 40; ++k) {
      if (rng() % 3 == 0) a.push_back(k);
      if (rng() % 3 == 0) b.push_back(k);
    }
    EXPECT_EQ(iou(a, b), oracle::set_iou(as_set(a, 8), as_set(b, 8)));
  }
}

TEST(MatchFramePair, IdentityFlowSelfMatches) {
  std::vector<std::uint32_t> frame{0, 0, 1, 1, 0, 0, 1, 1, 2, 2, 2, 2};
  std::vector<std::uint32_t> labels = frame;
  labels.insert(labels.end(), frame.begin(), frame.end());
  SuperpixelStack s(2, 3, 4, labels, 3);
  auto flows = uniform_flows(1, 3, 4, 0.0, 0.0);
  auto m = match_frame_pair(1, 0, s, flows, 0.4);
  ASSERT_EQ(m.size(), 3u);
  for (std::uint32_t j = 0; j < 3; ++j) {
    EXPECT_EQ(m[j].target_region, j);
    EXPECT_EQ(m[j].source_region, j);
    EXPECT_EQ(m[j].score.score(), 1.0);
  }
}

// Hand-built 6x6 case, zero flow. Target region T = rows 0-1, cols 0-3 (8 px).
// In the other frame, A = row 0 cols 0-3 (IoU 4/8 = 0.5) and B = row 1
// cols 0-3 plus (2,0) (IoU 4/9). Both pass tau = 0.4; only A is kept even
// though B has the lower index.
TEST(MatchFramePair, KeepsHighestScoringSource) {
  std::vector<std::uint32_t> t(36, 1), u(36, 2);
  for (int x = 0; x < 2; ++x)
    for (int y = 0; y < 4; ++y) t[x * 6 + y] = 0;
  for (int y = 0; y < 4; ++y) {
    u[0 * 6 + y] = 1;  // A
    u[1 * 6 + y] = 0;  // B
  }
  u[2 * 6 + 0] = 0;
  std::vector<std::uint32_t> labels = u;
  labels.insert(labels.end(), t.begin(), t.end());
  SuperpixelStack s(2, 6, 6, labels, 3);
  auto flows = uniform_flows(1, 6, 6, 0.0, 0.0);
  auto m = match_frame_pair(1, 0, s, flows, 0.4);
  ASSERT_FALSE(m.empty());
  EXPECT_EQ(m[0].target_region, 0u);
  EXPECT_EQ(m[0].source_region, 1u);
  EXPECT_DOUBLE_EQ(m[0].score.iou_forward, 0.5);
  EXPECT_DOUBLE_EQ(m[0].score.iou_backward, 0.5);

  // Lower tau cannot change the winner; tau above 0.5 removes the match.
  EXPECT_EQ(match_frame_pair(1, 0, s, flows, 0.0)[0].source_region, 1u);
  auto strict = match_frame_pair(1, 0, s, flows, 0.5);
  EXPECT_TRUE(strict.empty() || strict[0].target_region != 0u);
}

TEST(MatchFramePair, TieBreaksOnLowestSourceIndex) {
  // T = 8 px; two sources each own 4 px of T -> IoU 0.5 each.
  std::vector<std::uint32_t> t(16, 1), u(16, 2);
  for (int k = 0; k < 8; ++k) t[k] = 0;
  for (int k = 0; k < 4; ++k) u[k] = 1;
  for (int k = 4; k < 8; ++k) u[k] = 0;
  std::vector<std::uint32_t> labels = u;
  labels.insert(labels.end(), t.begin(), t.end());
  SuperpixelStack s(2, 4, 4, labels, 3);
  auto m = match_frame_pair(1, 0, s, uniform_flows(1, 4, 4, 0, 0), 0.4);
  ASSERT_FALSE(m.empty());
  EXPECT_EQ(m[0].source_region, 0u);
}

TEST(MatchFramePair, RejectsBadArguments) {
  SuperpixelStack s(2, 2, 2, std::vector<std::uint32_t>(8, 0), 1);
  auto flows = uniform_flows(1, 2, 2, 0, 0);
  EXPECT_THROW(match_frame_pair(0, 0, s, flows, 0.4), Error);
  EXPECT_THROW(match_frame_pair(1, 0, s, flows, 1.0), Error);
  EXPECT_THROW(match_frame_pair(1, 0, s, FlowSequence{}, 0.4), Error);
}

TEST(MatchFramePair, RecoversGeneratorTruth) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto b = synth::generate(synth::make_lane_scene(lane_params(5), seed));
    const auto t = b.spec.target;
    std::set<std::tuple<std::size_t, std::uint32_t, std::uint32_t>> truth, found;
    for (const auto& r : b.truth)
      if (r.frame != t) truth.insert({r.frame, r.src_region, r.target_region});
    for (std::size_t u = 0; u < b.spec.frames; ++u) {
      if (u == t) continue;
      for (const auto& m : match_frame_pair(t, u, b.superpixels, b.flows, 0.4))
        found.insert({u, m.source_region, m.target_region});
    }
    EXPECT_EQ(found, truth) << "seed " << seed;
  }
}

TEST(BuildTable, SingleFrameIsDegenerate) {
  SuperpixelStack s(1, 2, 3, {0, 0, 1, 2, 2, 1}, 3);
  auto r = build_table(0, {0}, s, FlowSequence{}, 0.4);
  EXPECT_EQ(r.table.regions(), 3u);
  for (std::uint32_t j = 0; j < 3; ++j) EXPECT_EQ(r.table.matched_frames(j), 1u);
  EXPECT_TRUE(std::ranges::equal(r.canonical.labels(), s.labels()));
  EXPECT_EQ(r.canonical.region_count(), 3u);
}

TEST(BuildTable, FullyVisibleObjectsMatchInEveryFrame) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto b = synth::generate(synth::make_lane_scene(lane_params(5), seed));
    auto r = build_table(b.spec.target, all_frames(5), b.superpixels, b.flows, 0.4);
    for (std::uint32_t j = 0; j < r.table.regions(); ++j) EXPECT_EQ(r.table.matched_frames(j), 5u);
    EXPECT_EQ(r.frames, all_frames(5));
    EXPECT_EQ(r.target_position, b.spec.target);
  }
}

TEST(BuildTable, HeavilyCorruptedFlowLeavesMostlySelfMatches) {
  std::size_t regions = 0, lonely = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto b = synth::corrupt_flow(synth::generate(synth::make_lane_scene(lane_params(5), seed)), 25.0, seed);
    auto r = build_table(b.spec.target, all_frames(5), b.superpixels, b.flows, 0.4);
    for (std::uint32_t j = 0; j < r.table.regions(); ++j) {
      ++regions;
      lonely += r.table.matched_frames(j) == 1 ? 1 : 0;
      ASSERT_GE(r.table.matched_frames(j), 1u);
      for (const auto& m : r.table.entries[j])
        if (m.frame != b.spec.target) {
          EXPECT_GT(m.score.score(), 0.4);
        }
    }
  }
  EXPECT_GT(static_cast<double>(lonely) / static_cast<double>(regions), 0.5);
}

TEST(BuildTable, IdentityFlowSymmetry) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng() % 4, h = 3 + rng() % 4, w = 3 + rng() % 4;
    auto frame = oracle::random_labels(1, h * w, 4, rng);
    std::vector<std::uint32_t> labels;
    for (std::size_t i = 0; i < n; ++i) labels.insert(labels.end(), frame.begin(), frame.end());
    auto s = relabel_contiguous(SuperpixelStack::from_labels(n, h, w, labels)).stack;
    auto r = build_table(n / 2, all_frames(n), s, uniform_flows(n - 1, h, w, 0, 0), 0.4);
    for (std::uint32_t j = 0; j < r.table.regions(); ++j) {
      EXPECT_EQ(r.table.matched_frames(j), n);
      for (const auto& m : r.table.entries[j]) {
        EXPECT_EQ(m.score.score(), 1.0);
        EXPECT_EQ(m.source_region, j);
      }
    }
  }
}

// Properties over random bundles with noisy flow: raising tau never adds
// matches; stored scores exceed tau and equal an independent recomputation;
// canonical regions warp onto their target region with IoU > tau.
TEST(BuildTable, MonotonicityValidityAndCanonicalConsistency) {
  auto p = lane_params(5);
  p.min_size = 2;
  for (std::uint64_t seed = 0; seed < 15; ++seed) {
    auto b = synth::corrupt_flow(synth::generate(synth::make_lane_scene(p, seed)), 0.7, seed + 100);
    const auto t = b.spec.target, h = b.spec.height, w = b.spec.width;
    std::size_t previous = std::numeric_limits<std::size_t>::max();
    for (double tau : {0.0, 0.2, 0.4, 0.6, 0.8, 0.95}) {
      auto r = build_table(t, all_frames(5), b.superpixels, b.flows, tau);
      EXPECT_LE(r.table.total_matches(), previous) << "seed " << seed << " tau " << tau;
      previous = r.table.total_matches();

      for (std::uint32_t j = 0; j < r.table.regions(); ++j)
        for (const auto& m : r.table.entries[j]) {
          if (m.frame == t) continue;
          EXPECT_GT(m.score.score(), tau);
          auto fwd = warp_region(b.superpixels.region(m.frame, m.source_region),
                                 compose_flow(b.flows, m.frame, t, h, w));
          auto bwd = warp_region(b.superpixels.region(t, j), compose_flow(b.flows, t, m.frame, h, w));
          EXPECT_EQ(m.score.iou_forward, oracle::set_iou(as_set(fwd, w), as_set(b.superpixels.region(t, j), w)));
          EXPECT_EQ(m.score.iou_backward,
                    oracle::set_iou(as_set(bwd, w), as_set(b.superpixels.region(m.frame, m.source_region), w)));
        }

      for (std::size_t k = 0; k < r.frames.size(); ++k) {
        if (r.frames[k] == t) continue;
        for (std::uint32_t j = 0; j < r.canonical.region_count(); ++j) {
          if (!r.canonical.present(k, j)) continue;
          auto warped = warp_region(r.canonical.region(k, j), compose_flow(b.flows, r.frames[k], t, h, w));
          EXPECT_GT(iou(warped, b.superpixels.region(t, j)), tau);
        }
      }
    }
  }
}

TEST(BuildTable, ThreadCountDoesNotChangeResult) {
  auto b = synth::corrupt_flow(synth::generate(synth::make_lane_scene(lane_params(7), 4)), 0.6, 1);
  auto one = build_table(3, all_frames(7), b.superpixels, b.flows, 0.4, 1);
  auto four = build_table(3, all_frames(7), b.superpixels, b.flows, 0.4, 4);
  EXPECT_EQ(format_table_csv(one.table), format_table_csv(four.table));
  EXPECT_TRUE(std::ranges::equal(one.canonical.labels(), four.canonical.labels()));
}

TEST(BuildTable, TargetMustBeSampled) {
  SuperpixelStack s(2, 2, 2, std::vector<std::uint32_t>(8, 0), 1);
  EXPECT_THROW(build_table(1, {0}, s, uniform_flows(1, 2, 2, 0, 0), 0.4), Error);
}

TEST(SampleFrames, DefaultPolicy) {
  SamplingPolicy policy;  // interval 3, 100 candidates, 11 frames
  auto candidates = candidate_frames(1000, 500, policy);
  ASSERT_EQ(candidates.size(), 100u);
  std::set<std::size_t> expected;
  for (std::size_t k = 1; k <= 50; ++k) {
    expected.insert(500 + 3 * k);
    expected.insert(500 - 3 * k);
  }
  EXPECT_EQ(std::set<std::size_t>(candidates.begin(), candidates.end()), expected);
  EXPECT_EQ(candidates[0], 503u);
  EXPECT_EQ(candidates[1], 497u);

  auto frames = sample_frames(1000, 500, policy);
  ASSERT_EQ(frames.size(), 11u);
  EXPECT_TRUE(std::ranges::find(frames, 500u) != frames.end());
  for (auto f : frames)
    if (f != 500) {
      EXPECT_TRUE(expected.count(f));
    }
  EXPECT_TRUE(std::is_sorted(frames.begin(), frames.end()));
}

TEST(SampleFrames, ExhaustionAtVideoStart) {
  SamplingPolicy policy;
  EXPECT_EQ(candidate_frames(7, 0, policy), (std::vector<std::size_t>{3, 6}));
  EXPECT_EQ(sample_frames(7, 0, policy), (std::vector<std::size_t>{0, 3, 6}));
}

TEST(SampleFrames, FillsFromRemainingSide) {
  SamplingPolicy policy;
  policy.interval = 1;
  policy.max_candidates = 5;
  policy.sample_size = 3;
  EXPECT_EQ(candidate_frames(10, 8, policy), (std::vector<std::size_t>{9, 7, 6, 5, 4}));
}

TEST(SampleFrames, PastOnly) {
  SamplingPolicy policy;
  policy.sample_size = 3;
  policy.direction = SampleDirection::past_only;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    policy.seed = seed;
    auto frames = sample_frames(30, 10, policy);
    ASSERT_EQ(frames.size(), 3u);
    for (auto f : frames) EXPECT_TRUE(f == 10 || f == 7 || f == 4 || f == 1);
  }
}

TEST(SampleFrames, DeterministicAndValidated) {
  SamplingPolicy policy;
  policy.seed = 42;
  EXPECT_EQ(sample_frames(300, 150, policy), sample_frames(300, 150, policy));
  EXPECT_THROW(sample_frames(10, 10, policy), Error);
  policy.sample_size = 0;
  EXPECT_THROW(sample_frames(10, 1, policy), Error);
}

TEST(SampleFrames, MaxDistanceBoundsCandidates) {
  SamplingPolicy policy;
  policy.max_distance = 6;
  EXPECT_EQ(candidate_frames(100, 50, policy), (std::vector<std::size_t>{53, 47, 56, 44}));
}

TEST(CorrespondenceStats, UniformCase) {
  CorrespondenceTable t;
  t.target = 0;
  t.entries.resize(3);
  t.region_sizes = {4, 4, 4};
  for (auto& e : t.entries)
    for (std::size_t f = 0; f < 5; ++f) e.push_back({f, 0, {1, 1}});
  auto stats = correspondence_stats({t});
  ASSERT_EQ(stats.size(), 1u);
  EXPECT_EQ(stats[0].lo, 4u);
  EXPECT_EQ(stats[0].hi, 8u);
  EXPECT_EQ(stats[0].fraction, 1.0);
  EXPECT_EQ(stats[0].mean_matches, 5.0);
  EXPECT_TRUE(correspondence_stats({}).empty());
}

TEST(CorrespondenceStats, LargeRegionsCollectMoreMatchesUnderNoisyFlow) {
  synth::LaneSceneParams p = lane_params(7);
  p.height = 40;
  p.width = 40;
  p.lanes = 5;
  p.min_size = 2;
  p.max_size = 7;
  p.max_splits = 1;
  std::vector<CorrespondenceTable> tables;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    auto b = synth::corrupt_flow(synth::generate(synth::make_lane_scene(p, seed)), 1.0, seed);
    tables.push_back(build_table(b.spec.target, all_frames(7), b.superpixels, b.flows, 0.4).table);
  }
  auto stats = correspondence_stats(tables, {1, 16, 32, 1000});
  ASSERT_GE(stats.size(), 2u);
  EXPECT_LT(stats.front().mean_matches, stats.back().mean_matches);
  double total = 0.0;
  for (const auto& s : stats) total += s.fraction;
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(TableCsv, SortedRows) {
  SuperpixelStack s(1, 1, 2, {0, 1}, 2);
  auto r = build_table(0, {0}, s, FlowSequence{}, 0.4);
  EXPECT_EQ(format_table_csv(r.table),
            "target_region,frame,source_region,iou_fwd,iou_bwd\n0,0,0,1,1\n1,0,1,1,1\n");
}
