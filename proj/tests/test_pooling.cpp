#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "oracles.hpp"
#include "std2p/pooling.hpp"

using namespace std2p;

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

// Distinct values with gaps far larger than the finite-difference step, so
// max pooling has a unique, stable argmax.
std::vector<double> separated_values(std::size_t n, std::mt19937_64& rng) {
  std::vector<double> v(n);
  for (std::size_t k = 0; k < n; ++k) v[k] = 0.01 * static_cast<double>(k);
  std::shuffle(v.begin(), v.end(), rng);
  return v;
}

SuperpixelStack random_stack(std::size_t n, std::size_t h, std::size_t w, std::uint32_t p, std::mt19937_64& rng) {
  return SuperpixelStack(n, h, w, oracle::random_labels(n, h * w, p, rng), p);
}

// Every region present in at least one frame: frame 0 holds 0..P-1 in order.
SuperpixelStack covering_stack(std::size_t n, std::size_t h, std::size_t w, std::uint32_t p, std::mt19937_64& rng) {
  auto labels = oracle::random_labels(n, h * w, p, rng);
  for (std::uint32_t j = 0; j < p && j < h * w; ++j) labels[j] = j;
  return SuperpixelStack(n, h, w, labels, p);
}

}  // namespace

TEST(SpatialPool, AverageOfTwoByTwoRegion) {
  FeatureStack f(1, 1, 2, 2, {1, 2, 3, 4});
  SuperpixelStack s(1, 2, 2, {0, 0, 0, 0}, 1);
  auto out = spatial_pool_fwd(f, s, PoolMode::avg);
  EXPECT_EQ(out(0, 0, 0), 2.5);
  auto mx = spatial_pool_fwd(f, s, PoolMode::max);
  EXPECT_EQ(mx(0, 0, 0), 4.0);
  EXPECT_EQ(mx.argmax[0], 3);
}

TEST(SpatialPool, AbsentRegionIsMasked) {
  FeatureStack f(2, 1, 1, 2, {1, 2, 5, 7});
  SuperpixelStack s(2, 1, 2, {0, 0, 0, 1}, 2);
  auto out = spatial_pool_fwd(f, s, PoolMode::avg);
  EXPECT_TRUE(out.is_present(0, 0));
  EXPECT_FALSE(out.is_present(0, 1));
  EXPECT_EQ(out(1, 0, 1), 7.0);
}

TEST(SpatialPool, MaxTieGoesToFirstPixel) {
  FeatureStack f(1, 1, 2, 2, {3, 1, 3, 3});
  SuperpixelStack s(1, 2, 2, {0, 0, 0, 0}, 1);
  EXPECT_EQ(spatial_pool_fwd(f, s, PoolMode::max).argmax[0], 0);
}

TEST(SpatialPool, RejectsShapeAndNonCanonicalInput) {
  FeatureStack f(1, 1, 2, 2);
  EXPECT_THROW(spatial_pool_fwd(f, SuperpixelStack(1, 2, 3, std::vector<std::uint32_t>(6, 0), 1), PoolMode::avg),
               Error);
  try {
    spatial_pool_fwd(f, SuperpixelStack(1, 2, 2, {0, 0, 4, 0}, 1), PoolMode::avg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "non-canonical-superpixels");
  }
  // The no-match sentinel is allowed and contributes nowhere.
  auto out = spatial_pool_fwd(FeatureStack(1, 1, 1, 2, {1, 9}), SuperpixelStack(1, 1, 2, {0, kNoRegion}, 1),
                              PoolMode::avg);
  EXPECT_EQ(out(0, 0, 0), 1.0);
}

TEST(SpatialPool, AgreesWithNaiveOracle) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 3, c = 1 + rng() % 3, h = 1 + rng() % 6, w = 1 + rng() % 6;
    const std::uint32_t p = 1 + static_cast<std::uint32_t>(rng() % 7);
    FeatureStack f(n, c, h, w, oracle::random_values(n * c * h * w, rng));
    auto s = random_stack(n, h, w, p, rng);
    for (bool max_mode : {false, true}) {
      auto ours = spatial_pool_fwd(f, s, max_mode ? PoolMode::max : PoolMode::avg);
      auto ref = oracle::naive_spatial_pool(f, std::vector<std::uint32_t>(s.labels().begin(), s.labels().end()),
                                            p, max_mode);
      for (std::size_t i = 0; i < n; ++i)
        for (std::uint32_t j = 0; j < p; ++j) {
          ASSERT_EQ(ours.is_present(i, j), ref.present[i * p + j] == 1);
          if (!ours.is_present(i, j)) continue;
          for (std::size_t k = 0; k < c; ++k) {
            EXPECT_NEAR(ours(i, k, j), ref.value[(i * c + k) * p + j], 1e-12);
            if (max_mode) {
              EXPECT_EQ(ours.argmax[ours.offset(i, k, j)], ref.argmax[(i * c + k) * p + j]);
            }
          }
        }
    }
  }
}

TEST(SpatialPool, BackwardSpreadsEvenlyForAverage) {
  FeatureStack f(1, 1, 2, 2, {1, 2, 3, 4});
  SuperpixelStack s(1, 2, 2, {0, 0, 0, 0}, 1);
  auto saved = spatial_pool_fwd(f, s, PoolMode::avg);
  RegionFeatureStack g(1, 1, 1);
  g(0, 0, 0) = 1.0;
  auto grad = spatial_pool_bwd(g, saved, s, PoolMode::avg);
  for (double v : grad.values()) EXPECT_EQ(v, 0.25);

  auto saved_max = spatial_pool_fwd(f, s, PoolMode::max);
  auto grad_max = spatial_pool_bwd(g, saved_max, s, PoolMode::max);
  EXPECT_EQ(std::vector<double>(grad_max.values().begin(), grad_max.values().end()),
            (std::vector<double>{0, 0, 0, 1}));
  EXPECT_THROW(spatial_pool_bwd(g, saved, s, PoolMode::max), Error);
}

// <grad_out, forward(x)> == <backward(grad_out), x> for the linear avg path.
TEST(SpatialPool, AverageIsAdjointToBackward) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng() % 3, c = 1 + rng() % 3, h = 2 + rng() % 5, w = 2 + rng() % 5;
    const std::uint32_t p = 1 + static_cast<std::uint32_t>(rng() % 6);
    FeatureStack f(n, c, h, w, oracle::random_values(n * c * h * w, rng));
    auto s = random_stack(n, h, w, p, rng);
    auto out = spatial_pool_fwd(f, s, PoolMode::avg);
    RegionFeatureStack g(n, c, p);
    g.data = oracle::random_values(g.data.size(), rng);
    // Masked entries do not participate.
    for (std::size_t i = 0; i < n; ++i)
      for (std::uint32_t j = 0; j < p; ++j)
        if (!out.is_present(i, j))
          for (std::size_t k = 0; k < c; ++k) g(i, k, j) = 0.0;
    auto back = spatial_pool_bwd(g, out, s, PoolMode::avg);
    EXPECT_NEAR(dot(g.data, out.data), dot(back.values(), f.values()), 1e-10);
  }
}

TEST(SpatialPool, AverageIsLinear) {
  std::mt19937_64 rng(6);
  const std::size_t n = 2, c = 2, h = 4, w = 5;
  auto s = random_stack(n, h, w, 4, rng);
  FeatureStack a(n, c, h, w, oracle::random_values(n * c * h * w, rng));
  FeatureStack b(n, c, h, w, oracle::random_values(n * c * h * w, rng));
  FeatureStack mix(n, c, h, w);
  for (std::size_t k = 0; k < mix.values().size(); ++k) mix.values()[k] = 2.0 * a.values()[k] - 3.0 * b.values()[k];
  auto pa = spatial_pool_fwd(a, s, PoolMode::avg), pb = spatial_pool_fwd(b, s, PoolMode::avg);
  auto pm = spatial_pool_fwd(mix, s, PoolMode::avg);
  for (std::size_t k = 0; k < pm.data.size(); ++k) EXPECT_NEAR(pm.data[k], 2.0 * pa.data[k] - 3.0 * pb.data[k], 1e-12);
}

TEST(SpatialPool, FiniteDifferences) {
  std::mt19937_64 rng(13);
  const double h_step = 1e-6;
  for (auto mode : {PoolMode::avg, PoolMode::max}) {
    for (int trial = 0; trial < 10; ++trial) {
      const std::size_t n = 2, c = 2, h = 3, w = 4;
      const std::uint32_t p = 3;
      FeatureStack f(n, c, h, w, separated_values(n * c * h * w, rng));
      auto s = random_stack(n, h, w, p, rng);
      RegionFeatureStack g(n, c, p);
      g.data = oracle::random_values(g.data.size(), rng);
      auto loss = [&](const FeatureStack& x) {
        auto o = spatial_pool_fwd(x, s, mode);
        double l = 0;
        for (std::size_t k = 0; k < o.data.size(); ++k)
          if (o.is_present(k / (c * p), k % p)) l += g.data[k] * o.data[k];
        return l;
      };
      auto saved = spatial_pool_fwd(f, s, mode);
      auto analytic = spatial_pool_bwd(g, saved, s, mode);
      for (std::size_t q = 0; q < f.values().size(); ++q) {
        FeatureStack plus = f, minus = f;
        plus.values()[q] += h_step;
        minus.values()[q] -= h_step;
        const double numeric = (loss(plus) - loss(minus)) / (2 * h_step);
        EXPECT_NEAR(analytic.values()[q], numeric, 1e-6) << to_string(mode) << " q=" << q;
      }
    }
  }
}

TEST(TemporalPool, AverageOverPresentFramesOnly) {
  RegionFeatureStack in(3, 1, 2);
  in(0, 0, 0) = 1;
  in(1, 0, 0) = 5;
  in(2, 0, 0) = 100;  // absent, must be ignored
  in(2, 0, 1) = -4;
  in.present = {1, 0, 1, 0, 0, 1};
  auto out = temporal_pool_fwd(in, PoolMode::avg);
  EXPECT_EQ(out(0, 0), 3.0);
  EXPECT_EQ(out(0, 1), -4.0);
  EXPECT_EQ(out.matched, (std::vector<std::size_t>{2, 1}));

  auto mx = temporal_pool_fwd(in, PoolMode::max);
  EXPECT_EQ(mx(0, 0), 5.0);
  EXPECT_EQ(mx.arg_frame[0], 1);
}

TEST(TemporalPool, SingleFrameIsIdentity) {
  std::mt19937_64 rng(1);
  RegionFeatureStack in(1, 3, 4);
  in.data = oracle::random_values(12, rng);
  in.present.assign(4, 1);
  for (auto mode : {PoolMode::avg, PoolMode::max}) EXPECT_EQ(temporal_pool_fwd(in, mode).data, in.data);
}

TEST(TemporalPool, MaxTieGoesToLowestFrame) {
  RegionFeatureStack in(3, 1, 1);
  in.data = {2, 7, 7};
  in.present = {1, 1, 1};
  EXPECT_EQ(temporal_pool_fwd(in, PoolMode::max).arg_frame[0], 1);
}

TEST(TemporalPool, RejectsRegionWithNoFrames) {
  RegionFeatureStack in(2, 1, 2);
  in.present = {1, 0, 1, 0};
  try {
    temporal_pool_fwd(in, PoolMode::avg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "no-present-frame");
  }
}

TEST(TemporalPool, BackwardAndMaskDiscipline) {
  RegionFeatureStack in(3, 1, 1);
  in.data = {1, 9, 4};
  in.present = {1, 0, 1};
  auto out = temporal_pool_fwd(in, PoolMode::avg);
  RegionFeatureMap g(1, 1);
  g(0, 0) = 6.0;
  auto grad = temporal_pool_bwd(g, in, out, PoolMode::avg);
  EXPECT_EQ(grad.data, (std::vector<double>{3, 0, 3}));

  auto out_max = temporal_pool_fwd(in, PoolMode::max);
  RegionFeatureMap gm(1, 1, PoolMode::max);
  gm(0, 0) = 6.0;
  auto grad_max = temporal_pool_bwd(gm, in, out_max, PoolMode::max);
  EXPECT_EQ(grad_max.data, (std::vector<double>{0, 0, 6}));
}

TEST(TemporalPool, FiniteDifferencesAndAbsentEntriesStayZero) {
  std::mt19937_64 rng(17);
  const double h_step = 1e-6;
  for (auto mode : {PoolMode::avg, PoolMode::max}) {
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t n = 4, c = 2, p = 3;
      RegionFeatureStack in(n, c, p);
      in.data = separated_values(n * c * p, rng);
      for (std::size_t j = 0; j < p; ++j) {
        in.present[j] = 1;  // frame 0 always present
        for (std::size_t i = 1; i < n; ++i) in.present[i * p + j] = rng() % 2;
      }
      RegionFeatureMap g(c, p);
      g.data = oracle::random_values(c * p, rng);
      auto loss = [&](const RegionFeatureStack& x) { return dot(g.data, temporal_pool_fwd(x, mode).data); };
      auto out = temporal_pool_fwd(in, mode);
      g.mode = mode;
      auto analytic = temporal_pool_bwd(g, in, out, mode);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < c; ++k)
          for (std::size_t j = 0; j < p; ++j) {
            if (!in.is_present(i, j)) {
              EXPECT_EQ(analytic(i, k, j), 0.0);
              continue;
            }
            auto plus = in, minus = in;
            plus(i, k, j) += h_step;
            minus(i, k, j) -= h_step;
            EXPECT_NEAR(analytic(i, k, j), (loss(plus) - loss(minus)) / (2 * h_step), 1e-6);
          }
    }
  }
}

TEST(RegionToPixel, BroadcastAndSum) {
  SuperpixelStack s(1, 2, 2, {0, 1, 1, 1}, 2);
  RegionFeatureMap m(1, 2);
  m(0, 0) = 0.5;
  m(0, 1) = -2.0;
  m.matched = {1, 1};
  auto out = region_to_pixel_fwd(m, s, 0);
  EXPECT_EQ(out.data, (std::vector<double>{0.5, -2, -2, -2}));

  DenseScoreMap g(1, 2, 2);
  g.data = {1, 2, 3, 4};
  auto back = region_to_pixel_bwd(g, s, 0, 2);
  EXPECT_EQ(back.data, (std::vector<double>{1, 9}));
}

TEST(RegionToPixel, MissingRegionValue) {
  SuperpixelStack s(1, 1, 2, {0, 1}, 2);
  RegionFeatureMap m(1, 2);
  m.matched = {1, 0};
  EXPECT_THROW(region_to_pixel_fwd(m, s, 0), Error);
  EXPECT_THROW(region_to_pixel_fwd(m, s, 3), Error);
}

TEST(RegionToPixel, AdjointProperty) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t c = 1 + rng() % 3, h = 2 + rng() % 5, w = 2 + rng() % 5;
    const std::uint32_t p = 1 + static_cast<std::uint32_t>(rng() % 5);
    auto s = covering_stack(1, h, w, p, rng);
    RegionFeatureMap m(c, p);
    m.data = oracle::random_values(c * p, rng);
    m.matched.assign(p, 1);
    DenseScoreMap g(c, h, w);
    g.data = oracle::random_values(g.data.size(), rng);
    auto out = region_to_pixel_fwd(m, s, 0);
    auto back = region_to_pixel_bwd(g, s, 0, p);
    EXPECT_NEAR(dot(g.data, out.data), dot(back.data, m.data), 1e-10);
  }
}

TEST(Head, IdenticalFramesReduceToSingleFramePooling) {
  std::mt19937_64 rng(31);
  const std::size_t n = 3, c = 2, h = 4, w = 4;
  auto frame_labels = oracle::random_labels(1, h * w, 3, rng);
  for (std::uint32_t j = 0; j < 3; ++j) frame_labels[j] = j;
  std::vector<std::uint32_t> labels;
  for (std::size_t i = 0; i < n; ++i) labels.insert(labels.end(), frame_labels.begin(), frame_labels.end());
  SuperpixelStack s(n, h, w, labels, 3);
  auto one = oracle::random_values(c * h * w, rng);
  std::vector<double> values;
  for (std::size_t i = 0; i < n; ++i)
    for (double v : one) values.push_back(v);
  FeatureStack f(n, c, h, w, values);
  FeatureStack single(1, c, h, w, one);
  SuperpixelStack single_s(1, h, w, frame_labels, 3);
  for (auto sm : {PoolMode::avg, PoolMode::max})
    for (auto tm : {PoolMode::avg, PoolMode::max}) {
      Std2pHead multi(sm, tm), solo(sm, tm);
      auto a = multi.forward(f, s, 1);
      auto b = solo.forward(single, single_s, 0);
      for (std::size_t k = 0; k < a.data.size(); ++k) EXPECT_NEAR(a.data[k], b.data[k], 1e-12);
    }
}

TEST(Head, FiniteDifferencesThroughAllLayers) {
  std::mt19937_64 rng(41);
  const double h_step = 1e-6;
  for (auto sm : {PoolMode::avg, PoolMode::max})
    for (auto tm : {PoolMode::avg, PoolMode::max}) {
      const std::size_t n = 3, c = 2, h = 3, w = 4;
      const std::uint32_t p = 4;
      auto s = covering_stack(n, h, w, p, rng);
      // Target position 1 must show every region.
      auto labels = std::vector<std::uint32_t>(s.labels().begin(), s.labels().end());
      for (std::uint32_t j = 0; j < p; ++j) labels[h * w + j] = j;
      s = SuperpixelStack(n, h, w, labels, p);
      FeatureStack f(n, c, h, w, separated_values(n * c * h * w, rng));
      DenseScoreMap g(c, h, w);
      g.data = oracle::random_values(g.data.size(), rng);
      Std2pHead head(sm, tm);
      head.forward(f, s, 1);
      auto analytic = head.backward(g);
      auto loss = [&](const FeatureStack& x) {
        Std2pHead probe(sm, tm);
        return dot(g.data, probe.forward(x, s, 1).data);
      };
      for (std::size_t q = 0; q < f.values().size(); ++q) {
        FeatureStack plus = f, minus = f;
        plus.values()[q] += h_step;
        minus.values()[q] -= h_step;
        EXPECT_NEAR(analytic.values()[q], (loss(plus) - loss(minus)) / (2 * h_step), 1e-6)
            << to_string(sm) << "/" << to_string(tm) << " q=" << q;
      }
    }
}

TEST(Head, TableDisagreementIsInternalError) {
  SuperpixelStack s(2, 1, 2, {0, 1, 0, 1}, 2);
  FeatureStack f(2, 1, 1, 2, {1, 2, 3, 4});
  CorrespondenceTable t;
  t.entries.resize(2);
  t.region_sizes = {1, 1};
  t.entries[0] = {{0, 0, {1, 1}}, {1, 0, {1, 1}}};
  t.entries[1] = {{1, 1, {1, 1}}};  // says K=1, stack says K=2
  Std2pHead head(PoolMode::avg, PoolMode::avg);
  try {
    head.forward(f, s, 1, &t);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::internal);
  }
  EXPECT_THROW(Std2pHead(PoolMode::avg, PoolMode::avg).backward(DenseScoreMap(1, 1, 2)), Error);
}

TEST(SelectFrames, PicksInOrder) {
  FeatureStack f(3, 1, 1, 1, {10, 20, 30});
  auto out = select_frames(f, {2, 0});
  EXPECT_EQ(std::vector<double>(out.values().begin(), out.values().end()), (std::vector<double>{30, 10}));
  EXPECT_THROW(select_frames(f, {3}), Error);
}
