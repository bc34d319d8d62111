#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "madcat/masking.hpp"

namespace madcat {
namespace {

using nn::Vector;

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

TEST(SampleMask, CountIsFloorOfRatioTimesDim) {
  EXPECT_EQ(sample_mask(10, {0.3, 1}, 0).size(), 3u);
  EXPECT_EQ(sample_mask(1159, {0.3, 1}, 0).size(), 347u);
  EXPECT_TRUE(sample_mask(10, {0.0, 1}, 0).empty());
}

TEST(SampleMask, CountExactForEveryDimAndTenthRatio) {
  for (int tenths = 0; tenths <= 9; ++tenths) {
    const MaskingConfig cfg{tenths / 10.0, 99};
    for (std::size_t dim = 1; dim <= 2000; ++dim) {
      // Integer oracle: floor(tenths * dim / 10).
      ASSERT_EQ(mask_count(cfg.ratio, dim), tenths * dim / 10) << "dim " << dim << " ratio " << cfg.ratio;
    }
  }
  for (int tenths = 0; tenths <= 9; ++tenths)
    for (std::size_t dim : {1u, 7u, 20u, 333u, 1159u, 2000u})
      ASSERT_EQ(sample_mask(dim, {tenths / 10.0, 5}, dim).size(), tenths * dim / 10);
}

TEST(SampleMask, IndicesSortedUniqueInRange) {
  for (std::uint64_t draw = 0; draw < 200; ++draw) {
    const auto m = sample_mask(50, {0.9, 3}, draw);
    ASSERT_EQ(m.dim, 50u);
    for (std::size_t i = 0; i < m.size(); ++i) {
      ASSERT_LT(m.indices[i], 50u);
      if (i) ASSERT_LT(m.indices[i - 1], m.indices[i]);
    }
  }
}

TEST(SampleMask, ReproducibleFromSeedAndDrawIndex) {
  EXPECT_EQ(sample_mask(100, {0.4, 8}, 17), sample_mask(100, {0.4, 8}, 17));
  EXPECT_NE(sample_mask(100, {0.4, 8}, 17), sample_mask(100, {0.4, 8}, 18));
  EXPECT_NE(sample_mask(100, {0.4, 8}, 17), sample_mask(100, {0.4, 9}, 17));
}

TEST(SampleMask, InclusionFrequencyIsUniform) {
  std::vector<int> hits(20, 0);
  for (std::uint64_t draw = 0; draw < 10000; ++draw)
    for (auto i : sample_mask(20, {0.5, 42}, draw).indices) ++hits[i];
  for (int h : hits) {
    EXPECT_GE(h / 10000.0, 0.45);
    EXPECT_LE(h / 10000.0, 0.55);
  }
}

TEST(SampleMask, RejectsRatioOutsideRange) {
  EXPECT_THROW(sample_mask(10, {0.95, 0}, 0), ConfigError);
  EXPECT_THROW(sample_mask(10, {-0.1, 0}, 0), ConfigError);
  EXPECT_THROW(sample_mask(0, {0.3, 0}, 0), ConfigError);
}

TEST(ApplyMask, FillsMaskedPositionsWithHalf) {
  const Vector x = vec({1, 0, 1, 1});
  const Vector out = apply_mask(x, MaskSpec{4, {1, 3}});
  EXPECT_EQ(out, vec({1, 0.5, 1, 0.5}));
  EXPECT_EQ(x, vec({1, 0, 1, 1}));
}

TEST(ApplyMask, EmptyAndFullMasks) {
  const Vector x = vec({1, 0, 1, 1});
  EXPECT_EQ(apply_mask(x, MaskSpec{4, {}}), x);
  EXPECT_EQ(apply_mask(x, MaskSpec::full(4)), Vector::Constant(4, 0.5));
  EXPECT_EQ(apply_mask(x, MaskSpec{4, {0}}, 0.0), vec({0, 0, 1, 1}));
}

TEST(ApplyMask, RejectsDimensionMismatch) {
  EXPECT_THROW(apply_mask(vec({1, 0}), MaskSpec{3, {0}}), DataError);
}

TEST(ReconstructionLoss, PerfectReconstructionNearZero) {
  const Vector original = vec({1, 0, 1, 0, 0, 1});
  Vector probs(6);
  for (int i = 0; i < 6; ++i) probs[i] = original[i] == 1.0 ? 0.9999999 : 1e-7;
  EXPECT_LE(reconstruction_loss(probs, original, MaskSpec{6, {0, 1, 2, 5}}), 1e-6);
}

TEST(ReconstructionLoss, HalfProbabilitiesGiveLn2) {
  EXPECT_NEAR(reconstruction_loss(Vector::Constant(5, 0.5), vec({1, 1, 0, 1, 0}), MaskSpec{5, {0, 2, 3}}),
              std::log(2.0), 1e-15);
  EXPECT_NEAR(reconstruction_loss(Vector::Constant(5, 0.5), vec({0, 0, 0, 0, 0}), MaskSpec{5, {4}}),
              std::log(2.0), 1e-15);
}

TEST(ReconstructionLoss, MatchesPerPositionOracle) {
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    Vector p(16), t(16);
    for (int i = 0; i < 16; ++i) {
      p[i] = rng.uniform(0.001, 0.999);
      t[i] = static_cast<double>(rng.below(2));
    }
    const auto mask = sample_mask(16, {0.5, 4}, static_cast<std::uint64_t>(trial));
    double sum = 0.0;
    for (auto i : mask.indices) sum -= t[i] * std::log(p[i]) + (1.0 - t[i]) * std::log(1.0 - p[i]);
    EXPECT_NEAR(reconstruction_loss(p, t, mask), sum / 8.0, 1e-12);
  }
}

TEST(ReconstructionLoss, EmptyMaskRefusedUnlessAllPositions) {
  EXPECT_THROW(reconstruction_loss(Vector::Constant(3, 0.5), vec({1, 0, 1}), MaskSpec{3, {}}), DataError);
  EXPECT_NEAR(reconstruction_loss(Vector::Constant(3, 0.5), vec({1, 0, 1}), MaskSpec{3, {}}, LossScope::all_positions),
              std::log(2.0), 1e-15);
}

TEST(ReconstructionLoss, IgnoresUnmaskedPerturbations) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    Vector p(32), t(32);
    for (int i = 0; i < 32; ++i) {
      p[i] = rng.uniform(0.01, 0.99);
      t[i] = static_cast<double>(rng.below(2));
    }
    const auto mask = sample_mask(32, {0.3, 6}, static_cast<std::uint64_t>(trial));
    const double before = reconstruction_loss(p, t, mask);
    std::set<std::uint32_t> masked(mask.indices.begin(), mask.indices.end());
    Vector q = p;
    for (std::uint32_t i = 0; i < 32; ++i)
      if (!masked.count(i)) q[i] = rng.uniform(0.0, 1.0);
    ASSERT_EQ(reconstruction_loss(q, t, mask), before);
  }
}

}  // namespace
}  // namespace madcat
