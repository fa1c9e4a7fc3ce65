#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "bsg/rng.hpp"
#include "bsg/stats.hpp"

using namespace bsg;

TEST(SplitMix64, MatchesReferenceSequence) {
  // Published reference outputs for seed 1234567.
  SplitMix64 rng(1234567);
  EXPECT_EQ(rng(), 6457827717110365317ULL);
  EXPECT_EQ(rng(), 3203168211198807973ULL);
  EXPECT_EQ(rng(), 9817491932198370423ULL);
  EXPECT_EQ(rng(), 4593380528125082431ULL);
  EXPECT_EQ(rng(), 16408922859458223821ULL);
}

TEST(SplitMix64, UniformAndBelowStayInRange) {
  SplitMix64 rng(3);
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    ASSERT_LT(rng.below(7), 7u);
  }
}

TEST(SplitMix64, NormalMoments) {
  SplitMix64 rng(11);
  const int n = 200000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    s += z;
    s2 += z * z;
  }
  const double mean = s / n;
  EXPECT_LT(std::abs(mean), 4.0 / std::sqrt(n));
  EXPECT_NEAR(s2 / n - mean * mean, 1.0, 0.02);
}

TEST(DeriveSeed, DistinctAcrossStagesAndIndices) {
  std::set<std::uint64_t> seen;
  for (const char* stage : {"init", "batch", "cv", "shuffle"}) {
    for (std::uint64_t i = 0; i < 100; ++i) seen.insert(derive_seed(42, stage, i));
  }
  EXPECT_EQ(seen.size(), 400u);
  EXPECT_EQ(derive_seed(42, "cv", 3), derive_seed(42, "cv", 3));
  EXPECT_NE(derive_seed(42, "cv"), derive_seed(43, "cv"));
}

TEST(Permutation, IsAPermutationAndDeterministic) {
  SplitMix64 a(5), b(5);
  auto p = permutation(1000, a);
  EXPECT_EQ(p, permutation(1000, b));
  std::sort(p.begin(), p.end());
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(p[i], i);
}

TEST(Stats, ExactLineHasUnitR2) {
  std::vector<double> x{0, 1, 2, 3, 4}, y;
  for (double v : x) y.push_back(2.5 * v - 1.0);
  const auto f = stats::linear_fit(x, y);
  EXPECT_NEAR(f.slope, 2.5, 1e-14);
  EXPECT_NEAR(f.intercept, -1.0, 1e-14);
  EXPECT_NEAR(f.r2, 1.0, 1e-14);
}

TEST(Stats, R2MatchesSquaredCorrelation) {
  SplitMix64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> x, y;
    for (int i = 0; i < 40; ++i) {
      x.push_back(rng.normal());
      y.push_back(0.3 * x.back() + rng.normal());
    }
    const double r = stats::pearson(x, y);
    EXPECT_NEAR(stats::linear_fit(x, y).r2, r * r, 1e-12);
  }
}

TEST(Stats, HandComputedFit) {
  // x = 1,2,3 ; y = 1,3,2: slope = 0.5, intercept = 1, r2 = 0.25.
  const auto f = stats::linear_fit({1, 2, 3}, {1, 3, 2});
  EXPECT_NEAR(f.slope, 0.5, 1e-15);
  EXPECT_NEAR(f.intercept, 1.0, 1e-15);
  EXPECT_NEAR(f.r2, 0.25, 1e-15);
}

TEST(Stats, RanksAverageTies) {
  const auto r = stats::ranks({10, 20, 20, 30});
  EXPECT_EQ(r, (std::vector<double>{1, 2.5, 2.5, 4}));
}

TEST(Stats, SpearmanOfMonotoneMaps) {
  std::vector<double> x{0, 10, 30, 100, 300, 1000};
  std::vector<double> up, down;
  for (double v : x) {
    up.push_back(std::log1p(v));
    down.push_back(std::exp(-v / 100));
  }
  EXPECT_NEAR(stats::spearman(x, up), 1.0, 1e-12);
  EXPECT_NEAR(stats::spearman(x, down), -1.0, 1e-12);
}
