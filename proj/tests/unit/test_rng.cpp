#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ssmtl/rng.hpp"

using namespace ssmtl;

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.normal(), b.normal());
}

TEST(Rng, DifferentSeedsDiffer) {
  Rng a(1), b(2);
  EXPECT_NE(a.next_u64(), b.next_u64());
}

TEST(Rng, SplitIgnoresParentDraws) {
  Rng a(9);
  Rng b(9);
  for (int i = 0; i < 17; ++i) b.normal();
  Rng ca = a.split(3), cb = b.split(3);
  EXPECT_EQ(ca.next_u64(), cb.next_u64());
  EXPECT_NE(a.split(3).next_u64(), a.split(4).next_u64());
}

// Mean of 1e6 standard normals lies within 3 / sqrt(1e6) of zero.
TEST(Rng, NormalMoments) {
  Rng rng(5);
  const std::size_t n = 1000000;
  double s = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_LT(std::abs(s / n), 3.0 / std::sqrt(double(n)));
  // Var of the sample second moment is 2/n.
  EXPECT_LT(std::abs(s2 / n - 1.0), 3.0 * std::sqrt(2.0 / n));
}

TEST(Rng, UniformRange) {
  Rng rng(6);
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform(-2.0, 3.0);
    EXPECT_GE(u, -2.0);
    EXPECT_LT(u, 3.0);
  }
}

TEST(Rng, PermutationIsPermutation) {
  Rng rng(7);
  auto p = rng.permutation(50);
  std::sort(p.begin(), p.end());
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(p[i], i);
  EXPECT_TRUE(rng.permutation(0).empty());
}
