#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "confdim/cantor.hpp"

using namespace confdim;

namespace {

// Middle-thirds endpoints as exact integer numerators over 3^n.
std::vector<std::pair<std::int64_t, std::int64_t>> thirds_numerators(int n) {
  std::vector<std::pair<std::int64_t, std::int64_t>> cur{{0, 1}};
  for (int k = 0; k < n; ++k) {
    std::vector<std::pair<std::int64_t, std::int64_t>> next;
    for (auto [a, b] : cur) {
      next.push_back({3 * a, 3 * a + (b - a)});
      next.push_back({3 * b - (b - a), 3 * b});
    }
    cur = next;
  }
  return cur;
}

}  // namespace

TEST(BuildSystem, MiddleThirdsDepthTwo) {
  const auto sys = build_system(GapSequence::constant(1.0 / 3.0, 2), 2);
  const auto& iv = sys.level(2).intervals;
  ASSERT_EQ(iv.size(), 4u);
  const double want[4][2] = {{0, 1.0 / 9}, {2.0 / 9, 1.0 / 3}, {2.0 / 3, 7.0 / 9}, {8.0 / 9, 1}};
  for (int j = 0; j < 4; ++j) {
    EXPECT_NEAR(iv[j].left, want[j][0], 1e-15);
    EXPECT_NEAR(iv[j].right, want[j][1], 1e-15);
  }
}

TEST(BuildSystem, MiddleThirdsMatchesExactNumerators) {
  const int n = 10;
  const auto sys = build_system(GapSequence::constant(1.0 / 3.0, n), n);
  const auto exact = thirds_numerators(n);
  const double scale = std::pow(3.0, n);
  const auto& iv = sys.level(n).intervals;
  ASSERT_EQ(iv.size(), exact.size());
  for (std::size_t j = 0; j < iv.size(); ++j) {
    EXPECT_NEAR(iv[j].left, exact[j].first / scale, 1e-14);
    EXPECT_NEAR(iv[j].right, exact[j].second / scale, 1e-14);
  }
}

TEST(BuildSystem, ZeroGapsGiveTouchingDyadics) {
  const int n = 12;
  const auto sys = build_system(GapSequence::constant(0.0, n), n);
  const auto& iv = sys.level(n).intervals;
  ASSERT_EQ(iv.size(), 1u << n);
  for (std::size_t j = 0; j < iv.size(); ++j) {
    EXPECT_EQ(iv[j].left, std::ldexp(static_cast<double>(j), -n));
    EXPECT_EQ(iv[j].right, std::ldexp(static_cast<double>(j + 1), -n));
  }
}

TEST(BuildSystem, HarmonicLengthTelescopes) {
  const auto sys = build_system(GapSequence::harmonic(3), 3);
  double sum = 0.0;
  for (const auto& iv : sys.level(3).intervals) {
    EXPECT_NEAR(iv.length(), 1.0 / 32.0, 1e-16);
    sum += iv.length();
  }
  EXPECT_NEAR(sum, 8.0 / 32.0, 1e-15);
}

TEST(BuildSystem, NestingAndGapBound) {
  const auto gaps = GapSequence::harmonic(14);
  const auto sys = build_system(gaps, 14);
  for (int n = 1; n <= 14; ++n) {
    const auto& lv = sys.level(n);
    const auto& up = sys.level(n - 1);
    for (std::size_t j = 0; j < lv.size(); ++j) {
      const auto& p = up.intervals[lv.parent[j]];
      EXPECT_GE(lv.intervals[j].left, p.left);
      EXPECT_LE(lv.intervals[j].right, p.right);
      if (j + 1 < lv.size() && lv.parent[j + 1] == lv.parent[j]) {
        const double gap = lv.intervals[j + 1].left - lv.intervals[j].right;
        EXPECT_LE(gap, gaps.values[n - 1] * p.length() + 1e-12);
      }
    }
    EXPECT_NEAR(lv.total_length(), 1.0 / (n + 1), 1e-12 / (n + 1));
  }
}

TEST(BuildSystem, TinyLengthsAndCap) {
  const auto gaps = GapSequence::constant(0.999, 120);
  const auto sys = build_system(gaps, 120, BuildOptions{1u << 10});
  EXPECT_EQ(sys.materialized_depth(), 10);
  EXPECT_THROW(sys.level(11), ConfigError);
  EXPECT_NEAR(sys.level(10).log_length, 10 * std::log(0.0005), 1e-12);
  EXPECT_NEAR(sys.level(10).length() / std::pow(0.0005, 10), 1.0, 1e-12);
  std::size_t count = 0;
  for_each_interval(gaps, 3, [&](std::size_t j, Interval iv) {
    EXPECT_EQ(j, count++);
    EXPECT_NEAR(iv.length(), std::pow(0.0005, 3), 4e-16);
  });
  EXPECT_EQ(count, 8u);
}

TEST(BuildSystem, StreamingMatchesMaterialized) {
  const auto gaps = GapSequence::harmonic(9);
  const auto sys = build_system(gaps, 9);
  const auto& iv = sys.level(9).intervals;
  for_each_interval(gaps, 9, [&](std::size_t j, Interval v) {
    EXPECT_EQ(v.left, iv[j].left);
    EXPECT_EQ(v.right, iv[j].right);
  });
}

TEST(BuildSystem, BitReproducible) {
  const auto a = build_system(GapSequence::harmonic(12), 12);
  const auto b = build_system(GapSequence::harmonic(12), 12);
  for (std::size_t j = 0; j < a.level(12).size(); ++j) {
    EXPECT_EQ(a.level(12).intervals[j].left, b.level(12).intervals[j].left);
    EXPECT_EQ(a.level(12).intervals[j].right, b.level(12).intervals[j].right);
  }
}

TEST(BuildSystem, RejectsBadGaps) {
  EXPECT_THROW(GapSequence::middle({0.2, 1.0}), ConfigError);
  EXPECT_THROW(GapSequence::middle({-0.1}), ConfigError);
  EXPECT_THROW(GapSequence::uniform({3}, {0.6}), ConfigError);
  EXPECT_THROW(build_system(GapSequence::constant(0.2, 3), 4), ConfigError);
}

TEST(BuildSystem, UniformKind) {
  const auto gaps = GapSequence::uniform({3, 2}, {0.2, 0.5});
  const auto sys = build_system(gaps, 2);
  const auto& l1 = sys.level(1).intervals;
  ASSERT_EQ(l1.size(), 3u);
  // 3 l + 2 * 0.2 = 1
  EXPECT_NEAR(l1[0].length(), 0.2, 1e-15);
  EXPECT_NEAR(l1[1].left, 0.4, 1e-15);
  EXPECT_NEAR(l1[2].right, 1.0, 1e-15);
  EXPECT_EQ(sys.level(2).size(), 6u);
  EXPECT_NEAR(sys.level(2).intervals[1].left, 0.15, 1e-15);
  // components after removing the centred gap of 3 children: l vs 2l + gap
  EXPECT_NEAR(gaps.component_ratio(1), (0.4 + 0.2) / 0.2, 1e-12);
}

TEST(TruncatedLength, Examples) {
  EXPECT_NEAR(truncated_length(build_system(GapSequence::constant(1.0 / 3, 4), 4), 4),
              std::pow(2.0 / 3, 4), 1e-15);
  const auto h = build_system(GapSequence::harmonic(9), 9);
  EXPECT_NEAR(truncated_length(h, 9), 0.1, 1e-15);
  EXPECT_EQ(truncated_length(build_system(GapSequence::constant(0.0, 5), 5), 5), 1.0);
  for (int n = 1; n <= 9; ++n) EXPECT_LE(truncated_length(h, n), truncated_length(h, n - 1));
}

TEST(Minimality, HarmonicEstimateAndTrend) {
  const auto rep = minimality_criterion(GapSequence::harmonic(1000), 1.0, 1000);
  EXPECT_NEAR(rep.product_limit_estimate, std::pow(1001.0, -1.0 / 1000), 1e-12);
  EXPECT_NEAR(rep.product_limit_estimate, 0.9931, 1e-4);
  EXPECT_TRUE(rep.trend_nondecreasing);
  EXPECT_TRUE(rep.ratio_ok);
  EXPECT_TRUE(rep.satisfied_at_finite_scale);
}

TEST(Minimality, ConstantAndZero) {
  const auto third = minimality_criterion(GapSequence::constant(1.0 / 3, 50), 1.0, 10);
  EXPECT_NEAR(third.product_limit_estimate, 2.0 / 3, 1e-14);
  EXPECT_FALSE(third.satisfied_at_finite_scale);
  EXPECT_EQ(minimality_criterion(GapSequence::constant(0.0, 20), 1.0, 5).product_limit_estimate, 1.0);
  EXPECT_THROW(minimality_criterion(GapSequence::constant(0.0, 20), 1.0, 21), ConfigError);
}

TEST(GapDensity, Examples) {
  EXPECT_DOUBLE_EQ(gap_density(GapSequence::harmonic(100), 0.1, 100), 0.91);
  EXPECT_EQ(gap_density(GapSequence::constant(1.0 / 3, 40), 0.5, 40), 1.0);
  EXPECT_EQ(gap_density(GapSequence::constant(1.0 / 3, 40), 0.2, 40), 0.0);
}

TEST(GapDensity, ArithmeticMeanBound) {
  // Markov: #{c_i >= a} <= sum c_i / a.
  const auto g = GapSequence::harmonic(500);
  for (double a : {0.01, 0.05, 0.2, 0.5}) {
    double mean = 0.0;
    for (double c : g.values) mean += c;
    mean /= 500.0;
    EXPECT_GE(gap_density(g, a, 500), 1.0 - mean / a);
  }
}

TEST(ClosedFormMinkowski, Examples) {
  for (std::size_t n : {1u, 7u, 40u}) {
    EXPECT_NEAR(closed_form_minkowski(GapSequence::constant(1.0 / 3, 40), n),
                std::log(2.0) / std::log(3.0), 1e-14);
    EXPECT_NEAR(closed_form_minkowski(GapSequence::constant(0.5, 40), n), 0.5, 1e-14);
  }
  const auto h = GapSequence::harmonic(10000);
  const double n = 10000.0;
  const double oracle = n * std::log(2.0) / (n * std::log(2.0) + std::log(n + 1));
  EXPECT_NEAR(closed_form_minkowski(h, 10000), oracle, 1e-12);
  EXPECT_NEAR(closed_form_minkowski(h, 10000), 0.99867, 1e-5);
  EXPECT_LT(closed_form_minkowski(h, 5000), closed_form_minkowski(h, 10000));
  EXPECT_THROW(closed_form_minkowski(GapSequence::middle({1.0 - 1e-13}), 1), ConfigError);
}

TEST(UniformPerfectness, MiddleThirdsFinite) {
  const auto rep = uniform_perfectness_constant(build_system(GapSequence::constant(1.0 / 3, 10), 10));
  ASSERT_TRUE(rep.constant.has_value());
  EXPECT_GE(*rep.constant, 1.0);
  EXPECT_LE(*rep.constant, 8.0);
  EXPECT_NEAR(rep.sup_gap, 1.0 / 3, 1e-15);
}

TEST(UniformPerfectness, IntervalNeedsTwo) {
  const auto rep = uniform_perfectness_constant(build_system(GapSequence::constant(0.0, 8), 8));
  ASSERT_TRUE(rep.constant.has_value());
  EXPECT_LE(*rep.constant, 2.0);
}

TEST(UniformPerfectness, CrowdingGapsExceedCap) {
  std::vector<double> c(12, 0.0);
  for (int i : {2, 5, 8, 11}) c[static_cast<std::size_t>(i)] = 1.0 - std::ldexp(1.0, -(i + 1));
  const auto rep = uniform_perfectness_constant(build_system(GapSequence::middle(c), 12));
  EXPECT_FALSE(rep.constant.has_value());
  EXPECT_GT(rep.observed, 64.0);
  EXPECT_GT(rep.sup_gap, 0.999);
}
