#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "confdim/dimension.hpp"
#include "confdim/random.hpp"

using namespace confdim;

namespace {

std::vector<double> powers(double base, int from, int to) {
  std::vector<double> v;
  for (int k = from; k <= to; ++k) v.push_back(std::pow(base, -k));
  return v;
}

// Mass of [a,b] by summing every cell directly.
double direct_mass(const DiscreteMeasure& mu, double a, double b) {
  double m = 0.0;
  for (std::size_t i = 0; i < mu.cells().size(); ++i) {
    const Interval c = mu.cells()[i];
    if (c.length() == 0.0) {
      if (c.left >= a && c.left <= b) m += mu.masses()[i];
    } else {
      const double ov = std::min(b, c.right) - std::max(a, c.left);
      if (ov > 0) m += mu.masses()[i] * ov / c.length();
    }
  }
  return m;
}

double direct_scan(const DiscreteMeasure& mu, double r, double d) {
  double best = 0.0;
  const double step = r / 4;
  for (double x = std::floor((mu.support_lo() - r) / step) * step; x <= mu.support_hi() + step;
       x += step) {
    best = std::max(best, direct_mass(mu, x, x + r));
  }
  return best / std::pow(r, d);
}

}  // namespace

TEST(BoxCount, FullInterval) {
  const std::vector<Interval> unit{{0.0, 1.0}};
  const auto eps = powers(2.0, 1, 10);
  const auto res = box_count(unit, eps);
  for (int k = 1; k <= 10; ++k) EXPECT_EQ(res.counts[k - 1], std::size_t{1} << k);
  EXPECT_NEAR(res.fitted_slope, 1.0, 1e-12);
  EXPECT_NEAR(res.residual, 0.0, 1e-12);
}

TEST(BoxCount, MiddleThirds) {
  const auto sys = build_system(GapSequence::constant(1.0 / 3, 12), 12);
  const auto eps = powers(3.0, 1, 10);
  const auto res = box_count(sys.level(12).intervals, eps);
  for (int k = 1; k <= 10; ++k) EXPECT_EQ(res.counts[k - 1], std::size_t{1} << k);
  EXPECT_NEAR(res.fitted_slope, std::log(2.0) / std::log(3.0), 0.01);
  EXPECT_NEAR(res.fitted_slope, closed_form_minkowski(sys.gaps, 12), 0.02);
}

TEST(BoxCount, HalfGapsSlope) {
  const auto sys = build_system(GapSequence::constant(0.5, 12), 12);
  const auto res = box_count(sys.level(12).intervals, powers(4.0, 1, 10));
  EXPECT_NEAR(res.fitted_slope, 0.5, 0.02);
}

TEST(BoxCount, SinglePoint) {
  const std::vector<double> pt{0.3};
  const auto res = box_count_points(pt, powers(2.0, 1, 12));
  for (auto c : res.counts) EXPECT_EQ(c, 1u);
  EXPECT_EQ(res.fitted_slope, 0.0);
}

TEST(BoxCount, Errors) {
  const std::vector<Interval> none;
  const std::vector<double> eps{0.1};
  EXPECT_THROW(box_count(none, eps), ConfigError);
  const std::vector<Interval> unit{{0.0, 1.0}};
  const std::vector<double> ascending{0.1, 0.2};
  EXPECT_THROW(box_count(unit, ascending), ConfigError);
}

TEST(BoxCount, SlopeSandwichConstantSystems) {
  for (double c : {0.1, 0.2, 1.0 / 3, 0.5, 0.7}) {
    const auto sys = build_system(GapSequence::constant(c, 14), 14);
    std::vector<double> eps;
    for (int n = 1; n <= 13; ++n) eps.push_back(sys.level(n).length());
    const auto res = box_count(sys.level(14).intervals, eps);
    EXPECT_NEAR(res.fitted_slope, closed_form_minkowski(sys.gaps, 14), 0.02) << c;
  }
}

TEST(BoxCount, HarmonicGridWithinFactorTwoOfCover) {
  // Grid boxes are not aligned with the harmonic intervals, so counts sit
  // between the 2^n natural cover and twice it. Least squares over the level
  // scales measures the local slope, which sits above the finite-n quotient.
  const auto sys = build_system(GapSequence::harmonic(14), 14);
  std::vector<double> eps;
  for (int n = 0; n <= 13; ++n) eps.push_back(sys.level(n).length());
  const auto res = box_count(sys.level(14).intervals, eps);
  for (std::size_t i = 0; i < res.counts.size(); ++i) {
    EXPECT_GE(res.counts[i], std::size_t{1} << i);
    EXPECT_LE(res.counts[i], std::size_t{2} << i);
  }
  EXPECT_GT(res.fitted_slope, closed_form_minkowski(sys.gaps, 13));
}

TEST(Measure, WindowMassMatchesDirectSum) {
  const auto sys = build_system(GapSequence::harmonic(6), 6);
  std::vector<Interval> cells = sys.level(6).intervals;
  std::vector<double> masses(cells.size());
  for (std::size_t i = 0; i < masses.size(); ++i) masses[i] = 1.0 + static_cast<double>(i % 5);
  cells.push_back({1.5, 1.5});
  masses.push_back(2.0);
  const DiscreteMeasure mu(cells, masses);
  Rng rng(4);
  for (int t = 0; t < 2000; ++t) {
    const double a = rng.uniform(-0.2, 1.6);
    const double b = a + rng.uniform(0, 0.5);
    EXPECT_NEAR(mu.mass_in(a, b), direct_mass(mu, a, b), 1e-12);
  }
  EXPECT_NEAR(mu.mass_in(1.5, 1.5), 2.0, 0.0);
  EXPECT_THROW(DiscreteMeasure({{0, 1}, {0.5, 2}}, {1, 1}), ConfigError);
  EXPECT_THROW(DiscreteMeasure({{0, 1}}, {-1}), ConfigError);
}

TEST(MassDistribution, MiddleThirdsNatural) {
  const auto sys = build_system(GapSequence::constant(1.0 / 3, 12), 12);
  const auto mu = DiscreteMeasure::natural(sys.level(12));
  const double d = std::log(2.0) / std::log(3.0);
  for (int n = 1; n <= 10; ++n) {
    const Interval I = sys.level(n).intervals[1];
    EXPECT_NEAR(mu.mass_in(I.left, I.right), std::ldexp(1.0, -n), 1e-12);
    EXPECT_NEAR(std::pow(I.length(), d), std::ldexp(1.0, -n), 1e-12);
  }
  const auto scales = powers(3.0, 1, 10);
  const auto rep = mass_distribution_lower_bound(mu, d, scales);
  EXPECT_TRUE(rep.pass);
  EXPECT_LE(rep.C_observed, 4.0);
  EXPECT_GE(rep.C_observed, 1.0);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_NEAR(rep.constants[i], direct_scan(mu, scales[i], d), 1e-9);
  }
}

TEST(MassDistribution, UniformInterval) {
  const DiscreteMeasure mu({{0.0, 1.0}}, {1.0});
  const auto rep = mass_distribution_lower_bound(mu, 1.0, powers(2.0, 1, 12));
  EXPECT_NEAR(rep.C_observed, 1.0, 1e-12);
  EXPECT_TRUE(rep.pass);
}

TEST(MassDistribution, AtomFails) {
  const auto rep = mass_distribution_lower_bound(DiscreteMeasure::atom(0.5), 0.5, powers(2.0, 1, 16));
  EXPECT_FALSE(rep.pass);
  EXPECT_NEAR(rep.C_observed, std::pow(2.0, 8), 1e-9);
  EXPECT_THROW(mass_distribution_lower_bound(DiscreteMeasure::atom(0.5, 0.0), 0.5, powers(2.0, 1, 3)),
               ConfigError);
}

TEST(MassDistribution, PassesExactlyBelowDimension) {
  for (double c : {0.2, 1.0 / 3, 0.5}) {
    const auto sys = build_system(GapSequence::constant(c, 14), 14);
    const auto mu = DiscreteMeasure::natural(sys.level(14));
    const double dim = std::log(2.0) / (std::log(2.0) - std::log(1.0 - c));
    std::vector<double> scales;
    for (int n = 1; n <= 12; ++n) scales.push_back(sys.level(n).length());
    for (double d : {dim - 0.2, dim - 0.05, dim}) {
      EXPECT_TRUE(mass_distribution_lower_bound(mu, d, scales).pass) << c << " " << d;
    }
    EXPECT_FALSE(mass_distribution_lower_bound(mu, dim + 0.06, scales).pass) << c;
  }
}

TEST(TwoSidedGrowth, HarmonicAndAtom) {
  const auto sys = build_system(GapSequence::harmonic(14), 14);
  const auto mu = DiscreteMeasure::natural(sys.level(14));
  std::vector<double> radii;
  for (int n = 3; n <= 12; ++n) radii.push_back(sys.level(n).length());
  const auto ok = two_sided_growth(mu, 0.1, radii);
  EXPECT_TRUE(ok.lower_ok);
  EXPECT_TRUE(ok.upper_ok);

  std::vector<Interval> cells = sys.level(14).intervals;
  std::vector<double> masses(cells.size(), 0.5 / static_cast<double>(cells.size()));
  cells.push_back({1.25, 1.25});
  masses.push_back(0.5);
  const auto bad = two_sided_growth(DiscreteMeasure(cells, masses), 0.1, radii);
  EXPECT_FALSE(bad.upper_ok);
  EXPECT_EQ(bad.bad_center, 1.25);
}

TEST(Frostman, FullIntervalIsUniform) {
  const auto sys = build_system(GapSequence::constant(0.0, 8), 8);
  const auto res = frostman_measure(sys.level(8), 1.0);
  EXPECT_NEAR(res.measure.total(), 1.0, 1e-12);
  for (double m : res.measure.masses()) EXPECT_NEAR(m, 1.0 / 256, 1e-15);
  EXPECT_NEAR(mass_distribution_lower_bound(res.measure, 1.0, powers(2.0, 1, 8)).C_observed, 1.0, 1e-12);
}

TEST(Frostman, MiddleThirdsBelowDimension) {
  const auto sys = build_system(GapSequence::constant(1.0 / 3, 12), 12);
  const auto res = frostman_measure(sys.level(12), 0.6);
  EXPECT_GE(res.measure.total(), 0.5);
  EXPECT_LE(res.max_node_ratio, 1.0 + 1e-9);
  // centred balls at dyadic radii, scanned by direct summation
  for (int k = 2; k <= 10; ++k) {
    const double r = std::ldexp(1.0, -k);
    double worst = 0.0;
    for (double y = 0.0; y <= 1.0; y += r / 8) {
      worst = std::max(worst, direct_mass(res.measure, y - r, y + r) / std::pow(r, 0.6));
    }
    EXPECT_LE(worst, 4.0) << "r = 2^-" << k;
  }
}

TEST(Frostman, AboveDimensionMassDecays) {
  double prev = 2.0;
  for (int depth : {6, 8, 10, 12, 14}) {
    const auto sys = build_system(GapSequence::constant(1.0 / 3, depth), depth);
    const double total = frostman_measure(sys.level(depth), 0.7).measure.total();
    EXPECT_LT(total, prev) << depth;
    EXPECT_NEAR(frostman_measure(sys.level(depth), 0.6).measure.total(), 1.0, 1e-9) << depth;
    prev = total;
  }
  EXPECT_LT(prev, 0.6);
}
