#pragma once

// Nested interval systems generated from a gap sequence {c_i}: middle-interval
// Cantor sets (one centred gap per interval) and uniform Cantor sets (n_i equal
// children separated by equal gaps).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "confdim/errors.hpp"

namespace confdim {

enum class GapKind { middle_interval, uniform };

/// Closed interval [left, right].
struct Interval {
  double left = 0.0;
  double right = 0.0;

  double length() const noexcept { return right - left; }
  double midpoint() const noexcept { return 0.5 * (left + right); }
};

/// Defining data of a Cantor system. Generation i (1-based) uses values[i-1].
///
/// For middle_interval kind values are the removed middle fractions c_i. For
/// uniform kind values are the relative spacings gamma_i between adjacent
/// children and `children` holds n_i.
struct GapSequence {
  GapKind kind = GapKind::middle_interval;
  std::vector<double> values;
  std::vector<int> children;

  static GapSequence middle(std::vector<double> c) {
    GapSequence g;
    g.kind = GapKind::middle_interval;
    g.values = std::move(c);
    g.validate();
    return g;
  }

  static GapSequence uniform(std::vector<int> n, std::vector<double> gamma) {
    GapSequence g;
    g.kind = GapKind::uniform;
    g.children = std::move(n);
    g.values = std::move(gamma);
    g.validate();
    return g;
  }

  static GapSequence constant(double c, std::size_t length) {
    return middle(std::vector<double>(length, c));
  }

  /// c_i = 1 / (i + shift), i = 1..length.
  static GapSequence harmonic(std::size_t length, int shift = 1) {
    std::vector<double> c(length);
    for (std::size_t i = 0; i < length; ++i) {
      c[i] = 1.0 / static_cast<double>(i + 1 + static_cast<std::size_t>(shift));
    }
    return middle(std::move(c));
  }

  std::size_t size() const noexcept { return values.size(); }

  /// Number of children produced at generation `gen` (1-based).
  int branching(std::size_t gen) const {
    return kind == GapKind::middle_interval ? 2 : children.at(gen - 1);
  }

  /// Thickness fraction c_gen: the largest removed gap relative to its parent.
  double gap_fraction(std::size_t gen) const { return values.at(gen - 1); }

  /// Length of each child relative to its parent at generation `gen`.
  double child_fraction(std::size_t gen) const {
    const double g = values.at(gen - 1);
    const int k = branching(gen);
    return (1.0 - static_cast<double>(k - 1) * g) / static_cast<double>(k);
  }

  /// Longer/shorter ratio of the two components left after removing the
  /// most central gap of an interval at generation `gen`.
  double component_ratio(std::size_t gen) const {
    const int k = branching(gen);
    if (k == 2) return 1.0;
    const double len = child_fraction(gen);
    const double g = values.at(gen - 1);
    const int left = k / 2;
    const int right = k - left;
    const double a = left * len + (left - 1) * g;
    const double b = right * len + (right - 1) * g;
    return std::max(a, b) / std::min(a, b);
  }

  void validate() const {
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double c = values[i];
      if (!(c >= 0.0 && c < 1.0)) {
        throw ConfigError("gaps.values[" + std::to_string(i) + "] = " + std::to_string(c) +
                          " outside [0,1)");
      }
    }
    if (kind == GapKind::uniform) {
      if (children.size() != values.size()) {
        throw ConfigError("gaps.children: length " + std::to_string(children.size()) +
                          " does not match gaps.values length " + std::to_string(values.size()));
      }
      for (std::size_t i = 0; i < children.size(); ++i) {
        if (children[i] < 2) {
          throw ConfigError("gaps.children[" + std::to_string(i) + "] must be >= 2");
        }
        if (!(child_fraction(i + 1) > 0.0)) {
          throw ConfigError("gaps.values[" + std::to_string(i) +
                            "]: spacing leaves non-positive child length");
        }
      }
    }
  }
};

/// All intervals E_{n,j} of one generation, sorted left to right.
struct IntervalLevel {
  int depth = 0;
  /// Common length of every interval at this depth, in log-space and linear.
  double log_length = 0.0;
  double linear_length = 1.0;
  std::vector<Interval> intervals;
  std::vector<std::size_t> parent;
  /// Low-order parts of the left endpoints (left = intervals[j].left + left_lo[j]).
  std::vector<double> left_lo;

  std::size_t size() const noexcept { return intervals.size(); }
  double length() const noexcept { return linear_length; }

  double total_length() const noexcept {
    return static_cast<double>(intervals.size()) * length();
  }

  /// Smallest positive distance between consecutive intervals (inf if none).
  double min_gap() const noexcept {
    double g = std::numeric_limits<double>::infinity();
    for (std::size_t j = 1; j < intervals.size(); ++j) {
      const double d = intervals[j].left - intervals[j - 1].right;
      if (d > 0.0) g = std::min(g, d);
    }
    return g;
  }
};

namespace detail {

// Error-free transformation a + b = s + e.
inline void two_sum(double a, double b, double& s, double& e) noexcept {
  s = a + b;
  const double bb = s - a;
  e = (a - (s - bb)) + (b - bb);
}

// Lengths are carried multiplicatively while representable and recovered
// from the log-length once the product would underflow.
inline double child_length(double parent_len, double fraction, double log_child) noexcept {
  const double linear = parent_len * fraction;
  return linear > 1e-300 ? linear : std::exp(log_child);
}

template <typename Fn>
void emit_children(const GapSequence& gaps, std::size_t gen, double parent_hi, double parent_lo,
                   double parent_len, double log_parent, Fn&& fn) {
  const int k = gaps.branching(gen);
  const double fraction = gaps.child_fraction(gen);
  const double log_child = log_parent + std::log(fraction);
  const double child_len = child_length(parent_len, fraction, log_child);
  const double spacing = gaps.kind == GapKind::middle_interval
                             ? parent_len - 2.0 * child_len
                             : gaps.values[gen - 1] * parent_len;
  for (int c = 0; c < k; ++c) {
    const double offset = static_cast<double>(c) * (child_len + spacing);
    double s = 0.0;
    double e = 0.0;
    two_sum(parent_hi, offset, s, e);
    e += parent_lo;
    double hi = 0.0;
    double lo = 0.0;
    two_sum(s, e, hi, lo);
    fn(hi, lo, child_len, log_child);
  }
}

}  // namespace detail

/// A built system: levels 0..max_depth (materialised up to the interval cap).
struct CantorSystem {
  GapSequence gaps;
  int max_depth = 0;
  /// Largest component ratio r_{n,j} observed over generations 1..max_depth.
  double ratio_bound = 1.0;
  std::vector<IntervalLevel> levels;

  int materialized_depth() const noexcept { return static_cast<int>(levels.size()) - 1; }

  const IntervalLevel& level(int n) const {
    if (n < 0 || n > max_depth) {
      throw ConfigError("depth " + std::to_string(n) + " outside 0.." + std::to_string(max_depth));
    }
    if (n > materialized_depth()) {
      throw ConfigError("depth " + std::to_string(n) +
                        " exceeds the materialisation cap; use for_each_interval");
    }
    return levels[static_cast<std::size_t>(n)];
  }

  /// Largest gap fraction in generations 1..max_depth.
  double sup_gap() const {
    double s = 0.0;
    for (int i = 1; i <= max_depth; ++i) s = std::max(s, gaps.gap_fraction(static_cast<std::size_t>(i)));
    return s;
  }
};

struct BuildOptions {
  /// Levels with more intervals than this are streamed instead of stored.
  std::size_t interval_cap = std::size_t{1} << 24;
};

inline std::size_t interval_count(const GapSequence& gaps, int depth) {
  long double count = 1.0L;
  for (int i = 1; i <= depth; ++i) count *= gaps.branching(static_cast<std::size_t>(i));
  if (count > static_cast<long double>(std::numeric_limits<std::size_t>::max())) {
    return std::numeric_limits<std::size_t>::max();
  }
  return static_cast<std::size_t>(count);
}

inline CantorSystem build_system(const GapSequence& gaps, int max_depth,
                                 const BuildOptions& options = {}) {
  if (max_depth < 0) throw ConfigError("depth must be >= 0");
  if (gaps.size() < static_cast<std::size_t>(max_depth)) {
    throw ConfigError("gaps.values has " + std::to_string(gaps.size()) +
                      " entries, fewer than depth " + std::to_string(max_depth));
  }
  gaps.validate();

  CantorSystem sys;
  sys.gaps = gaps;
  sys.max_depth = max_depth;
  for (int i = 1; i <= max_depth; ++i) {
    sys.ratio_bound = std::max(sys.ratio_bound, gaps.component_ratio(static_cast<std::size_t>(i)));
  }

  IntervalLevel root;
  root.depth = 0;
  root.log_length = 0.0;
  root.linear_length = 1.0;
  root.intervals.push_back({0.0, 1.0});
  root.parent.push_back(0);
  root.left_lo.push_back(0.0);
  sys.levels.push_back(std::move(root));

  for (int n = 1; n <= max_depth; ++n) {
    if (interval_count(gaps, n) > options.interval_cap) break;
    const IntervalLevel& prev = sys.levels.back();
    IntervalLevel next;
    next.depth = n;
    const double fraction = gaps.child_fraction(static_cast<std::size_t>(n));
    next.log_length = prev.log_length + std::log(fraction);
    next.linear_length = detail::child_length(prev.linear_length, fraction, next.log_length);
    const double len = next.linear_length;
    const std::size_t k = static_cast<std::size_t>(gaps.branching(static_cast<std::size_t>(n)));
    next.intervals.reserve(prev.size() * k);
    next.parent.reserve(prev.size() * k);
    next.left_lo.reserve(prev.size() * k);
    for (std::size_t j = 0; j < prev.size(); ++j) {
      const Interval& up = prev.intervals[j];
      detail::emit_children(gaps, static_cast<std::size_t>(n), up.left, prev.left_lo[j],
                            prev.linear_length, prev.log_length,
                            [&](double hi, double lo, double, double) {
                              // keep children inside the parent bit-for-bit
                              next.intervals.push_back(
                                  {std::max(hi, up.left), std::min(hi + len, up.right)});
                              next.parent.push_back(j);
                              next.left_lo.push_back(lo);
                            });
    }
    sys.levels.push_back(std::move(next));
  }
  return sys;
}

/// Streams the depth-n intervals in left-to-right order without storing the level.
template <typename Fn>
void for_each_interval(const GapSequence& gaps, int depth, Fn&& fn) {
  std::size_t index = 0;
  // Same endpoint rule as build_system, so streamed and stored levels agree bit-for-bit.
  auto recurse = [&](auto&& self, int n, Interval iv, double lo, double len,
                     double log_len) -> void {
    if (n == depth) {
      fn(index++, iv);
      return;
    }
    detail::emit_children(gaps, static_cast<std::size_t>(n + 1), iv.left, lo, len, log_len,
                          [&](double chi, double clo, double clen, double clog) {
                            const Interval child{std::max(chi, iv.left), std::min(chi + clen, iv.right)};
                            self(self, n + 1, child, clo, clen, clog);
                          });
  };
  recurse(recurse, 0, Interval{0.0, 1.0}, 0.0, 1.0, 0.0);
}

/// Total length of the depth-n intervals: prod_{i<=n} (k_i * child_fraction_i).
inline double truncated_length(const CantorSystem& sys, int n) {
  if (n < 0 || n > sys.max_depth) {
    throw ConfigError("truncated_length: n = " + std::to_string(n) + " outside 0.." +
                      std::to_string(sys.max_depth));
  }
  double log_total = 0.0;
  for (int i = 1; i <= n; ++i) {
    const auto gen = static_cast<std::size_t>(i);
    const int k = sys.gaps.branching(gen);
    log_total += std::log1p(-static_cast<double>(k - 1) * sys.gaps.values[gen - 1]);
  }
  return std::exp(log_total);
}

/// Finite-scale evidence for the geometric-mean product condition. Never a
/// statement about the limit.
struct MinimalityReport {
  /// (prod_{i<=n}(1-c_i))^{1/n} at n = gaps.size().
  double product_limit_estimate = 0.0;
  /// Estimates for n over the trailing window, oldest first.
  std::vector<double> trend;
  bool trend_nondecreasing = true;
  double max_ratio = 1.0;
  bool ratio_ok = true;
  bool satisfied_at_finite_scale = false;
  std::size_t n = 0;
};

inline MinimalityReport minimality_criterion(const GapSequence& gaps, double ratio_bound,
                                             std::size_t tail_window, double threshold = 0.95) {
  const std::size_t len = gaps.size();
  if (tail_window == 0 || tail_window > len) {
    throw ConfigError("tail_window must be in 1.." + std::to_string(len));
  }
  MinimalityReport rep;
  rep.n = len;
  double log_sum = 0.0;
  const std::size_t first = len - tail_window + 1;
  for (std::size_t i = 1; i <= len; ++i) {
    const int k = gaps.branching(i);
    log_sum += std::log1p(-static_cast<double>(k - 1) * gaps.values[i - 1]);
    rep.max_ratio = std::max(rep.max_ratio, gaps.component_ratio(i));
    if (i >= first) rep.trend.push_back(std::exp(log_sum / static_cast<double>(i)));
  }
  rep.product_limit_estimate = rep.trend.back();
  for (std::size_t j = 1; j < rep.trend.size(); ++j) {
    if (rep.trend[j] < rep.trend[j - 1]) rep.trend_nondecreasing = false;
  }
  rep.ratio_ok = rep.max_ratio <= ratio_bound;
  rep.satisfied_at_finite_scale =
      rep.ratio_ok && rep.trend_nondecreasing && rep.product_limit_estimate >= threshold;
  return rep;
}

/// s_n / n with s_n = #{i <= n : c_i < a}.
inline double gap_density(const GapSequence& gaps, double a, std::size_t n) {
  if (!(a > 0.0 && a < 1.0)) throw ConfigError("gap_density: a must lie in (0,1)");
  if (n == 0 || n > gaps.size()) throw ConfigError("gap_density: n outside 1..length");
  std::size_t s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (gaps.values[i] < a) ++s;
  }
  return static_cast<double>(s) / static_cast<double>(n);
}

/// log 2^n / (log 2^n - sum_{i<=n} log(1 - c_i)).
inline double closed_form_minkowski(const GapSequence& gaps, std::size_t n) {
  if (gaps.kind != GapKind::middle_interval) {
    throw ConfigError("closed_form_minkowski requires middle_interval kind");
  }
  if (n == 0 || n > gaps.size()) throw ConfigError("closed_form_minkowski: n outside 1..length");
  double log_prod = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (gaps.values[i] > 1.0 - 1e-12) {
      throw ConfigError("gaps.values[" + std::to_string(i) + "] too close to 1 for a finite log");
    }
    log_prod += std::log1p(-gaps.values[i]);
  }
  const double num = static_cast<double>(n) * std::log(2.0);
  return num / (num - log_prod);
}

struct PerfectnessOptions {
  /// Observed constants above this are reported as "not uniformly perfect".
  double cap = 64.0;
  /// Upper bound on sampled centres (evenly strided over level endpoints).
  std::size_t max_points = 1u << 14;
};

struct PerfectnessReport {
  /// Smallest C >= 1 consistent with every sampled annulus; empty above the cap.
  std::optional<double> constant;
  double observed = 1.0;
  double sup_gap = 0.0;
  int depth = 0;
};

/// Annulus search on the deepest materialised level. For each sampled point x
/// (interval endpoints) and dyadic radius r with X \ B(x,r) nonempty, the
/// farthest set point rho < r from x gives the requirement C >= r / rho.
inline PerfectnessReport uniform_perfectness_constant(const CantorSystem& sys,
                                                      const PerfectnessOptions& opt = {}) {
  const int depth = std::min(sys.max_depth, sys.materialized_depth());
  if (depth < 2) throw ConfigError("uniform_perfectness_constant needs depth >= 2");
  const IntervalLevel& lvl = sys.level(depth);
  const auto& iv = lvl.intervals;
  const double lo_end = iv.front().left;
  const double hi_end = iv.back().right;
  const double min_r = 2.0 * lvl.length();

  std::vector<double> lefts(iv.size());
  std::vector<double> rights(iv.size());
  for (std::size_t j = 0; j < iv.size(); ++j) {
    lefts[j] = iv[j].left;
    rights[j] = iv[j].right;
  }

  // sup{|y - x| : y in set, |y - x| < r}
  auto farthest_within = [&](double x, double r) {
    double best = 0.0;
    const double right_lim = x + r;
    auto it = std::lower_bound(lefts.begin(), lefts.end(), right_lim);
    if (it != lefts.begin()) {
      const std::size_t j = static_cast<std::size_t>(it - lefts.begin()) - 1;
      if (rights[j] >= right_lim) {
        return r;
      }
      if (rights[j] >= x) best = std::max(best, rights[j] - x);
    }
    const double left_lim = x - r;
    auto jt = std::upper_bound(rights.begin(), rights.end(), left_lim);
    if (jt != rights.end()) {
      const std::size_t j = static_cast<std::size_t>(jt - rights.begin());
      if (lefts[j] <= left_lim) return r;
      if (lefts[j] <= x) best = std::max(best, x - lefts[j]);
    }
    return best;
  };

  PerfectnessReport rep;
  rep.depth = depth;
  rep.sup_gap = sys.sup_gap();
  const std::size_t stride = std::max<std::size_t>(1, (2 * iv.size()) / opt.max_points);
  for (std::size_t p = 0; p < 2 * iv.size(); p += stride) {
    const double x = (p % 2 == 0) ? iv[p / 2].left : iv[p / 2].right;
    const double reach = std::max(x - lo_end, hi_end - x);
    for (double r = 1.0; r >= min_r; r *= 0.5) {
      if (reach < r) continue;
      const double rho = farthest_within(x, r);
      const double c = rho > 0.0 ? r / rho : std::numeric_limits<double>::infinity();
      rep.observed = std::max(rep.observed, c);
    }
  }
  if (rep.observed <= opt.cap) rep.constant = rep.observed;
  return rep;
}

}  // namespace confdim
