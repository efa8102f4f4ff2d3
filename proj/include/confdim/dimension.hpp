#pragma once

// Box counting, the mass distribution window scan and dyadic Frostman measures
// for subsets of the line.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "confdim/cantor.hpp"
#include "confdim/errors.hpp"

namespace confdim {

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  /// Root-mean-square residual.
  double residual = 0.0;
};

inline LineFit least_squares(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.empty()) throw ConfigError("least_squares: size mismatch");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0;
  double sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  LineFit f;
  f.slope = sxx > 0.0 ? sxy / sxx : 0.0;
  f.intercept = my - f.slope * mx;
  double ss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - (f.intercept + f.slope * x[i]);
    ss += r * r;
  }
  f.residual = std::sqrt(ss / n);
  return f;
}

struct BoxCountResult {
  std::vector<double> scales;
  std::vector<std::size_t> counts;
  double fitted_slope = 0.0;
  double residual = 0.0;
};

namespace detail {

// Grid positions within this relative distance of a box edge snap onto it, so
// endpoints computed as k * eps in floating point land in the intended box.
inline constexpr double kSnap = 1e-9;

inline void check_scales(std::span<const double> eps) {
  if (eps.empty()) throw ConfigError("box_count: no scales");
  for (std::size_t i = 0; i < eps.size(); ++i) {
    if (!(eps[i] > 0.0)) throw ConfigError("box_count: scales must be positive");
    if (i > 0 && !(eps[i] < eps[i - 1])) throw ConfigError("box_count: scales must be descending");
  }
}

inline BoxCountResult finish_box_count(std::span<const double> eps,
                                       std::vector<std::size_t> counts) {
  BoxCountResult res;
  res.scales.assign(eps.begin(), eps.end());
  res.counts = std::move(counts);
  std::vector<double> x(eps.size());
  std::vector<double> y(eps.size());
  for (std::size_t i = 0; i < eps.size(); ++i) {
    x[i] = -std::log(eps[i]);
    y[i] = std::log(static_cast<double>(res.counts[i]));
  }
  const LineFit f = least_squares(x, y);
  res.fitted_slope = f.slope;
  res.residual = f.residual;
  return res;
}

}  // namespace detail

/// Counts half-open boxes [k eps, (k+1) eps) meeting a union of closed
/// intervals (sorted, disjoint interiors). A box touched only at its left edge
/// by an interval's right endpoint is not counted unless the interval is a point.
inline BoxCountResult box_count(std::span<const Interval> intervals, std::span<const double> eps) {
  if (intervals.empty()) throw ConfigError("box_count: empty input");
  detail::check_scales(eps);
  std::vector<std::size_t> counts;
  counts.reserve(eps.size());
  for (const double e : eps) {
    std::size_t n = 0;
    double last = -std::numeric_limits<double>::infinity();
    for (const Interval& iv : intervals) {
      const double lo = std::floor(iv.left / e + detail::kSnap);
      double hi = std::ceil(iv.right / e - detail::kSnap) - 1.0;
      hi = std::max(hi, lo);
      const double from = std::max(lo, last + 1.0);
      if (hi >= from) n += static_cast<std::size_t>(hi - from + 1.0);
      last = std::max(last, hi);
    }
    counts.push_back(n);
  }
  return detail::finish_box_count(eps, std::move(counts));
}

inline BoxCountResult box_count_points(std::span<const double> points, std::span<const double> eps) {
  if (points.empty()) throw ConfigError("box_count: empty input");
  std::vector<Interval> iv(points.size());
  std::vector<double> sorted(points.begin(), points.end());
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) iv[i] = {sorted[i], sorted[i]};
  return box_count(iv, eps);
}

/// Masses on sorted cells with disjoint interiors. A cell of zero length is an
/// atom; mass on a cell of positive length is spread uniformly.
class DiscreteMeasure {
 public:
  DiscreteMeasure() = default;

  DiscreteMeasure(std::vector<Interval> cells, std::vector<double> masses)
      : cells_(std::move(cells)), masses_(std::move(masses)) {
    if (cells_.size() != masses_.size()) throw ConfigError("measure: cells/masses size mismatch");
    for (std::size_t i = 0; i < cells_.size(); ++i) {
      if (!(masses_[i] >= 0.0)) throw ConfigError("measure.mass[" + std::to_string(i) + "] < 0");
      if (!(cells_[i].right >= cells_[i].left)) {
        throw ConfigError("measure.cell[" + std::to_string(i) + "] has right < left");
      }
      if (i > 0 && cells_[i].left < cells_[i - 1].right) {
        throw ConfigError("measure.cell[" + std::to_string(i) + "] overlaps its predecessor");
      }
    }
    prepare();
  }

  /// Equal mass on every interval of the level, total 1.
  static DiscreteMeasure natural(const IntervalLevel& level) {
    return DiscreteMeasure(level.intervals,
                           std::vector<double>(level.size(), 1.0 / static_cast<double>(level.size())));
  }

  static DiscreteMeasure atom(double x, double mass = 1.0) {
    return DiscreteMeasure({{x, x}}, {mass});
  }

  const std::vector<Interval>& cells() const noexcept { return cells_; }
  const std::vector<double>& masses() const noexcept { return masses_; }
  double total() const noexcept { return total_; }
  double support_lo() const { return cells_.front().left; }
  double support_hi() const { return cells_.back().right; }

  DiscreteMeasure normalized() const {
    if (!(total_ > 0.0)) throw ConfigError("measure: zero total mass");
    std::vector<double> m(masses_);
    for (double& v : m) v /= total_;
    return DiscreteMeasure(cells_, std::move(m));
  }

  /// Mass of the closed window [a, b].
  double mass_in(double a, double b) const {
    if (b < a) return 0.0;
    return cumulative(b, true) - cumulative(a, false);
  }

 private:
  void prepare() {
    total_ = 0.0;
    lefts_.clear();
    rights_.clear();
    spread_prefix_.assign(1, 0.0);
    spread_mass_.clear();
    atom_pos_.clear();
    atom_prefix_.assign(1, 0.0);
    for (std::size_t i = 0; i < cells_.size(); ++i) {
      total_ += masses_[i];
      if (cells_[i].right > cells_[i].left) {
        lefts_.push_back(cells_[i].left);
        rights_.push_back(cells_[i].right);
        spread_mass_.push_back(masses_[i]);
        spread_prefix_.push_back(spread_prefix_.back() + masses_[i]);
      } else {
        atom_pos_.push_back(cells_[i].left);
        atom_prefix_.push_back(atom_prefix_.back() + masses_[i]);
      }
    }
  }

  // Mass of (-inf, y] (inclusive) or (-inf, y) (exclusive).
  double cumulative(double y, bool inclusive) const {
    double m = 0.0;
    auto it = std::upper_bound(lefts_.begin(), lefts_.end(), y);
    if (it != lefts_.begin()) {
      const std::size_t j = static_cast<std::size_t>(it - lefts_.begin()) - 1;
      const double frac = std::min(1.0, (y - lefts_[j]) / (rights_[j] - lefts_[j]));
      m += spread_prefix_[j] + spread_mass_[j] * frac;
    }
    const auto at = inclusive ? std::upper_bound(atom_pos_.begin(), atom_pos_.end(), y)
                              : std::lower_bound(atom_pos_.begin(), atom_pos_.end(), y);
    m += atom_prefix_[static_cast<std::size_t>(at - atom_pos_.begin())];
    return m;
  }

  std::vector<Interval> cells_;
  std::vector<double> masses_;
  double total_ = 0.0;
  std::vector<double> lefts_;
  std::vector<double> rights_;
  std::vector<double> spread_prefix_;
  std::vector<double> spread_mass_;
  std::vector<double> atom_pos_;
  std::vector<double> atom_prefix_;
};

struct MassDistributionReport {
  std::vector<double> scales;
  /// max over windows of length r of mu(U) / r^d, per scale.
  std::vector<double> constants;
  double C_observed = 0.0;
  /// Least-squares slope of log C(r) against log(1/r); ~0 when bounded.
  double growth_slope = 0.0;
  bool pass = false;
};

/// Window scan over U = [x, x + r], x on an r/4 grid covering the support.
/// pass iff every C(r) is finite and log C(r) grows at most `slope_tolerance`
/// per unit of log(1/r). The scan is a lower bound on the true constant.
inline MassDistributionReport mass_distribution_lower_bound(const DiscreteMeasure& mu, double d,
                                                            std::span<const double> test_scales,
                                                            double slope_tolerance = 0.02) {
  if (!(mu.total() > 0.0)) throw ConfigError("mass_distribution: zero total mass");
  if (!(d > 0.0 && d <= 1.0)) throw ConfigError("mass_distribution: d must lie in (0,1]");
  if (test_scales.empty()) throw ConfigError("mass_distribution: no test scales");
  MassDistributionReport rep;
  const double lo = mu.support_lo();
  const double hi = mu.support_hi();
  for (const double r : test_scales) {
    if (!(r > 0.0)) throw ConfigError("mass_distribution: scales must be positive");
    const double step = r / 4.0;
    const double start = std::floor((lo - r) / step) * step;
    const auto windows = static_cast<std::size_t>(std::ceil((hi - start) / step)) + 1;
    double best = 0.0;
    for (std::size_t k = 0; k <= windows; ++k) {
      const double x = start + static_cast<double>(k) * step;
      best = std::max(best, mu.mass_in(x, x + r));
    }
    rep.scales.push_back(r);
    rep.constants.push_back(best / std::pow(r, d));
  }
  rep.C_observed = *std::max_element(rep.constants.begin(), rep.constants.end());
  bool finite = std::isfinite(rep.C_observed);
  if (rep.scales.size() >= 2 && finite) {
    std::vector<double> x;
    std::vector<double> y;
    for (std::size_t i = 0; i < rep.scales.size(); ++i) {
      if (rep.constants[i] <= 0.0) continue;
      x.push_back(-std::log(rep.scales[i]));
      y.push_back(std::log(rep.constants[i]));
    }
    if (x.size() >= 2) rep.growth_slope = least_squares(x, y).slope;
  }
  rep.pass = finite && rep.growth_slope <= slope_tolerance;
  return rep;
}

struct GrowthReport {
  std::vector<double> scales;
  /// min over centres in the support of mu(B(y,r)) / r^(1+eps), per scale.
  std::vector<double> lower;
  /// max over windows of mu(B) / r^(1-eps), per scale.
  std::vector<double> upper;
  bool lower_ok = false;
  bool upper_ok = false;
  /// Offending window when a side fails (centre, radius).
  double bad_center = 0.0;
  double bad_radius = 0.0;
};

/// Two-sided growth r^(1+eps) <~ mu(B(y,r)) <~ r^(1-eps). A side passes when its
/// normalized constant, fitted over the finer half of the radii, drifts toward 0
/// (lower) or infinity (upper) by at most `slope_tolerance` per unit of log(1/r)
/// (default eps/2). Centres are cell midpoints and atoms, strided to at most
/// `max_centers`.
inline GrowthReport two_sided_growth(const DiscreteMeasure& mu, double eps,
                                     std::span<const double> radii,
                                     double slope_tolerance = -1.0,
                                     std::size_t max_centers = 4096) {
  if (!(eps > 0.0 && eps < 1.0)) throw ConfigError("growth: eps must lie in (0,1)");
  if (radii.size() < 4) throw ConfigError("growth: need at least four radii");
  GrowthReport rep;
  const auto& cells = mu.cells();
  const std::size_t stride = std::max<std::size_t>(1, cells.size() / max_centers);
  std::vector<double> lx;
  std::vector<double> ly;
  std::vector<double> ux;
  std::vector<double> uy;
  std::vector<double> worst_low_center;
  std::vector<double> worst_up_center;
  for (const double r : radii) {
    double low = std::numeric_limits<double>::infinity();
    double low_at = 0.0;
    double up = 0.0;
    double up_at = 0.0;
    for (std::size_t j = 0; j < cells.size(); j += stride) {
      if (mu.masses()[j] <= 0.0) continue;
      const double y = cells[j].midpoint();
      const double m = mu.mass_in(y - r, y + r);
      if (m < low) {
        low = m;
        low_at = y;
      }
      if (m > up) {
        up = m;
        up_at = y;
      }
    }
    rep.scales.push_back(r);
    rep.lower.push_back(low / std::pow(r, 1.0 + eps));
    rep.upper.push_back(up / std::pow(r, 1.0 - eps));
    worst_low_center.push_back(low_at);
    worst_up_center.push_back(up_at);
    lx.push_back(-std::log(r));
    ly.push_back(-std::log(rep.lower.back()));
    ux.push_back(-std::log(r));
    uy.push_back(std::log(rep.upper.back()));
  }
  if (slope_tolerance < 0.0) slope_tolerance = eps / 2.0;
  const std::size_t half = radii.size() / 2;
  auto tail = [half](const std::vector<double>& v) {
    return std::span<const double>(v).subspan(half);
  };
  rep.lower_ok = least_squares(tail(lx), tail(ly)).slope <= slope_tolerance;
  rep.upper_ok = least_squares(tail(ux), tail(uy)).slope <= slope_tolerance;
  if (!rep.upper_ok) {
    const auto k = static_cast<std::size_t>(std::max_element(rep.upper.begin(), rep.upper.end()) -
                                            rep.upper.begin());
    rep.bad_center = worst_up_center[k];
    rep.bad_radius = rep.scales[k];
  } else if (!rep.lower_ok) {
    const auto k = static_cast<std::size_t>(std::min_element(rep.lower.begin(), rep.lower.end()) -
                                            rep.lower.begin());
    rep.bad_center = worst_low_center[k];
    rep.bad_radius = rep.scales[k];
  }
  return rep;
}

struct FrostmanResult {
  /// Masses on the level intervals.
  DiscreteMeasure measure;
  int dyadic_depth = 0;
  /// max over dyadic nodes of mu(Q) / |Q|^d (at most 1 by construction).
  double max_node_ratio = 0.0;
};

/// Bottom-up dyadic capping on [0,1]. Every finest dyadic box meeting the level
/// gets |Q|^d; moving up, a node whose children carry more than |Q|^d is scaled
/// down to |Q|^d. The final masses are spread onto the level intervals in
/// proportion to overlap length (point intervals take the whole box).
inline FrostmanResult frostman_measure(const IntervalLevel& level, double d, int max_dyadic_depth = 22) {
  if (!(d > 0.0 && d <= 1.0)) throw ConfigError("frostman: d must lie in (0,1]");
  if (level.intervals.empty()) throw ConfigError("frostman: empty level");
  for (const Interval& iv : level.intervals) {
    if (iv.left < 0.0 || iv.right > 1.0) throw ConfigError("frostman: level must lie in [0,1]");
  }
  const double len = level.length();
  int m = len > 0.0 ? static_cast<int>(std::ceil(-std::log2(len) - detail::kSnap)) : max_dyadic_depth;
  m = std::clamp(m, 0, max_dyadic_depth);
  const std::size_t leaves = std::size_t{1} << m;
  const double width = 1.0 / static_cast<double>(leaves);

  // Occupied leaves with the level intervals overlapping each.
  std::vector<double> mass(leaves, 0.0);
  for (const Interval& iv : level.intervals) {
    const double lo = std::floor(iv.left / width + detail::kSnap);
    double hi = std::ceil(iv.right / width - detail::kSnap) - 1.0;
    hi = std::max(hi, lo);
    for (double k = lo; k <= hi && k < static_cast<double>(leaves); k += 1.0) {
      mass[static_cast<std::size_t>(k)] = std::pow(width, d);
    }
  }

  // scale[n][j]: factor applied to the subtree of node j at depth n.
  std::vector<std::vector<double>> scale(static_cast<std::size_t>(m) + 1);
  std::vector<double> cur = mass;
  for (int n = m; n >= 0; --n) {
    const double w = std::ldexp(1.0, -n);
    const double cap = std::pow(w, d);
    auto& s = scale[static_cast<std::size_t>(n)];
    s.assign(cur.size(), 1.0);
    for (std::size_t j = 0; j < cur.size(); ++j) {
      if (cur[j] > cap) {
        s[j] = cap / cur[j];
        cur[j] = cap;
      }
    }
    if (n == 0) break;
    std::vector<double> up(cur.size() / 2);
    for (std::size_t j = 0; j < up.size(); ++j) up[j] = cur[2 * j] + cur[2 * j + 1];
    cur = std::move(up);
  }

  // Push the caps down to the leaves and check every node.
  FrostmanResult res;
  res.dyadic_depth = m;
  std::vector<double> factor{scale[0][0]};
  for (int n = 1; n <= m; ++n) {
    std::vector<double> next(factor.size() * 2);
    for (std::size_t j = 0; j < next.size(); ++j) {
      next[j] = factor[j / 2] * scale[static_cast<std::size_t>(n)][j];
    }
    factor = std::move(next);
  }
  for (std::size_t k = 0; k < leaves; ++k) mass[k] *= factor[k];
  {
    std::vector<double> node = mass;
    for (int n = m;; --n) {
      const double cap = std::pow(std::ldexp(1.0, -n), d);
      for (const double v : node) {
        res.max_node_ratio = std::max(res.max_node_ratio, v / cap);
        if (v > cap * (1.0 + 1e-9)) throw std::logic_error("frostman: cap violated");
      }
      if (n == 0) break;
      std::vector<double> up(node.size() / 2);
      for (std::size_t j = 0; j < up.size(); ++j) up[j] = node[2 * j] + node[2 * j + 1];
      node = std::move(up);
    }
  }

  // Spread each leaf's mass over the level intervals meeting it.
  std::vector<double> out(level.size(), 0.0);
  std::size_t first = 0;
  for (std::size_t k = 0; k < leaves; ++k) {
    if (mass[k] <= 0.0) continue;
    const double a = static_cast<double>(k) * width;
    const double b = a + width;
    while (first < level.size() && level.intervals[first].right < a - width * detail::kSnap) ++first;
    std::vector<std::pair<std::size_t, double>> share;
    double total = 0.0;
    for (std::size_t j = first; j < level.size() && level.intervals[j].left < b + width * detail::kSnap; ++j) {
      const Interval& iv = level.intervals[j];
      const double ov = std::min(iv.right, b) - std::max(iv.left, a);
      if (ov > 0.0) {
        share.emplace_back(j, ov);
        total += ov;
      }
    }
    if (share.empty()) {
      // point-like intervals: nearest interval within snapping distance
      for (std::size_t j = first; j < level.size(); ++j) {
        const Interval& iv = level.intervals[j];
        if (iv.right >= a - width * detail::kSnap && iv.left <= b + width * detail::kSnap) {
          share.emplace_back(j, 1.0);
          total = 1.0;
          break;
        }
      }
    }
    for (const auto& [j, ov] : share) out[j] += mass[k] * ov / total;
  }
  res.measure = DiscreteMeasure(level.intervals, std::move(out));
  return res;
}

}  // namespace confdim
