#pragma once

// Increasing homeomorphisms of the line with a claimed distortion gauge eta,
// empirical checks of the three-point condition and of the diameter/distance
// distortion bounds, and push-forward of interval levels.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "confdim/cantor.hpp"
#include "confdim/errors.hpp"
#include "confdim/random.hpp"

namespace confdim {

/// Distortion gauge eta: [0, inf) -> [0, inf), increasing with eta(0+) = 0.
class EtaModulus {
 public:
  enum class Form { identity, power, tabulated };

  static EtaModulus identity() { return EtaModulus{}; }

  /// eta(t) = C * max{t^K, t^(1/K)}.
  static EtaModulus power(double C, double K) {
    if (!(C > 0.0)) throw ConfigError("eta.C must be > 0");
    if (!(K >= 1.0)) throw ConfigError("eta.K must be >= 1");
    EtaModulus e;
    e.form_ = Form::power;
    e.C_ = C;
    e.K_ = K;
    return e;
  }

  /// Log-log linear interpolation through (t_i, eta_i); end slopes extrapolate.
  static EtaModulus tabulated(std::vector<double> t, std::vector<double> eta) {
    if (t.size() < 2 || t.size() != eta.size()) {
      throw ConfigError("eta.samples: need >= 2 (t, eta) pairs of equal length");
    }
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (!(t[i] > 0.0 && eta[i] > 0.0)) throw ConfigError("eta.samples must be positive");
      if (i > 0 && !(t[i] > t[i - 1] && eta[i] > eta[i - 1])) {
        throw ConfigError("eta.samples must be strictly increasing");
      }
    }
    EtaModulus e;
    e.form_ = Form::tabulated;
    e.t_ = std::move(t);
    e.eta_ = std::move(eta);
    return e;
  }

  double operator()(double t) const {
    if (t <= 0.0) return 0.0;
    switch (form_) {
      case Form::identity:
        return t;
      case Form::power:
        return C_ * std::max(std::pow(t, K_), std::pow(t, 1.0 / K_));
      case Form::tabulated:
        return interpolate(t);
    }
    return t;
  }

  Form form() const noexcept { return form_; }
  /// Multiplicative constant C (1 for identity).
  double constant() const noexcept { return C_; }
  /// Exponent K (1 for identity).
  double exponent() const noexcept { return K_; }

 private:
  double interpolate(double t) const {
    const double lt = std::log(t);
    std::size_t i = 0;
    if (t <= t_.front()) {
      i = 0;
    } else if (t >= t_.back()) {
      i = t_.size() - 2;
    } else {
      i = static_cast<std::size_t>(std::upper_bound(t_.begin(), t_.end(), t) - t_.begin()) - 1;
    }
    const double x0 = std::log(t_[i]);
    const double x1 = std::log(t_[i + 1]);
    const double y0 = std::log(eta_[i]);
    const double y1 = std::log(eta_[i + 1]);
    return std::exp(y0 + (y1 - y0) * (lt - x0) / (x1 - x0));
  }

  Form form_ = Form::identity;
  double C_ = 1.0;
  double K_ = 1.0;
  std::vector<double> t_;
  std::vector<double> eta_;
};

enum class MapKind { identity, power, dyadic_weight };

/// Strictly increasing map of the line (identity, power) or of [0,1]
/// (dyadic_weight), carrying the eta it is claimed to satisfy.
class QsMap {
 public:
  static QsMap identity(EtaModulus eta = EtaModulus::identity()) {
    QsMap m;
    m.eta_ = eta;
    return m;
  }

  /// x -> sign(x) |x|^a.
  static QsMap power(double a, EtaModulus eta) {
    if (!(a > 0.0)) throw ConfigError("map.a must be > 0");
    QsMap m;
    m.kind_ = MapKind::power;
    m.a_ = a;
    m.eta_ = eta;
    return m;
  }

  /// Dyadic mass splitting on [0,1]. ratios[n][j] is mass(left child) /
  /// mass(right child) of dyadic node j at depth n; each must lie in [1/rho, rho].
  static QsMap dyadic(const std::vector<std::vector<double>>& ratios, double rho,
                      EtaModulus eta) {
    if (!(rho >= 1.0)) throw ConfigError("map.rho must be >= 1");
    std::vector<double> masses{1.0};
    for (std::size_t n = 0; n < ratios.size(); ++n) {
      if (ratios[n].size() != masses.size()) {
        throw ConfigError("map.ratios[" + std::to_string(n) + "] must have " +
                          std::to_string(masses.size()) + " entries");
      }
      std::vector<double> next;
      next.reserve(2 * masses.size());
      for (std::size_t j = 0; j < masses.size(); ++j) {
        const double q = ratios[n][j];
        if (!(q >= 1.0 / rho * (1.0 - 1e-12) && q <= rho * (1.0 + 1e-12))) {
          throw ConfigError("map.ratios[" + std::to_string(n) + "][" + std::to_string(j) +
                            "] outside [1/rho, rho]");
        }
        const double left = masses[j] * (q / (1.0 + q));
        next.push_back(left);
        next.push_back(masses[j] - left);
      }
      masses = std::move(next);
    }
    return from_masses(masses, static_cast<int>(ratios.size()), rho, eta);
  }

  /// Random dyadic map. Each split ratio is drawn log-uniformly in [1/rho, rho]
  /// and then clamped so every pair of adjacent same-depth dyadic intervals has
  /// mass ratio in [rho^-2, rho^2]; the clamp interval is never empty.
  static QsMap random_dyadic(int depth, double rho, std::uint64_t seed, EtaModulus eta) {
    if (depth < 0 || depth > 24) throw ConfigError("map.depth must lie in 0..24");
    if (!(rho >= 1.0)) throw ConfigError("map.rho must be >= 1");
    Rng rng(seed);
    const double log_rho = std::log(rho);
    const double lo_w = 1.0 / (1.0 + rho);
    const double hi_w = rho / (1.0 + rho);
    std::vector<double> masses{1.0};
    for (int n = 0; n < depth; ++n) {
      std::vector<double> next;
      next.reserve(2 * masses.size());
      for (const double m : masses) {
        double w = 0.5;
        if (rho > 1.0) {
          const double q = std::exp(rng.uniform(-log_rho, log_rho));
          w = q / (1.0 + q);
        }
        double lo = lo_w;
        double hi = hi_w;
        if (!next.empty()) {
          const double target = next.back() / m;
          lo = std::max(lo, target / (rho * rho));
          hi = std::min(hi, target * rho * rho);
        }
        w = std::clamp(w, lo, std::max(lo, hi));
        const double left = w * m;
        next.push_back(left);
        next.push_back(m - left);
      }
      masses = std::move(next);
    }
    return from_masses(masses, depth, rho, eta);
  }

  MapKind kind() const noexcept { return kind_; }
  const EtaModulus& eta() const noexcept { return eta_; }
  QsMap with_eta(EtaModulus eta) const {
    QsMap m = *this;
    m.eta_ = eta;
    return m;
  }
  double exponent() const noexcept { return a_; }
  double rho() const noexcept { return rho_; }
  int dyadic_depth() const noexcept { return depth_; }

  bool in_domain(double x) const noexcept {
    if (kind_ == MapKind::dyadic_weight) return x >= 0.0 && x <= 1.0;
    return std::isfinite(x);
  }
  double domain_lo() const noexcept {
    return kind_ == MapKind::dyadic_weight ? 0.0 : -std::numeric_limits<double>::infinity();
  }
  double domain_hi() const noexcept {
    return kind_ == MapKind::dyadic_weight ? 1.0 : std::numeric_limits<double>::infinity();
  }

  double apply(double x) const {
    if (!in_domain(x)) throw std::domain_error("map.apply: x outside the map domain");
    switch (kind_) {
      case MapKind::identity:
        return x;
      case MapKind::power:
        return std::copysign(std::pow(std::abs(x), a_), x);
      case MapKind::dyadic_weight: {
        const double cells = static_cast<double>(knots_.size() - 1);
        const double s = x * cells;
        const auto k = std::min(static_cast<std::size_t>(s), knots_.size() - 2);
        const double frac = s - static_cast<double>(k);
        return knots_[k] + (knots_[k + 1] - knots_[k]) * frac;
      }
    }
    return x;
  }

  double apply_inverse(double y) const {
    switch (kind_) {
      case MapKind::identity:
        if (!std::isfinite(y)) throw std::domain_error("map.apply_inverse: y not finite");
        return y;
      case MapKind::power:
        if (!std::isfinite(y)) throw std::domain_error("map.apply_inverse: y not finite");
        return std::copysign(std::pow(std::abs(y), 1.0 / a_), y);
      case MapKind::dyadic_weight: {
        if (!(y >= 0.0 && y <= 1.0)) throw std::domain_error("map.apply_inverse: y outside [0,1]");
        auto it = std::upper_bound(knots_.begin(), knots_.end(), y);
        std::size_t k = it == knots_.begin() ? 0 : static_cast<std::size_t>(it - knots_.begin()) - 1;
        k = std::min(k, knots_.size() - 2);
        const double cells = static_cast<double>(knots_.size() - 1);
        const double frac = (y - knots_[k]) / (knots_[k + 1] - knots_[k]);
        return (static_cast<double>(k) + frac) / cells;
      }
    }
    return y;
  }

  /// Image values at the dyadic points k 2^-depth (dyadic_weight only).
  const std::vector<double>& knots() const noexcept { return knots_; }

 private:
  static QsMap from_masses(const std::vector<double>& masses, int depth, double rho,
                           EtaModulus eta) {
    QsMap m;
    m.kind_ = MapKind::dyadic_weight;
    m.depth_ = depth;
    m.rho_ = rho;
    m.eta_ = eta;
    m.knots_.resize(masses.size() + 1);
    m.knots_[0] = 0.0;
    double acc = 0.0;
    double comp = 0.0;
    for (std::size_t j = 0; j < masses.size(); ++j) {
      double s = 0.0;
      double e = 0.0;
      detail::two_sum(acc, masses[j], s, e);
      comp += e;
      acc = s;
      m.knots_[j + 1] = acc + comp;
    }
    m.knots_.back() = 1.0;
    return m;
  }

  MapKind kind_ = MapKind::identity;
  double a_ = 1.0;
  double rho_ = 1.0;
  int depth_ = 0;
  EtaModulus eta_;
  std::vector<double> knots_;
};

using Triple = std::array<double, 3>;

/// Uniform random triples in [lo, hi]^3, pairwise distinct.
inline std::vector<Triple> random_triples(double lo, double hi, std::size_t count, Rng& rng) {
  std::vector<Triple> out;
  out.reserve(count);
  while (out.size() < count) {
    Triple t{rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
    if (t[0] != t[1] && t[1] != t[2] && t[0] != t[2]) out.push_back(t);
  }
  return out;
}

/// Triples (x, y, z) of dyadic points at resolution 2^-depth with |x-y| = |y-z|.
/// With `aligned`, only (k, k+1, k+2) 2^-j with y a multiple of 2^-j.
inline std::vector<Triple> dyadic_triples(int depth, bool aligned) {
  const std::size_t n = std::size_t{1} << depth;
  const double h = 1.0 / static_cast<double>(n);
  std::vector<Triple> out;
  if (aligned) {
    for (int j = 1; j <= depth; ++j) {
      const std::size_t step = std::size_t{1} << (depth - j);
      for (std::size_t y = step; y + step <= n; y += step) {
        out.push_back({static_cast<double>(y - step) * h, static_cast<double>(y) * h,
                       static_cast<double>(y + step) * h});
      }
    }
    return out;
  }
  for (std::size_t y = 1; y < n; ++y) {
    for (std::size_t s = 1; s <= std::min(y, n - y); ++s) {
      out.push_back({static_cast<double>(y - s) * h, static_cast<double>(y) * h,
                     static_cast<double>(y + s) * h});
    }
  }
  return out;
}

/// Log-spaced t bins: centres 10^(-4 + k/20), k = 0..160.
struct EtaBins {
  static constexpr std::size_t count = 161;
  static double center(std::size_t k) { return std::pow(10.0, -4.0 + static_cast<double>(k) / 20.0); }
  static std::size_t index(double t) {
    const double k = std::round((std::log10(t) + 4.0) * 20.0);
    return static_cast<std::size_t>(std::clamp(k, 0.0, static_cast<double>(count - 1)));
  }
};

struct QsRatioReport {
  /// max over triples of image_ratio / eta(t); <= 1 means no violation.
  double max_violation_ratio = 0.0;
  Triple worst{};
  /// Upper envelope of image_ratio per t bin (0 for empty bins).
  std::vector<double> empirical_eta = std::vector<double>(EtaBins::count, 0.0);
  std::vector<std::size_t> bin_counts = std::vector<std::size_t>(EtaBins::count, 0);
  std::size_t triples = 0;
};

inline QsRatioReport qs_ratio_check(const QsMap& map, const EtaModulus& eta,
                                    std::span<const Triple> triples) {
  QsRatioReport rep;
  for (const Triple& tr : triples) {
    const auto [x, y, z] = tr;
    if (x == y || y == z || x == z) throw ConfigError("qs_ratio_check: degenerate triple");
    const double t = std::abs(x - y) / std::abs(y - z);
    const double fx = map.apply(x);
    const double fy = map.apply(y);
    const double fz = map.apply(z);
    const double ratio = std::abs(fx - fy) / std::abs(fy - fz);
    const double v = ratio / eta(t);
    if (v > rep.max_violation_ratio) {
      rep.max_violation_ratio = v;
      rep.worst = tr;
    }
    const std::size_t b = EtaBins::index(t);
    rep.empirical_eta[b] = std::max(rep.empirical_eta[b], ratio);
    ++rep.bin_counts[b];
    ++rep.triples;
  }
  return rep;
}

/// Smallest C with image_ratio <= C max{t^K, t^(1/K)} over triples in [lo, hi]:
/// a grid of `points` samples refined by compass search, inflated by `margin`.
/// The result is a local supremum estimate, not a proof.
inline EtaModulus calibrate_eta(const QsMap& map, double K, double lo, double hi,
                                std::size_t points = 121, double margin = 1e-6) {
  std::vector<double> xs(points);
  std::vector<double> fx(points);
  for (std::size_t i = 0; i < points; ++i) {
    xs[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
    fx[i] = map.apply(xs[i]);
  }
  auto score = [&](const Triple& p) {
    if (p[0] == p[1] || p[1] == p[2] || p[0] == p[2]) return 0.0;
    const double t = std::abs(p[0] - p[1]) / std::abs(p[1] - p[2]);
    const double r = std::abs(map.apply(p[0]) - map.apply(p[1])) /
                     std::abs(map.apply(p[1]) - map.apply(p[2]));
    return r / std::max(std::pow(t, K), std::pow(t, 1.0 / K));
  };
  double c = 0.0;
  Triple best{};
  for (std::size_t i = 0; i < points; ++i) {
    for (std::size_t j = 0; j < points; ++j) {
      if (j == i) continue;
      for (std::size_t k = 0; k < points; ++k) {
        if (k == i || k == j) continue;
        const double t = std::abs(xs[i] - xs[j]) / std::abs(xs[j] - xs[k]);
        const double r = std::abs(fx[i] - fx[j]) / std::abs(fx[j] - fx[k]);
        const double v = r / std::max(std::pow(t, K), std::pow(t, 1.0 / K));
        if (v > c) {
          c = v;
          best = {xs[i], xs[j], xs[k]};
        }
      }
    }
  }
  // Compass search from the best grid triple; the grid alone undershoots the sup.
  for (double step = (hi - lo) / static_cast<double>(points - 1); step > 1e-13 * (hi - lo);) {
    bool moved = false;
    for (std::size_t axis = 0; axis < 3; ++axis) {
      for (const double dir : {-1.0, 1.0}) {
        Triple trial = best;
        trial[axis] = std::clamp(trial[axis] + dir * step, lo, hi);
        const double v = score(trial);
        if (v > c) {
          c = v;
          best = trial;
          moved = true;
        }
      }
    }
    if (!moved) step *= 0.5;
  }
  return EtaModulus::power(c * (1.0 + margin), K);
}

struct DistortionReport {
  double lower = 0.0;
  double ratio = 0.0;
  double upper = 0.0;
  bool ok = false;
};

namespace detail {

inline double image_diameter(const QsMap& map, std::span<const double> pts) {
  const auto [lo, hi] = std::minmax_element(pts.begin(), pts.end());
  return map.apply(*hi) - map.apply(*lo);
}

inline double diameter(std::span<const double> pts) {
  const auto [lo, hi] = std::minmax_element(pts.begin(), pts.end());
  return *hi - *lo;
}

inline double set_distance(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double best = std::numeric_limits<double>::infinity();
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < a.size() && j < b.size()) {
    best = std::min(best, std::abs(a[i] - b[j]));
    if (a[i] < b[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  return best;
}

}  // namespace detail

/// Two-sided diameter distortion for finite A within B:
/// 1/(2 eta(diam B/diam A)) <= diam f(A)/diam f(B) <= eta(2 diam A/diam B).
inline DistortionReport distortion_check(const QsMap& map, const EtaModulus& eta,
                                         std::span<const double> A, std::span<const double> B) {
  if (A.empty() || B.empty()) throw ConfigError("distortion_check: empty point set");
  std::vector<double> sorted_b(B.begin(), B.end());
  std::sort(sorted_b.begin(), sorted_b.end());
  for (const double a : A) {
    if (!std::binary_search(sorted_b.begin(), sorted_b.end(), a)) {
      throw ConfigError("distortion_check: A is not a subset of B");
    }
  }
  const double dA = detail::diameter(A);
  const double dB = detail::diameter(B);
  if (!(dA > 0.0)) throw ConfigError("distortion_check: diam A = 0");
  DistortionReport rep;
  rep.ratio = detail::image_diameter(map, A) / detail::image_diameter(map, B);
  rep.lower = 1.0 / (2.0 * eta(dB / dA));
  rep.upper = eta(2.0 * dA / dB);
  rep.ok = rep.lower <= rep.ratio && rep.ratio <= rep.upper;
  return rep;
}

/// Gap version for X = X1 u X2 with dist(X1, X2) > 0:
/// 1/(2 eta(diam X/dist)) <= dist(f X1, f X2)/diam f(X) <= eta(2 dist/diam X).
inline DistortionReport distortion_gap_check(const QsMap& map, const EtaModulus& eta,
                                             std::span<const double> X1,
                                             std::span<const double> X2) {
  if (X1.empty() || X2.empty()) throw ConfigError("distortion_gap_check: empty point set");
  std::vector<double> x(X1.begin(), X1.end());
  x.insert(x.end(), X2.begin(), X2.end());
  const double dist = detail::set_distance({X1.begin(), X1.end()}, {X2.begin(), X2.end()});
  if (!(dist > 0.0)) throw ConfigError("distortion_gap_check: dist(X1, X2) = 0");
  std::vector<double> f1(X1.size());
  std::vector<double> f2(X2.size());
  std::transform(X1.begin(), X1.end(), f1.begin(), [&](double v) { return map.apply(v); });
  std::transform(X2.begin(), X2.end(), f2.begin(), [&](double v) { return map.apply(v); });
  const double diam = detail::diameter(x);
  DistortionReport rep;
  rep.ratio = detail::set_distance(f1, f2) / detail::image_diameter(map, x);
  rep.lower = 1.0 / (2.0 * eta(diam / dist));
  rep.upper = eta(2.0 * dist / diam);
  rep.ok = rep.lower <= rep.ratio && rep.ratio <= rep.upper;
  return rep;
}

/// Image of one interval level: f(E_{n,j}) via endpoint images (maps are increasing).
struct ImageLevel {
  int depth = 0;
  std::vector<Interval> images;
  std::vector<std::size_t> parent;
  /// dist(f(E_j), f(E_{j+1})) for consecutive siblings, keyed by the left one.
  std::vector<std::size_t> sibling_left;
  std::vector<double> sibling_gap;

  std::size_t size() const noexcept { return images.size(); }
  double diameter(std::size_t j) const { return images[j].length(); }
};

inline ImageLevel push_intervals(const QsMap& map, const IntervalLevel& level) {
  ImageLevel out;
  out.depth = level.depth;
  out.parent = level.parent;
  out.images.reserve(level.size());
  for (const Interval& iv : level.intervals) {
    out.images.push_back({map.apply(iv.left), map.apply(iv.right)});
  }
  for (std::size_t j = 0; j + 1 < level.size(); ++j) {
    if (level.depth > 0 && level.parent[j] == level.parent[j + 1]) {
      out.sibling_left.push_back(j);
      out.sibling_gap.push_back(out.images[j + 1].left - out.images[j].right);
    }
  }
  return out;
}

}  // namespace confdim
