#pragma once

// Recursive measure on the image f(E) of a binary Cantor system: mass splits
// between sibling images in proportion to diam^d. The p_i factors bound the
// growth of mu(I) / diam^d I along each root-to-node path; the certificate
// scans nodes, arbitrary intervals and image-side balls for a bounded constant.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "confdim/cantor.hpp"
#include "confdim/dimension.hpp"
#include "confdim/errors.hpp"
#include "confdim/qs_maps.hpp"

namespace confdim {

/// Images f(E_{n,j}) of a binary system, depths 0..depth. Node (n, j) has
/// children (n+1, 2j) and (n+1, 2j+1).
struct ImageTree {
  GapSequence gaps;
  double ratio_bound = 1.0;
  std::vector<std::vector<Interval>> domain;
  std::vector<ImageLevel> images;

  int depth() const noexcept { return static_cast<int>(images.size()) - 1; }
  const Interval& image(int n, std::size_t j) const { return images[static_cast<std::size_t>(n)].images[j]; }
  double diam(int n, std::size_t j) const { return image(n, j).length(); }
  /// dist(f(E_{n,2j}), f(E_{n,2j+1})) for the children of node (n-1, j).
  double sibling_gap(int n, std::size_t j) const {
    return image(n, 2 * j + 1).left - image(n, 2 * j).right;
  }
};

inline ImageTree build_image_tree(const CantorSystem& sys, const QsMap& map, int depth) {
  if (depth < 1) throw ConfigError("image tree: depth must be >= 1");
  if (depth > sys.materialized_depth()) {
    throw ConfigError("image tree: depth " + std::to_string(depth) + " exceeds the built system");
  }
  for (int i = 1; i <= depth; ++i) {
    if (sys.gaps.branching(static_cast<std::size_t>(i)) != 2) {
      throw ConfigError("image tree: generation " + std::to_string(i) +
                        " is not binary; the recursive measure needs two children per node");
    }
  }
  ImageTree tree;
  tree.gaps = sys.gaps;
  tree.ratio_bound = sys.ratio_bound;
  for (int n = 0; n <= depth; ++n) {
    const IntervalLevel& lv = sys.level(n);
    tree.domain.push_back(lv.intervals);
    tree.images.push_back(push_intervals(map, lv));
    for (std::size_t j = 0; j < lv.size(); ++j) {
      if (!(tree.diam(n, j) > 0.0)) {
        throw ConfigError("image tree: node (" + std::to_string(n) + ", " + std::to_string(j) +
                          ") has zero image diameter");
      }
    }
  }
  for (int n = 1; n <= depth; ++n) {
    for (std::size_t j = 0; j < tree.images[static_cast<std::size_t>(n - 1)].size(); ++j) {
      const double parent = tree.diam(n - 1, j);
      const double slack = 1e-12 * parent;
      if (tree.diam(n, 2 * j) > parent + slack || tree.diam(n, 2 * j + 1) > parent + slack ||
          tree.sibling_gap(n, j) > parent + slack || tree.sibling_gap(n, j) < -slack) {
        throw ConfigError("image tree: children of node (" + std::to_string(n - 1) + ", " +
                          std::to_string(j) + ") do not fit inside the parent image");
      }
    }
  }
  return tree;
}

struct RecursiveMeasure {
  double d = 0.0;
  /// mass[n][j] = mu(f(E_{n,j})); mass[0][0] = 1.
  std::vector<std::vector<double>> mass;
  /// p[n][j] for n >= 1 (equal for siblings); p[0] = {1}.
  std::vector<std::vector<double>> p;
  /// product[n][j] = diam^-d f(E_0) * prod_{i<=n} p_i along the path.
  std::vector<std::vector<double>> product;
  /// max over nodes of (mu / diam^d) / product - 1; <= 1e-9 expected.
  double max_bound_excess = -1.0;

  int depth() const noexcept { return static_cast<int>(mass.size()) - 1; }
};

/// mu(I) = diam^d I / (diam^d I + diam^d I') mu(parent). The larger share is
/// computed by ratio and the smaller by subtraction, so siblings sum to the
/// parent mass exactly.
inline RecursiveMeasure build_recursive_measure(const ImageTree& tree, double d) {
  if (!(d > 0.0 && d < 1.0)) throw ConfigError("recursive measure: d must lie in (0,1)");
  RecursiveMeasure m;
  m.d = d;
  m.mass.push_back({1.0});
  m.p.push_back({1.0});
  m.product.push_back({std::pow(tree.diam(0, 0), -d)});
  for (int n = 1; n <= tree.depth(); ++n) {
    const auto& up_mass = m.mass.back();
    const auto& up_prod = m.product.back();
    std::vector<double> mass(2 * up_mass.size());
    std::vector<double> p(mass.size());
    std::vector<double> prod(mass.size());
    for (std::size_t j = 0; j < up_mass.size(); ++j) {
      const double a = tree.diam(n, 2 * j);
      const double b = tree.diam(n, 2 * j + 1);
      const double ad = std::pow(a, d);
      const double bd = std::pow(b, d);
      const double parent = up_mass[j];
      if (ad >= bd) {
        mass[2 * j] = parent * (ad / (ad + bd));
        mass[2 * j + 1] = parent - mass[2 * j];
      } else {
        mass[2 * j + 1] = parent * (bd / (ad + bd));
        mass[2 * j] = parent - mass[2 * j + 1];
      }
      const double hull = tree.image(n, 2 * j + 1).right - tree.image(n, 2 * j).left;
      const double pi = std::pow(hull, d) / (ad + bd);
      for (std::size_t c = 2 * j; c <= 2 * j + 1; ++c) {
        p[c] = pi;
        prod[c] = up_prod[j] * pi;
      }
    }
    for (std::size_t j = 0; j < mass.size(); ++j) {
      const double ratio = mass[j] / std::pow(tree.diam(n, j), d);
      m.max_bound_excess = std::max(m.max_bound_excess, ratio / prod[j] - 1.0);
    }
    m.mass.push_back(std::move(mass));
    m.p.push_back(std::move(p));
    m.product.push_back(std::move(prod));
  }
  return m;
}

struct PiTrace {
  /// p_1..p_n along the path to the leaf.
  std::vector<double> p;
  /// Running products prod_{i<=k} p_i (without the root diameter factor).
  std::vector<double> running;
};

/// p_i along the root-to-node path of node (n, index).
inline PiTrace pi_factors(const RecursiveMeasure& m, int n, std::size_t index) {
  if (n < 1 || n > m.depth()) throw ConfigError("pi_factors: depth outside 1..tree depth");
  if (index >= m.mass[static_cast<std::size_t>(n)].size()) throw ConfigError("pi_factors: index out of range");
  PiTrace t;
  t.p.resize(static_cast<std::size_t>(n));
  for (int k = n; k >= 1; --k) {
    t.p[static_cast<std::size_t>(k - 1)] = m.p[static_cast<std::size_t>(k)][index];
    index /= 2;
  }
  double run = 1.0;
  for (const double v : t.p) {
    run *= v;
    t.running.push_back(run);
  }
  return t;
}

/// Largest p_i over each generation 1..depth.
inline std::vector<double> level_max_p(const RecursiveMeasure& m) {
  std::vector<double> out;
  for (int n = 1; n <= m.depth(); ++n) {
    const auto& v = m.p[static_cast<std::size_t>(n)];
    out.push_back(*std::max_element(v.begin(), v.end()));
  }
  return out;
}

struct GapPartition {
  /// D = 2 eta(2(1+M)); children image diameters have ratio in [1/D, D].
  double D = 0.0;
  /// C4 = min over [1/D, D] of (1+x^d)/(1+x)^d.
  double C4 = 0.0;
  /// Largest grid a with C4 (1 - eta(2a))^d > 1; empty when none qualifies.
  std::optional<double> a_star;
  /// 1 / (C4 (1 - eta(2 a_star))^d), the small-gap bound on p_i.
  double C1 = std::numeric_limits<double>::quiet_NaN();
  /// Large-gap bound p_i <= C2 / (1 - c_i)^exponent (power or identity eta only).
  double C2 = std::numeric_limits<double>::quiet_NaN();
  double exponent = std::numeric_limits<double>::quiet_NaN();
  /// Indices i (1-based) with c_i < a_star.
  std::vector<std::size_t> small_set;
};

inline double c4_constant(double D, double d, std::size_t grid = 20001) {
  // The minimum sits at the endpoints; the grid keeps the computation literal.
  double best = std::numeric_limits<double>::infinity();
  const double lo = std::log(1.0 / D);
  const double hi = std::log(D);
  for (std::size_t k = 0; k < grid; ++k) {
    const double x = std::exp(lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(grid - 1));
    best = std::min(best, (1.0 + std::pow(x, d)) / std::pow(1.0 + x, d));
  }
  return best;
}

/// Large-gap bound for one generation, valid for any eta:
/// p_i <= (6^d / 2) eta((1+M)/(1-c_i))^d.
inline double large_gap_bound(const EtaModulus& eta, double M, double c, double d) {
  return std::pow(6.0, d) / 2.0 * std::pow(eta((1.0 + M) / (1.0 - c)), d);
}

inline GapPartition gap_partition(const GapSequence& gaps, const EtaModulus& eta, double d, double M,
                                  double grid_step = 1e-5) {
  if (!(d > 0.0 && d < 1.0)) throw ConfigError("gap_partition: d must lie in (0,1)");
  if (!(M >= 1.0)) throw ConfigError("gap_partition: M must be >= 1");
  GapPartition g;
  g.D = 2.0 * eta(2.0 * (1.0 + M));
  g.C4 = c4_constant(g.D, d);
  for (std::size_t k = 1; static_cast<double>(k) * grid_step < 0.5; ++k) {
    const double a = static_cast<double>(k) * grid_step;
    const double e = eta(2.0 * a);
    if (!(e < 1.0 && g.C4 * std::pow(1.0 - e, d) > 1.0)) break;
    g.a_star = a;
  }
  if (g.a_star) {
    g.C1 = 1.0 / (g.C4 * std::pow(1.0 - eta(2.0 * *g.a_star), d));
    for (std::size_t i = 1; i <= gaps.size(); ++i) {
      if (gaps.gap_fraction(i) < *g.a_star) g.small_set.push_back(i);
    }
  }
  if (eta.form() != EtaModulus::Form::tabulated) {
    const double K = eta.exponent();
    g.C2 = std::pow(6.0, d) / 2.0 * std::pow(eta.constant(), d) * std::pow(1.0 + M, d * K);
    g.exponent = d * K;
  }
  return g;
}

struct Growth2Report {
  /// max over windows J of mu(f(J cap E)) / diam^d f(J cap E).
  double constant = 0.0;
  std::size_t windows = 0;
  /// Windows where J cap E was not inside the parents of E_1, E_2.
  std::size_t cover_failures = 0;
  /// Windows where a sibling E_i' met J but left 2MJ.
  std::size_t dilation_failures = 0;
  /// max of diam f(2MJ cap E) / diam f(J cap E); compare with 2 eta(2M).
  double max_dilation_ratio = 0.0;
  double eta_dilation_bound = 0.0;
};

struct CertificateLevel {
  int depth = 0;
  /// max over nodes at depths <= depth of mu / diam^d.
  double node_constant = 0.0;
  double interval_constant = 0.0;
  /// max over image-side balls of mu(B(y,r)) / r^d.
  double ball_constant = 0.0;
  /// max(node_constant, interval_constant).
  double C = 0.0;
  double max_p = 0.0;
};

struct Certificate {
  double d = 0.0;
  int depth = 0;
  int window_start = 0;
  std::vector<CertificateLevel> levels;
  double C_growth = 0.0;
  /// max over levels of ball_constant / (2^d C); at most 1 when the interval
  /// bound carries over to balls.
  double worst_ball_ratio = 0.0;
  /// C(depth) / C(window_start).
  double variation = 0.0;
  /// Node-constant growth over the last level is flat or below
  /// `deceleration` times the growth over the first level of the window.
  bool decelerating = false;
  double max_bound_excess = 0.0;
  Growth2Report growth2;
  GapPartition partition;
  bool pass = false;
};

struct CertificateOptions {
  /// Ball centres per depth: endpoints and midpoints of the nodes at the
  /// deepest level with at most this many.
  std::size_t max_centers = 8192;
  /// Allowed C(depth) / C(window_start).
  double max_variation = 2.0;
  double deceleration = 0.8;
};

namespace detail {

// Maximal tree blocks of the leaf run [lo, hi] at depth n, as (depth, index).
inline void canonical_blocks(int n, std::size_t lo, std::size_t hi,
                             std::vector<std::pair<int, std::size_t>>& out) {
  out.clear();
  int level = n;
  std::size_t a = lo;
  std::size_t b = hi + 1;
  std::vector<std::pair<int, std::size_t>> right;
  while (a < b) {
    if (a & 1u) out.emplace_back(level, a++);
    if (b & 1u) right.emplace_back(level, --b);
    a >>= 1;
    b >>= 1;
    --level;
  }
  out.insert(out.end(), right.rbegin(), right.rend());
}

inline Growth2Report scan_growth2(const ImageTree& tree, const RecursiveMeasure& m, int n,
                                  const EtaModulus& eta) {
  Growth2Report rep;
  const double M = tree.ratio_bound;
  rep.eta_dilation_bound = 2.0 * eta(2.0 * M);
  const auto& leaves = tree.domain[static_cast<std::size_t>(n)];
  const auto& img = tree.images[static_cast<std::size_t>(n)].images;
  const auto& mass = m.mass[static_cast<std::size_t>(n)];
  const std::size_t N = leaves.size();
  std::vector<double> prefix(N + 1, 0.0);
  for (std::size_t j = 0; j < N; ++j) prefix[j + 1] = prefix[j] + mass[j];
  std::vector<double> lefts(N);
  std::vector<double> rights(N);
  for (std::size_t j = 0; j < N; ++j) {
    lefts[j] = leaves[j].left;
    rights[j] = leaves[j].right;
  }

  std::vector<std::size_t> lengths;
  for (double L = 1.0; L <= static_cast<double>(N); L *= std::sqrt(2.0)) {
    const auto v = static_cast<std::size_t>(std::llround(L));
    if (lengths.empty() || lengths.back() != v) lengths.push_back(v);
  }
  std::vector<std::pair<int, std::size_t>> blocks;
  for (const std::size_t len : lengths) {
    for (std::size_t lo = 0; lo + len <= N; ++lo) {
      const std::size_t hi = lo + len - 1;
      ++rep.windows;
      const double mu = prefix[hi + 1] - prefix[lo];
      const double diam_img = img[hi].right - img[lo].left;
      rep.constant = std::max(rep.constant, mu / std::pow(diam_img, m.d));

      // E_1: the maximal block whose parent is largest; E_2 likewise outside parent(E_1).
      detail::canonical_blocks(n, lo, hi, blocks);
      auto parent_len = [&](const std::pair<int, std::size_t>& b) {
        if (b.first == 0) return std::numeric_limits<double>::infinity();
        const auto& pd = tree.domain[static_cast<std::size_t>(b.first - 1)][b.second / 2];
        return pd.length();
      };
      auto shift = [&](const std::pair<int, std::size_t>& b) {
        return std::size_t{1} << static_cast<unsigned>(n - b.first + 1);
      };
      std::size_t e1 = 0;
      for (std::size_t k = 1; k < blocks.size(); ++k) {
        if (parent_len(blocks[k]) > parent_len(blocks[e1])) e1 = k;
      }
      // leaf ranges covered by the parents
      auto parent_range = [&](const std::pair<int, std::size_t>& b) {
        if (b.first == 0) return std::pair<std::size_t, std::size_t>{0, N - 1};
        const std::size_t s = shift(b);
        const std::size_t first = (b.second / 2) * s;
        return std::pair<std::size_t, std::size_t>{first, first + s - 1};
      };
      const auto r1 = parent_range(blocks[e1]);
      std::optional<std::size_t> e2;
      for (std::size_t k = 0; k < blocks.size(); ++k) {
        const auto rk = parent_range(blocks[k]);
        const bool inside = rk.first >= r1.first && rk.second <= r1.second;
        if (inside) continue;
        if (!e2 || parent_len(blocks[k]) > parent_len(blocks[*e2])) e2 = k;
      }
      auto covered = [&](std::size_t j) {
        if (j >= r1.first && j <= r1.second) return true;
        if (e2) {
          const auto r2 = parent_range(blocks[*e2]);
          return j >= r2.first && j <= r2.second;
        }
        return false;
      };
      if (!covered(lo) || !covered(hi)) ++rep.cover_failures;

      // Siblings meeting J must lie in 2MJ.
      const double jl = leaves[lo].left;
      const double jr = leaves[hi].right;
      const double half = M * (jr - jl);
      const double mid = 0.5 * (jl + jr);
      const double dl = mid - half;
      const double dr = mid + half;
      for (const auto& pick : {std::optional<std::size_t>(e1), e2}) {
        if (!pick) continue;
        const auto& b = blocks[*pick];
        if (b.first == 0) continue;
        const auto& sib = tree.domain[static_cast<std::size_t>(b.first)][b.second ^ 1u];
        const bool meets = sib.right >= jl && sib.left <= jr;
        if (meets && (sib.left < dl - 1e-15 || sib.right > dr + 1e-15)) ++rep.dilation_failures;
      }

      // diam f(2MJ cap E) against diam f(J cap E)
      const auto first = static_cast<std::size_t>(
          std::lower_bound(rights.begin(), rights.end(), dl) - rights.begin());
      const auto past = static_cast<std::size_t>(
          std::upper_bound(lefts.begin(), lefts.end(), dr) - lefts.begin());
      // whole leaves meeting 2MJ: an upper estimate of the clipped set
      if (first < past) {
        const double wide = img[past - 1].right - img[first].left;
        rep.max_dilation_ratio = std::max(rep.max_dilation_ratio, wide / diam_img);
      }
    }
  }
  return rep;
}

inline double scan_balls(const ImageTree& tree, const RecursiveMeasure& m, int n,
                         std::size_t max_centers) {
  const auto& img = tree.images[static_cast<std::size_t>(n)].images;
  const auto& mass = m.mass[static_cast<std::size_t>(n)];
  const DiscreteMeasure mu(img, mass);
  std::vector<double> diams(img.size());
  for (std::size_t j = 0; j < img.size(); ++j) diams[j] = img[j].length();
  std::nth_element(diams.begin(), diams.begin() + static_cast<long>(diams.size() / 2), diams.end());
  const double r_min = diams[diams.size() / 2];
  const double r_max = tree.diam(0, 0);
  // Centres are the endpoints and midpoints of the nodes at the deepest level
  // with at most max_centers of them, so every depth sees the same centres.
  int nc = n;
  while (nc > 0 && 3 * tree.images[static_cast<std::size_t>(nc)].images.size() > max_centers) --nc;
  double best = 0.0;
  for (const Interval& iv : tree.images[static_cast<std::size_t>(nc)].images) {
    for (const double y : {iv.left, iv.midpoint(), iv.right}) {
      for (double r = r_max; r >= r_min * (1.0 - 1e-12); r /= std::sqrt(2.0)) {
        best = std::max(best, mu.mass_in(y - r, y + r) / std::pow(r, m.d));
      }
    }
  }
  return best;
}

}  // namespace detail

/// Finite-scale certificate for mu(B(y,r)) <= C r^d on f(E) at exponent d.
/// C(n) combines the node and interval (two-block decomposition) scans with the
/// depth-n leaves; a ball scan checks that balls obey 2^d C(n). The window is
/// depths depth/2+1 .. depth; pass iff every C(n) is finite, C(depth) /
/// C(depth/2 + 1) < max_variation, the node constant is decelerating, the
/// two-block cover held for every scanned interval, and no ball exceeded 2^d C(n).
inline Certificate certificate(const CantorSystem& sys, const QsMap& map, double d, int depth,
                               const CertificateOptions& opt = {}) {
  if (depth < 4) throw ConfigError("certificate: depth must be >= 4");
  const ImageTree tree = build_image_tree(sys, map, depth);
  const RecursiveMeasure m = build_recursive_measure(tree, d);
  Certificate cert;
  cert.d = d;
  cert.depth = depth;
  cert.window_start = depth / 2 + 1;
  cert.max_bound_excess = m.max_bound_excess;
  cert.partition = gap_partition(sys.gaps, map.eta(), d, std::max(1.0, sys.ratio_bound));

  double node_running = 1.0 / std::pow(tree.diam(0, 0), d);
  const auto max_p = level_max_p(m);
  for (int n = 1; n <= depth; ++n) {
    for (std::size_t j = 0; j < m.mass[static_cast<std::size_t>(n)].size(); ++j) {
      node_running = std::max(node_running, m.mass[static_cast<std::size_t>(n)][j] / std::pow(tree.diam(n, j), d));
    }
    if (n < cert.window_start) continue;
    CertificateLevel lv;
    lv.depth = n;
    lv.node_constant = node_running;
    const Growth2Report g2 = detail::scan_growth2(tree, m, n, map.eta());
    lv.interval_constant = g2.constant;
    lv.ball_constant = detail::scan_balls(tree, m, n, opt.max_centers);
    lv.C = std::max(lv.node_constant, lv.interval_constant);
    lv.max_p = max_p[static_cast<std::size_t>(n - 1)];
    cert.levels.push_back(lv);
    if (n == depth) cert.growth2 = g2;
  }
  bool finite = true;
  for (const auto& lv : cert.levels) {
    finite = finite && std::isfinite(lv.C);
    cert.C_growth = std::max(cert.C_growth, lv.C);
    // B(y, r) meets f(E) inside an interval of diameter <= 2r.
    cert.worst_ball_ratio = std::max(cert.worst_ball_ratio, lv.ball_constant / (std::pow(2.0, d) * lv.C));
  }
  cert.variation = cert.levels.back().C / cert.levels.front().C;
  // Geometric divergence (a constant p_i > 1) shows as a node constant whose
  // per-level growth does not slow down across the window.
  const double first_growth = std::log(cert.levels[1].node_constant / cert.levels[0].node_constant);
  const double last_growth = std::log(cert.levels.back().node_constant /
                                      cert.levels[cert.levels.size() - 2].node_constant);
  cert.decelerating = last_growth <= 1e-9 || last_growth <= opt.deceleration * first_growth;
  cert.pass = finite && cert.variation < opt.max_variation && cert.decelerating &&
              cert.growth2.cover_failures == 0 && cert.worst_ball_ratio <= 1.0;
  return cert;
}

}  // namespace confdim
