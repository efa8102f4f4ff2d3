#pragma once

// Fuglede p-modulus of a system of measures and the discrete modulus of a
// family of sets, both as convex covering programs
//   minimize sum_c w_c x_c^p  subject to  A x >= 1, x >= 0,
// plus the 5r covering selection, product systems and the vanishing-modulus
// witness.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "confdim/cantor.hpp"
#include "confdim/dimension.hpp"
#include "confdim/errors.hpp"

namespace confdim {

/// Nonnegative weights on a subset of cells, indices strictly increasing.
struct SparseVector {
  std::vector<std::size_t> index;
  std::vector<double> value;

  double total() const { return std::accumulate(value.begin(), value.end(), 0.0); }

  static SparseVector from_dense(const std::vector<double>& dense) {
    SparseVector v;
    for (std::size_t c = 0; c < dense.size(); ++c) {
      if (dense[c] != 0.0) {
        v.index.push_back(c);
        v.value.push_back(dense[c]);
      }
    }
    return v;
  }
};

/// Cells with measure mu_cell and member measures lambda_E over the cells.
/// Geometric systems also carry cell centres on a square grid of spacing h.
struct MeasureSystem {
  double p = 2.0;
  std::vector<double> mu;
  std::vector<SparseVector> members;
  /// Optional: nu(y) for the fibre behind each member (product systems).
  std::vector<double> member_weight;
  double h = 0.0;
  std::vector<std::array<double, 2>> centers;

  std::size_t cells() const noexcept { return mu.size(); }

  static MeasureSystem dense(std::vector<double> mu, const std::vector<std::vector<double>>& members,
                             double p) {
    MeasureSystem s;
    s.p = p;
    s.mu = std::move(mu);
    for (const auto& m : members) {
      if (m.size() != s.mu.size()) throw ConfigError("system.members: row length differs from cell count");
      s.members.push_back(SparseVector::from_dense(m));
    }
    return s;
  }

  void validate() const {
    if (!(p > 1.0)) throw ConfigError("system.p must be > 1");
    if (mu.empty()) throw ConfigError("system.mu: no cells");
    double total = 0.0;
    for (std::size_t c = 0; c < mu.size(); ++c) {
      if (!(mu[c] >= 0.0) || !std::isfinite(mu[c])) {
        throw ConfigError("system.mu[" + std::to_string(c) + "] must be finite and >= 0");
      }
      total += mu[c];
    }
    if (!(total > 0.0)) throw ConfigError("system.mu: total mass is zero");
    if (!centers.empty() && centers.size() != mu.size()) {
      throw ConfigError("system.centers: size differs from cell count");
    }
    for (std::size_t e = 0; e < members.size(); ++e) {
      const auto& m = members[e];
      if (m.index.size() != m.value.size()) throw ConfigError("system.members: index/value mismatch");
      for (std::size_t k = 0; k < m.index.size(); ++k) {
        if (m.index[k] >= mu.size() || (k > 0 && m.index[k] <= m.index[k - 1])) {
          throw ConfigError("system.members[" + std::to_string(e) + "]: bad cell index");
        }
        if (!(m.value[k] >= 0.0) || !std::isfinite(m.value[k])) {
          throw ConfigError("system.members[" + std::to_string(e) + "]: weights must be finite and >= 0");
        }
      }
      if (!(m.total() > 0.0)) {
        throw InfeasibleError("system.members[" + std::to_string(e) + "] has zero total mass", e);
      }
    }
  }
};

struct SolveResult {
  double value = 0.0;
  /// rho per cell (Fuglede) or v per ball (discrete).
  std::vector<double> optimizer;
  /// Lagrange multiplier per covering constraint.
  std::vector<double> multipliers;
  /// max of relative stationarity, primal infeasibility and complementarity.
  double kkt_residual = 0.0;
  /// primal value minus dual value.
  double duality_gap = 0.0;
  int iterations = 0;
  bool converged = false;
};

struct SolverOptions {
  /// Stop when the projected dual gradient (= constraint violation) is below this.
  double tolerance = 1e-13;
  int max_iterations = 100000;
};

namespace detail {

struct CoveringProgram {
  double p = 2.0;
  std::vector<double> w;             // > 0 per column
  std::vector<SparseVector> rows;    // each with positive total
};

struct CoveringState {
  std::vector<double> s;
  std::vector<double> x;
  std::vector<double> grad;
  double dual = 0.0;
};

inline void evaluate(const CoveringProgram& P, const std::vector<double>& y, CoveringState& st) {
  const std::size_t n = P.w.size();
  st.s.assign(n, 0.0);
  for (std::size_t e = 0; e < P.rows.size(); ++e) {
    if (y[e] == 0.0) continue;
    const auto& r = P.rows[e];
    for (std::size_t k = 0; k < r.index.size(); ++k) st.s[r.index[k]] += y[e] * r.value[k];
  }
  st.x.assign(n, 0.0);
  double cost = 0.0;
  const double inv = 1.0 / (P.p - 1.0);
  for (std::size_t c = 0; c < n; ++c) {
    if (st.s[c] > 0.0) {
      st.x[c] = std::pow(st.s[c] / (P.p * P.w[c]), inv);
      cost += P.w[c] * std::pow(st.x[c], P.p);
    }
  }
  st.dual = std::accumulate(y.begin(), y.end(), 0.0) - (P.p - 1.0) * cost;
  st.grad.assign(P.rows.size(), 1.0);
  for (std::size_t e = 0; e < P.rows.size(); ++e) {
    const auto& r = P.rows[e];
    for (std::size_t k = 0; k < r.index.size(); ++k) st.grad[e] -= r.value[k] * st.x[r.index[k]];
  }
}

inline double projected_residual(const std::vector<double>& y, const std::vector<double>& grad) {
  double res = 0.0;
  for (std::size_t e = 0; e < y.size(); ++e) res = std::max(res, std::abs(y[e] - std::max(0.0, y[e] + grad[e])));
  return res;
}

// Projected Newton ascent on the concave dual
//   g(y) = sum y - (p-1) sum_c w_c x_c(y)^p,  x_c(y) = ((A^T y)_c / (p w_c))^{1/(p-1)}.
inline SolveResult solve_covering(const CoveringProgram& P, const SolverOptions& opt) {
  const std::size_t m = P.rows.size();
  const std::size_t n = P.w.size();
  const double inv = 1.0 / (P.p - 1.0);
  std::vector<double> y(m);
  for (std::size_t e = 0; e < m; ++e) {
    // the multiplier that satisfies row e on its own
    double S = 0.0;
    const auto& r = P.rows[e];
    for (std::size_t k = 0; k < r.index.size(); ++k) {
      S += r.value[k] * std::pow(r.value[k] / (P.p * P.w[r.index[k]]), inv);
    }
    y[e] = std::pow(1.0 / S, P.p - 1.0);
  }
  std::vector<std::vector<std::pair<std::size_t, double>>> cols(n);
  for (std::size_t e = 0; e < m; ++e) {
    for (std::size_t k = 0; k < P.rows[e].index.size(); ++k) {
      cols[P.rows[e].index[k]].emplace_back(e, P.rows[e].value[k]);
    }
  }

  SolveResult res;
  CoveringState st;
  CoveringState trial;
  evaluate(P, y, st);
  std::vector<int> slot(m, -1);
  std::vector<std::size_t> free;
  int it = 0;
  for (; it < opt.max_iterations; ++it) {
    const double r = projected_residual(y, st.grad);
    if (r <= opt.tolerance) {
      res.converged = true;
      break;
    }
    const double eps = std::min(1e-3, r);
    free.clear();
    std::fill(slot.begin(), slot.end(), -1);
    for (std::size_t e = 0; e < m; ++e) {
      if (!(y[e] <= eps && st.grad[e] < 0.0)) {
        slot[e] = static_cast<int>(free.size());
        free.push_back(e);
      }
    }
    std::vector<double> dir(st.grad);
    if (!free.empty()) {
      const auto F = static_cast<Eigen::Index>(free.size());
      Eigen::MatrixXd H = Eigen::MatrixXd::Zero(F, F);
      for (std::size_t c = 0; c < n; ++c) {
        if (!(st.s[c] > 0.0)) continue;
        const double wc = st.x[c] * inv / st.s[c];
        for (const auto& [a, va] : cols[c]) {
          if (slot[a] < 0) continue;
          for (const auto& [b, vb] : cols[c]) {
            if (slot[b] < 0) continue;
            H(slot[a], slot[b]) += va * vb * wc;
          }
        }
      }
      const double tr = H.diagonal().cwiseAbs().maxCoeff();
      // Levenberg-style shift proportional to the residual: rows can be
      // dependent (more constraints than cells), leaving H singular.
      H.diagonal().array() += tr * std::clamp(r, 1e-14, 1e-3) + std::numeric_limits<double>::min();
      Eigen::VectorXd g(F);
      for (Eigen::Index k = 0; k < F; ++k) g(k) = st.grad[free[static_cast<std::size_t>(k)]];
      const Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
      Eigen::VectorXd d = ldlt.solve(g);
      if (ldlt.info() == Eigen::Success && d.allFinite() && d.dot(g) > 0.0) {
        for (Eigen::Index k = 0; k < F; ++k) dir[free[static_cast<std::size_t>(k)]] = d(k);
      }
    }
    double alpha = 1.0;
    bool accepted = false;
    std::vector<double> ny(m);
    // Near the optimum the dual gain falls below the rounding of g itself;
    // there the residual decides.
    const double floor = 64.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(st.dual));
    for (int ls = 0; ls < 60; ++ls, alpha *= 0.5) {
      double predicted = 0.0;
      bool moved = false;
      for (std::size_t e = 0; e < m; ++e) {
        ny[e] = std::max(0.0, y[e] + alpha * dir[e]);
        predicted += st.grad[e] * (ny[e] - y[e]);
        moved = moved || ny[e] != y[e];
      }
      if (!moved) break;
      evaluate(P, ny, trial);
      if (predicted > floor && trial.dual >= st.dual + 1e-4 * predicted) {
        accepted = true;
        break;
      }
      if (predicted <= floor && trial.dual >= st.dual - floor &&
          projected_residual(ny, trial.grad) < r) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    y.swap(ny);
    std::swap(st, trial);
  }
  res.iterations = it;
  const double r = projected_residual(y, st.grad);
  if (!res.converged && r <= 1e-10) res.converged = true;

  res.optimizer = st.x;
  res.multipliers = y;
  double value = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    if (st.x[c] > 0.0) value += P.w[c] * std::pow(st.x[c], P.p);
  }
  res.value = value;
  res.duality_gap = value - st.dual;
  double kkt = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    const double lhs = P.p * P.w[c] * std::pow(st.x[c], P.p - 1.0);
    kkt = std::max(kkt, std::abs(lhs - st.s[c]) / std::max(1.0, st.s[c]));
  }
  for (std::size_t e = 0; e < m; ++e) {
    kkt = std::max(kkt, std::max(0.0, st.grad[e]));
    kkt = std::max(kkt, y[e] * std::abs(st.grad[e]));
  }
  res.kkt_residual = kkt;
  return res;
}

}  // namespace detail

/// mod_p = min sum_c mu_c rho_c^p over rho >= 0 with sum_c lambda_E,c rho_c >= 1
/// for every member. Members charging a cell with mu = 0 are satisfied at no
/// cost by raising rho there.
inline SolveResult solve_fuglede(const MeasureSystem& sys, const SolverOptions& opt = {}) {
  sys.validate();
  const std::size_t n = sys.cells();
  std::vector<double> rho(n, 0.0);
  std::vector<std::size_t> col_of(n, n);
  detail::CoveringProgram P;
  P.p = sys.p;
  for (std::size_t c = 0; c < n; ++c) {
    if (sys.mu[c] > 0.0) {
      col_of[c] = P.w.size();
      P.w.push_back(sys.mu[c]);
    }
  }
  std::vector<std::size_t> kept;
  for (std::size_t e = 0; e < sys.members.size(); ++e) {
    const auto& m = sys.members[e];
    double free_mass = 0.0;
    for (std::size_t k = 0; k < m.index.size(); ++k) {
      if (sys.mu[m.index[k]] == 0.0) free_mass += m.value[k];
    }
    if (free_mass > 0.0) {
      for (std::size_t k = 0; k < m.index.size(); ++k) {
        if (sys.mu[m.index[k]] == 0.0 && m.value[k] > 0.0) {
          rho[m.index[k]] = std::max(rho[m.index[k]], 1.0 / free_mass);
        }
      }
      continue;
    }
    SparseVector row;
    for (std::size_t k = 0; k < m.index.size(); ++k) {
      if (m.value[k] > 0.0) {
        row.index.push_back(col_of[m.index[k]]);
        row.value.push_back(m.value[k]);
      }
    }
    P.rows.push_back(std::move(row));
    kept.push_back(e);
  }
  SolveResult out;
  out.multipliers.assign(sys.members.size(), 0.0);
  if (P.rows.empty()) {
    out.optimizer = rho;
    out.converged = true;
    return out;
  }
  SolveResult r = detail::solve_covering(P, opt);
  for (std::size_t c = 0; c < n; ++c) {
    if (col_of[c] < n) rho[c] = r.optimizer[col_of[c]];
  }
  for (std::size_t k = 0; k < kept.size(); ++k) out.multipliers[kept[k]] = r.multipliers[k];
  out.optimizer = std::move(rho);
  out.value = r.value;
  out.kkt_residual = r.kkt_residual;
  out.duality_gap = r.duality_gap;
  out.iterations = r.iterations;
  out.converged = r.converged;
  return out;
}

/// Closed l-infinity ball (an interval in 1-D, an axis-aligned square in 2-D).
struct Ball {
  std::vector<double> center;
  double radius = 0.0;
};

inline double linf_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) d = std::max(d, std::abs(a[k] - b[k]));
  return d;
}

inline bool balls_intersect(const Ball& a, const Ball& b, double scale = 1.0) {
  return linf_distance(a.center, b.center) <= scale * (a.radius + b.radius);
}

struct DiscreteModulusProblem {
  double p = 2.0;
  double delta = std::numeric_limits<double>::infinity();
  std::vector<Ball> balls;
  /// incidence[s] = indices of balls whose fifth-ball meets target set s.
  std::vector<std::vector<std::size_t>> incidence;

  void validate() const {
    if (!(p > 1.0)) throw ConfigError("problem.p must be > 1");
    if (balls.empty()) throw ConfigError("problem.balls: empty");
    const std::size_t dim = balls.front().center.size();
    for (std::size_t i = 0; i < balls.size(); ++i) {
      if (balls[i].center.size() != dim) throw ConfigError("problem.balls: mixed dimensions");
      if (!(balls[i].radius > 0.0) || balls[i].radius > delta) {
        throw ConfigError("problem.balls[" + std::to_string(i) + "]: radius must lie in (0, delta]");
      }
    }
    for (std::size_t i = 0; i < balls.size(); ++i) {
      for (std::size_t j = i + 1; j < balls.size(); ++j) {
        if (balls_intersect(balls[i], balls[j], 0.2)) {
          throw ConfigError("problem.balls[" + std::to_string(i) + "] and [" + std::to_string(j) +
                            "]: fifth-balls intersect");
        }
      }
    }
    for (std::size_t s = 0; s < incidence.size(); ++s) {
      for (std::size_t b : incidence[s]) {
        if (b >= balls.size()) throw ConfigError("problem.incidence[" + std::to_string(s) + "]: bad ball index");
      }
    }
  }
};

/// min sum_B v(B)^p over v >= 0 with sum_{B meets set} v(B) >= 1 for every set.
inline SolveResult solve_discrete(const DiscreteModulusProblem& prob, const SolverOptions& opt = {}) {
  prob.validate();
  detail::CoveringProgram P;
  P.p = prob.p;
  P.w.assign(prob.balls.size(), 1.0);
  for (std::size_t s = 0; s < prob.incidence.size(); ++s) {
    std::vector<std::size_t> idx(prob.incidence[s]);
    std::sort(idx.begin(), idx.end());
    idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
    if (idx.empty()) {
      throw InfeasibleError("problem.incidence[" + std::to_string(s) + "]: set meets no fifth-ball", s);
    }
    SparseVector row;
    row.index = idx;
    row.value.assign(idx.size(), 1.0);
    P.rows.push_back(std::move(row));
  }
  if (P.rows.empty()) {
    SolveResult out;
    out.optimizer.assign(prob.balls.size(), 0.0);
    out.converged = true;
    return out;
  }
  return detail::solve_covering(P, opt);
}

/// Greedy 5r selection: radius descending, then lexicographic centre, then
/// input order; a ball is kept if it misses every ball kept so far. Returns
/// the kept indices in increasing order.
inline std::vector<std::size_t> vitali_select(const std::vector<Ball>& balls) {
  std::vector<std::size_t> order(balls.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (balls[a].radius != balls[b].radius) return balls[a].radius > balls[b].radius;
    return balls[a].center < balls[b].center;
  });
  std::vector<std::size_t> kept;
  for (std::size_t i : order) {
    bool ok = true;
    for (std::size_t k : kept) {
      if (balls_intersect(balls[i], balls[k])) {
        ok = false;
        break;
      }
    }
    if (ok) kept.push_back(i);
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

inline std::vector<Ball> vitali_disjointify(const std::vector<Ball>& balls) {
  std::vector<Ball> out;
  for (std::size_t i : vitali_select(balls)) out.push_back(balls[i]);
  return out;
}

struct WeightedPoint {
  double y = 0.0;
  double weight = 0.0;
};

/// E x Y on a square grid of spacing h: mu = lambda_E x nu rasterized, one
/// member lambda_E x delta_y per point of Y. Only the rows holding points of
/// Y are stored.
inline MeasureSystem product_system(const IntervalLevel& level, const DiscreteMeasure& lambda,
                                    const std::vector<WeightedPoint>& Y, double h, double p) {
  if (!(h > 0.0)) throw ConfigError("grid.h must be > 0");
  if (!(p > 1.0)) throw ConfigError("p must be > 1");
  if (lambda.cells().empty()) throw ConfigError("product: empty fibre measure");
  double min_gap = std::numeric_limits<double>::infinity();
  for (std::size_t j = 1; j < level.size(); ++j) {
    const double g = level.intervals[j].left - level.intervals[j - 1].right;
    if (g > 0.0) min_gap = std::min(min_gap, g);
  }
  if (h > min_gap) {
    throw ConfigError("grid.h = " + std::to_string(h) + " is coarser than the smallest gap " +
                      std::to_string(min_gap) + "; fibres would alias");
  }
  std::vector<long long> rows;
  for (std::size_t k = 0; k < Y.size(); ++k) {
    if (!(Y[k].weight >= 0.0)) throw ConfigError("Y[" + std::to_string(k) + "].weight must be >= 0");
    const auto r = static_cast<long long>(std::floor(Y[k].y / h));
    if (std::find(rows.begin(), rows.end(), r) != rows.end()) {
      throw ConfigError("Y[" + std::to_string(k) + "] shares a grid row with another point; fibres would alias");
    }
    rows.push_back(r);
  }
  const auto k0 = static_cast<long long>(std::floor(lambda.support_lo() / h));
  const auto k1 = static_cast<long long>(std::ceil(lambda.support_hi() / h));
  const double below = lambda.support_lo() - 1.0;
  std::vector<double> fibre;
  std::vector<long long> cols;
  double prev = lambda.mass_in(below, static_cast<double>(k0) * h);
  for (long long k = k0; k < std::max(k1, k0 + 1); ++k) {
    const double cur = lambda.mass_in(below, static_cast<double>(k + 1) * h);
    const double m = std::max(0.0, cur - prev);
    prev = cur;
    if (m > 0.0) {
      fibre.push_back(m);
      cols.push_back(k);
    }
  }
  MeasureSystem sys;
  sys.p = p;
  sys.h = h;
  for (std::size_t k = 0; k < Y.size(); ++k) {
    SparseVector member;
    for (std::size_t c = 0; c < fibre.size(); ++c) {
      member.index.push_back(sys.mu.size());
      member.value.push_back(fibre[c]);
      sys.mu.push_back(fibre[c] * Y[k].weight);
      sys.centers.push_back({(static_cast<double>(cols[c]) + 0.5) * h, (static_cast<double>(rows[k]) + 0.5) * h});
    }
    sys.members.push_back(std::move(member));
    sys.member_weight.push_back(Y[k].weight);
  }
  return sys;
}

/// nu(Y) as a lower bound for mod_{1+d} of a product system with normalized
/// fibres (Jensen on every fibre, then integrate against nu).
inline double holder_lower_bound(const MeasureSystem& sys, double d) {
  if (!(d > 0.0)) throw ConfigError("holder: d must be > 0");
  if (std::abs(sys.p - (1.0 + d)) > 1e-12) throw ConfigError("holder: system p must equal 1 + d");
  if (sys.member_weight.size() != sys.members.size()) {
    throw ConfigError("holder: system has no fibre weights (not a product system)");
  }
  for (std::size_t e = 0; e < sys.members.size(); ++e) {
    if (std::abs(sys.members[e].total() - 1.0) > 1e-9) {
      throw ConfigError("holder: member " + std::to_string(e) + " is not normalized");
    }
  }
  return std::accumulate(sys.member_weight.begin(), sys.member_weight.end(), 0.0);
}

struct HolderReport {
  double bound = 0.0;
  double value = 0.0;
  bool ok = false;
  SolveResult solve;
};

inline HolderReport holder_check(const MeasureSystem& sys, double d, double tolerance = 1e-3,
                                 const SolverOptions& opt = {}) {
  HolderReport r;
  r.bound = holder_lower_bound(sys, d);
  if (sys.members.empty()) {
    r.ok = true;
    return r;
  }
  r.solve = solve_fuglede(sys, opt);
  r.value = r.solve.value;
  r.ok = r.value >= r.bound - tolerance;
  return r;
}

struct WitnessResult {
  int depth = 0;
  double t = 0.0;
  double q = 0.0;
  double dim_estimate = 0.0;
  /// min over sets of sum r^t over balls meeting the set, before normalization.
  double raw_min_sum = 0.0;
  DiscreteModulusProblem problem;
  std::vector<double> v;
  double value = 0.0;
  /// min over sets of sum v over balls meeting the set (>= 1 when admissible).
  double min_coverage = 0.0;
  bool admissible = false;
  /// value at depths 1..depth.
  std::vector<double> trace;
  bool reached = false;
};

/// log N / log(1 / mean length) for the level's intervals.
inline double level_dimension_estimate(const IntervalLevel& level) {
  if (level.size() < 2) return 0.0;
  double mean = 0.0;
  for (const auto& iv : level.intervals) mean += iv.length();
  mean /= static_cast<double>(level.size());
  return std::log(static_cast<double>(level.size())) / -std::log(mean);
}

namespace detail {

inline bool set_meets(const std::vector<Interval>& set, double lo, double hi) {
  for (const auto& iv : set) {
    if (iv.right >= lo && iv.left <= hi) return true;
  }
  return false;
}

inline WitnessResult witness_at(const CantorSystem& X, const std::vector<std::vector<Interval>>& family,
                                double t, double q, int k) {
  const IntervalLevel& lv = X.level(k);
  WitnessResult w;
  w.depth = k;
  w.t = t;
  w.q = q;
  w.dim_estimate = level_dimension_estimate(lv);
  w.problem.p = q;
  double delta = 0.0;
  for (const auto& iv : lv.intervals) {
    // centred on a point of X so the fifth-ball meets every set through iv
    w.problem.balls.push_back(Ball{{iv.left}, iv.length()});
    delta = std::max(delta, iv.length());
  }
  w.problem.delta = delta;
  std::vector<double> raw(lv.size());
  for (std::size_t j = 0; j < lv.size(); ++j) raw[j] = std::pow(lv.intervals[j].length(), t);
  w.raw_min_sum = std::numeric_limits<double>::infinity();
  for (const auto& set : family) {
    std::vector<std::size_t> inc;
    double sum = 0.0;
    for (std::size_t j = 0; j < lv.size(); ++j) {
      const Ball& b = w.problem.balls[j];
      if (set_meets(set, b.center[0] - b.radius / 5, b.center[0] + b.radius / 5)) {
        inc.push_back(j);
        sum += raw[j];
      }
    }
    w.problem.incidence.push_back(std::move(inc));
    w.raw_min_sum = std::min(w.raw_min_sum, sum);
  }
  if (!(w.raw_min_sum > 0.0)) throw ConfigError("witness: a set meets no ball at depth " + std::to_string(k));
  const double scale = std::min(1.0, w.raw_min_sum);
  w.v.resize(lv.size());
  for (std::size_t j = 0; j < lv.size(); ++j) {
    w.v[j] = raw[j] / scale;
    w.value += std::pow(w.v[j], q);
  }
  w.min_coverage = std::numeric_limits<double>::infinity();
  for (const auto& inc : w.problem.incidence) {
    double sum = 0.0;
    for (std::size_t j : inc) sum += w.v[j];
    w.min_coverage = std::min(w.min_coverage, sum);
  }
  w.admissible = w.min_coverage >= 1.0 - 1e-12;
  return w;
}

}  // namespace detail

/// Admissible pair (balls over the depth-k intervals, v = r^t normalized so
/// every set collects weight >= 1) with sum v^q below eps_target, scanning
/// k = 1, 2, ... up to the built depth. Refused when q t <= the dimension
/// estimate of the finest level.
inline WitnessResult dmod_vanishing_witness(const CantorSystem& X,
                                            const std::vector<std::vector<Interval>>& family, double t,
                                            double q, double eps_target) {
  if (!(t > 0.0) || !(q > 1.0)) throw ConfigError("witness: need t > 0 and q > 1");
  if (family.empty()) throw ConfigError("witness: empty family");
  const int top = X.materialized_depth();
  if (top < 1) throw ConfigError("witness: system needs depth >= 1");
  const double dim = level_dimension_estimate(X.level(top));
  if (!(q * t > dim)) {
    throw ConfigError("witness: q t = " + std::to_string(q * t) + " does not exceed the dimension estimate " +
                      std::to_string(dim));
  }
  std::vector<double> trace;
  WitnessResult w;
  for (int k = 1; k <= top; ++k) {
    w = detail::witness_at(X, family, t, q, k);
    trace.push_back(w.value);
    if (w.value < eps_target) {
      w.reached = true;
      break;
    }
  }
  w.trace = std::move(trace);
  return w;
}

/// Witness at a fixed depth, without the target search.
inline WitnessResult dmod_witness_at_depth(const CantorSystem& X,
                                           const std::vector<std::vector<Interval>>& family, double t,
                                           double q, int depth) {
  if (!(t > 0.0) || !(q > 1.0)) throw ConfigError("witness: need t > 0 and q > 1");
  return detail::witness_at(X, family, t, q, depth);
}

/// Balls of radius delta/2 centred at the grid points i delta in x and on every member
/// row in y, kept when they meet some member's support; a member meets a ball
/// when one of its cells overlaps the fifth-ball.
inline DiscreteModulusProblem grid_ball_problem(const MeasureSystem& sys, double delta, double q) {
  if (sys.centers.empty() || !(sys.h > 0.0)) throw ConfigError("grid balls: system has no geometry");
  if (!(delta > 0.0)) throw ConfigError("grid balls: delta must be > 0");
  DiscreteModulusProblem prob;
  prob.p = q;
  prob.delta = delta / 2;
  prob.incidence.resize(sys.members.size());
  std::vector<double> rows;
  for (const auto& m : sys.members) {
    for (std::size_t c : m.index) rows.push_back(sys.centers[c][1]);
  }
  std::sort(rows.begin(), rows.end());
  rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
  for (std::size_t k = 1; k < rows.size(); ++k) {
    if (rows[k] - rows[k - 1] <= 0.4 * delta) throw ConfigError("grid balls: member rows closer than 0.4 delta");
  }
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& c : sys.centers) {
    lo = std::min(lo, c[0] - sys.h / 2);
    hi = std::max(hi, c[0] + sys.h / 2);
  }
  const auto i0 = static_cast<long long>(std::floor(lo / delta));
  const auto i1 = static_cast<long long>(std::ceil(hi / delta));
  for (const double row : rows) {
    for (long long i = i0; i <= i1; ++i) {
      const double cx = static_cast<double>(i) * delta;
      const Ball b{{cx, row}, delta / 2};
      const double f = delta / 10;
      bool any = false;
      for (std::size_t e = 0; e < sys.members.size(); ++e) {
        const auto& m = sys.members[e];
        bool meets = false;
        for (std::size_t k = 0; k < m.index.size() && !meets; ++k) {
          const auto& c = sys.centers[m.index[k]];
          meets = m.value[k] > 0.0 && std::abs(c[1] - row) <= f && c[0] + sys.h / 2 >= cx - f &&
                  c[0] - sys.h / 2 <= cx + f;
        }
        if (meets) {
          prob.incidence[e].push_back(prob.balls.size());
          any = true;
        }
      }
      if (any) prob.balls.push_back(b);
    }
  }
  return prob;
}

struct ComparisonReport {
  double lhs = 0.0;
  double rhs = 0.0;
  double ratio = std::numeric_limits<double>::quiet_NaN();
  bool degenerate = false;
  /// min over scanned (member, centre, r) of lambda_E(B_r) / r^s.
  double observed_C1 = 0.0;
  SolveResult fuglede;
  SolveResult discrete;
};

/// Checks lambda_E(B_r cap E) >= C1 r^s for every member, at every radius in
/// `radii` and at centres on the member's support (strided to at most
/// max_centers per member); throws HypothesisError on the first failure.
inline double fibre_growth_scan(const MeasureSystem& sys, double s, double C1, double C2,
                                const std::vector<double>& radii, std::size_t max_centers = 512) {
  if (sys.centers.empty()) throw ConfigError("growth scan: system has no geometry");
  // Centres lie on the member's support, so (1/C2) B_r meets E for every C2.
  (void)C2;
  double observed = std::numeric_limits<double>::infinity();
  for (const auto& m : sys.members) {
    const std::size_t stride = std::max<std::size_t>(1, m.index.size() / max_centers);
    for (std::size_t a = 0; a < m.index.size(); a += stride) {
      const auto& y = sys.centers[m.index[a]];
      for (const double r : radii) {
        double mass = 0.0;
        for (std::size_t k = 0; k < m.index.size(); ++k) {
          const auto& c = sys.centers[m.index[k]];
          if (std::max(std::abs(c[0] - y[0]), std::abs(c[1] - y[1])) <= r) mass += m.value[k];
        }
        const double ratio = mass / std::pow(r, s);
        observed = std::min(observed, ratio);
        if (ratio < C1) {
          throw HypothesisError("fibre growth lambda(B_r) >= C1 r^s fails: ratio " + std::to_string(ratio) +
                                    " < " + std::to_string(C1),
                                y[0], r);
        }
      }
    }
  }
  return observed;
}

/// mod_q of the system against d-mod_q of the image problem. Reports the
/// ratio only; the constant relating them is not asserted.
inline ComparisonReport modulus_comparison(const MeasureSystem& system, const DiscreteModulusProblem& image_problem,
                                           double s, double C1, double C2, const std::vector<double>& radii,
                                           const SolverOptions& opt = {}) {
  ComparisonReport r;
  if (system.members.empty()) {
    r.degenerate = true;
    return r;
  }
  r.observed_C1 = fibre_growth_scan(system, s, C1, C2, radii);
  r.fuglede = solve_fuglede(system, opt);
  r.discrete = solve_discrete(image_problem, opt);
  r.lhs = r.fuglede.value;
  r.rhs = r.discrete.value;
  if (r.rhs > 0.0) r.ratio = r.lhs / r.rhs;
  return r;
}

struct SubadditivityReport {
  std::vector<double> values;
  double union_value = 0.0;
  double sum = 0.0;
  bool subadditive = false;
  /// every system's value <= the union's value
  bool monotone = false;
};

inline SubadditivityReport subadditivity_check(const std::vector<MeasureSystem>& systems,
                                               const SolverOptions& opt = {}) {
  if (systems.empty()) throw ConfigError("subadditivity: no systems");
  MeasureSystem all = systems.front();
  all.members.clear();
  all.member_weight.clear();
  SubadditivityReport r;
  for (const auto& s : systems) {
    if (s.mu != all.mu || s.p != all.p) throw ConfigError("subadditivity: systems must share ambient and p");
    all.members.insert(all.members.end(), s.members.begin(), s.members.end());
    const double v = s.members.empty() ? 0.0 : solve_fuglede(s, opt).value;
    r.values.push_back(v);
    r.sum += v;
  }
  r.union_value = all.members.empty() ? 0.0 : solve_fuglede(all, opt).value;
  r.subadditive = r.union_value <= r.sum + 1e-6;
  r.monotone = true;
  for (double v : r.values) r.monotone = r.monotone && v <= r.union_value + 1e-6;
  return r;
}

}  // namespace confdim
