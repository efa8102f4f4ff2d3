#pragma once

// Experiment pipelines behind the confdim command line. Every command reads a
// JSON config and returns its output files as strings plus a summary record,
// so the same code runs from the CLI, the tests and the acceptance suite.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include "confdim/cantor.hpp"
#include "confdim/dimension.hpp"
#include "confdim/errors.hpp"
#include "confdim/modulus.hpp"
#include "confdim/qs_maps.hpp"
#include "confdim/qs_mass.hpp"
#include "confdim/random.hpp"
#include "json.hpp"

namespace confdim::cli {

using json = nlohmann::json;

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kConfigError = 2, kHypothesisFailure = 3, kNoConvergence = 4 };

struct Context {
  json config;
  /// Directory of the config file; "file:" references resolve against it.
  std::filesystem::path base_dir = ".";
  std::uint64_t seed = 0;
};

struct Output {
  /// (file name, contents), written in this order.
  std::vector<std::pair<std::string, std::string>> files;
  json summary;
  int status = kOk;
};

// ---------------------------------------------------------------- formatting

/// Shortest round-trip decimal form.
inline std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

class Csv {
 public:
  explicit Csv(std::initializer_list<std::string_view> header) {
    std::size_t k = 0;
    for (const auto h : header) {
      if (k++ > 0) text_ += ',';
      text_ += h;
    }
    text_ += '\n';
  }

  template <class... T>
  void row(const T&... v) {
    std::size_t k = 0;
    ((text_ += (k++ > 0 ? "," : ""), text_ += field(v)), ...);
    text_ += '\n';
  }

  const std::string& str() const noexcept { return text_; }

 private:
  static std::string field(const std::string& s) { return s; }
  static std::string field(const char* s) { return s; }
  static std::string field(bool b) { return b ? "true" : "false"; }
  template <class T>
  static std::string field(T v) {
    if constexpr (std::is_floating_point_v<T>) {
      return num(static_cast<double>(v));
    } else {
      return std::to_string(v);
    }
  }

  std::string text_;
};

// JSON has no inf/nan; they are written as null.
inline json jnum(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

// ------------------------------------------------------------- config access

namespace detail {

inline std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

inline const json& need(const json& j, const std::string& key, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path.empty() ? "config must be a JSON object" : path + " must be an object");
  const auto it = j.find(key);
  if (it == j.end()) throw ConfigError(join(path, key) + ": missing");
  return *it;
}

inline bool has(const json& j, const std::string& key) { return j.is_object() && j.contains(key); }

/// Number, or a string "x" / "a/b".
inline double scalar(const json& v, const std::string& field) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const std::string s = v.get<std::string>();
    auto parse = [&](std::string_view t) {
      double x = 0.0;
      const auto res = std::from_chars(t.data(), t.data() + t.size(), x);
      if (res.ec != std::errc() || res.ptr != t.data() + t.size()) {
        throw ConfigError(field + ": cannot parse '" + s + "' as a number");
      }
      return x;
    };
    const auto slash = s.find('/');
    if (slash == std::string::npos) return parse(s);
    const double den = parse(std::string_view(s).substr(slash + 1));
    if (den == 0.0) throw ConfigError(field + ": zero denominator");
    return parse(std::string_view(s).substr(0, slash)) / den;
  }
  throw ConfigError(field + ": expected a number");
}

inline double number(const json& j, const std::string& key, const std::string& path) {
  return scalar(need(j, key, path), join(path, key));
}

inline double number_or(const json& j, const std::string& key, const std::string& path, double fallback) {
  return has(j, key) ? number(j, key, path) : fallback;
}

inline long long integer(const json& v, const std::string& field) {
  if (!v.is_number_integer()) throw ConfigError(field + ": expected an integer");
  return v.get<long long>();
}

inline int int_or(const json& j, const std::string& key, const std::string& path, int fallback) {
  return has(j, key) ? static_cast<int>(integer(j.at(key), join(path, key))) : fallback;
}

inline std::string string_of(const json& v, const std::string& field) {
  if (!v.is_string()) throw ConfigError(field + ": expected a string");
  return v.get<std::string>();
}

/// A number or an array of numbers.
inline std::vector<double> number_list(const json& v, const std::string& field) {
  std::vector<double> out;
  if (v.is_array()) {
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(scalar(v[i], field + "[" + std::to_string(i) + "]"));
  } else {
    out.push_back(scalar(v, field));
  }
  if (out.empty()) throw ConfigError(field + ": empty list");
  return out;
}

inline std::vector<double> read_numbers(const std::filesystem::path& file, const std::string& field) {
  std::ifstream in(file);
  if (!in) throw ConfigError(field + ": cannot read " + file.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::replace(text.begin(), text.end(), ',', ' ');
  std::istringstream ss(text);
  std::vector<double> out;
  std::string tok;
  while (ss >> tok) out.push_back(scalar(json(tok), field + " (" + file.filename().string() + ")"));
  return out;
}

}  // namespace detail

/// Sequence of `length` values from a formula tag: "const:x", "harmonic"
/// (1/(i+1)), "harmonic:k" (1/(i+k)), "file:path", or an explicit array.
inline std::vector<double> sequence(const json& v, std::size_t length, const std::string& field,
                                    const std::filesystem::path& base_dir) {
  std::vector<double> out;
  if (v.is_array()) {
    out = detail::number_list(v, field);
  } else if (v.is_number()) {
    out.assign(length, v.get<double>());
  } else if (v.is_string()) {
    const std::string s = v.get<std::string>();
    if (s.rfind("const:", 0) == 0) {
      out.assign(length, detail::scalar(json(s.substr(6)), field));
    } else if (s == "harmonic" || s.rfind("harmonic:", 0) == 0) {
      const int shift = s == "harmonic" ? 1 : static_cast<int>(detail::scalar(json(s.substr(9)), field));
      if (shift < 1) throw ConfigError(field + ": harmonic shift must be >= 1");
      out = GapSequence::harmonic(length, shift).values;
    } else if (s.rfind("file:", 0) == 0) {
      out = detail::read_numbers(base_dir / s.substr(5), field);
    } else {
      throw ConfigError(field + ": unknown formula '" + s + "'");
    }
  } else {
    throw ConfigError(field + ": expected a formula string or an array");
  }
  if (out.size() < length) {
    throw ConfigError(field + ": " + std::to_string(out.size()) + " values, need " + std::to_string(length));
  }
  out.resize(length);
  return out;
}

inline int system_depth(const json& spec, const std::string& path = "system") {
  const int depth = detail::int_or(spec, "depth", path, -1);
  if (depth < 0) throw ConfigError(path + ".depth: missing or negative");
  return depth;
}

/// Gap sequence of the given length from a system spec:
/// {"kind": "middle", "c": formula} or {"kind": "uniform", "n": formula, "gamma": formula}.
inline GapSequence gap_sequence(const json& spec, std::size_t length, const std::filesystem::path& base_dir,
                                const std::string& path = "system") {
  const std::string kind = detail::has(spec, "kind") ? detail::string_of(spec.at("kind"), path + ".kind") : "middle";
  auto wrap = [&](const std::string& key, auto&& make) {
    try {
      return make();
    } catch (const ConfigError& e) {
      const std::string msg = e.what();
      if (msg.rfind(path, 0) == 0) throw;
      throw ConfigError(path + "." + key + ": " + msg);
    }
  };
  if (kind == "middle") {
    const auto c = sequence(detail::need(spec, "c", path), length, path + ".c", base_dir);
    return wrap("c", [&] { return GapSequence::middle(c); });
  }
  if (kind == "uniform") {
    const auto n = sequence(detail::need(spec, "n", path), length, path + ".n", base_dir);
    const auto gamma = sequence(detail::need(spec, "gamma", path), length, path + ".gamma", base_dir);
    std::vector<int> children;
    for (std::size_t i = 0; i < n.size(); ++i) {
      if (n[i] != std::floor(n[i])) throw ConfigError(path + ".n[" + std::to_string(i) + "]: not an integer");
      children.push_back(static_cast<int>(n[i]));
    }
    return wrap("gamma", [&] { return GapSequence::uniform(children, gamma); });
  }
  throw ConfigError(path + ".kind: expected 'middle' or 'uniform', got '" + kind + "'");
}

inline CantorSystem build_from_spec(const json& spec, const std::filesystem::path& base_dir, std::size_t length = 0,
                                    const std::string& path = "system") {
  const int depth = system_depth(spec, path);
  const GapSequence gaps = gap_sequence(spec, std::max<std::size_t>(length, static_cast<std::size_t>(depth)), base_dir, path);
  return build_system(gaps, depth);
}

/// Map spec: {"type": "identity" | "power" | "dyadic", ...}. "eta" is optional:
/// {"calibrate": {"K", "lo", "hi", "points"}}, {"C", "K"} or {"t": [...], "eta": [...]}.
struct NamedMap {
  std::string name;
  QsMap map;
};

inline EtaModulus eta_from_spec(const json& spec, const QsMap& raw, double default_K, double lo, double hi,
                                const std::string& path) {
  if (!spec.is_object()) throw ConfigError(path + ": expected an object");
  if (detail::has(spec, "calibrate")) {
    const json& c = spec.at("calibrate");
    const std::string cp = path + ".calibrate";
    const double K = detail::number_or(c, "K", cp, default_K);
    const double a = detail::number_or(c, "lo", cp, lo);
    const double b = detail::number_or(c, "hi", cp, hi);
    const int points = detail::int_or(c, "points", cp, 61);
    if (!(b > a)) throw ConfigError(cp + ": need lo < hi");
    if (points < 3) throw ConfigError(cp + ".points must be >= 3");
    if (!(K >= 1.0)) throw ConfigError(cp + ".K must be >= 1");
    return calibrate_eta(raw, K, a, b, static_cast<std::size_t>(points));
  }
  if (detail::has(spec, "t")) {
    return EtaModulus::tabulated(detail::number_list(spec.at("t"), path + ".t"),
                                 detail::number_list(detail::need(spec, "eta", path), path + ".eta"));
  }
  return EtaModulus::power(detail::number(spec, "C", path), detail::number(spec, "K", path));
}

inline NamedMap map_from_spec(const json& spec, std::uint64_t seed, double lo, double hi,
                              const std::string& path = "map") {
  const std::string type = detail::string_of(detail::need(spec, "type", path), path + ".type");
  const json calibrate = json{{"calibrate", json::object()}};
  NamedMap out;
  if (type == "identity") {
    out.map = QsMap::identity();
    out.name = "identity";
    if (detail::has(spec, "eta")) out.map = out.map.with_eta(eta_from_spec(spec.at("eta"), out.map, 1.0, lo, hi, path + ".eta"));
  } else if (type == "power") {
    const double a = detail::number(spec, "a", path);
    const QsMap raw = QsMap::power(a, EtaModulus::identity());
    const json& es = detail::has(spec, "eta") ? spec.at("eta") : calibrate;
    out.map = raw.with_eta(eta_from_spec(es, raw, std::max(a, 1.0 / a), lo, hi, path + ".eta"));
    out.name = "power" + num(a);
  } else if (type == "dyadic") {
    const double rho = detail::number(spec, "rho", path);
    const int depth = detail::int_or(spec, "depth", path, 18);
    const auto s = detail::has(spec, "seed") ? static_cast<std::uint64_t>(detail::integer(spec.at("seed"), path + ".seed"))
                                             : seed;
    const QsMap raw = QsMap::random_dyadic(depth, rho, s, EtaModulus::identity());
    const json& es = detail::has(spec, "eta") ? spec.at("eta") : calibrate;
    out.map = raw.with_eta(eta_from_spec(es, raw, 2.0, std::max(lo, 0.0), std::min(hi, 1.0), path + ".eta"));
    out.name = "dyadic" + num(rho);
  } else {
    throw ConfigError(path + ".type: expected identity, power or dyadic, got '" + type + "'");
  }
  if (detail::has(spec, "name")) out.name = detail::string_of(spec.at("name"), path + ".name");
  return out;
}

inline json eta_json(const EtaModulus& eta) {
  switch (eta.form()) {
    case EtaModulus::Form::identity:
      return {{"form", "identity"}};
    case EtaModulus::Form::power:
      return {{"form", "power"}, {"C", eta.constant()}, {"K", eta.exponent()}};
    case EtaModulus::Form::tabulated:
      return {{"form", "tabulated"}};
  }
  return {};
}

inline Output begin(const std::string& command, const Context& ctx) {
  Output out;
  out.summary["command"] = command;
  out.summary["version"] = kVersion;
  out.summary["seed"] = ctx.seed;
  return out;
}

inline void finish(Output& out) { out.files.emplace_back("summary.json", out.summary.dump(2) + "\n"); }

inline SolverOptions solver_options(const json& cfg) {
  SolverOptions opt;
  if (detail::has(cfg, "solver")) {
    const json& s = cfg.at("solver");
    opt.tolerance = detail::number_or(s, "tolerance", "solver", opt.tolerance);
    opt.max_iterations = detail::int_or(s, "max_iterations", "solver", opt.max_iterations);
    if (!(opt.tolerance > 0.0)) throw ConfigError("solver.tolerance must be > 0");
    if (opt.max_iterations < 1) throw ConfigError("solver.max_iterations must be >= 1");
  }
  return opt;
}

inline CertificateOptions certificate_options(const json& cfg) {
  CertificateOptions opt;
  if (detail::has(cfg, "certificate")) {
    const json& c = cfg.at("certificate");
    opt.max_variation = detail::number_or(c, "max_variation", "certificate", opt.max_variation);
    opt.deceleration = detail::number_or(c, "deceleration", "certificate", opt.deceleration);
    opt.max_centers = static_cast<std::size_t>(
        detail::int_or(c, "max_centers", "certificate", static_cast<int>(opt.max_centers)));
  }
  return opt;
}

inline json certificate_json(const Certificate& c) {
  json p = {{"D", jnum(c.partition.D)},
            {"C4", jnum(c.partition.C4)},
            {"a_star", c.partition.a_star ? jnum(*c.partition.a_star) : json(nullptr)},
            {"C1", jnum(c.partition.C1)},
            {"C2", jnum(c.partition.C2)},
            {"exponent", jnum(c.partition.exponent)},
            {"small_set_size", c.partition.small_set.size()}};
  return {{"d", c.d},
          {"depth", c.depth},
          {"window_start", c.window_start},
          {"pass", c.pass},
          {"C_growth", jnum(c.C_growth)},
          {"variation", jnum(c.variation)},
          {"decelerating", c.decelerating},
          {"worst_ball_ratio", jnum(c.worst_ball_ratio)},
          {"max_bound_excess", jnum(c.max_bound_excess)},
          {"cover_failures", c.growth2.cover_failures},
          {"dilation_failures", c.growth2.dilation_failures},
          {"gap_partition", p}};
}

// ----------------------------------------------------------------- commands

/// Interval dumps of a system at the requested depths.
/// {"system": {...}, "levels": [n, ...]}; levels defaults to [system.depth].
inline Output cmd_generate(const Context& ctx) {
  const json& cfg = ctx.config;
  const json& spec = detail::need(cfg, "system", "");
  const CantorSystem sys = build_from_spec(spec, ctx.base_dir);
  std::vector<double> levels{static_cast<double>(sys.max_depth)};
  if (detail::has(cfg, "levels")) levels = detail::number_list(cfg.at("levels"), "levels");
  Output out = begin("generate", ctx);
  out.summary["ratio_bound"] = sys.ratio_bound;
  json rows = json::array();
  for (std::size_t k = 0; k < levels.size(); ++k) {
    const double v = levels[k];
    if (v != std::floor(v) || v < 0 || v > sys.max_depth) {
      throw ConfigError("levels[" + std::to_string(k) + "]: must be an integer in 0.." + std::to_string(sys.max_depth));
    }
    const int n = static_cast<int>(v);
    const IntervalLevel& level = sys.level(n);
    Csv csv({"index", "left", "right", "length"});
    double total = 0.0;
    for (std::size_t j = 0; j < level.size(); ++j) {
      const Interval& iv = level.intervals[j];
      csv.row(j, iv.left, iv.right, iv.length());
      total += iv.length();
    }
    out.files.emplace_back("level_" + std::to_string(n) + ".csv", csv.str());
    rows.push_back({{"depth", n},
                    {"count", level.size()},
                    {"total_length", total},
                    {"truncated_length", truncated_length(sys, n)}});
  }
  out.summary["levels"] = rows;
  finish(out);
  return out;
}

inline std::vector<double> scale_list(const json& v, const std::string& field) {
  if (v.is_object()) {
    const double base = detail::number(v, "base", field);
    const int from = detail::int_or(v, "from", field, 1);
    const int to = static_cast<int>(detail::integer(detail::need(v, "to", field), field + ".to"));
    if (!(base > 1.0) || from > to) throw ConfigError(field + ": need base > 1 and from <= to");
    std::vector<double> out;
    for (int k = from; k <= to; ++k) out.push_back(std::pow(base, -k));
    return out;
  }
  return detail::number_list(v, field);
}

/// Box counts, closed-form Minkowski quotient, minimality evidence, and
/// optional mass-distribution and Frostman runs on the natural measure.
/// {"system", "scales": {"base", "from", "to"} | [..], "minimality_window",
///  "mass_d": [..], "frostman_d": [..]}
inline Output cmd_dimension(const Context& ctx) {
  const json& cfg = ctx.config;
  const CantorSystem sys = build_from_spec(detail::need(cfg, "system", ""), ctx.base_dir);
  const int depth = sys.max_depth;
  if (depth < 1) throw ConfigError("system.depth must be >= 1");
  const auto scales = scale_list(detail::need(cfg, "scales", ""), "scales");
  const IntervalLevel& level = sys.level(depth);
  Output out = begin("dimension", ctx);

  const BoxCountResult box = box_count(level.intervals, scales);
  Csv bc({"scale", "count"});
  for (std::size_t i = 0; i < box.scales.size(); ++i) bc.row(box.scales[i], box.counts[i]);
  out.files.emplace_back("box_counts.csv", bc.str());
  out.summary["box_count"] = {{"fitted_slope", box.fitted_slope}, {"residual", box.residual}};
  out.summary["truncated_length"] = truncated_length(sys, depth);
  if (sys.gaps.kind == GapKind::middle_interval) {
    out.summary["closed_form_minkowski"] = closed_form_minkowski(sys.gaps, static_cast<std::size_t>(depth));
  }
  const int window = detail::int_or(cfg, "minimality_window", "", std::min(depth, 10));
  const MinimalityReport mr =
      minimality_criterion(sys.gaps, std::max(1.0, sys.ratio_bound), static_cast<std::size_t>(window));
  out.summary["minimality"] = {{"product_limit_estimate", mr.product_limit_estimate},
                               {"trend", mr.trend},
                               {"trend_nondecreasing", mr.trend_nondecreasing},
                               {"max_ratio", mr.max_ratio},
                               {"satisfied_at_finite_scale", mr.satisfied_at_finite_scale}};

  const DiscreteMeasure mu = DiscreteMeasure::natural(level);
  if (detail::has(cfg, "mass_d")) {
    Csv csv({"d", "scale", "constant"});
    json rows = json::array();
    for (const double d : detail::number_list(cfg.at("mass_d"), "mass_d")) {
      const auto rep = mass_distribution_lower_bound(mu, d, scales);
      for (std::size_t i = 0; i < rep.scales.size(); ++i) csv.row(d, rep.scales[i], rep.constants[i]);
      rows.push_back({{"d", d}, {"C_observed", rep.C_observed}, {"growth_slope", rep.growth_slope}, {"pass", rep.pass}});
    }
    out.files.emplace_back("mass_distribution.csv", csv.str());
    out.summary["mass_distribution"] = rows;
  }
  if (detail::has(cfg, "frostman_d")) {
    Csv csv({"d", "total_mass", "max_node_ratio", "dyadic_depth"});
    for (const double d : detail::number_list(cfg.at("frostman_d"), "frostman_d")) {
      const auto fr = frostman_measure(level, d);
      csv.row(d, fr.measure.total(), fr.max_node_ratio, fr.dyadic_depth);
    }
    out.files.emplace_back("frostman.csv", csv.str());
  }
  finish(out);
  return out;
}

/// Random (A, B) distortion pair in [lo, hi]: B has 3..8 points, A two of them,
/// and B split at a random cut for the gap version.
struct DistortionPair {
  std::vector<double> A;
  std::vector<double> B;
  std::size_t cut = 1;
};

inline DistortionPair random_distortion_pair(Rng& rng, double lo, double hi) {
  DistortionPair p;
  while (p.B.size() < 2) {
    const int nb = 3 + static_cast<int>(rng.index(6));
    p.B.clear();
    for (int i = 0; i < nb; ++i) p.B.push_back(rng.uniform(lo, hi));
    std::sort(p.B.begin(), p.B.end());
    p.B.erase(std::unique(p.B.begin(), p.B.end()), p.B.end());
  }
  const std::size_t i = rng.index(p.B.size());
  std::size_t j = rng.index(p.B.size());
  if (j == i) j = (i + 1) % p.B.size();
  p.A = {p.B[i], p.B[j]};
  p.cut = 1 + rng.index(p.B.size() - 1);
  return p;
}

/// Three-point ratio scan and the two diameter-distortion bounds over random
/// point sets. Any violation gives exit status 3.
/// {"map", "domain": [lo, hi], "triples", "pairs"}
inline Output cmd_distort(const Context& ctx) {
  const json& cfg = ctx.config;
  std::vector<double> domain{-1.0, 1.0};
  if (detail::has(cfg, "domain")) domain = detail::number_list(cfg.at("domain"), "domain");
  if (domain.size() != 2 || !(domain[1] > domain[0])) throw ConfigError("domain: expected [lo, hi] with lo < hi");
  const NamedMap nm = map_from_spec(detail::need(cfg, "map", ""), ctx.seed, domain[0], domain[1]);
  const int n_triples = detail::int_or(cfg, "triples", "", 100000);
  const int n_pairs = detail::int_or(cfg, "pairs", "", 10000);
  if (n_triples < 1 || n_pairs < 0) throw ConfigError("triples must be >= 1 and pairs >= 0");
  const EtaModulus& eta = nm.map.eta();
  Output out = begin("distort", ctx);
  out.summary["map"] = nm.name;
  out.summary["eta"] = eta_json(eta);

  Rng rng(ctx.seed);
  const auto triples = random_triples(domain[0], domain[1], static_cast<std::size_t>(n_triples), rng);
  const QsRatioReport qs = qs_ratio_check(nm.map, eta, triples);
  Csv prof({"t", "empirical_eta", "eta", "count"});
  for (std::size_t k = 0; k < EtaBins::count; ++k) {
    if (qs.bin_counts[k] == 0) continue;
    const double t = EtaBins::center(k);
    prof.row(t, qs.empirical_eta[k], eta(t), qs.bin_counts[k]);
  }
  out.files.emplace_back("eta_profile.csv", prof.str());

  Csv dist({"trial", "kind", "lower", "ratio", "upper", "ok"});
  std::size_t diam_fail = 0;
  std::size_t gap_fail = 0;
  for (int trial = 0; trial < n_pairs; ++trial) {
    const DistortionPair p = random_distortion_pair(rng, domain[0], domain[1]);
    const auto r1 = distortion_check(nm.map, eta, p.A, p.B);
    const std::vector<double> X1(p.B.begin(), p.B.begin() + static_cast<long>(p.cut));
    const std::vector<double> X2(p.B.begin() + static_cast<long>(p.cut), p.B.end());
    const auto r2 = distortion_gap_check(nm.map, eta, X1, X2);
    dist.row(trial, "diameter", r1.lower, r1.ratio, r1.upper, r1.ok);
    dist.row(trial, "gap", r2.lower, r2.ratio, r2.upper, r2.ok);
    diam_fail += r1.ok ? 0 : 1;
    gap_fail += r2.ok ? 0 : 1;
  }
  out.files.emplace_back("distortion.csv", dist.str());
  out.summary["triples"] = qs.triples;
  out.summary["max_violation_ratio"] = qs.max_violation_ratio;
  out.summary["worst_triple"] = qs.worst;
  out.summary["pairs"] = n_pairs;
  out.summary["diameter_violations"] = diam_fail;
  out.summary["gap_violations"] = gap_fail;
  const bool ok = qs.max_violation_ratio <= 1.0 && diam_fail == 0 && gap_fail == 0;
  out.summary["pass"] = ok;
  if (!ok) out.status = kHypothesisFailure;
  finish(out);
  return out;
}

inline void certificate_rows(Csv& csv, const std::string& family, const std::string& map, const Certificate& c) {
  for (const auto& lv : c.levels) {
    csv.row(family, map, c.d, lv.depth, lv.node_constant, lv.interval_constant, lv.ball_constant, lv.C, lv.max_p);
  }
}

/// qs_mass certificates of one map over a d-sweep, with per-level p_i maxima
/// and their running products.
/// {"system", "map", "d": x | [..], "depth", "certificate": {...}}
inline Output cmd_mass(const Context& ctx) {
  const json& cfg = ctx.config;
  const CantorSystem sys = build_from_spec(detail::need(cfg, "system", ""), ctx.base_dir);
  const NamedMap nm = map_from_spec(detail::need(cfg, "map", ""), ctx.seed, 0.0, 1.0);
  const auto ds = detail::number_list(detail::need(cfg, "d", ""), "d");
  const int depth = detail::int_or(cfg, "depth", "", sys.max_depth);
  if (depth > sys.max_depth) throw ConfigError("depth exceeds system.depth");
  const CertificateOptions opt = certificate_options(cfg);
  Output out = begin("mass", ctx);
  out.summary["map"] = nm.name;
  out.summary["eta"] = eta_json(nm.map.eta());
  Csv cert_csv({"family", "map", "d", "depth", "node_constant", "interval_constant", "ball_constant", "C", "max_p"});
  Csv pi_csv({"d", "level", "max_p", "running_product"});
  json rows = json::array();
  const ImageTree tree = build_image_tree(sys, nm.map, depth);
  for (const double d : ds) {
    const RecursiveMeasure m = build_recursive_measure(tree, d);
    const auto max_p = level_max_p(m);
    double run = 1.0;
    for (std::size_t n = 0; n < max_p.size(); ++n) {
      run *= max_p[n];
      pi_csv.row(d, n + 1, max_p[n], run);
    }
    const Certificate c = certificate(sys, nm.map, d, depth, opt);
    certificate_rows(cert_csv, "system", nm.name, c);
    rows.push_back(certificate_json(c));
  }
  out.files.emplace_back("certificate.csv", cert_csv.str());
  out.files.emplace_back("pi_levels.csv", pi_csv.str());
  out.summary["certificates"] = rows;
  finish(out);
  return out;
}

namespace detail {

inline SparseVector sparse_member(const json& v, std::size_t cells, const std::string& field) {
  if (v.is_object()) {
    SparseVector s;
    const json& idx = need(v, "index", field);
    const json& val = need(v, "value", field);
    if (!idx.is_array() || !val.is_array() || idx.size() != val.size()) {
      throw ConfigError(field + ": index and value must be arrays of equal length");
    }
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const long long i = integer(idx[k], field + ".index[" + std::to_string(k) + "]");
      if (i < 0) throw ConfigError(field + ".index[" + std::to_string(k) + "]: negative");
      s.index.push_back(static_cast<std::size_t>(i));
      s.value.push_back(scalar(val[k], field + ".value[" + std::to_string(k) + "]"));
    }
    return s;
  }
  const auto dense = number_list(v, field);
  if (dense.size() != cells) throw ConfigError(field + ": row length differs from cell count");
  return SparseVector::from_dense(dense);
}

inline json load_problem(const json& v, const std::filesystem::path& base_dir, std::filesystem::path& dir) {
  dir = base_dir;
  if (!v.is_string()) return v;
  const std::string s = v.get<std::string>();
  if (s.rfind("file:", 0) != 0) throw ConfigError("problem: expected an object or 'file:path'");
  const auto path = base_dir / s.substr(5);
  std::ifstream in(path);
  if (!in) throw ConfigError("problem: cannot read " + path.string());
  dir = path.parent_path();
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("problem: " + path.string() + ": " + e.what());
  }
}

inline std::vector<WeightedPoint> weighted_points(const json& v, const std::string& field) {
  if (!v.is_array() || v.empty()) throw ConfigError(field + ": expected a non-empty array");
  std::vector<WeightedPoint> out;
  for (std::size_t k = 0; k < v.size(); ++k) {
    const std::string f = field + "[" + std::to_string(k) + "]";
    if (v[k].is_array()) {
      if (v[k].size() != 2) throw ConfigError(f + ": expected [y, weight]");
      out.push_back({scalar(v[k][0], f), scalar(v[k][1], f)});
    } else {
      out.push_back({number(v[k], "y", f), number(v[k], "weight", f)});
    }
  }
  return out;
}

}  // namespace detail

inline void solution_rows(Csv& csv, const std::string& var, const std::vector<double>& values) {
  for (std::size_t i = 0; i < values.size(); ++i) csv.row(var + "[" + std::to_string(i) + "]", values[i]);
}

inline json solve_json(const SolveResult& r) {
  return {{"value", r.value},
          {"kkt_residual", r.kkt_residual},
          {"duality_gap", r.duality_gap},
          {"iterations", r.iterations},
          {"converged", r.converged}};
}

/// Fuglede, discrete or product-system modulus. Non-convergence gives status 4.
/// {"problem": {...} | "file:path", "solver": {"tolerance", "max_iterations"}}
inline Output cmd_modulus(const Context& ctx) {
  const json& cfg = ctx.config;
  std::filesystem::path dir;
  const json prob = detail::load_problem(detail::need(cfg, "problem", ""), ctx.base_dir, dir);
  const std::string type = detail::string_of(detail::need(prob, "type", "problem"), "problem.type");
  const SolverOptions opt = solver_options(cfg);
  Output out = begin("modulus", ctx);
  out.summary["type"] = type;
  Csv csv({"variable", "value"});
  SolveResult res;
  if (type == "fuglede") {
    MeasureSystem sys;
    sys.p = detail::number(prob, "p", "problem");
    sys.mu = detail::number_list(detail::need(prob, "mu", "problem"), "problem.mu");
    const json& members = detail::need(prob, "members", "problem");
    if (!members.is_array()) throw ConfigError("problem.members: expected an array");
    for (std::size_t e = 0; e < members.size(); ++e) {
      sys.members.push_back(detail::sparse_member(members[e], sys.mu.size(), "problem.members[" + std::to_string(e) + "]"));
    }
    res = solve_fuglede(sys, opt);
    solution_rows(csv, "rho", res.optimizer);
  } else if (type == "discrete") {
    DiscreteModulusProblem dp;
    dp.p = detail::number(prob, "p", "problem");
    dp.delta = detail::number_or(prob, "delta", "problem", dp.delta);
    const json& balls = detail::need(prob, "balls", "problem");
    if (!balls.is_array()) throw ConfigError("problem.balls: expected an array");
    for (std::size_t i = 0; i < balls.size(); ++i) {
      const std::string f = "problem.balls[" + std::to_string(i) + "]";
      dp.balls.push_back({detail::number_list(detail::need(balls[i], "center", f), f + ".center"), detail::number(balls[i], "radius", f)});
    }
    const json& inc = detail::need(prob, "incidence", "problem");
    if (!inc.is_array()) throw ConfigError("problem.incidence: expected an array");
    for (std::size_t s = 0; s < inc.size(); ++s) {
      std::vector<std::size_t> row;
      const std::string f = "problem.incidence[" + std::to_string(s) + "]";
      if (!inc[s].is_array()) throw ConfigError(f + ": expected an array");
      for (std::size_t k = 0; k < inc[s].size(); ++k) {
        const long long b = detail::integer(inc[s][k], f);
        if (b < 0) throw ConfigError(f + ": negative ball index");
        row.push_back(static_cast<std::size_t>(b));
      }
      dp.incidence.push_back(std::move(row));
    }
    if (prob.value("vitali", false)) {
      const auto keep = vitali_select(dp.balls);
      std::vector<long long> remap(dp.balls.size(), -1);
      std::vector<Ball> kept;
      for (std::size_t k = 0; k < keep.size(); ++k) {
        remap[keep[k]] = static_cast<long long>(k);
        kept.push_back(dp.balls[keep[k]]);
      }
      for (auto& row : dp.incidence) {
        std::vector<std::size_t> next;
        for (std::size_t b : row) {
          if (b < remap.size() && remap[b] >= 0) next.push_back(static_cast<std::size_t>(remap[b]));
        }
        row = std::move(next);
      }
      dp.balls = std::move(kept);
      out.summary["vitali_kept"] = keep;
    }
    res = solve_discrete(dp, opt);
    solution_rows(csv, "v", res.optimizer);
  } else if (type == "product") {
    const CantorSystem sys = build_from_spec(detail::need(prob, "system", "problem"), dir, 0, "problem.system");
    const int level = detail::int_or(prob, "level", "problem", sys.max_depth);
    const double d = detail::number(prob, "d", "problem");
    const double h = detail::number(prob, "h", "problem");
    const auto Y = detail::weighted_points(detail::need(prob, "Y", "problem"), "problem.Y");
    const MeasureSystem ps = product_system(sys.level(level), DiscreteMeasure::natural(sys.level(level)), Y, h, 1.0 + d);
    const HolderReport hr = holder_check(ps, d, detail::number_or(prob, "tolerance", "problem", 1e-3), opt);
    res = hr.solve;
    out.summary["holder_bound"] = hr.bound;
    out.summary["holder_ok"] = hr.ok;
    out.summary["cells"] = ps.cells();
    solution_rows(csv, "rho", res.optimizer);
  } else {
    throw ConfigError("problem.type: expected fuglede, discrete or product, got '" + type + "'");
  }
  solution_rows(csv, "multiplier", res.multipliers);
  out.files.emplace_back("solution.csv", csv.str());
  out.summary.update(solve_json(res));
  if (!res.converged) out.status = kNoConvergence;
  finish(out);
  return out;
}

/// Length and dimension trends of a gap sequence with c_i -> 0 and divergent
/// sum, then qs_mass certificates for a battery of maps over a d-sweep and an
/// optional control system.
/// {"system", "maps": [..], "d": [..], "minkowski_n": [..], "minimality_window",
///  "control": {"system", "map", "d"}, "certificate": {...}}
inline Output cmd_theorem_a(const Context& ctx) {
  const json& cfg = ctx.config;
  const json& spec = detail::need(cfg, "system", "");
  const json& maps = detail::need(cfg, "maps", "");
  if (!maps.is_array() || maps.empty()) throw ConfigError("maps: expected a non-empty array of map specs");
  const auto ds = detail::number_list(detail::need(cfg, "d", ""), "d");
  std::vector<double> mink_n{10, 100, 1000, 10000};
  if (detail::has(cfg, "minkowski_n")) mink_n = detail::number_list(cfg.at("minkowski_n"), "minkowski_n");
  std::size_t length = static_cast<std::size_t>(system_depth(spec));
  for (std::size_t k = 0; k < mink_n.size(); ++k) {
    if (!(mink_n[k] >= 1) || mink_n[k] != std::floor(mink_n[k]) || mink_n[k] > 1e7) {
      throw ConfigError("minkowski_n[" + std::to_string(k) + "]: must be an integer in 1..1e7");
    }
    length = std::max(length, static_cast<std::size_t>(mink_n[k]));
  }
  const CantorSystem sys = build_from_spec(spec, ctx.base_dir, length);
  const int depth = sys.max_depth;
  if (depth < 4) throw ConfigError("system.depth must be >= 4");
  const CertificateOptions opt = certificate_options(cfg);
  Output out = begin("theorem-a", ctx);

  Csv tl({"n", "truncated_length"});
  for (int n = 0; n <= depth; ++n) tl.row(n, truncated_length(sys, n));
  out.files.emplace_back("truncated_length.csv", tl.str());

  const bool middle = sys.gaps.kind == GapKind::middle_interval;
  json mink = json::array();
  if (middle) {
    std::vector<std::size_t> ns;
    for (int n = 1; n <= depth; ++n) ns.push_back(static_cast<std::size_t>(n));
    for (const double v : mink_n) ns.push_back(static_cast<std::size_t>(v));
    std::sort(ns.begin(), ns.end());
    ns.erase(std::unique(ns.begin(), ns.end()), ns.end());
    Csv mk({"n", "closed_form_minkowski"});
    for (const std::size_t n : ns) {
      const double v = closed_form_minkowski(sys.gaps, n);
      mk.row(n, v);
      mink.push_back({{"n", n}, {"value", v}});
    }
    out.files.emplace_back("minkowski.csv", mk.str());
  }
  const int window = detail::int_or(cfg, "minimality_window", "", std::min<int>(static_cast<int>(length), 10));
  const MinimalityReport mr =
      minimality_criterion(sys.gaps, std::max(1.0, sys.ratio_bound), static_cast<std::size_t>(window));
  Csv mc({"n", "product_limit_estimate"});
  for (std::size_t k = 0; k < mr.trend.size(); ++k) mc.row(mr.n - mr.trend.size() + 1 + k, mr.trend[k]);
  out.files.emplace_back("minimality.csv", mc.str());

  out.summary["depth"] = depth;
  out.summary["truncated_length"] = truncated_length(sys, depth);
  out.summary["closed_form_minkowski"] = mink;
  out.summary["minimality"] = {{"n", mr.n},
                               {"product_limit_estimate", mr.product_limit_estimate},
                               {"trend_nondecreasing", mr.trend_nondecreasing},
                               {"max_ratio", mr.max_ratio},
                               {"satisfied_at_finite_scale", mr.satisfied_at_finite_scale}};

  Csv cert_csv({"family", "map", "d", "depth", "node_constant", "interval_constant", "ball_constant", "C", "max_p"});
  Csv sum_csv({"family", "map", "d", "pass", "C_growth", "variation", "decelerating", "worst_ball_ratio", "cover_failures"});
  auto run = [&](const std::string& family, const CantorSystem& s, const NamedMap& nm, double d) {
    const Certificate c = certificate(s, nm.map, d, s.max_depth, opt);
    certificate_rows(cert_csv, family, nm.name, c);
    sum_csv.row(family, nm.name, d, c.pass, c.C_growth, c.variation, c.decelerating, c.worst_ball_ratio,
                c.growth2.cover_failures);
    json j = certificate_json(c);
    j["map"] = nm.name;
    j["eta"] = eta_json(nm.map.eta());
    return j;
  };

  std::vector<NamedMap> battery;
  for (std::size_t k = 0; k < maps.size(); ++k) {
    battery.push_back(map_from_spec(maps[k], ctx.seed, 0.0, 1.0, "maps[" + std::to_string(k) + "]"));
  }
  json certs = json::array();
  bool all_pass = true;
  for (const NamedMap& nm : battery) {
    for (const double d : ds) {
      json j = run("system", sys, nm, d);
      all_pass = all_pass && j["pass"].get<bool>();
      certs.push_back(std::move(j));
    }
  }
  out.summary["certificates"] = certs;
  out.summary["all_pass"] = all_pass;

  if (detail::has(cfg, "control")) {
    const json& ctl = cfg.at("control");
    json cspec = detail::has(ctl, "system") ? ctl.at("system") : json{{"kind", "middle"}, {"c", "const:1/3"}};
    if (!detail::has(cspec, "depth")) cspec["depth"] = depth;
    const CantorSystem csys = build_from_spec(cspec, ctx.base_dir, 0, "control.system");
    const NamedMap cmap = detail::has(ctl, "map") ? map_from_spec(ctl.at("map"), ctx.seed, 0.0, 1.0, "control.map")
                                                  : NamedMap{"identity", QsMap::identity()};
    const auto cds = detail::has(ctl, "d") ? detail::number_list(ctl.at("d"), "control.d") : ds;
    json rows = json::array();
    bool all_fail = true;
    for (const double d : cds) {
      json j = run("control", csys, cmap, d);
      all_fail = all_fail && !j["pass"].get<bool>();
      rows.push_back(std::move(j));
    }
    out.summary["control"] = rows;
    out.summary["control_all_fail"] = all_fail;
  }
  out.files.emplace_back("certificates.csv", cert_csv.str());
  out.files.emplace_back("certificate_summary.csv", sum_csv.str());
  finish(out);
  return out;
}

/// Two-sided growth scan of the natural measure at growth.level (plus an
/// optional atom), then product systems E_level x Y with the Hölder lower bound
/// against the solver value per d, at grid h and h / refine. A failed growth
/// scan gives status 3 and skips the products.
/// {"system", "level", "atom": {"x", "mass"}, "growth": {"level", "eps": [..], "from", "to"},
///  "Y": [[y, w], ..], "d": [..], "h", "refine", "tolerance", "solver"}
inline Output cmd_theorem_b(const Context& ctx) {
  const json& cfg = ctx.config;
  const CantorSystem sys = build_from_spec(detail::need(cfg, "system", ""), ctx.base_dir);
  const int level_n = detail::int_or(cfg, "level", "", sys.max_depth);
  if (level_n < 0 || level_n > sys.max_depth) throw ConfigError("level: outside 0..system.depth");
  const IntervalLevel& level = sys.level(level_n);
  const json gcfg = detail::has(cfg, "growth") ? cfg.at("growth") : json::object();
  const int glevel = detail::int_or(gcfg, "level", "growth", sys.max_depth);
  if (glevel < 0 || glevel > sys.max_depth) throw ConfigError("growth.level: outside 0..system.depth");
  Output out = begin("theorem-b", ctx);

  std::vector<Interval> cells = sys.level(glevel).intervals;
  std::vector<double> masses(cells.size(), 1.0 / static_cast<double>(cells.size()));
  if (detail::has(cfg, "atom")) {
    const json& a = cfg.at("atom");
    const double x = detail::number(a, "x", "atom");
    const double m = detail::number(a, "mass", "atom");
    if (!(m > 0.0 && m < 1.0)) throw ConfigError("atom.mass must lie in (0,1)");
    if (x >= cells.front().left && x <= cells.back().right) {
      throw ConfigError("atom.x must lie outside the hull of the level");
    }
    for (double& v : masses) v *= 1.0 - m;
    const auto pos = x < cells.front().left ? 0 : cells.size();
    cells.insert(cells.begin() + static_cast<long>(pos), Interval{x, x});
    masses.insert(masses.begin() + static_cast<long>(pos), m);
  }
  const DiscreteMeasure mu(cells, masses);

  const auto eps_list = detail::has(gcfg, "eps") ? detail::number_list(gcfg.at("eps"), "growth.eps") : std::vector<double>{0.1};
  const int from = detail::int_or(gcfg, "from", "growth", 3);
  const int to = detail::int_or(gcfg, "to", "growth", std::max(from, glevel - 2));
  if (from < 0 || to > glevel || to - from + 1 < 4) {
    throw ConfigError("growth: need >= 4 level radii within 0..growth.level");
  }
  std::vector<double> radii;
  for (int n = from; n <= to; ++n) radii.push_back(sys.level(n).length());
  Csv gcsv({"eps", "radius", "lower", "upper"});
  json grows = json::array();
  bool growth_ok = true;
  for (const double eps : eps_list) {
    const GrowthReport g = two_sided_growth(mu, eps, radii);
    for (std::size_t i = 0; i < g.scales.size(); ++i) gcsv.row(eps, g.scales[i], g.lower[i], g.upper[i]);
    json j = {{"eps", eps}, {"lower_ok", g.lower_ok}, {"upper_ok", g.upper_ok}};
    if (!g.lower_ok || !g.upper_ok) {
      growth_ok = false;
      j["failed_side"] = g.upper_ok ? "lower" : "upper";
      j["window"] = {{"center", g.bad_center}, {"radius", g.bad_radius}};
    }
    grows.push_back(std::move(j));
  }
  out.files.emplace_back("growth.csv", gcsv.str());
  out.summary["growth"] = grows;
  out.summary["growth_ok"] = growth_ok;
  if (!growth_ok) {
    out.status = kHypothesisFailure;
    finish(out);
    return out;
  }

  const auto Y = detail::weighted_points(detail::need(cfg, "Y", ""), "Y");
  const auto ds = detail::number_list(detail::need(cfg, "d", ""), "d");
  const double h = detail::number(cfg, "h", "");
  const int refine = detail::int_or(cfg, "refine", "", 3);
  const double tol = detail::number_or(cfg, "tolerance", "", 1e-3);
  const SolverOptions opt = solver_options(cfg);
  const DiscreteMeasure lambda = DiscreteMeasure::natural(level);
  std::vector<double> grids{h};
  if (refine > 1) grids.push_back(h / refine);
  Csv hcsv({"d", "h", "cells", "bound", "value", "kkt_residual", "iterations", "converged"});
  json rows = json::array();
  bool converged = true;
  bool all_ok = true;
  for (const double d : ds) {
    std::vector<double> values;
    json j = {{"d", d}};
    bool ok = true;
    for (const double g : grids) {
      const MeasureSystem ps = product_system(level, lambda, Y, g, 1.0 + d);
      const HolderReport hr = holder_check(ps, d, tol, opt);
      hcsv.row(d, g, ps.cells(), hr.bound, hr.value, hr.solve.kkt_residual, hr.solve.iterations, hr.solve.converged);
      converged = converged && (ps.members.empty() || hr.solve.converged);
      ok = ok && hr.ok;
      values.push_back(hr.value);
      j["bound"] = hr.bound;
    }
    j["value"] = values.front();
    if (values.size() > 1) {
      j["value_refined"] = values.back();
      j["refinement_ratio"] = jnum(values.back() / values.front());
    }
    j["ok"] = ok;
    all_ok = all_ok && ok;
    rows.push_back(std::move(j));
  }
  out.files.emplace_back("holder.csv", hcsv.str());
  out.summary["holder"] = rows;
  out.summary["holder_ok"] = all_ok;
  if (!converged) out.status = kNoConvergence;
  finish(out);
  return out;
}

using Command = std::function<Output(const Context&)>;

inline const std::map<std::string, Command>& commands() {
  static const std::map<std::string, Command> table{
      {"generate", cmd_generate}, {"dimension", cmd_dimension}, {"distort", cmd_distort},
      {"mass", cmd_mass},         {"modulus", cmd_modulus},     {"theorem-a", cmd_theorem_a},
      {"theorem-b", cmd_theorem_b}};
  return table;
}

/// Runs a command and maps library exceptions to exit statuses. On an
/// exception the output carries no files and summary["error"] holds the message.
inline Output run_command(const std::string& name, const Context& ctx) {
  const auto it = commands().find(name);
  Output out;
  auto fail = [&](int status, const std::string& msg) {
    out = Output{};
    out.status = status;
    out.summary = {{"command", name}, {"version", kVersion}, {"error", msg}};
  };
  if (it == commands().end()) {
    fail(kConfigError, "unknown command '" + name + "'");
    return out;
  }
  try {
    out = it->second(ctx);
  } catch (const ConfigError& e) {
    fail(kConfigError, e.what());
  } catch (const InfeasibleError& e) {
    fail(kConfigError, e.what());
  } catch (const json::exception& e) {
    fail(kConfigError, std::string("config: ") + e.what());
  } catch (const HypothesisError& e) {
    fail(kHypothesisFailure, std::string(e.what()) + " (window centre " + num(e.center()) + ", radius " +
                                 num(e.radius()) + ")");
  } catch (const ConvergenceError& e) {
    fail(kNoConvergence, e.what());
  }
  return out;
}

}  // namespace confdim::cli
