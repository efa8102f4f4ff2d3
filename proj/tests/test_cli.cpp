#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "confdim/experiments.hpp"

namespace fs = std::filesystem;
using confdim::cli::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("confdim_cli_" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Run {
  int status = -1;
  std::string err;
};

Run run_cli(const std::string& command, const json& config, const fs::path& dir, const std::string& extra = "") {
  const fs::path cfg = dir / "config.json";
  std::ofstream(cfg) << config.dump(2);
  const fs::path err = dir / "stderr.txt";
  const std::string cmd = std::string("\"") + CONFDIM_CLI + "\" " + command + " --config \"" + cfg.string() +
                          "\" --out \"" + (dir / "out").string() + "\" " + extra + " 2> \"" + err.string() + "\"";
  const int raw = std::system(cmd.c_str());
  Run r;
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.err = slurp(err);
  return r;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string c;
    while (std::getline(ls, c, ',')) cells.push_back(c);
    rows.push_back(cells);
  }
  return rows;
}

// Digest from coreutils, independent of the binary's own hashing.
std::string sha256sum(const fs::path& p) {
  const std::string cmd = "sha256sum \"" + p.string() + "\"";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (pipe == nullptr) return {};
  std::array<char, 256> buf{};
  std::string out;
  while (std::fgets(buf.data(), buf.size(), pipe) != nullptr) out += buf.data();
  ::pclose(pipe);
  return out.substr(0, out.find(' '));
}

const json kHarmonic14 = {{"kind", "middle"}, {"c", "harmonic"}, {"depth", 14}};

}  // namespace

TEST(CliGenerate, MiddleThirdsRowCount) {
  const auto dir = scratch("gen_thirds");
  const auto r = run_cli("generate", {{"system", {{"kind", "middle"}, {"c", "const:1/3"}, {"depth", 10}}}}, dir);
  ASSERT_EQ(r.status, 0) << r.err;
  const auto rows = read_csv(dir / "out" / "level_10.csv");
  ASSERT_EQ(rows.size(), 1025u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"index", "left", "right", "length"}));
  for (std::size_t i = 1; i < rows.size(); ++i) {
    EXPECT_NEAR(std::stod(rows[i][3]), std::pow(3.0, -10), 1e-15);
  }
}

TEST(CliGenerate, HarmonicLengthsSumToOneThirteenth) {
  const auto dir = scratch("gen_harmonic");
  const auto r = run_cli("generate", {{"system", {{"kind", "middle"}, {"c", "harmonic"}, {"depth", 12}}}}, dir);
  ASSERT_EQ(r.status, 0) << r.err;
  const auto rows = read_csv(dir / "out" / "level_12.csv");
  ASSERT_EQ(rows.size(), 4097u);
  long double total = 0.0L;
  for (std::size_t i = 1; i < rows.size(); ++i) total += std::stold(rows[i][3]);
  // prod_{i<=12} (1 - 1/(i+1)) telescopes to 1/13
  EXPECT_NEAR(static_cast<double>(total) * 13.0, 1.0, 1e-11);
}

TEST(CliGenerate, InvalidGapNamesField) {
  const auto dir = scratch("gen_bad");
  const auto r = run_cli("generate", {{"system", {{"kind", "middle"}, {"c", "const:1.5"}, {"depth", 4}}}}, dir);
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.err.find("system.c"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir / "out" / "manifest.json"));

  const auto missing = run_cli("generate", {{"levels", {3}}}, scratch("gen_missing"));
  EXPECT_EQ(missing.status, 2);
  EXPECT_NE(missing.err.find("system"), std::string::npos);
}

TEST(CliGenerate, FileFormulaAndManifest) {
  const auto dir = scratch("gen_file");
  std::ofstream(dir / "gaps.txt") << "0.5, 0.25\n0.125\n";
  const auto r = run_cli("generate", {{"system", {{"c", "file:gaps.txt"}, {"depth", 3}}}, {"levels", {1, 3}}}, dir);
  ASSERT_EQ(r.status, 0) << r.err;
  const auto rows = read_csv(dir / "out" / "level_3.csv");
  ASSERT_EQ(rows.size(), 9u);
  EXPECT_NEAR(std::stod(rows[1][3]), 0.25 * 0.375 * 0.4375, 1e-15);

  const json manifest = json::parse(slurp(dir / "out" / "manifest.json"));
  EXPECT_EQ(manifest["command"], "generate");
  EXPECT_EQ(manifest["version"], confdim::cli::kVersion);
  EXPECT_EQ(manifest["config_sha256"], sha256sum(dir / "config.json"));
  ASSERT_EQ(manifest["outputs"].size(), 3u);
  for (const auto& o : manifest["outputs"]) {
    const fs::path f = dir / "out" / o["file"].get<std::string>();
    EXPECT_EQ(o["sha256"], sha256sum(f)) << f;
    EXPECT_EQ(o["bytes"].get<std::size_t>(), fs::file_size(f));
  }
  EXPECT_TRUE(manifest.contains("generated_at"));
}

TEST(CliTheoremA, MissingMapsExitTwo) {
  const auto r = run_cli("theorem-a", {{"system", kHarmonic14}, {"d", {0.9}}}, scratch("ta_nomaps"));
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.err.find("maps"), std::string::npos) << r.err;
  const auto bad = run_cli("theorem-a", {{"system", kHarmonic14}, {"d", {0.9}}, {"maps", {{{"type", "spiral"}}}}},
                           scratch("ta_badmap"));
  EXPECT_EQ(bad.status, 2);
  EXPECT_NE(bad.err.find("maps[0].type"), std::string::npos) << bad.err;
}

TEST(CliTheoremA, SameSeedByteIdentical) {
  const json cfg = {{"system", {{"kind", "middle"}, {"c", "harmonic"}, {"depth", 10}}},
                    {"maps", {{{"type", "identity"}}, {{"type", "dyadic"}, {"rho", 2}, {"depth", 12}}}},
                    {"d", {0.9}},
                    {"minkowski_n", {100}},
                    {"control", {{"d", {0.9}}}}};
  const auto a = scratch("ta_det_a");
  const auto b = scratch("ta_det_b");
  const auto c = scratch("ta_det_c");
  ASSERT_EQ(run_cli("theorem-a", cfg, a, "--seed 5").status, 0);
  ASSERT_EQ(run_cli("theorem-a", cfg, b, "--seed 5").status, 0);
  ASSERT_EQ(run_cli("theorem-a", cfg, c, "--seed 6").status, 0);
  std::size_t csvs = 0;
  for (const auto& e : fs::directory_iterator(a / "out")) {
    if (e.path().filename() == "manifest.json") continue;
    csvs += e.path().extension() == ".csv" ? 1 : 0;
    EXPECT_EQ(slurp(e.path()), slurp(b / "out" / e.path().filename())) << e.path();
  }
  EXPECT_EQ(csvs, 5u);
  const json ma = json::parse(slurp(a / "out" / "manifest.json"));
  const json mb = json::parse(slurp(b / "out" / "manifest.json"));
  EXPECT_EQ(ma["run_sha256"], mb["run_sha256"]);
  // the dyadic map is drawn from the seed
  EXPECT_NE(slurp(a / "out" / "certificates.csv"), slurp(c / "out" / "certificates.csv"));
}

TEST(CliTheoremB, AtomFailsUpperGrowth) {
  const json cfg = {{"system", kHarmonic14},
                    {"level", 6},
                    {"atom", {{"x", 1.25}, {"mass", 0.5}}},
                    {"growth", {{"eps", {0.1}}, {"from", 3}, {"to", 12}}},
                    {"Y", {{0.5, 1.0}}},
                    {"d", {0.6}},
                    {"h", "1/2187"}};
  const auto dir = scratch("tb_atom");
  const auto r = run_cli("theorem-b", cfg, dir);
  EXPECT_EQ(r.status, 3);
  const json s = json::parse(slurp(dir / "out" / "summary.json"));
  EXPECT_FALSE(s["growth_ok"].get<bool>());
  EXPECT_EQ(s["growth"][0]["failed_side"], "upper");
  EXPECT_EQ(s["growth"][0]["window"]["center"].get<double>(), 1.25);
  EXPECT_FALSE(s.contains("holder"));
}

TEST(CliTheoremB, UnitIntervalReducesToOneDimension) {
  // E = [0,1] with Lebesgue measure and one point of weight w: the normalized
  // fibre admits rho = 1 with equality in Jensen, so mod_{1+d} = w exactly.
  const double w = 0.7;
  const json cfg = {{"system", {{"kind", "middle"}, {"c", "const:0"}, {"depth", 10}}},
                    {"level", 4},
                    {"Y", {{0.3, w}}},
                    {"d", {0.5, 0.8}},
                    {"h", 1.0 / 64},
                    {"refine", 2}};
  const auto dir = scratch("tb_unit");
  const auto r = run_cli("theorem-b", cfg, dir);
  ASSERT_EQ(r.status, 0) << r.err;
  const json s = json::parse(slurp(dir / "out" / "summary.json"));
  ASSERT_EQ(s["holder"].size(), 2u);
  for (const auto& row : s["holder"]) {
    EXPECT_NEAR(row["value"].get<double>(), w, 1e-9);
    EXPECT_NEAR(row["value_refined"].get<double>(), w, 1e-9);
    EXPECT_NEAR(row["bound"].get<double>(), w, 1e-15);
  }
  EXPECT_EQ(read_csv(dir / "out" / "holder.csv").size(), 5u);
}

TEST(CliModulus, DiscreteClosedFormAndNonConvergence) {
  json balls = json::array();
  for (int k = 0; k < 4; ++k) balls.push_back({{"center", {static_cast<double>(k)}}, {"radius", 0.5}});
  const json prob = {{"type", "discrete"}, {"p", 2}, {"delta", 1}, {"balls", balls}, {"incidence", {{0, 1, 2, 3}}}};
  const auto dir = scratch("mod_disc");
  ASSERT_EQ(run_cli("modulus", {{"problem", prob}}, dir).status, 0);
  const auto rows = read_csv(dir / "out" / "solution.csv");
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"variable", "value"}));
  for (int k = 1; k <= 4; ++k) EXPECT_NEAR(std::stod(rows[static_cast<std::size_t>(k)][1]), 0.25, 1e-12);
  const json s = json::parse(slurp(dir / "out" / "summary.json"));
  EXPECT_NEAR(s["value"].get<double>(), 0.25, 1e-12);
  EXPECT_TRUE(s.contains("kkt_residual"));
  EXPECT_TRUE(s.contains("iterations"));

  // overlapping Fuglede members need several Newton steps
  const json fug = {{"type", "fuglede"},
                    {"p", 3},
                    {"mu", {0.1, 0.2, 0.3, 0.4, 0.5}},
                    {"members", {{1, 2, 0, 0, 0}, {0, 1, 1, 3, 0}, {0.5, 0, 0, 1, 2}}}};
  const auto slow = run_cli("modulus", {{"problem", fug}, {"solver", {{"max_iterations", 1}}}}, scratch("mod_slow"));
  EXPECT_EQ(slow.status, 4) << slow.err;
  EXPECT_EQ(run_cli("modulus", {{"problem", fug}}, scratch("mod_fast")).status, 0);
}

TEST(CliModulus, ProblemFileAndErrors) {
  const auto dir = scratch("mod_file");
  std::ofstream(dir / "problem.json") << R"({"type": "fuglede", "p": 2, "mu": [1, 1], "members": [[1, 1]]})";
  ASSERT_EQ(run_cli("modulus", {{"problem", "file:problem.json"}}, dir).status, 0);
  EXPECT_NEAR(json::parse(slurp(dir / "out" / "summary.json"))["value"].get<double>(), 0.5, 1e-12);

  const auto zero = run_cli("modulus", {{"problem", {{"type", "fuglede"}, {"p", 2}, {"mu", {1, 1}}, {"members", {{0, 0}}}}}},
                            scratch("mod_zero"));
  EXPECT_EQ(zero.status, 2);
  EXPECT_NE(zero.err.find("members[0]"), std::string::npos) << zero.err;
  EXPECT_EQ(run_cli("modulus", {{"problem", {{"type", "curve"}}}}, scratch("mod_type")).status, 2);
}

TEST(CliDistort, SeedControlsSamples) {
  const json cfg = {{"map", {{"type", "power"}, {"a", 2}, {"eta", {{"calibrate", {{"lo", -1}, {"hi", 1}}}}}}},
                    {"triples", 2000},
                    {"pairs", 200}};
  const auto a = scratch("dist_a");
  const auto b = scratch("dist_b");
  const auto c = scratch("dist_c");
  ASSERT_EQ(run_cli("distort", cfg, a, "--seed 3").status, 0);
  ASSERT_EQ(run_cli("distort", cfg, b, "--seed 3").status, 0);
  ASSERT_EQ(run_cli("distort", cfg, c, "--seed 4").status, 0);
  EXPECT_EQ(slurp(a / "out" / "distortion.csv"), slurp(b / "out" / "distortion.csv"));
  EXPECT_NE(slurp(a / "out" / "distortion.csv"), slurp(c / "out" / "distortion.csv"));
  EXPECT_EQ(read_csv(a / "out" / "distortion.csv").size(), 401u);

  // the identity gauge is far too small for the square map
  const json wrong = {{"map", {{"type", "power"}, {"a", 2}, {"eta", {{"C", 1}, {"K", 1}}}}}, {"triples", 500}, {"pairs", 50}};
  const auto w = scratch("dist_wrong");
  EXPECT_EQ(run_cli("distort", wrong, w).status, 3);
  EXPECT_FALSE(json::parse(slurp(w / "out" / "summary.json"))["pass"].get<bool>());
}

TEST(CliDimension, MiddleThirds) {
  const json cfg = {{"system", {{"kind", "middle"}, {"c", "const:1/3"}, {"depth", 12}}},
                    {"scales", {{"base", 3}, {"from", 1}, {"to", 10}}},
                    {"mass_d", {0.6}}};
  const auto dir = scratch("dim");
  ASSERT_EQ(run_cli("dimension", cfg, dir).status, 0);
  const json s = json::parse(slurp(dir / "out" / "summary.json"));
  EXPECT_NEAR(s["box_count"]["fitted_slope"].get<double>(), std::log(2.0) / std::log(3.0), 1e-9);
  const auto rows = read_csv(dir / "out" / "box_counts.csv");
  ASSERT_EQ(rows.size(), 11u);
  for (int k = 1; k <= 10; ++k) EXPECT_EQ(std::stoul(rows[static_cast<std::size_t>(k)][1]), 1ul << k);
}

TEST(CliMass, ReportsPerLevelFactors) {
  const json cfg = {{"system", {{"kind", "middle"}, {"c", "const:0.01"}, {"depth", 6}}},
                    {"map", {{"type", "identity"}}},
                    {"d", 0.9}};
  const auto dir = scratch("mass");
  ASSERT_EQ(run_cli("mass", cfg, dir).status, 0);
  const auto rows = read_csv(dir / "out" / "pi_levels.csv");
  ASSERT_EQ(rows.size(), 7u);
  // symmetric split of an interval with gap fraction 0.01
  const double p = 1.0 / (2.0 * std::pow(0.495, 0.9));
  double run = 1.0;
  for (std::size_t n = 1; n <= 6; ++n) {
    run *= p;
    EXPECT_NEAR(std::stod(rows[n][2]), p, 1e-12);
    EXPECT_NEAR(std::stod(rows[n][3]), run, 1e-11);
  }
  const json s = json::parse(slurp(dir / "out" / "summary.json"));
  ASSERT_EQ(s["certificates"].size(), 1u);
  EXPECT_EQ(s["certificates"][0]["d"], 0.9);
}

TEST(CliUsage, BadArguments) {
  const auto dir = scratch("usage");
  const std::string base = std::string("\"") + CONFDIM_CLI + "\" ";
  auto status = [](const std::string& cmd) {
    const int raw = std::system((cmd + " > /dev/null 2>&1").c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  };
  EXPECT_EQ(status(base + "generate --out " + dir.string()), 2);
  EXPECT_EQ(status(base + "explode --config x --out y"), 2);
  EXPECT_EQ(status(base + "generate --config " + (dir / "none.json").string() + " --out " + dir.string()), 2);
  std::ofstream(dir / "broken.json") << "{ not json";
  EXPECT_EQ(status(base + "generate --config " + (dir / "broken.json").string() + " --out " + dir.string()), 2);
  EXPECT_EQ(status(base + "--version"), 0);
}
