// confdim command line: runs one experiment pipeline from a JSON config and
// writes its CSV outputs, summary.json and manifest.json into --out.

#include <openssl/evp.h>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "confdim/experiments.hpp"

namespace fs = std::filesystem;
using confdim::cli::json;

namespace {

std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xf];
  }
  return out;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw confdim::ConfigError("--config: cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& data) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << data;
  if (!out) throw std::runtime_error("write failed for " + p.string());
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

int run(const std::string& command, const fs::path& config_path, const fs::path& out_dir,
        const std::optional<std::uint64_t>& seed) {
  confdim::cli::Context ctx;
  std::string config_text;
  try {
    config_text = read_file(config_path);
    ctx.config = json::parse(config_text);
  } catch (const confdim::ConfigError& e) {
    std::cerr << "confdim: " << e.what() << "\n";
    return confdim::cli::kConfigError;
  } catch (const json::parse_error& e) {
    std::cerr << "confdim: --config: " << e.what() << "\n";
    return confdim::cli::kConfigError;
  }
  ctx.base_dir = config_path.parent_path().empty() ? fs::path(".") : config_path.parent_path();
  ctx.seed = 0;
  if (ctx.config.is_object() && ctx.config.contains("seed")) {
    if (!ctx.config["seed"].is_number_unsigned()) {
      std::cerr << "confdim: seed: expected a non-negative integer\n";
      return confdim::cli::kConfigError;
    }
    ctx.seed = ctx.config["seed"].get<std::uint64_t>();
  }
  if (seed) ctx.seed = *seed;

  const confdim::cli::Output out = confdim::cli::run_command(command, ctx);
  if (out.files.empty()) {
    std::cerr << "confdim " << command << ": " << out.summary.value("error", "failed") << "\n";
    return out.status;
  }

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) {
    std::cerr << "confdim: --out: cannot create " << out_dir.string() << ": " << ec.message() << "\n";
    return confdim::cli::kConfigError;
  }
  json outputs = json::array();
  for (const auto& [name, data] : out.files) {
    write_file(out_dir / name, data);
    outputs.push_back({{"file", name}, {"bytes", data.size()}, {"sha256", sha256_hex(data)}});
  }
  json manifest = {{"command", command},
                   {"version", confdim::cli::kVersion},
                   {"seed", ctx.seed},
                   {"config_sha256", sha256_hex(config_text)},
                   {"outputs", outputs},
                   {"status", out.status}};
  // The run hash covers everything above; the path and timestamp are added afterwards.
  manifest["run_sha256"] = sha256_hex(manifest.dump());
  manifest["config_path"] = config_path.string();
  manifest["generated_at"] = utc_now();
  write_file(out_dir / "manifest.json", manifest.dump(2) + "\n");

  if (out.status == confdim::cli::kHypothesisFailure) {
    std::cerr << "confdim " << command << ": hypothesis scan failed; see summary.json\n";
  } else if (out.status == confdim::cli::kNoConvergence) {
    std::cerr << "confdim " << command << ": solver did not converge; see summary.json\n";
  }
  return out.status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cantor systems, quasisymmetric images and modulus experiments"};
  app.set_version_flag("--version", std::string(confdim::cli::kVersion));
  app.require_subcommand(1);

  std::string config;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  for (const auto& entry : confdim::cli::commands()) {
    CLI::App* sub = app.add_subcommand(entry.first);
    sub->add_option("--config", config, "JSON config file")->required();
    sub->add_option("--out", out_dir, "output directory")->required();
    sub->add_option("--seed", seed, "random seed (overrides the config)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : confdim::cli::kConfigError;
  }

  try {
    return run(app.get_subcommands().front()->get_name(), config, out_dir, seed);
  } catch (const std::exception& e) {
    std::cerr << "confdim: " << e.what() << "\n";
    return 1;
  }
}
