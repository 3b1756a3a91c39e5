#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ewcdet/training.hpp"

namespace ewcdet::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitFault = 3;

std::string tool_version();

struct GenerateOptions {
  std::filesystem::path spec_a;
  std::filesystem::path spec_b;
  std::size_t count = 512;
  std::size_t test_count = 300;
  std::uint64_t seed = 1;
  std::filesystem::path out;
};

struct RunOptions {
  std::filesystem::path config;
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;
  Arms arms = Arms::both;
  /// Overrides the config's data_dir.
  std::optional<std::filesystem::path> data_dir;
};

struct SweepOptions {
  std::filesystem::path config;
  std::filesystem::path out;
  /// Empty: the config seed. Several seeds write one CSV per seed and a
  /// pooled sweep.csv holding per-lambda means.
  std::vector<std::uint64_t> seeds;
  std::vector<double> lambdas;  // empty: the config's grid
  std::optional<std::filesystem::path> data_dir;
};

struct EvaluateOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path data;  // one split directory
  std::optional<std::filesystem::path> out;
};

// Commands throw ewcdet::Error subclasses; run_cli maps them to exit codes.
void cmd_generate(const GenerateOptions& opts, std::ostream& log);
void cmd_run(const RunOptions& opts, std::ostream& log);
void cmd_sweep(const SweepOptions& opts, std::ostream& log);
void cmd_evaluate(const EvaluateOptions& opts, std::ostream& log);

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ewcdet::cli
