#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ewcdet/detector.hpp"
#include "ewcdet/synthdata.hpp"
#include "ewcdet/training.hpp"

namespace ewcdet {

/// Environment variable that overrides the configured training seed.
inline constexpr const char* kSeedEnvVar = "EWCDET_SEED";

/// How the two domains are generated. Spec paths are resolved against the
/// config file's directory.
struct BenchmarkData {
  std::filesystem::path domain_a = "domain_a.json";
  std::filesystem::path domain_b = "domain_b.json";
  std::size_t train_count = 512;
  std::size_t test_count = 300;
};

/// One experiment: data, model, anchor, optimizer and sweep settings. The
/// key set is documented in README.md.
struct ExperimentConfig {
  std::string name = "experiment";
  BenchmarkData data;
  /// Splits written by `ewcdet generate`; when unset the splits are
  /// generated in memory from `data` and train.seed.
  std::optional<std::filesystem::path> data_dir;
  TrainConfig train;
  AnchorConfig anchors;
  Architecture arch;
  std::vector<double> sweep_lambdas;
  /// Informational pointer to the sweep output that chose train.lambda.
  std::string selection_run;
};

struct Benchmark {
  DomainSplits a;
  DomainSplits b;
};

/// Both domains for `seed`: domain i uses domain_seed(seed, i).
Benchmark generate_benchmark(const BenchmarkData& data, std::uint64_t seed);
/// Loads <dir>/{A,B}/{train,test} as written by save_benchmark.
Benchmark load_benchmark(const std::filesystem::path& dir);
void save_benchmark(const Benchmark& bench, const std::filesystem::path& dir);
/// The benchmark an experiment runs on.
Benchmark resolve_benchmark(const ExperimentConfig& cfg);

/// Relative data_dir is resolved against the config file's directory.
/// Throws InvalidArgument on unreadable files, unknown keys or bad values.
ExperimentConfig load_experiment_config(const std::filesystem::path& path, bool honor_env = true);
ExperimentConfig parse_experiment_config(const std::string& text, const std::filesystem::path& base_dir);

DomainSpec load_domain_spec(const std::filesystem::path& path);
DomainSpec parse_domain_spec(const std::string& text);

std::string to_json_string(const ExperimentConfig& cfg);
std::string to_json_string(const DomainSpec& spec);

}  // namespace ewcdet
