#include "ewcdet/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "ewcdet/error.hpp"
#include "json_io.hpp"

namespace ewcdet {

namespace {

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& text, const std::filesystem::path& base_dir) {
  const json j = parse_json(text, "experiment config");
  check_keys(j, {"name", "data", "data_dir", "train", "anchors", "architecture", "sweep"}, "experiment config");
  ExperimentConfig cfg;
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path = p;
    return (path.is_relative() ? base_dir / path : path).lexically_normal();
  };
  try {
    read_opt(j, "name", cfg.name);
    if (j.contains("data")) {
      const json& d = j.at("data");
      check_keys(d, {"domain_a", "domain_b", "train_count", "test_count"}, "data");
      std::string a = cfg.data.domain_a.string(), b = cfg.data.domain_b.string();
      read_opt(d, "domain_a", a);
      read_opt(d, "domain_b", b);
      cfg.data.domain_a = a;
      cfg.data.domain_b = b;
      read_opt(d, "train_count", cfg.data.train_count);
      read_opt(d, "test_count", cfg.data.test_count);
    }
    cfg.data.domain_a = resolve(cfg.data.domain_a.string());
    cfg.data.domain_b = resolve(cfg.data.domain_b.string());
    if (j.contains("data_dir")) {
      std::string data_dir;
      read_opt(j, "data_dir", data_dir);
      cfg.data_dir = resolve(data_dir);
    }
    if (j.contains("train")) cfg.train = j.at("train").get<TrainConfig>();
    if (j.contains("anchors")) cfg.anchors = j.at("anchors").get<AnchorConfig>();
    if (j.contains("architecture")) cfg.arch = j.at("architecture").get<Architecture>();
    if (j.contains("sweep")) {
      check_keys(j.at("sweep"), {"lambdas", "selection_run"}, "sweep");
      read_opt(j.at("sweep"), "lambdas", cfg.sweep_lambdas);
      read_opt(j.at("sweep"), "selection_run", cfg.selection_run);
    }
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("bad experiment config: ") + e.what());
  }
  if (cfg.data.train_count < 1 || cfg.data.test_count < 1)
    throw InvalidArgument("data.train_count and data.test_count must be >= 1");
  for (double l : cfg.sweep_lambdas) {
    if (!(l >= 0.0)) throw InvalidArgument("sweep lambdas must be >= 0");
  }
  cfg.train.validate();
  cfg.anchors.validate();
  cfg.arch.validate();
  if (cfg.anchors.grid_stride != cfg.arch.total_stride())
    throw InvalidArgument("anchors.grid_stride must equal 4 * architecture.input_pool");
  if (cfg.anchors.anchors_per_cell() != static_cast<std::size_t>(cfg.arch.anchors_per_cell))
    throw InvalidArgument("architecture.anchors_per_cell must equal |anchor_heights| * |anchor_aspect_ratios|");
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path, bool honor_env) {
  ExperimentConfig cfg = parse_experiment_config(slurp(path), path.parent_path());
  if (honor_env) {
    if (const char* env = std::getenv(kSeedEnvVar); env != nullptr && *env != '\0') {
      char* end = nullptr;
      const unsigned long long v = std::strtoull(env, &end, 10);
      if (end == env || *end != '\0') throw InvalidArgument(std::string(kSeedEnvVar) + " must be an integer");
      cfg.train.seed = v;
    }
  }
  return cfg;
}

DomainSpec parse_domain_spec(const std::string& text) {
  const json j = parse_json(text, "domain spec");
  DomainSpec spec;
  try {
    spec = j.get<DomainSpec>();
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("bad domain spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

DomainSpec load_domain_spec(const std::filesystem::path& path) { return parse_domain_spec(slurp(path)); }

std::string to_json_string(const ExperimentConfig& cfg) {
  json j{{"name", cfg.name},
         {"data",
          {{"domain_a", cfg.data.domain_a.string()},
           {"domain_b", cfg.data.domain_b.string()},
           {"train_count", cfg.data.train_count},
           {"test_count", cfg.data.test_count}}},
         {"train", cfg.train},
         {"anchors", cfg.anchors},
         {"architecture", cfg.arch},
         {"sweep", {{"lambdas", cfg.sweep_lambdas}, {"selection_run", cfg.selection_run}}}};
  if (cfg.data_dir) j["data_dir"] = cfg.data_dir->string();
  return j.dump(2);
}

Benchmark generate_benchmark(const BenchmarkData& data, std::uint64_t seed) {
  const DomainSpec a = load_domain_spec(data.domain_a);
  const DomainSpec b = load_domain_spec(data.domain_b);
  return {generate_splits(a, data.train_count, data.test_count, domain_seed(seed, 0)),
          generate_splits(b, data.train_count, data.test_count, domain_seed(seed, 1))};
}

Benchmark load_benchmark(const std::filesystem::path& dir) {
  return {{load_dataset(dir / "A" / "train"), load_dataset(dir / "A" / "test")},
          {load_dataset(dir / "B" / "train"), load_dataset(dir / "B" / "test")}};
}

void save_benchmark(const Benchmark& bench, const std::filesystem::path& dir) {
  save_dataset(bench.a.train, dir / "A" / "train");
  save_dataset(bench.a.test, dir / "A" / "test");
  save_dataset(bench.b.train, dir / "B" / "train");
  save_dataset(bench.b.test, dir / "B" / "test");
}

Benchmark resolve_benchmark(const ExperimentConfig& cfg) {
  return cfg.data_dir ? load_benchmark(*cfg.data_dir) : generate_benchmark(cfg.data, cfg.train.seed);
}

std::string to_json_string(const DomainSpec& spec) { return json(spec).dump(2); }

}  // namespace ewcdet
