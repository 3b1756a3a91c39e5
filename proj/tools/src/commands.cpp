#include "commands.hpp"

#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "ewcdet/checkpoint.hpp"
#include "ewcdet/config.hpp"
#include "ewcdet/error.hpp"
#include "ewcdet/hash.hpp"
#include "ewcdet/report.hpp"

#ifndef EWCDET_VERSION
#define EWCDET_VERSION "0.0.0"
#endif

namespace ewcdet::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << content;
    if (!out.flush()) throw Error("cannot write " + path.string());
  }
  fs::rename(tmp, path);
}

json config_echo(const ExperimentConfig& cfg) { return json::parse(to_json_string(cfg)); }

json benchmark_hashes(const Benchmark& bench) {
  return {{"A/train", corpus_hash(bench.a.train)},
          {"A/test", corpus_hash(bench.a.test)},
          {"B/train", corpus_hash(bench.b.train)},
          {"B/test", corpus_hash(bench.b.test)}};
}

json seed_record(const TrainConfig& train, const ExperimentConfig& cfg) {
  json j{{"seed", train.seed},
         {"init", init_seed(train)},
         {"phase_1", phase_seed(train, 1)},
         {"phase_2", phase_seed(train, 2)}};
  if (!cfg.data_dir) {
    j["domain_A"] = domain_seed(train.seed, 0);
    j["domain_B"] = domain_seed(train.seed, 1);
  }
  return j;
}

ExperimentConfig resolve_config(const fs::path& path, std::optional<std::uint64_t> seed,
                                const std::optional<fs::path>& data_dir) {
  ExperimentConfig cfg = load_experiment_config(path);
  if (seed) cfg.train.seed = *seed;
  if (data_dir) cfg.data_dir = fs::absolute(*data_dir);
  return cfg;
}

// Output directory plus a manifest that is rewritten after every stage, so
// an interrupted or failed command leaves status != "complete" behind.
class RunDir {
 public:
  RunDir(fs::path root, json manifest) : root_(std::move(root)), manifest_(std::move(manifest)) {
    fs::create_directories(root_);
    manifest_["status"] = "running";
    manifest_["outputs"] = json::object();
    flush();
  }

  void emit(const std::string& rel, const std::string& content) {
    write_file(root_ / rel, content);
    manifest_["outputs"][rel] = sha256_hex(content);
  }

  json& manifest() { return manifest_; }
  const fs::path& root() const { return root_; }

  void finish(const std::string& status) {
    manifest_["status"] = status;
    flush();
  }

  void flush() { write_file(root_ / "manifest.json", manifest_.dump(2) + "\n"); }

 private:
  fs::path root_;
  json manifest_;
};

json checkpoint_entry(RunDir& dir, const std::string& name, const Checkpoint& ckpt) {
  const std::string rel = "checkpoints/" + name + ".json";
  dir.emit(rel, checkpoint_to_string(ckpt));
  return {{"path", rel}, {"sha256", dir.manifest()["outputs"][rel]}, {"params_sha256", params_hash(ckpt.params)}};
}

std::string eval_csv(const EvalReport& r) {
  std::ostringstream out;
  out << "bucket,mr2\n";
  for (const auto& b : kBuckets) out << b.name << ',' << format_percent(r.at(b.id)) << '\n';
  return out.str();
}

std::string arms_name(Arms arms) {
  switch (arms) {
    case Arms::baseline: return "baseline";
    case Arms::proposed: return "proposed";
    case Arms::both: return "both";
  }
  return "both";
}

}  // namespace

std::string tool_version() { return EWCDET_VERSION; }

void cmd_generate(const GenerateOptions& opts, std::ostream& log) {
  // Everything that can reject the input happens before the first write.
  const DomainSpec spec_a = load_domain_spec(opts.spec_a);
  const DomainSpec spec_b = load_domain_spec(opts.spec_b);
  if (opts.count < 1 || opts.test_count < 1) throw InvalidArgument("--count and --test-count must be >= 1");
  if (opts.out.empty()) throw InvalidArgument("--out is required");

  const Benchmark bench{generate_splits(spec_a, opts.count, opts.test_count, domain_seed(opts.seed, 0)),
                        generate_splits(spec_b, opts.count, opts.test_count, domain_seed(opts.seed, 1))};

  const fs::path out = fs::absolute(opts.out);
  const fs::path staging = out.string() + ".partial";
  fs::remove_all(staging);
  save_benchmark(bench, staging);
  const json manifest{{"format", "ewcdet-benchmark"},
                      {"tool_version", tool_version()},
                      {"seed", opts.seed},
                      {"domain_seeds", {{"A", domain_seed(opts.seed, 0)}, {"B", domain_seed(opts.seed, 1)}}},
                      {"train_count", opts.count},
                      {"test_count", opts.test_count},
                      {"specs", {{"A", json::parse(to_json_string(spec_a))}, {"B", json::parse(to_json_string(spec_b))}}},
                      {"corpus_hashes", benchmark_hashes(bench)}};
  write_file(staging / "manifest.json", manifest.dump(2) + "\n");
  fs::remove_all(out);
  fs::rename(staging, out);
  for (const auto& [split, hash] : manifest["corpus_hashes"].items())
    log << split << ' ' << hash.get<std::string>() << '\n';
}

void cmd_run(const RunOptions& opts, std::ostream& log) {
  const ExperimentConfig cfg = resolve_config(opts.config, opts.seed, opts.data_dir);
  if (opts.out.empty()) throw InvalidArgument("--out is required");
  const TrainConfig& train = cfg.train;

  RunDir dir(opts.out, {{"format", "ewcdet-run"},
                        {"tool_version", tool_version()},
                        {"command", "run"},
                        {"arms", arms_name(opts.arms)},
                        {"config", config_echo(cfg)},
                        {"seeds", seed_record(train, cfg)}});
  std::string stage = "data";
  try {
    const Benchmark bench = resolve_benchmark(cfg);
    dir.manifest()["dataset_hashes"] = benchmark_hashes(bench);
    dir.flush();
    const Monitor monitor{&bench.a.test, &bench.b.test};

    ScenarioReport report;
    stage = "reference";
    log << "training on A (" << bench.a.train.size() << " images, " << train.epochs << " epochs)\n";
    report.reference = train_reference(bench.a, train, cfg.anchors, cfg.arch, monitor);
    report.before_a = evaluate(report.reference.params, bench.a.test, cfg.anchors);
    report.before_b = evaluate(report.reference.params, bench.b.test, cfg.anchors);
    dir.manifest()["checkpoints"]["reference"] = checkpoint_entry(
        dir, "reference", {report.reference.params, cfg.anchors, train.seed, "A", report.reference.state});
    dir.manifest()["stages"]["reference"] = "complete";
    dir.flush();

    auto run_arm = [&](std::optional<double> lambda) {
      ArmResult arm = fine_tune_arm(report.reference, bench.a.test, bench.b, lambda, train, cfg.anchors, monitor);
      dir.manifest()["checkpoints"][arm.name] =
          checkpoint_entry(dir, arm.name, {arm.params, cfg.anchors, train.seed, "A->B", std::nullopt});
      dir.manifest()["stages"][arm.name] = "complete";
      dir.flush();
      return arm;
    };
    if (opts.arms != Arms::proposed) {
      stage = "baseline";
      log << "fine-tuning on B without consolidation\n";
      report.baseline = run_arm(std::nullopt);
    }
    if (opts.arms != Arms::baseline) {
      stage = "proposed";
      log << "fine-tuning on B with lambda " << train.lambda << '\n';
      report.proposed = run_arm(train.lambda);
    }

    stage = "report";
    const int e = train.epochs;
    dir.emit("table1.csv", mr2_table_csv(report));
    dir.emit("table1.txt", mr2_table_text(report));
    dir.emit("forgetting.csv", forgetting_csv(report));
    dir.emit("improvement.csv", improvement_csv(report));
    dir.emit("epoch_curve.csv", epoch_curve_csv(report));
    dir.emit("epoch_curve_A.svg", epoch_curve_svg(report, 'A'));
    dir.emit("epoch_curve_B.svg", epoch_curve_svg(report, 'B'));
    dir.emit("train_log_reference.csv", train_log_csv(report.reference.log));
    dir.emit("fppi_reference_A.csv", fppi_curve_csv(report.before_a));
    dir.emit("fppi_reference_B.csv", fppi_curve_csv(report.before_b));
    for (const auto* arm : {report.baseline ? &*report.baseline : nullptr,
                            report.proposed ? &*report.proposed : nullptr}) {
      if (arm == nullptr) continue;
      dir.emit("train_log_" + arm->name + ".csv", train_log_csv(arm->log, e + 1));
      dir.emit("fppi_" + arm->name + "_A.csv", fppi_curve_csv(arm->eval_a));
      dir.emit("fppi_" + arm->name + "_B.csv", fppi_curve_csv(arm->eval_b));
      dir.manifest()["drift"][arm->name] = arm->drift;
    }
    dir.finish("complete");
    log << mr2_table_text(report);
  } catch (const std::exception& ex) {
    dir.manifest()["stages"][stage] = "failed";
    dir.manifest()["error"] = ex.what();
    dir.finish("failed");
    throw;
  }
}

void cmd_sweep(const SweepOptions& opts, std::ostream& log) {
  const ExperimentConfig base = resolve_config(opts.config, std::nullopt, opts.data_dir);
  if (opts.out.empty()) throw InvalidArgument("--out is required");
  const std::vector<double> lambdas = opts.lambdas.empty() ? base.sweep_lambdas : opts.lambdas;
  if (lambdas.empty()) throw InvalidArgument("no lambdas given and the config has no sweep grid");
  for (double l : lambdas) {
    if (!(l >= 0.0)) throw InvalidArgument("lambdas must be >= 0");
  }
  const std::vector<std::uint64_t> seeds = opts.seeds.empty() ? std::vector{base.train.seed} : opts.seeds;

  RunDir dir(opts.out, {{"format", "ewcdet-sweep"},
                        {"tool_version", tool_version()},
                        {"command", "sweep"},
                        {"lambdas", lambdas},
                        {"config", config_echo(base)}});
  try {
    std::vector<std::vector<SweepRow>> per_seed;
    for (std::uint64_t seed : seeds) {
      ExperimentConfig cfg = base;
      cfg.train.seed = seed;
      const std::string key = std::to_string(seed);
      dir.manifest()["seeds"][key] = seed_record(cfg.train, cfg);
      const Benchmark bench = resolve_benchmark(cfg);
      dir.manifest()["dataset_hashes"][key] = benchmark_hashes(bench);
      dir.flush();
      log << "seed " << seed << ": training on A, then " << lambdas.size() << " fine-tuning runs\n";
      const ReferenceModel reference = train_reference(bench.a, cfg.train, cfg.anchors, cfg.arch);
      per_seed.push_back(lambda_sweep(reference, bench.a.test, bench.b, lambdas, cfg.train, cfg.anchors));
      if (seeds.size() > 1) dir.emit("sweep_seed" + key + ".csv", sweep_csv(per_seed.back()));
    }
    const std::vector<SweepRow> rows = seeds.size() > 1 ? pool_sweep_rows(per_seed) : per_seed.front();
    const std::string csv = sweep_csv(rows);
    dir.emit("sweep.csv", csv);
    if (const auto best = recommended_lambda(rows)) dir.manifest()["recommended_lambda"] = *best;
    dir.finish("complete");
    log << csv;
  } catch (const std::exception& ex) {
    dir.manifest()["error"] = ex.what();
    dir.finish("failed");
    throw;
  }
}

void cmd_evaluate(const EvaluateOptions& opts, std::ostream& log) {
  const Checkpoint ckpt = load_checkpoint(opts.checkpoint);
  const Dataset data = load_dataset(opts.data);
  const EvalReport report = evaluate(ckpt.params, data, ckpt.anchors);
  const std::string csv = eval_csv(report);
  if (opts.out) write_file(*opts.out, csv);
  log << csv;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Detector training with elastic weight consolidation on synthetic two-domain data", "ewcdet"};
  app.set_version_flag("--version", tool_version());
  app.require_subcommand(1);

  GenerateOptions gen;
  auto* generate = app.add_subcommand("generate", "Write domain A/B train and test splits");
  generate->add_option("--spec-a", gen.spec_a, "Domain A spec (JSON)")->required();
  generate->add_option("--spec-b", gen.spec_b, "Domain B spec (JSON)")->required();
  generate->add_option("--count", gen.count, "Training images per domain")->capture_default_str();
  generate->add_option("--test-count", gen.test_count, "Test images per domain")->capture_default_str();
  generate->add_option("--seed", gen.seed, "Benchmark seed")->capture_default_str();
  generate->add_option("--out", gen.out, "Output directory")->required();

  const std::map<std::string, Arms> arm_names{
      {"baseline", Arms::baseline}, {"proposed", Arms::proposed}, {"both", Arms::both}};
  RunOptions run;
  std::uint64_t run_seed = 0;
  std::string run_data;
  auto* run_cmd = app.add_subcommand("run", "Train on A, then fine-tune on B per arm, and write reports");
  run_cmd->add_option("--config", run.config, "Experiment config (JSON)")->required();
  run_cmd->add_option("--out", run.out, "Output directory")->required();
  auto* run_seed_opt = run_cmd->add_option("--seed", run_seed, "Overrides the config and EWCDET_SEED");
  run_cmd->add_option("--arm", run.arms, "baseline, proposed or both")
      ->transform(CLI::CheckedTransformer(arm_names, CLI::ignore_case))
      ->default_str("both");
  auto* run_data_opt = run_cmd->add_option("--data", run_data, "Directory written by `generate`");

  SweepOptions sweep;
  std::string sweep_data;
  auto* sweep_cmd = app.add_subcommand("sweep", "Fine-tune once per lambda from a shared reference");
  sweep_cmd->add_option("--config", sweep.config, "Experiment config (JSON)")->required();
  sweep_cmd->add_option("--out", sweep.out, "Output directory")->required();
  sweep_cmd->add_option("--seed", sweep.seeds, "Seed (repeatable; overrides the config and EWCDET_SEED)");
  sweep_cmd->add_option("--lambda", sweep.lambdas, "Lambda value (repeatable; default: config grid)");
  auto* sweep_data_opt = sweep_cmd->add_option("--data", sweep_data, "Directory written by `generate`");

  EvaluateOptions eval;
  std::string eval_out;
  auto* eval_cmd = app.add_subcommand("evaluate", "MR^-2 per occlusion bucket for a checkpoint on one split");
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--data", eval.data, "Split directory (e.g. data/A/test)")->required();
  auto* eval_out_opt = eval_cmd->add_option("--out", eval_out, "CSV output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (generate->parsed()) {
      cmd_generate(gen, out);
    } else if (run_cmd->parsed()) {
      if (*run_seed_opt) run.seed = run_seed;
      if (*run_data_opt) run.data_dir = run_data;
      cmd_run(run, out);
    } else if (sweep_cmd->parsed()) {
      if (*sweep_data_opt) sweep.data_dir = sweep_data;
      cmd_sweep(sweep, out);
    } else if (eval_cmd->parsed()) {
      if (*eval_out_opt) eval.out = eval_out;
      cmd_evaluate(eval, out);
    }
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const TrainingFault& e) {
    err << "training fault: " << e.what() << '\n';
    return kExitFault;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFault;
  }
  return kExitOk;
}

}  // namespace ewcdet::cli
