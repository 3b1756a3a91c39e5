#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "ewcdet/checkpoint.hpp"
#include "ewcdet/config.hpp"
#include "ewcdet/error.hpp"
#include "ewcdet/report.hpp"
#include "ewcdet/rng.hpp"
#include "test_support.hpp"

using namespace ewcdet;
using ewcdet::test::TempDir;

namespace {

Checkpoint sample_checkpoint(bool with_state) {
  Checkpoint c;
  c.params = init_params(12, Architecture{});
  // Values with long expansions exercise the shortest round-trip printer.
  Rng rng(1);
  for (double& v : c.params.values) v += 1e-17 * rng.normal() + rng.uniform() / 3.0;
  c.seed = 99;
  c.phase = "reference";
  if (with_state) {
    ConsolidationState s;
    s.snapshot = c.params.values;
    s.fisher.resize(c.params.size());
    for (double& f : s.fisher) f = rng.uniform() * 1e-7;
    s.lambda = 1.2e-6;
    s.source_dataset_id = "A/train";
    s.sample_count = 512;
    c.consolidation = s;
  }
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ScenarioReport fake_report(int epochs) {
  ScenarioReport r;
  auto eval = [](double a) {
    EvalReport e;
    e.mr2 = {a, a / 2, std::nullopt, 0.9};
    return e;
  };
  for (int e = 1; e <= epochs; ++e) r.reference.log.epochs.push_back({e, LossReport{}, eval(0.5), eval(0.9)});
  r.before_a = eval(0.4);
  r.before_b = eval(0.8);
  ArmResult base;
  base.name = "baseline";
  base.eval_a = eval(0.6);
  base.eval_b = eval(0.2);
  ArmResult prop = base;
  prop.name = "proposed";
  prop.lambda = 3.0;
  prop.eval_a = eval(0.5);
  for (int e = 1; e <= epochs; ++e) {
    base.log.epochs.push_back({e, LossReport{}, eval(0.6), eval(0.3)});
    prop.log.epochs.push_back({e, LossReport{}, eval(0.5), eval(0.3)});
  }
  r.baseline = base;
  r.proposed = prop;
  return r;
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  for (bool with_state : {false, true}) {
    TempDir dir("ckpt");
    const auto c = sample_checkpoint(with_state);
    save_checkpoint(c, dir / "c.json");
    const auto back = load_checkpoint(dir / "c.json");
    EXPECT_EQ(back.params.values, c.params.values);
    EXPECT_EQ(back.params.layout, c.params.layout);
    EXPECT_EQ(back.params.arch, c.params.arch);
    EXPECT_EQ(back.seed, c.seed);
    EXPECT_EQ(back.phase, c.phase);
    EXPECT_EQ(back.anchors.anchor_heights, c.anchors.anchor_heights);
    EXPECT_EQ(params_hash(back.params), params_hash(c.params));
    ASSERT_EQ(back.consolidation.has_value(), with_state);
    if (with_state) {
      EXPECT_EQ(back.consolidation->snapshot, c.consolidation->snapshot);
      EXPECT_EQ(back.consolidation->fisher, c.consolidation->fisher);
      EXPECT_EQ(back.consolidation->lambda, c.consolidation->lambda);
      EXPECT_EQ(back.consolidation->sample_count, 512u);
      EXPECT_EQ(back.consolidation->source_dataset_id, "A/train");
    }
    EXPECT_EQ(checkpoint_to_string(back), checkpoint_to_string(c));
  }
}

TEST(Checkpoint, CorruptInputRejected) {
  EXPECT_THROW(checkpoint_from_string("{not json"), FormatError);
  EXPECT_THROW(checkpoint_from_string("{\"format\": \"other\"}"), FormatError);
  auto j = nlohmann::json::parse(checkpoint_to_string(sample_checkpoint(false)));
  j["format_version"] = kCheckpointFormatVersion + 1;
  EXPECT_THROW(checkpoint_from_string(j.dump()), FormatError);
  j["format_version"] = kCheckpointFormatVersion;
  j["values"] = "oops";
  EXPECT_THROW(checkpoint_from_string(j.dump()), FormatError);
  EXPECT_THROW(load_checkpoint("/nonexistent/ckpt.json"), FormatError);
}

TEST(Checkpoint, TruncatedFileRejected) {
  TempDir dir("ckpt_trunc");
  save_checkpoint(sample_checkpoint(true), dir / "c.json");
  std::filesystem::resize_file(dir / "c.json", std::filesystem::file_size(dir / "c.json") / 2);
  EXPECT_THROW(load_checkpoint(dir / "c.json"), FormatError);
}

TEST(Checkpoint, ParamsHashTracksValues) {
  auto c = sample_checkpoint(false);
  const auto h = params_hash(c.params);
  c.params.values[0] = std::nextafter(c.params.values[0], 1e9);
  EXPECT_NE(params_hash(c.params), h);
}

TEST(Config, ShippedConfigsLoad) {
  const auto toy = load_experiment_config(ewcdet::test::config_path("toy_benchmark.json"), false);
  EXPECT_EQ(toy.train.learning_rate, 5e-3);
  EXPECT_EQ(toy.train.g_max, 20.0);
  EXPECT_EQ(toy.data.train_count, 512u);
  EXPECT_TRUE(std::filesystem::exists(toy.data.domain_a));
  EXPECT_TRUE(std::filesystem::exists(toy.data.domain_b));
  ASSERT_FALSE(toy.sweep_lambdas.empty());
  EXPECT_TRUE(std::is_sorted(toy.sweep_lambdas.begin(), toy.sweep_lambdas.end()));
  EXPECT_EQ(toy.sweep_lambdas.front(), 0.0);

  const auto crowd = load_experiment_config(ewcdet::test::config_path("published_crowdhuman.json"), false);
  const auto city = load_experiment_config(ewcdet::test::config_path("published_citypersons.json"), false);
  EXPECT_EQ(crowd.train.lambda, 1e-6);
  EXPECT_EQ(city.train.lambda, 1.2e-6);
  EXPECT_EQ(crowd.train.learning_rate, 5e-3);
  EXPECT_EQ(crowd.train.g_max, 20.0);
}

TEST(Config, SelectionRunFileExists) {
  const auto toy = load_experiment_config(ewcdet::test::config_path("toy_benchmark.json"), false);
  ASSERT_FALSE(toy.selection_run.empty());
  const auto csv = slurp(ewcdet::test::source_dir() / "configs" / toy.selection_run);
  std::ostringstream expect;
  expect << "# recommended_lambda=" << toy.train.lambda;
  EXPECT_EQ(lines(csv).at(0), expect.str());
}

TEST(Config, UnknownKeysAndBadValuesRejected) {
  EXPECT_THROW(parse_experiment_config(R"({"trian": {}})", "."), InvalidArgument);
  EXPECT_THROW(parse_experiment_config(R"({"train": {"learning_rate": -1}})", "."), InvalidArgument);
  EXPECT_THROW(parse_experiment_config(R"({"sweep": {"lambdas": [0, -1]}})", "."), InvalidArgument);
  EXPECT_THROW(parse_experiment_config(R"({"data": {"train_count": 0}})", "."), InvalidArgument);
  EXPECT_THROW(parse_experiment_config("[1, 2", "."), InvalidArgument);
  EXPECT_THROW(parse_domain_spec(R"({"background": "plaid"})"), InvalidArgument);
}

TEST(Config, RelativePathsResolveAgainstConfigDir) {
  const auto cfg = parse_experiment_config(R"({"data": {"domain_a": "specs/a.json"}, "data_dir": "../bench"})",
                                           "/work/exp");
  EXPECT_EQ(cfg.data.domain_a, std::filesystem::path("/work/exp/specs/a.json"));
  ASSERT_TRUE(cfg.data_dir.has_value());
  EXPECT_EQ(*cfg.data_dir, std::filesystem::path("/work/bench"));
}

TEST(Config, SeedEnvironmentOverride) {
  const auto path = ewcdet::test::config_path("toy_benchmark.json");
  ::setenv(kSeedEnvVar, "42", 1);
  EXPECT_EQ(load_experiment_config(path).train.seed, 42u);
  EXPECT_NE(load_experiment_config(path, false).train.seed, 42u);
  ::setenv(kSeedEnvVar, "forty-two", 1);
  EXPECT_THROW(load_experiment_config(path), InvalidArgument);
  ::unsetenv(kSeedEnvVar);
}

TEST(Config, DomainSpecJsonRoundTrip) {
  const auto spec = ewcdet::test::domain_b();
  EXPECT_EQ(parse_domain_spec(to_json_string(spec)), spec);
  const auto cfg = load_experiment_config(ewcdet::test::config_path("toy_benchmark.json"), false);
  const auto again = parse_experiment_config(to_json_string(cfg), "/");
  EXPECT_EQ(again.train.lambda, cfg.train.lambda);
  EXPECT_EQ(again.sweep_lambdas, cfg.sweep_lambdas);
  EXPECT_EQ(again.arch, cfg.arch);
}

TEST(Benchmark, SaveLoadMatchesGenerated) {
  TempDir dir("bench");
  BenchmarkData data;
  data.domain_a = ewcdet::test::config_path("domain_a.json");
  data.domain_b = ewcdet::test::config_path("domain_b.json");
  data.train_count = 4;
  data.test_count = 2;
  const auto bench = generate_benchmark(data, 5);
  save_benchmark(bench, dir.path());
  const auto back = load_benchmark(dir.path());
  EXPECT_EQ(corpus_hash(back.a.train), corpus_hash(bench.a.train));
  EXPECT_EQ(corpus_hash(back.b.test), corpus_hash(bench.b.test));
  EXPECT_EQ(bench.a.train.seed, domain_seed(5, 0));
  EXPECT_EQ(bench.b.train.seed, domain_seed(5, 1));
}

TEST(Report, FormatPercent) {
  EXPECT_EQ(format_percent(0.55485), "55.4850");
  EXPECT_EQ(format_percent(std::nullopt), "");
  EXPECT_EQ(format_percent(1e-4), "0.0100");
}

TEST(Report, EpochCurveContinuesAcrossPhases) {
  const auto r = fake_report(10);
  const auto l = lines(epoch_curve_csv(r));
  EXPECT_EQ(l.at(0), "arm,epoch,mr2_A,mr2_B");
  std::map<std::string, std::vector<int>> epochs;
  for (std::size_t i = 1; i < l.size(); ++i) {
    std::istringstream row(l[i]);
    std::string arm, epoch;
    std::getline(row, arm, ',');
    std::getline(row, epoch, ',');
    epochs[arm].push_back(std::stoi(epoch));
  }
  ASSERT_EQ(epochs["train"].size(), 10u);
  EXPECT_EQ(epochs["train"].front(), 1);
  EXPECT_EQ(epochs["train"].back(), 10);
  for (const char* arm : {"baseline", "proposed"}) {
    ASSERT_EQ(epochs[arm].size(), 10u) << arm;
    EXPECT_EQ(epochs[arm].front(), 11) << arm;
    EXPECT_EQ(epochs[arm].back(), 20) << arm;
  }
}

TEST(Report, CsvHeaders) {
  const auto r = fake_report(2);
  EXPECT_EQ(lines(mr2_table_csv(r)).at(0), "stage,train_domain,test_domain,reasonable,bare,partial,heavy");
  EXPECT_EQ(lines(forgetting_csv(r)).at(0),
            "arm,test_domain,bucket,mr2_before,mr2_after,absolute_increase,percent_increase");
  EXPECT_EQ(lines(improvement_csv(r)).at(0), "test_domain,bucket,baseline,proposed,improvement");
  EXPECT_EQ(lines(train_log_csv(r.reference.log)).at(0), "epoch,l_cls,l_reg,l_ewc,l_total,mr2_A,mr2_B");
  const std::vector<SweepRow> rows{{0.0, 0.5, 0.2, 1.0}, {3.0, 0.4, 0.25, 0.5}};
  const auto sweep = lines(sweep_csv(rows));
  EXPECT_EQ(sweep.at(0), "# recommended_lambda=3");
  EXPECT_EQ(sweep.at(1), "lambda,mr2_A,mr2_B,drift");
  EXPECT_EQ(sweep.size(), 4u);
}

TEST(Report, ForgettingRowsUsePercentIncrease) {
  const auto r = fake_report(2);
  bool found = false;
  for (const auto& l : lines(forgetting_csv(r))) {
    if (l.rfind("baseline,A,Reasonable,", 0) != 0) continue;
    found = true;
    // 0.4 -> 0.6 is +20 points, +50%.
    EXPECT_EQ(l, "baseline,A,Reasonable,40.0000,60.0000,20.0000,50.00");
  }
  EXPECT_TRUE(found);
}

TEST(Report, SvgIsWellFormed) {
  const auto svg = epoch_curve_svg(fake_report(3), 'A');
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
}
