#include <benchmark/benchmark.h>

#include <map>

#include "ewcdet/config.hpp"
#include "ewcdet/detector.hpp"
#include "ewcdet/evaluation.hpp"
#include "ewcdet/losses.hpp"
#include "ewcdet/rng.hpp"
#include "ewcdet/training.hpp"

using namespace ewcdet;

namespace {

const Dataset& domain_a(std::size_t count) {
  static const DomainSpec spec = load_domain_spec(std::filesystem::path(EWCDET_SOURCE_DIR) / "configs/domain_a.json");
  static std::map<std::size_t, Dataset> cache;
  auto it = cache.find(count);
  if (it == cache.end()) it = cache.emplace(count, generate_domain(spec, count, 1, Split::test)).first;
  return it->second;
}

void BM_Forward(benchmark::State& state) {
  const AnchorConfig cfg;
  const auto params = init_params(1, Architecture{});
  const auto& img = domain_a(1).images[0];
  for (auto _ : state) benchmark::DoNotOptimize(forward(params, img, cfg));
}
BENCHMARK(BM_Forward)->Unit(benchmark::kMicrosecond);

void BM_ForwardBackwardBatch(benchmark::State& state) {
  const AnchorConfig cfg;
  const auto params = init_params(1, Architecture{});
  const auto batch_size = static_cast<std::size_t>(state.range(0));
  const auto& data = domain_a(batch_size);
  const auto anchors = generate_anchors(cfg);
  std::vector<AnchorTargets> targets;
  for (const auto& ann : data.annotations) {
    std::vector<Box> boxes;
    for (const auto& g : ann) boxes.push_back(g.box);
    targets.push_back(match_anchors(boxes, anchors));
  }
  Batch batch;
  for (std::size_t i = 0; i < batch_size; ++i) batch.samples.push_back({&data.images[i], &targets[i]});
  for (auto _ : state) benchmark::DoNotOptimize(loss_gradient(params, batch, cfg));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardBackwardBatch)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_Nms(benchmark::State& state) {
  Rng rng(3);
  std::vector<Detection> dets;
  for (std::size_t i = 0; i < static_cast<std::size_t>(state.range(0)); ++i) {
    const double x = rng.uniform(0, 100), y = rng.uniform(0, 60), h = rng.uniform(40, 90);
    dets.push_back({{x, y, x + 0.41 * h, y + h}, rng.uniform(), i});
  }
  for (auto _ : state) benchmark::DoNotOptimize(nms(dets, 0.5));
}
BENCHMARK(BM_Nms)->Arg(64)->Arg(192)->Unit(benchmark::kMicrosecond);

void BM_Mr2(benchmark::State& state) {
  const auto& data = domain_a(300);
  Rng rng(4);
  std::vector<std::vector<Detection>> dets(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (const auto& g : data.annotations[i]) {
      const double j = rng.uniform(-8, 8);
      dets[i].push_back({{g.box.x_min + j, g.box.y_min, g.box.x_max + j, g.box.y_max}, rng.uniform(), i});
    }
    for (int k = 0; k < 5; ++k) {
      const double x = rng.uniform(0, 100), y = rng.uniform(0, 60);
      dets[i].push_back({{x, y, x + 25, y + 60}, rng.uniform(), i});
    }
  }
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_detections(dets, data.annotations));
}
BENCHMARK(BM_Mr2)->Unit(benchmark::kMillisecond);

void BM_ClipGradients(benchmark::State& state) {
  Rng rng(5);
  std::vector<double> g(DetectorParams::zeros(Architecture{}).size());
  for (double& v : g) v = 10.0 * rng.normal();
  for (auto _ : state) benchmark::DoNotOptimize(clip_gradients(g, 20.0));
}
BENCHMARK(BM_ClipGradients)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
