#include "ewcdet/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ewcdet/error.hpp"
#include "ewcdet/rng.hpp"

namespace ewcdet {

namespace {

constexpr std::size_t kMaxConsecutiveFaults = 3;

std::vector<AnchorTargets> build_targets(const Dataset& dataset, const AnchorConfig& anchors) {
  const std::vector<Box> boxes = generate_anchors(anchors);
  std::vector<AnchorTargets> targets;
  targets.reserve(dataset.size());
  for (const auto& ann : dataset.annotations) {
    std::vector<Box> gts;
    gts.reserve(ann.size());
    for (const auto& g : ann) gts.push_back(g.box);
    targets.push_back(match_anchors(gts, boxes));
  }
  return targets;
}

double drift(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw InvalidArgument("weight_decay must be >= 0");
  if (!(g_max > 0.0)) throw InvalidArgument("g_max must be > 0");
  if (epochs < 1) throw InvalidArgument("epochs must be >= 1");
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (!(lambda >= 0.0)) throw InvalidArgument("lambda must be >= 0");
}

double l2_norm(std::span<const double> v) noexcept {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

std::vector<double> clip_gradients(std::span<const double> grad, double g_max) {
  if (!(g_max > 0.0)) throw InvalidArgument("g_max must be > 0");
  const double norm = l2_norm(grad);
  if (!std::isfinite(norm)) throw TrainingFault("non-finite gradient", 0);
  std::vector<double> out(grad.begin(), grad.end());
  if (norm <= g_max) return out;
  double scale = g_max / norm;
  for (;;) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = grad[i] * scale;
    if (l2_norm(out) <= g_max) break;
    scale = std::nextafter(scale, 0.0);
  }
  return out;
}

void sgd_step(std::span<double> params, std::span<const double> grad, OptimizerState& opt,
              const TrainConfig& cfg) {
  if (params.size() != grad.size() || opt.velocity.size() != params.size())
    throw InvalidArgument("sgd_step: length mismatch");
  std::vector<double> velocity(params.size());
  std::vector<double> next(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i] + cfg.weight_decay * params[i];
    velocity[i] = cfg.momentum * opt.velocity[i] + g;
    next[i] = params[i] - cfg.learning_rate * velocity[i];
    if (!std::isfinite(next[i]) || !std::isfinite(velocity[i]))
      throw TrainingFault("non-finite parameter update", opt.step_count);
  }
  std::copy(next.begin(), next.end(), params.begin());
  opt.velocity = std::move(velocity);
  ++opt.step_count;
}

PhaseResult train_phase(const Dataset& dataset, const TrainConfig& cfg, const DetectorParams& init,
                        const AnchorConfig& anchors, std::span<const ConsolidationState> states,
                        Monitor monitor) {
  cfg.validate();
  if (dataset.size() == 0) throw InvalidArgument("cannot train on an empty dataset");
  init.validate();
  for (const auto& s : states) s.validate(init.size());

  const std::vector<AnchorTargets> targets = build_targets(dataset, anchors);
  PhaseResult result{init, {}};
  DetectorParams& params = result.params;
  OptimizerState opt = OptimizerState::zeros(params.size());
  std::vector<std::size_t> order(dataset.size());
  std::size_t step = 0;
  std::size_t consecutive_faults = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(cfg.seed, {static_cast<std::uint64_t>(epoch)});
    rng.shuffle(std::span<std::size_t>(order));

    LossReport sum;
    std::size_t applied = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++step) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      Batch batch;
      batch.id = step;
      for (std::size_t i = start; i < end; ++i)
        batch.samples.push_back({&dataset.images[order[i]], &targets[order[i]]});
      try {
        ObjectiveResult obj = evaluate_objective(params, batch, anchors, states);
        const double pre = l2_norm(obj.gradient);
        if (!std::isfinite(pre)) throw TrainingFault("non-finite gradient", step);
        const std::vector<double> clipped = clip_gradients(obj.gradient, cfg.g_max);
        sgd_step(params.values, clipped, opt, cfg);
        result.log.pre_clip_norms.push_back(pre);
        result.log.post_clip_norms.push_back(l2_norm(clipped));
        sum.l_cls += obj.report.l_cls;
        sum.l_reg += obj.report.l_reg;
        sum.l_task += obj.report.l_task;
        sum.l_ewc += obj.report.l_ewc;
        sum.l_total += obj.report.l_total;
        ++applied;
        consecutive_faults = 0;
      } catch (const TrainingFault& fault) {
        ++result.log.faults;
        if (++consecutive_faults > kMaxConsecutiveFaults)
          throw TrainingFault(std::string("training aborted after repeated faults: ") + fault.what(), step);
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    if (applied > 0) {
      const double inv = 1.0 / static_cast<double>(applied);
      rec.mean_loss = {sum.l_cls * inv, sum.l_reg * inv, sum.l_task * inv, sum.l_ewc * inv,
                       sum.l_total * inv};
    }
    if (monitor.domain_a != nullptr) rec.eval_a = evaluate(params, *monitor.domain_a, anchors);
    if (monitor.domain_b != nullptr) rec.eval_b = evaluate(params, *monitor.domain_b, anchors);
    result.log.epochs.push_back(std::move(rec));
  }
  return result;
}

DomainSplits generate_splits(const DomainSpec& spec, std::size_t train_count, std::size_t test_count,
                             std::uint64_t seed) {
  return {generate_domain(spec, train_count, seed, Split::train), generate_domain(spec, test_count, seed, Split::test)};
}

std::uint64_t init_seed(const TrainConfig& cfg) { return Rng(cfg.seed, {0x1a17}).next(); }

std::uint64_t phase_seed(const TrainConfig& cfg, int phase) {
  return Rng(cfg.seed, {0x9a5e, static_cast<std::uint64_t>(phase)}).next();
}

ReferenceModel train_reference(const DomainSplits& a, const TrainConfig& cfg, const AnchorConfig& anchors,
                               const Architecture& arch, Monitor monitor) {
  cfg.validate();
  TrainConfig phase = cfg;
  phase.seed = phase_seed(cfg, 1);
  PhaseResult trained = train_phase(a.train, phase, init_params(init_seed(cfg), arch), anchors, {}, monitor);
  ConsolidationState state = consolidate(trained.params, a.train, anchors, cfg.lambda, cfg.fisher_mode);
  return {std::move(trained.params), std::move(trained.log), std::move(state)};
}

ArmResult fine_tune_arm(const ReferenceModel& reference, const Dataset& test_a, const DomainSplits& b,
                        std::optional<double> lambda, const TrainConfig& cfg,
                        const AnchorConfig& anchors, Monitor monitor) {
  TrainConfig phase = cfg;
  phase.seed = phase_seed(cfg, 2);
  std::vector<ConsolidationState> states;
  if (lambda) {
    if (!(*lambda >= 0.0)) throw InvalidArgument("lambda must be >= 0");
    states.push_back(reference.state);
    states.back().lambda = *lambda;
  }
  PhaseResult tuned = train_phase(b.train, phase, reference.params, anchors, states, monitor);
  ArmResult arm;
  arm.name = lambda ? "proposed" : "baseline";
  arm.lambda = lambda;
  arm.eval_a = evaluate(tuned.params, test_a, anchors);
  arm.eval_b = evaluate(tuned.params, b.test, anchors);
  arm.drift = drift(tuned.params.values, reference.params.values);
  arm.params = std::move(tuned.params);
  arm.log = std::move(tuned.log);
  return arm;
}

ScenarioReport run_scenario(const DomainSplits& a, const DomainSplits& b, const TrainConfig& cfg,
                            const AnchorConfig& anchors, const Architecture& arch,
                            ScenarioOptions options) {
  const Monitor monitor = options.monitor_epochs ? Monitor{&a.test, &b.test} : Monitor{};
  ScenarioReport report;
  report.reference = train_reference(a, cfg, anchors, arch, monitor);
  report.before_a = evaluate(report.reference.params, a.test, anchors);
  report.before_b = evaluate(report.reference.params, b.test, anchors);
  if (options.arms != Arms::proposed)
    report.baseline = fine_tune_arm(report.reference, a.test, b, std::nullopt, cfg, anchors, monitor);
  if (options.arms != Arms::baseline)
    report.proposed = fine_tune_arm(report.reference, a.test, b, cfg.lambda, cfg, anchors, monitor);
  return report;
}

std::vector<SweepRow> lambda_sweep(const ReferenceModel& reference, const Dataset& test_a,
                                   const DomainSplits& b, std::vector<double> lambdas,
                                   const TrainConfig& cfg, const AnchorConfig& anchors) {
  for (double l : lambdas) {
    if (!(l >= 0.0)) throw InvalidArgument("sweep lambdas must be >= 0");
  }
  std::sort(lambdas.begin(), lambdas.end());
  std::vector<SweepRow> rows;
  for (double l : lambdas) {
    const ArmResult arm = fine_tune_arm(reference, test_a, b, l, cfg, anchors);
    rows.push_back({l, arm.eval_a.at(BucketId::reasonable), arm.eval_b.at(BucketId::reasonable), arm.drift});
  }
  return rows;
}

std::vector<SweepRow> lambda_sweep(const DomainSplits& a, const DomainSplits& b, std::vector<double> lambdas,
                                   const TrainConfig& cfg, const AnchorConfig& anchors,
                                   const Architecture& arch) {
  const ReferenceModel reference = train_reference(a, cfg, anchors, arch);
  return lambda_sweep(reference, a.test, b, std::move(lambdas), cfg, anchors);
}

std::vector<SweepRow> pool_sweep_rows(std::span<const std::vector<SweepRow>> sweeps) {
  if (sweeps.empty()) return {};
  const std::size_t n = sweeps.front().size();
  for (const auto& s : sweeps) {
    if (s.size() != n) throw InvalidArgument("sweeps cover different grids");
    for (std::size_t i = 0; i < n; ++i) {
      if (s[i].lambda != sweeps.front()[i].lambda) throw InvalidArgument("sweeps cover different grids");
    }
  }
  const double count = static_cast<double>(sweeps.size());
  auto mean = [&](std::size_t i, std::optional<double> SweepRow::*field) -> std::optional<double> {
    double sum = 0.0;
    for (const auto& s : sweeps) {
      if (!(s[i].*field)) return std::nullopt;
      sum += *(s[i].*field);
    }
    return sum / count;
  };
  std::vector<SweepRow> rows(n);
  for (std::size_t i = 0; i < n; ++i) {
    rows[i].lambda = sweeps.front()[i].lambda;
    rows[i].mr2_a = mean(i, &SweepRow::mr2_a);
    rows[i].mr2_b = mean(i, &SweepRow::mr2_b);
    for (const auto& s : sweeps) rows[i].drift += s[i].drift;
    rows[i].drift /= count;
  }
  return rows;
}

std::optional<double> recommended_lambda(std::span<const SweepRow> rows) {
  std::optional<double> best;
  double best_score = 0.0;
  for (const auto& r : rows) {
    if (!r.mr2_a || !r.mr2_b) continue;
    const double score = 0.5 * (*r.mr2_a + *r.mr2_b);
    if (!best || score < best_score) {
      best = r.lambda;
      best_score = score;
    }
  }
  return best;
}

}  // namespace ewcdet
