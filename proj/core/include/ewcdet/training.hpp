#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ewcdet/consolidation.hpp"
#include "ewcdet/detector.hpp"
#include "ewcdet/evaluation.hpp"
#include "ewcdet/losses.hpp"
#include "ewcdet/synthdata.hpp"

namespace ewcdet {

/// Optimizer and phase settings. Defaults are the published operating
/// point for the full-size detector.
struct TrainConfig {
  double learning_rate = 5e-3;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int epochs = 10;
  std::size_t batch_size = 8;
  double g_max = 20.0;
  double lambda = 1e-6;
  std::uint64_t seed = 0;
  FisherMode fisher_mode = FisherMode::squared;

  void validate() const;
};

struct OptimizerState {
  std::vector<double> velocity;
  std::size_t step_count = 0;

  static OptimizerState zeros(std::size_t k) { return {std::vector<double>(k, 0.0), 0}; }
};

struct EpochRecord {
  int epoch = 0;
  LossReport mean_loss;
  std::optional<EvalReport> eval_a;
  std::optional<EvalReport> eval_b;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  /// Global gradient norm of every applied step, before and after clipping.
  std::vector<double> pre_clip_norms;
  std::vector<double> post_clip_norms;
  std::size_t faults = 0;
};

double l2_norm(std::span<const double> v) noexcept;

/// Rescales to global L2 norm g_max when the norm exceeds it. The result's
/// recomputed norm never exceeds g_max. Throws TrainingFault on
/// non-finite input.
std::vector<double> clip_gradients(std::span<const double> grad, double g_max);

/// In-place SGD with momentum and coupled weight decay:
///   g' = grad + wd * theta;  v = mu * v + g';  theta -= lr * v
/// Leaves params and state untouched and throws TrainingFault if the
/// update would be non-finite.
void sgd_step(std::span<double> params, std::span<const double> grad, OptimizerState& opt,
              const TrainConfig& cfg);

/// Held-out splits evaluated after every epoch; either may be null.
struct Monitor {
  const Dataset* domain_a = nullptr;
  const Dataset* domain_b = nullptr;
};

struct PhaseResult {
  DetectorParams params;
  TrainLog log;
};

/// Runs cfg.epochs passes of loss_gradient -> clip_gradients -> sgd_step
/// over shuffled mini-batches. With consolidation states this is the
/// fine-tuning objective. Aborts after more than 3 consecutive faulted
/// steps.
PhaseResult train_phase(const Dataset& dataset, const TrainConfig& cfg, const DetectorParams& init,
                        const AnchorConfig& anchors, std::span<const ConsolidationState> states = {},
                        Monitor monitor = {});

struct DomainSplits {
  Dataset train;
  Dataset test;
};

/// Train and test splits of one domain from a single seed.
DomainSplits generate_splits(const DomainSpec& spec, std::size_t train_count, std::size_t test_count,
                             std::uint64_t seed);

/// Output of the first phase: parameters trained on domain A and their
/// consolidation state (lambda = cfg.lambda).
struct ReferenceModel {
  DetectorParams params;
  TrainLog log;
  ConsolidationState state;
};

struct ArmResult {
  std::string name;
  std::optional<double> lambda;  // nullopt for plain fine-tuning
  DetectorParams params;
  TrainLog log;
  EvalReport eval_a;
  EvalReport eval_b;
  double drift = 0.0;  // ||theta - theta_A||_2
};

enum class Arms { baseline, proposed, both };

struct ScenarioOptions {
  Arms arms = Arms::both;
  bool monitor_epochs = false;
};

struct ScenarioReport {
  ReferenceModel reference;
  EvalReport before_a;
  EvalReport before_b;
  std::optional<ArmResult> baseline;
  std::optional<ArmResult> proposed;
};

/// Seeds for the two phases, derived from cfg.seed.
std::uint64_t init_seed(const TrainConfig& cfg);
std::uint64_t phase_seed(const TrainConfig& cfg, int phase);

ReferenceModel train_reference(const DomainSplits& a, const TrainConfig& cfg, const AnchorConfig& anchors,
                               const Architecture& arch, Monitor monitor = {});

/// Fine-tunes the reference on domain B. nullopt lambda is plain
/// fine-tuning; otherwise the reference state is applied at that lambda.
ArmResult fine_tune_arm(const ReferenceModel& reference, const Dataset& test_a, const DomainSplits& b,
                        std::optional<double> lambda, const TrainConfig& cfg,
                        const AnchorConfig& anchors, Monitor monitor = {});

/// Train on A, evaluate both test sets, consolidate, then fine-tune on B
/// without (baseline) and with (proposed, cfg.lambda) the penalty.
ScenarioReport run_scenario(const DomainSplits& a, const DomainSplits& b, const TrainConfig& cfg,
                            const AnchorConfig& anchors, const Architecture& arch,
                            ScenarioOptions options = {});

struct SweepRow {
  double lambda = 0.0;
  std::optional<double> mr2_a;  // Reasonable
  std::optional<double> mr2_b;
  double drift = 0.0;
};

/// One fine-tune per lambda (ascending) sharing the reference snapshot and
/// importance.
std::vector<SweepRow> lambda_sweep(const ReferenceModel& reference, const Dataset& test_a,
                                   const DomainSplits& b, std::vector<double> lambdas,
                                   const TrainConfig& cfg, const AnchorConfig& anchors);
std::vector<SweepRow> lambda_sweep(const DomainSplits& a, const DomainSplits& b, std::vector<double> lambdas,
                                   const TrainConfig& cfg, const AnchorConfig& anchors,
                                   const Architecture& arch);

/// Per-lambda means over several sweeps of the same grid. A mean is empty
/// when any input is.
std::vector<SweepRow> pool_sweep_rows(std::span<const std::vector<SweepRow>> sweeps);

/// Lambda minimizing the mean of the two Reasonable MR^-2 values.
std::optional<double> recommended_lambda(std::span<const SweepRow> rows);

}  // namespace ewcdet
