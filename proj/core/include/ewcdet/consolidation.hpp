#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ewcdet/detector.hpp"
#include "ewcdet/synthdata.hpp"

namespace ewcdet {

/// How per-example log-loss gradients are accumulated into the importance
/// vector. `squared` averages g_i^2 (a Fisher diagonal); `as_printed`
/// averages the signed g_i.
enum class FisherMode { squared, as_printed };

std::string to_string(FisherMode mode);
FisherMode fisher_mode_from_string(const std::string& s);

/// Offset inside the log of the loss, removing the singularity at L = 0.
inline constexpr double kLogLossEpsilon = 1e-12;

/// Everything retained about a previously learned distribution: the
/// parameter snapshot, per-parameter importance, and penalty strength.
/// Immutable once built.
struct ConsolidationState {
  std::vector<double> snapshot;
  std::vector<double> fisher;
  double lambda = 0.0;
  std::string source_dataset_id;
  std::size_t sample_count = 0;
  FisherMode mode = FisherMode::squared;

  std::size_t size() const noexcept { return snapshot.size(); }
  /// Throws InvalidArgument unless lengths equal `k`, lambda >= 0 and, in
  /// squared mode, fisher >= 0.
  void validate(std::size_t k) const;
};

struct FisherEstimate {
  std::vector<double> values;
  std::size_t sample_count = 0;  // examples that contributed
  std::size_t skipped = 0;       // examples dropped for non-finite gradients
};

/// Per-example loss value and gradient at the snapshot. Return a
/// non-finite loss or gradient to mark the example as unusable.
using ExampleLossFn = std::function<void(std::size_t example, double& loss, std::vector<double>& grad)>;

/// Averages d log(L + eps)/d theta over `n` examples. Throws
/// InvalidArgument for n == 0 and TrainingFault when more than 1% of the
/// examples have to be skipped.
FisherEstimate accumulate_fisher(std::size_t k, std::size_t n, const ExampleLossFn& example_loss,
                                 FisherMode mode);

/// Importance of every parameter for `dataset`, one example per gradient.
FisherEstimate compute_fisher(const DetectorParams& params, const Dataset& dataset,
                              const AnchorConfig& config, FisherMode mode);

ConsolidationState consolidate(const DetectorParams& params, const Dataset& dataset,
                               const AnchorConfig& config, double lambda, FisherMode mode);

/// sum_i (lambda / 2) * F_i * (theta_i - snapshot_i)^2
double ewc_penalty(std::span<const double> theta, const ConsolidationState& state);
double ewc_penalty(std::span<const double> theta, std::span<const ConsolidationState> states);
inline double ewc_penalty(const DetectorParams& params, const ConsolidationState& state) {
  return ewc_penalty(params.values, state);
}

/// Adds lambda * F_i * (theta_i - snapshot_i) to grad[i].
void add_ewc_gradient(std::span<const double> theta, const ConsolidationState& state,
                      std::span<double> grad);

}  // namespace ewcdet
