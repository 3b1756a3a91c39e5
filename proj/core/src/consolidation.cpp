#include "ewcdet/consolidation.hpp"

#include <cmath>
#include <limits>

#include "ewcdet/error.hpp"
#include "ewcdet/losses.hpp"

namespace ewcdet {

std::string to_string(FisherMode mode) { return mode == FisherMode::squared ? "squared" : "as_printed"; }

FisherMode fisher_mode_from_string(const std::string& s) {
  if (s == "squared") return FisherMode::squared;
  if (s == "as_printed") return FisherMode::as_printed;
  throw InvalidArgument("unknown fisher mode: " + s);
}

void ConsolidationState::validate(std::size_t k) const {
  if (snapshot.size() != k || fisher.size() != k)
    throw InvalidArgument("consolidation state has length " + std::to_string(snapshot.size()) + "/" +
                          std::to_string(fisher.size()) + ", model has " + std::to_string(k));
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidArgument("lambda must be finite and >= 0");
  for (std::size_t i = 0; i < k; ++i) {
    if (!std::isfinite(snapshot[i]) || !std::isfinite(fisher[i]))
      throw InvalidArgument("consolidation state holds non-finite values");
    if (mode == FisherMode::squared && fisher[i] < 0.0)
      throw InvalidArgument("squared-mode importance must be non-negative");
  }
}

FisherEstimate accumulate_fisher(std::size_t k, std::size_t n, const ExampleLossFn& example_loss,
                                 FisherMode mode) {
  if (n == 0) throw InvalidArgument("cannot estimate importance from an empty dataset");
  FisherEstimate est;
  est.values.assign(k, 0.0);
  std::vector<double> grad;
  for (std::size_t i = 0; i < n; ++i) {
    double loss = 0.0;
    grad.assign(k, 0.0);
    example_loss(i, loss, grad);
    bool usable = grad.size() == k && std::isfinite(loss) && loss + kLogLossEpsilon > 0.0;
    for (std::size_t j = 0; usable && j < k; ++j) usable = std::isfinite(grad[j]);
    if (!usable) {
      ++est.skipped;
      continue;
    }
    // d log(L + eps) / d theta = grad L / (L + eps)
    const double inv = 1.0 / (loss + kLogLossEpsilon);
    for (std::size_t j = 0; j < k; ++j) {
      const double g = grad[j] * inv;
      est.values[j] += mode == FisherMode::squared ? g * g : g;
    }
    ++est.sample_count;
  }
  if (est.skipped * 100 > n || est.sample_count == 0)
    throw TrainingFault("too many non-finite gradients while estimating importance", est.skipped);
  const double scale = 1.0 / static_cast<double>(est.sample_count);
  for (double& v : est.values) v *= scale;
  return est;
}

FisherEstimate compute_fisher(const DetectorParams& params, const Dataset& dataset,
                              const AnchorConfig& config, FisherMode mode) {
  if (dataset.size() == 0) throw InvalidArgument("cannot estimate importance from an empty dataset");
  const std::vector<Box> anchors = generate_anchors(config);
  auto example = [&](std::size_t i, double& loss, std::vector<double>& grad) {
    std::vector<Box> gts;
    for (const auto& g : dataset.annotations[i]) gts.push_back(g.box);
    const AnchorTargets targets = match_anchors(gts, anchors);
    Batch batch{{SampleView{&dataset.images[i], &targets}}, i};
    try {
      ObjectiveResult r = evaluate_objective(params, batch, config);
      loss = r.report.l_task;
      grad = std::move(r.gradient);
    } catch (const TrainingFault&) {
      loss = std::numeric_limits<double>::quiet_NaN();
    }
  };
  return accumulate_fisher(params.size(), dataset.size(), example, mode);
}

ConsolidationState consolidate(const DetectorParams& params, const Dataset& dataset,
                               const AnchorConfig& config, double lambda, FisherMode mode) {
  if (!(lambda >= 0.0)) throw InvalidArgument("lambda must be >= 0");
  FisherEstimate est = compute_fisher(params, dataset, config, mode);
  ConsolidationState state;
  state.snapshot = params.values;
  state.fisher = std::move(est.values);
  state.lambda = lambda;
  state.source_dataset_id = dataset.domain_id + "/" + to_string(dataset.split);
  state.sample_count = est.sample_count;
  state.mode = mode;
  return state;
}

double ewc_penalty(std::span<const double> theta, const ConsolidationState& state) {
  if (theta.size() != state.snapshot.size() || theta.size() != state.fisher.size())
    throw InvalidArgument("ewc_penalty: parameter length does not match the consolidation state");
  double sum = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double d = theta[i] - state.snapshot[i];
    sum += state.fisher[i] * d * d;
  }
  return 0.5 * state.lambda * sum;
}

double ewc_penalty(std::span<const double> theta, std::span<const ConsolidationState> states) {
  double total = 0.0;
  for (const auto& s : states) total += ewc_penalty(theta, s);
  return total;
}

void add_ewc_gradient(std::span<const double> theta, const ConsolidationState& state,
                      std::span<double> grad) {
  if (theta.size() != state.snapshot.size() || grad.size() != theta.size() ||
      state.fisher.size() != theta.size())
    throw InvalidArgument("add_ewc_gradient: length mismatch");
  for (std::size_t i = 0; i < theta.size(); ++i)
    grad[i] += state.lambda * state.fisher[i] * (theta[i] - state.snapshot[i]);
}

}  // namespace ewcdet
