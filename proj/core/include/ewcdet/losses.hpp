#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ewcdet/box.hpp"
#include "ewcdet/consolidation.hpp"
#include "ewcdet/detector.hpp"

namespace ewcdet {

inline constexpr double kPositiveIou = 0.5;
inline constexpr double kNegativeIou = 0.4;
inline constexpr std::size_t kNegativesPerPositive = 3;
inline constexpr std::size_t kMaxNegatives = 64;
inline constexpr double kSmoothL1Beta = 1.0;

enum class AnchorLabel : std::uint8_t { negative, positive, ignore };

/// Ground truth mapped onto the anchor set. `reg_targets[j]` is the
/// encoded box for anchor `positives[j]`.
struct AnchorTargets {
  std::vector<AnchorLabel> labels;
  std::vector<std::size_t> positives;
  std::vector<BoxDelta> reg_targets;
};

/// An anchor is positive when its IoU with some box is >= 0.5 or when it is
/// the best anchor of some box (ties to the lower index); negative when its
/// best IoU is < 0.4; ignored otherwise. Each positive regresses toward
/// its highest-IoU box (ties to the lower box index).
AnchorTargets match_anchors(std::span<const Box> gt_boxes, std::span<const Box> anchors);

struct SampleView {
  const Image* image = nullptr;
  const AnchorTargets* targets = nullptr;
};

struct Batch {
  std::vector<SampleView> samples;
  std::size_t id = 0;
};

struct LossReport {
  double l_cls = 0.0;
  double l_reg = 0.0;
  double l_task = 0.0;
  double l_ewc = 0.0;
  double l_total = 0.0;
};

struct ObjectiveResult {
  LossReport report;
  std::vector<double> gradient;
};

/// Task loss and its exact gradient, plus the EWC terms of every supplied
/// state. Per-image contributions are reduced in batch order.
ObjectiveResult evaluate_objective(const DetectorParams& params, const Batch& batch,
                                   const AnchorConfig& config,
                                   std::span<const ConsolidationState> states = {},
                                   bool want_gradient = true);

/// Cross-entropy over positives and mined negatives plus smooth-L1 over
/// positives. l_ewc is zero.
LossReport detection_loss(const DetectorParams& params, const Batch& batch, const AnchorConfig& config);

std::vector<double> loss_gradient(const DetectorParams& params, const Batch& batch,
                                  const AnchorConfig& config,
                                  std::span<const ConsolidationState> states = {});
inline std::vector<double> loss_gradient(const DetectorParams& params, const Batch& batch,
                                         const AnchorConfig& config,
                                         const ConsolidationState& state) {
  return loss_gradient(params, batch, config, std::span<const ConsolidationState>(&state, 1));
}

LossReport total_loss(const DetectorParams& params, const Batch& batch, const AnchorConfig& config,
                      std::span<const ConsolidationState> states);
inline LossReport total_loss(const DetectorParams& params, const Batch& batch,
                             const AnchorConfig& config, const ConsolidationState& state) {
  return total_loss(params, batch, config, std::span<const ConsolidationState>(&state, 1));
}

/// Adds the EWC penalty to a task-only report.
LossReport combine_losses(const LossReport& task, double l_ewc);

double smooth_l1(double x) noexcept;
double smooth_l1_derivative(double x) noexcept;

}  // namespace ewcdet
