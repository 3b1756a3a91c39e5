#include "ewcdet/losses.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "ewcdet/error.hpp"

namespace ewcdet {

namespace {

// log(1 + e^x) without overflow.
double softplus(double x) noexcept { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

struct ImageTerms {
  std::unique_ptr<ForwardPass> pass;
  std::vector<std::size_t> negatives;  // mined, hardest first
};

std::vector<std::size_t> mine_negatives(const AnchorTargets& targets, std::span<const double> logits) {
  std::vector<std::size_t> negatives;
  for (std::size_t a = 0; a < targets.labels.size(); ++a) {
    if (targets.labels[a] == AnchorLabel::negative) negatives.push_back(a);
  }
  const std::size_t positives = targets.positives.size();
  const std::size_t wanted =
      std::min({positives > 0 ? kNegativesPerPositive * positives : negatives.size(), kMaxNegatives,
                negatives.size()});
  // BCE of a negative is softplus(z), monotone in z: hardest = largest logit.
  std::stable_sort(negatives.begin(), negatives.end(),
                   [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
  negatives.resize(wanted);
  return negatives;
}

}  // namespace

double smooth_l1(double x) noexcept {
  const double ax = std::abs(x);
  return ax < kSmoothL1Beta ? 0.5 * x * x / kSmoothL1Beta : ax - 0.5 * kSmoothL1Beta;
}

double smooth_l1_derivative(double x) noexcept {
  if (std::abs(x) < kSmoothL1Beta) return x / kSmoothL1Beta;
  return x > 0.0 ? 1.0 : -1.0;
}

AnchorTargets match_anchors(std::span<const Box> gt_boxes, std::span<const Box> anchors) {
  AnchorTargets t;
  t.labels.assign(anchors.size(), AnchorLabel::negative);
  if (gt_boxes.empty()) return t;

  std::vector<double> best_iou(anchors.size(), 0.0);
  std::vector<std::size_t> best_gt(anchors.size(), 0);
  std::vector<double> gt_best_iou(gt_boxes.size(), 0.0);
  std::vector<std::size_t> gt_best_anchor(gt_boxes.size(), 0);
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
      const double v = iou(anchors[a], gt_boxes[g]);
      if (v > best_iou[a]) {
        best_iou[a] = v;
        best_gt[a] = g;
      }
      if (v > gt_best_iou[g]) {
        gt_best_iou[g] = v;
        gt_best_anchor[g] = a;
      }
    }
  }
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    if (best_iou[a] >= kPositiveIou) {
      t.labels[a] = AnchorLabel::positive;
    } else if (best_iou[a] >= kNegativeIou) {
      t.labels[a] = AnchorLabel::ignore;
    }
  }
  for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
    if (gt_best_iou[g] > 0.0) t.labels[gt_best_anchor[g]] = AnchorLabel::positive;
  }
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    if (t.labels[a] != AnchorLabel::positive) continue;
    t.positives.push_back(a);
    t.reg_targets.push_back(encode_box(gt_boxes[best_gt[a]], anchors[a]));
  }
  return t;
}

LossReport combine_losses(const LossReport& task, double l_ewc) {
  LossReport r = task;
  r.l_task = r.l_cls + r.l_reg;
  r.l_ewc = l_ewc;
  r.l_total = r.l_task + l_ewc;
  return r;
}

ObjectiveResult evaluate_objective(const DetectorParams& params, const Batch& batch,
                                   const AnchorConfig& config,
                                   std::span<const ConsolidationState> states, bool want_gradient) {
  if (batch.samples.empty()) throw InvalidArgument("empty batch");
  const std::size_t anchor_count = config.anchor_count();

  std::vector<ImageTerms> terms;
  terms.reserve(batch.samples.size());
  double cls_sum = 0.0, reg_sum = 0.0;
  std::size_t cls_count = 0, pos_count = 0;

  for (const SampleView& s : batch.samples) {
    if (s.image == nullptr || s.targets == nullptr) throw InvalidArgument("batch sample is missing data");
    const AnchorTargets& tg = *s.targets;
    if (tg.labels.size() != anchor_count || tg.positives.size() != tg.reg_targets.size())
      throw InvalidArgument("anchor targets do not match the anchor config");
    auto pass = std::make_unique<ForwardPass>(params, *s.image, config);
    const RawPrediction& pred = pass->prediction();
    for (std::size_t a = 0; a < anchor_count; ++a) {
      bool finite = std::isfinite(pred.logits[a]);
      for (double v : pred.deltas[a]) finite = finite && std::isfinite(v);
      if (!finite) throw TrainingFault("non-finite activations in batch", batch.id);
    }

    for (std::size_t j = 0; j < tg.positives.size(); ++j) {
      const std::size_t a = tg.positives[j];
      cls_sum += softplus(-pred.logits[a]);
      for (int c = 0; c < 4; ++c) reg_sum += smooth_l1(pred.deltas[a][c] - tg.reg_targets[j][c]);
    }
    ImageTerms it{std::move(pass), mine_negatives(tg, pred.logits)};
    for (std::size_t a : it.negatives) cls_sum += softplus(pred.logits[a]);
    cls_count += tg.positives.size() + it.negatives.size();
    pos_count += tg.positives.size();
    terms.push_back(std::move(it));
  }

  ObjectiveResult out;
  LossReport task;
  task.l_cls = cls_count > 0 ? cls_sum / static_cast<double>(cls_count) : 0.0;
  task.l_reg = pos_count > 0 ? reg_sum / static_cast<double>(pos_count) : 0.0;

  double l_ewc = 0.0;
  for (const auto& st : states) l_ewc += ewc_penalty(params.values, st);
  out.report = combine_losses(task, l_ewc);
  if (!std::isfinite(out.report.l_total)) throw TrainingFault("non-finite loss in batch", batch.id);
  if (!want_gradient) return out;

  out.gradient.assign(params.size(), 0.0);
  const double cls_scale = cls_count > 0 ? 1.0 / static_cast<double>(cls_count) : 0.0;
  const double reg_scale = pos_count > 0 ? 1.0 / static_cast<double>(pos_count) : 0.0;
  std::vector<double> d_logits(anchor_count);
  std::vector<BoxDelta> d_deltas(anchor_count);
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const AnchorTargets& tg = *batch.samples[i].targets;
    const RawPrediction& pred = terms[i].pass->prediction();
    std::fill(d_logits.begin(), d_logits.end(), 0.0);
    std::fill(d_deltas.begin(), d_deltas.end(), BoxDelta{});
    for (std::size_t j = 0; j < tg.positives.size(); ++j) {
      const std::size_t a = tg.positives[j];
      d_logits[a] = (sigmoid(pred.logits[a]) - 1.0) * cls_scale;
      for (int c = 0; c < 4; ++c)
        d_deltas[a][c] = smooth_l1_derivative(pred.deltas[a][c] - tg.reg_targets[j][c]) * reg_scale;
    }
    for (std::size_t a : terms[i].negatives) d_logits[a] = sigmoid(pred.logits[a]) * cls_scale;
    terms[i].pass->backward(d_logits, d_deltas, out.gradient);
  }
  for (const auto& st : states) add_ewc_gradient(params.values, st, out.gradient);
  return out;
}

LossReport detection_loss(const DetectorParams& params, const Batch& batch, const AnchorConfig& config) {
  return evaluate_objective(params, batch, config, {}, false).report;
}

std::vector<double> loss_gradient(const DetectorParams& params, const Batch& batch,
                                  const AnchorConfig& config,
                                  std::span<const ConsolidationState> states) {
  return evaluate_objective(params, batch, config, states, true).gradient;
}

LossReport total_loss(const DetectorParams& params, const Batch& batch, const AnchorConfig& config,
                      std::span<const ConsolidationState> states) {
  for (const auto& st : states) st.validate(params.size());
  return evaluate_objective(params, batch, config, states, false).report;
}

}  // namespace ewcdet
