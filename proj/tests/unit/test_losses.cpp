#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "ewcdet/consolidation.hpp"
#include "ewcdet/error.hpp"
#include "ewcdet/losses.hpp"
#include "ewcdet/rng.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace ewcdet;
using ewcdet::test::make_batch;
using ewcdet::test::random_state;
using ewcdet::test::rel_err;

namespace {

Image flat_image(std::uint8_t v = 128) { return {128, 128, std::vector<std::uint8_t>(128 * 128, v)}; }

AnchorTargets all_labeled(AnchorLabel label) {
  AnchorTargets t;
  t.labels.assign(AnchorConfig{}.anchor_count(), label);
  return t;
}

struct ToyProblem {
  AnchorConfig cfg;
  Dataset data;
  DetectorParams params;
};

ToyProblem toy_problem() {
  ToyProblem t;
  t.data = generate_domain(ewcdet::test::domain_a(), 2, 31);
  t.params = init_params(17, Architecture{});
  return t;
}

}  // namespace

TEST(MatchAnchors, IdenticalAnchorIsPositiveWithZeroTarget) {
  const auto anchors = generate_anchors(AnchorConfig{});
  const Box gt = anchors[100];
  const auto t = match_anchors(std::span<const Box>(&gt, 1), anchors);
  EXPECT_EQ(t.labels[100], AnchorLabel::positive);
  const auto it = std::find(t.positives.begin(), t.positives.end(), 100u);
  ASSERT_NE(it, t.positives.end());
  const auto& target = t.reg_targets[static_cast<std::size_t>(it - t.positives.begin())];
  for (double v : target) EXPECT_EQ(v, 0.0);
}

TEST(MatchAnchors, NoGroundTruthMeansAllNegative) {
  const auto anchors = generate_anchors(AnchorConfig{});
  const auto t = match_anchors({}, anchors);
  ASSERT_EQ(t.labels.size(), anchors.size());
  for (auto l : t.labels) EXPECT_EQ(l, AnchorLabel::negative);
  EXPECT_TRUE(t.positives.empty());
  EXPECT_TRUE(t.reg_targets.empty());
}

TEST(MatchAnchors, MatchesExhaustiveRules) {
  AnchorConfig cfg;
  cfg.image_size = 32;
  cfg.grid_stride = 16;
  cfg.anchor_heights = {8, 16};
  cfg.anchor_aspect_ratios = {0.5, 1.0};
  const auto anchors = generate_anchors(cfg);
  ASSERT_EQ(anchors.size(), 16u);

  Rng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<Box> gts;
    for (int g = 0; g < 3; ++g) {
      const double w = rng.uniform(3, 18), h = rng.uniform(4, 20);
      const double x = rng.uniform(0, 32 - w), y = rng.uniform(0, 32 - h);
      gts.push_back({x, y, x + w, y + h});
    }
    const auto t = match_anchors(gts, anchors);

    std::vector<AnchorLabel> expected(16);
    std::vector<std::size_t> target_gt(16);
    for (std::size_t a = 0; a < 16; ++a) {
      double best = -1;
      for (std::size_t g = 0; g < 3; ++g) {
        const double v = iou(anchors[a], gts[g]);
        if (v > best) best = v, target_gt[a] = g;
      }
      bool forced = false;
      for (std::size_t g = 0; g < 3; ++g) {
        std::size_t arg = 0;
        for (std::size_t b = 1; b < 16; ++b)
          if (iou(anchors[b], gts[g]) > iou(anchors[arg], gts[g])) arg = b;
        if (arg == a && iou(anchors[a], gts[g]) > 0.0) forced = true;
      }
      if (best >= 0.5 || forced)
        expected[a] = AnchorLabel::positive;
      else if (best < 0.4)
        expected[a] = AnchorLabel::negative;
      else
        expected[a] = AnchorLabel::ignore;
    }
    ASSERT_EQ(t.labels, expected) << "trial " << trial;
    ASSERT_EQ(t.positives.size(), t.reg_targets.size());
    for (std::size_t j = 0; j < t.positives.size(); ++j) {
      const std::size_t a = t.positives[j];
      const BoxDelta want = encode_box(gts[target_gt[a]], anchors[a]);
      for (int c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(t.reg_targets[j][c], want[c]);
    }
  }
}

TEST(DetectionLoss, SinglePositiveAtZeroLogit) {
  const AnchorConfig cfg;
  const Image img = flat_image();
  AnchorTargets t = all_labeled(AnchorLabel::ignore);
  t.labels[10] = AnchorLabel::positive;
  t.positives = {10};
  t.reg_targets = {BoxDelta{0.5, 0, 0, 0}};
  const Batch batch{{SampleView{&img, &t}}, 0};
  const auto r = detection_loss(DetectorParams::zeros(Architecture{}), batch, cfg);
  EXPECT_DOUBLE_EQ(r.l_cls, std::numbers::ln2);
  EXPECT_DOUBLE_EQ(r.l_reg, 0.125);
  EXPECT_DOUBLE_EQ(r.l_task, r.l_cls + r.l_reg);
  EXPECT_EQ(r.l_ewc, 0.0);
}

TEST(DetectionLoss, NoPositivesMeansNoRegression) {
  const Image img = flat_image();
  const AnchorTargets t = all_labeled(AnchorLabel::negative);
  const Batch batch{{SampleView{&img, &t}}, 0};
  const auto r = detection_loss(init_params(2, Architecture{}), batch, AnchorConfig{});
  EXPECT_EQ(r.l_reg, 0.0);
  EXPECT_GT(r.l_cls, 0.0);
}

TEST(DetectionLoss, SmoothL1Regions) {
  EXPECT_DOUBLE_EQ(smooth_l1(0.5), 0.125);
  EXPECT_DOUBLE_EQ(smooth_l1(-0.5), 0.125);
  EXPECT_DOUBLE_EQ(smooth_l1(3.0), 2.5);
  EXPECT_DOUBLE_EQ(smooth_l1_derivative(0.5), 0.5);
  EXPECT_DOUBLE_EQ(smooth_l1_derivative(-3.0), -1.0);
}

TEST(DetectionLoss, EmptyBatchRejected) {
  EXPECT_THROW(detection_loss(init_params(1, Architecture{}), Batch{}, AnchorConfig{}), InvalidArgument);
}

TEST(DetectionLoss, ReportInvariants) {
  auto t = toy_problem();
  auto h = make_batch(t.data, t.cfg, 0, 2);
  const auto state = random_state(t.params.values, 0.7, 3);
  const auto r = total_loss(t.params, h.batch, t.cfg, state);
  EXPECT_DOUBLE_EQ(r.l_task, r.l_cls + r.l_reg);
  EXPECT_DOUBLE_EQ(r.l_total, r.l_task + r.l_ewc);
  EXPECT_DOUBLE_EQ(r.l_ewc, ewc_penalty(t.params.values, state));
  EXPECT_TRUE(std::isfinite(r.l_total));
}

TEST(TotalLoss, ZeroLambdaIsTaskLoss) {
  auto t = toy_problem();
  auto h = make_batch(t.data, t.cfg, 0, 2);
  const auto state = random_state(t.params.values, 0.0, 4);
  const auto task = detection_loss(t.params, h.batch, t.cfg);
  const auto r = total_loss(t.params, h.batch, t.cfg, state);
  EXPECT_EQ(r.l_total, task.l_task);
}

TEST(TotalLoss, AtSnapshotPenaltyVanishes) {
  auto t = toy_problem();
  auto h = make_batch(t.data, t.cfg, 0, 2);
  auto state = random_state(t.params.values, 5.0, 4);
  state.snapshot = t.params.values;
  const auto r = total_loss(t.params, h.batch, t.cfg, state);
  EXPECT_EQ(r.l_ewc, 0.0);
  EXPECT_EQ(r.l_total, r.l_task);
}

TEST(TotalLoss, HandCase) {
  ConsolidationState s;
  s.lambda = 2.0;
  s.fisher = {3.0};
  s.snapshot = {0.0};
  const std::vector<double> theta{2.0};
  const auto r = combine_losses(LossReport{1.0, 0.0, 1.0, 0.0, 1.0}, ewc_penalty(theta, s));
  EXPECT_DOUBLE_EQ(r.l_total, 13.0);
}

TEST(TotalLoss, RejectsMismatchedState) {
  auto t = toy_problem();
  auto h = make_batch(t.data, t.cfg, 0, 1);
  ConsolidationState s;
  s.snapshot = {1.0};
  s.fisher = {1.0};
  EXPECT_THROW(total_loss(t.params, h.batch, t.cfg, s), InvalidArgument);
}

TEST(LossGradient, ZeroLambdaStateIsInert) {
  auto t = toy_problem();
  auto h = make_batch(t.data, t.cfg, 0, 2);
  const auto state = random_state(t.params.values, 0.0, 8);
  EXPECT_EQ(loss_gradient(t.params, h.batch, t.cfg), loss_gradient(t.params, h.batch, t.cfg, state));
}

TEST(LossGradient, AtSnapshotEqualsTaskGradient) {
  auto t = toy_problem();
  auto h = make_batch(t.data, t.cfg, 0, 2);
  auto state = random_state(t.params.values, 3.0, 8);
  state.snapshot = t.params.values;
  EXPECT_EQ(loss_gradient(t.params, h.batch, t.cfg), loss_gradient(t.params, h.batch, t.cfg, state));
}

TEST(LossGradient, PenaltyGradientClosedForm) {
  Rng rng(9);
  const std::size_t k = 200;
  std::vector<double> theta(k);
  for (double& v : theta) v = rng.normal();
  const auto state = random_state(theta, 1.7, 10);
  std::vector<double> grad(k, 0.0);
  add_ewc_gradient(theta, state, grad);
  for (std::size_t i = 0; i < k; ++i) {
    const double want = state.lambda * state.fisher[i] * (theta[i] - state.snapshot[i]);
    EXPECT_LE(rel_err(grad[i], want), 1e-9) << i;
  }
}

// Central differences of l_total against the analytic gradient, with and
// without a consolidation state in the objective.
class FiniteDifference : public ::testing::TestWithParam<bool> {};

TEST_P(FiniteDifference, MatchesAnalyticGradient) {
  const bool with_state = GetParam();
  auto t = toy_problem();
  auto h = make_batch(t.data, t.cfg, 0, 2);
  std::vector<ConsolidationState> states;
  if (with_state) states.push_back(random_state(t.params.values, 0.8, 12));

  const auto grad = loss_gradient(t.params, h.batch, t.cfg, states);
  Rng rng(with_state ? 101 : 100);
  const double delta = 1e-4;
  int checked = 0, attempts = 0;
  while (checked < 24 && attempts < 5000) {
    ++attempts;
    const auto i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(t.params.size()) - 1));
    // Coordinates with no gradient carry no information about the backward pass.
    if (std::abs(grad[i]) < 1e-6) continue;
    const double numeric = ewcdet::test::fd_total_loss(t.params, h.batch, t.cfg, states, i, delta);
    EXPECT_LE(rel_err(grad[i], numeric), 1e-3) << "coordinate " << i << " analytic " << grad[i]
                                               << " numeric " << numeric;
    ++checked;
  }
  EXPECT_GE(checked, 20);
}

INSTANTIATE_TEST_SUITE_P(Objective, FiniteDifference, ::testing::Values(false, true),
                         [](const auto& info) { return info.param ? "TaskPlusPenalty" : "TaskOnly"; });
