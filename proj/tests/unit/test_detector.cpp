#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "ewcdet/detector.hpp"
#include "ewcdet/error.hpp"
#include "ewcdet/rng.hpp"

using namespace ewcdet;

namespace {

AnchorConfig tiny_anchors(int image_size, int stride, std::vector<double> heights, std::vector<double> ratios) {
  AnchorConfig c;
  c.image_size = image_size;
  c.grid_stride = stride;
  c.anchor_heights = std::move(heights);
  c.anchor_aspect_ratios = std::move(ratios);
  return c;
}

Image random_image(std::uint64_t seed, int size = 128) {
  Rng rng(seed);
  Image img{size, size, std::vector<std::uint8_t>(static_cast<std::size_t>(size) * size)};
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
  return img;
}

Box random_box(Rng& rng) {
  const double x = rng.uniform(0, 100), y = rng.uniform(0, 100);
  return {x, y, x + rng.uniform(2, 40), y + rng.uniform(2, 40)};
}

}  // namespace

TEST(Anchors, SingleCell) {
  const auto a = generate_anchors(tiny_anchors(8, 8, {4}, {1.0}));
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a[0], (Box{2, 2, 6, 6}));
}

TEST(Anchors, GridEnumerationIsRowMajor) {
  const auto a = generate_anchors(tiny_anchors(16, 8, {4}, {1.0}));
  ASSERT_EQ(a.size(), 4u);
  const std::vector<std::pair<double, double>> centers{{4, 4}, {12, 4}, {4, 12}, {12, 12}};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_DOUBLE_EQ(a[i].center_x(), centers[i].first);
    EXPECT_DOUBLE_EQ(a[i].center_y(), centers[i].second);
  }
}

TEST(Anchors, HeightsTimesRatios) {
  const auto a = generate_anchors(tiny_anchors(8, 8, {4, 8}, {0.5, 1.0}));
  ASSERT_EQ(a.size(), 4u);
  std::set<std::pair<double, double>> sizes;
  for (const auto& b : a) {
    EXPECT_DOUBLE_EQ(b.center_x(), 4.0);
    EXPECT_DOUBLE_EQ(b.center_y(), 4.0);
    sizes.insert({b.width(), b.height()});
  }
  EXPECT_EQ(sizes, (std::set<std::pair<double, double>>{{2, 4}, {4, 4}, {4, 8}, {8, 8}}));
}

TEST(Anchors, CountMatchesConfig) {
  AnchorConfig c;
  EXPECT_EQ(generate_anchors(c).size(), c.anchor_count());
  EXPECT_EQ(c.anchor_count(), 8u * 8u * 3u);
}

TEST(Anchors, ValidateRejectsBadConfigs) {
  EXPECT_THROW(tiny_anchors(10, 8, {4}, {1.0}).validate(), InvalidArgument);
  EXPECT_THROW(tiny_anchors(16, 8, {0}, {1.0}).validate(), InvalidArgument);
  EXPECT_THROW(tiny_anchors(16, 8, {4}, {-1.0}).validate(), InvalidArgument);
  EXPECT_NO_THROW(AnchorConfig{}.validate());
}

TEST(Params, LayoutIsContiguousAndCoversVector) {
  const Architecture arch;
  const auto p = DetectorParams::zeros(arch);
  std::size_t offset = 0;
  for (const auto& s : p.layout) {
    EXPECT_EQ(s.offset, offset) << s.name;
    offset += s.size();
  }
  EXPECT_EQ(offset, p.size());
  EXPECT_NO_THROW(p.validate());
}

TEST(Params, ValidateRejectsNonFinite) {
  auto p = init_params(1, Architecture{});
  p.values[3] = std::nan("");
  EXPECT_THROW(p.validate(), InvalidArgument);
}

TEST(Params, InitIsDeterministic) {
  EXPECT_EQ(init_params(7, Architecture{}).values, init_params(7, Architecture{}).values);
}

TEST(Params, DifferentSeedsDiffer) {
  const auto a = init_params(7, Architecture{});
  const auto b = init_params(8, Architecture{});
  bool any_slice_differs = false;
  for (const auto& s : a.layout) {
    const auto x = a.slice(s.name);
    const auto y = b.slice(s.name);
    any_slice_differs |= !std::equal(x.begin(), x.end(), y.begin());
  }
  EXPECT_TRUE(any_slice_differs);
}

TEST(Params, BiasesStartAtZero) {
  const auto p = init_params(3, Architecture{});
  int bias_slices = 0;
  for (const auto& s : p.layout) {
    if (!s.is_bias()) continue;
    ++bias_slices;
    for (double v : p.slice(s.name)) EXPECT_EQ(v, 0.0) << s.name;
  }
  EXPECT_GT(bias_slices, 0);
}

TEST(Forward, ZeroParamsGiveZeroOutputs) {
  const AnchorConfig cfg;
  const auto pred = forward(DetectorParams::zeros(Architecture{}), random_image(1), cfg);
  ASSERT_EQ(pred.logits.size(), cfg.anchor_count());
  ASSERT_EQ(pred.deltas.size(), cfg.anchor_count());
  for (double l : pred.logits) EXPECT_EQ(l, 0.0);
  for (const auto& d : pred.deltas)
    for (double v : d) EXPECT_EQ(v, 0.0);
}

TEST(Forward, Deterministic) {
  const AnchorConfig cfg;
  const auto p = init_params(5, Architecture{});
  const auto img = random_image(2);
  const auto a = forward(p, img, cfg);
  const auto b = forward(p, img, cfg);
  EXPECT_EQ(a.logits, b.logits);
  EXPECT_EQ(a.deltas, b.deltas);
}

TEST(Forward, RejectsWrongImageSize) {
  EXPECT_THROW(forward(init_params(1, Architecture{}), random_image(1, 64), AnchorConfig{}), InvalidArgument);
}

TEST(BoxCoding, ZeroDeltasReturnAnchors) {
  const auto anchors = generate_anchors(AnchorConfig{});
  const std::vector<BoxDelta> zeros(anchors.size(), BoxDelta{});
  const auto boxes = decode_boxes(zeros, anchors);
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    EXPECT_DOUBLE_EQ(boxes[i].x_min, anchors[i].x_min);
    EXPECT_DOUBLE_EQ(boxes[i].y_min, anchors[i].y_min);
    EXPECT_DOUBLE_EQ(boxes[i].x_max, anchors[i].x_max);
    EXPECT_DOUBLE_EQ(boxes[i].y_max, anchors[i].y_max);
  }
}

TEST(BoxCoding, ShiftByHalfWidth) {
  const Box b = decode_box({0.5, 0, 0, 0}, Box{0, 0, 10, 10});
  EXPECT_DOUBLE_EQ(b.x_min, 5);
  EXPECT_DOUBLE_EQ(b.y_min, 0);
  EXPECT_DOUBLE_EQ(b.x_max, 15);
  EXPECT_DOUBLE_EQ(b.y_max, 10);
}

TEST(BoxCoding, EncodeDecodeRoundTrip) {
  Rng rng(11);
  for (int i = 0; i < 500; ++i) {
    const Box box = random_box(rng);
    const Box anchor = random_box(rng);
    const Box back = decode_box(encode_box(box, anchor), anchor);
    EXPECT_NEAR(back.x_min, box.x_min, 1e-9);
    EXPECT_NEAR(back.y_min, box.y_min, 1e-9);
    EXPECT_NEAR(back.x_max, box.x_max, 1e-9);
    EXPECT_NEAR(back.y_max, box.y_max, 1e-9);
  }
}

TEST(Iou, Examples) {
  const Box a{0, 0, 10, 10};
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(iou(a, Box{20, 20, 30, 30}), 0.0);
  EXPECT_DOUBLE_EQ(iou(a, Box{5, 0, 15, 10}), 50.0 / 150.0);
}

TEST(Nms, IdenticalBoxesKeepHigherScore) {
  const Box b{0, 0, 10, 20};
  const auto kept = nms({{b, 0.8, 1}, {b, 0.9, 0}}, 0.5);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_DOUBLE_EQ(kept[0].score, 0.9);
}

TEST(Nms, DisjointBoxesBothKept) {
  EXPECT_EQ(nms({{{0, 0, 10, 10}, 0.9, 0}, {{50, 50, 60, 60}, 0.8, 1}}, 0.5).size(), 2u);
}

TEST(Nms, MatchesBruteForce) {
  Rng rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Detection> dets;
    for (std::size_t i = 0; i < 10; ++i) {
      const double x = rng.uniform(0, 30), y = rng.uniform(0, 30);
      // Coarse scores so ties occur.
      dets.push_back({{x, y, x + rng.uniform(5, 25), y + rng.uniform(5, 25)},
                      static_cast<double>(rng.uniform_int(1, 6)) / 6.0, i});
    }
    const double thr = rng.uniform(0.2, 0.7);

    // Reference: rank by (score desc, index asc); a detection survives iff
    // no surviving higher-ranked detection overlaps it above the threshold.
    std::vector<std::size_t> order(dets.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return dets[a].score > dets[b].score || (dets[a].score == dets[b].score && a < b);
    });
    std::vector<bool> alive(dets.size(), false);
    for (std::size_t r = 0; r < order.size(); ++r) {
      bool ok = true;
      for (std::size_t q = 0; q < r; ++q)
        if (alive[order[q]] && iou(dets[order[q]].box, dets[order[r]].box) > thr) ok = false;
      alive[order[r]] = ok;
    }
    std::vector<std::size_t> expected;
    for (std::size_t i : order)
      if (alive[i]) expected.push_back(i);

    std::vector<std::size_t> got;
    for (const auto& d : nms(dets, thr)) got.push_back(d.anchor_index);
    EXPECT_EQ(got, expected) << "trial " << trial;
  }
}

TEST(Detect, ZeroParamsBelowThreshold) {
  AnchorConfig cfg;
  cfg.score_threshold = 0.6;
  EXPECT_TRUE(detect(DetectorParams::zeros(Architecture{}), random_image(4), cfg).empty());
}

TEST(Detect, NoSuppressionKeepsEveryAnchor) {
  AnchorConfig cfg;
  cfg.score_threshold = 0.0;
  cfg.nms_iou_threshold = 1.0;
  const auto dets = detect(DetectorParams::zeros(Architecture{}), random_image(4), cfg);
  EXPECT_EQ(dets.size(), cfg.anchor_count());
}

TEST(Detect, DetectionsAreWellFormed) {
  AnchorConfig cfg;
  cfg.score_threshold = 0.0;
  for (const auto& d : detect(init_params(9, Architecture{}), random_image(5), cfg)) {
    EXPECT_GT(d.box.x_max, d.box.x_min);
    EXPECT_GT(d.box.y_max, d.box.y_min);
    EXPECT_GE(d.score, 0.0);
    EXPECT_LE(d.score, 1.0);
  }
}

TEST(Detect, DivergedModelDetectsNothing) {
  auto p = init_params(9, Architecture{});
  for (double& v : p.values) v *= 1e300;
  AnchorConfig cfg;
  cfg.score_threshold = 0.0;
  std::vector<Detection> dets;
  ASSERT_NO_THROW(dets = detect(p, random_image(6), cfg));
  for (const auto& d : dets) EXPECT_TRUE(std::isfinite(d.box.x_min) && std::isfinite(d.score));
}
