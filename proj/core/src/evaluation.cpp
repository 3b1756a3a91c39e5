#include "ewcdet/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ewcdet/error.hpp"

namespace ewcdet {

bool is_eligible(const GroundTruthBox& gt, const OcclusionBucket& b) noexcept {
  return gt.height() > kMinEvalHeight && b.contains(gt.occlusion_ratio);
}

MatchResult match_detections(std::span<const Detection> dets, std::span<const GroundTruthBox> gts,
                             const OcclusionBucket& bucket) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });

  std::vector<bool> eligible(gts.size());
  std::size_t eligible_count = 0;
  for (std::size_t g = 0; g < gts.size(); ++g) {
    eligible[g] = is_eligible(gts[g], bucket);
    eligible_count += eligible[g] ? 1 : 0;
  }
  std::vector<bool> matched(gts.size(), false);

  MatchResult r;
  r.outcomes.reserve(dets.size());
  for (std::size_t d : order) {
    std::size_t best = gts.size();
    double best_iou = kEvalMatchIou;
    bool overlaps_ignored = false;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(dets[d].box, gts[g].box);
      if (v < kEvalMatchIou) continue;
      if (!eligible[g]) {
        overlaps_ignored = true;
      } else if (!matched[g] && (best == gts.size() || v > best_iou)) {
        best = g;
        best_iou = v;
      }
    }
    MatchOutcome outcome;
    if (best < gts.size()) {
      matched[best] = true;
      outcome = MatchOutcome::true_positive;
      ++r.tp;
    } else if (overlaps_ignored) {
      outcome = MatchOutcome::ignored;
      ++r.discarded;
    } else {
      outcome = MatchOutcome::false_positive;
      ++r.fp;
    }
    r.outcomes.emplace_back(dets[d].score, outcome);
  }
  r.fn = eligible_count - r.tp;
  return r;
}

MissRateCurve miss_rate_curve(std::span<const std::vector<Detection>> dets_per_image,
                              std::span<const std::vector<GroundTruthBox>> gts_per_image,
                              const OcclusionBucket& bucket) {
  if (dets_per_image.size() != gts_per_image.size())
    throw InvalidArgument("detections and ground truth cover different image counts");
  if (dets_per_image.empty()) throw InvalidArgument("miss-rate curve needs at least one image");

  MissRateCurve curve;
  curve.images = dets_per_image.size();
  std::vector<std::pair<double, MatchOutcome>> all;
  for (std::size_t i = 0; i < dets_per_image.size(); ++i) {
    MatchResult m = match_detections(dets_per_image[i], gts_per_image[i], bucket);
    curve.eligible += m.tp + m.fn;
    all.insert(all.end(), m.outcomes.begin(), m.outcomes.end());
  }
  std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

  const double images = static_cast<double>(curve.images);
  const double eligible = static_cast<double>(curve.eligible);
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < all.size();) {
    const double threshold = all[i].first;
    for (; i < all.size() && all[i].first == threshold; ++i) {
      if (all[i].second == MatchOutcome::true_positive) ++tp;
      if (all[i].second == MatchOutcome::false_positive) ++fp;
    }
    const double miss = curve.eligible > 0 ? 1.0 - static_cast<double>(tp) / eligible : 1.0;
    curve.points.push_back({static_cast<double>(fp) / images, miss, threshold});
  }
  return curve;
}

std::array<double, kFppiReferenceCount> fppi_references() {
  std::array<double, kFppiReferenceCount> refs{};
  for (int i = 0; i < kFppiReferenceCount; ++i)
    refs[i] = std::pow(10.0, -2.0 + 2.0 * i / (kFppiReferenceCount - 1));
  return refs;
}

std::optional<double> log_average_miss_rate(const MissRateCurve& curve) {
  if (curve.eligible == 0) return std::nullopt;
  double log_sum = 0.0;
  for (double ref : fppi_references()) {
    double miss = 1.0;
    for (const auto& p : curve.points) {
      if (p.fppi <= ref) miss = std::min(miss, p.miss_rate);
    }
    log_sum += std::log(std::max(miss, kMissRateFloor));
  }
  return std::exp(log_sum / kFppiReferenceCount);
}

std::optional<double> mr2(std::span<const std::vector<Detection>> dets_per_image,
                          std::span<const std::vector<GroundTruthBox>> gts_per_image,
                          const OcclusionBucket& bucket) {
  return log_average_miss_rate(miss_rate_curve(dets_per_image, gts_per_image, bucket));
}

EvalReport evaluate_detections(std::span<const std::vector<Detection>> dets_per_image,
                               std::span<const std::vector<GroundTruthBox>> gts_per_image) {
  EvalReport report;
  for (const auto& b : kBuckets) {
    MissRateCurve curve = miss_rate_curve(dets_per_image, gts_per_image, b);
    report.mr2[static_cast<std::size_t>(b.id)] = log_average_miss_rate(curve);
    if (b.id == BucketId::reasonable) {
      report.curve = std::move(curve.points);
      report.counts.gt_used = curve.eligible;
    }
  }
  std::size_t total_gts = 0;
  for (const auto& g : gts_per_image) total_gts += g.size();
  for (const auto& d : dets_per_image) report.counts.detections += d.size();
  report.counts.gt_filtered = total_gts - report.counts.gt_used;
  return report;
}

EvalReport evaluate(const DetectorParams& params, const Dataset& dataset, const AnchorConfig& config) {
  std::vector<std::vector<Detection>> dets;
  dets.reserve(dataset.size());
  for (const auto& image : dataset.images) dets.push_back(detect(params, image, config));
  return evaluate_detections(dets, dataset.annotations);
}

std::optional<double> percent_increase(double before, double after) {
  if (!(before > 0.0)) return std::nullopt;
  return (after - before) / before * 100.0;
}

ForgettingReport forgetting_report(const EvalReport& before, const EvalReport& after) {
  ForgettingReport r;
  for (std::size_t i = 0; i < kBucketCount; ++i) {
    BucketChange& c = r.buckets[i];
    c.before = before.mr2[i];
    c.after = after.mr2[i];
    if (c.before && c.after) {
      c.absolute_increase = *c.after - *c.before;
      c.percent_increase = percent_increase(*c.before, *c.after);
    }
  }
  return r;
}

}  // namespace ewcdet
