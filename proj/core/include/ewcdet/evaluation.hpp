#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ewcdet/box.hpp"
#include "ewcdet/detector.hpp"
#include "ewcdet/synthdata.hpp"

namespace ewcdet {

/// Boxes must be strictly taller than this to be scored.
inline constexpr double kMinEvalHeight = 50.0;
inline constexpr double kEvalMatchIou = 0.5;
inline constexpr double kMissRateFloor = 1e-4;
inline constexpr int kFppiReferenceCount = 9;

enum class BucketId { reasonable = 0, bare = 1, partial = 2, heavy = 3 };
inline constexpr std::size_t kBucketCount = 4;

/// Occlusion-ratio interval with explicit endpoint inclusion.
struct OcclusionBucket {
  BucketId id;
  const char* name;
  double lo;
  double hi;
  bool lo_inclusive;
  bool hi_inclusive;

  constexpr bool contains(double r) const noexcept {
    const bool above = lo_inclusive ? r >= lo : r > lo;
    const bool below = hi_inclusive ? r <= hi : r < hi;
    return above && below;
  }
};

inline constexpr std::array<OcclusionBucket, kBucketCount> kBuckets{{
    {BucketId::reasonable, "Reasonable", 0.0, 0.35, true, true},
    {BucketId::bare, "Bare", 0.0, 0.0, true, true},
    {BucketId::partial, "Partial", 0.0, 0.35, false, true},
    {BucketId::heavy, "Heavy", 0.35, 0.8, false, true},
}};

inline constexpr const OcclusionBucket& bucket(BucketId id) { return kBuckets[static_cast<std::size_t>(id)]; }

/// True when the box takes part in scoring for `b` (tall enough and inside
/// the occlusion interval).
bool is_eligible(const GroundTruthBox& gt, const OcclusionBucket& b) noexcept;

enum class MatchOutcome { true_positive, false_positive, ignored };

struct MatchResult {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t discarded = 0;
  /// One entry per detection, in descending score order (ties keep input order).
  std::vector<std::pair<double, MatchOutcome>> outcomes;
};

/// Greedy matching in descending score. A detection takes the unmatched
/// eligible box with the highest IoU >= 0.5; failing that it is discarded
/// if it overlaps an ignored box with IoU >= 0.5, else it is a false
/// positive.
MatchResult match_detections(std::span<const Detection> dets, std::span<const GroundTruthBox> gts,
                             const OcclusionBucket& bucket);

struct CurvePoint {
  double fppi = 0.0;
  double miss_rate = 1.0;
  double threshold = 0.0;
};

struct MissRateCurve {
  std::vector<CurvePoint> points;  // one per distinct score, descending threshold
  std::size_t eligible = 0;
  std::size_t images = 0;
};

MissRateCurve miss_rate_curve(std::span<const std::vector<Detection>> dets_per_image,
                              std::span<const std::vector<GroundTruthBox>> gts_per_image,
                              const OcclusionBucket& bucket);

/// FPPI reference points, log-uniform over [1e-2, 1e0].
std::array<double, kFppiReferenceCount> fppi_references();

/// Log-average of miss rates sampled at the FPPI references. nullopt when
/// the curve has no eligible boxes.
std::optional<double> log_average_miss_rate(const MissRateCurve& curve);

/// MR^-2 in [1e-4, 1]; nullopt when the bucket has no eligible boxes.
std::optional<double> mr2(std::span<const std::vector<Detection>> dets_per_image,
                          std::span<const std::vector<GroundTruthBox>> gts_per_image,
                          const OcclusionBucket& bucket);

struct EvalCounts {
  std::size_t gt_used = 0;      // eligible for Reasonable
  std::size_t gt_filtered = 0;  // everything else
  std::size_t detections = 0;
};

struct EvalReport {
  std::array<std::optional<double>, kBucketCount> mr2;
  std::vector<CurvePoint> curve;  // Reasonable bucket, ascending FPPI
  EvalCounts counts;

  std::optional<double> at(BucketId id) const { return mr2[static_cast<std::size_t>(id)]; }
};

EvalReport evaluate_detections(std::span<const std::vector<Detection>> dets_per_image,
                               std::span<const std::vector<GroundTruthBox>> gts_per_image);

EvalReport evaluate(const DetectorParams& params, const Dataset& dataset, const AnchorConfig& config);

struct BucketChange {
  std::optional<double> before;
  std::optional<double> after;
  std::optional<double> absolute_increase;
  std::optional<double> percent_increase;
};

struct ForgettingReport {
  std::array<BucketChange, kBucketCount> buckets;

  const BucketChange& at(BucketId id) const { return buckets[static_cast<std::size_t>(id)]; }
};

/// (after - before) / before * 100; nullopt when before is not positive.
std::optional<double> percent_increase(double before, double after);

ForgettingReport forgetting_report(const EvalReport& before, const EvalReport& after);

}  // namespace ewcdet
