#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ewcdet/box.hpp"
#include "ewcdet/detector.hpp"

namespace ewcdet {

struct Range {
  double lo = 0.0;
  double hi = 0.0;

  double midpoint() const noexcept { return 0.5 * (lo + hi); }
  friend bool operator==(const Range&, const Range&) = default;
};

struct IntRange {
  int lo = 0;
  int hi = 0;
  friend bool operator==(const IntRange&, const IntRange&) = default;
};

enum class Background { flat, striped, noise };

/// Rendering distribution of one synthetic domain. Intensities are in
/// [0, 1]; lengths are pixels.
struct DomainSpec {
  std::string id = "domain";
  int image_size = 128;
  Background background = Background::flat;
  Range background_intensity{0.7, 0.85};
  int stripe_period = 8;
  Range object_intensity{0.1, 0.3};
  Range object_height{44, 96};
  double aspect_ratio = 0.41;
  double aspect_jitter = 0.15;
  IntRange objects_per_image{1, 3};
  double occluder_probability = 0.3;
  Range occlusion_fraction{0.1, 0.7};
  Range occluder_intensity{0.45, 0.55};
  double noise_sigma = 0.03;

  /// Throws InvalidArgument for ill-ordered ranges or objects that cannot
  /// fit in the image.
  void validate() const;

  friend bool operator==(const DomainSpec&, const DomainSpec&) = default;
};

/// Largest occlusion ratio the generator will render.
inline constexpr double kMaxOcclusion = 0.8;

struct GroundTruthBox {
  Box box;
  /// Fraction of the box area covered by rendered occluders.
  double occlusion_ratio = 0.0;

  double height() const noexcept { return box.height(); }
  friend bool operator==(const GroundTruthBox&, const GroundTruthBox&) = default;
};

enum class Split { train, test };

std::string to_string(Split split);
Split split_from_string(const std::string& s);
std::string to_string(Background background);
Background background_from_string(const std::string& s);

struct Dataset {
  std::string domain_id;
  Split split = Split::train;
  std::uint64_t seed = 0;
  DomainSpec spec;
  std::vector<Image> images;
  std::vector<std::vector<GroundTruthBox>> annotations;

  std::size_t size() const noexcept { return images.size(); }
  /// Throws InvalidArgument when list lengths differ or a box leaves its image.
  void validate() const;
};

/// Deterministic for (spec, count, seed, split). Each image draws from its
/// own stream derived from the seed and its index.
Dataset generate_domain(const DomainSpec& spec, std::size_t count, std::uint64_t seed,
                        Split split = Split::train);

/// Seed of domain `index` (0 for A, 1 for B) in a benchmark built from one
/// seed, so the two domains never share image streams.
std::uint64_t domain_seed(std::uint64_t seed, int index);

/// Hex SHA-256 over images and annotations in a fixed byte order.
std::string corpus_hash(const Dataset& dataset);

/// Directory layout: manifest.json, annotations.txt, images/NNNNNN.pgm.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
/// Throws FormatError on a version mismatch, truncated raster, malformed
/// record or content-hash mismatch.
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace ewcdet
