#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "ewcdet/error.hpp"
#include "ewcdet/synthdata.hpp"
#include "ewcdet/training.hpp"
#include "test_support.hpp"

using namespace ewcdet;
using ewcdet::test::TempDir;

namespace {

double image_mean(const Image& img) {
  double s = 0.0;
  for (auto p : img.pixels) s += p;
  return s / static_cast<double>(img.pixels.size()) / 255.0;
}

struct Moments {
  double mean = 0.0;
  double var = 0.0;  // sample variance
};

Moments moments(const std::vector<double>& xs) {
  Moments m;
  for (double x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  for (double x : xs) m.var += (x - m.mean) * (x - m.mean);
  m.var /= static_cast<double>(xs.size() - 1);
  return m;
}

}  // namespace

TEST(Generate, CountAndShape) {
  const auto ds = generate_domain(ewcdet::test::domain_a(), 5, 1);
  EXPECT_EQ(ds.images.size(), 5u);
  EXPECT_EQ(ds.annotations.size(), 5u);
  for (const auto& img : ds.images) {
    EXPECT_EQ(img.width, 128);
    EXPECT_EQ(img.height, 128);
    EXPECT_EQ(img.pixels.size(), 128u * 128u);
  }
  EXPECT_NO_THROW(ds.validate());
}

TEST(Generate, NoOccludersMeansAllBare) {
  auto spec = ewcdet::test::domain_a();
  spec.occluder_probability = 0.0;
  const auto ds = generate_domain(spec, 40, 2);
  for (const auto& ann : ds.annotations)
    for (const auto& g : ann) EXPECT_EQ(g.occlusion_ratio, 0.0);
}

TEST(Generate, DeterministicAndSeedSensitive) {
  const auto spec = ewcdet::test::domain_b();
  EXPECT_EQ(corpus_hash(generate_domain(spec, 10, 3)), corpus_hash(generate_domain(spec, 10, 3)));
  EXPECT_NE(corpus_hash(generate_domain(spec, 10, 3)), corpus_hash(generate_domain(spec, 10, 4)));
  EXPECT_NE(corpus_hash(generate_domain(spec, 10, 3, Split::train)),
            corpus_hash(generate_domain(spec, 10, 3, Split::test)));
}

TEST(Generate, MeanHeightWithinThreeStandardErrors) {
  for (const auto& spec : {ewcdet::test::domain_a(), ewcdet::test::domain_b()}) {
    std::vector<double> heights;
    for (const auto& ann : generate_domain(spec, 1000, 5).annotations)
      for (const auto& g : ann) heights.push_back(g.height());
    ASSERT_GE(heights.size(), 1000u);
    heights.resize(1000);
    const auto m = moments(heights);
    const double se = std::sqrt(m.var / 1000.0);
    EXPECT_LE(std::abs(m.mean - spec.object_height.midpoint()), 3.0 * se)
        << spec.id << " mean " << m.mean << " se " << se;
  }
}

TEST(Generate, ShippedDomainsAreShifted) {
  std::vector<double> a, b;
  for (const auto& img : generate_domain(ewcdet::test::domain_a(), 200, 6).images) a.push_back(image_mean(img));
  for (const auto& img : generate_domain(ewcdet::test::domain_b(), 200, 6).images) b.push_back(image_mean(img));
  const auto ma = moments(a), mb = moments(b);
  const double pooled_se = std::sqrt(ma.var / 200.0 + mb.var / 200.0);
  EXPECT_GE(std::abs(ma.mean - mb.mean), 5.0 * pooled_se);
}

TEST(Generate, OcclusionRatioMatchesRenderedPixels) {
  auto spec = ewcdet::test::domain_a();
  spec.noise_sigma = 0.0;
  spec.occluder_probability = 1.0;
  spec.objects_per_image = {1, 1};
  const auto ds = generate_domain(spec, 60, 7);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    ASSERT_EQ(ds.annotations[i].size(), 1u);
    const auto& g = ds.annotations[i][0];
    // Occluders render well above the object intensity range.
    const int threshold = static_cast<int>(255 * 0.5 * (spec.object_intensity.hi + spec.occluder_intensity.lo - 0.06));
    std::size_t hit = 0, total = 0;
    for (int y = static_cast<int>(g.box.y_min); y < static_cast<int>(g.box.y_max); ++y)
      for (int x = static_cast<int>(g.box.x_min); x < static_cast<int>(g.box.x_max); ++x, ++total)
        hit += ds.images[i].at(x, y) > threshold ? 1 : 0;
    EXPECT_NEAR(g.occlusion_ratio, static_cast<double>(hit) / static_cast<double>(total), 0.02) << i;
    EXPECT_LE(g.occlusion_ratio, kMaxOcclusion);
  }
}

TEST(Generate, BoxesInsideImageAndHeightsConsistent) {
  for (const auto& ann : generate_domain(ewcdet::test::domain_b(), 100, 8).annotations) {
    for (const auto& g : ann) {
      EXPECT_GE(g.box.x_min, 0.0);
      EXPECT_GE(g.box.y_min, 0.0);
      EXPECT_LE(g.box.x_max, 128.0);
      EXPECT_LE(g.box.y_max, 128.0);
      EXPECT_EQ(g.height(), g.box.y_max - g.box.y_min);
    }
  }
}

TEST(Spec, InfeasibleSpecsRejected) {
  auto too_tall = ewcdet::test::domain_a();
  too_tall.object_height = {100, 200};
  EXPECT_THROW(generate_domain(too_tall, 1, 1), InvalidArgument);
  auto reversed = ewcdet::test::domain_a();
  reversed.background_intensity = {0.9, 0.1};
  EXPECT_THROW(reversed.validate(), InvalidArgument);
  auto deep = ewcdet::test::domain_a();
  deep.occlusion_fraction = {0.1, 0.9};
  EXPECT_THROW(deep.validate(), InvalidArgument);
  EXPECT_THROW(generate_domain(ewcdet::test::domain_a(), 0, 1), InvalidArgument);
}

TEST(DomainSeed, DistinctPerDomain) {
  EXPECT_NE(domain_seed(1, 0), domain_seed(1, 1));
  EXPECT_EQ(domain_seed(1, 0), domain_seed(1, 0));
  EXPECT_THROW(domain_seed(1, -1), InvalidArgument);
}

TEST(Storage, RoundTripIsExact) {
  TempDir dir("roundtrip");
  const auto ds = generate_domain(ewcdet::test::domain_b(), 6, 9, Split::test);
  save_dataset(ds, dir.path());
  const auto back = load_dataset(dir.path());
  EXPECT_EQ(back.domain_id, ds.domain_id);
  EXPECT_EQ(back.split, ds.split);
  EXPECT_EQ(back.seed, ds.seed);
  EXPECT_EQ(back.spec, ds.spec);
  EXPECT_EQ(back.images, ds.images);
  EXPECT_EQ(back.annotations, ds.annotations);
  EXPECT_EQ(corpus_hash(back), corpus_hash(ds));
}

TEST(Storage, TruncatedRasterFails) {
  TempDir dir("trunc_raster");
  save_dataset(generate_domain(ewcdet::test::domain_a(), 3, 10), dir.path());
  const auto raster = dir.path() / "images" / "000001.pgm";
  std::filesystem::resize_file(raster, std::filesystem::file_size(raster) / 2);
  EXPECT_THROW(load_dataset(dir.path()), FormatError);
}

TEST(Storage, TruncatedAnnotationsFail) {
  TempDir dir("trunc_ann");
  save_dataset(generate_domain(ewcdet::test::domain_a(), 3, 10), dir.path());
  const auto ann = dir.path() / "annotations.txt";
  std::filesystem::resize_file(ann, std::filesystem::file_size(ann) - 7);
  EXPECT_THROW(load_dataset(dir.path()), FormatError);
}

TEST(Storage, TamperedPixelsFailHashCheck) {
  TempDir dir("tamper");
  save_dataset(generate_domain(ewcdet::test::domain_a(), 2, 11), dir.path());
  const auto raster = dir.path() / "images" / "000000.pgm";
  std::fstream f(raster, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(-1, std::ios::end);
  f.put('\x01');
  f.close();
  EXPECT_THROW(load_dataset(dir.path()), FormatError);
}

TEST(Storage, MissingDirectoryFails) {
  EXPECT_THROW(load_dataset("/nonexistent/ewcdet/dataset"), FormatError);
}

TEST(Storage, ShippedSpecsMatchFixtureHashes) {
  const auto expected = ewcdet::test::read_json(ewcdet::test::fixture_path("corpus_hashes.json"));
  const auto seed = expected.at("seed").get<std::uint64_t>();
  const auto train = expected.at("train_count").get<std::size_t>();
  const auto test = expected.at("test_count").get<std::size_t>();
  const auto a = generate_splits(ewcdet::test::domain_a(), train, test, domain_seed(seed, 0));
  const auto b = generate_splits(ewcdet::test::domain_b(), train, test, domain_seed(seed, 1));
  const auto& h = expected.at("corpus_hashes");
  EXPECT_EQ(corpus_hash(a.train), h.at("A/train").get<std::string>());
  EXPECT_EQ(corpus_hash(a.test), h.at("A/test").get<std::string>());
  EXPECT_EQ(corpus_hash(b.train), h.at("B/train").get<std::string>());
  EXPECT_EQ(corpus_hash(b.test), h.at("B/test").get<std::string>());
}
