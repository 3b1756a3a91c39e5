#include "ewcdet/synthdata.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ewcdet/error.hpp"
#include "ewcdet/hash.hpp"
#include "ewcdet/rng.hpp"
#include "json_io.hpp"

namespace ewcdet {

namespace {

constexpr int kDatasetFormatVersion = 1;
constexpr int kPlacementTries = 64;
constexpr int kObjectGap = 2;

bool ordered(const Range& r) { return std::isfinite(r.lo) && std::isfinite(r.hi) && r.lo <= r.hi; }
bool unit(const Range& r) { return ordered(r) && r.lo >= 0.0 && r.hi <= 1.0; }

struct Rect {
  int x0, y0, x1, y1;  // half-open pixel extents
};

bool overlaps_with_gap(const Rect& a, const Rect& b) {
  return a.x0 < b.x1 + kObjectGap && b.x0 < a.x1 + kObjectGap && a.y0 < b.y1 + kObjectGap &&
         b.y0 < a.y1 + kObjectGap;
}

struct Rendered {
  Image image;
  std::vector<GroundTruthBox> boxes;
};

Rendered render_image(const DomainSpec& spec, Rng& rng) {
  const int n = spec.image_size;
  std::vector<double> canvas(static_cast<std::size_t>(n) * n);
  auto px = [&](int x, int y) -> double& { return canvas[static_cast<std::size_t>(y) * n + x]; };

  switch (spec.background) {
    case Background::flat: {
      const double v = rng.uniform(spec.background_intensity.lo, spec.background_intensity.hi);
      std::fill(canvas.begin(), canvas.end(), v);
      break;
    }
    case Background::striped: {
      const double mid = spec.background_intensity.midpoint();
      const double dark = rng.uniform(spec.background_intensity.lo, mid);
      const double light = rng.uniform(mid, spec.background_intensity.hi);
      const int half = std::max(1, spec.stripe_period / 2);
      const int phase = static_cast<int>(rng.uniform_int(0, spec.stripe_period - 1));
      for (int y = 0; y < n; ++y) {
        const double v = ((y + phase) / half) % 2 == 0 ? dark : light;
        for (int x = 0; x < n; ++x) px(x, y) = v;
      }
      break;
    }
    case Background::noise:
      for (double& v : canvas) v = rng.uniform(spec.background_intensity.lo, spec.background_intensity.hi);
      break;
  }

  // Objects: non-overlapping filled rectangles.
  const auto count = rng.uniform_int(spec.objects_per_image.lo, spec.objects_per_image.hi);
  const auto h_lo = static_cast<std::int64_t>(std::ceil(spec.object_height.lo));
  const auto h_hi = static_cast<std::int64_t>(std::floor(spec.object_height.hi));
  std::vector<Rect> rects;
  for (std::int64_t k = 0; k < count; ++k) {
    const int h = static_cast<int>(rng.uniform_int(h_lo, h_hi));
    const double jitter = rng.uniform(1.0 - spec.aspect_jitter, 1.0 + spec.aspect_jitter);
    const int w = std::clamp(static_cast<int>(std::lround(h * spec.aspect_ratio * jitter)), 2, n);
    const double intensity = rng.uniform(spec.object_intensity.lo, spec.object_intensity.hi);
    for (int attempt = 0; attempt < kPlacementTries; ++attempt) {
      const int x0 = static_cast<int>(rng.uniform_int(0, n - w));
      const int y0 = static_cast<int>(rng.uniform_int(0, n - h));
      const Rect r{x0, y0, x0 + w, y0 + h};
      if (std::any_of(rects.begin(), rects.end(), [&](const Rect& o) { return overlaps_with_gap(r, o); }))
        continue;
      for (int y = r.y0; y < r.y1; ++y) {
        for (int x = r.x0; x < r.x1; ++x) px(x, y) = intensity;
      }
      rects.push_back(r);
      break;
    }
  }

  // Occluders cover the lower part of a box across its full width.
  std::vector<std::uint8_t> occluded(canvas.size(), 0);
  for (const Rect& r : rects) {
    if (!rng.bernoulli(spec.occluder_probability)) continue;
    const int h = r.y1 - r.y0;
    const double fraction = rng.uniform(spec.occlusion_fraction.lo, spec.occlusion_fraction.hi);
    const int max_rows = static_cast<int>(std::floor(kMaxOcclusion * h));
    const int rows = std::clamp(static_cast<int>(std::lround(fraction * h)), 0, max_rows);
    const double base = rng.uniform(spec.occluder_intensity.lo, spec.occluder_intensity.hi);
    for (int y = r.y1 - rows; y < r.y1; ++y) {
      for (int x = r.x0; x < r.x1; ++x) {
        px(x, y) = base + ((((x / 2) + (y / 2)) % 2 == 0) ? 0.06 : -0.06);
        occluded[static_cast<std::size_t>(y) * n + x] = 1;
      }
    }
  }

  Rendered out;
  out.image.width = n;
  out.image.height = n;
  out.image.pixels.resize(canvas.size());
  for (std::size_t i = 0; i < canvas.size(); ++i) {
    double v = canvas[i];
    if (spec.noise_sigma > 0.0) v += spec.noise_sigma * rng.normal();
    v = std::clamp(v, 0.0, 1.0);
    out.image.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  for (const Rect& r : rects) {
    std::size_t covered = 0;
    for (int y = r.y0; y < r.y1; ++y) {
      for (int x = r.x0; x < r.x1; ++x) covered += occluded[static_cast<std::size_t>(y) * n + x];
    }
    const double area = static_cast<double>(r.x1 - r.x0) * (r.y1 - r.y0);
    out.boxes.push_back({{double(r.x0), double(r.y0), double(r.x1), double(r.y1)}, covered / area});
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view s, const std::string& where) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw FormatError("malformed number '" + std::string(s) + "' in " + where);
  return v;
}

std::string image_file_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06zu.pgm", i);
  return buf;
}

void write_pgm(const Image& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw Error("failed writing " + path.string());
}

Image read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("missing raster " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (!in || magic != "P5" || w <= 0 || h <= 0 || maxval != 255)
    throw FormatError("bad PGM header in " + path.string());
  in.get();  // single whitespace after maxval
  Image img;
  img.width = w;
  img.height = h;
  img.pixels.resize(static_cast<std::size_t>(w) * h);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (static_cast<std::size_t>(in.gcount()) != img.pixels.size())
    throw FormatError("truncated raster " + path.string());
  return img;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string to_string(Split split) { return split == Split::train ? "train" : "test"; }

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw InvalidArgument("unknown split: " + s);
}

std::string to_string(Background b) {
  switch (b) {
    case Background::flat: return "flat";
    case Background::striped: return "striped";
    case Background::noise: return "noise";
  }
  return "flat";
}

Background background_from_string(const std::string& s) {
  if (s == "flat") return Background::flat;
  if (s == "striped") return Background::striped;
  if (s == "noise") return Background::noise;
  throw InvalidArgument("unknown background: " + s);
}

void DomainSpec::validate() const {
  if (image_size < 8) throw InvalidArgument("image_size too small");
  if (!unit(background_intensity) || !unit(object_intensity) || !unit(occluder_intensity))
    throw InvalidArgument("intensity ranges must be ordered and inside [0, 1]");
  if (!ordered(object_height) || object_height.lo < 2.0 ||
      std::ceil(object_height.lo) > std::floor(object_height.hi))
    throw InvalidArgument("object_height must be an ordered range containing an integer >= 2");
  if (!(aspect_ratio > 0.0) || !(aspect_jitter >= 0.0 && aspect_jitter < 1.0))
    throw InvalidArgument("aspect_ratio must be > 0 and aspect_jitter in [0, 1)");
  if (object_height.hi > image_size ||
      std::lround(object_height.hi * aspect_ratio * (1.0 + aspect_jitter)) > image_size)
    throw InvalidArgument("objects of the requested size do not fit in the image");
  if (objects_per_image.lo < 0 || objects_per_image.lo > objects_per_image.hi)
    throw InvalidArgument("objects_per_image must be an ordered non-negative range");
  if (!(occluder_probability >= 0.0 && occluder_probability <= 1.0))
    throw InvalidArgument("occluder_probability must lie in [0, 1]");
  if (!ordered(occlusion_fraction) || occlusion_fraction.lo < 0.0 || occlusion_fraction.hi > kMaxOcclusion)
    throw InvalidArgument("occlusion_fraction must be an ordered range inside [0, 0.8]");
  if (!(noise_sigma >= 0.0)) throw InvalidArgument("noise_sigma must be >= 0");
  if (background == Background::striped && stripe_period < 2)
    throw InvalidArgument("stripe_period must be >= 2");
}

void Dataset::validate() const {
  if (images.size() != annotations.size()) throw InvalidArgument("image and annotation counts differ");
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Image& img = images[i];
    for (const auto& g : annotations[i]) {
      if (!g.box.valid() || g.box.x_min < 0 || g.box.y_min < 0 || g.box.x_max > img.width ||
          g.box.y_max > img.height)
        throw InvalidArgument("box outside image " + std::to_string(i));
      if (!(g.occlusion_ratio >= 0.0 && g.occlusion_ratio <= kMaxOcclusion))
        throw InvalidArgument("occlusion ratio out of range in image " + std::to_string(i));
    }
  }
}

std::uint64_t domain_seed(std::uint64_t seed, int index) {
  if (index < 0) throw InvalidArgument("domain index must be >= 0");
  return Rng(seed, {0xd0a1, static_cast<std::uint64_t>(index)}).next();
}

Dataset generate_domain(const DomainSpec& spec, std::size_t count, std::uint64_t seed, Split split) {
  spec.validate();
  if (count < 1) throw InvalidArgument("count must be >= 1");
  Dataset ds;
  ds.domain_id = spec.id;
  ds.split = split;
  ds.seed = seed;
  ds.spec = spec;
  ds.images.reserve(count);
  ds.annotations.reserve(count);
  const std::uint64_t split_stream = split == Split::train ? 1 : 2;
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(seed, {split_stream, static_cast<std::uint64_t>(i)});
    Rendered r = render_image(spec, rng);
    ds.images.push_back(std::move(r.image));
    ds.annotations.push_back(std::move(r.boxes));
  }
  return ds;
}

std::string corpus_hash(const Dataset& dataset) {
  Sha256 h;
  h.update("ewcdet-corpus-v1");
  h.update_value<std::uint64_t>(dataset.images.size());
  for (std::size_t i = 0; i < dataset.images.size(); ++i) {
    const Image& img = dataset.images[i];
    h.update_value<std::int32_t>(img.width);
    h.update_value<std::int32_t>(img.height);
    h.update_values(std::span<const std::uint8_t>(img.pixels));
    const auto& ann = dataset.annotations[i];
    h.update_value<std::uint64_t>(ann.size());
    for (const auto& g : ann) {
      const double rec[5] = {g.box.x_min, g.box.y_min, g.box.x_max, g.box.y_max, g.occlusion_ratio};
      h.update_values(std::span<const double>(rec));
    }
  }
  return h.hex_digest();
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  dataset.validate();
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  for (std::size_t i = 0; i < dataset.size(); ++i) write_pgm(dataset.images[i], dir / "images" / image_file_name(i));

  std::ofstream ann(dir / "annotations.txt");
  if (!ann) throw Error("cannot write annotations in " + dir.string());
  ann << "# image_id x_min y_min x_max y_max occlusion_ratio\n";
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    for (const auto& g : dataset.annotations[i]) {
      ann << i << ' ' << format_double(g.box.x_min) << ' ' << format_double(g.box.y_min) << ' '
          << format_double(g.box.x_max) << ' ' << format_double(g.box.y_max) << ' '
          << format_double(g.occlusion_ratio) << '\n';
    }
  }
  ann.close();

  json manifest{{"format", "ewcdet-dataset"},
                {"format_version", kDatasetFormatVersion},
                {"domain_id", dataset.domain_id},
                {"split", to_string(dataset.split)},
                {"seed", dataset.seed},
                {"count", dataset.size()},
                {"image_size", dataset.spec.image_size},
                {"spec", dataset.spec},
                {"corpus_hash", corpus_hash(dataset)}};
  std::ofstream m(dir / "manifest.json");
  m << manifest.dump(2) << '\n';
  if (!m) throw Error("cannot write manifest in " + dir.string());
}

Dataset load_dataset(const std::filesystem::path& dir) {
  json manifest;
  try {
    manifest = json::parse(read_text(dir / "manifest.json"));
  } catch (const json::parse_error& e) {
    throw FormatError("corrupt dataset manifest in " + dir.string() + ": " + e.what());
  }
  Dataset ds;
  std::size_t count = 0;
  std::string expected_hash;
  try {
    if (manifest.at("format").get<std::string>() != "ewcdet-dataset")
      throw FormatError(dir.string() + " is not a dataset directory");
    const int version = manifest.at("format_version").get<int>();
    if (version != kDatasetFormatVersion)
      throw FormatError("dataset format version " + std::to_string(version) + " is not supported");
    ds.domain_id = manifest.at("domain_id").get<std::string>();
    ds.split = split_from_string(manifest.at("split").get<std::string>());
    ds.seed = manifest.at("seed").get<std::uint64_t>();
    ds.spec = manifest.at("spec").get<DomainSpec>();
    count = manifest.at("count").get<std::size_t>();
    expected_hash = manifest.at("corpus_hash").get<std::string>();
  } catch (const json::exception& e) {
    throw FormatError("incomplete dataset manifest in " + dir.string() + ": " + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError("invalid dataset manifest in " + dir.string() + ": " + e.what());
  }

  ds.images.reserve(count);
  for (std::size_t i = 0; i < count; ++i) ds.images.push_back(read_pgm(dir / "images" / image_file_name(i)));
  ds.annotations.assign(count, {});

  std::istringstream ann(read_text(dir / "annotations.txt"));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(ann, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string tok[6];
    for (auto& t : tok) fields >> t;
    std::string extra;
    if (tok[5].empty() || (fields >> extra))
      throw FormatError("malformed annotation record at line " + std::to_string(line_no));
    const std::string where = "annotations.txt:" + std::to_string(line_no);
    const double id = parse_double(tok[0], where);
    if (id < 0 || id >= static_cast<double>(count) || id != std::floor(id))
      throw FormatError("annotation references unknown image at " + where);
    GroundTruthBox g{{parse_double(tok[1], where), parse_double(tok[2], where), parse_double(tok[3], where),
                      parse_double(tok[4], where)},
                     parse_double(tok[5], where)};
    ds.annotations[static_cast<std::size_t>(id)].push_back(g);
  }
  try {
    ds.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("invalid dataset contents: ") + e.what());
  }
  if (corpus_hash(ds) != expected_hash)
    throw FormatError("dataset content hash does not match its manifest in " + dir.string());
  return ds;
}

}  // namespace ewcdet
