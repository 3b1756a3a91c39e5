#pragma once

// nlohmann/json converters for the library's value types. Private to the
// core library; public headers stay free of the JSON dependency.

#include <initializer_list>
#include <set>
#include <string>

#include "json.hpp"

#include "ewcdet/consolidation.hpp"
#include "ewcdet/detector.hpp"
#include "ewcdet/error.hpp"
#include "ewcdet/synthdata.hpp"
#include "ewcdet/training.hpp"

namespace ewcdet {

using nlohmann::json;

/// Rejects keys outside `allowed` so typos in config files surface.
inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& what) {
  if (!j.is_object()) throw InvalidArgument(what + " must be a JSON object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items()) {
    if (!ok.contains(key)) throw InvalidArgument("unknown key '" + key + "' in " + what);
  }
}

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("bad value for '") + key + "': " + e.what());
  }
}

inline void to_json(json& j, const Range& r) { j = json::array({r.lo, r.hi}); }
inline void from_json(const json& j, Range& r) {
  if (!j.is_array() || j.size() != 2) throw InvalidArgument("range must be a [lo, hi] pair");
  r.lo = j[0].get<double>();
  r.hi = j[1].get<double>();
}
inline void to_json(json& j, const IntRange& r) { j = json::array({r.lo, r.hi}); }
inline void from_json(const json& j, IntRange& r) {
  if (!j.is_array() || j.size() != 2) throw InvalidArgument("range must be a [lo, hi] pair");
  r.lo = j[0].get<int>();
  r.hi = j[1].get<int>();
}

inline void to_json(json& j, const DomainSpec& s) {
  j = json{{"id", s.id},
           {"image_size", s.image_size},
           {"background", to_string(s.background)},
           {"background_intensity", s.background_intensity},
           {"stripe_period", s.stripe_period},
           {"object_intensity", s.object_intensity},
           {"object_height", s.object_height},
           {"aspect_ratio", s.aspect_ratio},
           {"aspect_jitter", s.aspect_jitter},
           {"objects_per_image", s.objects_per_image},
           {"occluder_probability", s.occluder_probability},
           {"occlusion_fraction", s.occlusion_fraction},
           {"occluder_intensity", s.occluder_intensity},
           {"noise_sigma", s.noise_sigma}};
}

inline void from_json(const json& j, DomainSpec& s) {
  check_keys(j,
             {"id", "image_size", "background", "background_intensity", "stripe_period", "object_intensity",
              "object_height", "aspect_ratio", "aspect_jitter", "objects_per_image", "occluder_probability",
              "occlusion_fraction", "occluder_intensity", "noise_sigma"},
             "domain spec");
  read_opt(j, "id", s.id);
  read_opt(j, "image_size", s.image_size);
  if (j.contains("background")) s.background = background_from_string(j.at("background").get<std::string>());
  read_opt(j, "background_intensity", s.background_intensity);
  read_opt(j, "stripe_period", s.stripe_period);
  read_opt(j, "object_intensity", s.object_intensity);
  read_opt(j, "object_height", s.object_height);
  read_opt(j, "aspect_ratio", s.aspect_ratio);
  read_opt(j, "aspect_jitter", s.aspect_jitter);
  read_opt(j, "objects_per_image", s.objects_per_image);
  read_opt(j, "occluder_probability", s.occluder_probability);
  read_opt(j, "occlusion_fraction", s.occlusion_fraction);
  read_opt(j, "occluder_intensity", s.occluder_intensity);
  read_opt(j, "noise_sigma", s.noise_sigma);
}

inline void to_json(json& j, const AnchorConfig& c) {
  j = json{{"image_size", c.image_size},
           {"grid_stride", c.grid_stride},
           {"anchor_heights", c.anchor_heights},
           {"anchor_aspect_ratios", c.anchor_aspect_ratios},
           {"score_threshold", c.score_threshold},
           {"nms_iou_threshold", c.nms_iou_threshold}};
}

inline void from_json(const json& j, AnchorConfig& c) {
  check_keys(j,
             {"image_size", "grid_stride", "anchor_heights", "anchor_aspect_ratios", "score_threshold",
              "nms_iou_threshold"},
             "anchor config");
  read_opt(j, "image_size", c.image_size);
  read_opt(j, "grid_stride", c.grid_stride);
  read_opt(j, "anchor_heights", c.anchor_heights);
  read_opt(j, "anchor_aspect_ratios", c.anchor_aspect_ratios);
  read_opt(j, "score_threshold", c.score_threshold);
  read_opt(j, "nms_iou_threshold", c.nms_iou_threshold);
}

inline void to_json(json& j, const Architecture& a) {
  j = json{{"input_pool", a.input_pool}, {"channels", a.channels}, {"anchors_per_cell", a.anchors_per_cell}};
}

inline void from_json(const json& j, Architecture& a) {
  check_keys(j, {"input_pool", "channels", "anchors_per_cell"}, "architecture");
  read_opt(j, "input_pool", a.input_pool);
  read_opt(j, "channels", a.channels);
  read_opt(j, "anchors_per_cell", a.anchors_per_cell);
}

inline void to_json(json& j, const TrainConfig& c) {
  j = json{{"learning_rate", c.learning_rate}, {"momentum", c.momentum}, {"weight_decay", c.weight_decay},
           {"epochs", c.epochs},               {"batch_size", c.batch_size}, {"g_max", c.g_max},
           {"lambda", c.lambda},               {"seed", c.seed},         {"fisher_mode", to_string(c.fisher_mode)}};
}

inline void from_json(const json& j, TrainConfig& c) {
  check_keys(j,
             {"learning_rate", "momentum", "weight_decay", "epochs", "batch_size", "g_max", "lambda", "seed",
              "fisher_mode"},
             "train config");
  read_opt(j, "learning_rate", c.learning_rate);
  read_opt(j, "momentum", c.momentum);
  read_opt(j, "weight_decay", c.weight_decay);
  read_opt(j, "epochs", c.epochs);
  read_opt(j, "batch_size", c.batch_size);
  read_opt(j, "g_max", c.g_max);
  read_opt(j, "lambda", c.lambda);
  read_opt(j, "seed", c.seed);
  if (j.contains("fisher_mode")) c.fisher_mode = fisher_mode_from_string(j.at("fisher_mode").get<std::string>());
}

/// Parses text, mapping parse failures to InvalidArgument.
inline json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw InvalidArgument("cannot parse " + what + ": " + e.what());
  }
}

}  // namespace ewcdet
