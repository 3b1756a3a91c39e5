#include "ewcdet/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "ewcdet/error.hpp"
#include "ewcdet/hash.hpp"
#include "json_io.hpp"

namespace ewcdet {

std::string checkpoint_to_string(const Checkpoint& ckpt) {
  ckpt.params.validate();
  json layout = json::array();
  for (const auto& s : ckpt.params.layout)
    layout.push_back({{"name", s.name}, {"offset", s.offset}, {"shape", s.shape}});
  json j{{"format", "ewcdet-checkpoint"},
         {"format_version", kCheckpointFormatVersion},
         {"architecture", ckpt.params.arch},
         {"anchors", ckpt.anchors},
         {"seed", ckpt.seed},
         {"phase", ckpt.phase},
         {"layout", layout},
         {"values", ckpt.params.values}};
  if (ckpt.consolidation) {
    const ConsolidationState& s = *ckpt.consolidation;
    s.validate(ckpt.params.size());
    j["consolidation"] = {{"lambda", s.lambda},
                          {"mode", to_string(s.mode)},
                          {"source_dataset_id", s.source_dataset_id},
                          {"sample_count", s.sample_count},
                          {"snapshot", s.snapshot},
                          {"fisher", s.fisher}};
  }
  return j.dump() + "\n";
}

Checkpoint checkpoint_from_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("corrupt checkpoint: ") + e.what());
  }
  Checkpoint c;
  try {
    if (j.at("format").get<std::string>() != "ewcdet-checkpoint") throw FormatError("not a checkpoint");
    const int version = j.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion)
      throw FormatError("checkpoint format version " + std::to_string(version) + " is not supported");
    c.params.arch = j.at("architecture").get<Architecture>();
    c.anchors = j.at("anchors").get<AnchorConfig>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.phase = j.at("phase").get<std::string>();
    for (const auto& s : j.at("layout"))
      c.params.layout.push_back(
          {s.at("name").get<std::string>(), s.at("offset").get<std::size_t>(), s.at("shape").get<std::vector<std::size_t>>()});
    c.params.values = j.at("values").get<std::vector<double>>();
    if (j.contains("consolidation")) {
      const json& s = j.at("consolidation");
      ConsolidationState st;
      st.lambda = s.at("lambda").get<double>();
      st.mode = fisher_mode_from_string(s.at("mode").get<std::string>());
      st.source_dataset_id = s.at("source_dataset_id").get<std::string>();
      st.sample_count = s.at("sample_count").get<std::size_t>();
      st.snapshot = s.at("snapshot").get<std::vector<double>>();
      st.fisher = s.at("fisher").get<std::vector<double>>();
      c.consolidation = std::move(st);
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("incomplete checkpoint: ") + e.what());
  }
  try {
    c.anchors.validate();
    c.params.validate();
    if (c.consolidation) c.consolidation->validate(c.params.size());
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("inconsistent checkpoint: ") + e.what());
  }
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string text = checkpoint_to_string(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_string(ss.str());
}

std::string params_hash(const DetectorParams& params) {
  Sha256 h;
  h.update_values(std::span<const double>(params.values));
  return h.hex_digest();
}

}  // namespace ewcdet
