#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "ewcdet/consolidation.hpp"
#include "ewcdet/detector.hpp"

namespace ewcdet {

inline constexpr int kCheckpointFormatVersion = 1;

/// Everything needed to rebuild a detector, optionally with the
/// consolidation state captured after its training phase.
struct Checkpoint {
  DetectorParams params;
  AnchorConfig anchors;
  std::uint64_t seed = 0;
  std::string phase;
  std::optional<ConsolidationState> consolidation;
};

/// JSON container; values are written in shortest round-trip form so a
/// save/load cycle is bit-exact.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string checkpoint_to_string(const Checkpoint& ckpt);
Checkpoint checkpoint_from_string(const std::string& text);

/// SHA-256 of the raw parameter bytes.
std::string params_hash(const DetectorParams& params);

}  // namespace ewcdet
