#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ftl/dataset.hpp"
#include "ftl/image.hpp"

namespace ftl {

/// Generator settings for the procedural forgery dataset.
///
/// Each identity gets a textured face-like rendering whose texture phase and position
/// drift smoothly with the frame index. Every fake family re-renders the same frames
/// with one localized artifact inside a square region around the face centre. Family
/// artifacts cycle through: high-frequency blend, box blur, speckle noise, colour tint.
/// All families also brighten the region outline, a shared blending seam.
struct SyntheticSpec {
  int identities = 10;
  int frames = 8;
  int image_size = 32;
  std::vector<std::string> families{"synthA", "synthB"};
  std::uint64_t seed = 7;
  std::string dataset_name = "synthetic";
};

void validate(const SyntheticSpec& spec);

/// Half-open pixel rectangle [y0, y1) x [x0, x1).
struct Region {
  int y0 = 0, x0 = 0, y1 = 0, x1 = 0;
  bool contains(int y, int x) const { return y >= y0 && y < y1 && x >= x0 && x < x1; }
};

struct SyntheticDataset {
  Manifest manifest;
  std::map<std::string, Image> images;                       // keyed by payload_ref
  std::map<std::pair<std::string, long>, Region> artifact_regions;  // (identity, frame)

  ImageStore store() const;
};

std::string synthetic_payload_ref(const std::string& identity, const std::string& category, long frame);

/// Deterministic in `spec`. Throws ValidationError on non-positive counts.
SyntheticDataset make_synthetic_dataset(const SyntheticSpec& spec);

/// Writes `images/<identity>_<category>_<frame>.png` and `<manifest_name>.jsonl` under
/// `dir`; returns the manifest path.
std::filesystem::path write_synthetic_dataset(const std::filesystem::path& dir, const SyntheticDataset& data,
                                              const std::string& manifest_name = "manifest");

}  // namespace ftl
