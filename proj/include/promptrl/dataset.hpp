#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "promptrl/seg_backend.hpp"

namespace promptrl {

struct SceneEntry {
  std::string id;
  std::uint64_t seed = 0;
  std::string split;
  std::string file;
};

// Manifest of a synthetic dataset directory (manifest.json + one .rle per scene).
struct DatasetManifest {
  int version = 1;
  int image_h = 0;
  int image_w = 0;
  std::uint64_t seed = 0;
  std::vector<SceneEntry> scenes;
};

// Run-length text encoding of a binary mask:
//   "RLE1 <h> <w>\n" followed by alternating run lengths starting with zeros.
std::string encode_rle(const GroundTruth& gt);
GroundTruth decode_rle(const std::string& text);

// Writes n scenes and manifest.json into out_dir. The first
// round(n * train_fraction) scenes form the "train" split, the rest "test".
DatasetManifest synthesize_dataset(int n_scenes, int image_h, int image_w, std::uint64_t seed,
                                   double train_fraction, const std::filesystem::path& out_dir);

DatasetManifest load_manifest(const std::filesystem::path& manifest_path);

// Loads the scenes of one split ("" or "all" loads every scene).
std::vector<Scene> load_scenes(const std::filesystem::path& manifest_path,
                               const std::string& split);

}  // namespace promptrl
