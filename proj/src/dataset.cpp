#include "promptrl/dataset.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "promptrl/errors.hpp"

namespace promptrl {

namespace fs = std::filesystem;
using nlohmann::json;

std::string encode_rle(const GroundTruth& gt) {
  std::ostringstream out;
  out << "RLE1 " << gt.h << ' ' << gt.w << '\n';
  std::uint8_t current = 0;
  std::size_t run = 0;
  bool first = true;
  auto flush = [&] {
    out << (first ? "" : " ") << run;
    first = false;
  };
  for (std::uint8_t v : gt.data) {
    if (v == current) {
      ++run;
    } else {
      flush();
      current = v;
      run = 1;
    }
  }
  flush();
  out << '\n';
  return out.str();
}

GroundTruth decode_rle(const std::string& text) {
  std::istringstream in(text);
  std::string magic;
  int h = 0, w = 0;
  if (!(in >> magic >> h >> w) || magic != "RLE1" || h <= 0 || w <= 0) {
    throw InputError("malformed RLE header");
  }
  GroundTruth gt(h, w, 0);
  std::size_t pos = 0;
  std::uint8_t value = 0;
  std::size_t run = 0;
  while (in >> run) {
    if (pos + run > gt.data.size()) throw InputError("RLE runs exceed the mask size");
    std::fill_n(gt.data.begin() + static_cast<std::ptrdiff_t>(pos), run, value);
    pos += run;
    value ^= 1;
  }
  if (pos != gt.data.size()) throw InputError("RLE runs do not cover the mask");
  return gt;
}

namespace {

json manifest_json(const DatasetManifest& m) {
  json scenes = json::array();
  for (const SceneEntry& e : m.scenes) {
    scenes.push_back({{"id", e.id}, {"seed", e.seed}, {"split", e.split}, {"file", e.file}});
  }
  return {{"version", m.version}, {"image_h", m.image_h}, {"image_w", m.image_w},
          {"seed", m.seed},       {"scenes", scenes}};
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw InputError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

DatasetManifest synthesize_dataset(int n_scenes, int image_h, int image_w, std::uint64_t seed,
                                   double train_fraction, const fs::path& out_dir) {
  if (n_scenes < 0) throw UsageError("scene count must be non-negative");
  if (train_fraction < 0.0 || train_fraction > 1.0) {
    throw UsageError("train fraction must lie in [0, 1]");
  }
  fs::create_directories(out_dir);
  DatasetManifest m;
  m.image_h = image_h;
  m.image_w = image_w;
  m.seed = seed;
  const int n_train = static_cast<int>(std::lround(n_scenes * train_fraction));
  for (int i = 0; i < n_scenes; ++i) {
    std::ostringstream id;
    id << "scene_" << std::setw(4) << std::setfill('0') << i;
    SceneEntry e;
    e.id = id.str();
    e.seed = mix_seed(seed, static_cast<std::uint64_t>(i));
    e.split = i < n_train ? "train" : "test";
    e.file = e.id + ".rle";
    const Scene scene = generate_scene(e.id, image_h, image_w, e.seed);
    std::ofstream out(out_dir / e.file, std::ios::binary);
    if (!out) throw Error("cannot write " + (out_dir / e.file).string());
    out << encode_rle(scene.gt());
    m.scenes.push_back(std::move(e));
  }
  std::ofstream out(out_dir / "manifest.json", std::ios::binary);
  if (!out) throw Error("cannot write manifest in " + out_dir.string());
  out << manifest_json(m).dump(2) << '\n';
  return m;
}

DatasetManifest load_manifest(const fs::path& manifest_path) {
  json j;
  try {
    j = json::parse(read_file(manifest_path));
  } catch (const json::parse_error& e) {
    throw InputError("cannot parse manifest " + manifest_path.string() + ": " + e.what());
  }
  DatasetManifest m;
  try {
    m.version = j.at("version").get<int>();
    m.image_h = j.at("image_h").get<int>();
    m.image_w = j.at("image_w").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const json& s : j.at("scenes")) {
      m.scenes.push_back({s.at("id").get<std::string>(), s.at("seed").get<std::uint64_t>(),
                          s.at("split").get<std::string>(), s.at("file").get<std::string>()});
    }
  } catch (const json::exception& e) {
    throw InputError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  if (m.version != 1) throw InputError("unsupported manifest version " + std::to_string(m.version));
  return m;
}

std::vector<Scene> load_scenes(const fs::path& manifest_path, const std::string& split) {
  const DatasetManifest m = load_manifest(manifest_path);
  const fs::path dir = manifest_path.parent_path();
  std::vector<Scene> scenes;
  for (const SceneEntry& e : m.scenes) {
    if (!split.empty() && split != "all" && e.split != split) continue;
    GroundTruth gt = decode_rle(read_file(dir / e.file));
    if (gt.h != m.image_h || gt.w != m.image_w) {
      throw InputError("scene " + e.id + " does not match the manifest image size");
    }
    scenes.emplace_back(e.id, std::move(gt), e.seed);
  }
  return scenes;
}

}  // namespace promptrl
