#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "../common/oracles.hpp"
#include "promptrl/dataset.hpp"
#include "promptrl/errors.hpp"
#include "promptrl/seg_backend.hpp"

using namespace promptrl;
namespace fs = std::filesystem;

namespace {

const GridSpec kGrid = build_grid(160, 160, 16, 16);

// Two rectangles: rows 16..79 x cols 16..79 and rows 112..143 x cols 96..143.
Scene two_boxes() {
  GroundTruth gt(160, 160, 0);
  for (int y = 16; y < 80; ++y)
    for (int x = 16; x < 80; ++x) gt.at(y, x) = 1;
  for (int y = 112; y < 144; ++y)
    for (int x = 96; x < 144; ++x) gt.at(y, x) = 1;
  return Scene("boxes", gt, 5);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("scene components and coverage") {
  const Scene s = two_boxes();
  CHECK(s.component_count() == 2);
  CHECK(s.coverage() == doctest::Approx((64.0 * 64 + 32 * 48) / (160.0 * 160)));
  GroundTruth bad(4, 4, 0);
  bad.at(0, 0) = 2;
  CHECK_THROWS_AS(Scene("bad", bad, 0), InputError);
}

TEST_CASE("8-connectivity joins diagonal neighbours") {
  GroundTruth gt(3, 3, 0);
  gt.at(0, 0) = gt.at(1, 1) = gt.at(2, 0) = 1;
  int n = 0;
  label_components(gt, &n);
  CHECK(n == 1);
}

TEST_CASE("zero-noise encode: interior cells read 1, distant cells read 0") {
  const SyntheticBackend be(kGrid, 8, 0.0);
  const Scene s = two_boxes();
  const FeatureMap f = be.encode(s);
  CHECK(f.h == 10);
  CHECK(f.w == 10);
  CHECK(f.c == 8);
  CHECK(f.at(2, 2, 0) == doctest::Approx(1.0));  // cells 1..4 x 1..4 are foreground
  CHECK(f.at(0, 9, 0) == 0.0);
  CHECK(f.at(4, 9, 0) == 0.0);
  for (double v : f.data) CHECK((v >= 0.0 && v <= 1.0));
}

TEST_CASE("encode is deterministic and noise is bounded") {
  const SyntheticBackend noisy(kGrid, 8, 0.1), clean(kGrid, 8, 0.0);
  const Scene s = two_boxes();
  CHECK(noisy.encode(s) == noisy.encode(s));
  const FeatureMap a = noisy.encode(s), b = clean.encode(s);
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 10; ++x) CHECK(std::abs(a.at(y, x, 0) - b.at(y, x, 0)) <= 0.1 + 1e-12);
  CHECK(noisy.feature_shape() == FeatureShape{10, 10, 8});
}

TEST_CASE("encode rejects a scene of the wrong size") {
  const SyntheticBackend be(kGrid);
  const Scene small("small", GroundTruth(80, 80, 0), 1);
  CHECK_THROWS_AS(be.encode(small), InputError);
}

TEST_CASE("decode examples") {
  const SyntheticBackend be(kGrid);
  const Scene s = two_boxes();
  const FeatureMap f = be.encode(s);
  const GroundTruth& gt = s.gt();

  const MaskProb one = be.decode(s, f, PromptSet{{{20, 20, Label::Positive}}});
  CHECK(one == oracle::decode(gt, PromptSet{{{20, 20, Label::Positive}}}));
  double area = 0;
  for (double v : one.data) area += v;
  CHECK(area == 64.0 * 64.0);

  const MaskProb killed =
      be.decode(s, f, PromptSet{{{20, 20, Label::Positive}, {70, 70, Label::Negative}}});
  for (double v : killed.data) CHECK(v == 0.0);

  const PromptSet both{{{20, 20, Label::Positive}, {120, 100, Label::Positive},
                        {0, 0, Label::Negative}}};
  const MaskProb uni = be.decode(s, f, both);
  CHECK(uni == oracle::decode(gt, both));
  for (std::size_t i = 0; i < uni.data.size(); ++i) CHECK(uni.data[i] == gt.data[i]);

  CHECK_THROWS_AS(be.decode(s, f, PromptSet{}), UsageError);
}

TEST_CASE("decode matches the flood-fill oracle on random scenes and prompts") {
  const SyntheticBackend be(kGrid);
  Rng rng(21);
  for (int i = 0; i < 30; ++i) {
    const Scene s = generate_scene("r", 160, 160, rng());
    const FeatureMap f = be.encode(s);
    PromptSet p;
    const int n = 1 + static_cast<int>(uniform_index(rng, 6));
    for (int k = 0; k < n; ++k) {
      p.add({static_cast<int>(uniform_index(rng, 160)), static_cast<int>(uniform_index(rng, 160)),
             uniform01(rng) < 0.6 ? Label::Positive : Label::Negative});
    }
    const MaskProb m = be.decode(s, f, p);
    CHECK(m == oracle::decode(s.gt(), p));
    for (std::size_t k = 0; k < m.data.size(); ++k) {
      CHECK(m.data[k] <= s.gt().data[k]);  // never leaves the ground truth
    }
    // An extra positive prompt never shrinks the mask.
    PromptSet more = p;
    more.add({static_cast<int>(uniform_index(rng, 160)), static_cast<int>(uniform_index(rng, 160)),
              Label::Positive});
    const MaskProb m2 = be.decode(s, f, more);
    for (std::size_t k = 0; k < m.data.size(); ++k) CHECK(m2.data[k] >= m.data[k]);
  }
}

TEST_CASE("generated scenes satisfy the scene invariants") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const Scene s = generate_scene("g", 160, 160, seed);
    CHECK(s.coverage() >= 0.05);
    CHECK(s.coverage() <= 0.60);
    CHECK(s.component_count() >= 1);
    CHECK(s.component_count() <= 3);
  }
  CHECK(generate_scene("a", 160, 160, 9).gt() == generate_scene("b", 160, 160, 9).gt());
}

TEST_CASE("semantic map is deterministic, bounded and correlated with the ground truth") {
  const SyntheticSemanticProvider sp(kGrid, 0.2);
  const Scene s = two_boxes();
  const SemanticMap m = sp.semantic_map(s);
  CHECK(m == sp.semantic_map(s));
  for (double v : m.data) CHECK((v >= 0.0 && v <= 1.0));
  CHECK(m.at(2, 2) > 0.7);
  CHECK(m.at(0, 9) < 0.3);
}

TEST_CASE("box blur averages in-bounds neighbours") {
  Map2 m(3, 3, 0.0);
  m.at(0, 0) = 1.0;
  const Map2 b = box_blur3(m);
  CHECK(b.at(0, 0) == doctest::Approx(0.25));
  CHECK(b.at(1, 1) == doctest::Approx(1.0 / 9));
  CHECK(b.at(2, 2) == 0.0);
}

TEST_CASE("adapter backend is declared but has no runtime") {
  RunConfig cfg;
  cfg.backend = BackendKind::Adapter;
  cfg.adapter.checkpoint = "sam_vit_h.pth";
  const auto be = make_backend(cfg);
  CHECK(be->kind() == BackendKind::Adapter);
  CHECK_THROWS_AS(be->encode(two_boxes()), Error);
  CHECK_THROWS_AS(make_semantic_provider(cfg), ConfigError);
}

TEST_CASE("run-length encoding round trips") {
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    const Scene s = generate_scene("x", 32, 48, rng());
    CHECK(decode_rle(encode_rle(s.gt())) == s.gt());
  }
  GroundTruth all(2, 3, 1);
  CHECK(decode_rle(encode_rle(all)) == all);
  CHECK_THROWS_AS(decode_rle("RLE1 2 2\n1 1\n"), InputError);
}

TEST_CASE("dataset synthesis is reproducible and seed dependent") {
  const fs::path root = fs::temp_directory_path() / "promptrl_synth_test";
  fs::remove_all(root);
  const auto m1 = synthesize_dataset(50, 160, 160, 4, 0.5, root / "a");
  synthesize_dataset(50, 160, 160, 4, 0.5, root / "b");
  synthesize_dataset(50, 160, 160, 5, 0.5, root / "c");
  CHECK(m1.scenes.size() == 50);
  CHECK(slurp(root / "a/manifest.json") == slurp(root / "b/manifest.json"));
  int same_as_other_seed = 0;
  for (const SceneEntry& e : m1.scenes) {
    CHECK(slurp(root / "a" / e.file) == slurp(root / "b" / e.file));
    same_as_other_seed += slurp(root / "a" / e.file) == slurp(root / "c" / e.file);
  }
  CHECK(same_as_other_seed == 0);
  CHECK(std::hash<std::string>{}(slurp(root / "a/manifest.json")) !=
        std::hash<std::string>{}(slurp(root / "c/manifest.json")));

  CHECK(load_scenes(root / "a/manifest.json", "train").size() == 25);
  CHECK(load_scenes(root / "a/manifest.json", "test").size() == 25);
  CHECK(load_scenes(root / "a/manifest.json", "all").size() == 50);

  const auto empty = synthesize_dataset(0, 160, 160, 4, 0.5, root / "empty");
  CHECK(empty.scenes.empty());
  CHECK(load_manifest(root / "empty/manifest.json").scenes.empty());
  fs::remove_all(root);
}
