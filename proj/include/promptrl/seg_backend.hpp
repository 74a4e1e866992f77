#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>

#include "promptrl/config.hpp"
#include "promptrl/core_types.hpp"

namespace promptrl {

// A synthetic image: its ground truth plus the seed that drives every
// seeded quantity derived from it (feature noise, semantic-map noise).
class Scene {
 public:
  Scene(std::string id, GroundTruth gt, std::uint64_t seed);

  const std::string& id() const { return id_; }
  const GroundTruth& gt() const { return gt_; }
  std::uint64_t seed() const { return seed_; }
  int height() const { return gt_.h; }
  int width() const { return gt_.w; }

  // 8-connected foreground components; 0 is background, components are 1..n.
  const Array2<int>& components() const { return components_; }
  int component_count() const { return n_components_; }
  double coverage() const;

 private:
  std::string id_;
  GroundTruth gt_;
  std::uint64_t seed_;
  Array2<int> components_;
  int n_components_ = 0;
};

// Connected-component labeling with 8-connectivity.
Array2<int> label_components(const GroundTruth& gt, int* count);

// 1-3 disjoint axis-aligned rectangles/ellipses covering 5%-60% of the image.
Scene generate_scene(const std::string& id, int image_h, int image_w, std::uint64_t seed);

struct FeatureShape {
  int h = 0;
  int w = 0;
  int c = 0;

  bool operator==(const FeatureShape&) const = default;
};

// Image encoder + prompt encoder + mask decoder behind one interface.
// Implementations are read-only after construction; concurrent calls are safe.
class SegmentationBackend {
 public:
  virtual ~SegmentationBackend() = default;

  virtual BackendKind kind() const = 0;
  virtual FeatureShape feature_shape() const = 0;

  virtual FeatureMap encode(const Scene& image) const = 0;

  // Throws UsageError on an empty prompt set.
  virtual MaskProb decode(const Scene& image, const FeatureMap& feature,
                          const PromptSet& prompts) const = 0;
};

// Deterministic stand-in for a promptable segmenter.
//
// encode: channel 0 is the ground truth area-downsampled to grid resolution,
// box-blurred (3x3, in-bounds mean), perturbed by U(-noise, noise) and clamped
// to [0, 1]; the remaining channels are blurred uniform random fields.
//
// decode: union of the ground-truth components holding a positive prompt,
// minus every component holding a negative prompt. Prompts on background
// contribute nothing, so the output never leaves the ground truth.
class SyntheticBackend final : public SegmentationBackend {
 public:
  SyntheticBackend(const GridSpec& grid, int channels = 8, double noise = 0.1);

  BackendKind kind() const override { return BackendKind::Synthetic; }
  FeatureShape feature_shape() const override { return {grid_.rows, grid_.cols, channels_}; }
  FeatureMap encode(const Scene& image) const override;
  MaskProb decode(const Scene& image, const FeatureMap& feature,
                  const PromptSet& prompts) const override;

  const GridSpec& grid() const { return grid_; }

 private:
  GridSpec grid_;
  int channels_;
  double noise_;
};

// Slot for a real foundation model. The model runtime is not linked into this
// build; every call raises an Error naming the configured checkpoint.
class AdapterBackend final : public SegmentationBackend {
 public:
  AdapterBackend(AdapterOptions options, FeatureShape shape);

  BackendKind kind() const override { return BackendKind::Adapter; }
  FeatureShape feature_shape() const override { return shape_; }
  FeatureMap encode(const Scene& image) const override;
  MaskProb decode(const Scene& image, const FeatureMap& feature,
                  const PromptSet& prompts) const override;

 private:
  AdapterOptions options_;
  FeatureShape shape_;
};

std::unique_ptr<SegmentationBackend> make_backend(const RunConfig& cfg);

// Text-guided semantic map M_c at feature resolution, values in [0, 1].
struct SemanticMap : Map2 {
  using Map2::Map2;
  SemanticMap() = default;
  explicit SemanticMap(Map2 m) : Map2(std::move(m)) {}
};

class SemanticMapProvider {
 public:
  virtual ~SemanticMapProvider() = default;
  virtual SemanticMap semantic_map(const Scene& image) const = 0;
};

// Ground truth downsampled, box-blurred and perturbed by U(-noise, noise).
class SyntheticSemanticProvider final : public SemanticMapProvider {
 public:
  SyntheticSemanticProvider(const GridSpec& grid, double noise = 0.2);
  SemanticMap semantic_map(const Scene& image) const override;

 private:
  GridSpec grid_;
  double noise_;
};

// Vision-language similarity map for `text_prompt`; requires an external
// model runtime, so every call raises an Error.
class AdapterSemanticProvider final : public SemanticMapProvider {
 public:
  AdapterSemanticProvider(AdapterOptions options, std::string text_prompt);
  SemanticMap semantic_map(const Scene& image) const override;

 private:
  AdapterOptions options_;
  std::string text_prompt_;
};

std::unique_ptr<SemanticMapProvider> make_semantic_provider(const RunConfig& cfg);

// 3x3 box blur where each output averages its in-bounds neighbours.
Map2 box_blur3(const Map2& src);

}  // namespace promptrl
