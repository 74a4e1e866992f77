#include "promptrl/seg_backend.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "promptrl/errors.hpp"

namespace promptrl {

// ---------------------------------------------------------------------------
// Scene
// ---------------------------------------------------------------------------

Array2<int> label_components(const GroundTruth& gt, int* count) {
  Array2<int> labels(gt.h, gt.w, 0);
  int next = 0;
  std::vector<Pixel> stack;
  for (int y = 0; y < gt.h; ++y) {
    for (int x = 0; x < gt.w; ++x) {
      if (gt.at(y, x) == 0 || labels.at(y, x) != 0) continue;
      ++next;
      labels.at(y, x) = next;
      stack.push_back({y, x});
      while (!stack.empty()) {
        const Pixel p = stack.back();
        stack.pop_back();
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int ny = p.y + dy;
            const int nx = p.x + dx;
            if (ny < 0 || ny >= gt.h || nx < 0 || nx >= gt.w) continue;
            if (gt.at(ny, nx) == 0 || labels.at(ny, nx) != 0) continue;
            labels.at(ny, nx) = next;
            stack.push_back({ny, nx});
          }
        }
      }
    }
  }
  if (count) *count = next;
  return labels;
}

Scene::Scene(std::string id, GroundTruth gt, std::uint64_t seed)
    : id_(std::move(id)), gt_(std::move(gt)), seed_(seed) {
  for (std::uint8_t v : gt_.data) {
    if (v > 1) throw InputError("ground truth of scene '" + id_ + "' is not binary");
  }
  components_ = label_components(gt_, &n_components_);
}

double Scene::coverage() const {
  return gt_.data.empty() ? 0.0
                          : static_cast<double>(gt_.foreground_count()) /
                                static_cast<double>(gt_.data.size());
}

namespace {

struct Box {
  int y0, x0, y1, x1;  // half-open

  // True when at least one empty pixel row or column separates the boxes.
  bool separated(const Box& o) const {
    return y0 >= o.y1 + 1 || o.y0 >= y1 + 1 || x0 >= o.x1 + 1 || o.x0 >= x1 + 1;
  }
};

void draw(GroundTruth& gt, const Box& b, bool ellipse) {
  const double cy = 0.5 * (b.y0 + b.y1);
  const double cx = 0.5 * (b.x0 + b.x1);
  const double ry = 0.5 * (b.y1 - b.y0);
  const double rx = 0.5 * (b.x1 - b.x0);
  for (int y = b.y0; y < b.y1; ++y) {
    for (int x = b.x0; x < b.x1; ++x) {
      if (ellipse) {
        const double dy = (y + 0.5 - cy) / ry;
        const double dx = (x + 0.5 - cx) / rx;
        if (dy * dy + dx * dx > 1.0) continue;
      }
      gt.at(y, x) = 1;
    }
  }
}

}  // namespace

Scene generate_scene(const std::string& id, int image_h, int image_w, std::uint64_t seed) {
  if (image_h < 16 || image_w < 16) throw InputError("scene images must be at least 16x16");
  Rng rng(mix_seed(seed, 0));
  const int min_h = std::max(4, image_h / 8);
  const int min_w = std::max(4, image_w / 8);
  const int max_h = std::max(min_h + 1, static_cast<int>(0.45 * image_h));
  const int max_w = std::max(min_w + 1, static_cast<int>(0.45 * image_w));

  for (int attempt = 0; attempt < 1000; ++attempt) {
    const int n_shapes = 1 + static_cast<int>(uniform_index(rng, 3));
    GroundTruth gt(image_h, image_w, 0);
    std::vector<Box> boxes;
    for (int s = 0; s < n_shapes; ++s) {
      for (int tries = 0; tries < 100; ++tries) {
        const int bh = min_h + static_cast<int>(uniform_index(rng, max_h - min_h + 1));
        const int bw = min_w + static_cast<int>(uniform_index(rng, max_w - min_w + 1));
        const int y0 = static_cast<int>(uniform_index(rng, image_h - bh + 1));
        const int x0 = static_cast<int>(uniform_index(rng, image_w - bw + 1));
        const Box box{y0, x0, y0 + bh, x0 + bw};
        const bool ellipse = uniform01(rng) < 0.5;
        if (!std::all_of(boxes.begin(), boxes.end(),
                         [&](const Box& o) { return box.separated(o); })) {
          continue;
        }
        boxes.push_back(box);
        draw(gt, box, ellipse);
        break;
      }
    }
    Scene scene(id, std::move(gt), seed);
    const double cov = scene.coverage();
    if (cov < 0.05 || cov > 0.60) continue;
    if (scene.component_count() != static_cast<int>(boxes.size())) continue;
    return scene;
  }
  throw InputError("could not generate a valid scene for seed " + std::to_string(seed));
}

// ---------------------------------------------------------------------------
// Synthetic backend
// ---------------------------------------------------------------------------

Map2 box_blur3(const Map2& src) {
  Map2 out(src.h, src.w, 0.0);
  for (int y = 0; y < src.h; ++y) {
    for (int x = 0; x < src.w; ++x) {
      double sum = 0.0;
      int n = 0;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int sy = y + dy;
          const int sx = x + dx;
          if (sy < 0 || sy >= src.h || sx < 0 || sx >= src.w) continue;
          sum += src.at(sy, sx);
          ++n;
        }
      }
      out.at(y, x) = sum / n;
    }
  }
  return out;
}

namespace {

Map2 noisy_gt_signal(const Scene& image, const GridSpec& grid, double noise,
                     std::uint64_t stream) {
  Map2 m = box_blur3(area_downsample(image.gt(), grid.rows, grid.cols));
  Rng rng(mix_seed(image.seed(), stream));
  for (double& v : m.data) {
    const double r = uniform(rng, -noise, noise);
    v = std::clamp(v + r, 0.0, 1.0);
  }
  return m;
}

void check_image(const Scene& image, const GridSpec& grid) {
  if (image.height() != grid.image_h || image.width() != grid.image_w) {
    throw InputError("image '" + image.id() + "' is " + std::to_string(image.height()) + "x" +
                     std::to_string(image.width()) + ", backend expects " +
                     std::to_string(grid.image_h) + "x" + std::to_string(grid.image_w));
  }
}

}  // namespace

SyntheticBackend::SyntheticBackend(const GridSpec& grid, int channels, double noise)
    : grid_(grid), channels_(channels), noise_(noise) {
  if (channels_ < 1) throw ConfigError("synthetic backend needs at least one channel");
  if (noise_ < 0.0) throw ConfigError("synthetic feature noise must be non-negative");
}

FeatureMap SyntheticBackend::encode(const Scene& image) const {
  check_image(image, grid_);
  FeatureMap f(grid_.rows, grid_.cols, channels_);
  const Map2 signal = noisy_gt_signal(image, grid_, noise_, 1);
  for (int y = 0; y < f.h; ++y) {
    for (int x = 0; x < f.w; ++x) f.at(y, x, 0) = signal.at(y, x);
  }
  Rng rng(mix_seed(image.seed(), 2));
  for (int ch = 1; ch < channels_; ++ch) {
    Map2 field(f.h, f.w);
    for (double& v : field.data) v = uniform01(rng);
    field = box_blur3(field);
    for (int y = 0; y < f.h; ++y) {
      for (int x = 0; x < f.w; ++x) f.at(y, x, ch) = field.at(y, x);
    }
  }
  return f;
}

MaskProb SyntheticBackend::decode(const Scene& image, const FeatureMap& feature,
                                  const PromptSet& prompts) const {
  check_image(image, grid_);
  if (prompts.empty()) throw UsageError("decode requires at least one prompt");
  const FeatureShape shape = feature_shape();
  if (feature.h != shape.h || feature.w != shape.w || feature.c != shape.c) {
    throw InputError("feature map shape does not match the synthetic backend");
  }
  const int n = image.component_count();
  std::vector<char> positive(n + 1, 0), negative(n + 1, 0);
  for (const PromptPoint& p : prompts.points) {
    if (p.y < 0 || p.y >= image.height() || p.x < 0 || p.x >= image.width()) {
      throw BoundsError("prompt (" + std::to_string(p.y) + ", " + std::to_string(p.x) +
                        ") outside the image");
    }
    const int comp = image.components().at(p.y, p.x);
    if (comp == 0) continue;
    (p.label == Label::Positive ? positive : negative)[comp] = 1;
  }
  MaskProb mask(image.height(), image.width(), 0.0);
  const auto& comps = image.components();
  for (std::size_t i = 0; i < mask.data.size(); ++i) {
    const int comp = comps.data[i];
    if (comp != 0 && positive[comp] && !negative[comp]) mask.data[i] = 1.0;
  }
  return mask;
}

// ---------------------------------------------------------------------------
// Adapter slots
// ---------------------------------------------------------------------------

AdapterBackend::AdapterBackend(AdapterOptions options, FeatureShape shape)
    : options_(std::move(options)), shape_(shape) {}

FeatureMap AdapterBackend::encode(const Scene&) const {
  throw Error("adapter backend: no model runtime is linked (checkpoint '" + options_.checkpoint +
              "', device '" + options_.device + "')");
}

MaskProb AdapterBackend::decode(const Scene&, const FeatureMap&, const PromptSet& prompts) const {
  if (prompts.empty()) throw UsageError("decode requires at least one prompt");
  throw Error("adapter backend: no model runtime is linked (checkpoint '" + options_.checkpoint +
              "')");
}

std::unique_ptr<SegmentationBackend> make_backend(const RunConfig& cfg) {
  if (cfg.backend == BackendKind::Adapter) {
    return std::make_unique<AdapterBackend>(
        cfg.adapter, FeatureShape{cfg.grid.rows, cfg.grid.cols, cfg.synthetic.feature_channels});
  }
  return std::make_unique<SyntheticBackend>(cfg.grid, cfg.synthetic.feature_channels,
                                            cfg.synthetic.feature_noise);
}

SyntheticSemanticProvider::SyntheticSemanticProvider(const GridSpec& grid, double noise)
    : grid_(grid), noise_(noise) {}

SemanticMap SyntheticSemanticProvider::semantic_map(const Scene& image) const {
  check_image(image, grid_);
  return SemanticMap(noisy_gt_signal(image, grid_, noise_, 3));
}

AdapterSemanticProvider::AdapterSemanticProvider(AdapterOptions options, std::string text_prompt)
    : options_(std::move(options)), text_prompt_(std::move(text_prompt)) {}

SemanticMap AdapterSemanticProvider::semantic_map(const Scene&) const {
  throw Error("adapter semantic provider: no vision-language runtime is linked (text prompt '" +
              text_prompt_ + "')");
}

std::unique_ptr<SemanticMapProvider> make_semantic_provider(const RunConfig& cfg) {
  if (cfg.backend == BackendKind::Adapter) {
    if (!cfg.text_prompt) throw ConfigError("adapter semantic maps require text_prompt");
    return std::make_unique<AdapterSemanticProvider>(cfg.adapter, *cfg.text_prompt);
  }
  return std::make_unique<SyntheticSemanticProvider>(cfg.grid, cfg.synthetic.semantic_noise);
}

}  // namespace promptrl
