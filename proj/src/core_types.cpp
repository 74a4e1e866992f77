#include "promptrl/core_types.hpp"

#include <algorithm>
#include <string>

#include "promptrl/errors.hpp"

namespace promptrl {

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::size_t GroundTruth::foreground_count() const {
  return static_cast<std::size_t>(std::count(data.begin(), data.end(), std::uint8_t{1}));
}

GridSpec build_grid(int image_h, int image_w, int patch_h, int patch_w) {
  if (image_h <= 0 || image_w <= 0 || patch_h <= 0 || patch_w <= 0) {
    throw ConfigError("grid dimensions must be positive, got image " + std::to_string(image_h) +
                      "x" + std::to_string(image_w) + " patch " + std::to_string(patch_h) + "x" +
                      std::to_string(patch_w));
  }
  if (image_h % patch_h != 0) {
    throw ConfigError("image_h=" + std::to_string(image_h) + " is not divisible by patch_h=" +
                      std::to_string(patch_h));
  }
  if (image_w % patch_w != 0) {
    throw ConfigError("image_w=" + std::to_string(image_w) + " is not divisible by patch_w=" +
                      std::to_string(patch_w));
  }
  GridSpec g;
  g.image_h = image_h;
  g.image_w = image_w;
  g.patch_h = patch_h;
  g.patch_w = patch_w;
  g.rows = image_h / patch_h;
  g.cols = image_w / patch_w;
  g.n_actions = g.rows * g.cols;
  return g;
}

Pixel action_to_point(const GridSpec& grid, int action) {
  if (action < 0 || action >= grid.n_actions) {
    throw BoundsError("action " + std::to_string(action) + " outside [0, " +
                      std::to_string(grid.n_actions) + ")");
  }
  return {(action / grid.cols) * grid.patch_h + grid.patch_h / 2,
          (action % grid.cols) * grid.patch_w + grid.patch_w / 2};
}

int point_to_action(const GridSpec& grid, Pixel p) {
  if (p.y < 0 || p.y >= grid.image_h || p.x < 0 || p.x >= grid.image_w) {
    throw BoundsError("pixel (" + std::to_string(p.y) + ", " + std::to_string(p.x) +
                      ") outside " + std::to_string(grid.image_h) + "x" +
                      std::to_string(grid.image_w) + " image");
  }
  return (p.y / grid.patch_h) * grid.cols + p.x / grid.patch_w;
}

const char* to_string(Label label) {
  return label == Label::Positive ? "positive" : "negative";
}

namespace {

template <typename T>
Map2 downsample_impl(const Array2<T>& src, int h, int w) {
  if (h <= 0 || w <= 0 || src.h % h != 0 || src.w % w != 0) {
    throw InputError("cannot area-downsample " + std::to_string(src.h) + "x" +
                     std::to_string(src.w) + " onto " + std::to_string(h) + "x" +
                     std::to_string(w));
  }
  const int fy = src.h / h;
  const int fx = src.w / w;
  Map2 out(h, w, 0.0);
  for (int y = 0; y < src.h; ++y) {
    for (int x = 0; x < src.w; ++x) {
      out.at(y / fy, x / fx) += static_cast<double>(src.at(y, x));
    }
  }
  const double inv = 1.0 / (static_cast<double>(fy) * fx);
  for (double& v : out.data) v *= inv;
  return out;
}

}  // namespace

Map2 area_downsample(const Map2& src, int h, int w) { return downsample_impl(src, h, w); }

Map2 area_downsample(const GroundTruth& src, int h, int w) { return downsample_impl(src, h, w); }

Tensor3 modulate(const Tensor3& feature, const Map2& weights) {
  if (weights.h != feature.h || weights.w != feature.w) {
    throw InputError("modulation map " + std::to_string(weights.h) + "x" +
                     std::to_string(weights.w) + " does not match feature " +
                     std::to_string(feature.h) + "x" + std::to_string(feature.w));
  }
  Tensor3 out = feature;
  for (int y = 0; y < feature.h; ++y) {
    for (int x = 0; x < feature.w; ++x) {
      const double m = weights.at(y, x);
      for (int ch = 0; ch < feature.c; ++ch) out.at(y, x, ch) *= m;
    }
  }
  return out;
}

}  // namespace promptrl
