#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace promptrl {

using Rng = std::mt19937_64;

// Uniform double in [0, 1) built from the top 53 bits, so draws are identical
// across standard library implementations.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

// Uniform integer in [0, n).
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)) % n;
}

// splitmix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream);

// ---------------------------------------------------------------------------
// Dense arrays
// ---------------------------------------------------------------------------

// (h, w, c) array, row-major with channels innermost.
struct Tensor3 {
  int h = 0;
  int w = 0;
  int c = 0;
  std::vector<double> data;

  Tensor3() = default;
  Tensor3(int h_, int w_, int c_, double fill = 0.0)
      : h(h_), w(w_), c(c_), data(static_cast<std::size_t>(h_) * w_ * c_, fill) {}

  std::size_t index(int y, int x, int ch) const {
    return (static_cast<std::size_t>(y) * w + x) * c + ch;
  }
  double& at(int y, int x, int ch) { return data[index(y, x, ch)]; }
  double at(int y, int x, int ch) const { return data[index(y, x, ch)]; }
  std::size_t positions() const { return static_cast<std::size_t>(h) * w; }
  bool same_shape(const Tensor3& o) const { return h == o.h && w == o.w && c == o.c; }

  bool operator==(const Tensor3&) const = default;
};

// (h, w) array, row-major.
template <typename T>
struct Array2 {
  int h = 0;
  int w = 0;
  std::vector<T> data;

  Array2() = default;
  Array2(int h_, int w_, T fill = T{})
      : h(h_), w(w_), data(static_cast<std::size_t>(h_) * w_, fill) {}

  T& at(int y, int x) { return data[static_cast<std::size_t>(y) * w + x]; }
  const T& at(int y, int x) const { return data[static_cast<std::size_t>(y) * w + x]; }
  std::size_t size() const { return data.size(); }
  bool same_shape(const Array2& o) const { return h == o.h && w == o.w; }

  bool operator==(const Array2&) const = default;
};

using Map2 = Array2<double>;

// Encoder output F_I, shape (h, w, c).
struct FeatureMap : Tensor3 {
  using Tensor3::Tensor3;
  FeatureMap() = default;
  explicit FeatureMap(Tensor3 t) : Tensor3(std::move(t)) {}
};

// Feature map modulated by a mask; the policy and SRM input.
struct State : Tensor3 {
  using Tensor3::Tensor3;
  State() = default;
  explicit State(Tensor3 t) : Tensor3(std::move(t)) {}
};

// Per-pixel foreground probability at image resolution, values in [0, 1].
struct MaskProb : Map2 {
  using Map2::Map2;
  MaskProb() = default;
  explicit MaskProb(Map2 m) : Map2(std::move(m)) {}
};

// Binary ground truth at image resolution.
struct GroundTruth : Array2<std::uint8_t> {
  using Array2<std::uint8_t>::Array2;
  GroundTruth() = default;

  std::size_t foreground_count() const;
};

// ---------------------------------------------------------------------------
// Action grid and prompts
// ---------------------------------------------------------------------------

struct GridSpec {
  int image_h = 0;
  int image_w = 0;
  int patch_h = 0;
  int patch_w = 0;
  int rows = 0;
  int cols = 0;
  int n_actions = 0;

  bool operator==(const GridSpec&) const = default;
};

struct Pixel {
  int y = 0;
  int x = 0;

  bool operator==(const Pixel&) const = default;
};

// Throws ConfigError when a dimension is not divisible by its patch size.
GridSpec build_grid(int image_h, int image_w, int patch_h, int patch_w);

// Center of patch `action` in row-major order; throws BoundsError when out of range.
Pixel action_to_point(const GridSpec& grid, int action);

// Index of the patch containing `p`; also the feature cell index, since
// features live at grid resolution.
int point_to_action(const GridSpec& grid, Pixel p);

enum class Label : std::uint8_t { Negative = 0, Positive = 1 };

struct PromptPoint {
  int y = 0;
  int x = 0;
  Label label = Label::Positive;

  bool operator==(const PromptPoint&) const = default;
};

struct PromptSet {
  std::vector<PromptPoint> points;

  void add(PromptPoint p) { points.push_back(p); }
  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

const char* to_string(Label label);

// ---------------------------------------------------------------------------
// Resolution bridge
// ---------------------------------------------------------------------------

// Area-average downsampling of an image-resolution map onto an (h, w) grid.
// Requires exact divisibility.
Map2 area_downsample(const Map2& src, int h, int w);
Map2 area_downsample(const GroundTruth& src, int h, int w);

// Multiplies `weights` (h, w) into every channel of `feature`.
Tensor3 modulate(const Tensor3& feature, const Map2& weights);

}  // namespace promptrl
