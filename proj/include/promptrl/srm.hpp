#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "promptrl/config.hpp"
#include "promptrl/core_types.hpp"
#include "promptrl/nn.hpp"
#include "promptrl/seg_backend.hpp"

namespace promptrl {

// Per-cell foreground probability at feature resolution, strictly in (0, 1).
struct SrmOutput : Map2 {
  using Map2::Map2;
  SrmOutput() = default;
  explicit SrmOutput(Map2 m) : Map2(std::move(m)) {}
};

// Semantic recalibration network.
//
//   implicit: s_t -> conv3x3(c,32) -> conv3x3(32,32) -> head
//   explicit: [s_c | s_t] -> conv3x3(2c,64) -> conv3x3(64,64) -> conv3x3(64,64)
//             -> self-attention(64) -> conv3x3(64,32) -> conv3x3(32,32) -> head
//
// head = conv1x1(32,1) + sigmoid. Every 3x3 conv is followed by tanh.
class SrmNet {
 public:
  struct Cache {
    State s_c;
    State s_t;
    Tensor3 input;
    std::vector<Tensor3> acts;  // post-activation output of each 3x3 conv / attention
    nn::SelfAttention::Cache attn;
    Map2 logits;
  };

  SrmNet() = default;
  SrmNet(Branch branch, int rows, int cols, int channels);

  Branch branch() const { return branch_; }
  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int channels() const { return channels_; }
  std::size_t param_count() const { return param_count_; }

  void init(std::span<double> params, Rng& rng) const;
  // Zeroes the 1x1 head so every output is sigmoid(0) = 0.5.
  void zero_head(std::span<double> params) const;

  // The implicit branch never reads `s_c`. The explicit branch throws
  // UsageError when it is null.
  Map2 logits(std::span<const double> params, const State* s_c, const State& s_t,
              Cache* cache) const;

  // Accumulates dL/dparams given dL/dlogits.
  void backward(std::span<const double> params, const Cache& cache, const Map2& grad_logits,
                std::span<double> grad) const;

 private:
  Branch branch_ = Branch::Implicit;
  int rows_ = 0;
  int cols_ = 0;
  int channels_ = 0;
  std::vector<nn::Conv2d> trunk_;   // before attention (explicit) or all convs (implicit)
  std::vector<nn::Conv2d> decoder_; // after attention (explicit only)
  nn::SelfAttention attention_;
  nn::Conv2d head_;
  std::size_t param_count_ = 0;
};

// Network plus its parameters and optimizer state.
struct SrmModel {
  SrmNet net;
  std::vector<double> params;
  nn::AdamState opt;
  std::int64_t updates = 0;

  SrmModel() = default;
  SrmModel(Branch branch, int rows, int cols, int channels, std::uint64_t seed);
};

// s_c = F_I * M_c, broadcast over channels.
State semantic_state(const FeatureMap& feature, const SemanticMap& m_c);

SrmOutput srm_forward(const SrmModel& model, const State* s_c, const State& s_t);
SrmOutput srm_forward(const SrmNet& net, std::span<const double> params, const State* s_c,
                      const State& s_t);

// Ground truth area-downsampled to (h, w) and thresholded at 0.5.
Array2<std::uint8_t> downsample_gt(const GroundTruth& gt, int h, int w);

inline constexpr double kBceClamp = 1e-6;
inline constexpr double kDiceSmooth = 1.0;

// L = dice + bce, dice = 1 - (2 sum(p g) + 1) / (sum(p) + sum(g) + 1),
// bce = mean cross-entropy with p clamped to [1e-6, 1 - 1e-6].
double srm_loss(const SrmOutput& y_r, const Array2<std::uint8_t>& gt_down);

// Loss and its gradient with respect to the network parameters.
double srm_loss_and_grad(const SrmNet& net, std::span<const double> params, const State* s_c,
                         const State& s_t, const Array2<std::uint8_t>& gt_down,
                         std::span<double> grad);

// q Adam steps on the loss for one sample. `m_c` may be null for the
// implicit branch. Returns the loss measured before each step.
std::vector<double> srm_update(SrmModel& model, const FeatureMap& feature,
                               const SemanticMap* m_c, const MaskProb& mask_prev,
                               const GroundTruth& gt, int q, double lr);

// Positive iff y_r at the cell containing `point` is >= 0.5.
Label label_prompt(const SrmOutput& y_r, const GridSpec& grid, Pixel point);

// Positive prompt at the centre of the argmax cell, negative at the argmin
// cell; ties resolve to the smallest row-major index.
std::pair<PromptPoint, PromptPoint> init_eval_prompts(const SrmOutput& y_r, const GridSpec& grid);

}  // namespace promptrl
