#include "promptrl/srm.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "promptrl/errors.hpp"

namespace promptrl {

namespace {

constexpr int kImplicitWidth = 32;
constexpr int kExplicitWidth = 64;
constexpr int kDecoderWidth = 32;

Tensor3 concat_channels(const Tensor3& a, const Tensor3& b) {
  Tensor3 out(a.h, a.w, a.c + b.c);
  for (int y = 0; y < a.h; ++y) {
    for (int x = 0; x < a.w; ++x) {
      for (int ch = 0; ch < a.c; ++ch) out.at(y, x, ch) = a.at(y, x, ch);
      for (int ch = 0; ch < b.c; ++ch) out.at(y, x, a.c + ch) = b.at(y, x, ch);
    }
  }
  return out;
}

}  // namespace

SrmNet::SrmNet(Branch branch, int rows, int cols, int channels)
    : branch_(branch), rows_(rows), cols_(cols), channels_(channels) {
  if (rows < 1 || cols < 1 || channels < 1) throw ArchitectureError("invalid SRM input shape");
  std::size_t off = 0;
  auto add_conv = [&](std::vector<nn::Conv2d>& dst, int in, int out) {
    dst.emplace_back(in, out, 3, off);
    off += dst.back().param_count();
  };
  if (branch_ == Branch::Implicit) {
    add_conv(trunk_, channels, kImplicitWidth);
    add_conv(trunk_, kImplicitWidth, kDecoderWidth);
  } else {
    add_conv(trunk_, 2 * channels, kExplicitWidth);
    add_conv(trunk_, kExplicitWidth, kExplicitWidth);
    add_conv(trunk_, kExplicitWidth, kExplicitWidth);
    attention_ = nn::SelfAttention(kExplicitWidth, off);
    off += attention_.param_count();
    add_conv(decoder_, kExplicitWidth, kDecoderWidth);
    add_conv(decoder_, kDecoderWidth, kDecoderWidth);
  }
  head_ = nn::Conv2d(kDecoderWidth, 1, 1, off);
  off += head_.param_count();
  param_count_ = off;
}

void SrmNet::init(std::span<double> params, Rng& rng) const {
  for (const auto& c : trunk_) c.init(params, rng);
  if (branch_ == Branch::Explicit) {
    attention_.init(params, rng);
    for (const auto& c : decoder_) c.init(params, rng);
  }
  head_.init(params, rng);
}

void SrmNet::zero_head(std::span<double> params) const { head_.zero(params); }

Map2 SrmNet::logits(std::span<const double> params, const State* s_c, const State& s_t,
                    Cache* cache) const {
  if (params.size() != param_count_) {
    throw ArchitectureError("SRM expects " + std::to_string(param_count_) + " parameters, got " +
                            std::to_string(params.size()));
  }
  if (s_t.h != rows_ || s_t.w != cols_ || s_t.c != channels_) {
    throw ArchitectureError("SRM spatial state has shape " + std::to_string(s_t.h) + "x" +
                            std::to_string(s_t.w) + "x" + std::to_string(s_t.c) +
                            ", expected " + std::to_string(rows_) + "x" + std::to_string(cols_) +
                            "x" + std::to_string(channels_));
  }
  Tensor3 x;
  if (branch_ == Branch::Implicit) {
    x = s_t;
  } else {
    if (s_c == nullptr) throw UsageError("explicit SRM branch requires a semantic state");
    if (!s_c->same_shape(s_t)) throw ArchitectureError("semantic and spatial states differ in shape");
    x = concat_channels(*s_c, s_t);
  }
  std::vector<Tensor3> acts;
  const Tensor3 input = x;
  for (const auto& conv : trunk_) {
    x = conv.forward(params, x);
    nn::tanh_inplace(x);
    acts.push_back(x);
  }
  nn::SelfAttention::Cache attn_cache;
  if (branch_ == Branch::Explicit) {
    x = attention_.forward(params, x, cache ? &attn_cache : nullptr);
    acts.push_back(x);
    for (const auto& conv : decoder_) {
      x = conv.forward(params, x);
      nn::tanh_inplace(x);
      acts.push_back(x);
    }
  }
  const Tensor3 z = head_.forward(params, x);
  Map2 out(rows_, cols_);
  out.data = z.data;
  if (cache) {
    cache->s_t = s_t;
    if (s_c) cache->s_c = *s_c;
    cache->input = input;
    cache->acts = std::move(acts);
    cache->attn = std::move(attn_cache);
    cache->logits = out;
  }
  return out;
}

void SrmNet::backward(std::span<const double> params, const Cache& cache, const Map2& grad_logits,
                      std::span<double> grad) const {
  Tensor3 g(rows_, cols_, 1);
  g.data = grad_logits.data;
  const auto& acts = cache.acts;
  g = head_.backward(params, acts.back(), g, grad, true);
  std::size_t idx = acts.size() - 1;  // acts[idx] is the output of the layer being unwound
  auto input_of = [&](std::size_t i) -> const Tensor3& { return i == 0 ? cache.input : acts[i - 1]; };

  if (branch_ == Branch::Explicit) {
    for (std::size_t d = decoder_.size(); d-- > 0; --idx) {
      nn::tanh_backward_inplace(acts[idx], g);
      g = decoder_[d].backward(params, input_of(idx), g, grad, true);
    }
    g = attention_.backward(params, cache.attn, g, grad);
    --idx;
  }
  for (std::size_t t = trunk_.size(); t-- > 0; --idx) {
    nn::tanh_backward_inplace(acts[idx], g);
    g = trunk_[t].backward(params, input_of(idx), g, grad, t > 0);
    if (t == 0) break;
  }
}

SrmModel::SrmModel(Branch branch, int rows, int cols, int channels, std::uint64_t seed)
    : net(branch, rows, cols, channels), params(net.param_count(), 0.0), opt(net.param_count()) {
  Rng rng(seed);
  net.init(params, rng);
}

State semantic_state(const FeatureMap& feature, const SemanticMap& m_c) {
  return State(modulate(feature, m_c));
}

SrmOutput srm_forward(const SrmNet& net, std::span<const double> params, const State* s_c,
                      const State& s_t) {
  Map2 z = net.logits(params, s_c, s_t, nullptr);
  for (double& v : z.data) v = nn::sigmoid(v);
  return SrmOutput(std::move(z));
}

SrmOutput srm_forward(const SrmModel& model, const State* s_c, const State& s_t) {
  return srm_forward(model.net, model.params, s_c, s_t);
}

Array2<std::uint8_t> downsample_gt(const GroundTruth& gt, int h, int w) {
  const Map2 avg = area_downsample(gt, h, w);
  Array2<std::uint8_t> out(h, w, 0);
  for (std::size_t i = 0; i < avg.data.size(); ++i) out.data[i] = avg.data[i] >= 0.5 ? 1 : 0;
  return out;
}

namespace {

void check_loss_shapes(const Map2& p, const Array2<std::uint8_t>& g) {
  if (p.h != g.h || p.w != g.w || p.data.empty()) {
    throw InputError("SRM loss: prediction and target shapes differ");
  }
}

// Returns the loss and fills dL/dp when `grad_p` is non-null.
double loss_terms(const Map2& p, const Array2<std::uint8_t>& g, std::vector<double>* grad_p) {
  check_loss_shapes(p, g);
  const double n = static_cast<double>(p.data.size());
  double inter = 0.0, sum_p = 0.0, sum_g = 0.0, bce = 0.0;
  for (std::size_t i = 0; i < p.data.size(); ++i) {
    const double pi = p.data[i];
    const double gi = g.data[i];
    inter += pi * gi;
    sum_p += pi;
    sum_g += gi;
    const double pc = std::clamp(pi, kBceClamp, 1.0 - kBceClamp);
    bce -= gi * std::log(pc) + (1.0 - gi) * std::log(1.0 - pc);
  }
  bce /= n;
  const double num = 2.0 * inter + kDiceSmooth;
  const double den = sum_p + sum_g + kDiceSmooth;
  const double dice = 1.0 - num / den;
  if (grad_p) {
    grad_p->assign(p.data.size(), 0.0);
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      const double pi = p.data[i];
      const double gi = g.data[i];
      double d = -(2.0 * gi * den - num) / (den * den);
      if (pi > kBceClamp && pi < 1.0 - kBceClamp) d += -(gi / pi - (1.0 - gi) / (1.0 - pi)) / n;
      (*grad_p)[i] = d;
    }
  }
  return dice + bce;
}

}  // namespace

double srm_loss(const SrmOutput& y_r, const Array2<std::uint8_t>& gt_down) {
  return loss_terms(y_r, gt_down, nullptr);
}

double srm_loss_and_grad(const SrmNet& net, std::span<const double> params, const State* s_c,
                         const State& s_t, const Array2<std::uint8_t>& gt_down,
                         std::span<double> grad) {
  SrmNet::Cache cache;
  const Map2 z = net.logits(params, s_c, s_t, &cache);
  Map2 p = z;
  for (double& v : p.data) v = nn::sigmoid(v);
  std::vector<double> dp;
  const double loss = loss_terms(p, gt_down, &dp);
  Map2 dz(z.h, z.w);
  for (std::size_t i = 0; i < dz.data.size(); ++i) {
    dz.data[i] = dp[i] * p.data[i] * (1.0 - p.data[i]);
  }
  net.backward(params, cache, dz, grad);
  return loss;
}

std::vector<double> srm_update(SrmModel& model, const FeatureMap& feature,
                               const SemanticMap* m_c, const MaskProb& mask_prev,
                               const GroundTruth& gt, int q, double lr) {
  if (q < 0) throw UsageError("q must be non-negative");
  std::vector<double> losses;
  if (q == 0) return losses;
  const SrmNet& net = model.net;
  const State s_t(modulate(feature, area_downsample(mask_prev, feature.h, feature.w)));
  State s_c;
  if (net.branch() == Branch::Explicit) {
    if (m_c == nullptr) throw UsageError("explicit SRM update requires a semantic map");
    s_c = semantic_state(feature, *m_c);
  }
  const State* s_c_ptr = net.branch() == Branch::Explicit ? &s_c : nullptr;
  const auto target = downsample_gt(gt, feature.h, feature.w);
  std::vector<double> grad(model.params.size());
  const nn::AdamOptions opt{.lr = lr};
  for (int step = 0; step < q; ++step) {
    std::fill(grad.begin(), grad.end(), 0.0);
    const double loss = srm_loss_and_grad(net, model.params, s_c_ptr, s_t, target, grad);
    if (!std::isfinite(loss) || !nn::all_finite(grad)) {
      throw TrainingError("non-finite SRM loss or gradient at step " + std::to_string(step));
    }
    losses.push_back(loss);
    nn::adam_step(model.params, grad, model.opt, opt);
    ++model.updates;
  }
  return losses;
}

Label label_prompt(const SrmOutput& y_r, const GridSpec& grid, Pixel point) {
  const int cell = point_to_action(grid, point);
  if (y_r.h != grid.rows || y_r.w != grid.cols) {
    throw InputError("SRM output does not match the action grid");
  }
  return y_r.data[static_cast<std::size_t>(cell)] >= 0.5 ? Label::Positive : Label::Negative;
}

std::pair<PromptPoint, PromptPoint> init_eval_prompts(const SrmOutput& y_r, const GridSpec& grid) {
  if (y_r.h != grid.rows || y_r.w != grid.cols || y_r.data.empty()) {
    throw InputError("SRM output does not match the action grid");
  }
  if (!nn::all_finite(y_r.data)) throw NumericError("SRM output contains non-finite values");
  // max_element/min_element return the first extremum, i.e. the smallest index.
  const auto hi = std::max_element(y_r.data.begin(), y_r.data.end());
  const auto lo = std::min_element(y_r.data.begin(), y_r.data.end());
  const Pixel pos = action_to_point(grid, static_cast<int>(hi - y_r.data.begin()));
  const Pixel neg = action_to_point(grid, static_cast<int>(lo - y_r.data.begin()));
  return {PromptPoint{pos.y, pos.x, Label::Positive}, PromptPoint{neg.y, neg.x, Label::Negative}};
}

}  // namespace promptrl
