#include "promptrl/rl_env.hpp"

#include <spdlog/spdlog.h>

#include "promptrl/errors.hpp"

namespace promptrl {

nlohmann::json to_json(const StepRecord& r) {
  return {{"episode", r.episode},   {"step", r.step},
          {"action", r.action},     {"point_y", r.point.y},
          {"point_x", r.point.x},   {"label", to_string(r.label)},
          {"reward", r.reward},     {"cumulative_fr", r.cumulative_fr}};
}

State build_state(const FeatureMap& feature, const MaskProb& mask) {
  return State(modulate(feature, area_downsample(mask, feature.h, feature.w)));
}

double reward(const GroundTruth& gt, Pixel point) {
  if (point.y < 0 || point.y >= gt.h || point.x < 0 || point.x >= gt.w) {
    throw BoundsError("reward query (" + std::to_string(point.y) + ", " +
                      std::to_string(point.x) + ") outside the ground truth");
  }
  return gt.at(point.y, point.x) == 1 ? 1.0 : -1.0;
}

Environment::Environment(const GridSpec& grid, const SegmentationBackend& backend,
                         const Scene& scene, EnvOptions options, const SrmModel* srm,
                         const SemanticMapProvider* semantic)
    : grid_(grid), backend_(backend), scene_(scene), options_(options), srm_(srm) {
  if (options_.T < 1) throw UsageError("episodes need T >= 1");
  feature_ = backend_.encode(scene_);
  if (semantic != nullptr) {
    semantic_map_ = semantic->semantic_map(scene_);
    semantic_state_ = semantic_state(feature_, *semantic_map_);
  }
}

const State* Environment::semantic_state_ptr() const {
  return semantic_state_ ? &*semantic_state_ : nullptr;
}

const State& Environment::reset(EpisodeMode mode, Rng& rng) {
  prompts_ = PromptSet{};
  chosen_.clear();
  labels_.clear();
  rewards_.clear();
  steps_ = 0;

  if (mode == EpisodeMode::Train) {
    const GroundTruth& gt = scene_.gt();
    std::vector<std::size_t> fg, bg;
    for (std::size_t i = 0; i < gt.data.size(); ++i) (gt.data[i] ? fg : bg).push_back(i);
    if (fg.empty() || bg.empty()) {
      throw InitError("scene '" + scene_.id() + "' ground truth has a single class");
    }
    const std::size_t p = fg[uniform_index(rng, fg.size())];
    const std::size_t n = bg[uniform_index(rng, bg.size())];
    prompts_.add({static_cast<int>(p / gt.w), static_cast<int>(p % gt.w), Label::Positive});
    prompts_.add({static_cast<int>(n / gt.w), static_cast<int>(n % gt.w), Label::Negative});
  } else if (options_.init == InitMode::Srm) {
    if (srm_ == nullptr) throw UsageError("eval initialization requires an SRM model");
    // No prediction exists yet, so the spatial state starts from an all-ones mask.
    const State s0(feature_);
    const SrmOutput y_r = srm_forward(*srm_, semantic_state_ptr(), s0);
    const auto [pos, neg] = init_eval_prompts(y_r, grid_);
    if (pos.y == neg.y && pos.x == neg.x) {
      spdlog::warn("scene '{}': SRM map is constant, positive and negative prompts coincide",
                   scene_.id());
    }
    prompts_.add(pos);
    prompts_.add(neg);
  } else {
    const auto h = static_cast<std::size_t>(scene_.height());
    const auto w = static_cast<std::size_t>(scene_.width());
    const std::size_t p = uniform_index(rng, h * w);
    const std::size_t n = uniform_index(rng, h * w);
    prompts_.add({static_cast<int>(p / w), static_cast<int>(p % w), Label::Positive});
    prompts_.add({static_cast<int>(n / w), static_cast<int>(n % w), Label::Negative});
  }

  mask_ = backend_.decode(scene_, feature_, prompts_);
  state_ = build_state(feature_, mask_);
  started_ = true;
  return state_;
}

SrmOutput Environment::srm_output() const {
  if (srm_ == nullptr) throw UsageError("label_source=srm requires an SRM model");
  return srm_forward(*srm_, semantic_state_ptr(), state_);
}

Label Environment::query_label(int action, Pixel point) const {
  switch (options_.label_source) {
    case LabelSource::Gt:
      return scene_.gt().at(point.y, point.x) ? Label::Positive : Label::Negative;
    case LabelSource::Srm:
      return label_prompt(srm_output(), grid_, point);
    case LabelSource::ClipMap:
      if (!semantic_map_) throw UsageError("label_source=clip_map requires a semantic map");
      return semantic_map_->data[static_cast<std::size_t>(action)] >= 0.5 ? Label::Positive
                                                                           : Label::Negative;
    case LabelSource::LastMask:
      return mask_.at(point.y, point.x) >= 0.5 ? Label::Positive : Label::Negative;
    case LabelSource::Positive:
      return Label::Positive;
  }
  return Label::Positive;
}

Transition Environment::step(int action, double log_prob, double value) {
  if (!started_) throw UsageError("step() called before reset()");
  if (steps_ >= options_.T) {
    throw UsageError("episode already finished after " + std::to_string(options_.T) + " steps");
  }
  const Pixel point = action_to_point(grid_, action);
  const Label label = query_label(action, point);

  Transition tr;
  tr.state = state_;
  tr.action = action;
  tr.log_prob = log_prob;
  tr.value = value;

  prompts_.add({point.y, point.x, label});
  mask_ = backend_.decode(scene_, feature_, prompts_);
  state_ = build_state(feature_, mask_);
  ++steps_;

  tr.reward = reward(scene_.gt(), point);
  tr.next_state = state_;
  tr.done = steps_ == options_.T;

  chosen_.push_back(point);
  labels_.push_back(label);
  rewards_.push_back(tr.reward);
  return tr;
}

}  // namespace promptrl
