#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "promptrl/config.hpp"
#include "promptrl/core_types.hpp"
#include "promptrl/seg_backend.hpp"
#include "promptrl/srm.hpp"

namespace promptrl {

enum class EpisodeMode { Train, Eval };

// How evaluation episodes pick P_0: from the SRM map (argmax/argmin) or, when
// the recalibration module is ablated away, uniformly at random.
enum class InitMode { Srm, Random };

struct Transition {
  State state;
  int action = 0;
  double log_prob = 0.0;
  double value = 0.0;
  double reward = 0.0;
  State next_state;
  bool done = false;
};

// One line of the episode log.
struct StepRecord {
  int episode = 0;
  int step = 0;
  int action = 0;
  Pixel point;
  Label label = Label::Positive;
  double reward = 0.0;
  double cumulative_fr = 0.0;
};

nlohmann::json to_json(const StepRecord& r);

// s = F_I * area_downsample(M), broadcast over channels.
State build_state(const FeatureMap& feature, const MaskProb& mask);

// +1 when the ground truth is foreground at `point`, -1 otherwise.
double reward(const GroundTruth& gt, Pixel point);

struct EnvOptions {
  int T = 15;
  LabelSource label_source = LabelSource::Gt;
  InitMode init = InitMode::Srm;
};

// One episode on one image. Not safe for concurrent stepping; use one
// instance per worker.
class Environment {
 public:
  // `srm` is required for eval-mode SRM initialization and for srm labels;
  // `semantic` supplies M_c for the explicit branch and clip_map labels.
  Environment(const GridSpec& grid, const SegmentationBackend& backend, const Scene& scene,
              EnvOptions options, const SrmModel* srm = nullptr,
              const SemanticMapProvider* semantic = nullptr);

  // Builds P_0, M_0 = decode(P_0) and the first state.
  const State& reset(EpisodeMode mode, Rng& rng);

  // Executes `action`; `log_prob` and `value` are copied into the transition.
  Transition step(int action, double log_prob = 0.0, double value = 0.0);

  // SRM prediction for the current spatial state.
  SrmOutput srm_output() const;

  const GridSpec& grid() const { return grid_; }
  const Scene& scene() const { return scene_; }
  const FeatureMap& feature() const { return feature_; }
  const std::optional<SemanticMap>& semantic_map() const { return semantic_map_; }
  const PromptSet& prompts() const { return prompts_; }
  const MaskProb& mask() const { return mask_; }
  const State& state() const { return state_; }
  int steps_taken() const { return steps_; }
  bool active() const { return started_ && steps_ < options_.T; }
  bool done() const { return started_ && steps_ >= options_.T; }
  const std::vector<Pixel>& chosen_points() const { return chosen_; }
  const std::vector<Label>& chosen_labels() const { return labels_; }
  const std::vector<double>& rewards() const { return rewards_; }
  const EnvOptions& options() const { return options_; }

 private:
  Label query_label(int action, Pixel point) const;
  const State* semantic_state_ptr() const;

  GridSpec grid_;
  const SegmentationBackend& backend_;
  const Scene& scene_;
  EnvOptions options_;
  const SrmModel* srm_;
  FeatureMap feature_;
  std::optional<SemanticMap> semantic_map_;
  std::optional<State> semantic_state_;

  PromptSet prompts_;
  MaskProb mask_;
  State state_;
  int steps_ = 0;
  bool started_ = false;
  std::vector<Pixel> chosen_;
  std::vector<Label> labels_;
  std::vector<double> rewards_;
};

}  // namespace promptrl
