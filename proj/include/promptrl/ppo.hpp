#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "promptrl/config.hpp"
#include "promptrl/core_types.hpp"
#include "promptrl/nn.hpp"
#include "promptrl/rl_env.hpp"
#include "promptrl/seg_backend.hpp"
#include "promptrl/srm.hpp"

namespace promptrl {

// Shape of the actor/critic trunks. Both networks use the same trunk shape
// but keep separate parameters.
struct PolicyArch {
  int rows = 10;
  int cols = 10;
  int channels = 8;
  int hidden1 = 32;
  int hidden2 = 64;

  bool operator==(const PolicyArch&) const = default;
};

// conv3x3(c,h1)+tanh -> conv3x3(h1,h2)+tanh -> conv1x1(h2,1) -> flatten -> logits
class ActorNet {
 public:
  struct Cache {
    Tensor3 input, a1, a2;
  };

  ActorNet() = default;
  explicit ActorNet(const PolicyArch& arch);

  std::size_t param_count() const { return param_count_; }
  const nn::Conv2d& head() const { return head_; }
  void init(std::span<double> params, Rng& rng) const;

  std::vector<double> logits(std::span<const double> params, const State& s, Cache* cache) const;
  void backward(std::span<const double> params, const Cache& cache,
                std::span<const double> grad_logits, std::span<double> grad) const;

 private:
  PolicyArch arch_;
  nn::Conv2d conv1_, conv2_, head_;
  std::size_t param_count_ = 0;
};

// Same trunk shape, global average pool, affine head -> scalar.
class CriticNet {
 public:
  struct Cache {
    Tensor3 input, a1, a2;
    std::vector<double> pooled;
  };

  CriticNet() = default;
  explicit CriticNet(const PolicyArch& arch);

  std::size_t param_count() const { return param_count_; }
  const nn::Linear& head() const { return head_; }
  void init(std::span<double> params, Rng& rng) const;

  double value(std::span<const double> params, const State& s, Cache* cache) const;
  void backward(std::span<const double> params, const Cache& cache, double grad_value,
                std::span<double> grad) const;

 private:
  PolicyArch arch_;
  nn::Conv2d conv1_, conv2_;
  nn::Linear head_;
  std::size_t param_count_ = 0;
};

// Actor and critic parameters as flat vectors plus the architecture.
struct PolicyParams {
  PolicyArch arch;
  std::vector<double> actor;
  std::vector<double> critic;
};

PolicyParams make_policy_params(const PolicyArch& arch, std::uint64_t seed);

std::vector<double> policy_forward(const PolicyParams& params, const State& s);
double value_forward(const PolicyParams& params, const State& s);

// Samples from `dist`, or returns its argmax (smallest index on ties) when
// `greedy`. Throws NumericError for a negative, non-finite or unnormalized
// distribution.
int sample_action(std::span<const double> dist, Rng& rng, bool greedy = false);

struct RolloutBuffer {
  int horizon = 0;
  std::vector<Transition> transitions;
  std::vector<double> q_values;
  std::vector<double> advantages;
  double terminal_value = 0.0;

  bool complete() const {
    return horizon > 0 && static_cast<int>(transitions.size()) == horizon;
  }
  bool has_advantages() const { return advantages.size() == transitions.size() && complete(); }
};

// Q_t = r_t + g r_{t+1} + ... + g^{T-t} r_T + g^{T-t} V(s_T), by backward recursion.
std::vector<double> compute_returns(const RolloutBuffer& buffer, double gamma,
                                    double terminal_value);

inline double advantage(double q, double v) { return q - v; }

// pi_current(a|s) / pi_snapshot(a|s).
double ppo_ratio(double logp_current, double logp_snapshot);

// Mean of min(r A, clip(r, 1-eps, 1+eps) A); a quantity to maximize.
double actor_loss(std::span<const double> ratios, std::span<const double> advantages,
                  double epsilon);

// Mean of (Q - V)^2.
double critic_loss(std::span<const double> q_values, std::span<const double> v_values);

// Fills q_values and advantages from the values recorded at collection time.
void compute_advantages(RolloutBuffer& buffer, double gamma, double terminal_value);

// Clipped objective over the buffer at `params` and its gradient (accumulated
// into `grad` when non-empty).
double actor_objective(const ActorNet& net, std::span<const double> params,
                       const RolloutBuffer& buffer, double epsilon, std::span<double> grad);

// Critic loss over the buffer at `params` and its gradient.
double critic_objective(const CriticNet& net, std::span<const double> params,
                        const RolloutBuffer& buffer, std::span<double> grad);

// Networks, parameters and their optimizer state.
struct Agent {
  PolicyParams params;
  ActorNet actor;
  CriticNet critic;
  nn::AdamState actor_opt;
  nn::AdamState critic_opt;

  Agent() = default;
  Agent(const PolicyArch& arch, std::uint64_t seed);
};

struct UpdateStats {
  std::vector<double> actor_objective;  // per epoch, before the step
  std::vector<double> critic_loss;
};

// K epochs of full-batch Adam: ascent on the actor objective, descent on the
// critic loss. Throws TrainingError naming the epoch on non-finite gradients.
UpdateStats update(Agent& agent, const RolloutBuffer& buffer, int K, double epsilon, double lr);

// Everything needed to resume or evaluate a run.
struct TrainState {
  RunConfig config;
  Agent agent;
  SrmModel srm;
  Rng rng;
  int episodes_done = 0;
};

TrainState init_train_state(const RunConfig& cfg);

struct EpisodeSummary {
  int episode = 0;
  std::string scene;
  double fr = 0.0;
  double return_sum = 0.0;
  double actor_objective = 0.0;
  double critic_loss = 0.0;
  double srm_loss = 0.0;
};

using StepSink = std::function<void(const StepRecord&)>;

// Runs the remaining episodes of `state` over `scenes` (cycled in order, or
// reshuffled each pass when config.dataset.shuffle). Deterministic per seed.
std::vector<EpisodeSummary> train(TrainState& state, const std::vector<Scene>& scenes,
                                  const SegmentationBackend& backend,
                                  const SemanticMapProvider* semantic, const StepSink& sink = {});

}  // namespace promptrl
