#include "promptrl/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "promptrl/errors.hpp"

namespace promptrl {

namespace {

void check_state(const PolicyArch& arch, const State& s, const char* who) {
  if (s.h != arch.rows || s.w != arch.cols || s.c != arch.channels) {
    throw ArchitectureError(std::string(who) + " expects a " + std::to_string(arch.rows) + "x" +
                            std::to_string(arch.cols) + "x" + std::to_string(arch.channels) +
                            " state, got " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                            "x" + std::to_string(s.c));
  }
}

void check_params(std::span<const double> params, std::size_t expected, const char* who) {
  if (params.size() != expected) {
    throw ArchitectureError(std::string(who) + " expects " + std::to_string(expected) +
                            " parameters, got " + std::to_string(params.size()));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Networks
// ---------------------------------------------------------------------------

ActorNet::ActorNet(const PolicyArch& arch) : arch_(arch) {
  std::size_t off = 0;
  conv1_ = nn::Conv2d(arch.channels, arch.hidden1, 3, off);
  off += conv1_.param_count();
  conv2_ = nn::Conv2d(arch.hidden1, arch.hidden2, 3, off);
  off += conv2_.param_count();
  head_ = nn::Conv2d(arch.hidden2, 1, 1, off);
  off += head_.param_count();
  param_count_ = off;
}

void ActorNet::init(std::span<double> params, Rng& rng) const {
  conv1_.init(params, rng);
  conv2_.init(params, rng);
  head_.init(params, rng);
}

std::vector<double> ActorNet::logits(std::span<const double> params, const State& s,
                                     Cache* cache) const {
  check_state(arch_, s, "actor");
  check_params(params, param_count_, "actor");
  Tensor3 a1 = conv1_.forward(params, s);
  nn::tanh_inplace(a1);
  Tensor3 a2 = conv2_.forward(params, a1);
  nn::tanh_inplace(a2);
  Tensor3 z = head_.forward(params, a2);
  if (cache) {
    cache->input = s;
    cache->a1 = std::move(a1);
    cache->a2 = std::move(a2);
  }
  return std::move(z.data);
}

void ActorNet::backward(std::span<const double> params, const Cache& cache,
                        std::span<const double> grad_logits, std::span<double> grad) const {
  Tensor3 g(arch_.rows, arch_.cols, 1);
  std::copy(grad_logits.begin(), grad_logits.end(), g.data.begin());
  g = head_.backward(params, cache.a2, g, grad, true);
  nn::tanh_backward_inplace(cache.a2, g);
  g = conv2_.backward(params, cache.a1, g, grad, true);
  nn::tanh_backward_inplace(cache.a1, g);
  conv1_.backward(params, cache.input, g, grad, false);
}

CriticNet::CriticNet(const PolicyArch& arch) : arch_(arch) {
  std::size_t off = 0;
  conv1_ = nn::Conv2d(arch.channels, arch.hidden1, 3, off);
  off += conv1_.param_count();
  conv2_ = nn::Conv2d(arch.hidden1, arch.hidden2, 3, off);
  off += conv2_.param_count();
  head_ = nn::Linear(arch.hidden2, 1, off);
  off += head_.param_count();
  param_count_ = off;
}

void CriticNet::init(std::span<double> params, Rng& rng) const {
  conv1_.init(params, rng);
  conv2_.init(params, rng);
  head_.init(params, rng);
}

double CriticNet::value(std::span<const double> params, const State& s, Cache* cache) const {
  check_state(arch_, s, "critic");
  check_params(params, param_count_, "critic");
  Tensor3 a1 = conv1_.forward(params, s);
  nn::tanh_inplace(a1);
  Tensor3 a2 = conv2_.forward(params, a1);
  nn::tanh_inplace(a2);
  std::vector<double> pooled(static_cast<std::size_t>(a2.c), 0.0);
  for (std::size_t p = 0; p < a2.positions(); ++p) {
    for (int ch = 0; ch < a2.c; ++ch) pooled[ch] += a2.data[p * a2.c + ch];
  }
  const double inv = 1.0 / static_cast<double>(a2.positions());
  for (double& v : pooled) v *= inv;
  const double v = head_.forward(params, pooled)[0];
  if (cache) {
    cache->input = s;
    cache->a1 = std::move(a1);
    cache->a2 = std::move(a2);
    cache->pooled = std::move(pooled);
  }
  return v;
}

void CriticNet::backward(std::span<const double> params, const Cache& cache, double grad_value,
                         std::span<double> grad) const {
  const double gv[1] = {grad_value};
  const std::vector<double> gpool = head_.backward(params, cache.pooled, gv, grad);
  Tensor3 g(cache.a2.h, cache.a2.w, cache.a2.c);
  const double inv = 1.0 / static_cast<double>(g.positions());
  for (std::size_t p = 0; p < g.positions(); ++p) {
    for (int ch = 0; ch < g.c; ++ch) g.data[p * g.c + ch] = gpool[ch] * inv;
  }
  nn::tanh_backward_inplace(cache.a2, g);
  g = conv2_.backward(params, cache.a1, g, grad, true);
  nn::tanh_backward_inplace(cache.a1, g);
  conv1_.backward(params, cache.input, g, grad, false);
}

PolicyParams make_policy_params(const PolicyArch& arch, std::uint64_t seed) {
  const ActorNet actor(arch);
  const CriticNet critic(arch);
  PolicyParams p{arch, std::vector<double>(actor.param_count()),
                 std::vector<double>(critic.param_count())};
  Rng actor_rng(mix_seed(seed, 0));
  Rng critic_rng(mix_seed(seed, 1));
  actor.init(p.actor, actor_rng);
  critic.init(p.critic, critic_rng);
  return p;
}

std::vector<double> policy_forward(const PolicyParams& params, const State& s) {
  const ActorNet net(params.arch);
  return nn::softmax(net.logits(params.actor, s, nullptr));
}

double value_forward(const PolicyParams& params, const State& s) {
  const CriticNet net(params.arch);
  return net.value(params.critic, s, nullptr);
}

int sample_action(std::span<const double> dist, Rng& rng, bool greedy) {
  if (dist.empty()) throw NumericError("empty action distribution");
  double sum = 0.0;
  for (double p : dist) {
    if (!std::isfinite(p) || p < 0.0) throw NumericError("invalid action probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    throw NumericError("action distribution sums to " + std::to_string(sum));
  }
  if (greedy) {
    return static_cast<int>(std::max_element(dist.begin(), dist.end()) - dist.begin());
  }
  const double u = uniform01(rng) * sum;
  double cum = 0.0;
  int last_positive = 0;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    if (dist[i] > 0.0) last_positive = static_cast<int>(i);
    cum += dist[i];
    if (u < cum) return static_cast<int>(i);
  }
  return last_positive;
}

// ---------------------------------------------------------------------------
// PPO quantities
// ---------------------------------------------------------------------------

std::vector<double> compute_returns(const RolloutBuffer& buffer, double gamma,
                                    double terminal_value) {
  if (!buffer.complete()) {
    throw UsageError("compute_returns needs a complete buffer (" +
                     std::to_string(buffer.transitions.size()) + " of " +
                     std::to_string(buffer.horizon) + " transitions)");
  }
  const std::size_t n = buffer.transitions.size();
  std::vector<double> q(n);
  double next = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double r = buffer.transitions[i].reward;
    q[i] = (i == n - 1) ? r + terminal_value : r + gamma * next;
    next = q[i];
  }
  return q;
}

double ppo_ratio(double logp_current, double logp_snapshot) {
  return std::exp(logp_current - logp_snapshot);
}

double actor_loss(std::span<const double> ratios, std::span<const double> advantages,
                  double epsilon) {
  if (ratios.size() != advantages.size()) throw UsageError("ratio/advantage lengths differ");
  if (ratios.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t t = 0; t < ratios.size(); ++t) {
    const double r = ratios[t];
    const double a = advantages[t];
    const double clipped = std::clamp(r, 1.0 - epsilon, 1.0 + epsilon);
    total += std::min(r * a, clipped * a);
  }
  return total / static_cast<double>(ratios.size());
}

double critic_loss(std::span<const double> q_values, std::span<const double> v_values) {
  if (q_values.size() != v_values.size()) throw UsageError("Q/V lengths differ");
  if (q_values.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t t = 0; t < q_values.size(); ++t) {
    const double d = q_values[t] - v_values[t];
    total += d * d;
  }
  return total / static_cast<double>(q_values.size());
}

void compute_advantages(RolloutBuffer& buffer, double gamma, double terminal_value) {
  buffer.terminal_value = terminal_value;
  buffer.q_values = compute_returns(buffer, gamma, terminal_value);
  buffer.advantages.resize(buffer.q_values.size());
  for (std::size_t t = 0; t < buffer.q_values.size(); ++t) {
    buffer.advantages[t] = advantage(buffer.q_values[t], buffer.transitions[t].value);
  }
}

double actor_objective(const ActorNet& net, std::span<const double> params,
                       const RolloutBuffer& buffer, double epsilon, std::span<double> grad) {
  if (!buffer.has_advantages()) throw UsageError("actor objective needs computed advantages");
  const std::size_t n = buffer.transitions.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  ActorNet::Cache cache;
  for (std::size_t t = 0; t < n; ++t) {
    const Transition& tr = buffer.transitions[t];
    const std::vector<double> z = net.logits(params, tr.state, grad.empty() ? nullptr : &cache);
    const double logp = nn::log_softmax_at(z, static_cast<std::size_t>(tr.action));
    const double r = ppo_ratio(logp, tr.log_prob);
    const double a = buffer.advantages[t];
    const double clipped = std::clamp(r, 1.0 - epsilon, 1.0 + epsilon);
    const bool unclipped_branch = r * a <= clipped * a;
    total += unclipped_branch ? r * a : clipped * a;
    if (grad.empty() || !unclipped_branch || a == 0.0) continue;
    // d(r A)/dz = A r (onehot - softmax(z))
    std::vector<double> dz = nn::softmax(z);
    const double coeff = a * r * inv_n;
    for (double& v : dz) v *= -coeff;
    dz[static_cast<std::size_t>(tr.action)] += coeff;
    net.backward(params, cache, dz, grad);
  }
  return total * inv_n;
}

double critic_objective(const CriticNet& net, std::span<const double> params,
                        const RolloutBuffer& buffer, std::span<double> grad) {
  if (buffer.q_values.size() != buffer.transitions.size() || buffer.transitions.empty()) {
    throw UsageError("critic objective needs computed returns");
  }
  const std::size_t n = buffer.transitions.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  CriticNet::Cache cache;
  for (std::size_t t = 0; t < n; ++t) {
    const double v =
        net.value(params, buffer.transitions[t].state, grad.empty() ? nullptr : &cache);
    const double d = buffer.q_values[t] - v;
    total += d * d;
    if (!grad.empty()) net.backward(params, cache, -2.0 * d * inv_n, grad);
  }
  return total * inv_n;
}

// ---------------------------------------------------------------------------
// Agent and update
// ---------------------------------------------------------------------------

Agent::Agent(const PolicyArch& arch, std::uint64_t seed)
    : params(make_policy_params(arch, seed)),
      actor(arch),
      critic(arch),
      actor_opt(params.actor.size()),
      critic_opt(params.critic.size()) {}

UpdateStats update(Agent& agent, const RolloutBuffer& buffer, int K, double epsilon, double lr) {
  if (K < 0) throw UsageError("K must be non-negative");
  if (K > 0 && !buffer.has_advantages()) {
    throw UsageError("update needs a complete buffer with advantages");
  }
  UpdateStats stats;
  std::vector<double> g_actor(agent.params.actor.size());
  std::vector<double> g_critic(agent.params.critic.size());
  const nn::AdamOptions opt{.lr = lr};
  for (int k = 0; k < K; ++k) {
    std::fill(g_actor.begin(), g_actor.end(), 0.0);
    std::fill(g_critic.begin(), g_critic.end(), 0.0);
    const double obj = actor_objective(agent.actor, agent.params.actor, buffer, epsilon, g_actor);
    const double closs = critic_objective(agent.critic, agent.params.critic, buffer, g_critic);
    if (!std::isfinite(obj) || !std::isfinite(closs) || !nn::all_finite(g_actor) ||
        !nn::all_finite(g_critic)) {
      throw TrainingError("non-finite loss or gradient in update epoch " + std::to_string(k));
    }
    stats.actor_objective.push_back(obj);
    stats.critic_loss.push_back(closs);
    // Ascent on the actor objective is descent on its negation.
    for (double& g : g_actor) g = -g;
    nn::adam_step(agent.params.actor, g_actor, agent.actor_opt, opt);
    nn::adam_step(agent.params.critic, g_critic, agent.critic_opt, opt);
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

TrainState init_train_state(const RunConfig& cfg) {
  cfg.validate();
  const PolicyArch arch{cfg.grid.rows, cfg.grid.cols, cfg.synthetic.feature_channels};
  return TrainState{cfg, Agent(arch, mix_seed(cfg.seed, 10)),
                    SrmModel(cfg.branch, cfg.grid.rows, cfg.grid.cols,
                             cfg.synthetic.feature_channels, mix_seed(cfg.seed, 11)),
                    Rng(mix_seed(cfg.seed, 12)), 0};
}

std::vector<EpisodeSummary> train(TrainState& state, const std::vector<Scene>& scenes,
                                  const SegmentationBackend& backend,
                                  const SemanticMapProvider* semantic, const StepSink& sink) {
  const RunConfig& cfg = state.config;
  if (scenes.empty()) throw UsageError("training dataset is empty");
  const bool needs_semantic =
      cfg.branch == Branch::Explicit || cfg.label_source == LabelSource::ClipMap;
  if (needs_semantic && semantic == nullptr) {
    throw UsageError("explicit branch / clip_map labels need a semantic map provider");
  }

  std::vector<std::size_t> order(scenes.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<EpisodeSummary> summaries;
  const EnvOptions env_opts{cfg.T, cfg.label_source, InitMode::Srm};

  while (state.episodes_done < cfg.E) {
    const int e = state.episodes_done;
    const std::size_t pos = static_cast<std::size_t>(e) % scenes.size();
    if (cfg.dataset.shuffle && pos == 0) std::shuffle(order.begin(), order.end(), state.rng);
    const Scene& scene = scenes[order[pos]];

    Environment env(cfg.grid, backend, scene, env_opts, &state.srm,
                    needs_semantic ? semantic : nullptr);
    env.reset(EpisodeMode::Train, state.rng);
    const SemanticMap* m_c = env.semantic_map() ? &*env.semantic_map() : nullptr;

    RolloutBuffer buffer;
    buffer.horizon = cfg.T;
    double srm_loss_sum = 0.0;
    int srm_loss_count = 0;
    int hits = 0;
    for (int t = 1; t <= cfg.T; ++t) {
      const State& s = env.state();
      const std::vector<double> z = state.agent.actor.logits(state.agent.params.actor, s, nullptr);
      const std::vector<double> probs = nn::softmax(z);
      const int action = sample_action(probs, state.rng);
      const double logp = nn::log_softmax_at(z, static_cast<std::size_t>(action));
      const double value = state.agent.critic.value(state.agent.params.critic, s, nullptr);
      const MaskProb mask_prev = env.mask();

      buffer.transitions.push_back(env.step(action, logp, value));
      for (double l : srm_update(state.srm, env.feature(), m_c, mask_prev, scene.gt(), cfg.q_srm,
                                 cfg.lr)) {
        srm_loss_sum += l;
        ++srm_loss_count;
      }

      const Transition& tr = buffer.transitions.back();
      if (tr.reward > 0) ++hits;
      if (sink) {
        sink(StepRecord{e, t, action, env.chosen_points().back(), env.chosen_labels().back(),
                        tr.reward, static_cast<double>(hits) / t});
      }
    }

    const double terminal =
        state.agent.critic.value(state.agent.params.critic, buffer.transitions.back().next_state,
                                 nullptr);
    compute_advantages(buffer, cfg.gamma, terminal);
    const UpdateStats stats = update(state.agent, buffer, cfg.K, cfg.epsilon, cfg.lr);

    EpisodeSummary sum;
    sum.episode = e;
    sum.scene = scene.id();
    sum.fr = static_cast<double>(hits) / cfg.T;
    for (const Transition& tr : buffer.transitions) sum.return_sum += tr.reward;
    if (!stats.actor_objective.empty()) {
      sum.actor_objective = stats.actor_objective.back();
      sum.critic_loss = stats.critic_loss.back();
    }
    sum.srm_loss = srm_loss_count ? srm_loss_sum / srm_loss_count : 0.0;
    summaries.push_back(sum);
    ++state.episodes_done;
  }
  return summaries;
}

}  // namespace promptrl
