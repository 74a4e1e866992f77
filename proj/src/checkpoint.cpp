#include "promptrl/checkpoint.hpp"

#include <fstream>
#include <iterator>
#include <sstream>

#include "promptrl/errors.hpp"

namespace promptrl {

namespace {

using nlohmann::json;

json adam_to_json(const nn::AdamState& s) {
  return {{"step", s.step}, {"m", s.m}, {"v", s.v}};
}

nn::AdamState adam_from_json(const json& j, std::size_t n, const char* what) {
  nn::AdamState s;
  s.step = j.at("step").get<long long>();
  s.m = j.at("m").get<std::vector<double>>();
  s.v = j.at("v").get<std::vector<double>>();
  if (s.m.size() != n || s.v.size() != n) {
    throw InputError(std::string("checkpoint: optimizer state size mismatch in ") + what);
  }
  return s;
}

std::vector<double> params_from_json(const json& j, std::size_t n, const char* what) {
  auto p = j.get<std::vector<double>>();
  if (p.size() != n) {
    throw InputError(std::string("checkpoint: ") + what + " has " + std::to_string(p.size()) +
                     " parameters, architecture needs " + std::to_string(n));
  }
  return p;
}

}  // namespace

json checkpoint_to_json(const TrainState& state) {
  const PolicyArch& a = state.agent.params.arch;
  std::ostringstream rng;
  rng << state.rng;
  return {
      {"version", kCheckpointVersion},
      {"episodes_done", state.episodes_done},
      {"config", to_json(state.config)},
      {"rng", rng.str()},
      {"policy",
       {{"arch",
         {{"rows", a.rows},
          {"cols", a.cols},
          {"channels", a.channels},
          {"hidden1", a.hidden1},
          {"hidden2", a.hidden2}}},
        {"actor", state.agent.params.actor},
        {"critic", state.agent.params.critic},
        {"actor_opt", adam_to_json(state.agent.actor_opt)},
        {"critic_opt", adam_to_json(state.agent.critic_opt)}}},
      {"srm",
       {{"branch", to_string(state.srm.net.branch())},
        {"rows", state.srm.net.rows()},
        {"cols", state.srm.net.cols()},
        {"channels", state.srm.net.channels()},
        {"params", state.srm.params},
        {"opt", adam_to_json(state.srm.opt)},
        {"updates", state.srm.updates}}},
  };
}

TrainState checkpoint_from_json(const json& j) {
  try {
    const int version = j.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw InputError("checkpoint version " + std::to_string(version) + " is not supported");
    }
    TrainState st;
    st.config = config_from_json(j.at("config"));
    st.episodes_done = j.at("episodes_done").get<int>();
    std::istringstream rng(j.at("rng").get<std::string>());
    rng >> st.rng;
    if (rng.fail()) throw InputError("checkpoint: unreadable rng state");

    const json& p = j.at("policy");
    const json& ja = p.at("arch");
    PolicyArch arch{ja.at("rows").get<int>(), ja.at("cols").get<int>(),
                    ja.at("channels").get<int>(), ja.at("hidden1").get<int>(),
                    ja.at("hidden2").get<int>()};
    st.agent.params.arch = arch;
    st.agent.actor = ActorNet(arch);
    st.agent.critic = CriticNet(arch);
    st.agent.params.actor = params_from_json(p.at("actor"), st.agent.actor.param_count(), "actor");
    st.agent.params.critic =
        params_from_json(p.at("critic"), st.agent.critic.param_count(), "critic");
    st.agent.actor_opt = adam_from_json(p.at("actor_opt"), st.agent.params.actor.size(), "actor");
    st.agent.critic_opt =
        adam_from_json(p.at("critic_opt"), st.agent.params.critic.size(), "critic");

    const json& s = j.at("srm");
    st.srm.net = SrmNet(parse_branch(s.at("branch").get<std::string>()), s.at("rows").get<int>(),
                        s.at("cols").get<int>(), s.at("channels").get<int>());
    st.srm.params = params_from_json(s.at("params"), st.srm.net.param_count(), "srm");
    st.srm.opt = adam_from_json(s.at("opt"), st.srm.params.size(), "srm");
    st.srm.updates = s.at("updates").get<std::int64_t>();
    return st;
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = json::to_cbor(checkpoint_to_json(state));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  json j;
  try {
    j = json::from_cbor(bytes);
  } catch (const json::exception& e) {
    throw InputError("checkpoint " + path.string() + " is not a valid container: " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace promptrl
