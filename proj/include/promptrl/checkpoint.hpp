#pragma once

#include <filesystem>

#include <json.hpp>

#include "promptrl/ppo.hpp"

namespace promptrl {

inline constexpr int kCheckpointVersion = 1;

// Layout:
//   version, episodes_done, config, rng
//   policy: {arch, actor, critic, actor_opt, critic_opt}
//   srm:    {branch, rows, cols, channels, params, opt, updates}
nlohmann::json checkpoint_to_json(const TrainState& state);
TrainState checkpoint_from_json(const nlohmann::json& j);

// CBOR container on disk.
void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);

}  // namespace promptrl
