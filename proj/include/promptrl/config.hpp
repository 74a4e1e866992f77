#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "promptrl/core_types.hpp"

namespace promptrl {

enum class Branch { Implicit, Explicit };

// Where the label of a newly selected prompt comes from. `Positive` labels
// every selected point as foreground (the recalibration-free ablation).
enum class LabelSource { Srm, Gt, ClipMap, LastMask, Positive };

enum class BackendKind { Synthetic, Adapter };

const char* to_string(Branch b);
const char* to_string(LabelSource s);
const char* to_string(BackendKind k);
Branch parse_branch(std::string_view s);
LabelSource parse_label_source(std::string_view s);
BackendKind parse_backend(std::string_view s);

// Knobs of the synthetic backend and semantic-map provider.
struct SyntheticOptions {
  int feature_channels = 8;
  double feature_noise = 0.1;
  double semantic_noise = 0.2;
};

// Opaque settings for a real foundation-model backend.
struct AdapterOptions {
  std::string checkpoint;
  std::string device = "cpu";
};

struct DatasetOptions {
  std::string manifest;
  std::string split = "train";
  bool shuffle = false;
};

struct RunConfig {
  GridSpec grid = build_grid(160, 160, 16, 16);
  int T = 15;
  int E = 50;
  int K = 20;
  double gamma = 0.99;
  double epsilon = 0.20;
  double lr = 1e-4;
  Branch branch = Branch::Implicit;
  int q_srm = 1;
  LabelSource label_source = LabelSource::Gt;
  BackendKind backend = BackendKind::Synthetic;
  std::optional<std::string> text_prompt;
  std::uint64_t seed = 0;

  SyntheticOptions synthetic;
  AdapterOptions adapter;
  DatasetOptions dataset;

  // Throws ConfigError describing the first violated constraint.
  void validate() const;
};

// Default SRM iteration count per branch: 1 implicit, 5 explicit.
int default_q_srm(Branch b);

// Structured-text (JSON) round trip. Unknown keys are a ConfigError.
nlohmann::json to_json(const RunConfig& cfg);
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
void save_config(const RunConfig& cfg, const std::filesystem::path& path);

}  // namespace promptrl
