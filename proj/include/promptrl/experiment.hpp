#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "promptrl/config.hpp"
#include "promptrl/dataset.hpp"
#include "promptrl/metrics.hpp"
#include "promptrl/ppo.hpp"

namespace promptrl {

enum class PolicyKind { Trained, Random };

const char* to_string(PolicyKind p);
const char* to_string(InitMode m);
PolicyKind parse_policy(std::string_view s);
InitMode parse_init_mode(std::string_view s);

struct EvalOptions {
  std::string split = "test";
  int T = 0;  // 0: the horizon stored in the checkpoint config
  LabelSource label_source = LabelSource::Srm;
  PolicyKind policy = PolicyKind::Trained;
  bool sample = false;  // sample from the policy instead of taking its argmax
  InitMode init = InitMode::Srm;
  int workers = 1;
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const EvalOptions& o);

// One evaluation episode per scene; metrics after every step t = 1..T.
// Each scene draws from its own RNG stream, so results do not depend on the
// worker count.
MetricsReport evaluate(const TrainState& state, const std::vector<Scene>& scenes,
                       const SegmentationBackend& backend, const SemanticMapProvider* semantic,
                       const EvalOptions& opts);

// Stable identifier of a configuration (paths excluded).
std::string run_id_for(const RunConfig& cfg);

struct SeedRecord {
  std::uint64_t run = 0;
  std::uint64_t agent = 0;
  std::uint64_t srm = 0;
  std::uint64_t train = 0;
};

struct ExperimentManifest {
  std::string run_id;
  RunConfig config;
  std::string dataset_manifest;
  std::string checkpoint;
  std::string episode_log;
  std::string report;
  std::string started_utc;
  double wall_clock_seconds = 0.0;
  SeedRecord seeds;
};

nlohmann::json to_json(const ExperimentManifest& m);
ExperimentManifest manifest_from_json(const nlohmann::json& j);
void save_manifest(const ExperimentManifest& m, const std::filesystem::path& path);
ExperimentManifest load_experiment_manifest(const std::filesystem::path& path);

// Output file names inside a run directory.
inline constexpr const char* kConfigFile = "config.json";
inline constexpr const char* kCheckpointFile = "checkpoint.cbor";
inline constexpr const char* kEpisodeLogFile = "episodes.jsonl";
inline constexpr const char* kEpisodeSummaryFile = "episode_summary.jsonl";
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kReportJsonFile = "report.json";
inline constexpr const char* kReportTextFile = "report.txt";
inline constexpr const char* kMetricsLogFile = "metrics.jsonl";

DatasetManifest cmd_synth(int n_scenes, int image_h, int image_w, std::uint64_t seed,
                          double train_fraction, const std::filesystem::path& out_dir);

// Trains on cfg.dataset and writes config snapshot, checkpoint, episode logs
// and manifest into out_dir.
ExperimentManifest cmd_train(const RunConfig& cfg, const std::filesystem::path& out_dir);

// Evaluates a checkpoint. `dataset` overrides the manifest recorded in the
// checkpoint config when non-empty. Writes report.json, report.txt and
// metrics.jsonl into out_dir.
MetricsReport cmd_eval(const std::filesystem::path& checkpoint,
                       const std::filesystem::path& dataset, const EvalOptions& opts,
                       const std::filesystem::path& out_dir);

// Compares eval directories: comparison.txt / comparison.json plus one per-t
// SVG curve per metric. Returns the text table.
std::string cmd_report(const std::vector<std::filesystem::path>& run_dirs,
                       const std::filesystem::path& out_dir);

struct SweepPoint {
  int T = 0;
  int E = 0;
  ImageMetrics final_metrics;
  double fr = 0.0;
  double seconds = 0.0;
};

struct SweepOptions {
  std::vector<int> Ts{5, 10, 15, 18};
  std::vector<int> Es{10, 30, 50, 80};
  EvalOptions eval;
};

// Trains and evaluates every (T, E) pair, then writes sweep.json, sweep.txt
// and the sensitivity plots.
std::vector<SweepPoint> cmd_sweep(const RunConfig& base, const SweepOptions& opts,
                                  const std::filesystem::path& out_dir);

}  // namespace promptrl
