#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "promptrl/config.hpp"
#include "promptrl/errors.hpp"
#include "promptrl/experiment.hpp"

namespace fs = std::filesystem;
using namespace promptrl;

namespace {

struct ConfigFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> branch;
  std::optional<std::string> label_source;
  std::optional<std::string> dataset;
  std::optional<int> episodes;
  std::optional<int> horizon;
  std::optional<int> epochs;
  bool shuffle = false;

  void add_to(CLI::App* cmd, bool with_label_source) {
    cmd->add_option("--config", config, "RunConfig JSON file (defaults when omitted)");
    cmd->add_option("--seed", seed, "Override the run seed");
    cmd->add_option("--branch", branch, "SRM branch")->check(CLI::IsMember({"implicit", "explicit"}));
    if (with_label_source) {
      cmd->add_option("--label-source", label_source, "Prompt labels during training")
          ->check(CLI::IsMember({"srm", "gt", "clip_map", "last_mask", "positive"}));
    }
    cmd->add_option("--dataset", dataset, "Dataset manifest.json");
    cmd->add_option("-E,--episodes", episodes, "Training episodes");
    cmd->add_option("-T,--steps", horizon, "Steps per episode");
    cmd->add_option("-K,--epochs", epochs, "PPO epochs per update");
    cmd->add_flag("--shuffle", shuffle, "Reshuffle scene order on every pass");
  }

  RunConfig resolve() const {
    RunConfig cfg = config.empty() ? RunConfig{} : load_config(config);
    if (seed) cfg.seed = *seed;
    if (branch) {
      const Branch b = parse_branch(*branch);
      if (b != cfg.branch) cfg.q_srm = default_q_srm(b);
      cfg.branch = b;
    }
    if (label_source) cfg.label_source = parse_label_source(*label_source);
    if (dataset) cfg.dataset.manifest = *dataset;
    if (episodes) cfg.E = *episodes;
    if (horizon) cfg.T = *horizon;
    if (epochs) cfg.K = *epochs;
    if (shuffle) cfg.dataset.shuffle = true;
    cfg.validate();
    return cfg;
  }
};

struct EvalFlags {
  std::string split = "test";
  int T = 0;
  std::string label_source = "srm";
  std::string policy = "trained";
  std::string init = "srm";
  bool sample = false;
  int workers = 1;
  std::uint64_t seed = 0;

  void add_to(CLI::App* cmd, bool with_horizon) {
    cmd->add_option("--split", split, "Dataset split to evaluate")->capture_default_str();
    if (with_horizon) cmd->add_option("-T,--steps", T, "Prompting steps (0: checkpoint T)");
    cmd->add_option("--label-source", label_source, "Prompt labels during evaluation")
        ->check(CLI::IsMember({"srm", "gt", "clip_map", "last_mask", "positive"}))
        ->capture_default_str();
    cmd->add_option("--policy", policy, "Action selection")
        ->check(CLI::IsMember({"trained", "random"}))
        ->capture_default_str();
    cmd->add_option("--init", init, "Initial prompt pair")
        ->check(CLI::IsMember({"srm", "random"}))
        ->capture_default_str();
    cmd->add_flag("--sample", sample, "Sample actions instead of taking the argmax");
    cmd->add_option("--workers", workers, "Parallel evaluation workers")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--eval-seed", seed, "Seed of the evaluation RNG streams")
        ->capture_default_str();
  }

  EvalOptions resolve() const {
    EvalOptions o;
    o.split = split;
    o.T = T;
    o.label_source = parse_label_source(label_source);
    o.policy = parse_policy(policy);
    o.init = parse_init_mode(init);
    o.sample = sample;
    o.workers = workers;
    o.seed = seed;
    return o;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reinforcement-learned point prompting for promptable segmentation"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off")
      ->capture_default_str();

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic scene dataset");
  int n_scenes = 100, image_size = 160;
  std::uint64_t synth_seed = 0;
  double train_fraction = 0.5;
  std::string synth_out;
  synth->add_option("-n,--scenes", n_scenes, "Number of scenes")->capture_default_str();
  synth->add_option("--size", image_size, "Square image side in pixels")->capture_default_str();
  synth->add_option("--seed", synth_seed, "Dataset seed")->capture_default_str();
  synth->add_option("--train-fraction", train_fraction, "Fraction of scenes in the train split")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  synth->add_option("--out", synth_out, "Output directory")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train the agent and SRM on a dataset");
  ConfigFlags train_flags;
  std::string train_out;
  train_flags.add_to(train_cmd, true);
  train_cmd->add_option("--out", train_out, "Run directory")->required();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string checkpoint, eval_dataset, eval_out;
  EvalFlags eval_flags;
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint.cbor or a run directory")
      ->required();
  eval_cmd->add_option("--dataset", eval_dataset, "Dataset manifest (default: from checkpoint)");
  eval_flags.add_to(eval_cmd, true);
  eval_cmd->add_option("--out", eval_out, "Output directory")->required();

  // report
  auto* report_cmd = app.add_subcommand("report", "Compare evaluation runs");
  std::vector<std::string> report_dirs;
  std::string report_out;
  report_cmd->add_option("runs", report_dirs, "Evaluation output directories")->required();
  report_cmd->add_option("--out", report_out, "Output directory")->required();

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "Sensitivity sweep over T and E");
  ConfigFlags sweep_flags;
  EvalFlags sweep_eval;
  std::vector<int> sweep_T{5, 10, 15, 18}, sweep_E{10, 30, 50, 80};
  std::string sweep_out;
  sweep_flags.add_to(sweep_cmd, false);
  sweep_eval.add_to(sweep_cmd, false);
  sweep_cmd->add_option("--T-values", sweep_T, "Horizons to sweep")->delimiter(',');
  sweep_cmd->add_option("--E-values", sweep_E, "Episode counts to sweep")->delimiter(',');
  sweep_cmd->add_option("--out", sweep_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    spdlog::set_level(spdlog::level::from_str(log_level));
    if (synth->parsed()) {
      const auto m = cmd_synth(n_scenes, image_size, image_size, synth_seed, train_fraction,
                               synth_out);
      std::cout << "wrote " << m.scenes.size() << " scenes to "
                << (fs::path(synth_out) / "manifest.json").string() << "\n";
    } else if (train_cmd->parsed()) {
      const auto m = cmd_train(train_flags.resolve(), train_out);
      std::cout << m.run_id << " -> " << train_out << "\n";
    } else if (eval_cmd->parsed()) {
      fs::path ckpt = checkpoint;
      if (fs::is_directory(ckpt)) ckpt /= kCheckpointFile;
      const auto r = cmd_eval(ckpt, eval_dataset, eval_flags.resolve(), eval_out);
      std::ostringstream text;
      write_text_report(r, text);
      std::cout << text.str();
    } else if (report_cmd->parsed()) {
      std::vector<fs::path> dirs(report_dirs.begin(), report_dirs.end());
      std::cout << cmd_report(dirs, report_out);
    } else if (sweep_cmd->parsed()) {
      SweepOptions so;
      so.Ts = sweep_T;
      so.Es = sweep_E;
      so.eval = sweep_eval.resolve();
      cmd_sweep(sweep_flags.resolve(), so, sweep_out);
      std::ifstream in(fs::path(sweep_out) / "sweep.txt");
      std::cout << in.rdbuf();
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
