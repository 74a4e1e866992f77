#include "promptrl/experiment.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "promptrl/checkpoint.hpp"
#include "promptrl/errors.hpp"
#include "promptrl/plot.hpp"

namespace promptrl {

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(PolicyKind p) { return p == PolicyKind::Trained ? "trained" : "random"; }

const char* to_string(InitMode m) { return m == InitMode::Srm ? "srm" : "random"; }

PolicyKind parse_policy(std::string_view s) {
  if (s == "trained") return PolicyKind::Trained;
  if (s == "random") return PolicyKind::Random;
  throw ConfigError("unknown policy '" + std::string(s) + "' (expected trained|random)");
}

InitMode parse_init_mode(std::string_view s) {
  if (s == "srm") return InitMode::Srm;
  if (s == "random") return InitMode::Random;
  throw ConfigError("unknown init mode '" + std::string(s) + "' (expected srm|random)");
}

json to_json(const EvalOptions& o) {
  return {{"split", o.split},
          {"T", o.T},
          {"label_source", to_string(o.label_source)},
          {"policy", to_string(o.policy)},
          {"sample", o.sample},
          {"init", to_string(o.init)},
          {"seed", o.seed}};
}

namespace {

bool needs_semantic(Branch branch, LabelSource source) {
  return branch == Branch::Explicit || source == LabelSource::ClipMap;
}

ImageReport evaluate_scene(const TrainState& state, const Scene& scene,
                           const SegmentationBackend& backend, const SemanticMapProvider* semantic,
                           const EvalOptions& opts, int T, std::uint64_t scene_seed) {
  const RunConfig& cfg = state.config;
  Rng rng(scene_seed);
  Environment env(cfg.grid, backend, scene, EnvOptions{T, opts.label_source, opts.init},
                  &state.srm, semantic);
  env.reset(EpisodeMode::Eval, rng);

  ImageReport out;
  out.scene = scene.id();
  out.per_step.reserve(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    int action = 0;
    if (opts.policy == PolicyKind::Random) {
      action = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(cfg.grid.n_actions)));
    } else {
      const auto probs = policy_forward(state.agent.params, env.state());
      action = sample_action(probs, rng, !opts.sample);
    }
    env.step(action);
    out.per_step.push_back(evaluate_mask(env.mask(), scene.gt()));
  }
  out.fr = foreground_rate(env.chosen_points(), scene.gt(), T);
  return out;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create directory " + dir.string() + ": " + ec.message());
}

}  // namespace

MetricsReport evaluate(const TrainState& state, const std::vector<Scene>& scenes,
                       const SegmentationBackend& backend, const SemanticMapProvider* semantic,
                       const EvalOptions& opts) {
  const RunConfig& cfg = state.config;
  const int T = opts.T > 0 ? opts.T : cfg.T;
  if (needs_semantic(cfg.branch, opts.label_source) && semantic == nullptr) {
    throw UsageError("explicit branch / clip_map labels need a semantic map provider");
  }
  const SemanticMapProvider* sem = needs_semantic(cfg.branch, opts.label_source) ? semantic
                                                                                 : nullptr;

  MetricsReport report;
  report.run_id = run_id_for(cfg);
  report.policy = to_string(opts.policy);
  report.label_source = to_string(opts.label_source);
  report.T = T;
  report.images.resize(scenes.size());

  const std::uint64_t base = mix_seed(opts.seed, 20);
  const int workers = std::max(1, std::min<int>(opts.workers, static_cast<int>(scenes.size())));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < scenes.size(); i = next++) {
      try {
        report.images[i] =
            evaluate_scene(state, scenes[i], backend, sem, opts, T, mix_seed(base, i));
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = scenes.size();
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
  return report;
}

std::string run_id_for(const RunConfig& cfg) {
  json j = to_json(cfg);
  j["dataset"].erase("manifest");
  j["adapter"].erase("checkpoint");
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return "run-" + hex64(h);
}

json to_json(const ExperimentManifest& m) {
  return {{"version", 1},
          {"run_id", m.run_id},
          {"config", to_json(m.config)},
          {"dataset_manifest", m.dataset_manifest},
          {"checkpoint", m.checkpoint},
          {"episode_log", m.episode_log},
          {"report", m.report},
          {"started_utc", m.started_utc},
          {"wall_clock_seconds", m.wall_clock_seconds},
          {"seeds",
           {{"run", m.seeds.run},
            {"agent", m.seeds.agent},
            {"srm", m.seeds.srm},
            {"train", m.seeds.train}}}};
}

ExperimentManifest manifest_from_json(const json& j) {
  try {
    ExperimentManifest m;
    m.run_id = j.at("run_id").get<std::string>();
    m.config = config_from_json(j.at("config"));
    m.dataset_manifest = j.at("dataset_manifest").get<std::string>();
    m.checkpoint = j.at("checkpoint").get<std::string>();
    m.episode_log = j.at("episode_log").get<std::string>();
    m.report = j.at("report").get<std::string>();
    m.started_utc = j.at("started_utc").get<std::string>();
    m.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
    const json& s = j.at("seeds");
    m.seeds = {s.at("run").get<std::uint64_t>(), s.at("agent").get<std::uint64_t>(),
               s.at("srm").get<std::uint64_t>(), s.at("train").get<std::uint64_t>()};
    return m;
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed experiment manifest: ") + e.what());
  }
}

void save_manifest(const ExperimentManifest& m, const fs::path& path) {
  write_text(path, to_json(m).dump(2) + "\n");
}

ExperimentManifest load_experiment_manifest(const fs::path& path) {
  return manifest_from_json(read_json(path));
}

DatasetManifest cmd_synth(int n_scenes, int image_h, int image_w, std::uint64_t seed,
                          double train_fraction, const fs::path& out_dir) {
  if (n_scenes < 0) throw UsageError("scene count must be non-negative");
  ensure_dir(out_dir);
  return synthesize_dataset(n_scenes, image_h, image_w, seed, train_fraction, out_dir);
}

ExperimentManifest cmd_train(const RunConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  if (cfg.dataset.manifest.empty()) throw ConfigError("dataset.manifest is not set");
  const auto t0 = std::chrono::steady_clock::now();

  ExperimentManifest m;
  m.run_id = run_id_for(cfg);
  m.config = cfg;
  m.dataset_manifest = cfg.dataset.manifest;
  m.checkpoint = kCheckpointFile;
  m.episode_log = kEpisodeLogFile;
  m.started_utc = utc_now();
  m.seeds = {cfg.seed, mix_seed(cfg.seed, 10), mix_seed(cfg.seed, 11), mix_seed(cfg.seed, 12)};

  const std::vector<Scene> scenes = load_scenes(cfg.dataset.manifest, cfg.dataset.split);
  if (scenes.empty()) {
    throw UsageError("split '" + cfg.dataset.split + "' of " + cfg.dataset.manifest +
                     " has no scenes");
  }
  ensure_dir(out_dir);
  save_config(cfg, out_dir / kConfigFile);

  const auto backend = make_backend(cfg);
  const auto semantic = needs_semantic(cfg.branch, cfg.label_source)
                            ? make_semantic_provider(cfg)
                            : std::unique_ptr<SemanticMapProvider>{};

  std::ofstream log(out_dir / kEpisodeLogFile);
  if (!log) throw Error("cannot write " + (out_dir / kEpisodeLogFile).string());
  TrainState state = init_train_state(cfg);
  spdlog::info("training {} on {} scenes: E={} T={} K={}", m.run_id, scenes.size(), cfg.E, cfg.T,
               cfg.K);
  const auto summaries = train(state, scenes, *backend, semantic.get(),
                               [&](const StepRecord& r) { log << to_json(r).dump() << '\n'; });
  log.close();

  std::ofstream sum(out_dir / kEpisodeSummaryFile);
  for (const EpisodeSummary& s : summaries) {
    sum << json{{"episode", s.episode},
                {"scene", s.scene},
                {"fr", s.fr},
                {"return", s.return_sum},
                {"actor_objective", s.actor_objective},
                {"critic_loss", s.critic_loss},
                {"srm_loss", s.srm_loss}}
               .dump()
        << '\n';
  }
  save_checkpoint(state, out_dir / kCheckpointFile);

  m.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  save_manifest(m, out_dir / kManifestFile);
  spdlog::info("training finished in {:.1f}s", m.wall_clock_seconds);
  return m;
}

MetricsReport cmd_eval(const fs::path& checkpoint, const fs::path& dataset,
                       const EvalOptions& opts, const fs::path& out_dir) {
  const TrainState state = load_checkpoint(checkpoint);
  const fs::path manifest = dataset.empty() ? fs::path(state.config.dataset.manifest) : dataset;
  if (manifest.empty()) throw ConfigError("no dataset manifest given or recorded in checkpoint");
  const std::vector<Scene> scenes = load_scenes(manifest, opts.split);
  if (scenes.empty()) {
    throw UsageError("split '" + opts.split + "' of " + manifest.string() + " has no scenes");
  }
  const auto backend = make_backend(state.config);
  const auto semantic = needs_semantic(state.config.branch, opts.label_source)
                            ? make_semantic_provider(state.config)
                            : std::unique_ptr<SemanticMapProvider>{};

  const MetricsReport report = evaluate(state, scenes, *backend, semantic.get(), opts);

  ensure_dir(out_dir);
  json j = to_json(report);
  EvalOptions recorded = opts;
  recorded.T = report.T;
  j["eval"] = to_json(recorded);
  write_text(out_dir / kReportJsonFile, j.dump(2) + "\n");
  std::ostringstream text;
  write_text_report(report, text);
  write_text(out_dir / kReportTextFile, text.str());
  std::ostringstream records;
  write_records(report, records);
  write_text(out_dir / kMetricsLogFile, records.str());
  return report;
}

std::string cmd_report(const std::vector<fs::path>& run_dirs, const fs::path& out_dir) {
  if (run_dirs.empty()) throw UsageError("report needs at least one run directory");
  std::vector<std::string> missing;
  for (const fs::path& d : run_dirs) {
    if (!fs::is_directory(d) || !fs::exists(d / kReportJsonFile)) missing.push_back(d.string());
  }
  if (!missing.empty()) {
    std::string msg = "missing run directories or reports:";
    for (const auto& p : missing) msg += "\n  " + p;
    throw InputError(msg);
  }

  std::vector<MetricsReport> reports;
  for (const fs::path& d : run_dirs) reports.push_back(report_from_json(read_json(d / kReportJsonFile)));

  // FR delta against the first random-policy run, or the first run if none.
  std::size_t baseline = 0;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    if (reports[i].policy == "random") {
      baseline = i;
      break;
    }
  }
  const bool with_delta = reports.size() >= 2;
  const double base_fr = reports[baseline].mean_fr();

  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << std::left << std::setw(24) << "run" << std::setw(9) << "policy" << std::setw(11) << "labels"
     << std::right << std::setw(4) << "T" << std::setw(6) << "n" << std::setw(9) << "mIoU"
     << std::setw(9) << "MAE" << std::setw(9) << "BER" << std::setw(9) << "F_b" << std::setw(9)
     << "E_phi" << std::setw(9) << "FR";
  if (with_delta) os << std::setw(10) << "dFR";
  os << "\n";
  json rows = json::array();
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const MetricsReport& r = reports[i];
    const ImageMetrics f = r.mean_final();
    const std::string name = run_dirs[i].filename().empty()
                                 ? run_dirs[i].parent_path().filename().string()
                                 : run_dirs[i].filename().string();
    os << std::left << std::setw(24) << name << std::setw(9) << r.policy << std::setw(11)
       << r.label_source << std::right << std::setw(4) << r.T << std::setw(6) << r.images.size()
       << std::setw(9) << f.iou << std::setw(9) << f.mae << std::setw(9) << f.ber << std::setw(9)
       << f.f_beta << std::setw(9) << f.e_phi << std::setw(9) << r.mean_fr();
    json row = {{"run", name},          {"run_id", r.run_id},  {"policy", r.policy},
                {"label_source", r.label_source}, {"T", r.T}, {"n_images", r.images.size()},
                {"final", to_json(f)},  {"fr", r.mean_fr()}};
    if (with_delta) {
      os << std::setw(10) << std::showpos << r.mean_fr() - base_fr << std::noshowpos;
      row["fr_delta"] = r.mean_fr() - base_fr;
    }
    os << "\n";
    rows.push_back(row);
  }
  if (with_delta) {
    os << "\ndFR: FR minus the FR of baseline run '"
       << run_dirs[baseline].filename().string() << "'\n";
  }

  ensure_dir(out_dir);
  write_text(out_dir / "comparison.txt", os.str());
  write_text(out_dir / "comparison.json", json{{"rows", rows}}.dump(2) + "\n");

  struct Curve {
    const char* file;
    const char* label;
    double ImageMetrics::*field;
  };
  const Curve curves[] = {{"curve_iou.svg", "mIoU", &ImageMetrics::iou},
                          {"curve_mae.svg", "MAE", &ImageMetrics::mae},
                          {"curve_ber.svg", "BER (%)", &ImageMetrics::ber},
                          {"curve_fbeta.svg", "F_beta", &ImageMetrics::f_beta},
                          {"curve_ephi.svg", "E_phi", &ImageMetrics::e_phi}};
  for (const Curve& c : curves) {
    LinePlot plot{std::string(c.label) + " vs. prompting step", "step t", c.label, {}};
    for (std::size_t i = 0; i < reports.size(); ++i) {
      Series s;
      s.name = run_dirs[i].filename().string();
      const auto curve = reports[i].mean_curve();
      for (std::size_t t = 0; t < curve.size(); ++t) {
        s.x.push_back(static_cast<double>(t + 1));
        s.y.push_back(curve[t].*c.field);
      }
      plot.series.push_back(std::move(s));
    }
    write_svg(plot, out_dir / c.file);
  }
  return os.str();
}

std::vector<SweepPoint> cmd_sweep(const RunConfig& base, const SweepOptions& opts,
                                  const fs::path& out_dir) {
  if (opts.Ts.empty() || opts.Es.empty()) throw UsageError("sweep needs at least one T and one E");
  ensure_dir(out_dir);
  std::vector<SweepPoint> points;
  for (int T : opts.Ts) {
    for (int E : opts.Es) {
      RunConfig cfg = base;
      cfg.T = T;
      cfg.E = E;
      const fs::path dir = out_dir / ("T" + std::to_string(T) + "_E" + std::to_string(E));
      const auto t0 = std::chrono::steady_clock::now();
      cmd_train(cfg, dir);
      EvalOptions eo = opts.eval;
      eo.T = T;
      const MetricsReport r = cmd_eval(dir / kCheckpointFile, {}, eo, dir / "eval");
      SweepPoint p{T, E, r.mean_final(), r.mean_fr(),
                   std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
      spdlog::info("sweep T={} E={}: mIoU={:.4f} FR={:.4f} ({:.1f}s)", T, E, p.final_metrics.iou,
                   p.fr, p.seconds);
      points.push_back(p);
    }
  }

  json rows = json::array();
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "   T    E     mIoU       FR   seconds\n";
  for (const SweepPoint& p : points) {
    os << std::setw(4) << p.T << std::setw(5) << p.E << std::setw(9) << p.final_metrics.iou
       << std::setw(9) << p.fr << std::setw(10) << std::setprecision(1) << p.seconds
       << std::setprecision(4) << "\n";
    rows.push_back({{"T", p.T}, {"E", p.E}, {"final", to_json(p.final_metrics)}, {"fr", p.fr},
                    {"seconds", p.seconds}});
  }
  write_text(out_dir / "sweep.txt", os.str());
  write_text(out_dir / "sweep.json", json{{"points", rows}}.dump(2) + "\n");

  auto lookup = [&](int T, int E) -> const SweepPoint& {
    for (const SweepPoint& p : points) {
      if (p.T == T && p.E == E) return p;
    }
    throw Error("sweep point missing");
  };
  for (const bool over_T : {true, false}) {
    for (const bool use_fr : {false, true}) {
      LinePlot plot;
      plot.y_label = use_fr ? "FR" : "mIoU";
      plot.x_label = over_T ? "T" : "E";
      plot.title = plot.y_label + " sensitivity to " + plot.x_label;
      const auto& outer = over_T ? opts.Es : opts.Ts;
      const auto& inner = over_T ? opts.Ts : opts.Es;
      for (int o : outer) {
        Series s;
        s.name = (over_T ? "E=" : "T=") + std::to_string(o);
        for (int v : inner) {
          const SweepPoint& p = over_T ? lookup(v, o) : lookup(o, v);
          s.x.push_back(v);
          s.y.push_back(use_fr ? p.fr : p.final_metrics.iou);
        }
        plot.series.push_back(std::move(s));
      }
      write_svg(plot, out_dir / (std::string("sweep_") + (use_fr ? "fr" : "iou") + "_vs_" +
                                 (over_T ? "T" : "E") + ".svg"));
    }
  }
  return points;
}

}  // namespace promptrl
