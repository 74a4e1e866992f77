#include "promptrl/config.hpp"

#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>

#include "promptrl/errors.hpp"

namespace promptrl {

using nlohmann::json;

const char* to_string(Branch b) { return b == Branch::Implicit ? "implicit" : "explicit"; }

const char* to_string(LabelSource s) {
  switch (s) {
    case LabelSource::Srm: return "srm";
    case LabelSource::Gt: return "gt";
    case LabelSource::ClipMap: return "clip_map";
    case LabelSource::LastMask: return "last_mask";
    case LabelSource::Positive: return "positive";
  }
  return "?";
}

const char* to_string(BackendKind k) { return k == BackendKind::Synthetic ? "synthetic" : "adapter"; }

Branch parse_branch(std::string_view s) {
  if (s == "implicit") return Branch::Implicit;
  if (s == "explicit") return Branch::Explicit;
  throw ConfigError("unknown branch '" + std::string(s) + "' (expected implicit|explicit)");
}

LabelSource parse_label_source(std::string_view s) {
  if (s == "srm") return LabelSource::Srm;
  if (s == "gt") return LabelSource::Gt;
  if (s == "clip_map") return LabelSource::ClipMap;
  if (s == "last_mask") return LabelSource::LastMask;
  if (s == "positive") return LabelSource::Positive;
  throw ConfigError("unknown label_source '" + std::string(s) +
                    "' (expected srm|gt|clip_map|last_mask|positive)");
}

BackendKind parse_backend(std::string_view s) {
  if (s == "synthetic") return BackendKind::Synthetic;
  if (s == "adapter") return BackendKind::Adapter;
  throw ConfigError("unknown backend '" + std::string(s) + "' (expected synthetic|adapter)");
}

int default_q_srm(Branch b) { return b == Branch::Implicit ? 1 : 5; }

void RunConfig::validate() const {
  // Re-run the grid constructor so hand-edited grids are checked too.
  const GridSpec g = build_grid(grid.image_h, grid.image_w, grid.patch_h, grid.patch_w);
  if (!(g == grid)) throw ConfigError("grid derived fields are inconsistent");
  if (T < 1) throw ConfigError("T must be >= 1, got " + std::to_string(T));
  if (E < 0) throw ConfigError("E must be >= 0, got " + std::to_string(E));
  if (K < 0) throw ConfigError("K must be >= 0, got " + std::to_string(K));
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (q_srm < 0) throw ConfigError("q_srm must be >= 0");
  if (synthetic.feature_channels < 1) throw ConfigError("feature_channels must be >= 1");
  if (synthetic.feature_noise < 0.0 || synthetic.semantic_noise < 0.0) {
    throw ConfigError("noise amplitudes must be non-negative");
  }
}

json to_json(const RunConfig& cfg) {
  json j;
  j["grid"] = {{"image_h", cfg.grid.image_h},
               {"image_w", cfg.grid.image_w},
               {"patch_h", cfg.grid.patch_h},
               {"patch_w", cfg.grid.patch_w}};
  j["T"] = cfg.T;
  j["E"] = cfg.E;
  j["K"] = cfg.K;
  j["gamma"] = cfg.gamma;
  j["epsilon"] = cfg.epsilon;
  j["lr"] = cfg.lr;
  j["branch"] = to_string(cfg.branch);
  j["q_srm"] = cfg.q_srm;
  j["label_source"] = to_string(cfg.label_source);
  j["backend"] = to_string(cfg.backend);
  j["text_prompt"] = cfg.text_prompt ? json(*cfg.text_prompt) : json(nullptr);
  j["seed"] = cfg.seed;
  j["synthetic"] = {{"feature_channels", cfg.synthetic.feature_channels},
                    {"feature_noise", cfg.synthetic.feature_noise},
                    {"semantic_noise", cfg.synthetic.semantic_noise}};
  j["adapter"] = {{"checkpoint", cfg.adapter.checkpoint}, {"device", cfg.adapter.device}};
  j["dataset"] = {{"manifest", cfg.dataset.manifest},
                  {"split", cfg.dataset.split},
                  {"shuffle", cfg.dataset.shuffle}};
  return j;
}

namespace {

void reject_unknown(const json& obj, std::initializer_list<const char*> allowed,
                    const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  std::set<std::string> known(allowed.begin(), allowed.end());
  for (const auto& [key, _] : obj.items()) {
    if (!known.contains(key)) {
      throw ConfigError("unknown config key '" + (where.empty() ? key : where + "." + key) + "'");
    }
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("bad value for '" + (where.empty() ? "" : where + ".") + key + "': " +
                      e.what());
  }
}

}  // namespace

RunConfig config_from_json(const json& j) {
  reject_unknown(j,
                 {"grid", "T", "E", "K", "gamma", "epsilon", "lr", "branch", "q_srm",
                  "label_source", "backend", "text_prompt", "seed", "synthetic", "adapter",
                  "dataset"},
                 "");
  RunConfig cfg;
  if (j.contains("grid")) {
    const json& g = j.at("grid");
    reject_unknown(g, {"image_h", "image_w", "patch_h", "patch_w"}, "grid");
    int ih = cfg.grid.image_h, iw = cfg.grid.image_w, ph = cfg.grid.patch_h, pw = cfg.grid.patch_w;
    read(g, "image_h", ih, "grid");
    read(g, "image_w", iw, "grid");
    read(g, "patch_h", ph, "grid");
    read(g, "patch_w", pw, "grid");
    cfg.grid = build_grid(ih, iw, ph, pw);
  }
  read(j, "T", cfg.T, "");
  read(j, "E", cfg.E, "");
  read(j, "K", cfg.K, "");
  read(j, "gamma", cfg.gamma, "");
  read(j, "epsilon", cfg.epsilon, "");
  read(j, "lr", cfg.lr, "");
  if (j.contains("branch")) cfg.branch = parse_branch(j.at("branch").get<std::string>());
  cfg.q_srm = default_q_srm(cfg.branch);
  read(j, "q_srm", cfg.q_srm, "");
  if (j.contains("label_source")) {
    cfg.label_source = parse_label_source(j.at("label_source").get<std::string>());
  }
  if (j.contains("backend")) cfg.backend = parse_backend(j.at("backend").get<std::string>());
  if (j.contains("text_prompt") && !j.at("text_prompt").is_null()) {
    cfg.text_prompt = j.at("text_prompt").get<std::string>();
  }
  read(j, "seed", cfg.seed, "");
  if (j.contains("synthetic")) {
    const json& s = j.at("synthetic");
    reject_unknown(s, {"feature_channels", "feature_noise", "semantic_noise"}, "synthetic");
    read(s, "feature_channels", cfg.synthetic.feature_channels, "synthetic");
    read(s, "feature_noise", cfg.synthetic.feature_noise, "synthetic");
    read(s, "semantic_noise", cfg.synthetic.semantic_noise, "synthetic");
  }
  if (j.contains("adapter")) {
    const json& a = j.at("adapter");
    reject_unknown(a, {"checkpoint", "device"}, "adapter");
    read(a, "checkpoint", cfg.adapter.checkpoint, "adapter");
    read(a, "device", cfg.adapter.device, "adapter");
  }
  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    reject_unknown(d, {"manifest", "split", "shuffle"}, "dataset");
    read(d, "manifest", cfg.dataset.manifest, "dataset");
    read(d, "split", cfg.dataset.split, "dataset");
    read(d, "shuffle", cfg.dataset.shuffle, "dataset");
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError("cannot parse config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

void save_config(const RunConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write config file " + path.string());
  out << to_json(cfg).dump(2) << '\n';
}

}  // namespace promptrl
