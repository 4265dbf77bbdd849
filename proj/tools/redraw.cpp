// Experiment driver: procedural scenes -> diffusion training -> per-policy
// augmentation -> per-policy segmenter training -> evaluation table. All
// stages are deterministic in the config seed and write only under --out.
#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "redraw/classic_aug.hpp"
#include "redraw/dataset.hpp"
#include "redraw/diffusion.hpp"
#include "redraw/maskprov.hpp"
#include "redraw/parallel.hpp"
#include "redraw/pipeline.hpp"
#include "redraw/rng.hpp"
#include "redraw/scenes.hpp"
#include "redraw/segharness.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace redraw;

namespace {

class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct RunConfig {
  uint64_t seed = 0;
  std::string out;

  scenes::SceneSpec scene;  // per-split seed filled in at generation time
  int train_n = 512;
  int val_n = 64;
  int test_n = 128;

  int timesteps = diff::kDefaultT;
  double beta_start = diff::kDefaultBetaStart;
  double beta_end = diff::kDefaultBetaEnd;
  diff::DiffusionTrainConfig dtrain;

  maskprov::ProposalSource provider = maskprov::ProposalSource::Oracle;
  pipe::TokenPolicy token_policy = pipe::TokenPolicy::SameClass;
  int k = 3;
  std::vector<aug::PolicyKind> policies;

  seg::SegTrainConfig strain;
};

void require_keys(const json& j, const char* where,
                  std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(std::string(where) + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* key : allowed) known = known || it.key() == key;
    if (!known) throw ConfigError(std::string(where) + ": unknown key '" + it.key() + "'");
  }
}

int64_t get_int(const json& j, const char* where, const char* key, int64_t fallback,
                int64_t lo, int64_t hi) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_number_integer()) {
    throw ConfigError(std::string(where) + "." + key + ": expected an integer");
  }
  int64_t x = v.get<int64_t>();
  if (x < lo || x > hi) {
    throw ConfigError(std::string(where) + "." + key + ": " + std::to_string(x) +
                      " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
  return x;
}

double get_num(const json& j, const char* where, const char* key, double fallback,
               double lo, double hi) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_number()) {
    throw ConfigError(std::string(where) + "." + key + ": expected a number");
  }
  double x = v.get<double>();
  if (!(x >= lo) || !(x <= hi)) {
    throw ConfigError(std::string(where) + "." + key + ": " + std::to_string(x) +
                      " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
  return x;
}

std::string get_str(const json& j, const char* where, const char* key,
                    const std::string& fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_string()) throw ConfigError(std::string(where) + "." + key + ": expected a string");
  return v.get<std::string>();
}

RunConfig parse_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path);
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  require_keys(j, "config", {"seed", "out", "scenes", "diffusion", "provider",
                             "token_policy", "k", "policies", "segmenter"});

  RunConfig cfg;
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned() && !j.at("seed").is_number_integer()) {
      throw ConfigError("config.seed: expected a non-negative integer");
    }
    if (j.at("seed").is_number_integer() && j.at("seed").get<int64_t>() < 0) {
      throw ConfigError("config.seed: expected a non-negative integer");
    }
    cfg.seed = j.at("seed").get<uint64_t>();
  }
  cfg.out = get_str(j, "config", "out", "");

  if (j.contains("scenes")) {
    const json& s = j.at("scenes");
    require_keys(s, "config.scenes",
                 {"train", "val", "test", "width", "height", "min_objects", "max_objects"});
    cfg.train_n = static_cast<int>(get_int(s, "config.scenes", "train", 512, 1, 1000000));
    cfg.val_n = static_cast<int>(get_int(s, "config.scenes", "val", 64, 0, 1000000));
    cfg.test_n = static_cast<int>(get_int(s, "config.scenes", "test", 128, 1, 1000000));
    cfg.scene.width = static_cast<int>(get_int(s, "config.scenes", "width", 64, 8, 4096));
    cfg.scene.height = static_cast<int>(get_int(s, "config.scenes", "height", 64, 8, 4096));
    cfg.scene.min_objects =
        static_cast<int>(get_int(s, "config.scenes", "min_objects", 2, 1, 64));
    cfg.scene.max_objects =
        static_cast<int>(get_int(s, "config.scenes", "max_objects", 5, 1, 64));
    if (cfg.scene.min_objects > cfg.scene.max_objects) {
      throw ConfigError("config.scenes: min_objects exceeds max_objects");
    }
  }
  // two pooling stages in both nets need sides divisible by 4
  if (cfg.scene.width % 4 != 0 || cfg.scene.height % 4 != 0) {
    throw ConfigError("config.scenes: width and height must be multiples of 4");
  }

  if (j.contains("diffusion")) {
    const json& d = j.at("diffusion");
    require_keys(d, "config.diffusion",
                 {"timesteps", "beta_start", "beta_end", "steps", "batch", "lr", "ema"});
    cfg.timesteps = static_cast<int>(get_int(d, "config.diffusion", "timesteps",
                                             diff::kDefaultT, 1, 100000));
    cfg.beta_start = get_num(d, "config.diffusion", "beta_start", diff::kDefaultBetaStart,
                             1e-12, 1.0 - 1e-12);
    cfg.beta_end =
        get_num(d, "config.diffusion", "beta_end", diff::kDefaultBetaEnd, 1e-12, 1.0 - 1e-12);
    if (cfg.beta_start > cfg.beta_end) {
      throw ConfigError("config.diffusion: beta_start exceeds beta_end");
    }
    cfg.dtrain.steps =
        static_cast<int>(get_int(d, "config.diffusion", "steps", 2000, 0, 10000000));
    cfg.dtrain.batch = static_cast<int>(get_int(d, "config.diffusion", "batch", 4, 1, 4096));
    cfg.dtrain.lr = get_num(d, "config.diffusion", "lr", 1e-3, 1e-12, 1.0);
    cfg.dtrain.ema = get_num(d, "config.diffusion", "ema", 0.0, 0.0, 1.0 - 1e-12);
  }

  std::string provider = get_str(j, "config", "provider", "oracle");
  if (provider == "oracle") {
    cfg.provider = maskprov::ProposalSource::Oracle;
  } else if (provider == "heuristic") {
    cfg.provider = maskprov::ProposalSource::Heuristic;
  } else {
    throw ConfigError("config.provider: expected 'oracle' or 'heuristic', got '" + provider +
                      "'");
  }

  std::string tokens = get_str(j, "config", "token_policy", "same_class");
  if (tokens == "same_class") {
    cfg.token_policy = pipe::TokenPolicy::SameClass;
  } else if (tokens == "restyle") {
    cfg.token_policy = pipe::TokenPolicy::Restyle;
  } else {
    throw ConfigError("config.token_policy: expected 'same_class' or 'restyle', got '" +
                      tokens + "'");
  }

  cfg.k = static_cast<int>(get_int(j, "config", "k", 3, 1, 1000));

  if (j.contains("policies")) {
    const json& p = j.at("policies");
    if (!p.is_array() || p.empty()) {
      throw ConfigError("config.policies: expected a nonempty array of policy names");
    }
    for (const json& name : p) {
      if (!name.is_string()) throw ConfigError("config.policies: entries must be strings");
      aug::PolicyKind kind;
      try {
        kind = aug::policy_from_name(name.get<std::string>());
      } catch (const std::exception& e) {
        throw ConfigError("config.policies: " + std::string(e.what()));
      }
      if (std::find(cfg.policies.begin(), cfg.policies.end(), kind) != cfg.policies.end()) {
        throw ConfigError("config.policies: duplicate policy '" + name.get<std::string>() +
                          "'");
      }
      cfg.policies.push_back(kind);
    }
  } else {
    cfg.policies = aug::policy_registry();
  }

  if (j.contains("segmenter")) {
    const json& s = j.at("segmenter");
    require_keys(s, "config.segmenter", {"epochs", "batch", "lr"});
    cfg.strain.epochs = static_cast<int>(get_int(s, "config.segmenter", "epochs", 40, 0, 100000));
    cfg.strain.batch = static_cast<int>(get_int(s, "config.segmenter", "batch", 8, 1, 4096));
    cfg.strain.lr = get_num(s, "config.segmenter", "lr", 1e-3, 1e-12, 1.0);
  }
  return cfg;
}

// ---- output layout ----

fs::path scenes_manifest(const RunConfig& cfg, const char* split) {
  return fs::path(cfg.out) / "scenes" / split / "manifest.jsonl";
}
fs::path denoiser_path(const RunConfig& cfg) {
  return fs::path(cfg.out) / "models" / "denoiser.bin";
}
fs::path aug_manifest(const RunConfig& cfg, aug::PolicyKind kind) {
  return fs::path(cfg.out) / "aug" / aug::policy_name(kind) / "manifest.jsonl";
}
fs::path seg_model_path(const RunConfig& cfg, aug::PolicyKind kind) {
  return fs::path(cfg.out) / "models" /
         ("seg_" + std::string(aug::policy_name(kind)) + ".bin");
}
fs::path curve_path(const RunConfig& cfg, const std::string& name) {
  return fs::path(cfg.out) / "curves" / (name + ".csv");
}
fs::path table_path(const RunConfig& cfg) {
  return fs::path(cfg.out) / "results" / "table.csv";
}

void require_artifact(const fs::path& p, const char* stage, const char* what,
                      const char* producer) {
  if (!fs::exists(p)) {
    throw std::runtime_error(std::string(stage) + ": missing " + what + " at " + p.string() +
                             "; run " + producer + " first");
  }
}

// ---- stages ----

void cmd_gen_scenes(const RunConfig& cfg) {
  struct Split {
    const char* name;
    int n;
    uint64_t tag;
  };
  const Split splits[] = {{"train", cfg.train_n, 0}, {"val", cfg.val_n, 1},
                          {"test", cfg.test_n, 2}};
  for (const Split& s : splits) {
    if (s.n == 0) continue;
    scenes::SceneSpec spec = cfg.scene;
    spec.seed = derive_seed({cfg.seed, 0x7363656e, s.tag});  // scene stream per split
    std::string manifest =
        scenes::generate_dataset(spec, s.n, (fs::path(cfg.out) / "scenes" / s.name).string());
    std::fprintf(stderr, "gen-scenes: %s %d scenes -> %s\n", s.name, s.n, manifest.c_str());
  }
}

void cmd_train_diffusion(const RunConfig& cfg) {
  fs::path manifest = scenes_manifest(cfg, "train");
  require_artifact(manifest, "train-diffusion", "training scenes manifest", "gen-scenes");
  diff::NoiseSchedule sched = diff::make_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end);
  diff::DenoiserNet net(cfg.seed);
  diff::DiffusionTrainConfig tcfg = cfg.dtrain;
  tcfg.seed = cfg.seed;
  fs::create_directories(denoiser_path(cfg).parent_path());
  tcfg.checkpoint_path = denoiser_path(cfg).string();
  std::fprintf(stderr, "train-diffusion: %d steps, batch %d, T=%d\n", tcfg.steps, tcfg.batch,
               cfg.timesteps);
  diff::LossCurve curve = diff::train_diffusion(net, manifest.string(), sched, tcfg);
  fs::create_directories(fs::path(cfg.out) / "curves");
  seg::write_loss_curve(curve_path(cfg, "diffusion_loss").string(), curve);
  if (!curve.empty()) {
    std::fprintf(stderr, "train-diffusion: loss %.4f -> %.4f, model %s\n",
                 curve.front().second, curve.back().second, tcfg.checkpoint_path.c_str());
  }
}

void cmd_augment(const RunConfig& cfg) {
  fs::path manifest = scenes_manifest(cfg, "train");
  require_artifact(manifest, "augment", "training scenes manifest", "gen-scenes");
  for (aug::PolicyKind kind : cfg.policies) {
    pipe::AugmentConfig acfg;
    acfg.policy = kind;
    acfg.k = cfg.k;
    acfg.seed = cfg.seed;
    acfg.provider = cfg.provider;
    acfg.token_policy = cfg.token_policy;
    if (kind == aug::PolicyKind::EraseRedraw) {
      require_artifact(denoiser_path(cfg), "augment", "denoiser checkpoint",
                       "train-diffusion");
      acfg.denoiser_checkpoint = denoiser_path(cfg).string();
    }
    std::string out = pipe::augment_dataset(
        manifest.string(), acfg, (fs::path(cfg.out) / "aug" / aug::policy_name(kind)).string());
    std::fprintf(stderr, "augment: %s k=%d -> %s\n", aug::policy_name(kind), cfg.k,
                 out.c_str());
  }
}

void cmd_train_seg(const RunConfig& cfg) {
  for (aug::PolicyKind kind : cfg.policies) {
    fs::path manifest = aug_manifest(cfg, kind);
    require_artifact(manifest, "train-seg", "augmented manifest", "augment");
    seg::SegNet net(cfg.seed);  // identical init across policies keeps the game fair
    seg::SegTrainConfig scfg = cfg.strain;
    scfg.seed = cfg.seed;
    fs::create_directories(seg_model_path(cfg, kind).parent_path());
    scfg.checkpoint_path = seg_model_path(cfg, kind).string();
    seg::LossCurve curve = seg::train_segmenter(net, manifest.string(), scfg);
    fs::create_directories(fs::path(cfg.out) / "curves");
    seg::write_loss_curve(
        curve_path(cfg, "seg_" + std::string(aug::policy_name(kind))).string(), curve);
    if (!curve.empty()) {
      std::fprintf(stderr, "train-seg: %s loss %.4f -> %.4f\n", aug::policy_name(kind),
                   curve.front().second, curve.back().second);
    }
  }
}

void cmd_evaluate(const RunConfig& cfg) {
  fs::path manifest = scenes_manifest(cfg, "test");
  require_artifact(manifest, "evaluate", "test scenes manifest", "gen-scenes");
  std::vector<seg::PolicyModel> models;
  for (aug::PolicyKind kind : cfg.policies) {
    require_artifact(seg_model_path(cfg, kind), "evaluate", "segmenter model", "train-seg");
    models.push_back({aug::policy_name(kind), seg_model_path(cfg, kind).string()});
  }
  std::vector<seg::MetricsRow> rows = seg::evaluate_table(models, manifest.string());
  fs::create_directories(table_path(cfg).parent_path());
  seg::write_metrics_csv(table_path(cfg).string(), rows);
  for (const seg::MetricsRow& r : rows) {
    std::fprintf(stderr, "evaluate: %-14s miou %.4f f1 %.4f\n", r.policy.c_str(), r.iou,
                 r.f1);
  }
  std::fprintf(stderr, "evaluate: table -> %s\n", table_path(cfg).string().c_str());
}

void cmd_run_all(const RunConfig& cfg) {
  cmd_gen_scenes(cfg);
  cmd_train_diffusion(cfg);
  cmd_augment(cfg);
  cmd_train_seg(cfg);
  cmd_evaluate(cfg);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"road-scene augmentation experiment driver"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  uint64_t seed_flag = 0;
  int threads_flag = 0;

  const char* names[] = {"gen-scenes", "train-diffusion", "augment",
                         "train-seg", "evaluate",        "run-all"};
  const char* descs[] = {"generate train/val/test scene datasets",
                         "train the inpainting denoiser on the train split",
                         "build per-policy augmented training sets",
                         "train one segmenter per policy",
                         "evaluate all segmenters into results/table.csv",
                         "run every stage in sequence"};
  for (int i = 0; i < 6; ++i) {
    CLI::App* sub = app.add_subcommand(names[i], descs[i]);
    sub->add_option("--config", config_path, "JSON run configuration")->required();
    sub->add_option("--out", out_dir, "output directory for all artifacts")->required();
    sub->add_option("--seed", seed_flag, "override the config seed");
    sub->add_option("--threads", threads_flag, "cap worker threads (default: all cores)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return 0;  // --help
    std::fprintf(stderr, "%s\n", e.what());
    return 1;
  }

  RunConfig cfg;
  try {
    cfg = parse_config(config_path);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  }

  CLI::App* sub = app.get_subcommands().front();
  if (sub->count("--seed")) cfg.seed = seed_flag;
  cfg.out = out_dir;

  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw < 1) hw = 1;
  par::set_threads(threads_flag > 0 ? std::min(threads_flag, hw) : hw);

  try {
    const std::string& name = sub->get_name();
    if (name == "gen-scenes") {
      cmd_gen_scenes(cfg);
    } else if (name == "train-diffusion") {
      cmd_train_diffusion(cfg);
    } else if (name == "augment") {
      cmd_augment(cfg);
    } else if (name == "train-seg") {
      cmd_train_seg(cfg);
    } else if (name == "evaluate") {
      cmd_evaluate(cfg);
    } else {
      cmd_run_all(cfg);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
