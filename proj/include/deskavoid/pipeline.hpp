#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "deskavoid/codec.hpp"
#include "deskavoid/config.hpp"
#include "deskavoid/mpc.hpp"
#include "deskavoid/nav_env.hpp"
#include "deskavoid/rl_agent.hpp"
#include "deskavoid/scene_io.hpp"
#include "deskavoid/teleop.hpp"
#include "deskavoid/vision.hpp"

namespace deskavoid::pipeline {

namespace fs = std::filesystem;

struct EvalConfig {
  int trials = 100;
  int correction_steps = 10000;
  double threshold = 0.5;
  double proximity_radius = 1.0;

  void validate() const {
    if (trials < 1) throw ValidationError("eval: trials must be at least 1");
    if (correction_steps < 1) throw ValidationError("eval: correction_steps must be at least 1");
    if (threshold < 0.0) throw ValidationError("eval: threshold must be non-negative");
    if (!(proximity_radius > 0.0)) throw ValidationError("eval: proximity_radius must be positive");
  }
};

inline json eval_config_to_json(const EvalConfig& c, bool annotate = false) {
  const auto f = [&](const json& v, Source s = Source::default_value) { return annotate ? annotated(v, s) : v; };
  return {{"trials", f(c.trials, Source::paper)},
          {"correction_steps", f(c.correction_steps)},
          {"threshold", f(c.threshold)},
          {"proximity_radius", f(c.proximity_radius)}};
}

inline EvalConfig eval_config_from_json(const json& j) {
  check_keys(j, {"trials", "correction_steps", "threshold", "proximity_radius"}, "eval");
  EvalConfig c;
  read_leaf(j, "trials", c.trials);
  read_leaf(j, "correction_steps", c.correction_steps);
  read_leaf(j, "threshold", c.threshold);
  read_leaf(j, "proximity_radius", c.proximity_radius);
  c.validate();
  return c;
}

struct RunConfig {
  std::uint64_t seed = 0;
  std::string scene = "test_scene.json";
  EnvConfig env;
  vision::VisionConfig vision;
  rl::AgentConfig agent;
  mpc::MpcConfig mpc;
  EvalConfig eval;
  std::string out = "run";
};

inline json run_config_to_json(const RunConfig& c, bool annotate = false) {
  const auto f = [&](const json& v) { return annotate ? annotated(v, Source::default_value) : v; };
  return {{"seed", f(c.seed)},
          {"scene", f(c.scene)},
          {"out", f(c.out)},
          {"env", env_config_to_json(c.env, annotate)},
          {"vision", vision::vision_config_to_json(c.vision, annotate)},
          {"agent", rl::agent_config_to_json(c.agent, annotate)},
          {"mpc", mpc::mpc_config_to_json(c.mpc, annotate)},
          {"eval", eval_config_to_json(c.eval, annotate)}};
}

/// Relative paths are resolved against `base_dir` (the config file's directory).
inline RunConfig run_config_from_json(const json& j, const fs::path& base_dir = {}) {
  if (!j.is_object()) throw ValidationError("config: top level must be an object");
  check_keys(j, {"seed", "scene", "out", "env", "vision", "agent", "mpc", "eval"}, "config");
  RunConfig c;
  read_leaf(j, "seed", c.seed);
  read_leaf(j, "scene", c.scene);
  read_leaf(j, "out", c.out);
  const auto section = [&](const char* key) { return j.contains(key) ? j.at(key) : json::object(); };
  c.env = env_config_from_json(section("env"));
  c.vision = vision::vision_config_from_json(section("vision"));
  c.agent = rl::agent_config_from_json(section("agent"));
  c.mpc = mpc::mpc_config_from_json(section("mpc"));
  c.eval = eval_config_from_json(section("eval"));
  const auto resolve = [&](std::string& p) {
    if (!p.empty() && fs::path(p).is_relative() && !base_dir.empty()) p = (base_dir / p).lexically_normal().string();
  };
  resolve(c.scene);
  resolve(c.out);
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  const json j = read_json_file(path);
  return run_config_from_json(j, fs::absolute(path).parent_path());
}

/// Independent stream per command so stages do not shift each other's randomness.
inline Rng command_rng(std::uint64_t seed, std::string_view salt) {
  std::uint32_t h = 2166136261u;  // FNV-1a
  for (char ch : salt) h = (h ^ static_cast<unsigned char>(ch)) * 16777619u;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), h};
  return Rng(seq);
}

inline std::uint64_t command_seed(std::uint64_t seed, std::string_view salt) { return command_rng(seed, salt)(); }

// ---- artifact layout -------------------------------------------------------------------------

inline constexpr const char* kDataset = "dataset.vds";
inline constexpr const char* kVisionModel = "vision.json";
inline constexpr const char* kPolicy = "policy.json";
inline constexpr const char* kManifest = "manifest.json";
inline constexpr const char* kResolvedConfig = "resolved_config.json";

inline void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw RuntimeFailure("write failed for " + path.string());
}

class Workspace {
 public:
  explicit Workspace(RunConfig cfg) : cfg_(std::move(cfg)), dir_(cfg_.out) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw RuntimeFailure("cannot create output directory " + dir_.string() + ": " + ec.message());
    write_json(dir_ / kResolvedConfig, run_config_to_json(cfg_, true));
  }

  [[nodiscard]] const RunConfig& config() const { return cfg_; }
  [[nodiscard]] fs::path path(const std::string& name) const { return dir_ / name; }

  fs::path require(const std::string& name, const std::string& produced_by) const {
    const fs::path p = path(name);
    if (!fs::exists(p)) throw ValidationError("missing artifact " + p.string() + " (run `" + produced_by + "` first)");
    return p;
  }

  void record(const std::string& name) const {
    json m = manifest();
    m["artifacts"][name] = sha256_file(path(name).string());
    write_json(path(kManifest), m);
  }

  [[nodiscard]] json manifest() const {
    const fs::path p = path(kManifest);
    if (!fs::exists(p)) return {{"artifacts", json::object()}};
    return read_json_file(p.string());
  }

  /// Hash check against the manifest; returns the current hash.
  [[nodiscard]] std::string verify(const std::string& name) const {
    const std::string hash = sha256_file(path(name).string());
    const json m = manifest();
    if (!m["artifacts"].contains(name)) throw ValidationError(name + " is not listed in " + path(kManifest).string());
    if (m["artifacts"][name] != hash) throw ValidationError(name + " does not match its manifest hash");
    return hash;
  }

  void write_metrics(const std::string& name, const json& metrics) const { write_json(path(name), metrics); }

  /// Hash of everything that shapes results; the output location is excluded.
  [[nodiscard]] std::string config_hash() const {
    json j = run_config_to_json(cfg_);
    j.erase("out");
    return sha256_hex(j.dump());
  }

 private:
  RunConfig cfg_;
  fs::path dir_;
};

// ---- commands ---------------------------------------------------------------------------------

inline json cmd_scene_validate(const std::string& path, std::uint64_t seed, std::size_t samples = 200000) {
  const Scene scene = load_scene(path);
  Rng rng = command_rng(seed, "scene-validate");
  const auto& b = scene.bounds();
  return {{"obstacles", scene.obstacles().size()},
          {"bounds", {b.xmin, b.ymin, b.xmax, b.ymax}},
          {"free_space_fraction", free_space_fraction(scene, samples, rng)},
          {"samples", samples}};
}

inline json cmd_collect(const Workspace& ws) {
  const auto& cfg = ws.config();
  NavEnv env(load_scene(cfg.scene), cfg.env);
  Rng rng = command_rng(cfg.seed, "collect");
  const auto ds = vision::collect_dataset(env, cfg.vision.images, rng, {cfg.vision.rollout_steps});
  vision::save_dataset(ws.path(kDataset).string(), ds);
  ws.record(kDataset);
  double sum = 0.0;
  for (float d : ds.depth) sum += d;
  const json m = {{"count", ds.count},
                  {"width", ds.width},
                  {"height", ds.height},
                  {"depth_mean", sum / static_cast<double>(ds.depth.size())},
                  {"depth_min", *std::min_element(ds.depth.begin(), ds.depth.end())},
                  {"depth_max", *std::max_element(ds.depth.begin(), ds.depth.end())},
                  {"sha256", sha256_file(ws.path(kDataset).string())}};
  ws.write_metrics("collect_metrics.json", m);
  return m;
}

inline json cmd_train_vision(const Workspace& ws, std::ostream& log = std::cerr) {
  const auto& cfg = ws.config();
  const auto ds = vision::load_dataset(ws.require(kDataset, "collect").string());
  if (ds.width != cfg.env.camera.width || ds.height != cfg.env.camera.height) {
    throw ValidationError("dataset resolution " + std::to_string(ds.width) + "x" + std::to_string(ds.height) +
                          " does not match the configured camera");
  }
  Rng rng = command_rng(cfg.seed, "train-vision");
  json epochs = json::array();
  const auto result = vision::train_autoencoder(ds, cfg.vision, rng, [&](const vision::EpochMetrics& m) {
    epochs.push_back(vision::epoch_metrics_to_json(m));
    log << "epoch " << m.epoch << " train " << m.train_mse << " test " << m.test_mse << std::endl;
  });
  vision::save_vision_model(ws.path(kVisionModel).string(), result.model);
  ws.record(kVisionModel);
  const double train = result.metrics.back().train_mse;
  const double test = result.metrics.back().test_mse;
  const json m = {{"epochs", epochs},
                  {"train_count", result.train_count},
                  {"test_count", result.test_count},
                  {"baseline_train_mse", result.baseline_train_mse},
                  {"baseline_test_mse", result.baseline_test_mse},
                  {"final_train_mse", train},
                  {"final_test_mse", test},
                  {"train_below_baseline_third", train < result.baseline_train_mse / 3.0},
                  {"test_within_3x_train", test <= 3.0 * train}};
  ws.write_metrics("vision_metrics.json", m);
  return m;
}

/// Environment whose observations carry the trained encoder's latent.
inline NavEnv make_encoded_env(const Workspace& ws) {
  const auto& cfg = ws.config();
  const auto model = vision::load_vision_model(ws.require(kVisionModel, "train-vision").string());
  if (model.width() != cfg.env.camera.width || model.height() != cfg.env.camera.height) {
    throw ValidationError("encoder resolution does not match the configured camera");
  }
  return NavEnv(load_scene(cfg.scene), cfg.env, vision::make_latent_encoder(model));
}

inline json cmd_train_policy(const Workspace& ws, std::optional<int> steps = std::nullopt,
                             std::ostream& log = std::cerr) {
  RunConfig cfg = ws.config();
  if (steps) cfg.agent.total_steps = *steps;
  cfg.agent.validate();
  NavEnv env = make_encoded_env(ws);
  const std::string encoder_hash = ws.verify(kVisionModel);
  Rng rng = command_rng(cfg.seed, "train-policy");
  rl::Agent agent(cfg.agent, rng);
  const fs::path ckpt_dir = ws.path("checkpoints");
  fs::create_directories(ckpt_dir);
  std::ofstream train_log(ws.path("train_log.jsonl"));
  if (!train_log) throw RuntimeFailure("cannot write " + ws.path("train_log.jsonl").string());
  json evals = json::array();
  rl::TrainHooks hooks;
  hooks.log = [&](const json& j) {
    train_log << j.dump() << '\n';
    if (j["kind"] == "eval") {
      evals.push_back({{"step", j["step"]}, {"mean_survival", j["mean_survival"]}});
      log << "step " << j["step"] << " eval mean survival " << j["mean_survival"] << " s" << std::endl;
    }
  };
  hooks.checkpoint = [&](long long step, const rl::Agent& a) {
    rl::save_checkpoint((ckpt_dir / ("policy_" + std::to_string(step) + ".json")).string(),
                        {step, ws.config_hash(), encoder_hash, a.actor()});
  };
  const auto summary = rl::train_agent(agent, env, rng, command_seed(cfg.seed, "train-eval"), hooks);
  train_log.flush();
  rl::save_checkpoint(ws.path(kPolicy).string(), {summary.steps, ws.config_hash(), encoder_hash, agent.actor()});
  ws.record(kPolicy);
  const json m = {{"steps", summary.steps},
                  {"episodes", summary.episodes},
                  {"buffer_size", summary.buffer_size},
                  {"evaluations", evals},
                  {"policy_sha256", sha256_file(ws.path(kPolicy).string())}};
  ws.write_metrics("policy_metrics.json", m);
  return m;
}

/// Loads the policy and checks it was trained against the encoder on disk.
inline rl::Checkpoint load_compatible_policy(const Workspace& ws) {
  ws.require(kVisionModel, "train-vision");
  const std::string encoder_hash = ws.verify(kVisionModel);
  ws.require(kPolicy, "train-policy");
  (void)ws.verify(kPolicy);
  auto ckpt = rl::load_checkpoint(ws.path(kPolicy).string());
  if (ckpt.encoder_hash != encoder_hash) {
    throw ValidationError("policy was trained with a different encoder (hash mismatch)");
  }
  return ckpt;
}

inline json cmd_eval_survival(const Workspace& ws, std::optional<int> trials = std::nullopt) {
  const auto& cfg = ws.config();
  const int n = trials.value_or(cfg.eval.trials);
  NavEnv env = make_encoded_env(ws);
  const auto ckpt = load_compatible_policy(ws);
  const std::uint64_t seed = command_seed(cfg.seed, "eval-survival");
  const auto policy = rl::evaluate_survival(rl::deterministic_policy(ckpt.actor), env, n, seed);
  const auto baseline = rl::evaluate_survival(rl::zero_policy(), env, n, seed);
  const double ratio = baseline.mean > 0.0 ? policy.mean / baseline.mean : 0.0;
  const json m = {{"trials", n},
                  {"user_command", {1.0, 0.0}},
                  {"mean_policy", policy.mean},
                  {"mean_baseline", baseline.mean},
                  {"median_policy", policy.median},
                  {"median_baseline", baseline.median},
                  {"ratio", ratio},
                  {"ratio_at_least_2", ratio >= 2.0},
                  {"policy", policy.to_json()},
                  {"baseline", baseline.to_json()}};
  ws.write_metrics("survival.json", m);
  return m;
}

inline json cmd_correction_field(const Workspace& ws, std::optional<int> steps = std::nullopt,
                                 std::optional<double> threshold = std::nullopt) {
  const auto& cfg = ws.config();
  const int n = steps.value_or(cfg.eval.correction_steps);
  const double tau = threshold.value_or(cfg.eval.threshold);
  if (n < 1 || tau < 0.0) throw ValidationError("correction-field: steps >= 1 and threshold >= 0 required");
  NavEnv env = make_encoded_env(ws);
  const auto ckpt = load_compatible_policy(ws);
  Rng rng = command_rng(cfg.seed, "correction-field");
  std::vector<double> visited;
  const auto pts = rl::correction_field(rl::deterministic_policy(ckpt.actor), env, n, tau, rng, &visited);
  write_json(ws.path("correction_field.json"), rl::correction_field_to_json(pts));
  const double radius = cfg.eval.proximity_radius;
  const auto near_visits = std::count_if(visited.begin(), visited.end(), [&](double d) { return d <= radius; });
  const double fraction = rl::fraction_within(pts, radius);
  const json m = {{"steps", n},
                  {"threshold", tau},
                  {"radius", radius},
                  {"recorded", pts.size()},
                  {"fraction_within_radius", fraction},
                  {"visited_fraction_within_radius", static_cast<double>(near_visits) / static_cast<double>(n)},
                  {"above_70_percent", !pts.empty() && fraction > 0.7}};
  ws.write_metrics("correction_metrics.json", m);
  return m;
}

inline json cmd_mpc_bench(const Workspace& ws) {
  const auto report = mpc::run_mpc_bench(ws.config().mpc);
  const json m = report.to_json();
  ws.write_metrics("mpc_bench.json", m);
  return m;
}

/// Teleop session wired to the verified encoder and policy of a workspace.
inline std::unique_ptr<teleop::TeleopSession> make_teleop_session(const Workspace& ws, bool kinematic) {
  const auto& cfg = ws.config();
  const auto ckpt = load_compatible_policy(ws);
  const auto model = vision::load_vision_model(ws.path(kVisionModel).string());
  teleop::SessionOptions opt;
  opt.kinematic = kinematic;
  opt.locomotion_rate_hz = cfg.mpc.sim_rate_hz;
  opt.ticks_per_policy = static_cast<int>(std::lround(cfg.mpc.sim_rate_hz / cfg.env.policy_rate_hz));
  return std::make_unique<teleop::TeleopSession>(load_scene(cfg.scene), cfg.env, cfg.mpc,
                                                 rl::deterministic_policy(ckpt.actor),
                                                 vision::make_latent_encoder(model), command_seed(cfg.seed, "teleop"),
                                                 opt);
}

}  // namespace deskavoid::pipeline
