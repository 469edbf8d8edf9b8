#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "deskavoid/augment.hpp"
#include "deskavoid/config.hpp"
#include "deskavoid/geometry.hpp"
#include "deskavoid/render.hpp"

namespace deskavoid {

inline constexpr int kLatentDim = 32;
inline constexpr int kObsDim = 4 + kLatentDim;
inline constexpr double kMaxPitch = kPi / 4.0;

/// Normalized (v_x, v_theta) pair, used for both the user joystick and the policy correction.
using Command = std::array<double, 2>;

struct Velocity {
  double vx = 0.0;      // m/s
  double vtheta = 0.0;  // rad/s
};

struct AgentState {
  Pose pose;
  Velocity velocity;
  int step_count = 0;
};

struct EnvConfig {
  double dt = 0.1;
  double policy_rate_hz = 10.0;
  double vx_max = 1.0;
  double vtheta_max = 1.0;
  double a_max = 2.0;           // m/s^2
  double alpha_max = 4.0;       // rad/s^2
  bool limit_yaw_rate = true;
  double velocity_noise_sigma = 0.02;
  double yaw_rate_noise_sigma = 0.02;
  double pitch_noise_sigma = 0.05;
  double collision_margin = 0.02;
  double spawn_clearance = 0.5;
  int max_episode_steps = 200;
  double footprint_radius = 0.2;
  double crash_reward = -100.0;
  bool observe_commanded_velocity = false;
  int max_spawn_rejections = 10000;
  CameraModel camera;
  AugmentRanges augment;

  void validate() const {
    const auto positive = [](double v, const char* name) {
      if (!(v > 0.0) || !std::isfinite(v)) throw ValidationError(std::string("env: ") + name + " must be positive");
    };
    positive(dt, "dt");
    positive(policy_rate_hz, "policy_rate_hz");
    positive(vx_max, "vx_max");
    positive(vtheta_max, "vtheta_max");
    positive(a_max, "a_max");
    positive(alpha_max, "alpha_max");
    positive(collision_margin, "collision_margin");
    positive(spawn_clearance, "spawn_clearance");
    positive(footprint_radius, "footprint_radius");
    if (velocity_noise_sigma < 0.0 || yaw_rate_noise_sigma < 0.0 || pitch_noise_sigma < 0.0) {
      throw ValidationError("env: noise sigmas must be non-negative");
    }
    if (max_episode_steps < 1) throw ValidationError("env: max_episode_steps must be at least 1");
    if (!(crash_reward < 0.0)) throw ValidationError("env: crash_reward must be negative");
    if (std::abs(dt * policy_rate_hz - 1.0) > 1e-9) throw ValidationError("env: dt * policy_rate_hz must equal 1");
    if (max_spawn_rejections < 1) throw ValidationError("env: max_spawn_rejections must be at least 1");
    camera.validate();
  }
};

inline json camera_to_json(const CameraModel& c, bool annotate) {
  const auto f = [&](const json& v) { return annotate ? annotated(v, Source::default_value) : v; };
  return {{"width", f(c.width)},
          {"height", f(c.height)},
          {"horizontal_fov", f(c.horizontal_fov)},
          {"mount_height", f(c.mount_height)},
          {"base_pitch_offset", f(c.base_pitch_offset)}};
}

inline CameraModel camera_from_json(const json& j) {
  check_keys(j, {"width", "height", "horizontal_fov", "mount_height", "base_pitch_offset"}, "camera");
  CameraModel c;
  read_leaf(j, "width", c.width);
  read_leaf(j, "height", c.height);
  read_leaf(j, "horizontal_fov", c.horizontal_fov);
  read_leaf(j, "mount_height", c.mount_height);
  read_leaf(j, "base_pitch_offset", c.base_pitch_offset);
  c.validate();
  return c;
}

inline json augment_to_json(const AugmentRanges& a, bool annotate) {
  const auto f = [&](const json& v) { return annotate ? annotated(v, Source::default_value) : v; };
  return {{"enabled", f(a.enabled)},
          {"brightness", f(a.brightness)},
          {"contrast_min", f(a.contrast_min)},
          {"contrast_max", f(a.contrast_max)},
          {"hue", f(a.hue)},
          {"saturation_min", f(a.saturation_min)},
          {"saturation_max", f(a.saturation_max)},
          {"noise_sigma_max", f(a.noise_sigma_max)}};
}

inline AugmentRanges augment_from_json(const json& j) {
  check_keys(j,
             {"enabled", "brightness", "contrast_min", "contrast_max", "hue", "saturation_min", "saturation_max",
              "noise_sigma_max"},
             "augment");
  AugmentRanges a;
  read_leaf(j, "enabled", a.enabled);
  read_leaf(j, "brightness", a.brightness);
  read_leaf(j, "contrast_min", a.contrast_min);
  read_leaf(j, "contrast_max", a.contrast_max);
  read_leaf(j, "hue", a.hue);
  read_leaf(j, "saturation_min", a.saturation_min);
  read_leaf(j, "saturation_max", a.saturation_max);
  read_leaf(j, "noise_sigma_max", a.noise_sigma_max);
  return a;
}

inline json env_config_to_json(const EnvConfig& c, bool annotate = false) {
  const auto f = [&](const json& v, Source s = Source::default_value) { return annotate ? annotated(v, s) : v; };
  return {{"dt", f(c.dt, Source::paper)},
          {"policy_rate_hz", f(c.policy_rate_hz, Source::paper)},
          {"vx_max", f(c.vx_max)},
          {"vtheta_max", f(c.vtheta_max)},
          {"a_max", f(c.a_max)},
          {"alpha_max", f(c.alpha_max)},
          {"limit_yaw_rate", f(c.limit_yaw_rate)},
          {"velocity_noise_sigma", f(c.velocity_noise_sigma)},
          {"yaw_rate_noise_sigma", f(c.yaw_rate_noise_sigma)},
          {"pitch_noise_sigma", f(c.pitch_noise_sigma)},
          {"collision_margin", f(c.collision_margin, Source::paper)},
          {"spawn_clearance", f(c.spawn_clearance, Source::paper)},
          {"max_episode_steps", f(c.max_episode_steps, Source::paper)},
          {"footprint_radius", f(c.footprint_radius)},
          {"crash_reward", f(c.crash_reward, Source::paper)},
          {"observe_commanded_velocity", f(c.observe_commanded_velocity)},
          {"max_spawn_rejections", f(c.max_spawn_rejections)},
          {"camera", camera_to_json(c.camera, annotate)},
          {"augment", augment_to_json(c.augment, annotate)}};
}

inline EnvConfig env_config_from_json(const json& j) {
  check_keys(j,
             {"dt", "policy_rate_hz", "vx_max", "vtheta_max", "a_max", "alpha_max", "limit_yaw_rate",
              "velocity_noise_sigma", "yaw_rate_noise_sigma", "pitch_noise_sigma", "collision_margin",
              "spawn_clearance", "max_episode_steps", "footprint_radius", "crash_reward",
              "observe_commanded_velocity", "max_spawn_rejections", "camera", "augment"},
             "env");
  EnvConfig c;
  read_leaf(j, "dt", c.dt);
  read_leaf(j, "policy_rate_hz", c.policy_rate_hz);
  read_leaf(j, "vx_max", c.vx_max);
  read_leaf(j, "vtheta_max", c.vtheta_max);
  read_leaf(j, "a_max", c.a_max);
  read_leaf(j, "alpha_max", c.alpha_max);
  read_leaf(j, "limit_yaw_rate", c.limit_yaw_rate);
  read_leaf(j, "velocity_noise_sigma", c.velocity_noise_sigma);
  read_leaf(j, "yaw_rate_noise_sigma", c.yaw_rate_noise_sigma);
  read_leaf(j, "pitch_noise_sigma", c.pitch_noise_sigma);
  read_leaf(j, "collision_margin", c.collision_margin);
  read_leaf(j, "spawn_clearance", c.spawn_clearance);
  read_leaf(j, "max_episode_steps", c.max_episode_steps);
  read_leaf(j, "footprint_radius", c.footprint_radius);
  read_leaf(j, "crash_reward", c.crash_reward);
  read_leaf(j, "observe_commanded_velocity", c.observe_commanded_velocity);
  read_leaf(j, "max_spawn_rejections", c.max_spawn_rejections);
  if (j.contains("camera")) c.camera = camera_from_json(j.at("camera"));
  if (j.contains("augment")) c.augment = augment_from_json(j.at("augment"));
  c.validate();
  return c;
}

/// 1 - |a|_1 when the next state is collision-free, crash_reward otherwise.
inline double compute_reward(const Command& action, bool collided, double crash_reward = -100.0) {
  if (collided) return crash_reward;
  return 1.0 - (std::abs(action[0]) + std::abs(action[1]));
}

/// Clips the change toward `target` to a_max*dt, adds noise, then clips to +-v_max.
inline double apply_rate_limit(double v_prev, double v_target, double a_max, double dt, double sigma, double v_max,
                               Rng& rng) {
  const double step = a_max * dt;
  const double v = std::clamp(v_target, v_prev - step, v_prev + step) + gaussian(rng, sigma);
  return std::clamp(v, -v_max, v_max);
}

/// Explicit update: position moves along the heading held at the start of the step.
inline AgentState kinematic_update(const AgentState& s, const Velocity& v, double dt) {
  AgentState out = s;
  out.pose.x += v.vx * std::cos(s.pose.yaw) * dt;
  out.pose.y += v.vx * std::sin(s.pose.yaw) * dt;
  out.pose.yaw = wrap_angle(s.pose.yaw + v.vtheta * dt);
  out.velocity = v;
  return out;
}

inline Command clamp_command(const Command& c) {
  return {std::clamp(c[0], -1.0, 1.0), std::clamp(c[1], -1.0, 1.0)};
}

/// Corrected joystick: the sum is clamped in normalized space before scaling.
inline Command corrected_command(const Command& user, const Command& action) {
  return clamp_command({user[0] + action[0], user[1] + action[1]});
}

/// Maps an RGB frame to a latent of kLatentDim floats.
using LatentEncoder = std::function<std::vector<float>(const Image& rgb)>;

using Observation = std::vector<float>;

struct StepResult {
  Observation obs;
  double reward = 0.0;
  bool done = false;
  bool collided = false;
  double clearance = 0.0;
};

struct TraceRecord {
  int step = 0;
  Pose pose;
  Command user{};
  Command action{};
  double reward = 0.0;
  double clearance = 0.0;
  bool done = false;
};

inline json trace_record_to_json(const TraceRecord& r) {
  return {{"step", r.step},
          {"pose", {{"x", r.pose.x}, {"y", r.pose.y}, {"yaw", r.pose.yaw}, {"pitch", r.pose.pitch}}},
          {"user_cmd", r.user},
          {"action", r.action},
          {"reward", r.reward},
          {"clearance", r.clearance},
          {"done", r.done}};
}

inline void write_trace_jsonl(const std::string& path, const std::vector<TraceRecord>& records) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write " + path);
  for (const auto& r : records) out << trace_record_to_json(r).dump() << '\n';
}

/// Kinematic navigation environment over a fixed scene. Without an encoder the latent part of
/// the observation is zero and no frame is rendered.
class NavEnv {
 public:
  NavEnv(Scene scene, EnvConfig config, LatentEncoder encoder = {})
      : scene_(std::move(scene)), config_(std::move(config)), encoder_(std::move(encoder)) {
    config_.validate();
  }

  [[nodiscard]] const Scene& scene() const { return scene_; }
  [[nodiscard]] const EnvConfig& config() const { return config_; }
  [[nodiscard]] const AgentState& state() const { return state_; }
  [[nodiscard]] bool done() const { return done_; }
  [[nodiscard]] const Command& user_command() const { return user_; }
  [[nodiscard]] const std::vector<TraceRecord>& trace() const { return trace_; }
  void set_tracing(bool on) { tracing_ = on; }

  [[nodiscard]] double clearance(const Pose& pose) const {
    return scene_.min_clearance(Disc{pose.position(), config_.footprint_radius});
  }

  /// Rejection-samples a spawn pose whose footprint keeps spawn_clearance from everything.
  AgentState sample_spawn(Rng& rng) const {
    const Bounds& b = scene_.bounds();
    const double grown = config_.footprint_radius + config_.spawn_clearance;
    for (int tries = 0; tries < config_.max_spawn_rejections; ++tries) {
      const Vec2 p{uniform(rng, b.xmin, b.xmax), uniform(rng, b.ymin, b.ymax)};
      if (scene_.min_clearance(Disc{p, grown}) > 0.0) {
        AgentState s;
        s.pose = {p.x, p.y, wrap_angle(uniform(rng, -kPi, kPi)), 0.0};
        return s;
      }
    }
    throw RuntimeFailure("reset: " + std::to_string(config_.max_spawn_rejections) +
                         " consecutive spawn rejections, scene too cluttered");
  }

  Observation reset(Rng& rng, const Command& user_cmd = {1.0, 0.0}) {
    return reset_to(sample_spawn(rng), rng, user_cmd);
  }

  /// Starts an episode from a given state (tests, evaluation fixtures).
  Observation reset_to(const AgentState& state, Rng& rng, const Command& user_cmd = {1.0, 0.0}) {
    state_ = state;
    state_.step_count = 0;
    user_ = clamp_command(user_cmd);
    last_corrected_ = {0.0, 0.0};
    done_ = false;
    trace_.clear();
    return observe(rng);
  }

  void set_user_command(const Command& user_cmd) { user_ = clamp_command(user_cmd); }

  StepResult step(const Command& action, Rng& rng) {
    if (done_) throw RuntimeFailure("step called on a finished episode; call reset first");
    for (double a : action) {
      if (!std::isfinite(a)) throw ValidationError("step: action is not finite");
    }
    const Command act = clamp_command(action);
    last_corrected_ = corrected_command(user_, act);
    const Velocity target{last_corrected_[0] * config_.vx_max, last_corrected_[1] * config_.vtheta_max};
    const Velocity prev = state_.velocity;
    Velocity v;
    v.vx = apply_rate_limit(prev.vx, target.vx, config_.a_max, config_.dt, config_.velocity_noise_sigma,
                            config_.vx_max, rng);
    if (config_.limit_yaw_rate) {
      v.vtheta = apply_rate_limit(prev.vtheta, target.vtheta, config_.alpha_max, config_.dt,
                                  config_.yaw_rate_noise_sigma, config_.vtheta_max, rng);
    } else {
      v.vtheta = std::clamp(target.vtheta + gaussian(rng, config_.yaw_rate_noise_sigma), -config_.vtheta_max,
                            config_.vtheta_max);
    }
    const int steps = state_.step_count + 1;
    state_ = kinematic_update(state_, v, config_.dt);
    state_.step_count = steps;
    state_.pose.pitch = std::clamp(gaussian(rng, config_.pitch_noise_sigma), -kMaxPitch, kMaxPitch);

    StepResult r;
    r.clearance = clearance(state_.pose);
    r.collided = r.clearance < config_.collision_margin;
    r.done = r.collided || state_.step_count >= config_.max_episode_steps;
    r.reward = compute_reward(act, r.collided, config_.crash_reward);
    done_ = r.done;
    r.obs = observe(rng);
    if (tracing_) trace_.push_back({state_.step_count, state_.pose, user_, act, r.reward, r.clearance, r.done});
    return r;
  }

  /// Renders the current camera view. The render position is pulled inside the room so a
  /// terminal state that crossed a wall still has a frame.
  [[nodiscard]] Frame render() const {
    const Bounds& b = scene_.bounds();
    Pose p = state_.pose;
    const double eps = 1e-6;
    p.x = std::clamp(p.x, b.xmin + eps, b.xmax - eps);
    p.y = std::clamp(p.y, b.ymin + eps, b.ymax - eps);
    return render_frame(scene_, p, config_.camera);
  }

 private:
  Observation observe(Rng& rng) const {
    Observation obs(kObsDim, 0.0f);
    obs[0] = static_cast<float>(user_[0]);
    obs[1] = static_cast<float>(user_[1]);
    if (config_.observe_commanded_velocity) {
      obs[2] = static_cast<float>(last_corrected_[0]);
      obs[3] = static_cast<float>(last_corrected_[1]);
    } else {
      obs[2] = static_cast<float>(state_.velocity.vx / config_.vx_max);
      obs[3] = static_cast<float>(state_.velocity.vtheta / config_.vtheta_max);
    }
    if (encoder_) {
      const Image rgb = augment(render().rgb, config_.augment.sample(rng), rng);
      const std::vector<float> z = encoder_(rgb);
      if (z.size() != static_cast<std::size_t>(kLatentDim)) {
        throw RuntimeFailure("encoder returned " + std::to_string(z.size()) + " values, expected " +
                             std::to_string(kLatentDim));
      }
      std::copy(z.begin(), z.end(), obs.begin() + 4);
    }
    return obs;
  }

  Scene scene_;
  EnvConfig config_;
  LatentEncoder encoder_;
  AgentState state_;
  Command user_{1.0, 0.0};
  Command last_corrected_{0.0, 0.0};
  bool done_ = true;
  bool tracing_ = false;
  std::vector<TraceRecord> trace_;
};

}  // namespace deskavoid
