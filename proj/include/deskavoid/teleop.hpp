#pragma once

#include <deque>
#include <optional>
#include <string>
#include <variant>

#include "deskavoid/codec.hpp"
#include "deskavoid/mpc.hpp"
#include "deskavoid/nav_env.hpp"
#include "deskavoid/rl_agent.hpp"

namespace deskavoid::teleop {

inline constexpr int kThumbSize = 32;
inline constexpr std::size_t kTrailLength = 200;
inline constexpr double kAutoResetSeconds = 2.0;

// ---- protocol ----------------------------------------------------------------------------------

struct CommandMessage {
  double vx = 0.0;
  double vtheta = 0.0;
};
struct ResetMessage {};
using ClientMessage = std::variant<CommandMessage, ResetMessage>;

/// Parses a client text frame. Command values are clamped to [-1, 1].
inline ClientMessage parse_client_message(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception&) {
    throw ValidationError("client message is not JSON");
  }
  if (!j.is_object() || !j.contains("type") || !j["type"].is_string()) {
    throw ValidationError("client message needs a string 'type'");
  }
  const std::string type = j["type"];
  if (type == "reset") return ResetMessage{};
  if (type != "command") throw ValidationError("unknown client message type '" + type + "'");
  const auto num = [&](const char* key) {
    if (!j.contains(key) || !j[key].is_number()) throw ValidationError(std::string("command needs numeric '") + key + "'");
    const double v = j[key];
    if (!std::isfinite(v)) throw ValidationError(std::string("command '") + key + "' is not finite");
    return std::clamp(v, -1.0, 1.0);
  };
  return CommandMessage{num("vx"), num("vtheta")};
}

/// 32x32 grayscale thumbnail, byte = 255 * depth / max_range (clamped), base64 encoded.
inline std::string depth_thumbnail_b64(const Image& depth, double max_range) {
  if (depth.channels != 1 || depth.width < 1 || depth.height < 1) {
    throw ValidationError("depth thumbnail needs a single-channel image");
  }
  std::vector<std::uint8_t> bytes(kThumbSize * kThumbSize);
  for (int ty = 0; ty < kThumbSize; ++ty) {
    const int r0 = ty * depth.height / kThumbSize;
    const int r1 = std::max(r0 + 1, (ty + 1) * depth.height / kThumbSize);
    for (int tx = 0; tx < kThumbSize; ++tx) {
      const int c0 = tx * depth.width / kThumbSize;
      const int c1 = std::max(c0 + 1, (tx + 1) * depth.width / kThumbSize);
      double sum = 0.0;
      for (int r = r0; r < r1; ++r) {
        for (int c = c0; c < c1; ++c) sum += depth.at(r, c);
      }
      const double mean = sum / ((r1 - r0) * (c1 - c0));
      bytes[ty * kThumbSize + tx] = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(mean / max_range, 0.0, 1.0)));
    }
  }
  return base64_encode(bytes);
}

struct StateSnapshot {
  double t = 0.0;
  Pose pose;
  Velocity velocity;
  Command user_cmd{};
  Command correction{};
  double min_clearance = 0.0;
  bool collided = false;
  std::string depth_b64;
  std::vector<Vec2> trail;
};

inline std::string encode_state_message(const StateSnapshot& s) {
  json trail = json::array();
  for (const auto& p : s.trail) trail.push_back({p.x, p.y});
  const json j = {{"type", "state"},
                  {"t", s.t},
                  {"pose", {{"x", s.pose.x}, {"y", s.pose.y}, {"yaw", s.pose.yaw}, {"pitch", s.pose.pitch}}},
                  {"velocity", {{"vx", s.velocity.vx}, {"vtheta", s.velocity.vtheta}}},
                  {"user_cmd", {s.user_cmd[0], s.user_cmd[1]}},
                  {"correction", {s.correction[0], s.correction[1]}},
                  {"min_clearance", s.min_clearance},
                  {"collided", s.collided},
                  {"depth_b64", s.depth_b64},
                  {"trail", trail}};
  return j.dump();
}

// ---- session -----------------------------------------------------------------------------------

struct SessionOptions {
  bool kinematic = false;  // training kinematics instead of MPC + pendulum plant
  double locomotion_rate_hz = 100.0;
  int ticks_per_policy = 10;
};

/// Simulation state of one teleoperated robot. Single-threaded; the server feeds it commands
/// and reads snapshots by message passing.
class TeleopSession {
 public:
  TeleopSession(Scene scene, EnvConfig env, mpc::MpcConfig mpc_cfg, rl::Policy policy, LatentEncoder encoder,
                std::uint64_t seed, SessionOptions opt = {})
      : env_(std::move(scene), env),
        mpc_cfg_(std::move(mpc_cfg)),
        controller_(mpc_cfg_),
        policy_(std::move(policy)),
        encoder_(std::move(encoder)),
        opt_(opt),
        rng_(seed) {
    if (opt_.ticks_per_policy < 1 || !(opt_.locomotion_rate_hz > 0.0)) {
      throw ValidationError("teleop: bad tick configuration");
    }
    reset();
  }

  [[nodiscard]] double tick_seconds() const { return 1.0 / opt_.locomotion_rate_hz; }
  [[nodiscard]] long long ticks() const { return ticks_; }
  [[nodiscard]] long long policy_ticks() const { return policy_ticks_; }
  [[nodiscard]] const Pose& pose() const { return pose_; }
  [[nodiscard]] const Command& user_command() const { return user_; }
  [[nodiscard]] const Command& correction() const { return correction_; }
  [[nodiscard]] bool collided() const { return collided_; }
  [[nodiscard]] const Scene& scene() const { return env_.scene(); }

  void set_user_command(const Command& c) { user_ = clamp_command(c); }
  /// The controlling client went away: the held command drops to zero.
  void client_disconnected() { user_ = {0.0, 0.0}; }

  void reset() {
    const AgentState s = env_.sample_spawn(rng_);
    reset_to(s.pose);
  }
  [[nodiscard]] const Command& corrected() const { return corrected_; }
  [[nodiscard]] const mpc::WheelSpeeds& wheel_speeds() const { return wheels_; }

  void reset_to(const Pose& p) {
    pose_ = p;
    pose_.pitch = 0.0;
    wip_ = mpc::Vec4::Zero();
    velocity_ = {};
    wheels_ = {};
    yaw_rate_ = 0.0;
    correction_ = {0.0, 0.0};
    corrected_ = {0.0, 0.0};
    collided_ = false;
    collision_time_.reset();
    controller_.reset();
    trail_.clear();
    trail_.push_back(pose_.position());
    refresh_depth();
  }

  /// Advances one locomotion tick. Returns true when this tick was a policy tick.
  bool tick() {
    const double h = tick_seconds();
    bool policy_tick = false;
    if (collided_) {
      if (t_ - *collision_time_ >= kAutoResetSeconds - 1e-9) reset();
    } else {
      if (ticks_ % opt_.ticks_per_policy == 0) {
        policy_step();
        policy_tick = true;
      }
      advance(h);
    }
    t_ += h;
    ++ticks_;
    return policy_tick;
  }

  [[nodiscard]] StateSnapshot snapshot() const {
    StateSnapshot s;
    s.t = t_;
    s.pose = pose_;
    s.velocity = velocity_;
    s.user_cmd = user_;
    s.correction = correction_;
    s.min_clearance = env_.clearance(pose_);
    s.collided = collided_;
    s.depth_b64 = depth_b64_;
    s.trail.assign(trail_.begin(), trail_.end());
    return s;
  }

  /// Observation in the training layout: user command, realized velocity, latent.
  [[nodiscard]] Observation observe() const {
    const EnvConfig& c = env_.config();
    Observation obs(kObsDim, 0.0f);
    obs[0] = static_cast<float>(user_[0]);
    obs[1] = static_cast<float>(user_[1]);
    if (c.observe_commanded_velocity) {
      obs[2] = static_cast<float>(corrected_[0]);
      obs[3] = static_cast<float>(corrected_[1]);
    } else {
      obs[2] = static_cast<float>(velocity_.vx / c.vx_max);
      obs[3] = static_cast<float>(velocity_.vtheta / c.vtheta_max);
    }
    if (encoder_) {
      const auto z = encoder_(frame_.rgb);
      std::copy(z.begin(), z.end(), obs.begin() + 4);
    }
    return obs;
  }

 private:
  void policy_step() {
    refresh_depth();
    correction_ = policy_ ? policy_(observe()) : Command{0.0, 0.0};
    corrected_ = corrected_command(user_, correction_);
    ++policy_ticks_;
  }

  void advance(double h) {
    const EnvConfig& c = env_.config();
    const double v_target = corrected_[0] * c.vx_max;
    const double w_target = corrected_[1] * c.vtheta_max;
    const double max_dw = c.alpha_max * h;
    yaw_rate_ = c.limit_yaw_rate ? std::clamp(w_target, yaw_rate_ - max_dw, yaw_rate_ + max_dw) : w_target;
    if (opt_.kinematic) {
      const double max_dv = c.a_max * h;
      velocity_.vx = std::clamp(v_target, velocity_.vx - max_dv, velocity_.vx + max_dv);
      pose_.pitch = 0.0;
    } else {
      double u = 0.0;
      try {
        u = controller_.step(wip_, v_target).solution.u(0);
      } catch (const RuntimeFailure&) {
        mark_collision();  // solver failure is treated like a fall
        return;
      }
      wip_ = mpc::rk4_step(wip_, u, mpc_cfg_.g, mpc_cfg_.l, h);
      velocity_.vx = wip_(mpc::kRDot);
      pose_.pitch = std::clamp(wip_(mpc::kPhi), -kMaxPitch, kMaxPitch);
      if (std::abs(wip_(mpc::kPhi)) > kPi / 2.0) mark_collision();
    }
    velocity_.vtheta = yaw_rate_;
    wheels_ = mpc::differential_drive(velocity_.vx, yaw_rate_, mpc_cfg_.wheel_radius, mpc_cfg_.track_width);
    AgentState st{pose_, velocity_, 0};
    st = kinematic_update(st, velocity_, h);
    st.pose.pitch = pose_.pitch;
    pose_ = st.pose;
    trail_.push_back(pose_.position());
    while (trail_.size() > kTrailLength) trail_.pop_front();
    if (env_.clearance(pose_) < c.collision_margin) mark_collision();
  }

  void mark_collision() {
    if (collided_) return;
    collided_ = true;
    collision_time_ = t_ + tick_seconds();
    velocity_ = {};
    yaw_rate_ = 0.0;
  }

  void refresh_depth() {
    const Bounds& b = env_.scene().bounds();
    Pose p = pose_;
    p.x = std::clamp(p.x, b.xmin + 1e-6, b.xmax - 1e-6);
    p.y = std::clamp(p.y, b.ymin + 1e-6, b.ymax - 1e-6);
    frame_ = render_frame(env_.scene(), p, env_.config().camera);
    depth_b64_ = depth_thumbnail_b64(frame_.depth, env_.scene().max_range());
  }

  NavEnv env_;
  mpc::MpcConfig mpc_cfg_;
  mpc::MpcController controller_;
  rl::Policy policy_;
  LatentEncoder encoder_;
  SessionOptions opt_;
  Rng rng_;

  Pose pose_;
  mpc::Vec4 wip_ = mpc::Vec4::Zero();
  Velocity velocity_;
  mpc::WheelSpeeds wheels_;
  double yaw_rate_ = 0.0;
  Command user_{0.0, 0.0};
  Command correction_{0.0, 0.0};
  Command corrected_{0.0, 0.0};
  bool collided_ = false;
  std::optional<double> collision_time_;
  double t_ = 0.0;
  long long ticks_ = 0;
  long long policy_ticks_ = 0;
  Frame frame_;
  std::string depth_b64_;
  std::deque<Vec2> trail_;
};

}  // namespace deskavoid::teleop
