#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

#include "deskavoid/codec.hpp"
#include "deskavoid/nav_env.hpp"
#include "deskavoid/nn/adam.hpp"
#include "deskavoid/nn/serialize.hpp"

namespace deskavoid::rl {

using nn::BasicNetwork;
using nn::BasicTensor;
using nn::Mode;
using nn::Network;
using nn::Tensor;

inline constexpr int kActionDim = 2;
inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;

struct Transition {
  Observation obs;
  Command action{};
  double reward = 0.0;
  Observation next_obs;
  bool done = false;
};

/// Fixed-capacity FIFO ring of transitions.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity, int obs_dim = kObsDim)
      : capacity_(capacity),
        obs_dim_(obs_dim),
        obs_(capacity * obs_dim),
        next_obs_(capacity * obs_dim),
        action_(capacity * kActionDim),
        reward_(capacity),
        done_(capacity) {
    if (capacity == 0) throw ValidationError("replay buffer capacity must be positive");
  }

  void add(const Transition& t) {
    if (t.obs.size() != static_cast<std::size_t>(obs_dim_) || t.next_obs.size() != static_cast<std::size_t>(obs_dim_)) {
      throw ValidationError("replay buffer: observation length mismatch");
    }
    for (double a : t.action) {
      if (!(a >= -1.0 && a <= 1.0)) throw ValidationError("replay buffer: action outside [-1,1]");
    }
    const std::size_t i = head_;
    std::copy(t.obs.begin(), t.obs.end(), obs_.begin() + i * obs_dim_);
    std::copy(t.next_obs.begin(), t.next_obs.end(), next_obs_.begin() + i * obs_dim_);
    action_[i * 2] = static_cast<float>(t.action[0]);
    action_[i * 2 + 1] = static_cast<float>(t.action[1]);
    reward_[i] = static_cast<float>(t.reward);
    done_[i] = t.done ? 1.0f : 0.0f;
    head_ = (head_ + 1) % capacity_;
    size_ = std::min(size_ + 1, capacity_);
  }

  [[nodiscard]] std::size_t size() const { return size_; }
  [[nodiscard]] std::size_t capacity() const { return capacity_; }

  /// Transition by age: 0 is the oldest still stored.
  [[nodiscard]] Transition at(std::size_t k) const {
    if (k >= size_) throw ValidationError("replay buffer index out of range");
    const std::size_t i = (head_ + capacity_ - size_ + k) % capacity_;
    Transition t;
    t.obs.assign(obs_.begin() + i * obs_dim_, obs_.begin() + (i + 1) * obs_dim_);
    t.next_obs.assign(next_obs_.begin() + i * obs_dim_, next_obs_.begin() + (i + 1) * obs_dim_);
    t.action = {action_[i * 2], action_[i * 2 + 1]};
    t.reward = reward_[i];
    t.done = done_[i] != 0.0f;
    return t;
  }

  /// Distinct slots, uniformly (Floyd's algorithm).
  [[nodiscard]] std::vector<std::size_t> sample_indices(std::size_t batch, Rng& rng) const {
    if (batch > size_) throw ValidationError("replay buffer holds fewer transitions than the batch size");
    std::unordered_set<std::size_t> chosen;
    std::vector<std::size_t> out;
    out.reserve(batch);
    for (std::size_t j = size_ - batch; j < size_; ++j) {
      std::uniform_int_distribution<std::size_t> pick(0, j);
      const std::size_t t = pick(rng);
      const std::size_t v = chosen.insert(t).second ? t : j;
      if (v == j) chosen.insert(j);
      out.push_back(v);
    }
    return out;
  }

  struct Batch {
    Tensor obs, action, next_obs;
    std::vector<float> reward, done;
  };

  [[nodiscard]] Batch sample(std::size_t batch, Rng& rng) const { return gather(sample_indices(batch, rng)); }

  [[nodiscard]] Batch gather(const std::vector<std::size_t>& idx) const {
    const int b = static_cast<int>(idx.size());
    Batch out{Tensor({b, obs_dim_}), Tensor({b, kActionDim}), Tensor({b, obs_dim_}), {}, {}};
    for (int r = 0; r < b; ++r) {
      const std::size_t i = idx[r];
      std::copy_n(obs_.begin() + i * obs_dim_, obs_dim_, out.obs.data.begin() + r * obs_dim_);
      std::copy_n(next_obs_.begin() + i * obs_dim_, obs_dim_, out.next_obs.data.begin() + r * obs_dim_);
      std::copy_n(action_.begin() + i * 2, 2, out.action.data.begin() + r * 2);
      out.reward.push_back(reward_[i]);
      out.done.push_back(done_[i]);
    }
    return out;
  }

 private:
  std::size_t capacity_;
  int obs_dim_;
  std::vector<float> obs_, next_obs_, action_, reward_, done_;
  std::size_t head_ = 0;
  std::size_t size_ = 0;
};

/// Input batch norm, then hidden Dense-BatchNorm-ReLU blocks, then a linear head.
template <class T = float>
BasicNetwork<T> make_mlp(int in, const std::vector<int>& hidden, int out, Rng& rng, float momentum = 0.99f) {
  std::vector<nn::LayerT<T>> layers{nn::batch_norm<T>(in, momentum)};
  int prev = in;
  for (int h : hidden) {
    layers.push_back(nn::dense<T>(prev, h));
    layers.push_back(nn::batch_norm<T>(h, momentum));
    layers.push_back(nn::relu<T>());
    prev = h;
  }
  layers.push_back(nn::dense<T>(prev, out));
  return BasicNetwork<T>({in}, std::move(layers), rng);
}

/// log(1 - tanh(u)^2) without cancellation.
template <class T>
T log1m_tanh_sq(T u) {
  const T x = -2 * u;
  const T softplus = x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  return 2 * (static_cast<T>(std::log(2.0)) - u - softplus);
}

/// Tanh-squashed diagonal Gaussian drawn from actor head outputs (mean, raw log-std) with the
/// given standard-normal noise. Zero noise gives the deterministic action tanh(mean).
template <class T>
struct SquashedSample {
  BasicTensor<T> action;   // (B, 2)
  std::vector<T> log_prob; // (B)
  BasicTensor<T> log_std;  // clamped
  std::vector<bool> log_std_clamped;
};

template <class T>
SquashedSample<T> squash(const BasicTensor<T>& head, const BasicTensor<T>& eps) {
  const int b = head.batch();
  SquashedSample<T> s{BasicTensor<T>({b, kActionDim}), std::vector<T>(b, T(0)), BasicTensor<T>({b, kActionDim}),
                      std::vector<bool>(static_cast<std::size_t>(b) * kActionDim)};
  const T half_log_2pi = static_cast<T>(0.5 * std::log(2.0 * kPi));
  for (int r = 0; r < b; ++r) {
    for (int j = 0; j < kActionDim; ++j) {
      const T mean = head.data[r * 4 + j];
      const T raw = head.data[r * 4 + 2 + j];
      const T ls = std::clamp(raw, static_cast<T>(kLogStdMin), static_cast<T>(kLogStdMax));
      const T e = eps.data[r * 2 + j];
      const T u = mean + std::exp(ls) * e;
      s.action.data[r * 2 + j] = std::tanh(u);
      s.log_std.data[r * 2 + j] = ls;
      s.log_std_clamped[r * 2 + j] = raw != ls;
      s.log_prob[r] += -T(0.5) * e * e - ls - half_log_2pi - log1m_tanh_sq(u);
    }
  }
  return s;
}

/// Log-density of a squashed Gaussian at a given action (used by the quadrature test and for
/// diagnostics); the action must lie strictly inside (-1, 1).
inline double squashed_log_prob(double mean, double log_std, double action) {
  const double u = std::atanh(action);
  const double s = std::exp(log_std);
  const double z = (u - mean) / s;
  return -0.5 * z * z - log_std - 0.5 * std::log(2.0 * kPi) - log1m_tanh_sq(u);
}

template <class T>
BasicTensor<T> concat_columns(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const int n = a.batch(), ca = static_cast<int>(a.sample_size()), cb = static_cast<int>(b.sample_size());
  BasicTensor<T> out({n, ca + cb});
  for (int r = 0; r < n; ++r) {
    std::copy_n(a.data.begin() + r * ca, ca, out.data.begin() + r * (ca + cb));
    std::copy_n(b.data.begin() + r * cb, cb, out.data.begin() + r * (ca + cb) + ca);
  }
  return out;
}

template <class T>
BasicTensor<T> concat_rows(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  std::vector<int> shape = a.shape;
  shape[0] += b.batch();
  BasicTensor<T> out(shape);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.size());
  return out;
}

/// Actor loss mean(alpha log pi(a~|s) - min_i Q_i(s, a~)) with reparameterized a~ = tanh(mean + std eps).
/// The actor runs in train mode; critics in eval mode and receive no parameter gradients.
/// When `grads` is given, actor parameter gradients are written there.
template <class T>
struct ActorObjective {
  T loss = 0;
  T mean_log_prob = 0;
  T mean_q = 0;
  typename BasicNetwork<T>::Cache actor_cache;
};

template <class T>
ActorObjective<T> actor_objective(const BasicNetwork<T>& actor, const BasicNetwork<T>& q1, const BasicNetwork<T>& q2,
                                  const BasicTensor<T>& obs, const BasicTensor<T>& eps, T alpha,
                                  nn::GradientsT<T>* grads) {
  ActorObjective<T> out;
  const int b = obs.batch();
  const BasicTensor<T> head = actor.forward(obs, Mode::train, &out.actor_cache);
  const SquashedSample<T> s = squash(head, eps);
  const BasicTensor<T> sa = concat_columns(obs, s.action);
  typename BasicNetwork<T>::Cache c1, c2;
  const BasicTensor<T> v1 = q1.forward(sa, Mode::eval, &c1);
  const BasicTensor<T> v2 = q2.forward(sa, Mode::eval, &c2);
  BasicTensor<T> g1({b, 1}), g2({b, 1});
  const T inv_b = T(1) / static_cast<T>(b);
  for (int r = 0; r < b; ++r) {
    const bool first = v1.data[r] <= v2.data[r];
    const T q = first ? v1.data[r] : v2.data[r];
    out.loss += (alpha * s.log_prob[r] - q) * inv_b;
    out.mean_log_prob += s.log_prob[r] * inv_b;
    out.mean_q += q * inv_b;
    (first ? g1 : g2).data[r] = -inv_b;
  }
  if (!grads) return out;

  // dL/da through whichever critic was the minimum
  const BasicTensor<T> gsa1 = q1.backward(c1, g1, nullptr);
  const BasicTensor<T> gsa2 = q2.backward(c2, g2, nullptr);
  const int in = static_cast<int>(obs.sample_size());
  BasicTensor<T> ghead({b, 4});
  for (int r = 0; r < b; ++r) {
    for (int j = 0; j < kActionDim; ++j) {
      const int col = r * (in + 2) + in + j;
      const T dl_da = gsa1.data[col] + gsa2.data[col];
      const T a = s.action.data[r * 2 + j];
      const T std = std::exp(s.log_std.data[r * 2 + j]);
      const T e = eps.data[r * 2 + j];
      const T da_du = 1 - a * a;
      // d log pi / d mean = 2 tanh(u); d log pi / d log_std = -1 + 2 tanh(u) std eps
      ghead.data[r * 4 + j] = dl_da * da_du + alpha * inv_b * 2 * a;
      const T g_ls = dl_da * da_du * std * e + alpha * inv_b * (-1 + 2 * a * std * e);
      ghead.data[r * 4 + 2 + j] = s.log_std_clamped[r * 2 + j] ? T(0) : g_ls;
    }
  }
  actor.backward(out.actor_cache, ghead, grads);
  return out;
}

struct AgentConfig {
  int actor_hidden = 256;
  int critic_hidden = 1024;
  double gamma = 0.99;
  double alpha = 0.2;
  bool auto_alpha = false;
  double target_entropy = -2.0;
  int batch_size = 256;
  int warmup_steps = 1000;
  double learning_rate = 3e-4;
  double adam_beta1 = 0.9;
  float bn_momentum = 0.99f;
  int total_steps = 50000;
  int buffer_capacity = 1000000;
  int eval_interval = 10000;
  int eval_trials = 20;
  double forward_command_probability = 0.5;

  void validate() const {
    if (actor_hidden < 1 || critic_hidden < 1) throw ValidationError("agent: hidden sizes must be positive");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ValidationError("agent: gamma must lie in [0,1)");
    if (alpha < 0.0) throw ValidationError("agent: alpha must be non-negative");
    if (batch_size < 2) throw ValidationError("agent: batch_size must be at least 2");
    if (warmup_steps < 0 || total_steps < 1) throw ValidationError("agent: bad step counts");
    if (!(learning_rate > 0.0)) throw ValidationError("agent: learning_rate must be positive");
    if (buffer_capacity < batch_size) throw ValidationError("agent: buffer_capacity below batch_size");
    if (eval_interval < 1 || eval_trials < 1) throw ValidationError("agent: eval_interval and eval_trials >= 1");
    if (!(forward_command_probability >= 0.0 && forward_command_probability <= 1.0)) {
      throw ValidationError("agent: forward_command_probability must lie in [0,1]");
    }
  }
};

inline json agent_config_to_json(const AgentConfig& c, bool annotate = false) {
  const auto f = [&](const json& v, Source s = Source::default_value) { return annotate ? annotated(v, s) : v; };
  return {{"actor_hidden", f(c.actor_hidden, Source::paper)},
          {"critic_hidden", f(c.critic_hidden, Source::paper)},
          {"gamma", f(c.gamma)},
          {"alpha", f(c.alpha)},
          {"auto_alpha", f(c.auto_alpha)},
          {"target_entropy", f(c.target_entropy)},
          {"batch_size", f(c.batch_size)},
          {"warmup_steps", f(c.warmup_steps)},
          {"learning_rate", f(c.learning_rate)},
          {"adam_beta1", f(c.adam_beta1)},
          {"bn_momentum", f(c.bn_momentum)},
          {"total_steps", f(c.total_steps)},
          {"buffer_capacity", f(c.buffer_capacity)},
          {"eval_interval", f(c.eval_interval)},
          {"eval_trials", f(c.eval_trials)},
          {"forward_command_probability", f(c.forward_command_probability)}};
}

inline AgentConfig agent_config_from_json(const json& j) {
  check_keys(j,
             {"actor_hidden", "critic_hidden", "gamma", "alpha", "auto_alpha", "target_entropy", "batch_size",
              "warmup_steps", "learning_rate", "adam_beta1", "bn_momentum", "total_steps", "buffer_capacity",
              "eval_interval", "eval_trials", "forward_command_probability"},
             "agent");
  AgentConfig c;
  read_leaf(j, "actor_hidden", c.actor_hidden);
  read_leaf(j, "critic_hidden", c.critic_hidden);
  read_leaf(j, "gamma", c.gamma);
  read_leaf(j, "alpha", c.alpha);
  read_leaf(j, "auto_alpha", c.auto_alpha);
  read_leaf(j, "target_entropy", c.target_entropy);
  read_leaf(j, "batch_size", c.batch_size);
  read_leaf(j, "warmup_steps", c.warmup_steps);
  read_leaf(j, "learning_rate", c.learning_rate);
  read_leaf(j, "adam_beta1", c.adam_beta1);
  read_leaf(j, "bn_momentum", c.bn_momentum);
  read_leaf(j, "total_steps", c.total_steps);
  read_leaf(j, "buffer_capacity", c.buffer_capacity);
  read_leaf(j, "eval_interval", c.eval_interval);
  read_leaf(j, "eval_trials", c.eval_trials);
  read_leaf(j, "forward_command_probability", c.forward_command_probability);
  c.validate();
  return c;
}

struct UpdateStats {
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double mean_q = 0.0;
  double entropy = 0.0;  // -mean log pi
  double alpha = 0.0;
};

/// Actor and the two critics, with their optimizers. There are no target networks.
class Agent {
 public:
  Agent(const AgentConfig& cfg, Rng& rng, int obs_dim = kObsDim) : cfg_(cfg), obs_dim_(obs_dim) {
    cfg_.validate();
    opt_.lr = cfg_.learning_rate;
    opt_.beta1 = cfg_.adam_beta1;
    actor_ = make_mlp<float>(obs_dim, {cfg_.actor_hidden, cfg_.actor_hidden}, 4, rng, cfg_.bn_momentum);
    for (auto& q : critics_) {
      q = make_mlp<float>(obs_dim + kActionDim, {cfg_.critic_hidden, cfg_.critic_hidden}, 1, rng, cfg_.bn_momentum);
    }
    reset_optimizers();
    log_alpha_ = std::log(std::max(cfg_.alpha, 1e-12));
  }

  [[nodiscard]] const AgentConfig& config() const { return cfg_; }
  [[nodiscard]] Network& actor() { return actor_; }
  [[nodiscard]] const Network& actor() const { return actor_; }
  [[nodiscard]] std::array<Network, 2>& critics() { return critics_; }
  [[nodiscard]] const std::array<Network, 2>& critics() const { return critics_; }
  [[nodiscard]] double alpha() const { return cfg_.auto_alpha ? std::exp(log_alpha_) : cfg_.alpha; }

  void reset_optimizers() {
    actor_opt_ = nn::AdamState(actor_.parameters());
    for (int i = 0; i < 2; ++i) critic_opt_[i] = nn::AdamState(critics_[i].parameters());
    alpha_m_ = alpha_v_ = 0.0;
    alpha_t_ = 0;
  }

  /// Action for one observation; the actor's batch norms use running statistics.
  [[nodiscard]] Command act(const Observation& obs, Rng& rng, bool deterministic) const {
    Tensor x({1, obs_dim_}, std::vector<float>(obs.begin(), obs.end()));
    const Tensor head = actor_.infer(x);
    Tensor eps({1, kActionDim});
    if (!deterministic) {
      for (float& e : eps.data) e = static_cast<float>(gaussian(rng, 1.0));
    }
    const auto s = squash(head, eps);
    return {s.action.data[0], s.action.data[1]};
  }

  /// CrossQ critic step: (s,a) and (s',a') go through each critic as one train-mode batch so the
  /// batch norms see both; the bootstrap target is held constant.
  double critic_update(const ReplayBuffer::Batch& batch, Rng& rng) {
    const int b = batch.obs.batch();
    if (b < 2) throw ValidationError("critic_update: batch size must be at least 2");
    Tensor eps({b, kActionDim});
    for (float& e : eps.data) e = static_cast<float>(gaussian(rng, 1.0));
    const auto next = squash(actor_.infer(batch.next_obs), eps);
    const Tensor joint = concat_rows(concat_columns(batch.obs, batch.action), concat_columns(batch.next_obs, next.action));
    std::array<Network::Cache, 2> cache;
    std::array<Tensor, 2> q;
    for (int i = 0; i < 2; ++i) q[i] = critics_[i].forward(joint, Mode::train, &cache[i]);
    const double a = alpha();
    std::vector<double> target(b);
    for (int r = 0; r < b; ++r) {
      const double qn = std::min(q[0].data[b + r], q[1].data[b + r]);
      target[r] = batch.reward[r] + cfg_.gamma * (1.0 - batch.done[r]) * (qn - a * next.log_prob[r]);
    }
    double loss = 0.0;
    for (int i = 0; i < 2; ++i) {
      Tensor g({2 * b, 1});
      for (int r = 0; r < b; ++r) {
        const double d = q[i].data[r] - target[r];
        loss += d * d / b;
        g.data[r] = static_cast<float>(2.0 * d / b);
      }
      auto grads = critics_[i].zero_gradients();
      critics_[i].backward(cache[i], g, &grads);
      nn::adam_step(critics_[i].parameters(), grads, critic_opt_[i], opt_);
      critics_[i].commit_batch_stats(cache[i]);
    }
    if (!std::isfinite(loss)) throw RuntimeFailure("critic loss is not finite");
    return loss;
  }

  /// Reparameterized actor step against the eval-mode critics; optional temperature step.
  UpdateStats actor_update(const ReplayBuffer::Batch& batch, Rng& rng) {
    const int b = batch.obs.batch();
    if (b < 2) throw ValidationError("actor_update: batch size must be at least 2");
    Tensor eps({b, kActionDim});
    for (float& e : eps.data) e = static_cast<float>(gaussian(rng, 1.0));
    auto grads = actor_.zero_gradients();
    const auto obj = actor_objective<float>(actor_, critics_[0], critics_[1], batch.obs, eps,
                                            static_cast<float>(alpha()), &grads);
    if (!std::isfinite(obj.loss)) throw RuntimeFailure("actor loss is not finite");
    nn::adam_step(actor_.parameters(), grads, actor_opt_, opt_);
    actor_.commit_batch_stats(obj.actor_cache);
    if (cfg_.auto_alpha) {
      // d/d log_alpha of -log_alpha * (log pi + target_entropy)
      const double g = -(obj.mean_log_prob + cfg_.target_entropy);
      ++alpha_t_;
      alpha_m_ = opt_.beta1 * alpha_m_ + (1 - opt_.beta1) * g;
      alpha_v_ = opt_.beta2 * alpha_v_ + (1 - opt_.beta2) * g * g;
      const double mh = alpha_m_ / (1 - std::pow(opt_.beta1, alpha_t_));
      const double vh = alpha_v_ / (1 - std::pow(opt_.beta2, alpha_t_));
      log_alpha_ -= opt_.lr * mh / (std::sqrt(vh) + opt_.eps);
    }
    return {0.0, obj.loss, obj.mean_q, -obj.mean_log_prob, alpha()};
  }

 private:
  AgentConfig cfg_;
  int obs_dim_;
  nn::AdamConfig opt_;
  Network actor_;
  std::array<Network, 2> critics_;
  nn::AdamState actor_opt_;
  std::array<nn::AdamState, 2> critic_opt_;
  double log_alpha_ = 0.0;
  double alpha_m_ = 0.0, alpha_v_ = 0.0;
  long long alpha_t_ = 0;
};

/// Maps an observation to a correction.
using Policy = std::function<Command(const Observation&)>;

inline Policy deterministic_policy(const Network& actor) {
  auto shared = std::make_shared<const Network>(actor);
  return [shared](const Observation& obs) {
    Tensor x({1, static_cast<int>(obs.size())}, std::vector<float>(obs.begin(), obs.end()));
    const Tensor head = shared->infer(x);
    return Command{std::tanh(static_cast<double>(head.data[0])), std::tanh(static_cast<double>(head.data[1]))};
  };
}

inline Policy zero_policy() {
  return [](const Observation&) { return Command{0.0, 0.0}; };
}

struct SurvivalStats {
  std::vector<double> seconds;
  double mean = 0.0;
  double median = 0.0;
  std::vector<int> histogram;  // one-second bins
  int collisions = 0;

  [[nodiscard]] json to_json() const {
    return {{"mean", mean}, {"median", median}, {"histogram", histogram}, {"collisions", collisions},
            {"seconds", seconds}};
  }
};

inline SurvivalStats summarize_survival(std::vector<double> seconds, int collisions, double cap) {
  SurvivalStats s;
  s.seconds = seconds;
  s.collisions = collisions;
  s.mean = std::accumulate(seconds.begin(), seconds.end(), 0.0) / static_cast<double>(seconds.size());
  std::sort(seconds.begin(), seconds.end());
  const std::size_t n = seconds.size();
  s.median = n % 2 ? seconds[n / 2] : 0.5 * (seconds[n / 2 - 1] + seconds[n / 2]);
  s.histogram.assign(static_cast<std::size_t>(std::ceil(cap)) + 1, 0);
  for (double v : s.seconds) ++s.histogram[std::min<std::size_t>(static_cast<std::size_t>(v), s.histogram.size() - 1)];
  return s;
}

/// Runs `trials` episodes under a fixed user command. Trial i draws its spawn and noise from its
/// own stream seeded with seed + i, so a policy and the baseline face the same spawns.
inline SurvivalStats evaluate_survival(const Policy& policy, NavEnv& env, int trials, std::uint64_t seed,
                                       const Command& user_cmd = {1.0, 0.0}) {
  if (trials < 1) throw ValidationError("evaluate_survival: trials must be at least 1");
  std::vector<double> seconds;
  int collisions = 0;
  for (int i = 0; i < trials; ++i) {
    Rng rng(seed + static_cast<std::uint64_t>(i));
    Observation obs = env.reset(rng, user_cmd);
    StepResult r;
    do {
      r = env.step(policy(obs), rng);
      obs = r.obs;
    } while (!r.done);
    collisions += r.collided ? 1 : 0;
    seconds.push_back(env.state().step_count * env.config().dt);
  }
  return summarize_survival(std::move(seconds), collisions, env.config().max_episode_steps * env.config().dt);
}

struct CorrectionPoint {
  double x = 0.0, y = 0.0, ax = 0.0, atheta = 0.0;
  double distance = 0.0;  // centre distance to the nearest obstacle or wall
};

/// Full-forward rollout over `steps` timesteps (resetting after each episode), keeping the
/// poses where the correction's L1 norm exceeds `threshold`.
inline std::vector<CorrectionPoint> correction_field(const Policy& policy, NavEnv& env, int steps, double threshold,
                                                     Rng& rng, std::vector<double>* visited_distances = nullptr) {
  if (steps < 1) throw ValidationError("correction_field: steps must be at least 1");
  std::vector<CorrectionPoint> out;
  Observation obs = env.reset(rng, {1.0, 0.0});
  for (int t = 0; t < steps; ++t) {
    const Command a = policy(obs);
    const Pose p = env.state().pose;
    const double d = env.scene().distance(p.position());
    if (visited_distances) visited_distances->push_back(d);
    if (std::abs(a[0]) + std::abs(a[1]) > threshold) out.push_back({p.x, p.y, a[0], a[1], d});
    const StepResult r = env.step(a, rng);
    obs = r.done ? env.reset(rng, {1.0, 0.0}) : r.obs;
  }
  return out;
}

inline json correction_field_to_json(const std::vector<CorrectionPoint>& pts) {
  json arr = json::array();
  for (const auto& p : pts) arr.push_back({{"x", p.x}, {"y", p.y}, {"ax", p.ax}, {"atheta", p.atheta}});
  return arr;
}

inline double fraction_within(const std::vector<CorrectionPoint>& pts, double radius) {
  if (pts.empty()) return 0.0;
  const auto n = std::count_if(pts.begin(), pts.end(), [&](const CorrectionPoint& p) { return p.distance <= radius; });
  return static_cast<double>(n) / static_cast<double>(pts.size());
}

/// Policy checkpoint: actor weights in the nn format plus a metadata header.
struct Checkpoint {
  long long step = 0;
  std::string config_hash;
  std::string encoder_hash;
  Network actor;
};

inline json checkpoint_to_json(const Checkpoint& c) {
  return {{"format", "deskavoid-policy-v1"},
          {"meta", {{"step", c.step}, {"config_hash", c.config_hash}, {"encoder_hash", c.encoder_hash}}},
          {"actor", nn::network_to_json(c.actor)}};
}

inline Checkpoint checkpoint_from_json(const json& j) {
  try {
    if (j.at("format") != "deskavoid-policy-v1") throw ValidationError("not a policy checkpoint");
    const auto& m = j.at("meta");
    return {m.at("step"), m.at("config_hash"), m.at("encoder_hash"), nn::network_from_json(j.at("actor"))};
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed policy checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write " + path);
  out << checkpoint_to_json(c).dump() << '\n';
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open policy checkpoint " + path);
  try {
    return checkpoint_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

/// Training-time user command: full forward with the configured probability, else uniform.
inline Command sample_user_command(Rng& rng, double forward_probability) {
  if (uniform(rng, 0.0, 1.0) < forward_probability) return {1.0, 0.0};
  return {uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0)};
}

struct TrainHooks {
  std::function<void(const json&)> log;                  // one JSON record per line
  std::function<void(long long step, const Agent&)> checkpoint;  // after each evaluation
};

struct TrainSummary {
  long long steps = 0;
  std::size_t buffer_size = 0;
  int episodes = 0;
  std::vector<std::pair<long long, double>> eval_mean_survival;
};

/// Act, store, then (after warmup) one critic and one actor update per environment step.
/// A timeout ends the episode but is stored as not-done, so its value is still bootstrapped.
inline TrainSummary train_agent(Agent& agent, NavEnv& env, Rng& rng, std::uint64_t eval_seed,
                                const TrainHooks& hooks = {}) {
  const AgentConfig& cfg = agent.config();
  ReplayBuffer buffer(static_cast<std::size_t>(std::min(cfg.buffer_capacity, cfg.total_steps)));
  TrainSummary summary;
  Observation obs = env.reset(rng, sample_user_command(rng, cfg.forward_command_probability));
  double episode_return = 0.0;
  double last_critic = 0.0;
  UpdateStats last_actor;
  for (long long step = 1; step <= cfg.total_steps; ++step) {
    const Command action = step <= cfg.warmup_steps
                               ? Command{uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0)}
                               : agent.act(obs, rng, false);
    const StepResult r = env.step(action, rng);
    buffer.add({obs, action, r.reward, r.obs, r.collided});
    episode_return += r.reward;
    if (r.done) {
      ++summary.episodes;
      if (hooks.log) {
        hooks.log({{"kind", "episode"},
                   {"step", step},
                   {"episode", summary.episodes},
                   {"return", episode_return},
                   {"length", env.state().step_count},
                   {"collided", r.collided},
                   {"buffer_size", buffer.size()},
                   {"critic_loss", last_critic},
                   {"actor_loss", last_actor.actor_loss},
                   {"entropy", last_actor.entropy},
                   {"alpha", agent.alpha()}});
      }
      episode_return = 0.0;
      obs = env.reset(rng, sample_user_command(rng, cfg.forward_command_probability));
    } else {
      obs = r.obs;
    }
    if (step > cfg.warmup_steps && buffer.size() >= static_cast<std::size_t>(cfg.batch_size)) {
      last_critic = agent.critic_update(buffer.sample(cfg.batch_size, rng), rng);
      last_actor = agent.actor_update(buffer.sample(cfg.batch_size, rng), rng);
    }
    if (step % cfg.eval_interval == 0 || step == cfg.total_steps) {
      // evaluation uses its own environment state; resume training with a fresh episode
      const auto stats = evaluate_survival(deterministic_policy(agent.actor()), env, cfg.eval_trials, eval_seed);
      summary.eval_mean_survival.emplace_back(step, stats.mean);
      if (hooks.log) hooks.log({{"kind", "eval"}, {"step", step}, {"mean_survival", stats.mean}, {"median_survival", stats.median}});
      if (hooks.checkpoint) hooks.checkpoint(step, agent);
      episode_return = 0.0;
      obs = env.reset(rng, sample_user_command(rng, cfg.forward_command_probability));
    }
  }
  summary.steps = cfg.total_steps;
  summary.buffer_size = buffer.size();
  return summary;
}

}  // namespace deskavoid::rl
