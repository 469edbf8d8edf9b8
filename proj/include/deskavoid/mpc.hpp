#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "deskavoid/config.hpp"

namespace deskavoid::mpc {

using Mat4 = Eigen::Matrix4d;
using Vec4 = Eigen::Vector4d;
using MatX = Eigen::MatrixXd;
using VecX = Eigen::VectorXd;

/// State order: r, phi, r_dot, phi_dot. Input: ground acceleration.
enum StateIndex { kR = 0, kPhi = 1, kRDot = 2, kPhiDot = 3 };

struct WipModel {
  double g = 9.81;
  double l = 0.58;
  double dt = 0.02;
  int horizon = 50;
  Mat4 A = Mat4::Identity();
  Vec4 B = Vec4::Zero();
};

/// Explicit Euler discretization of r'' = u, phi'' = (g/l) phi - u/l.
inline std::pair<Mat4, Vec4> linearize_wip(double g, double l, double dt) {
  if (!(l > 0.0) || !(dt > 0.0)) throw ValidationError("linearize_wip: l and dt must be positive");
  Mat4 Ac = Mat4::Zero();
  Ac(kR, kRDot) = 1.0;
  Ac(kPhi, kPhiDot) = 1.0;
  Ac(kPhiDot, kPhi) = g / l;
  Vec4 Bc(0.0, 0.0, 1.0, -1.0 / l);
  return {Mat4::Identity() + dt * Ac, dt * Bc};
}

inline WipModel make_model(double g, double l, double dt, int horizon) {
  if (horizon < 2) throw ValidationError("mpc horizon must be at least 2");
  WipModel m{g, l, dt, horizon};
  std::tie(m.A, m.B) = linearize_wip(g, l, dt);
  return m;
}

struct Weights {
  double w_r = 10.0;
  double w_phi = 100.0;
  double w_u = 0.1;
  double terminal_scale = 10.0;
};

/// min 1/2 u'Hu + q'u + constant  s.t. lower <= u <= upper.
struct QpProblem {
  MatX H;
  VecX q;
  VecX lower;
  VecX upper;
  double constant = 0.0;

  [[nodiscard]] double objective(const VecX& u) const { return 0.5 * u.dot(H * u) + q.dot(u) + constant; }
  [[nodiscard]] int size() const { return static_cast<int>(q.size()); }
};

struct QpSolution {
  VecX u;
  int iterations = 0;
  double kkt_residual = 0.0;
};

inline constexpr double kHessianRegularization = 1e-8;

/// Condenses the horizon into a dense problem over u_0..u_{N-1}. Stage k = 1..N costs
/// w_r (r_k - r_ref_k)^2 + w_phi phi_k^2, the last stage scaled by terminal_scale, plus w_u u^2.
inline QpProblem build_qp(const WipModel& m, const Vec4& x0, double v_ref, const Weights& w, double u_max) {
  if (!(w.w_r > 0.0 && w.w_phi > 0.0 && w.w_u > 0.0 && w.terminal_scale > 0.0)) {
    throw ValidationError("build_qp: weights must be positive");
  }
  if (u_max < 0.0) throw ValidationError("build_qp: u_max must be non-negative");
  const int n = m.horizon;
  // free[k] = A^k x0; impulse[k] = A^k B
  std::vector<Vec4> free(n + 1), impulse(n);
  free[0] = x0;
  impulse[0] = m.B;
  for (int k = 1; k <= n; ++k) free[k] = m.A * free[k - 1];
  for (int k = 1; k < n; ++k) impulse[k] = m.A * impulse[k - 1];

  QpProblem p;
  p.H = MatX::Zero(n, n);
  p.q = VecX::Zero(n);
  VecX gr(n), gphi(n);
  for (int k = 1; k <= n; ++k) {
    const double s = k == n ? w.terminal_scale : 1.0;
    gr.setZero();
    gphi.setZero();
    for (int j = 0; j < k; ++j) {
      gr(j) = impulse[k - 1 - j](kR);
      gphi(j) = impulse[k - 1 - j](kPhi);
    }
    const double er = free[k](kR) - (x0(kR) + v_ref * k * m.dt);
    const double ephi = free[k](kPhi);
    p.H.noalias() += 2.0 * s * (w.w_r * gr * gr.transpose() + w.w_phi * gphi * gphi.transpose());
    p.q += 2.0 * s * (w.w_r * er * gr + w.w_phi * ephi * gphi);
    p.constant += s * (w.w_r * er * er + w.w_phi * ephi * ephi);
  }
  p.H.diagonal().array() += 2.0 * w.w_u + kHessianRegularization;
  p.H = 0.5 * (p.H + p.H.transpose());
  p.lower = VecX::Constant(n, -u_max);
  p.upper = VecX::Constant(n, u_max);
  return p;
}

/// Same cost by explicit simulation of the linear model; the condensed objective must match it.
inline double rollout_cost(const WipModel& m, const Vec4& x0, double v_ref, const Weights& w, const VecX& u) {
  Vec4 x = x0;
  double j = 0.0;
  for (int k = 1; k <= m.horizon; ++k) {
    x = m.A * x + m.B * u(k - 1);
    const double s = k == m.horizon ? w.terminal_scale : 1.0;
    const double er = x(kR) - (x0(kR) + v_ref * k * m.dt);
    j += s * (w.w_r * er * er + w.w_phi * x(kPhi) * x(kPhi)) + w.w_u * u(k - 1) * u(k - 1);
  }
  // the solver's Hessian carries the tiny diagonal regularization
  return j + 0.5 * kHessianRegularization * u.squaredNorm();
}

inline VecX project(const VecX& u, const QpProblem& p) { return u.cwiseMax(p.lower).cwiseMin(p.upper); }

/// Infinity norm of u - P(u - grad): zero exactly at a KKT point of the box QP.
inline double kkt_residual(const QpProblem& p, const VecX& u) {
  const VecX g = p.H * u + p.q;
  return (u - project(u - g, p)).lpNorm<Eigen::Infinity>();
}

class QpFailure : public RuntimeFailure {
 public:
  QpFailure(const std::string& what, VecX best, double residual)
      : RuntimeFailure(what), best_iterate(std::move(best)), residual(residual) {}
  VecX best_iterate;
  double residual;
};

struct SolverOptions {
  int max_iterations = 5000;
  double tolerance = 1e-6;
};

inline void validate_problem(const QpProblem& p) {
  const int n = p.size();
  if (p.H.rows() != n || p.H.cols() != n || p.lower.size() != n || p.upper.size() != n) {
    throw ValidationError("qp: inconsistent dimensions");
  }
  if ((p.lower.array() > p.upper.array()).any()) throw ValidationError("qp: lower bound exceeds upper bound");
}

/// Projected Newton on the box: Newton step on the coordinates not pinned by an active bound,
/// projected Armijo backtracking, and a projected-gradient fallback when the search stalls.
inline QpSolution solve_qp(const QpProblem& p, const std::optional<VecX>& warm_start = std::nullopt,
                           const SolverOptions& opt = {}) {
  validate_problem(p);
  const int n = p.size();
  VecX u = warm_start && warm_start->size() == n ? project(*warm_start, p) : project(VecX::Zero(n), p);
  if (n == 0) return {u, 0, 0.0};
  // Lipschitz bound for the fallback step
  const double lipschitz = std::max(p.H.cwiseAbs().rowwise().sum().maxCoeff(), 1e-12);
  double f = p.objective(u);
  for (int it = 0; it < opt.max_iterations; ++it) {
    const VecX g = p.H * u + p.q;
    const double res = (u - project(u - g, p)).lpNorm<Eigen::Infinity>();
    if (res <= opt.tolerance) return {u, it, res};

    std::vector<int> idx;
    for (int i = 0; i < n; ++i) {
      const bool pinned = (u(i) <= p.lower(i) && g(i) > 0.0) || (u(i) >= p.upper(i) && g(i) < 0.0);
      if (!pinned) idx.push_back(i);
    }
    VecX d = VecX::Zero(n);
    if (!idx.empty()) {
      const int m = static_cast<int>(idx.size());
      MatX hff(m, m);
      VecX gf(m);
      for (int a = 0; a < m; ++a) {
        gf(a) = g(idx[a]);
        for (int b = 0; b < m; ++b) hff(a, b) = p.H(idx[a], idx[b]);
      }
      const VecX df = hff.llt().solve(-gf);
      for (int a = 0; a < m; ++a) d(idx[a]) = df(a);
    }

    bool accepted = false;
    for (double step = 1.0; step > 1e-12; step *= 0.5) {
      const VecX cand = project(u + step * d, p);
      const double fc = p.objective(cand);
      if (fc < f && fc <= f + 1e-4 * g.dot(cand - u)) {
        accepted = true;
        u = cand;
        f = fc;
        break;
      }
    }
    if (!accepted) {
      u = project(u - g / lipschitz, p);
      f = p.objective(u);
    }
  }
  const double res = kkt_residual(p, u);
  if (res <= opt.tolerance) return {u, opt.max_iterations, res};
  throw QpFailure("qp: iteration cap " + std::to_string(opt.max_iterations) + " reached, residual " +
                      std::to_string(res),
                  u, res);
}

struct MpcConfig {
  double g = 9.81;
  double l = 0.58;
  double dt = 0.02;
  int horizon = 50;
  double u_max = 5.0;
  Weights weights;
  SolverOptions solver;
  double sim_rate_hz = 100.0;
  double wheel_radius = 0.06;
  double track_width = 0.3;

  [[nodiscard]] WipModel model() const { return make_model(g, l, dt, horizon); }
};

inline json mpc_config_to_json(const MpcConfig& c, bool annotate = false) {
  const auto f = [&](const json& v, Source s = Source::default_value) { return annotate ? annotated(v, s) : v; };
  return {{"g", f(c.g)},
          {"l", f(c.l)},
          {"dt", f(c.dt)},
          {"horizon", f(c.horizon)},
          {"u_max", f(c.u_max)},
          {"w_r", f(c.weights.w_r)},
          {"w_phi", f(c.weights.w_phi)},
          {"w_u", f(c.weights.w_u)},
          {"terminal_scale", f(c.weights.terminal_scale)},
          {"max_iterations", f(c.solver.max_iterations)},
          {"tolerance", f(c.solver.tolerance)},
          {"sim_rate_hz", f(c.sim_rate_hz, Source::paper)},
          {"wheel_radius", f(c.wheel_radius)},
          {"track_width", f(c.track_width)}};
}

inline MpcConfig mpc_config_from_json(const json& j) {
  check_keys(j,
             {"g", "l", "dt", "horizon", "u_max", "w_r", "w_phi", "w_u", "terminal_scale", "max_iterations",
              "tolerance", "sim_rate_hz", "wheel_radius", "track_width"},
             "mpc");
  MpcConfig c;
  read_leaf(j, "g", c.g);
  read_leaf(j, "l", c.l);
  read_leaf(j, "dt", c.dt);
  read_leaf(j, "horizon", c.horizon);
  read_leaf(j, "u_max", c.u_max);
  read_leaf(j, "w_r", c.weights.w_r);
  read_leaf(j, "w_phi", c.weights.w_phi);
  read_leaf(j, "w_u", c.weights.w_u);
  read_leaf(j, "terminal_scale", c.weights.terminal_scale);
  read_leaf(j, "max_iterations", c.solver.max_iterations);
  read_leaf(j, "tolerance", c.solver.tolerance);
  read_leaf(j, "sim_rate_hz", c.sim_rate_hz);
  read_leaf(j, "wheel_radius", c.wheel_radius);
  read_leaf(j, "track_width", c.track_width);
  if (!(c.sim_rate_hz > 0.0)) throw ValidationError("mpc: sim_rate_hz must be positive");
  if (c.u_max < 0.0) throw ValidationError("mpc: u_max must be non-negative");
  if (!(c.wheel_radius > 0.0 && c.track_width > 0.0)) throw ValidationError("mpc: wheel geometry must be positive");
  (void)c.model();  // validates g, l, dt, horizon
  return c;
}

/// Previous plan advanced by one stage, the last input repeated.
inline VecX shift_solution(const VecX& u) {
  if (u.size() == 0) return u;
  VecX s(u.size());
  s.head(u.size() - 1) = u.tail(u.size() - 1);
  s(u.size() - 1) = u(u.size() - 1);
  return s;
}

struct MpcStep {
  double base_velocity = 0.0;  // planned r_dot after the first interval
  QpSolution solution;
};

inline MpcStep mpc_step(const WipModel& m, const Vec4& x0, double v_ref, const Weights& w, double u_max,
                        const std::optional<VecX>& prev_solution, const SolverOptions& opt = {}) {
  const QpProblem p = build_qp(m, x0, v_ref, w, u_max);
  std::optional<VecX> warm;
  if (prev_solution && prev_solution->size() == m.horizon) warm = shift_solution(*prev_solution);
  MpcStep out;
  out.solution = solve_qp(p, warm, opt);
  out.base_velocity = x0(kRDot) + out.solution.u(0) * m.dt;
  return out;
}

/// Holds the warm start between calls; one instance per control loop.
class MpcController {
 public:
  explicit MpcController(MpcConfig cfg, bool warm_start = true)
      : cfg_(std::move(cfg)), model_(cfg_.model()), warm_(warm_start) {}

  MpcStep step(const Vec4& x0, double v_ref) {
    MpcStep s = mpc_step(model_, x0, v_ref, cfg_.weights, cfg_.u_max, warm_ ? prev_ : std::nullopt, cfg_.solver);
    prev_ = s.solution.u;
    return s;
  }
  void reset() { prev_.reset(); }
  [[nodiscard]] const MpcConfig& config() const { return cfg_; }
  [[nodiscard]] const WipModel& model() const { return model_; }

 private:
  MpcConfig cfg_;
  WipModel model_;
  bool warm_;
  std::optional<VecX> prev_;
};

struct WheelSpeeds {
  double left = 0.0;   // rad/s
  double right = 0.0;  // rad/s
};

inline WheelSpeeds differential_drive(double v_base, double v_theta, double wheel_radius, double track) {
  if (!(wheel_radius > 0.0 && track > 0.0)) throw ValidationError("differential_drive: geometry must be positive");
  return {(v_base - v_theta * track / 2.0) / wheel_radius, (v_base + v_theta * track / 2.0) / wheel_radius};
}

/// Nonlinear pendulum on a cart driven by ground acceleration u.
inline Vec4 wip_dynamics(const Vec4& x, double u, double g, double l) {
  return {x(kRDot), x(kPhiDot), u, (g * std::sin(x(kPhi)) - u * std::cos(x(kPhi))) / l};
}

inline Vec4 rk4_step(const Vec4& x, double u, double g, double l, double h) {
  const Vec4 k1 = wip_dynamics(x, u, g, l);
  const Vec4 k2 = wip_dynamics(x + 0.5 * h * k1, u, g, l);
  const Vec4 k3 = wip_dynamics(x + 0.5 * h * k2, u, g, l);
  const Vec4 k4 = wip_dynamics(x + h * k3, u, g, l);
  return x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

struct TrajectorySample {
  double t = 0.0;
  Vec4 x = Vec4::Zero();
  double u = 0.0;
  WheelSpeeds wheels;
  int iterations = 0;
};

class FellError : public RuntimeFailure {
 public:
  FellError(double t, double phi)
      : RuntimeFailure("pendulum fell at t=" + std::to_string(t) + " s (phi=" + std::to_string(phi) + " rad)"),
        time(t) {}
  double time;
};

using Profile = std::function<double(double t)>;

/// MPC in the loop at sim_rate_hz against the nonlinear plant; u_0 is held over each tick.
inline std::vector<TrajectorySample> simulate_wip_closed_loop(const MpcConfig& cfg, const Vec4& x0,
                                                              const Profile& v_ref, double duration,
                                                              const Profile& v_theta = {}, bool warm_start = true) {
  if (!(duration > 0.0)) throw ValidationError("simulate: duration must be positive");
  MpcController ctrl(cfg, warm_start);
  const double h = 1.0 / cfg.sim_rate_hz;
  const int ticks = static_cast<int>(std::llround(duration * cfg.sim_rate_hz));
  std::vector<TrajectorySample> out;
  out.reserve(ticks + 1);
  Vec4 x = x0;
  for (int i = 0; i < ticks; ++i) {
    const double t = i * h;
    const MpcStep s = ctrl.step(x, v_ref(t));
    const double u = s.solution.u(0);
    out.push_back({t, x, u, differential_drive(s.base_velocity, v_theta ? v_theta(t) : 0.0, cfg.wheel_radius,
                                               cfg.track_width),
                   s.solution.iterations});
    x = rk4_step(x, u, cfg.g, cfg.l, h);
    if (std::abs(x(kPhi)) > kPi / 2.0) throw FellError(t + h, x(kPhi));
  }
  out.push_back({ticks * h, x, 0.0, {}, 0});
  return out;
}

inline json trajectory_sample_to_json(const TrajectorySample& s) {
  return {{"t", s.t},     {"r", s.x(kR)}, {"phi", s.x(kPhi)},         {"r_dot", s.x(kRDot)},
          {"phi_dot", s.x(kPhiDot)}, {"u", s.u}, {"omega_l", s.wheels.left}, {"omega_r", s.wheels.right}};
}

inline void write_trajectory_jsonl(const std::string& path, const std::vector<TrajectorySample>& traj) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write " + path);
  for (const auto& s : traj) out << trajectory_sample_to_json(s).dump() << '\n';
}

inline double median_of(std::vector<int> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Closed-loop checks: tilt recovery, velocity tracking, and warm- vs cold-start solver effort.
/// Failures (including a fall or a solver breakdown) are report entries, never exceptions.
struct BenchReport {
  bool stabilization_pass = false;
  std::optional<double> settle_time;  // last time |phi| >= 0.01, if it ever settles
  double final_phi = 0.0;
  bool tracking_pass = false;
  std::optional<double> tracking_mean;  // mean r_dot over the final second
  bool warm_start_pass = false;
  double median_warm = 0.0;
  double median_cold = 0.0;
  std::vector<std::string> failures;

  [[nodiscard]] bool all_pass() const { return stabilization_pass && tracking_pass && warm_start_pass; }

  [[nodiscard]] json to_json() const {
    const auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    return {{"stabilization", {{"pass", stabilization_pass}, {"settle_time", opt(settle_time)}, {"final_phi", final_phi}}},
            {"tracking", {{"pass", tracking_pass}, {"mean_r_dot_final_second", opt(tracking_mean)}}},
            {"warm_start",
             {{"pass", warm_start_pass}, {"median_iterations_warm", median_warm}, {"median_iterations_cold", median_cold}}},
            {"failures", failures}};
  }
};

inline BenchReport run_mpc_bench(const MpcConfig& cfg, double phi0 = 0.1, double v_ref = 0.5) {
  BenchReport r;
  const Profile zero = [](double) { return 0.0; };
  try {
    const auto traj = simulate_wip_closed_loop(cfg, Vec4(0, phi0, 0, 0), zero, 4.0);
    double last_out = 0.0;
    for (const auto& s : traj) {
      if (std::abs(s.x(kPhi)) >= 0.01) last_out = s.t;
    }
    r.final_phi = traj.back().x(kPhi);
    r.settle_time = last_out;
    r.stabilization_pass = last_out < 2.0;
  } catch (const RuntimeFailure& e) {
    r.failures.push_back(std::string("stabilization: ") + e.what());
  }
  try {
    const double duration = 5.0;
    const auto traj = simulate_wip_closed_loop(cfg, Vec4::Zero(), [v_ref](double) { return v_ref; }, duration);
    double sum = 0.0;
    int n = 0;
    for (const auto& s : traj) {
      if (s.t >= duration - 1.0) {
        sum += s.x(kRDot);
        ++n;
      }
    }
    r.tracking_mean = sum / n;
    r.tracking_pass = *r.tracking_mean >= 0.8 * v_ref && *r.tracking_mean <= 1.2 * v_ref;
  } catch (const RuntimeFailure& e) {
    r.failures.push_back(std::string("tracking: ") + e.what());
  }
  try {
    const Profile step = [v_ref](double t) { return t < 0.3 ? 0.0 : v_ref; };
    const auto warm = simulate_wip_closed_loop(cfg, Vec4(0, phi0, 0, 0), step, 1.0, {}, true);
    const auto cold = simulate_wip_closed_loop(cfg, Vec4(0, phi0, 0, 0), step, 1.0, {}, false);
    std::vector<int> wi, ci;
    for (std::size_t i = 0; i + 1 < warm.size(); ++i) wi.push_back(warm[i].iterations);
    for (std::size_t i = 0; i + 1 < cold.size(); ++i) ci.push_back(cold[i].iterations);
    r.median_warm = median_of(wi);
    r.median_cold = median_of(ci);
    r.warm_start_pass = r.median_warm <= r.median_cold;
  } catch (const RuntimeFailure& e) {
    r.failures.push_back(std::string("warm_start: ") + e.what());
  }
  return r;
}

}  // namespace deskavoid::mpc
