#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "tubedagger/errors.hpp"
#include "tubedagger/rng.hpp"

namespace tubedagger {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

enum class EnvId { navigation2d, inverted_pendulum, vanderpol };

inline std::string to_string(EnvId id) {
  switch (id) {
    case EnvId::navigation2d: return "navigation2d";
    case EnvId::inverted_pendulum: return "inverted_pendulum";
    case EnvId::vanderpol: return "vanderpol";
  }
  return "unknown";
}

inline EnvId env_from_string(const std::string& name) {
  if (name == "navigation2d") return EnvId::navigation2d;
  if (name == "inverted_pendulum") return EnvId::inverted_pendulum;
  if (name == "vanderpol") return EnvId::vanderpol;
  throw ConfigError("unknown environment id: " + name);
}

struct Interval {
  double lo;
  double hi;
};

struct SystemSpec {
  EnvId id;
  int state_dim;
  int action_dim;
  double dt;
  int horizon;
  std::vector<Interval> action_bounds;
  Vec start_center;
  double start_radius;

  void validate() const {
    if (state_dim < 1 || action_dim < 1) {
      throw ConfigError("state_dim and action_dim must be >= 1");
    }
    if (dt <= 0.0) throw ConfigError("dt must be positive");
    if (horizon < 1) throw ConfigError("horizon must be >= 1");
    if (start_radius < 0.0) throw ConfigError("start_radius must be >= 0");
    if (static_cast<int>(action_bounds.size()) != action_dim) {
      throw ConfigError("action_bounds size must equal action_dim");
    }
    for (const Interval& b : action_bounds) {
      if (!(b.lo < b.hi)) throw ConfigError("action bound lower must be < upper");
    }
    if (start_center.size() != state_dim) {
      throw ConfigError("start_center dimension mismatch");
    }
  }
};

struct Trajectory {
  std::vector<Vec> states;   // length = steps + 1
  std::vector<Vec> actions;  // length = steps
  std::vector<double> times; // length = steps + 1
  double episode_reward = 0.0;
};

// ---------------------------------------------------------------------------
// Integration
// ---------------------------------------------------------------------------

// One classical 4th-order Runge-Kutta step of ẋ = f(x, u) with u held
// constant over the step (zero-order hold).
template <typename F>
Vec rk4_step(F&& f, const Vec& x, const Vec& u, double dt) {
  const Vec k1 = f(x, u);
  const Vec k2 = f(x + (0.5 * dt) * k1, u);
  const Vec k3 = f(x + (0.5 * dt) * k2, u);
  const Vec k4 = f(x + dt * k3, u);
  return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

// ---------------------------------------------------------------------------
// System concept
// ---------------------------------------------------------------------------

// A controlled ODE system: immutable after construction, all member
// functions pure.  `step_reward(prev, action, next)` is the dense per-step
// reward; `goal`/`goal_bonus` implement an optional one-time terminal bonus
// granted by `rollout` on first entry into the goal region.
template <typename S>
concept ControlledSystem = requires(const S& sys, const Vec& x, const Vec& u) {
  { sys.spec() } -> std::convertible_to<const SystemSpec&>;
  { sys.dynamics(x, u) } -> std::convertible_to<Vec>;
  { sys.failure(x) } -> std::convertible_to<bool>;
  { sys.step_reward(x, u, x) } -> std::convertible_to<double>;
  { sys.goal(x) } -> std::convertible_to<bool>;
  { sys.goal_bonus() } -> std::convertible_to<double>;
  { sys.solved_threshold() } -> std::convertible_to<double>;
};

// ---------------------------------------------------------------------------
// Environments
// ---------------------------------------------------------------------------

// Planar point agent with direct velocity commands.  Start on the right,
// goal region on the left, two axis-aligned wall rectangles forming a
// doorway at the origin that the agent must pass through.
class Navigation2d {
 public:
  Navigation2d() {
    spec_.id = EnvId::navigation2d;
    spec_.state_dim = 2;
    spec_.action_dim = 2;
    spec_.dt = 0.05;
    spec_.horizon = 240;
    spec_.action_bounds = {{-1.0, 1.0}, {-1.0, 1.0}};
    spec_.start_center = (Vec(2) << 4.0, 0.0).finished();
    spec_.start_radius = 0.1;
    spec_.validate();
  }

  const SystemSpec& spec() const { return spec_; }

  Vec dynamics(const Vec&, const Vec& u) const { return kSpeed * u; }

  // Strict interior of either wall rectangle counts as a collision.
  bool failure(const Vec& x) const {
    return inside(wall_upper_, x) || inside(wall_lower_, x);
  }

  double step_reward(const Vec&, const Vec&, const Vec& next) const {
    return -(next.head<2>() - goal_center_).norm() * spec_.dt;
  }

  bool goal(const Vec& x) const {
    return (x.head<2>() - goal_center_).norm() <= kGoalRadius;
  }

  double goal_bonus() const { return 100.0; }

  double solved_threshold() const { return 40.0; }

  // Geometry accessors (plotting, tests).
  struct Rect { double x_lo, x_hi, y_lo, y_hi; };
  const Rect& wall_upper() const { return wall_upper_; }
  const Rect& wall_lower() const { return wall_lower_; }
  Vec goal_center() const { return goal_center_; }
  double goal_radius() const { return kGoalRadius; }

 private:
  static bool inside(const Rect& r, const Vec& x) {
    return x(0) > r.x_lo && x(0) < r.x_hi && x(1) > r.y_lo && x(1) < r.y_hi;
  }

  static constexpr double kSpeed = 1.0;
  static constexpr double kGoalRadius = 0.4;
  SystemSpec spec_;
  Rect wall_upper_{-0.6, 0.6, 0.7, 5.0};
  Rect wall_lower_{-0.6, 0.6, -5.0, -0.7};
  Vec goal_center_ = (Vec(2) << -4.0, 0.0).finished();
};

// Cart-pole with continuous force input.  State (cart position, cart
// velocity, pole angle, pole angular velocity); pole length below is the
// half-length of the pole.
class InvertedPendulum {
 public:
  InvertedPendulum() {
    spec_.id = EnvId::inverted_pendulum;
    spec_.state_dim = 4;
    spec_.action_dim = 1;
    spec_.dt = 0.01;
    spec_.horizon = 1000;
    spec_.action_bounds = {{-10.0, 10.0}};
    spec_.start_center = Vec::Zero(4);
    spec_.start_radius = 0.1;
    spec_.validate();
  }

  const SystemSpec& spec() const { return spec_; }

  Vec dynamics(const Vec& x, const Vec& u) const {
    const double force = u(0);
    const double sin_th = std::sin(x(2));
    const double cos_th = std::cos(x(2));
    const double omega = x(3);
    const double total_mass = kMassCart + kMassPole;
    const double temp =
        (force + kMassPole * kLength * omega * omega * sin_th) / total_mass;
    const double theta_acc =
        (kGravity * sin_th - cos_th * temp) /
        (kLength * (4.0 / 3.0 - kMassPole * cos_th * cos_th / total_mass));
    const double x_acc = temp - kMassPole * kLength * theta_acc * cos_th / total_mass;
    Vec dx(4);
    dx << x(1), x_acc, omega, theta_acc;
    return dx;
  }

  bool failure(const Vec& x) const {
    return std::abs(x(2)) > kAngleLimit || std::abs(x(0)) > kPositionLimit;
  }

  // One reward unit per surviving step.
  double step_reward(const Vec&, const Vec&, const Vec& next) const {
    return failure(next) ? 0.0 : 1.0;
  }

  bool goal(const Vec&) const { return false; }
  double goal_bonus() const { return 0.0; }
  double solved_threshold() const { return 1000.0; }

 private:
  static constexpr double kGravity = 9.8;
  static constexpr double kMassCart = 1.0;
  static constexpr double kMassPole = 0.1;
  static constexpr double kLength = 0.5;
  static constexpr double kAngleLimit = 0.2;
  static constexpr double kPositionLimit = 2.4;
  SystemSpec spec_;
};

// Van der Pol oscillator with additive control on the second coordinate.
class VanDerPol {
 public:
  VanDerPol() {
    spec_.id = EnvId::vanderpol;
    spec_.state_dim = 2;
    spec_.action_dim = 1;
    spec_.dt = 0.01;
    spec_.horizon = 500;
    spec_.action_bounds = {{-6.0, 6.0}};
    spec_.start_center = (Vec(2) << 1.0, 0.0).finished();
    spec_.start_radius = 0.1;
    spec_.validate();
  }

  const SystemSpec& spec() const { return spec_; }

  Vec dynamics(const Vec& x, const Vec& u) const {
    Vec dx(2);
    dx << x(1), (1.0 - x(0) * x(0)) * x(1) - x(0) + u(0);
    return dx;
  }

  bool failure(const Vec& x) const { return x.cwiseAbs().maxCoeff() > 4.0; }

  double step_reward(const Vec&, const Vec&, const Vec& next) const {
    return -next.squaredNorm() * spec_.dt;
  }

  bool goal(const Vec&) const { return false; }
  double goal_bonus() const { return 0.0; }
  double solved_threshold() const { return -2.0; }

 private:
  SystemSpec spec_;
};

// ---------------------------------------------------------------------------
// Episode machinery
// ---------------------------------------------------------------------------

template <ControlledSystem S>
Vec clamp_action(const S& sys, Vec u) {
  const auto& bounds = sys.spec().action_bounds;
  if (u.size() != static_cast<Eigen::Index>(bounds.size())) {
    throw ShapeError("action dimension mismatch");
  }
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    u(i) = std::clamp(u(i), bounds[i].lo, bounds[i].hi);
  }
  return u;
}

// Advance one dt.  The action is clamped to the system's bounds first; the
// clamped value is what the dynamics see (and what rollout records).
template <ControlledSystem S>
Vec step(const S& sys, const Vec& x, const Vec& u, int step_index = 0) {
  if (x.size() != sys.spec().state_dim) throw ShapeError("state dimension mismatch");
  const Vec uc = clamp_action(sys, u);
  Vec next = rk4_step([&sys](const Vec& s, const Vec& a) { return sys.dynamics(s, a); },
                      x, uc, sys.spec().dt);
  if (!next.allFinite()) throw IntegrationDiverged(step_index);
  return next;
}

namespace detail {
template <typename P>
Vec invoke_policy(const P& policy, const Vec& x) {
  if constexpr (requires { policy.act(x); }) {
    return policy.act(x);
  } else {
    return policy(x);
  }
}
}  // namespace detail

// Closed-loop flow: the state after `steps` steps under `policy`.
template <ControlledSystem S, typename P>
Vec flow(const S& sys, const Vec& x0, const P& policy, int steps) {
  Vec x = x0;
  for (int t = 0; t < steps; ++t) {
    x = step(sys, x, detail::invoke_policy(policy, x), t);
  }
  return x;
}

// Full-horizon closed-loop rollout.  Early termination only on the
// environment failure predicate; the failing state is recorded as the last
// state.  The goal bonus (if the environment defines one) is granted once,
// on first entry into the goal region.
template <ControlledSystem S, typename P>
Trajectory rollout(const S& sys, const P& policy, const Vec& x0) {
  const SystemSpec& spec = sys.spec();
  if (x0.size() != spec.state_dim) throw ShapeError("x0 dimension mismatch");
  Trajectory traj;
  traj.states.reserve(spec.horizon + 1);
  traj.actions.reserve(spec.horizon);
  traj.times.reserve(spec.horizon + 1);
  traj.states.push_back(x0);
  traj.times.push_back(0.0);
  bool bonus_granted = sys.goal(x0);
  Vec x = x0;
  for (int t = 0; t < spec.horizon; ++t) {
    const Vec u = clamp_action(sys, detail::invoke_policy(policy, x));
    const Vec next = step(sys, x, u, t);
    traj.actions.push_back(u);
    traj.states.push_back(next);
    traj.times.push_back((t + 1) * spec.dt);
    traj.episode_reward += sys.step_reward(x, u, next);
    if (!bonus_granted && sys.goal(next)) {
      traj.episode_reward += sys.goal_bonus();
      bonus_granted = true;
    }
    if (sys.failure(next)) break;
    x = next;
  }
  return traj;
}

// Uniform sample from the closed ball of initial states.
template <ControlledSystem S>
Vec sample_start(const S& sys, SplitRng& rng) {
  const SystemSpec& spec = sys.spec();
  Vec dir(spec.state_dim);
  for (int i = 0; i < spec.state_dim; ++i) dir(i) = rng.normal();
  const double norm = dir.norm();
  if (norm == 0.0) return spec.start_center;
  const double radius =
      spec.start_radius * std::pow(rng.uniform01(), 1.0 / spec.state_dim);
  return spec.start_center + (radius / norm) * dir;
}

// ---------------------------------------------------------------------------
// Runtime-selected environment (CLI boundary)
// ---------------------------------------------------------------------------

using AnyEnv = std::variant<Navigation2d, InvertedPendulum, VanDerPol>;

inline AnyEnv make_env(EnvId id) {
  switch (id) {
    case EnvId::navigation2d: return Navigation2d();
    case EnvId::inverted_pendulum: return InvertedPendulum();
    case EnvId::vanderpol: return VanDerPol();
  }
  throw ConfigError("unknown environment id");
}

inline const SystemSpec& spec_of(const AnyEnv& env) {
  return std::visit([](const auto& sys) -> const SystemSpec& { return sys.spec(); }, env);
}

// ---------------------------------------------------------------------------
// Trajectory CSV
// ---------------------------------------------------------------------------

// One row per executed step: time, the state the action was taken from, and
// the (clamped) action.  The terminal state has no action and is not dumped.
inline std::string trajectory_csv(const Trajectory& traj, char sep = ',') {
  const auto n = traj.actions.size();
  if (traj.states.size() != n + 1 || traj.times.size() != n + 1) {
    throw ShapeError("trajectory length bookkeeping violated");
  }
  const auto state_dim = traj.states.empty() ? 0 : traj.states[0].size();
  const auto action_dim = traj.actions.empty() ? 0 : traj.actions[0].size();
  std::ostringstream out;
  out << 't';
  for (Eigen::Index i = 0; i < state_dim; ++i) out << sep << 's' << i;
  for (Eigen::Index i = 0; i < action_dim; ++i) out << sep << 'a' << i;
  out << '\n';
  char buf[32];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << sep << buf;
  };
  for (std::size_t t = 0; t < n; ++t) {
    std::snprintf(buf, sizeof(buf), "%.17g", traj.times[t]);
    out << buf;
    for (Eigen::Index i = 0; i < state_dim; ++i) put(traj.states[t](i));
    for (Eigen::Index i = 0; i < action_dim; ++i) put(traj.actions[t](i));
    out << '\n';
  }
  return out.str();
}

}  // namespace tubedagger
