#pragma once

#include <Eigen/Dense>
#include <span>
#include <string>
#include <vector>

#include "tubedagger/errors.hpp"
#include "tubedagger/policies.hpp"

namespace tubedagger {

enum class Mode { Autonomous, Supervisor };
enum class Actor { Novice, Expert };

inline std::string to_string(Mode m) {
  return m == Mode::Autonomous ? "autonomous" : "supervisor";
}

// ---------------------------------------------------------------------------
// Gate configurations
// ---------------------------------------------------------------------------

struct TubeGateConfig {
  double beta_minus = 0.2;
  double beta_plus = 0.7;

  void validate() const {
    if (beta_plus == 0.0 && beta_minus == 0.0) {
      // Deliberate degenerate pair: the gate hands every visited state to
      // the expert and the loop reduces to behavioral cloning.
      return;
    }
    if (!(beta_plus > 0.0)) throw ConfigError("beta_plus must be > 0");
    if (!(beta_minus >= 0.0 && beta_minus < beta_plus)) {
      throw ConfigError("beta_minus must satisfy 0 <= beta_minus < beta_plus");
    }
  }
};

struct DoubtGateConfig {
  double tau_low = 0.1;
  double tau_high = 0.5;
  double tau_m = 0.0;  // 0 = substitute the environment default at run time

  void validate() const {
    if (!(tau_low < tau_high)) throw ConfigError("tau_low must be < tau_high");
    if (tau_m < 0.0) throw ConfigError("tau_m must be >= 0");
  }
};

struct VarianceGateConfig {
  double tau_low = 0.001;
  double tau_high = 0.01;

  void validate() const {
    if (!(tau_low < tau_high)) throw ConfigError("tau_low must be < tau_high");
  }
};

// ---------------------------------------------------------------------------
// Decision functions
// ---------------------------------------------------------------------------

struct GateDecision {
  Actor actor;
  Mode next_mode;
};

// Shared dual-threshold hysteresis: the expert acts while the mode is
// Supervisor or the signal exceeds `high`; an expert step releases back to
// Autonomous only once the signal is below `low`.  Both comparisons are
// strict, so signals equal to a threshold retain the current regime.
inline GateDecision hysteresis_gate(double signal, Mode mode, double low, double high) {
  const bool expert_acts = mode == Mode::Supervisor || signal > high;
  if (!expert_acts) return {Actor::Novice, Mode::Autonomous};
  return {Actor::Expert, signal < low ? Mode::Autonomous : Mode::Supervisor};
}

inline GateDecision tube_gate(double rho, Mode mode, const TubeGateConfig& cfg) {
  cfg.validate();
  if (!(rho >= 0.0)) throw ValidationError("tube membership value must be >= 0");
  return hysteresis_gate(rho, mode, cfg.beta_minus, cfg.beta_plus);
}

inline GateDecision doubt_gate(double doubt_prob, Mode mode, const DoubtGateConfig& cfg) {
  cfg.validate();
  if (!std::isfinite(doubt_prob)) throw ValidationError("doubt probability must be finite");
  return hysteresis_gate(doubt_prob, mode, cfg.tau_low, cfg.tau_high);
}

inline GateDecision variance_gate(double variance, Mode mode, const VarianceGateConfig& cfg) {
  cfg.validate();
  if (!(variance >= 0.0)) throw ValidationError("ensemble variance must be >= 0");
  return hysteresis_gate(variance, mode, cfg.tau_low, cfg.tau_high);
}

// Mean over action dimensions of the across-member population variance.
inline double ensemble_variance(std::span<const MlpPolicy> ensemble, const Vec& state) {
  if (ensemble.size() < 2) {
    throw InsufficientEnsemble("ensemble_variance needs at least 2 members");
  }
  const Eigen::Index dims = ensemble.front().output_dim();
  Mat outputs(dims, static_cast<Eigen::Index>(ensemble.size()));
  for (std::size_t i = 0; i < ensemble.size(); ++i) {
    outputs.col(static_cast<Eigen::Index>(i)) = ensemble[i].act(state);
  }
  const Vec mean = outputs.rowwise().mean();
  const double n = static_cast<double>(ensemble.size());
  return (outputs.colwise() - mean).squaredNorm() / (n * static_cast<double>(dims));
}

// ---------------------------------------------------------------------------
// Doubt-model labels
// ---------------------------------------------------------------------------

struct DoubtSample {
  Vec state;
  Vec novice_action;
  Vec expert_action;
};

struct LabeledSet {
  Mat states;  // one sample per column
  Vec labels;  // 1 = intervention needed, 0 = safe
};

// A state is safe (label 0) only when the novice's action is strictly
// within tau_m of the expert's; distance exactly tau_m is unsafe.
inline LabeledSet make_doubt_labels(const std::vector<DoubtSample>& samples, double tau_m) {
  LabeledSet out;
  if (samples.empty()) {
    out.states = Mat(0, 0);
    out.labels = Vec(0);
    return out;
  }
  const Eigen::Index dim = samples.front().state.size();
  out.states = Mat(dim, static_cast<Eigen::Index>(samples.size()));
  out.labels = Vec(static_cast<Eigen::Index>(samples.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const DoubtSample& s = samples[i];
    if (s.state.size() != dim || s.novice_action.size() != s.expert_action.size()) {
      throw ShapeError("make_doubt_labels: inhomogeneous sample shapes");
    }
    out.states.col(static_cast<Eigen::Index>(i)) = s.state;
    const double dist = (s.novice_action - s.expert_action).norm();
    out.labels(static_cast<Eigen::Index>(i)) = dist < tau_m ? 0.0 : 1.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Per-run gate bookkeeping
// ---------------------------------------------------------------------------

// Counts actions and control-regime transitions.  Each step records the
// acting party's regime (Expert -> Supervisor, Novice -> Autonomous); a
// context switch is an adjacent unequal pair in that recorded sequence.
// Episodes are bracketed by Autonomous control — the system starts each
// episode autonomous and control is handed back at the episode end — so an
// episode whose regime trace is S,A,S costs 4 switches, not 3.
struct GateState {
  Mode mode = Mode::Autonomous;
  long context_switches = 0;
  long expert_actions = 0;
  long novice_actions = 0;

  void begin_episode() {
    mode = Mode::Autonomous;
    last_regime_ = Mode::Autonomous;
  }

  void record(Actor actor) {
    const Mode regime = actor == Actor::Expert ? Mode::Supervisor : Mode::Autonomous;
    if (regime != last_regime_) ++context_switches;
    last_regime_ = regime;
    if (actor == Actor::Expert) ++expert_actions;
    else ++novice_actions;
  }

  void end_episode() {
    if (last_regime_ != Mode::Autonomous) ++context_switches;
    last_regime_ = Mode::Autonomous;
    mode = Mode::Autonomous;
  }

 private:
  Mode last_regime_ = Mode::Autonomous;
};

}  // namespace tubedagger
