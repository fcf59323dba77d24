#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tubedagger/envs.hpp"
#include "tubedagger/errors.hpp"
#include "tubedagger/gating.hpp"
#include "tubedagger/json_util.hpp"
#include "tubedagger/policies.hpp"
#include "tubedagger/reachtube.hpp"
#include "tubedagger/rng.hpp"

namespace tubedagger {

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

// Aggregated (state, expert action) pairs.  Append-only during a run.
struct Dataset {
  std::vector<Vec> states;
  std::vector<Vec> actions;

  std::size_t size() const { return states.size(); }

  void append(const Vec& state, const Vec& action) {
    if (!states.empty() &&
        (state.size() != states.front().size() || action.size() != actions.front().size())) {
      throw ShapeError("dataset samples must have homogeneous shapes");
    }
    states.push_back(state);
    actions.push_back(action);
  }

  Mat states_matrix() const {
    if (states.empty()) return Mat(0, 0);
    Mat m(states.front().size(), static_cast<Eigen::Index>(states.size()));
    for (std::size_t i = 0; i < states.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = states[i];
    return m;
  }

  Mat actions_matrix() const {
    if (actions.empty()) return Mat(0, 0);
    Mat m(actions.front().size(), static_cast<Eigen::Index>(actions.size()));
    for (std::size_t i = 0; i < actions.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = actions[i];
    return m;
  }
};

// ---------------------------------------------------------------------------
// Run configuration and metrics
// ---------------------------------------------------------------------------

struct TrainConfig {
  int episodes = 40;
  int horizon = 0;        // 0 = use the environment horizon
  double sigma2 = 0.01;   // variance of the noise on executed expert actions
  TubeGateConfig tube_gate;
  DoubtGateConfig doubt_gate;
  VarianceGateConfig variance_gate;
  SgdOpts optimizer;
  int eval_episodes = 5;
  double solved_threshold = std::nan("");  // NaN = use the environment default
  std::uint64_t seed = 0;
  // Optional pure-expert episodes appended to D before the interactive loop
  // (offline seeding; interventions are not counted for these).
  int init_demo_episodes = 0;

  void validate() const {
    if (episodes < 1) throw ConfigError("episodes must be >= 1");
    if (eval_episodes < 1) throw ConfigError("eval_episodes must be >= 1");
    if (horizon < 0) throw ConfigError("horizon must be >= 0");
    if (sigma2 < 0.0) throw ConfigError("sigma2 must be >= 0");
    if (init_demo_episodes < 0) throw ConfigError("init_demo_episodes must be >= 0");
    optimizer.validate();
  }
};

struct MetricsRecord {
  int episode = 0;
  double eval_reward_median = 0.0;
  double eval_reward_std = 0.0;
  double combined_reward = 0.0;  // gated agent's reward during collection
  long context_switches_cum = 0;
  long expert_actions_cum = 0;
  double novice_action_pct = 0.0;  // share of novice actions this episode, in %
  std::size_t dataset_size = 0;
  bool solved = false;  // sticky: stays true once the eval median reaches the threshold
};

inline constexpr const char* kMetricsCsvHeader =
    "episode,eval_reward_median,eval_reward_std,combined_reward,"
    "context_switches_cum,expert_actions_cum,novice_action_pct,dataset_size,solved";

inline std::string metrics_csv(const std::vector<MetricsRecord>& series) {
  std::string out(kMetricsCsvHeader);
  out += '\n';
  for (const MetricsRecord& m : series) {
    out += std::to_string(m.episode);
    out += ',';
    out += fmt17(m.eval_reward_median);
    out += ',';
    out += fmt17(m.eval_reward_std);
    out += ',';
    out += fmt17(m.combined_reward);
    out += ',';
    out += std::to_string(m.context_switches_cum);
    out += ',';
    out += std::to_string(m.expert_actions_cum);
    out += ',';
    out += fmt17(m.novice_action_pct);
    out += ',';
    out += std::to_string(m.dataset_size);
    out += ',';
    out += m.solved ? '1' : '0';
    out += '\n';
  }
  return out;
}

inline std::vector<MetricsRecord> parse_metrics_csv(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t end = text.find('\n', pos);
    const std::size_t stop = end == std::string_view::npos ? text.size() : end;
    if (stop > pos) lines.push_back(text.substr(pos, stop - pos));
    pos = stop + 1;
  }
  if (lines.empty() || lines.front() != kMetricsCsvHeader) {
    throw ValidationError("metrics csv: missing or unexpected header");
  }
  std::vector<MetricsRecord> series;
  for (std::size_t row = 1; row < lines.size(); ++row) {
    std::vector<std::string> fields;
    std::string cell;
    for (const char c : lines[row]) {
      if (c == ',') {
        fields.push_back(cell);
        cell.clear();
      } else {
        cell += c;
      }
    }
    fields.push_back(cell);
    if (fields.size() != 9) throw ValidationError("metrics csv: wrong column count");
    const auto to_double = [&](const std::string& s) {
      char* end = nullptr;
      const double v = std::strtod(s.c_str(), &end);
      if (end == s.c_str() || *end != '\0' || !std::isfinite(v)) {
        throw ValidationError("metrics csv: malformed number: " + s);
      }
      return v;
    };
    MetricsRecord m;
    m.episode = static_cast<int>(to_double(fields[0]));
    m.eval_reward_median = to_double(fields[1]);
    m.eval_reward_std = to_double(fields[2]);
    m.combined_reward = to_double(fields[3]);
    m.context_switches_cum = static_cast<long>(to_double(fields[4]));
    m.expert_actions_cum = static_cast<long>(to_double(fields[5]));
    m.novice_action_pct = to_double(fields[6]);
    m.dataset_size = static_cast<std::size_t>(to_double(fields[7]));
    if (fields[8] != "0" && fields[8] != "1") {
      throw ValidationError("metrics csv: solved flag must be 0 or 1");
    }
    m.solved = fields[8] == "1";
    if (m.novice_action_pct < 0.0 || m.novice_action_pct > 100.0) {
      throw ValidationError("metrics csv: novice_action_pct out of [0,100]");
    }
    series.push_back(m);
  }
  return series;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalResult {
  double median = 0.0;
  double stddev = 0.0;  // population standard deviation
};

// Novice-only evaluation: seeded starts inside the start ball, no gate, no
// expert.  Returns the median episode reward and the population stddev.
template <ControlledSystem S, typename P>
EvalResult evaluate_policy(const S& sys, const P& policy, int n_episodes,
                           std::uint64_t seed) {
  if (n_episodes < 1) throw ConfigError("evaluation needs at least 1 episode");
  SplitRng rng = SplitRng(seed).split("eval");
  std::vector<double> rewards;
  rewards.reserve(n_episodes);
  for (int i = 0; i < n_episodes; ++i) {
    rewards.push_back(rollout(sys, policy, sample_start(sys, rng)).episode_reward);
  }
  std::vector<double> sorted = rewards;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  EvalResult result;
  result.median =
      n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  double mean = 0.0;
  for (const double r : rewards) mean += r;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (const double r : rewards) var += (r - mean) * (r - mean);
  result.stddev = std::sqrt(var / static_cast<double>(n));
  return result;
}

// ---------------------------------------------------------------------------
// Gated collection episode (shared by all interactive loops)
// ---------------------------------------------------------------------------

namespace detail {

struct EpisodeOutcome {
  double combined_reward = 0.0;
  int steps = 0;
  long expert_steps = 0;
  long novice_steps = 0;
  std::vector<Vec> visited;  // every state an action was taken in, in order
};

// One collection episode under a gate.  Expert steps append the clamped
// expert action to D and execute a noised copy of it; novice steps execute
// the novice action directly.  Reward accounting mirrors rollout (goal bonus
// once, stop on failure).
template <ControlledSystem S, typename E, typename GateFn, typename SignalFn,
          typename NoviceFn>
EpisodeOutcome run_gated_episode(const S& sys, const E& expert, GateFn&& gate,
                                 SignalFn&& signal, NoviceFn&& novice_act,
                                 const Vec& start, int horizon,
                                 const NoiseConfig& noise, SplitRng& rng,
                                 GateState& gate_state, Dataset& data) {
  EpisodeOutcome out;
  Vec x = start;
  gate_state.begin_episode();
  bool bonus_granted = sys.goal(x);
  out.visited.reserve(static_cast<std::size_t>(horizon));
  for (int t = 0; t < horizon; ++t) {
    out.visited.push_back(x);
    const GateDecision decision = gate(signal(t, x), gate_state.mode);
    Vec executed;
    if (decision.actor == Actor::Expert) {
      const Vec a_star = clamp_action(sys, detail::invoke_policy(expert, x));
      data.append(x, a_star);
      executed = noisy_action(a_star, noise, rng);
      ++out.expert_steps;
    } else {
      executed = novice_act(x);
      ++out.novice_steps;
    }
    gate_state.record(decision.actor);
    gate_state.mode = decision.next_mode;
    const Vec u = clamp_action(sys, executed);
    const Vec next = step(sys, x, u, t);
    out.combined_reward += sys.step_reward(x, u, next);
    if (!bonus_granted && sys.goal(next)) {
      out.combined_reward += sys.goal_bonus();
      bonus_granted = true;
    }
    ++out.steps;
    if (sys.failure(next)) break;
    x = next;
  }
  gate_state.end_episode();
  return out;
}

// Pure-expert demonstration episodes appended to D (offline seeding).
template <ControlledSystem S, typename E>
void collect_demos(const S& sys, const E& expert, int episodes, SplitRng& rng,
                   Dataset& data) {
  for (int i = 0; i < episodes; ++i) {
    const Trajectory traj = rollout(sys, expert, sample_start(sys, rng));
    for (std::size_t t = 0; t < traj.actions.size(); ++t) {
      data.append(traj.states[t], traj.actions[t]);
    }
  }
}

template <ControlledSystem S>
double effective_threshold(const S& sys, const TrainConfig& cfg) {
  return std::isnan(cfg.solved_threshold) ? sys.solved_threshold()
                                          : cfg.solved_threshold;
}

inline MetricsRecord make_record(int episode, const EvalResult& eval,
                                 const EpisodeOutcome& outcome,
                                 const GateState& gate_state, std::size_t dataset_size,
                                 bool solved) {
  MetricsRecord m;
  m.episode = episode;
  m.eval_reward_median = eval.median;
  m.eval_reward_std = eval.stddev;
  m.combined_reward = outcome.combined_reward;
  m.context_switches_cum = gate_state.context_switches;
  m.expert_actions_cum = gate_state.expert_actions;
  const long total = outcome.expert_steps + outcome.novice_steps;
  m.novice_action_pct =
      total == 0 ? 0.0
                 : 100.0 * static_cast<double>(outcome.novice_steps) /
                       static_cast<double>(total);
  m.dataset_size = dataset_size;
  m.solved = solved;
  return m;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Interactive training loops
// ---------------------------------------------------------------------------

struct TrainOutput {
  MlpPolicy novice;
  std::vector<MetricsRecord> metrics;
};

struct LazyTrainOutput {
  MlpPolicy novice;
  MlpPolicy doubt;
  std::vector<MetricsRecord> metrics;
};

struct EnsembleTrainOutput {
  std::vector<MlpPolicy> ensemble;
  std::vector<MetricsRecord> metrics;
};

// Reach-tube gated imitation learning.  Per step the tube membership of the
// current state (against the step-aligned slice) drives the hysteresis gate;
// expert steps grow D and after every episode the novice is refit to D under
// MSE.  When demonstration episodes seed D, the novice is fit to them once
// before the first gated episode — it deploys already imitating the expert
// instead of spending episode 0 as a blank net.  The run is marked solved at
// the first episode whose eval median reaches the threshold; the loop always
// continues to the episode budget.
template <ControlledSystem S, typename E>
TrainOutput tubedagger_train(const S& sys, const E& expert, MlpPolicy novice,
                             const ReachTube& tube, const TrainConfig& cfg) {
  cfg.validate();
  cfg.tube_gate.validate();
  tube.validate();
  const SystemSpec& spec = sys.spec();
  const int horizon = cfg.horizon > 0 ? cfg.horizon : spec.horizon;
  if (tube.source.env != to_string(spec.id)) {
    throw ConfigError("tube was built for a different environment");
  }
  if (tube.horizon() < horizon) {
    throw ConfigError("tube horizon is shorter than the training horizon");
  }
  const Eigen::Index query_dim =
      spec.state_dim + (tube.source.augmented ? spec.action_dim : 0);
  if (tube.slices.front().c.size() != query_dim) {
    throw ConfigError("tube slice dimension does not match the environment");
  }
  if (tube.slices[1].tau != spec.dt) {
    throw ConfigError("tube was built on a different time grid");
  }

  SplitRng root(cfg.seed);
  SplitRng collect_rng = root.split("collect");
  SplitRng train_rng = root.split("train");
  SplitRng eval_rng = root.split("eval");
  SplitRng demo_rng = root.split("demos");

  const double threshold = detail::effective_threshold(sys, cfg);
  const NoiseConfig noise{cfg.sigma2};
  Dataset data;
  detail::collect_demos(sys, expert, cfg.init_demo_episodes, demo_rng, data);
  if (data.size() > 0 && cfg.optimizer.epochs > 0) {
    novice = fit_mse(std::move(novice), data.states_matrix(), data.actions_matrix(),
                     cfg.optimizer, train_rng)
                 .first;
  }

  GateState gate_state;
  std::vector<MetricsRecord> series;
  bool solved = false;
  for (int ep = 0; ep < cfg.episodes; ++ep) {
    const Vec start = sample_start(sys, collect_rng);
    const auto signal = [&](int t, const Vec& x) {
      if (!tube.source.augmented) return membership(tube.slices[t], x);
      Vec q(query_dim);
      q << x, novice.act(x);
      return membership(tube.slices[t], q);
    };
    const auto gate = [&](double rho, Mode mode) {
      return tube_gate(rho, mode, cfg.tube_gate);
    };
    const auto novice_act = [&](const Vec& x) { return novice.act(x); };
    const detail::EpisodeOutcome outcome = detail::run_gated_episode(
        sys, expert, gate, signal, novice_act, start, horizon, noise, collect_rng,
        gate_state, data);
    if (data.size() > 0 && cfg.optimizer.epochs > 0) {
      novice = fit_mse(std::move(novice), data.states_matrix(), data.actions_matrix(),
                       cfg.optimizer, train_rng)
                   .first;
    }
    const EvalResult eval =
        evaluate_policy(sys, novice, cfg.eval_episodes, eval_rng.next_u64());
    solved = solved || eval.median >= threshold;
    series.push_back(
        detail::make_record(ep, eval, outcome, gate_state, data.size(), solved));
  }
  return {std::move(novice), std::move(series)};
}

// Doubt-model gated imitation learning.  The gate signal is the doubt net's
// predicted probability that the novice strays from the expert.  Its training
// set covers every state visited so far — demonstrations plus both segments
// of each gated episode — because the novice-driven stretches are exactly
// where future interventions must be predicted; the expert is queried offline
// for the reference action at each of them.  Labels are recomputed each
// episode against the novice that just acted (its refit happens afterwards),
// so a state flips back to "safe" once the novice has mastered it.  As in the
// tube loop, demonstration episodes that seed D also pre-fit the novice.
template <ControlledSystem S, typename E>
LazyTrainOutput lazydagger_train(const S& sys, const E& expert, MlpPolicy novice,
                                 MlpPolicy doubt, const TrainConfig& cfg) {
  cfg.validate();
  cfg.doubt_gate.validate();
  const SystemSpec& spec = sys.spec();
  const int horizon = cfg.horizon > 0 ? cfg.horizon : spec.horizon;
  if (doubt.output_dim() != 1 || doubt.head != OutputHead::sigmoid) {
    throw ConfigError("doubt model must be a single-output sigmoid classifier");
  }
  if (doubt.input_dim() != spec.state_dim) {
    throw ConfigError("doubt model input must match the state dimension");
  }
  const double tau_m =
      cfg.doubt_gate.tau_m > 0.0 ? cfg.doubt_gate.tau_m : default_tau_m(spec);

  SplitRng root(cfg.seed);
  SplitRng collect_rng = root.split("collect");
  SplitRng train_rng = root.split("train");
  SplitRng doubt_rng = root.split("doubt");
  SplitRng eval_rng = root.split("eval");
  SplitRng demo_rng = root.split("demos");

  const double threshold = detail::effective_threshold(sys, cfg);
  const NoiseConfig noise{cfg.sigma2};
  Dataset data;
  detail::collect_demos(sys, expert, cfg.init_demo_episodes, demo_rng, data);
  if (data.size() > 0 && cfg.optimizer.epochs > 0) {
    novice = fit_mse(std::move(novice), data.states_matrix(), data.actions_matrix(),
                     cfg.optimizer, train_rng)
                 .first;
  }

  // Visited states with the expert's clean reference action, queried offline;
  // seeded from the demonstrations, extended by every gated episode.
  std::vector<Vec> doubt_states = data.states;
  std::vector<Vec> doubt_expert = data.actions;

  GateState gate_state;
  std::vector<MetricsRecord> series;
  bool solved = false;
  for (int ep = 0; ep < cfg.episodes; ++ep) {
    const Vec start = sample_start(sys, collect_rng);
    const auto signal = [&](int, const Vec& x) { return doubt.act(x)(0); };
    const auto gate = [&](double prob, Mode mode) {
      return doubt_gate(prob, mode, cfg.doubt_gate);
    };
    const auto novice_act = [&](const Vec& x) { return novice.act(x); };
    const detail::EpisodeOutcome outcome = detail::run_gated_episode(
        sys, expert, gate, signal, novice_act, start, horizon, noise, collect_rng,
        gate_state, data);
    for (const Vec& s : outcome.visited) {
      doubt_states.push_back(s);
      doubt_expert.push_back(clamp_action(sys, detail::invoke_policy(expert, s)));
    }
    if (!doubt_states.empty() && cfg.optimizer.epochs > 0) {
      std::vector<DoubtSample> samples;
      samples.reserve(doubt_states.size());
      for (std::size_t i = 0; i < doubt_states.size(); ++i) {
        samples.push_back({doubt_states[i], novice.act(doubt_states[i]), doubt_expert[i]});
      }
      if (data.size() > 0) {
        novice = fit_mse(std::move(novice), data.states_matrix(), data.actions_matrix(),
                         cfg.optimizer, train_rng)
                     .first;
      }
      const LabeledSet labeled = make_doubt_labels(samples, tau_m);
      doubt = fit_bce(std::move(doubt), labeled.states, labeled.labels, cfg.optimizer,
                      doubt_rng)
                  .first;
    }
    const EvalResult eval =
        evaluate_policy(sys, novice, cfg.eval_episodes, eval_rng.next_u64());
    solved = solved || eval.median >= threshold;
    series.push_back(
        detail::make_record(ep, eval, outcome, gate_state, data.size(), solved));
  }
  return {std::move(novice), std::move(doubt), std::move(series)};
}

// Policy adapter exposing the mean action of an ensemble.
struct EnsembleMeanPolicy {
  const std::vector<MlpPolicy>* members = nullptr;

  Vec act(const Vec& x) const {
    Vec sum = Vec::Zero((*members)[0].output_dim());
    for (const MlpPolicy& m : *members) sum += m.act(x);
    return sum / static_cast<double>(members->size());
  }
};

// Ensemble-variance gated imitation learning: the across-member action
// variance drives the gate, all members train on the shared D (separately
// seeded shuffles), and the deployed action is the ensemble mean.
template <ControlledSystem S, typename E>
EnsembleTrainOutput ensembledagger_train(const S& sys, const E& expert,
                                         std::vector<MlpPolicy> ensemble,
                                         const TrainConfig& cfg) {
  cfg.validate();
  cfg.variance_gate.validate();
  if (ensemble.size() < 2) {
    throw InsufficientEnsemble("ensembledagger_train needs at least 2 members");
  }
  const SystemSpec& spec = sys.spec();
  const int horizon = cfg.horizon > 0 ? cfg.horizon : spec.horizon;

  SplitRng root(cfg.seed);
  SplitRng collect_rng = root.split("collect");
  SplitRng eval_rng = root.split("eval");
  SplitRng demo_rng = root.split("demos");
  std::vector<SplitRng> member_rngs;
  member_rngs.reserve(ensemble.size());
  for (std::size_t i = 0; i < ensemble.size(); ++i) {
    member_rngs.push_back(root.split("train").split(static_cast<std::uint64_t>(i)));
  }

  const double threshold = detail::effective_threshold(sys, cfg);
  const NoiseConfig noise{cfg.sigma2};
  Dataset data;
  detail::collect_demos(sys, expert, cfg.init_demo_episodes, demo_rng, data);
  if (data.size() > 0 && cfg.optimizer.epochs > 0) {
    const Mat demo_states = data.states_matrix();
    const Mat demo_actions = data.actions_matrix();
    for (std::size_t i = 0; i < ensemble.size(); ++i) {
      ensemble[i] = fit_mse(std::move(ensemble[i]), demo_states, demo_actions,
                            cfg.optimizer, member_rngs[i])
                        .first;
    }
  }

  const EnsembleMeanPolicy mean_policy{&ensemble};
  GateState gate_state;
  std::vector<MetricsRecord> series;
  bool solved = false;
  for (int ep = 0; ep < cfg.episodes; ++ep) {
    const Vec start = sample_start(sys, collect_rng);
    const auto signal = [&](int, const Vec& x) {
      return ensemble_variance(std::span<const MlpPolicy>(ensemble), x);
    };
    const auto gate = [&](double variance, Mode mode) {
      return variance_gate(variance, mode, cfg.variance_gate);
    };
    const auto novice_act = [&](const Vec& x) { return mean_policy.act(x); };
    const detail::EpisodeOutcome outcome = detail::run_gated_episode(
        sys, expert, gate, signal, novice_act, start, horizon, noise, collect_rng,
        gate_state, data);
    if (data.size() > 0 && cfg.optimizer.epochs > 0) {
      const Mat states = data.states_matrix();
      const Mat actions = data.actions_matrix();
      for (std::size_t i = 0; i < ensemble.size(); ++i) {
        ensemble[i] = fit_mse(std::move(ensemble[i]), states, actions, cfg.optimizer,
                              member_rngs[i])
                          .first;
      }
    }
    const EvalResult eval =
        evaluate_policy(sys, mean_policy, cfg.eval_episodes, eval_rng.next_u64());
    solved = solved || eval.median >= threshold;
    series.push_back(
        detail::make_record(ep, eval, outcome, gate_state, data.size(), solved));
  }
  return {std::move(ensemble), std::move(series)};
}

// Offline baseline: collect pure expert episodes, train once, evaluate once.
// The metrics series holds a single record whose combined_reward is the mean
// demonstration reward (all collection actions are the expert's).
template <ControlledSystem S, typename E>
TrainOutput behavioral_cloning(const S& sys, const E& expert, MlpPolicy novice,
                               int n_demos, const TrainConfig& cfg) {
  cfg.validate();
  if (n_demos < 1) throw ConfigError("behavioral cloning needs n_demos >= 1");

  SplitRng root(cfg.seed);
  SplitRng demo_rng = root.split("demos");
  SplitRng train_rng = root.split("train");
  SplitRng eval_rng = root.split("eval");

  const double threshold = detail::effective_threshold(sys, cfg);
  Dataset data;
  // No gate runs in behavioral cloning, so no context switches are counted;
  // the demonstrations still show up as expert actions.
  GateState gate_state;
  detail::EpisodeOutcome totals;
  double reward_sum = 0.0;
  for (int i = 0; i < n_demos; ++i) {
    const Trajectory traj = rollout(sys, expert, sample_start(sys, demo_rng));
    for (std::size_t t = 0; t < traj.actions.size(); ++t) {
      data.append(traj.states[t], traj.actions[t]);
      ++gate_state.expert_actions;
      ++totals.expert_steps;
    }
    reward_sum += traj.episode_reward;
  }
  totals.combined_reward = reward_sum / static_cast<double>(n_demos);
  if (cfg.optimizer.epochs > 0) {
    novice = fit_mse(std::move(novice), data.states_matrix(), data.actions_matrix(),
                     cfg.optimizer, train_rng)
                 .first;
  }
  const EvalResult eval =
      evaluate_policy(sys, novice, cfg.eval_episodes, eval_rng.next_u64());
  std::vector<MetricsRecord> series;
  series.push_back(detail::make_record(0, eval, totals, gate_state, data.size(),
                                       eval.median >= threshold));
  return {std::move(novice), std::move(series)};
}

// ---------------------------------------------------------------------------
// Metrics reductions
// ---------------------------------------------------------------------------

struct SwitchCount {
  long count = 0;
  bool solved = false;
};

// Cumulative context switches at the first solved episode; if the run never
// solved, the total count with the flag cleared.
inline SwitchCount context_switches_until_solved(const std::vector<MetricsRecord>& series) {
  if (series.empty()) throw ConfigError("metrics series is empty");
  for (const MetricsRecord& m : series) {
    if (m.solved) return {m.context_switches_cum, true};
  }
  return {series.back().context_switches_cum, false};
}

}  // namespace tubedagger
