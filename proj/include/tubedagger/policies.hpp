#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <variant>
#include <vector>

#include "tubedagger/envs.hpp"
#include "tubedagger/errors.hpp"
#include "tubedagger/json_util.hpp"
#include "tubedagger/rng.hpp"

namespace tubedagger {

// ---------------------------------------------------------------------------
// MLP novice / doubt classifier
// ---------------------------------------------------------------------------

enum class Activation { tanh, relu };
enum class OutputHead { linear, sigmoid };

inline std::string to_string(Activation a) {
  return a == Activation::tanh ? "tanh" : "relu";
}
inline std::string to_string(OutputHead h) {
  return h == OutputHead::linear ? "linear" : "sigmoid";
}

struct MlpPolicy {
  std::vector<int> layer_sizes;  // [input, hidden..., output]
  std::vector<Mat> weights;      // weights[i]: layer_sizes[i+1] x layer_sizes[i]
  std::vector<Vec> biases;       // biases[i]: layer_sizes[i+1]
  Activation activation = Activation::tanh;
  OutputHead head = OutputHead::linear;

  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }
  std::size_t layer_count() const { return weights.size(); }

  void validate() const {
    if (layer_sizes.size() < 2) throw ShapeError("need at least input and output layers");
    for (const int s : layer_sizes) {
      if (s < 1) throw ShapeError("layer sizes must be positive");
    }
    if (weights.size() != layer_sizes.size() - 1 || biases.size() != weights.size()) {
      throw ShapeError("parameter count does not match layer_sizes");
    }
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (weights[i].rows() != layer_sizes[i + 1] || weights[i].cols() != layer_sizes[i]) {
        throw ShapeError("weight matrix shape does not chain with layer_sizes");
      }
      if (biases[i].size() != layer_sizes[i + 1]) {
        throw ShapeError("bias vector shape does not chain with layer_sizes");
      }
      if (!weights[i].allFinite() || !biases[i].allFinite()) {
        throw ValidationError("non-finite policy parameters");
      }
    }
  }

  // Forward pass for a batch; samples are columns.
  Mat act_batch(const Mat& states) const {
    if (states.rows() != input_dim()) throw ShapeError("state dimension mismatch");
    Mat a = states;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      Mat z = (weights[i] * a).colwise() + biases[i];
      if (i + 1 < weights.size()) {
        if (activation == Activation::tanh) a = z.array().tanh();
        else a = z.cwiseMax(0.0);
      } else {
        if (head == OutputHead::linear) a = std::move(z);
        else a = 1.0 / (1.0 + (-z.array()).exp());
      }
    }
    return a;
  }

  Vec act(const Vec& state) const { return act_batch(state); }
};

// Uniform ±1/sqrt(fan_in) initialization, drawn from the given stream.
inline MlpPolicy make_mlp(std::vector<int> layer_sizes, Activation activation,
                          OutputHead head, SplitRng& rng) {
  MlpPolicy p;
  p.layer_sizes = std::move(layer_sizes);
  p.activation = activation;
  p.head = head;
  if (p.layer_sizes.size() < 2) throw ShapeError("need at least input and output layers");
  for (std::size_t i = 0; i + 1 < p.layer_sizes.size(); ++i) {
    const int fan_in = p.layer_sizes[i];
    const int fan_out = p.layer_sizes[i + 1];
    if (fan_in < 1 || fan_out < 1) throw ShapeError("layer sizes must be positive");
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Mat w(fan_out, fan_in);
    for (int r = 0; r < fan_out; ++r) {
      for (int c = 0; c < fan_in; ++c) w(r, c) = rng.uniform(-bound, bound);
    }
    Vec b(fan_out);
    for (int r = 0; r < fan_out; ++r) b(r) = rng.uniform(-bound, bound);
    p.weights.push_back(std::move(w));
    p.biases.push_back(std::move(b));
  }
  p.validate();
  return p;
}

// ---------------------------------------------------------------------------
// Losses and gradients (exact analytic backprop)
// ---------------------------------------------------------------------------

struct MlpGrads {
  std::vector<Mat> weights;
  std::vector<Vec> biases;
};

namespace detail {

struct ForwardCache {
  std::vector<Mat> activations;  // activations[0] = input, ..., [L] = output
  std::vector<Mat> pre_head;     // pre-activation of the output layer only
};

inline ForwardCache forward_cached(const MlpPolicy& p, const Mat& states) {
  ForwardCache cache;
  cache.activations.reserve(p.weights.size() + 1);
  cache.activations.push_back(states);
  for (std::size_t i = 0; i < p.weights.size(); ++i) {
    Mat z = (p.weights[i] * cache.activations.back()).colwise() + p.biases[i];
    if (i + 1 < p.weights.size()) {
      Mat a;
      if (p.activation == Activation::tanh) a = z.array().tanh();
      else a = z.cwiseMax(0.0);
      cache.activations.push_back(std::move(a));
    } else {
      cache.pre_head.push_back(z);
      Mat y;
      if (p.head == OutputHead::linear) y = std::move(z);
      else y = 1.0 / (1.0 + (-z.array()).exp());
      cache.activations.push_back(std::move(y));
    }
  }
  return cache;
}

// Backpropagate d(loss)/d(output-layer pre-activation) through the net.
inline MlpGrads backward(const MlpPolicy& p, const ForwardCache& cache, Mat dz) {
  const std::size_t layers = p.weights.size();
  MlpGrads grads;
  grads.weights.resize(layers);
  grads.biases.resize(layers);
  for (std::size_t i = layers; i-- > 0;) {
    grads.weights[i] = dz * cache.activations[i].transpose();
    grads.biases[i] = dz.rowwise().sum();
    if (i > 0) {
      const Mat da = p.weights[i].transpose() * dz;
      const Mat& a = cache.activations[i];
      if (p.activation == Activation::tanh) {
        dz = da.array() * (1.0 - a.array().square());
      } else {
        dz = da.array() * (a.array() > 0.0).cast<double>();
      }
    }
  }
  return grads;
}

}  // namespace detail

// Mean squared error over batch and output dimensions; exact gradients.
// States and targets hold one sample per column.
inline std::pair<double, MlpGrads> mse_loss_and_grads(const MlpPolicy& p,
                                                      const Mat& states,
                                                      const Mat& targets) {
  if (states.cols() == 0) throw EmptyBatch("mse_loss_and_grads: empty batch");
  if (states.rows() != p.input_dim()) throw ShapeError("state dimension mismatch");
  if (targets.rows() != p.output_dim() || targets.cols() != states.cols()) {
    throw ShapeError("target shape mismatch");
  }
  if (p.head != OutputHead::linear) throw ShapeError("mse loss expects a linear head");
  const auto cache = detail::forward_cached(p, states);
  const Mat& y = cache.activations.back();
  const Mat err = y - targets;
  const double denom = static_cast<double>(states.cols()) * p.output_dim();
  const double loss = err.squaredNorm() / denom;
  const Mat dz = (2.0 / denom) * err;
  return {loss, detail::backward(p, cache, dz)};
}

// Mean binary cross-entropy for a sigmoid-head classifier with one output.
// Computed from logits in the numerically stable form.
inline std::pair<double, MlpGrads> bce_loss_and_grads(const MlpPolicy& p,
                                                      const Mat& states,
                                                      const Vec& labels) {
  if (states.cols() == 0) throw EmptyBatch("bce_loss_and_grads: empty batch");
  if (states.rows() != p.input_dim()) throw ShapeError("state dimension mismatch");
  if (p.output_dim() != 1 || p.head != OutputHead::sigmoid) {
    throw ShapeError("bce loss expects a single sigmoid output");
  }
  if (labels.size() != states.cols()) throw ShapeError("label count mismatch");
  for (Eigen::Index i = 0; i < labels.size(); ++i) {
    if (labels(i) != 0.0 && labels(i) != 1.0) {
      throw ValidationError("bce labels must be 0 or 1");
    }
  }
  const auto cache = detail::forward_cached(p, states);
  const Mat& z = cache.pre_head.front();  // logits, 1 x B
  const Mat& prob = cache.activations.back();
  const double batch = static_cast<double>(states.cols());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < z.cols(); ++i) {
    const double zi = z(0, i);
    loss += std::max(zi, 0.0) - zi * labels(i) + std::log1p(std::exp(-std::abs(zi)));
  }
  loss /= batch;
  Mat dz = (prob.array().rowwise() - labels.transpose().array()).matrix() / batch;
  return {loss, detail::backward(p, cache, dz)};
}

// One plain gradient step; returns the updated policy.
inline MlpPolicy sgd_update(MlpPolicy p, const MlpGrads& grads, double lr) {
  if (lr < 0.0) throw ConfigError("learning rate must be >= 0");
  if (grads.weights.size() != p.weights.size()) throw ShapeError("gradient shape mismatch");
  for (std::size_t i = 0; i < p.weights.size(); ++i) {
    p.weights[i] -= lr * grads.weights[i];
    p.biases[i] -= lr * grads.biases[i];
  }
  return p;
}

struct SgdOpts {
  double lr = 1e-3;
  double momentum = 0.9;
  int epochs = 50;
  int minibatch = 64;

  void validate() const {
    if (lr < 0.0 || momentum < 0.0 || momentum >= 1.0) {
      throw ConfigError("optimizer: lr must be >= 0 and momentum in [0, 1)");
    }
    if (epochs < 0 || minibatch < 1) {
      throw ConfigError("optimizer: epochs must be >= 0 and minibatch >= 1");
    }
  }
};

namespace detail {

// Minibatch SGD with momentum over a fixed dataset; the minibatch order is
// reshuffled per epoch from `rng`, so training is deterministic given the
// seed.  `loss_fn(policy, column_indices)` returns (loss, grads) for one
// minibatch.  Returns the mean loss of the final epoch; with zero epochs the
// parameters are untouched and the current loss is reported instead.
template <typename LossFn>
double run_sgd(MlpPolicy& p, Eigen::Index n_samples, const SgdOpts& opts,
               SplitRng& rng, LossFn&& loss_fn) {
  opts.validate();
  if (n_samples == 0) throw EmptyBatch("run_sgd: empty dataset");
  if (opts.epochs == 0) {
    std::vector<Eigen::Index> all(n_samples);
    std::iota(all.begin(), all.end(), 0);
    return loss_fn(p, all).first;
  }
  MlpGrads vel;
  vel.weights.reserve(p.weights.size());
  for (std::size_t i = 0; i < p.weights.size(); ++i) {
    vel.weights.push_back(Mat::Zero(p.weights[i].rows(), p.weights[i].cols()));
    vel.biases.push_back(Vec::Zero(p.biases[i].size()));
  }
  std::vector<Eigen::Index> order(n_samples);
  std::iota(order.begin(), order.end(), 0);
  double final_epoch_loss = 0.0;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    Eigen::Index seen = 0;
    for (Eigen::Index start = 0; start < n_samples; start += opts.minibatch) {
      const Eigen::Index count = std::min<Eigen::Index>(opts.minibatch, n_samples - start);
      const auto [loss, grads] =
          loss_fn(p, std::vector<Eigen::Index>(order.begin() + start,
                                               order.begin() + start + count));
      for (std::size_t i = 0; i < p.weights.size(); ++i) {
        vel.weights[i] = opts.momentum * vel.weights[i] - opts.lr * grads.weights[i];
        vel.biases[i] = opts.momentum * vel.biases[i] - opts.lr * grads.biases[i];
        p.weights[i] += vel.weights[i];
        p.biases[i] += vel.biases[i];
      }
      epoch_loss += loss * count;
      seen += count;
    }
    final_epoch_loss = epoch_loss / seen;
  }
  return final_epoch_loss;
}

inline Mat gather_columns(const Mat& m, const std::vector<Eigen::Index>& idx) {
  Mat out(m.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out.col(k) = m.col(idx[k]);
  return out;
}

}  // namespace detail

// Fit to (states, targets) under MSE; returns (trained policy, final loss).
inline std::pair<MlpPolicy, double> fit_mse(MlpPolicy p, const Mat& states,
                                            const Mat& targets, const SgdOpts& opts,
                                            SplitRng& rng) {
  const double loss = detail::run_sgd(
      p, states.cols(), opts, rng,
      [&](const MlpPolicy& cur, const std::vector<Eigen::Index>& idx) {
        return mse_loss_and_grads(cur, detail::gather_columns(states, idx),
                                  detail::gather_columns(targets, idx));
      });
  return {std::move(p), loss};
}

// Fit a sigmoid-head classifier to binary labels under BCE.
inline std::pair<MlpPolicy, double> fit_bce(MlpPolicy p, const Mat& states,
                                            const Vec& labels, const SgdOpts& opts,
                                            SplitRng& rng) {
  const double loss = detail::run_sgd(
      p, states.cols(), opts, rng,
      [&](const MlpPolicy& cur, const std::vector<Eigen::Index>& idx) {
        Vec batch_labels(static_cast<Eigen::Index>(idx.size()));
        for (std::size_t k = 0; k < idx.size(); ++k) batch_labels(k) = labels(idx[k]);
        return bce_loss_and_grads(cur, detail::gather_columns(states, idx), batch_labels);
      });
  return {std::move(p), loss};
}

// ---------------------------------------------------------------------------
// Expert noise (data collection)
// ---------------------------------------------------------------------------

struct NoiseConfig {
  double sigma2 = 0.0;

  void validate() const {
    if (sigma2 < 0.0) throw ConfigError("noise variance must be >= 0");
  }
};

inline Vec noisy_action(const Vec& action, const NoiseConfig& noise, SplitRng& rng) {
  noise.validate();
  if (noise.sigma2 == 0.0) return action;
  const double stddev = std::sqrt(noise.sigma2);
  Vec out = action;
  for (Eigen::Index i = 0; i < out.size(); ++i) out(i) += stddev * rng.normal();
  return out;
}

// ---------------------------------------------------------------------------
// Scripted experts
// ---------------------------------------------------------------------------

// Full-state feedback for the cart-pole; gains tuned once against the
// competence check below and frozen.
struct PdPendulumExpert {
  Vec gains = (Vec(4) << 0.4, 2.6, 30.0, 3.4).finished();
  double force_limit = 10.0;

  Vec act(const Vec& x) const {
    if (x.size() != 4) throw ShapeError("pendulum expert expects a 4-dim state");
    Vec u(1);
    u(0) = std::clamp(gains.dot(x), -force_limit, force_limit);
    return u;
  }
};

// Attractive field toward the goal with exponential repulsion from the two
// wall rectangles, saturated to the velocity-command box.
struct PotentialFieldNav2dExpert {
  Vec goal = (Vec(2) << -4.0, 0.0).finished();
  std::vector<Navigation2d::Rect> walls{{-0.6, 0.6, 0.7, 5.0}, {-0.6, 0.6, -5.0, -0.7}};
  double slow_radius = 0.5;
  double repulsion_gain = 1.5;
  double repulsion_length = 0.25;

  Vec act(const Vec& x) const {
    if (x.size() != 2) throw ShapeError("navigation expert expects a 2-dim state");
    Vec v = Vec::Zero(2);
    const Vec to_goal = goal - x;
    const double dist = to_goal.norm();
    if (dist > 1e-12) {
      v = to_goal / dist * std::min(1.0, dist / slow_radius);
    }
    for (const auto& wall : walls) {
      Vec closest(2);
      closest << std::clamp(x(0), wall.x_lo, wall.x_hi),
          std::clamp(x(1), wall.y_lo, wall.y_hi);
      Vec away = x - closest;
      double d = away.norm();
      if (d < 1e-9) {
        // Inside or on the wall; push away from its center.
        away << x(0) - 0.5 * (wall.x_lo + wall.x_hi), x(1) - 0.5 * (wall.y_lo + wall.y_hi);
        d = std::max(away.norm(), 1e-9);
      }
      v += (repulsion_gain * std::exp(-d / repulsion_length) / d) * away;
    }
    v(0) = std::clamp(v(0), -1.0, 1.0);
    v(1) = std::clamp(v(1), -1.0, 1.0);
    return v;
  }
};

// Linear state feedback u = -k.x for the controlled Van der Pol oscillator;
// places the closed-loop linearization at -1 ± i.
struct LqrVanderpolExpert {
  Vec gains = (Vec(2) << 1.0, 3.0).finished();
  double input_limit = 6.0;

  Vec act(const Vec& x) const {
    if (x.size() != 2) throw ShapeError("vanderpol expert expects a 2-dim state");
    Vec u(1);
    u(0) = std::clamp(-gains.dot(x), -input_limit, input_limit);
    return u;
  }
};

using AnyExpert = std::variant<PotentialFieldNav2dExpert, PdPendulumExpert, LqrVanderpolExpert>;

inline AnyExpert make_expert(EnvId id) {
  switch (id) {
    case EnvId::navigation2d: return PotentialFieldNav2dExpert();
    case EnvId::inverted_pendulum: return PdPendulumExpert();
    case EnvId::vanderpol: return LqrVanderpolExpert();
  }
  throw ConfigError("unknown environment id");
}

inline std::string expert_kind(const AnyExpert& expert) {
  struct Visitor {
    std::string operator()(const PotentialFieldNav2dExpert&) const { return "potential_field_nav2d"; }
    std::string operator()(const PdPendulumExpert&) const { return "pd_pendulum"; }
    std::string operator()(const LqrVanderpolExpert&) const { return "lqr_vanderpol"; }
  };
  return std::visit(Visitor{}, expert);
}

// Generic single-state evaluation usable with MlpPolicy, the scripted
// experts, or the AnyExpert variant.
template <typename P>
Vec evaluate(const P& policy, const Vec& state) {
  if constexpr (std::is_same_v<P, AnyExpert>) {
    return std::visit([&](const auto& e) { return e.act(state); }, policy);
  } else {
    return policy.act(state);
  }
}

// Expert competence precondition: the scripted controller must reach the
// environment's solved threshold on every one of `episodes` seeded rollouts
// before any tube may be built from it.
template <ControlledSystem S, typename E>
bool expert_is_competent(const S& sys, const E& expert, int episodes, std::uint64_t seed) {
  SplitRng rng = SplitRng(seed).split("competence");
  for (int i = 0; i < episodes; ++i) {
    const Vec x0 = sample_start(sys, rng);
    const Trajectory traj = rollout(sys, expert, x0);
    if (traj.episode_reward < sys.solved_threshold()) return false;
  }
  return true;
}

// Default doubt-label margin: 10% of the action box diameter.
inline double default_tau_m(const SystemSpec& spec) {
  double sq = 0.0;
  for (const Interval& b : spec.action_bounds) {
    sq += (b.hi - b.lo) * (b.hi - b.lo);
  }
  return 0.1 * std::sqrt(sq);
}

// ---------------------------------------------------------------------------
// Checkpoint serialization
// ---------------------------------------------------------------------------

inline std::string serialize_policy(const MlpPolicy& p) {
  p.validate();
  JsonWriter w;
  w.begin_object();
  w.key("layer_sizes").begin_array();
  for (const int s : p.layer_sizes) w.integer(s);
  w.end_array();
  w.key("activation").string(to_string(p.activation));
  w.key("output").string(to_string(p.head));
  w.key("weights").begin_array();
  for (const Mat& m : p.weights) {
    w.begin_array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      w.begin_array();
      for (Eigen::Index c = 0; c < m.cols(); ++c) w.number(m(r, c));
      w.end_array();
    }
    w.end_array();
  }
  w.end_array();
  w.key("biases").begin_array();
  for (const Vec& b : p.biases) {
    w.begin_array();
    for (Eigen::Index i = 0; i < b.size(); ++i) w.number(b(i));
    w.end_array();
  }
  w.end_array();
  w.end_object();
  return w.str();
}

inline MlpPolicy deserialize_policy(std::string_view text) {
  const Json j = parse_json(text);
  if (!j.is_object()) throw ValidationError("policy checkpoint must be a JSON object");
  MlpPolicy p;
  for (const Json& s : require_field(j, "layer_sizes")) {
    if (!s.is_number_integer()) throw ValidationError("layer_sizes entries must be integers");
    p.layer_sizes.push_back(s.get<int>());
  }
  const std::string act = require_string(j, "activation");
  if (act == "tanh") p.activation = Activation::tanh;
  else if (act == "relu") p.activation = Activation::relu;
  else throw ValidationError("unknown activation: " + act);
  if (j.contains("output")) {
    const std::string out = require_string(j, "output");
    if (out == "linear") p.head = OutputHead::linear;
    else if (out == "sigmoid") p.head = OutputHead::sigmoid;
    else throw ValidationError("unknown output head: " + out);
  }
  const Json& weights = require_field(j, "weights");
  if (!weights.is_array()) throw ValidationError("weights must be an array");
  for (const Json& layer : weights) {
    if (!layer.is_array() || layer.empty()) throw ValidationError("weight layer must be a nonempty array");
    const std::size_t cols = layer.front().size();
    Mat m(static_cast<Eigen::Index>(layer.size()), static_cast<Eigen::Index>(cols));
    Eigen::Index r = 0;
    for (const Json& row : layer) {
      const std::vector<double> vals = require_number_array(row, "weight row");
      if (vals.size() != cols) throw ValidationError("ragged weight matrix");
      for (std::size_t c = 0; c < cols; ++c) m(r, static_cast<Eigen::Index>(c)) = vals[c];
      ++r;
    }
    p.weights.push_back(std::move(m));
  }
  const Json& biases = require_field(j, "biases");
  if (!biases.is_array()) throw ValidationError("biases must be an array");
  for (const Json& layer : biases) {
    const std::vector<double> vals = require_number_array(layer, "bias vector");
    Vec b(static_cast<Eigen::Index>(vals.size()));
    for (std::size_t i = 0; i < vals.size(); ++i) b(static_cast<Eigen::Index>(i)) = vals[i];
    p.biases.push_back(std::move(b));
  }
  p.validate();
  return p;
}

}  // namespace tubedagger
