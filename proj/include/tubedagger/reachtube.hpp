#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <type_traits>
#include <vector>

#include "tubedagger/envs.hpp"
#include "tubedagger/errors.hpp"
#include "tubedagger/json_util.hpp"
#include "tubedagger/policies.hpp"
#include "tubedagger/rng.hpp"

namespace tubedagger {

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

// Bounding ellipsoid at one step: {x : ||A(x - c)|| <= r}.
struct TubeSlice {
  Vec c;      // center (nominal trajectory state)
  double r;   // radius
  Mat A;      // metric; maps the fitted sample cloud into the unit ball
  double tau; // elapsed episode time in seconds

  void validate() const {
    if (c.size() < 1 || A.rows() != c.size() || A.cols() != c.size()) {
      throw ValidationError("tube slice shape mismatch");
    }
    if (!(r > 0.0)) throw ValidationError("tube slice radius must be > 0");
    if (!c.allFinite() || !A.allFinite() || !std::isfinite(tau)) {
      throw ValidationError("tube slice contains non-finite values");
    }
    const Eigen::JacobiSVD<Mat> svd(A);
    const double smax = svd.singularValues()(0);
    const double smin = svd.singularValues()(svd.singularValues().size() - 1);
    if (!(smin > smax * 1e-15) || smax == 0.0) {
      throw ValidationError("tube slice metric is not invertible");
    }
  }
};

// Normalized ellipsoid distance; <= 1 means inside the slice.
inline double membership(const TubeSlice& slice, const Vec& state) {
  if (state.size() != slice.c.size()) throw ShapeError("membership dimension mismatch");
  return (slice.A * (state - slice.c)).norm() / slice.r;
}

struct TubeSource {
  std::string env;
  std::string expert;
  std::uint64_t seed = 0;
  bool augmented = false;  // slices over state (+) action concatenation
};

struct ReachTube {
  std::vector<TubeSlice> slices;  // one per step, 0..horizon
  double gamma = 0.2;
  double mu = 1.1;
  TubeSource source;
  std::size_t sample_count = 0;  // |V| used for the fit

  int horizon() const { return static_cast<int>(slices.size()) - 1; }

  void validate() const {
    if (slices.empty()) throw ValidationError("tube has no slices");
    if (!(gamma > 0.0 && gamma < 1.0)) throw ValidationError("gamma must be in (0,1)");
    if (!(mu >= 1.0)) throw ValidationError("mu must be >= 1");
    if (slices.front().tau != 0.0) throw ValidationError("first slice must be at tau 0");
    const Eigen::Index dim = slices.front().c.size();
    for (std::size_t t = 0; t < slices.size(); ++t) {
      if (slices[t].c.size() != dim) throw ValidationError("slice dimension drift");
      slices[t].validate();
      if (t > 0 && !(slices[t].tau > slices[t - 1].tau)) {
        throw ValidationError("slice times must be strictly increasing");
      }
    }
  }
};

struct TubeConfig {
  double gamma = 0.2;
  double mu = 1.1;
  double initial_radius = 0.1;
  int batch_size = 512;
  int max_batches = 8;
  int coverage_samples = 10000;
  bool include_actions = false;  // experimental state(+)action tube
  bool check_expert = true;      // competence precondition gate

  void validate() const {
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("gamma must be in (0,1)");
    if (!(mu >= 1.0)) throw ConfigError("mu must be >= 1");
    if (!(initial_radius > 0.0)) throw ConfigError("initial_radius must be > 0");
    if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
    if (max_batches < 1) throw ConfigError("max_batches must be >= 1");
    if (coverage_samples < 100) throw ConfigError("coverage_samples must be >= 100");
  }
};

// ---------------------------------------------------------------------------
// Surface sampling and perturbation statistics
// ---------------------------------------------------------------------------

// n points uniform on the sphere of `radius` around x0, by normalizing
// Gaussian directions.
inline std::vector<Vec> sample_initial_surface(const Vec& x0, double radius, int n,
                                               SplitRng& rng) {
  if (!(radius > 0.0)) throw ConfigError("surface radius must be > 0");
  if (n < 1) throw ConfigError("surface sample count must be >= 1");
  std::vector<Vec> points;
  points.reserve(n);
  const Eigen::Index dim = x0.size();
  while (static_cast<int>(points.size()) < n) {
    Vec dir(dim);
    for (Eigen::Index i = 0; i < dim; ++i) dir(i) = rng.normal();
    const double norm = dir.norm();
    if (norm < 1e-12) continue;  // astronomically rare; redraw
    points.push_back(x0 + (radius / norm) * dir);
  }
  return points;
}

// d_t(x): Euclidean distance between a sampled trace and the nominal trace
// at step t.  Both trajectories must live on the same time grid.
inline double perturbation_distance(const Trajectory& trace, const Trajectory& nominal,
                                    int t) {
  if (trace.times.size() != nominal.times.size()) {
    throw AlignmentError("traces have different lengths");
  }
  for (std::size_t i = 0; i < trace.times.size(); ++i) {
    if (trace.times[i] != nominal.times[i]) {
      throw AlignmentError("traces are on different time grids");
    }
  }
  if (t < 0 || t >= static_cast<int>(trace.states.size())) {
    throw ShapeError("perturbation_distance: step out of range");
  }
  return (trace.states[t] - nominal.states[t]).norm();
}

// Closed-loop traces from the surface of B0 plus the per-slice perturbation
// statistics derived from them.  Points are stored columnwise per step.
class SampleSet {
 public:
  SampleSet(std::vector<Vec> nominal_states, std::vector<double> times, double gamma)
      : nominal_(std::move(nominal_states)), times_(std::move(times)), gamma_(gamma) {
    if (nominal_.empty() || nominal_.size() != times_.size()) {
      throw ShapeError("sample set needs a nonempty nominal trace with matching grid");
    }
    const Eigen::Index dim = nominal_.front().size();
    states_.resize(nominal_.size());
    for (auto& m : states_) m = Mat(dim, 0);
  }

  double gamma() const { return gamma_; }
  int size() const { return static_cast<int>(states_.front().cols()); }
  int steps() const { return static_cast<int>(nominal_.size()); }
  const std::vector<double>& times() const { return times_; }
  const Vec& nominal(int t) const { return nominal_.at(t); }
  const Mat& points(int t) const { return states_.at(t); }

  // Append one trace given as per-step points on the same grid.
  void add_trace(const std::vector<Vec>& trace_states) {
    if (trace_states.size() != nominal_.size()) {
      throw AlignmentError("trace length does not match the nominal grid");
    }
    for (std::size_t t = 0; t < trace_states.size(); ++t) {
      if (trace_states[t].size() != nominal_.front().size()) {
        throw ShapeError("trace state dimension mismatch");
      }
      states_[t].conservativeResize(Eigen::NoChange, states_[t].cols() + 1);
      states_[t].col(states_[t].cols() - 1) = trace_states[t];
    }
    stats_fresh_ = false;
  }

  // Recompute d_t(x) for every trace and m_bar_t = max_x d_t(x).
  void refresh_stats() {
    const int n = size();
    dist_.assign(nominal_.size(), std::vector<double>(n, 0.0));
    m_bar_.assign(nominal_.size(), 0.0);
    for (std::size_t t = 0; t < nominal_.size(); ++t) {
      double worst = 0.0;
      for (int i = 0; i < n; ++i) {
        const double d = (states_[t].col(i) - nominal_[t]).norm();
        dist_[t][i] = d;
        worst = std::max(worst, d);
      }
      m_bar_[t] = worst;
    }
    stats_fresh_ = true;
  }

  bool stats_fresh() const { return stats_fresh_; }
  double m_bar(int t) const { return m_bar_.at(t); }
  const std::vector<double>& distances(int t) const { return dist_.at(t); }

 private:
  std::vector<Vec> nominal_;
  std::vector<double> times_;
  double gamma_;
  std::vector<Mat> states_;  // states_[t]: dim x N
  std::vector<std::vector<double>> dist_;
  std::vector<double> m_bar_;
  bool stats_fresh_ = false;
};

struct LipschitzEstimate {
  double lambda = 0.0;
  double delta_lambda = 0.0;
};

// Local Lipschitz statistics of the flow at step t: lambda is the mean of
// the observed growth ratios d_t(x)/d_0(x); delta_lambda is the spread
// between their (1-gamma) nearest-rank quantile and that mean (floored at
// zero).  Traces whose initial distance underflowed are skipped; if none
// remain the estimate degenerates to (0, 0).
inline LipschitzEstimate estimate_local_lipschitz(const SampleSet& set, int t) {
  if (set.size() < 2) {
    throw InsufficientSamples("estimate_local_lipschitz needs at least 2 traces");
  }
  if (!set.stats_fresh()) {
    throw ValidationError("sample set statistics are stale; call refresh_stats");
  }
  const std::vector<double>& d0 = set.distances(0);
  const std::vector<double>& dt = set.distances(t);
  std::vector<double> ratios;
  ratios.reserve(d0.size());
  for (std::size_t i = 0; i < d0.size(); ++i) {
    if (d0[i] > 1e-300) ratios.push_back(dt[i] / d0[i]);
  }
  if (ratios.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (const double r : ratios) mean += r;
  mean /= static_cast<double>(ratios.size());
  std::sort(ratios.begin(), ratios.end());
  const double level = 1.0 - set.gamma();
  const std::size_t rank = static_cast<std::size_t>(
      std::ceil(level * static_cast<double>(ratios.size())));
  const double quantile = ratios[std::min(ratios.size() - 1, std::max<std::size_t>(rank, 1) - 1)];
  return {mean, std::max(0.0, quantile - mean)};
}

// ---------------------------------------------------------------------------
// Stochastic cap radius
// ---------------------------------------------------------------------------

// Radius of the stochastic cap around an initial sample: the positive root
// of delta_lambda * r^2 + lambda * r = mu * m_bar - d.  Evaluated in the
// product form r = 2s / (lambda + sqrt(lambda^2 + 4*delta_lambda*s)) so the
// delta_lambda -> 0 limit s/lambda emerges without a branch.
inline double cap_radius(double lambda, double delta_lambda, double mu, double m_bar,
                         double d) {
  if (!(lambda >= 0.0) || !(delta_lambda >= 0.0)) {
    throw ValidationError("Lipschitz estimates must be >= 0");
  }
  const double slack = mu * m_bar - d;
  if (slack < 0.0) {
    throw CapUnderflow("observed perturbation exceeds the inflated maximum");
  }
  if (slack == 0.0) return 0.0;
  if (lambda == 0.0 && delta_lambda == 0.0) {
    throw DegenerateCap("cap radius is unbounded for zero Lipschitz estimates");
  }
  return 2.0 * slack / (lambda + std::sqrt(lambda * lambda + 4.0 * delta_lambda * slack));
}

// ---------------------------------------------------------------------------
// Slice fitting
// ---------------------------------------------------------------------------

// Fit the bounding ellipsoid at one step.  The center is the nominal
// trajectory state (not the sample mean).  A is the inverse square root of
// the regularized second-moment (PCA) matrix of the centered samples,
// rescaled so the farthest sample sits exactly on the unit sphere; the
// radius is then the tightness inflation mu.  Build samples therefore have
// membership <= 1/mu, with equality at the extremal one.
inline TubeSlice fit_slice(const Mat& points, const Vec& center, double mu, double tau,
                           double initial_radius) {
  if (points.cols() < 2) throw InsufficientSamples("fit_slice needs at least 2 points");
  if (points.rows() != center.size()) throw ShapeError("fit_slice dimension mismatch");
  const Eigen::Index dim = center.size();
  const Mat centered = points.colwise() - center;
  const Mat cov = centered * centered.transpose() / static_cast<double>(points.cols());
  const double trace = cov.trace();
  TubeSlice slice;
  slice.c = center;
  slice.tau = tau;
  slice.r = mu;
  if (!(trace > 0.0)) {
    // Every sample coincides with the center: degenerate ball.
    slice.A = Mat::Identity(dim, dim) / (1e-6 * initial_radius);
    return slice;
  }
  const double eps = 1e-9 * trace / static_cast<double>(dim);
  const Mat regularized = cov + eps * Mat::Identity(dim, dim);
  const Eigen::SelfAdjointEigenSolver<Mat> eig(regularized);
  const Vec inv_sqrt = eig.eigenvalues().cwiseMax(eps).cwiseSqrt().cwiseInverse();
  const Mat whiten =
      eig.eigenvectors() * inv_sqrt.asDiagonal() * eig.eigenvectors().transpose();
  const double max_norm = (whiten * centered).colwise().norm().maxCoeff();
  slice.A = whiten / max_norm;
  return slice;
}

// ---------------------------------------------------------------------------
// Surface coverage
// ---------------------------------------------------------------------------

struct Cap {
  Vec point;     // on the sphere around x0
  double radius; // chordal cap radius r_x
};

namespace detail {

// A sphere sample q is covered by the cap at p iff ||q - p|| <= r, i.e. iff
// <q - x0, p - x0> >= R^2 - r^2/2.  `gram`(i, j) holds those inner products
// for sample i and cap j; `thresholds`(j) = R^2 - r_j^2 / 2.
inline double coverage_from_gram(const Mat& gram, const Vec& thresholds) {
  if (gram.rows() == 0) return 0.0;
  long covered = 0;
  for (Eigen::Index i = 0; i < gram.rows(); ++i) {
    for (Eigen::Index j = 0; j < gram.cols(); ++j) {
      if (gram(i, j) >= thresholds(j)) {
        ++covered;
        break;
      }
    }
  }
  return static_cast<double>(covered) / static_cast<double>(gram.rows());
}

}  // namespace detail

// Monte Carlo estimate of the fraction of the sphere (center x0, radius R)
// covered by the union of caps.
inline double surface_coverage(const std::vector<Cap>& caps, const Vec& x0, double radius,
                               int n_samples, SplitRng& rng) {
  if (n_samples < 100) throw ConfigError("coverage estimation needs >= 100 samples");
  if (caps.empty()) return 0.0;
  const Eigen::Index dim = x0.size();
  Mat centered_caps(dim, static_cast<Eigen::Index>(caps.size()));
  Vec thresholds(static_cast<Eigen::Index>(caps.size()));
  for (std::size_t j = 0; j < caps.size(); ++j) {
    if (caps[j].point.size() != dim) throw ShapeError("cap dimension mismatch");
    centered_caps.col(static_cast<Eigen::Index>(j)) = caps[j].point - x0;
    thresholds(static_cast<Eigen::Index>(j)) =
        radius * radius - 0.5 * caps[j].radius * caps[j].radius;
  }
  const std::vector<Vec> samples = sample_initial_surface(x0, radius, n_samples, rng);
  Mat centered_samples(static_cast<Eigen::Index>(samples.size()), dim);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    centered_samples.row(static_cast<Eigen::Index>(i)) = (samples[i] - x0).transpose();
  }
  const Mat gram = centered_samples * centered_caps;
  return detail::coverage_from_gram(gram, thresholds);
}

// ---------------------------------------------------------------------------
// Tube construction
// ---------------------------------------------------------------------------

struct BuildResult {
  ReachTube tube;
  bool coverage_reached = false;
  int batches_used = 0;
  double min_coverage = 0.0;  // over steps 1..T at the last refinement round
  int min_coverage_step = 0;
};

namespace detail {

template <typename E>
std::string expert_label(const E& expert) {
  if constexpr (std::is_same_v<E, AnyExpert>) {
    return expert_kind(expert);
  } else if constexpr (std::is_same_v<E, PotentialFieldNav2dExpert>) {
    return "potential_field_nav2d";
  } else if constexpr (std::is_same_v<E, PdPendulumExpert>) {
    return "pd_pendulum";
  } else if constexpr (std::is_same_v<E, LqrVanderpolExpert>) {
    return "lqr_vanderpol";
  } else {
    (void)expert;
    return "custom";
  }
}

template <ControlledSystem S, typename E>
std::vector<Vec> tube_points(const S& sys, const E& expert, const Vec& x0,
                             bool include_actions) {
  const Trajectory traj = rollout(sys, expert, x0);
  if (static_cast<int>(traj.actions.size()) != sys.spec().horizon) {
    throw ConfigError("expert failed mid-episode while building the tube");
  }
  std::vector<Vec> points;
  points.reserve(traj.states.size());
  if (!include_actions) {
    points = traj.states;
    return points;
  }
  // State (+) action per step; the terminal state reuses the last action.
  for (std::size_t t = 0; t < traj.states.size(); ++t) {
    const Vec& a = traj.actions[std::min(t, traj.actions.size() - 1)];
    Vec p(traj.states[t].size() + a.size());
    p << traj.states[t], a;
    points.push_back(std::move(p));
  }
  return points;
}

}  // namespace detail

// Iteratively sample expert traces from the surface of B0, refine the
// per-step stochastic caps, and stop once the Monte Carlo surface coverage
// reaches 1 - gamma at every step t >= 1 (the slice at t = 0 is the known
// initial ball itself and is excluded from the stopping rule).  The tube is
// then fit from all accumulated traces.  If the coverage target is not met
// within max_batches, the result carries coverage_reached = false plus the
// worst step as a diagnostic.
template <ControlledSystem S, typename E>
BuildResult build_tube(const S& sys, const E& expert, const TubeConfig& cfg,
                       std::uint64_t seed) {
  cfg.validate();
  sys.spec().validate();
  if (cfg.check_expert && !expert_is_competent(sys, expert, 20, seed)) {
    throw ConfigError("expert fails the competence precondition for this system");
  }

  const Vec x0 = sys.spec().start_center;
  const std::vector<Vec> nominal = detail::tube_points(sys, expert, x0, cfg.include_actions);
  const int horizon = sys.spec().horizon;
  const Eigen::Index state_dim = sys.spec().state_dim;

  std::vector<double> times(horizon + 1);
  for (int t = 0; t <= horizon; ++t) times[t] = t * sys.spec().dt;

  SampleSet set(nominal, times, cfg.gamma);

  SplitRng root(seed);
  SplitRng surface_rng = root.split("surface");
  SplitRng coverage_rng = root.split("coverage");

  BuildResult result;
  const double target = 1.0 - cfg.gamma;

  for (int batch = 0; batch < cfg.max_batches; ++batch) {
    const std::vector<Vec> starts =
        sample_initial_surface(x0, cfg.initial_radius, cfg.batch_size, surface_rng);
    for (const Vec& start : starts) {
      set.add_trace(detail::tube_points(sys, expert, start, cfg.include_actions));
    }
    set.refresh_stats();
    result.batches_used = batch + 1;

    // Fresh Monte Carlo sphere samples for this refinement round; the Gram
    // matrix against the cap centers is shared by every step.
    const std::vector<Vec> mc = sample_initial_surface(x0, cfg.initial_radius,
                                                       cfg.coverage_samples, coverage_rng);
    Mat centered_samples(static_cast<Eigen::Index>(mc.size()), state_dim);
    for (std::size_t i = 0; i < mc.size(); ++i) {
      centered_samples.row(static_cast<Eigen::Index>(i)) = (mc[i] - x0).transpose();
    }
    const Mat centered_caps = set.points(0).topRows(state_dim).colwise() - x0;
    const Mat gram = centered_samples * centered_caps;

    const double r2 = cfg.initial_radius * cfg.initial_radius;
    double min_cov = 1.0;
    int min_step = 0;
    for (int attempt = 0; attempt < 2; ++attempt) {
      try {
        min_cov = 1.0;
        min_step = 0;
        for (int t = 1; t <= horizon; ++t) {
          const LipschitzEstimate lip = estimate_local_lipschitz(set, t);
          const std::vector<double>& dist = set.distances(t);
          Vec thresholds(set.size());
          for (int i = 0; i < set.size(); ++i) {
            const double rx =
                cap_radius(lip.lambda, lip.delta_lambda, cfg.mu, set.m_bar(t), dist[i]);
            thresholds(i) = r2 - 0.5 * rx * rx;
          }
          const double cov = detail::coverage_from_gram(gram, thresholds);
          if (cov < min_cov) {
            min_cov = cov;
            min_step = t;
          }
          if (min_cov < target) break;  // this round already failed
        }
        break;
      } catch (const CapUnderflow&) {
        // Stale statistics guard: recompute once, then let it propagate.
        if (attempt == 1) throw;
        set.refresh_stats();
      }
    }
    result.min_coverage = min_cov;
    result.min_coverage_step = min_step;
    if (min_cov >= target) {
      result.coverage_reached = true;
      break;
    }
  }

  ReachTube tube;
  tube.gamma = cfg.gamma;
  tube.mu = cfg.mu;
  tube.source.env = to_string(sys.spec().id);
  tube.source.expert = detail::expert_label(expert);
  tube.source.seed = seed;
  tube.source.augmented = cfg.include_actions;
  tube.sample_count = static_cast<std::size_t>(set.size());
  tube.slices.reserve(horizon + 1);
  for (int t = 0; t <= horizon; ++t) {
    tube.slices.push_back(
        fit_slice(set.points(t), set.nominal(t), cfg.mu, times[t], cfg.initial_radius));
  }
  result.tube = std::move(tube);
  return result;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline std::string serialize_tube(const ReachTube& tube) {
  tube.validate();
  JsonWriter w;
  w.begin_object();
  w.key("gamma").number(tube.gamma);
  w.key("mu").number(tube.mu);
  w.key("source").begin_object();
  w.key("env").string(tube.source.env);
  w.key("expert").string(tube.source.expert);
  w.key("seed").unsigned_integer(tube.source.seed);
  w.key("augmented").boolean(tube.source.augmented);
  w.end_object();
  w.key("samples").unsigned_integer(tube.sample_count);
  w.key("slices").begin_array();
  for (const TubeSlice& s : tube.slices) {
    w.begin_object();
    w.key("tau").number(s.tau);
    w.key("c").begin_array();
    for (Eigen::Index i = 0; i < s.c.size(); ++i) w.number(s.c(i));
    w.end_array();
    w.key("r").number(s.r);
    w.key("A").begin_array();
    for (Eigen::Index row = 0; row < s.A.rows(); ++row) {
      w.begin_array();
      for (Eigen::Index col = 0; col < s.A.cols(); ++col) w.number(s.A(row, col));
      w.end_array();
    }
    w.end_array();
    w.end_object();
  }
  w.end_array();
  w.end_object();
  return w.str();
}

inline ReachTube deserialize_tube(std::string_view text) {
  const Json j = parse_json(text);
  if (!j.is_object()) throw ValidationError("tube file must be a JSON object");
  ReachTube tube;
  tube.gamma = require_double(j, "gamma");
  tube.mu = require_double(j, "mu");
  const Json& source = require_field(j, "source");
  tube.source.env = require_string(source, "env");
  tube.source.expert = require_string(source, "expert");
  tube.source.seed = require_uint64(source, "seed");
  tube.source.augmented = require_bool(source, "augmented");
  tube.sample_count = static_cast<std::size_t>(require_uint64(j, "samples"));
  const Json& slices = require_field(j, "slices");
  if (!slices.is_array() || slices.empty()) {
    throw ValidationError("tube must contain at least one slice");
  }
  for (const Json& js : slices) {
    TubeSlice s;
    s.tau = require_double(js, "tau");
    const std::vector<double> c = require_number_array(require_field(js, "c"), "slice center");
    s.c = Eigen::Map<const Vec>(c.data(), static_cast<Eigen::Index>(c.size()));
    s.r = require_double(js, "r");
    const Json& rows = require_field(js, "A");
    if (!rows.is_array() || rows.size() != c.size()) {
      throw ValidationError("slice metric must be a square matrix");
    }
    s.A = Mat(static_cast<Eigen::Index>(c.size()), static_cast<Eigen::Index>(c.size()));
    Eigen::Index row = 0;
    for (const Json& jrow : rows) {
      const std::vector<double> vals = require_number_array(jrow, "slice metric row");
      if (vals.size() != c.size()) throw ValidationError("slice metric must be square");
      for (std::size_t col = 0; col < vals.size(); ++col) {
        s.A(row, static_cast<Eigen::Index>(col)) = vals[col];
      }
      ++row;
    }
    tube.slices.push_back(std::move(s));
  }
  tube.validate();
  return tube;
}

}  // namespace tubedagger
