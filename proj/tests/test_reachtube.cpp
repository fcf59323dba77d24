#include "tubedagger/reachtube.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <string>
#include <vector>

#include "tubedagger/envs.hpp"
#include "tubedagger/rng.hpp"

namespace td = tubedagger;

namespace {

// Linear test system x' = rate * x (independent of the action).  With a
// negative rate the flow contracts uniformly, so every perturbation
// statistic has a closed form to test against.
class LinearSystem {
 public:
  explicit LinearSystem(double rate = -1.0, int horizon = 40, double solved = -1e300)
      : rate_(rate) {
    spec_.id = td::EnvId::vanderpol;  // tests borrow an id; dynamics are custom
    spec_.state_dim = 2;
    spec_.action_dim = 1;
    spec_.dt = 0.05;
    spec_.horizon = horizon;
    spec_.action_bounds = {{-1.0, 1.0}};
    spec_.start_center = td::Vec::Zero(2);
    spec_.start_center(0) = 1.0;
    spec_.start_radius = 0.1;
    solved_ = solved;
  }

  const td::SystemSpec& spec() const { return spec_; }
  td::Vec dynamics(const td::Vec& x, const td::Vec&) const { return rate_ * x; }
  bool failure(const td::Vec&) const { return false; }
  double step_reward(const td::Vec&, const td::Vec&, const td::Vec&) const { return 0.0; }
  bool goal(const td::Vec&) const { return false; }
  double goal_bonus() const { return 0.0; }
  double solved_threshold() const { return solved_; }

 private:
  td::SystemSpec spec_;
  double rate_;
  double solved_;
};

struct ZeroPolicy {
  td::Vec act(const td::Vec&) const { return td::Vec::Zero(1); }
};

td::SampleSet contractive_sample_set(const LinearSystem& sys, int n_traces,
                                     std::uint64_t seed) {
  const ZeroPolicy policy;
  const td::Vec x0 = sys.spec().start_center;
  const td::Trajectory nominal = td::rollout(sys, policy, x0);
  td::SampleSet set(nominal.states, nominal.times, 0.2);
  td::SplitRng rng(seed);
  for (const td::Vec& start :
       td::sample_initial_surface(x0, sys.spec().start_radius, n_traces, rng)) {
    set.add_trace(td::rollout(sys, policy, start).states);
  }
  set.refresh_stats();
  return set;
}

}  // namespace

// --------------------------------------------------------------------------
// Initial surface sampling
// --------------------------------------------------------------------------

TEST(SurfaceSampling, PointsLieExactlyOnSphere) {
  td::SplitRng rng(7);
  td::Vec x0(3);
  x0 << 1.0, -2.0, 0.5;
  const auto points = td::sample_initial_surface(x0, 0.25, 500, rng);
  ASSERT_EQ(points.size(), 500u);
  for (const td::Vec& p : points) {
    EXPECT_NEAR((p - x0).norm(), 0.25, 1e-12);
  }
}

TEST(SurfaceSampling, MeanApproachesCenter) {
  td::SplitRng rng(11);
  const td::Vec x0 = td::Vec::Zero(4);
  const auto points = td::sample_initial_surface(x0, 1.0, 8000, rng);
  td::Vec mean = td::Vec::Zero(4);
  for (const td::Vec& p : points) mean += p;
  mean /= 8000.0;
  // Component stddev on the unit 3-sphere is 1/2; the sample mean of 8000
  // draws stays within ~5 sigma of zero.
  EXPECT_LT(mean.norm(), 0.03);
}

TEST(SurfaceSampling, DeterministicGivenRngState) {
  td::SplitRng a(42);
  td::SplitRng b(42);
  const td::Vec x0 = td::Vec::Zero(2);
  const auto pa = td::sample_initial_surface(x0, 0.1, 32, a);
  const auto pb = td::sample_initial_surface(x0, 0.1, 32, b);
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i](0), pb[i](0));
    EXPECT_EQ(pa[i](1), pb[i](1));
  }
}

TEST(SurfaceSampling, RejectsBadArguments) {
  td::SplitRng rng(1);
  const td::Vec x0 = td::Vec::Zero(2);
  EXPECT_THROW(td::sample_initial_surface(x0, 0.0, 10, rng), td::ConfigError);
  EXPECT_THROW(td::sample_initial_surface(x0, 1.0, 0, rng), td::ConfigError);
}

// --------------------------------------------------------------------------
// Perturbation distances
// --------------------------------------------------------------------------

TEST(PerturbationDistance, MatchesLinearContractionOracle) {
  const LinearSystem sys(-1.0, 40);
  const ZeroPolicy policy;
  const td::Vec x0 = sys.spec().start_center;
  td::Vec delta(2);
  delta << 0.06, -0.08;  // norm 0.1
  const td::Trajectory nominal = td::rollout(sys, policy, x0);
  const td::Trajectory shifted = td::rollout(sys, policy, x0 + delta);
  for (int t = 0; t <= 40; ++t) {
    const double expected = 0.1 * std::exp(-sys.spec().dt * t);
    EXPECT_NEAR(td::perturbation_distance(shifted, nominal, t), expected, 1e-6)
        << "step " << t;
  }
}

TEST(PerturbationDistance, MismatchedGridThrows) {
  const LinearSystem sys(-1.0, 10);
  const ZeroPolicy policy;
  const td::Trajectory a = td::rollout(sys, policy, sys.spec().start_center);
  td::Trajectory b = a;
  b.times.pop_back();
  b.states.pop_back();
  EXPECT_THROW(td::perturbation_distance(b, a, 0), td::AlignmentError);
  td::Trajectory c = a;
  c.times[3] += 1e-9;
  EXPECT_THROW(td::perturbation_distance(c, a, 0), td::AlignmentError);
  EXPECT_THROW(td::perturbation_distance(a, a, 11), td::ShapeError);
}

// --------------------------------------------------------------------------
// Local Lipschitz estimation
// --------------------------------------------------------------------------

TEST(LipschitzEstimate, ContractiveFlowGivesExpLambdaAndZeroSpread) {
  const LinearSystem sys(-1.0, 40);
  td::SampleSet set = contractive_sample_set(sys, 64, 3);
  for (int t : {1, 10, 25, 40}) {
    const td::LipschitzEstimate lip = td::estimate_local_lipschitz(set, t);
    EXPECT_NEAR(lip.lambda, std::exp(-sys.spec().dt * t), 1e-3) << "step " << t;
    // Uniform contraction: every ratio is identical, so the quantile sits on
    // the mean and the spread collapses.
    EXPECT_LE(lip.delta_lambda, 1e-9) << "step " << t;
  }
}

TEST(LipschitzEstimate, RequiresAtLeastTwoTraces) {
  const LinearSystem sys(-1.0, 10);
  const ZeroPolicy policy;
  const td::Trajectory nominal = td::rollout(sys, policy, sys.spec().start_center);
  td::SampleSet set(nominal.states, nominal.times, 0.2);
  set.add_trace(nominal.states);
  set.refresh_stats();
  EXPECT_THROW(td::estimate_local_lipschitz(set, 1), td::InsufficientSamples);
}

TEST(LipschitzEstimate, AllTracesAtNominalDegenerateToZero) {
  const LinearSystem sys(-1.0, 10);
  const ZeroPolicy policy;
  const td::Trajectory nominal = td::rollout(sys, policy, sys.spec().start_center);
  td::SampleSet set(nominal.states, nominal.times, 0.2);
  set.add_trace(nominal.states);
  set.add_trace(nominal.states);
  set.refresh_stats();
  const td::LipschitzEstimate lip = td::estimate_local_lipschitz(set, 1);
  EXPECT_EQ(lip.lambda, 0.0);
  EXPECT_EQ(lip.delta_lambda, 0.0);
}

TEST(LipschitzEstimate, StaleStatsRejected) {
  const LinearSystem sys(-1.0, 10);
  td::SampleSet set = contractive_sample_set(sys, 4, 9);
  const ZeroPolicy policy;
  set.add_trace(td::rollout(sys, policy, sys.spec().start_center).states);
  EXPECT_THROW(td::estimate_local_lipschitz(set, 1), td::ValidationError);
  set.refresh_stats();
  EXPECT_NO_THROW(td::estimate_local_lipschitz(set, 1));
}

// --------------------------------------------------------------------------
// Cap radius
// --------------------------------------------------------------------------

TEST(CapRadius, QuadraticRootPinnedValue) {
  // delta*r^2 + lambda*r = s with lambda=1, delta=0.5, s=1 has the positive
  // root -1 + sqrt(3).
  const double r = td::cap_radius(1.0, 0.5, 1.0, 1.0, 0.0);
  EXPECT_NEAR(r, -1.0 + std::sqrt(3.0), 1e-9);
}

TEST(CapRadius, TinySpreadMatchesLinearLimit) {
  const double with_spread = td::cap_radius(1.0, 1e-8, 1.0, 1.0, 0.0);
  const double limit = td::cap_radius(1.0, 0.0, 1.0, 1.0, 0.0);  // s / lambda
  EXPECT_EQ(limit, 1.0);
  EXPECT_NEAR(with_spread, limit, 1e-6);
}

TEST(CapRadius, ContinuousAsSpreadVanishes) {
  double prev_err = 1e300;
  for (const double delta : {1e-2, 1e-4, 1e-6, 1e-8}) {
    const double err = std::abs(td::cap_radius(2.0, delta, 1.1, 1.0, 0.3) -
                                td::cap_radius(2.0, 0.0, 1.1, 1.0, 0.3));
    EXPECT_LT(err, prev_err);
    prev_err = err;
  }
  EXPECT_LT(prev_err, 1e-9);
}

TEST(CapRadius, ZeroSlackGivesZeroRadius) {
  EXPECT_EQ(td::cap_radius(1.0, 0.5, 1.0, 1.0, 1.0), 0.0);
  EXPECT_EQ(td::cap_radius(0.0, 0.0, 1.0, 1.0, 1.0), 0.0);  // checked before degeneracy
}

TEST(CapRadius, ErrorCases) {
  EXPECT_THROW(td::cap_radius(1.0, 0.0, 1.0, 1.0, 1.5), td::CapUnderflow);
  EXPECT_THROW(td::cap_radius(0.0, 0.0, 1.1, 1.0, 0.5), td::DegenerateCap);
  EXPECT_THROW(td::cap_radius(-0.1, 0.0, 1.0, 1.0, 0.0), td::ValidationError);
  EXPECT_THROW(td::cap_radius(1.0, -0.1, 1.0, 1.0, 0.0), td::ValidationError);
}

// --------------------------------------------------------------------------
// Slice fitting
// --------------------------------------------------------------------------

TEST(FitSlice, UnitCircleGivesIdentityMetric) {
  const int n = 512;
  td::Mat points(2, n);
  for (int i = 0; i < n; ++i) {
    const double th = 2.0 * M_PI * i / n;
    points(0, i) = std::cos(th);
    points(1, i) = std::sin(th);
  }
  const td::TubeSlice slice = td::fit_slice(points, td::Vec::Zero(2), 1.0, 0.0, 0.1);
  EXPECT_LT((slice.A - td::Mat::Identity(2, 2)).norm(), 1e-6);
  EXPECT_EQ(slice.r, 1.0);
  for (int i = 0; i < n; ++i) {
    EXPECT_NEAR((slice.A * points.col(i)).norm(), 1.0, 1e-6);
  }
}

TEST(FitSlice, AxisAlignedEllipseNormalizesToUnitBall) {
  const int n = 360;
  td::Vec center(2);
  center << 3.0, -1.0;
  td::Mat points(2, n);
  for (int i = 0; i < n; ++i) {
    const double th = 2.0 * M_PI * i / n;
    points(0, i) = center(0) + 2.0 * std::cos(th);
    points(1, i) = center(1) + 1.0 * std::sin(th);
  }
  const td::TubeSlice slice = td::fit_slice(points, center, 1.1, 0.5, 0.1);
  td::Mat expected(2, 2);
  expected << 0.5, 0.0, 0.0, 1.0;
  EXPECT_LT((slice.A - expected).norm(), 1e-5);
  double max_norm = 0.0;
  for (int i = 0; i < n; ++i) {
    max_norm = std::max(max_norm, (slice.A * (points.col(i) - center)).norm());
  }
  EXPECT_NEAR(max_norm, 1.0, 1e-6);
  // Build-sample membership tops out at 1/mu.
  double max_membership = 0.0;
  for (int i = 0; i < n; ++i) {
    max_membership = std::max(max_membership, td::membership(slice, points.col(i)));
  }
  EXPECT_NEAR(max_membership, 1.0 / 1.1, 1e-9);
  EXPECT_EQ(slice.tau, 0.5);
}

TEST(FitSlice, CoincidentPointsDegenerateToTinyBall) {
  td::Vec center(2);
  center << 0.3, 0.4;
  td::Mat points = center.replicate(1, 5);
  const td::TubeSlice slice = td::fit_slice(points, center, 1.1, 0.0, 0.1);
  EXPECT_NEAR(slice.A(0, 0), 1.0 / (1e-6 * 0.1), 1e-3);
  EXPECT_EQ(slice.A(0, 1), 0.0);
  EXPECT_EQ(td::membership(slice, center), 0.0);
  slice.validate();
}

TEST(FitSlice, RequiresTwoPoints) {
  const td::Mat one = td::Mat::Zero(2, 1);
  EXPECT_THROW(td::fit_slice(one, td::Vec::Zero(2), 1.0, 0.0, 0.1),
               td::InsufficientSamples);
}

// --------------------------------------------------------------------------
// Membership
// --------------------------------------------------------------------------

TEST(Membership, AffineIdentityHoldsToTightTolerance) {
  td::SplitRng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const int dim = 2 + static_cast<int>(rng.below(4));
    td::TubeSlice slice;
    slice.c = td::Vec(dim);
    for (int i = 0; i < dim; ++i) slice.c(i) = rng.uniform(-2.0, 2.0);
    // Random well-conditioned metric: orthogonal basis times spread-out
    // singular values.
    td::Mat raw(dim, dim);
    for (int i = 0; i < dim; ++i) {
      for (int j = 0; j < dim; ++j) raw(i, j) = rng.normal();
    }
    const Eigen::HouseholderQR<td::Mat> qr(raw);
    td::Mat q = qr.householderQ();
    td::Vec sv(dim);
    for (int i = 0; i < dim; ++i) sv(i) = rng.uniform(0.5, 2.0);
    slice.A = q * sv.asDiagonal() * q.transpose();
    slice.r = rng.uniform(0.1, 3.0);
    slice.tau = 0.0;
    td::Vec v(dim);
    for (int i = 0; i < dim; ++i) v(i) = rng.normal();
    const td::Vec state = slice.c + slice.A.inverse() * v * slice.r;
    EXPECT_NEAR(td::membership(slice, state), v.norm(), 1e-9);
  }
}

TEST(Membership, DimensionMismatchThrows) {
  td::TubeSlice slice;
  slice.c = td::Vec::Zero(2);
  slice.A = td::Mat::Identity(2, 2);
  slice.r = 1.0;
  slice.tau = 0.0;
  EXPECT_THROW(td::membership(slice, td::Vec::Zero(3)), td::ShapeError);
}

// --------------------------------------------------------------------------
// Surface coverage
// --------------------------------------------------------------------------

TEST(SurfaceCoverage, HalfSphereCapCoversHalf) {
  // One cap of angular radius pi/2 on the unit 2-sphere covers exactly half
  // the area; its chordal radius is sqrt(2).
  td::SplitRng rng(5);
  const td::Vec x0 = td::Vec::Zero(3);
  td::Cap cap;
  cap.point = td::Vec::Zero(3);
  cap.point(2) = 1.0;
  cap.radius = std::sqrt(2.0);
  const double cov = td::surface_coverage({cap}, x0, 1.0, 10000, rng);
  EXPECT_NEAR(cov, 0.5, 0.02);
}

TEST(SurfaceCoverage, DiameterCapCoversEverything) {
  td::SplitRng rng(6);
  const td::Vec x0 = td::Vec::Ones(3);
  td::Cap cap;
  cap.point = x0;
  cap.point(0) += 0.5;
  cap.radius = 1.0;  // 2R for R = 0.5
  EXPECT_EQ(td::surface_coverage({cap}, x0, 0.5, 1000, rng), 1.0);
}

TEST(SurfaceCoverage, NoCapsCoverNothing) {
  td::SplitRng rng(7);
  EXPECT_EQ(td::surface_coverage({}, td::Vec::Zero(2), 1.0, 1000, rng), 0.0);
}

TEST(SurfaceCoverage, RequiresMinimumSamples) {
  td::SplitRng rng(8);
  td::Cap cap;
  cap.point = td::Vec::Zero(2);
  cap.point(0) = 1.0;
  cap.radius = 0.5;
  EXPECT_THROW(td::surface_coverage({cap}, td::Vec::Zero(2), 1.0, 99, rng),
               td::ConfigError);
}

TEST(SurfaceCoverage, GramRouteMatchesNaiveDistanceCheck) {
  // The production path tests <q-x0, p-x0> >= R^2 - r^2/2; recompute the
  // same estimate with explicit distances and identically seeded samples.
  const double radius = 0.5;
  td::Vec x0(3);
  x0 << 0.2, -0.1, 0.7;
  td::SplitRng cap_rng(31);
  std::vector<td::Cap> caps;
  for (const td::Vec& p : td::sample_initial_surface(x0, radius, 20, cap_rng)) {
    td::Cap cap;
    cap.point = p;
    cap.radius = cap_rng.uniform(0.0, 0.4);
    caps.push_back(cap);
  }
  td::SplitRng rng_a(99);
  const double fast = td::surface_coverage(caps, x0, radius, 2000, rng_a);
  td::SplitRng rng_b(99);
  const auto samples = td::sample_initial_surface(x0, radius, 2000, rng_b);
  int covered = 0;
  for (const td::Vec& q : samples) {
    for (const td::Cap& cap : caps) {
      if ((q - cap.point).norm() <= cap.radius) {
        ++covered;
        break;
      }
    }
  }
  EXPECT_NEAR(fast, covered / 2000.0, 1e-12);
}

// --------------------------------------------------------------------------
// Tube construction
// --------------------------------------------------------------------------

TEST(BuildTube, ContractiveSystemReachesCoverageAndHoldsOut) {
  const LinearSystem sys(-1.0, 40);
  const ZeroPolicy policy;
  td::TubeConfig cfg;
  cfg.batch_size = 128;
  cfg.coverage_samples = 2000;
  const td::BuildResult result = td::build_tube(sys, policy, cfg, 17);
  EXPECT_TRUE(result.coverage_reached);
  EXPECT_EQ(result.batches_used, 1);
  EXPECT_GE(result.min_coverage, 0.8);
  ASSERT_EQ(result.tube.slices.size(), 41u);
  EXPECT_EQ(result.tube.sample_count, 128u);
  EXPECT_EQ(result.tube.source.env, "vanderpol");
  EXPECT_EQ(result.tube.source.expert, "custom");
  EXPECT_EQ(result.tube.source.seed, 17u);
  for (int t = 0; t <= 40; ++t) {
    EXPECT_EQ(result.tube.slices[t].tau, t * sys.spec().dt);
  }
  result.tube.validate();

  // Fresh rollouts from the interior of B0 stay inside every slice far more
  // often than the 75% floor (the linear flow maps the ball inside the hull
  // of the surface samples).
  td::SplitRng rng(555);
  int inside = 0;
  const int trials = 100;
  for (int i = 0; i < trials; ++i) {
    const td::Vec start = td::sample_start(sys, rng);
    const td::Trajectory traj = td::rollout(sys, policy, start);
    bool all_in = true;
    for (int t = 0; t <= 40; ++t) {
      if (td::membership(result.tube.slices[t], traj.states[t]) > 1.0) {
        all_in = false;
        break;
      }
    }
    inside += all_in ? 1 : 0;
  }
  EXPECT_GE(inside, 75);
}

TEST(BuildTube, PerturbationMaximaShrinkUnderContraction) {
  const LinearSystem sys(-1.0, 40);
  td::SampleSet set = contractive_sample_set(sys, 64, 21);
  for (int t = 1; t <= 40; ++t) {
    EXPECT_LT(set.m_bar(t), set.m_bar(t - 1)) << "step " << t;
  }
}

TEST(BuildTube, RefinementNeverShrinksPerturbationMaxima) {
  const LinearSystem sys(-1.0, 20);
  const ZeroPolicy policy;
  const td::Vec x0 = sys.spec().start_center;
  const td::Trajectory nominal = td::rollout(sys, policy, x0);
  td::SampleSet set(nominal.states, nominal.times, 0.2);
  td::SplitRng rng(4);
  for (const td::Vec& s : td::sample_initial_surface(x0, 0.1, 16, rng)) {
    set.add_trace(td::rollout(sys, policy, s).states);
  }
  set.refresh_stats();
  std::vector<double> before(21);
  for (int t = 0; t <= 20; ++t) before[t] = set.m_bar(t);
  for (const td::Vec& s : td::sample_initial_surface(x0, 0.1, 16, rng)) {
    set.add_trace(td::rollout(sys, policy, s).states);
  }
  set.refresh_stats();
  for (int t = 0; t <= 20; ++t) {
    EXPECT_GE(set.m_bar(t), before[t]) << "step " << t;
  }
}

TEST(BuildTube, DeterministicForFixedSeed) {
  const LinearSystem sys(-1.0, 15);
  const ZeroPolicy policy;
  td::TubeConfig cfg;
  cfg.batch_size = 32;
  cfg.coverage_samples = 500;
  const td::BuildResult a = td::build_tube(sys, policy, cfg, 99);
  const td::BuildResult b = td::build_tube(sys, policy, cfg, 99);
  EXPECT_EQ(td::serialize_tube(a.tube), td::serialize_tube(b.tube));
}

TEST(BuildTube, ReportsPartialCoverageInsteadOfThrowing) {
  const LinearSystem sys(-1.0, 15);
  const ZeroPolicy policy;
  td::TubeConfig cfg;
  cfg.batch_size = 2;  // two caps cannot cover 80% of the circle
  cfg.max_batches = 1;
  cfg.coverage_samples = 1000;
  const td::BuildResult result = td::build_tube(sys, policy, cfg, 3);
  EXPECT_FALSE(result.coverage_reached);
  EXPECT_EQ(result.batches_used, 1);
  EXPECT_LT(result.min_coverage, 0.8);
  EXPECT_GE(result.min_coverage_step, 1);
  result.tube.validate();  // the partial tube is still structurally sound
}

TEST(BuildTube, IncompetentExpertRejected) {
  const LinearSystem sys(-1.0, 10, /*solved=*/1e300);  // unreachable threshold
  const ZeroPolicy policy;
  td::TubeConfig cfg;
  cfg.batch_size = 4;
  EXPECT_THROW(td::build_tube(sys, policy, cfg, 1), td::ConfigError);
}

TEST(BuildTube, AugmentedSlicesCarryActionDimensions) {
  const LinearSystem sys(-1.0, 8);
  const ZeroPolicy policy;
  td::TubeConfig cfg;
  cfg.batch_size = 16;
  cfg.coverage_samples = 500;
  cfg.include_actions = true;
  const td::BuildResult result = td::build_tube(sys, policy, cfg, 5);
  EXPECT_TRUE(result.tube.source.augmented);
  ASSERT_EQ(result.tube.slices.size(), 9u);
  EXPECT_EQ(result.tube.slices[0].c.size(), 3);  // state 2 (+) action 1
  result.tube.validate();
}

// --------------------------------------------------------------------------
// Serialization
// --------------------------------------------------------------------------

namespace {

td::ReachTube small_tube() {
  const LinearSystem sys(-1.0, 6);
  const ZeroPolicy policy;
  td::TubeConfig cfg;
  cfg.batch_size = 16;
  cfg.coverage_samples = 500;
  return td::build_tube(sys, policy, cfg, 13).tube;
}

}  // namespace

TEST(TubeSerialization, RoundTripIsExactAndByteStable) {
  const td::ReachTube tube = small_tube();
  const std::string text = td::serialize_tube(tube);
  const td::ReachTube back = td::deserialize_tube(text);
  EXPECT_EQ(back.gamma, tube.gamma);
  EXPECT_EQ(back.mu, tube.mu);
  EXPECT_EQ(back.source.env, tube.source.env);
  EXPECT_EQ(back.source.expert, tube.source.expert);
  EXPECT_EQ(back.source.seed, tube.source.seed);
  EXPECT_EQ(back.source.augmented, tube.source.augmented);
  EXPECT_EQ(back.sample_count, tube.sample_count);
  ASSERT_EQ(back.slices.size(), tube.slices.size());
  for (std::size_t t = 0; t < tube.slices.size(); ++t) {
    EXPECT_EQ(back.slices[t].tau, tube.slices[t].tau);
    EXPECT_EQ(back.slices[t].r, tube.slices[t].r);
    EXPECT_EQ(back.slices[t].c, tube.slices[t].c);
    EXPECT_EQ(back.slices[t].A, tube.slices[t].A);
  }
  EXPECT_EQ(td::serialize_tube(back), text);
}

TEST(TubeSerialization, TruncatedInputReportsByteOffset) {
  const std::string text = td::serialize_tube(small_tube());
  const std::string truncated = text.substr(0, text.size() / 2);
  try {
    td::deserialize_tube(truncated);
    FAIL() << "expected ParseError";
  } catch (const td::ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("byte"), std::string::npos);
  }
}

TEST(TubeSerialization, SemanticTamperingRejected) {
  const std::string text = td::serialize_tube(small_tube());

  td::Json j = td::parse_json(text);
  j["gamma"] = 1.5;
  EXPECT_THROW(td::deserialize_tube(j.dump()), td::ValidationError);

  j = td::parse_json(text);
  j["slices"][0]["r"] = 0.0;
  EXPECT_THROW(td::deserialize_tube(j.dump()), td::ValidationError);

  j = td::parse_json(text);
  for (auto& v : j["slices"][1]["A"][0]) v = 0.0;  // singular metric
  EXPECT_THROW(td::deserialize_tube(j.dump()), td::ValidationError);

  j = td::parse_json(text);
  j["slices"][2]["tau"] = -1.0;  // breaks monotone times
  EXPECT_THROW(td::deserialize_tube(j.dump()), td::ValidationError);

  j = td::parse_json(text);
  j.erase("mu");
  EXPECT_THROW(td::deserialize_tube(j.dump()), td::ValidationError);

  EXPECT_THROW(td::deserialize_tube("[1,2,3]"), td::ValidationError);
}
