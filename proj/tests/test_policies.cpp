#include "tubedagger/policies.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "tubedagger/envs.hpp"

namespace {

using namespace tubedagger;

MlpPolicy zero_mlp(std::vector<int> sizes, OutputHead head = OutputHead::linear) {
  MlpPolicy p;
  p.layer_sizes = std::move(sizes);
  p.head = head;
  for (std::size_t i = 0; i + 1 < p.layer_sizes.size(); ++i) {
    p.weights.push_back(Mat::Zero(p.layer_sizes[i + 1], p.layer_sizes[i]));
    p.biases.push_back(Vec::Zero(p.layer_sizes[i + 1]));
  }
  return p;
}

// Flatten all parameters, perturb one coordinate, and report the central
// finite difference of the loss.
template <typename LossFn>
void check_gradients(MlpPolicy p, LossFn&& loss_of, double h = 1e-5,
                     double tol = 1e-4) {
  const auto [loss, grads] = loss_of(p);
  (void)loss;
  for (std::size_t layer = 0; layer < p.weights.size(); ++layer) {
    for (Eigen::Index r = 0; r < p.weights[layer].rows(); ++r) {
      for (Eigen::Index c = 0; c < p.weights[layer].cols(); ++c) {
        MlpPolicy plus = p, minus = p;
        plus.weights[layer](r, c) += h;
        minus.weights[layer](r, c) -= h;
        const double fd = (loss_of(plus).first - loss_of(minus).first) / (2 * h);
        const double analytic = grads.weights[layer](r, c);
        const double denom = std::max({std::abs(fd), std::abs(analytic), 1e-6});
        ASSERT_LT(std::abs(fd - analytic) / denom, tol)
            << "W[" << layer << "](" << r << "," << c << ")";
      }
    }
    for (Eigen::Index r = 0; r < p.biases[layer].size(); ++r) {
      MlpPolicy plus = p, minus = p;
      plus.biases[layer](r) += h;
      minus.biases[layer](r) -= h;
      const double fd = (loss_of(plus).first - loss_of(minus).first) / (2 * h);
      const double analytic = grads.biases[layer](r);
      const double denom = std::max({std::abs(fd), std::abs(analytic), 1e-6});
      ASSERT_LT(std::abs(fd - analytic) / denom, tol) << "b[" << layer << "](" << r << ")";
    }
  }
}

TEST(MlpPolicy, ZeroNetworkOutputsZero) {
  const MlpPolicy p = zero_mlp({3, 8, 2});
  const Vec y = p.act((Vec(3) << 0.4, -1.2, 9.0).finished());
  EXPECT_EQ(y(0), 0.0);
  EXPECT_EQ(y(1), 0.0);
}

TEST(MlpPolicy, SingleIdentityLayerPassesStateThrough) {
  MlpPolicy p = zero_mlp({3, 3});
  p.weights[0] = Mat::Identity(3, 3);
  const Vec x = (Vec(3) << 0.5, -2.0, 1.25).finished();
  EXPECT_TRUE((p.act(x).array() == x.array()).all());
}

TEST(MlpPolicy, RejectsMismatchedState) {
  const MlpPolicy p = zero_mlp({3, 2});
  EXPECT_THROW(p.act(Vec::Zero(4)), ShapeError);
}

TEST(MlpPolicy, ValidateCatchesShapeDrift) {
  MlpPolicy p = zero_mlp({3, 4, 2});
  p.weights[1] = Mat::Zero(2, 5);
  EXPECT_THROW(p.validate(), ShapeError);
  p = zero_mlp({3, 4, 2});
  p.weights[0](0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(p.validate(), ValidationError);
}

TEST(MakeMlp, ShapesChainAndInitIsBoundedAndSeeded) {
  SplitRng rng_a(5);
  SplitRng rng_b(5);
  const MlpPolicy a = make_mlp({4, 64, 64, 1}, Activation::tanh, OutputHead::linear, rng_a);
  const MlpPolicy b = make_mlp({4, 64, 64, 1}, Activation::tanh, OutputHead::linear, rng_b);
  a.validate();
  for (std::size_t i = 0; i < a.weights.size(); ++i) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(a.layer_sizes[i]));
    EXPECT_LE(a.weights[i].cwiseAbs().maxCoeff(), bound);
    EXPECT_TRUE((a.weights[i].array() == b.weights[i].array()).all());
  }
}

TEST(Experts, PendulumUprightGivesZeroForce) {
  PdPendulumExpert expert;
  EXPECT_EQ(expert.act(Vec::Zero(4))(0), 0.0);
}

TEST(Experts, OutputsRespectActionBounds) {
  PdPendulumExpert pend;
  EXPECT_LE(std::abs(pend.act((Vec(4) << 2.0, 2.0, 0.19, 1.0).finished())(0)), 10.0);
  LqrVanderpolExpert vdp;
  EXPECT_LE(std::abs(vdp.act((Vec(2) << 4.0, 4.0).finished())(0)), 6.0);
  PotentialFieldNav2dExpert nav;
  const Vec u = nav.act((Vec(2) << 0.61, 0.71).finished());  // at a wall corner
  EXPECT_LE(u.cwiseAbs().maxCoeff(), 1.0);
}

TEST(Experts, AllThreePassTheCompetenceCheck) {
  EXPECT_TRUE(expert_is_competent(Navigation2d(), PotentialFieldNav2dExpert{}, 20, 1));
  EXPECT_TRUE(expert_is_competent(InvertedPendulum(), PdPendulumExpert{}, 20, 1));
  EXPECT_TRUE(expert_is_competent(VanDerPol(), LqrVanderpolExpert{}, 20, 1));
}

TEST(Experts, CompetenceCheckCatchesABrokenController) {
  PdPendulumExpert broken;
  broken.gains = Vec::Zero(4);
  EXPECT_FALSE(expert_is_competent(InvertedPendulum(), broken, 20, 1));
}

TEST(Experts, VariantDispatchMatchesDirectCall) {
  const AnyExpert any = make_expert(EnvId::vanderpol);
  EXPECT_EQ(expert_kind(any), "lqr_vanderpol");
  const Vec x = (Vec(2) << 0.8, -0.1).finished();
  EXPECT_EQ(evaluate(any, x)(0), LqrVanderpolExpert{}.act(x)(0));
}

TEST(NoisyAction, ZeroVarianceIsIdentity) {
  SplitRng rng(1);
  const Vec a = (Vec(3) << 0.1, -0.2, 5.0).finished();
  const Vec out = noisy_action(a, NoiseConfig{0.0}, rng);
  EXPECT_TRUE((out.array() == a.array()).all());
}

TEST(NoisyAction, EmpiricalMomentsMatchConfig) {
  SplitRng rng(99);
  const NoiseConfig noise{0.01};
  const Vec a = (Vec(2) << 1.0, -2.0).finished();
  const int n = 100000;
  Vec sum = Vec::Zero(2), sum_sq = Vec::Zero(2);
  for (int i = 0; i < n; ++i) {
    const Vec d = noisy_action(a, noise, rng) - a;
    sum += d;
    sum_sq += d.cwiseProduct(d);
  }
  for (int k = 0; k < 2; ++k) {
    const double mean = sum(k) / n;
    const double var = sum_sq(k) / n - mean * mean;
    EXPECT_NEAR(var, 0.01, 0.0005);
    EXPECT_NEAR(mean, 0.0, 3.0 * 0.1 / std::sqrt(static_cast<double>(n)));
  }
}

TEST(MseLoss, PerfectFitGivesZeroLossAndGrads) {
  SplitRng rng(3);
  const MlpPolicy p = make_mlp({2, 16, 2}, Activation::tanh, OutputHead::linear, rng);
  Mat states(2, 5);
  states << 0.1, -0.4, 2.0, 0.0, 1.0, -1.0, 0.3, 0.3, 0.5, -2.0;
  const Mat targets = p.act_batch(states);
  const auto [loss, grads] = mse_loss_and_grads(p, states, targets);
  EXPECT_EQ(loss, 0.0);
  for (const Mat& g : grads.weights) EXPECT_EQ(g.cwiseAbs().maxCoeff(), 0.0);
  for (const Vec& g : grads.biases) EXPECT_EQ(g.cwiseAbs().maxCoeff(), 0.0);
}

TEST(MseLoss, HandComputedSingleLayerCase) {
  MlpPolicy p = zero_mlp({1, 1});
  p.weights[0](0, 0) = 2.0;
  p.biases[0](0) = 1.0;
  Mat states(1, 1), targets(1, 1);
  states << 3.0;   // y = 2*3 + 1 = 7
  targets << 5.0;  // err = 2, loss = 4
  const auto [loss, grads] = mse_loss_and_grads(p, states, targets);
  EXPECT_DOUBLE_EQ(loss, 4.0);
  EXPECT_DOUBLE_EQ(grads.weights[0](0, 0), 12.0);  // 2*err*x
  EXPECT_DOUBLE_EQ(grads.biases[0](0), 4.0);       // 2*err
}

TEST(MseLoss, EmptyBatchRejected) {
  const MlpPolicy p = zero_mlp({2, 2});
  EXPECT_THROW(mse_loss_and_grads(p, Mat(2, 0), Mat(2, 0)), EmptyBatch);
}

TEST(MseLoss, DuplicatingTheBatchChangesNothing) {
  SplitRng rng(17);
  const MlpPolicy p = make_mlp({3, 12, 2}, Activation::tanh, OutputHead::linear, rng);
  Mat states(3, 4);
  Mat targets(2, 4);
  for (int c = 0; c < 4; ++c) {
    for (int r = 0; r < 3; ++r) states(r, c) = rng.normal();
    for (int r = 0; r < 2; ++r) targets(r, c) = rng.normal();
  }
  Mat states2(3, 8), targets2(2, 8);
  states2 << states, states;
  targets2 << targets, targets;
  const auto [l1, g1] = mse_loss_and_grads(p, states, targets);
  const auto [l2, g2] = mse_loss_and_grads(p, states2, targets2);
  EXPECT_NEAR(l1, l2, 1e-12 * std::abs(l1));
  for (std::size_t i = 0; i < g1.weights.size(); ++i) {
    EXPECT_LT((g1.weights[i] - g2.weights[i]).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((g1.biases[i] - g2.biases[i]).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(MseLoss, GradientsMatchFiniteDifferences) {
  for (const Activation act : {Activation::tanh, Activation::relu}) {
    SplitRng rng(act == Activation::tanh ? 21 : 22);
    const MlpPolicy p = make_mlp({3, 10, 2}, act, OutputHead::linear, rng);
    Mat states(3, 7), targets(2, 7);
    for (int c = 0; c < 7; ++c) {
      for (int r = 0; r < 3; ++r) states(r, c) = rng.normal();
      for (int r = 0; r < 2; ++r) targets(r, c) = rng.normal();
    }
    check_gradients(p, [&](const MlpPolicy& q) {
      return mse_loss_and_grads(q, states, targets);
    });
  }
}

TEST(BceLoss, HalfProbabilityGivesLogTwo) {
  const MlpPolicy p = zero_mlp({2, 1}, OutputHead::sigmoid);
  Mat states(2, 4);
  states << 1.0, -1.0, 0.5, 0.0, 2.0, 0.0, -0.5, 1.0;
  Vec labels(4);
  labels << 1, 0, 1, 0;
  const auto [loss, grads] = bce_loss_and_grads(p, states, labels);
  (void)grads;
  EXPECT_NEAR(loss, std::log(2.0), 1e-9);
}

TEST(BceLoss, GradientsMatchFiniteDifferences) {
  SplitRng rng(31);
  const MlpPolicy p = make_mlp({3, 10, 1}, Activation::tanh, OutputHead::sigmoid, rng);
  Mat states(3, 9);
  Vec labels(9);
  for (int c = 0; c < 9; ++c) {
    for (int r = 0; r < 3; ++r) states(r, c) = rng.normal();
    labels(c) = rng.uniform01() < 0.5 ? 0.0 : 1.0;
  }
  check_gradients(p, [&](const MlpPolicy& q) {
    return bce_loss_and_grads(q, states, labels);
  });
}

TEST(BceLoss, SeparableToySetTrainsToNearZeroLoss) {
  MlpPolicy p = zero_mlp({1, 1}, OutputHead::sigmoid);
  Mat states(1, 2);
  states << -1.0, 1.0;
  Vec labels(2);
  labels << 0, 1;
  SgdOpts opts;
  opts.lr = 5.0;
  opts.epochs = 1500;
  SplitRng rng(8);
  const auto [trained, final_loss] = fit_bce(p, states, labels, opts, rng);
  EXPECT_LT(final_loss, 1e-3);
  EXPECT_GT(trained.act((Vec(1) << 1.0).finished())(0), 0.999);
  EXPECT_LT(trained.act((Vec(1) << -1.0).finished())(0), 0.001);
}

TEST(BceLoss, RejectsNonBinaryLabelsAndWrongHead) {
  const MlpPolicy sig = zero_mlp({2, 1}, OutputHead::sigmoid);
  Mat states(2, 1);
  states << 0.0, 0.0;
  Vec bad(1);
  bad << 0.5;
  EXPECT_THROW(bce_loss_and_grads(sig, states, bad), ValidationError);
  const MlpPolicy lin = zero_mlp({2, 1}, OutputHead::linear);
  Vec good(1);
  good << 1.0;
  EXPECT_THROW(bce_loss_and_grads(lin, states, good), ShapeError);
}

TEST(SgdUpdate, ZeroGradsAndZeroLrAreFixedPoints) {
  SplitRng rng(41);
  const MlpPolicy p = make_mlp({2, 4, 1}, Activation::tanh, OutputHead::linear, rng);
  MlpGrads zero;
  for (const Mat& w : p.weights) zero.weights.push_back(Mat::Zero(w.rows(), w.cols()));
  for (const Vec& b : p.biases) zero.biases.push_back(Vec::Zero(b.size()));
  const MlpPolicy after_zero_grads = sgd_update(p, zero, 0.5);
  Mat states(2, 1);
  states << 0.3, -0.7;
  Mat targets(1, 1);
  targets << 2.0;
  const auto [loss, grads] = mse_loss_and_grads(p, states, targets);
  (void)loss;
  const MlpPolicy after_zero_lr = sgd_update(p, grads, 0.0);
  for (std::size_t i = 0; i < p.weights.size(); ++i) {
    EXPECT_TRUE((after_zero_grads.weights[i].array() == p.weights[i].array()).all());
    EXPECT_TRUE((after_zero_lr.weights[i].array() == p.weights[i].array()).all());
  }
}

TEST(SgdUpdate, QuadraticLossDecreasesUnderStableStep) {
  MlpPolicy p = zero_mlp({1, 1});
  p.weights[0](0, 0) = 3.0;
  Mat states(1, 1), targets(1, 1);
  states << 1.0;
  targets << 0.0;
  double prev = mse_loss_and_grads(p, states, targets).first;
  for (int i = 0; i < 10; ++i) {
    const auto [loss, grads] = mse_loss_and_grads(p, states, targets);
    (void)loss;
    p = sgd_update(p, grads, 0.1);
    const double cur = mse_loss_and_grads(p, states, targets).first;
    EXPECT_LT(cur, prev);
    prev = cur;
  }
}

TEST(FitMse, LearnsALinearMapAndIsSeedDeterministic) {
  SplitRng init(55);
  MlpPolicy p = make_mlp({2, 32, 2}, Activation::tanh, OutputHead::linear, init);
  Mat states(2, 256);
  SplitRng data(56);
  for (int c = 0; c < 256; ++c) {
    states(0, c) = data.uniform(-1, 1);
    states(1, c) = data.uniform(-1, 1);
  }
  Mat map(2, 2);
  map << 0.5, -1.0, 0.25, 0.75;
  const Mat targets = map * states;
  SgdOpts opts;
  opts.epochs = 200;
  opts.lr = 0.05;
  SplitRng rng_a(57), rng_b(57);
  const auto [trained_a, loss_a] = fit_mse(p, states, targets, opts, rng_a);
  const auto [trained_b, loss_b] = fit_mse(p, states, targets, opts, rng_b);
  EXPECT_LT(loss_a, 1e-3);
  EXPECT_EQ(loss_a, loss_b);
  for (std::size_t i = 0; i < trained_a.weights.size(); ++i) {
    EXPECT_TRUE((trained_a.weights[i].array() == trained_b.weights[i].array()).all());
  }
}

TEST(DefaultTauM, TenPercentOfActionBoxDiameter) {
  EXPECT_DOUBLE_EQ(default_tau_m(InvertedPendulum().spec()), 2.0);
  EXPECT_NEAR(default_tau_m(Navigation2d().spec()), 0.1 * std::sqrt(8.0), 1e-15);
}

TEST(Checkpoint, BitExactRoundTrip) {
  SplitRng rng(71);
  const MlpPolicy p = make_mlp({4, 64, 64, 1}, Activation::tanh, OutputHead::linear, rng);
  const std::string text = serialize_policy(p);
  const MlpPolicy q = deserialize_policy(text);
  ASSERT_EQ(q.layer_sizes, p.layer_sizes);
  EXPECT_EQ(q.activation, p.activation);
  EXPECT_EQ(q.head, p.head);
  for (std::size_t i = 0; i < p.weights.size(); ++i) {
    EXPECT_TRUE((q.weights[i].array() == p.weights[i].array()).all());
    EXPECT_TRUE((q.biases[i].array() == p.biases[i].array()).all());
  }
  EXPECT_EQ(serialize_policy(q), text);
}

TEST(Checkpoint, SigmoidHeadSurvivesRoundTrip) {
  SplitRng rng(72);
  const MlpPolicy p = make_mlp({4, 8, 1}, Activation::relu, OutputHead::sigmoid, rng);
  const MlpPolicy q = deserialize_policy(serialize_policy(p));
  EXPECT_EQ(q.head, OutputHead::sigmoid);
  EXPECT_EQ(q.activation, Activation::relu);
}

TEST(Checkpoint, MalformedInputsRaiseTypedErrors) {
  EXPECT_THROW(deserialize_policy("{not json"), ParseError);
  try {
    deserialize_policy("[1,2,]");
  } catch (const ParseError& e) {
    EXPECT_GT(e.byte_offset, 0u);
  }
  EXPECT_THROW(deserialize_policy(R"({"layer_sizes":[1,1]})"), ValidationError);
  EXPECT_THROW(
      deserialize_policy(
          R"({"layer_sizes":[2,1],"activation":"tanh","weights":[[[1,2],[3]]],"biases":[[0]]})"),
      ValidationError);
  EXPECT_THROW(
      deserialize_policy(
          R"({"layer_sizes":[1,1],"activation":"swish","weights":[[[1]]],"biases":[[0]]})"),
      ValidationError);
}

}  // namespace
