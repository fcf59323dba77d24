#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "tubedagger/errors.hpp"
#include "tubedagger/json_util.hpp"
#include "tubedagger/reachtube.hpp"

namespace tubedagger {

namespace detail {

struct BallMaxResult {
  double value = 0.0;  // max of ||b + M u|| over ||u|| <= 1
  Vec u;               // argmax on the unit sphere
};

// Maximize the convex function ||b + M u|| over the unit ball.  The maximum
// sits on the sphere, where the stationarity condition (nu I - M^T M) u =
// M^T b turns into a secular equation for the multiplier nu >= lambda_max.
// Solved by eigendecomposition plus bisection; the hard case (gradient
// orthogonal to the top eigenspace) gets the classic rank-one correction
// along the top eigenvector.
inline BallMaxResult max_norm_affine_on_ball(const Mat& m, const Vec& b) {
  const Eigen::Index dim = b.size();
  const Mat h = m.transpose() * m;
  const Vec g = m.transpose() * b;
  const Eigen::SelfAdjointEigenSolver<Mat> eig(h);
  const Vec lam = eig.eigenvalues();  // ascending
  const Mat q = eig.eigenvectors();
  const Vec gh = q.transpose() * g;
  const double lam_max = lam(dim - 1);
  const double lam_tol = 1e-12 * std::max(std::abs(lam_max), 1e-300);

  const auto value_at = [&](const Vec& u) {
    return (b + m * u).norm();
  };

  // Energy of the gradient inside the top eigenspace decides hard vs regular.
  double top_energy = 0.0;
  for (Eigen::Index i = 0; i < dim; ++i) {
    if (lam(i) >= lam_max - lam_tol) top_energy += gh(i) * gh(i);
  }
  const double g_norm = gh.norm();

  if (std::sqrt(top_energy) <= 1e-14 * std::max(g_norm, 1e-300) || g_norm == 0.0) {
    // Hard case candidate: pseudo-inverse solution in the non-top eigenspace
    // plus a correction along the top eigenvector to reach the sphere.
    Vec coords = Vec::Zero(dim);
    for (Eigen::Index i = 0; i < dim; ++i) {
      if (lam(i) < lam_max - lam_tol) coords(i) = gh(i) / (lam_max - lam(i));
    }
    const double perp_sq = coords.squaredNorm();
    if (perp_sq <= 1.0) {
      coords(dim - 1) += std::sqrt(std::max(0.0, 1.0 - perp_sq));
      BallMaxResult result;
      result.u = q * coords;
      result.value = value_at(result.u);
      return result;
    }
    // ||u_perp|| > 1 means the multiplier lies strictly above lambda_max;
    // fall through to the regular root find.
  }

  // phi(nu) = sum_i gh_i^2 / (nu - lam_i)^2 is strictly decreasing on
  // (lam_max, inf); the sphere constraint is phi(nu) = 1.  phi(lam_max +
  // ||g||) <= 1 gives the upper bracket.
  const auto phi = [&](double nu) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < dim; ++i) {
      const double d = nu - lam(i);
      s += (gh(i) / d) * (gh(i) / d);
    }
    return s;
  };
  double lo = lam_max;
  double hi = lam_max + g_norm + 1e-300;
  for (int iter = 0; iter < 200; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (phi(mid) > 1.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const double nu = hi;
  Vec coords(dim);
  for (Eigen::Index i = 0; i < dim; ++i) coords(i) = gh(i) / (nu - lam(i));
  BallMaxResult result;
  result.u = q * coords;
  const double norm = result.u.norm();
  if (norm > 0.0) result.u /= norm;  // project exactly onto the sphere
  result.value = value_at(result.u);
  return result;
}

struct SliceContainment {
  double max_membership = 0.0;  // max outer membership over the inner slice
  Vec witness;                  // where the maximum is attained
};

inline SliceContainment slice_containment(const TubeSlice& inner,
                                          const TubeSlice& outer) {
  if (inner.c.size() != outer.c.size()) {
    throw ShapeError("containment check on mismatched dimensions");
  }
  // Points of the inner slice: x = c_in + r_in * A_in^{-1} u, ||u|| <= 1.
  // Outer membership becomes ||b + M u|| / r_out.
  const Mat inner_inv = inner.A.partialPivLu().solve(
      Mat::Identity(inner.A.rows(), inner.A.cols()));
  const Mat m = outer.A * inner_inv * inner.r;
  const Vec b = outer.A * (inner.c - outer.c);
  const BallMaxResult max = max_norm_affine_on_ball(m, b);
  SliceContainment result;
  result.max_membership = max.value / outer.r;
  result.witness = inner.c + inner.r * (inner_inv * max.u);
  return result;
}

}  // namespace detail

// True iff the inner ellipsoid is a subset of the outer one (closed sets, so
// touching boundaries count as contained).
inline bool ellipsoid_contained(const TubeSlice& inner, const TubeSlice& outer) {
  return detail::slice_containment(inner, outer).max_membership <= 1.0 + 1e-12;
}

struct ContainmentReport {
  std::vector<bool> contained;          // per slice
  std::vector<double> max_membership;   // per slice: worst outer membership
  bool all_contained = false;
  std::optional<int> first_violation;
  std::optional<Vec> witness;           // a point of the first violating slice
                                        // that escapes the expert slice
  double probability_p = 0.0;           // 1 - gamma of the imitator tube
  double imitator_gamma = 0.0;
  double expert_gamma = 0.0;
};

// Slice-wise containment of the imitator tube in the expert tube.  If every
// slice is contained, the imitator inherits the expert's safety with
// probability p = 1 - gamma (a probabilistic statement, reported rather than
// asserted).
inline ContainmentReport tube_contained(const ReachTube& imitator,
                                        const ReachTube& expert) {
  if (imitator.slices.size() != expert.slices.size()) {
    throw AlignmentError("tubes have different slice counts");
  }
  for (std::size_t t = 0; t < imitator.slices.size(); ++t) {
    if (imitator.slices[t].tau != expert.slices[t].tau) {
      throw AlignmentError("tubes are on different time grids");
    }
  }
  ContainmentReport report;
  report.probability_p = 1.0 - imitator.gamma;
  report.imitator_gamma = imitator.gamma;
  report.expert_gamma = expert.gamma;
  report.all_contained = true;
  for (std::size_t t = 0; t < imitator.slices.size(); ++t) {
    const detail::SliceContainment sc =
        detail::slice_containment(imitator.slices[t], expert.slices[t]);
    const bool ok = sc.max_membership <= 1.0 + 1e-12;
    report.contained.push_back(ok);
    report.max_membership.push_back(sc.max_membership);
    if (!ok && report.all_contained) {
      report.all_contained = false;
      report.first_violation = static_cast<int>(t);
      report.witness = sc.witness;
    }
  }
  return report;
}

inline std::string serialize_containment_report(const ContainmentReport& report) {
  JsonWriter w;
  w.begin_object();
  w.key("all_contained").boolean(report.all_contained);
  w.key("probability_p").number(report.probability_p);
  w.key("imitator_gamma").number(report.imitator_gamma);
  w.key("expert_gamma").number(report.expert_gamma);
  if (report.first_violation.has_value()) {
    w.key("first_violation").integer(*report.first_violation);
  } else {
    w.key("first_violation").null_value();
  }
  if (report.witness.has_value()) {
    w.key("witness").begin_array();
    for (Eigen::Index i = 0; i < report.witness->size(); ++i) {
      w.number((*report.witness)(i));
    }
    w.end_array();
  } else {
    w.key("witness").null_value();
  }
  w.key("contained").begin_array();
  for (const bool c : report.contained) w.boolean(c);
  w.end_array();
  w.key("max_membership").begin_array();
  for (const double v : report.max_membership) w.number(v);
  w.end_array();
  w.end_object();
  return w.str();
}

}  // namespace tubedagger
