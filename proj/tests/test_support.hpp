#pragma once

#include "nasa/kinematics.hpp"
#include "nasa/synthbody.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <functional>

namespace nasa::test {

/// Central differences of a scalar function along every coordinate.
inline Eigen::VectorXd central_diff(const std::function<double(const Eigen::VectorXd&)>& f, Eigen::VectorXd x,
                                    double h = 1e-5) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double x0 = x(i);
    x(i) = x0 + h;
    const double fp = f(x);
    x(i) = x0 - h;
    const double fm = f(x);
    x(i) = x0;
    g(i) = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// Max over components of |a - n| / max(|a|, |n|, 1e-2 * |n|_inf, 1e-12).
/// The floor keeps components that are tiny relative to the whole gradient from dominating.
inline double max_rel_error(const Eigen::VectorXd& analytic, const Eigen::VectorXd& numeric) {
  const double scale = numeric.cwiseAbs().maxCoeff();
  double worst = 0.0;
  for (Eigen::Index i = 0; i < numeric.size(); ++i) {
    const double denom = std::max({std::abs(analytic(i)), std::abs(numeric(i)), 1e-2 * scale, 1e-12});
    worst = std::max(worst, std::abs(analytic(i) - numeric(i)) / denom);
  }
  return worst;
}

inline CapsuleBody chain(int bones, double bulge, int dim = 2, double radius = 0.12, double length = 0.5) {
  ChainBodyParams p;
  p.dim = dim;
  p.bones = bones;
  p.bulge = bulge;
  p.radius = radius;
  p.segment_length = length;
  return make_chain_body(p);
}

inline Pose random_pose(const Rig& rig, Rng& rng, double amplitude = 1.0, double root_scale = 1.0) {
  std::uniform_real_distribution<double> uni(-amplitude, amplitude);
  Pose pose = Pose::rest(rig);
  for (int b = 0; b < rig.bone_count(); ++b)
    for (Eigen::Index k = 0; k < pose.joints[b].size(); ++k) pose.joints[b](k) = uni(rng);
  pose.root = random_rigid(rig.dim(), rng, root_scale);
  return pose;
}

}  // namespace nasa::test
