#pragma once

#include "nasa/common.hpp"

#include <span>
#include <utility>
#include <vector>

namespace nasa {

/// Rigid frame in R^d: x -> rotation * x + translation.
struct RigidTransform {
  Mat rotation;
  Vec translation;

  static RigidTransform identity(int dim);
  static RigidTransform translate(const Vec& t);

  int dim() const { return static_cast<int>(translation.size()); }

  RigidTransform operator*(const RigidTransform& rhs) const;

  /// Analytic inverse (transpose rotation, rotate-and-negate translation).
  RigidTransform inverse() const;

  Vec apply(const Vec& x) const { return rotation * x + translation; }
  Points apply(const Points& x) const;
  /// Expressions resolve to a point or a batch by their compile-time column count.
  template <typename Derived>
  auto apply(const Eigen::MatrixBase<Derived>& x) const {
    if constexpr (Derived::ColsAtCompileTime == 1) return apply(Vec(x));
    else return apply(Points(x));
  }

  /// (d+1)x(d+1) homogeneous matrix.
  Eigen::MatrixXd homogeneous() const;
};

double max_abs_difference(const RigidTransform& a, const RigidTransform& b);

/// Skeleton topology. parent[0] == -1 and parent[b] < b for b > 0.
class Rig {
 public:
  Rig() = default;
  Rig(int dim, std::vector<int> parent, std::vector<Vec> rest_offsets);

  int dim() const { return dim_; }
  int bone_count() const { return static_cast<int>(parent_.size()); }
  int parent(int b) const { return parent_[b]; }
  const std::vector<int>& parents() const { return parent_; }
  const Vec& rest_offset(int b) const { return rest_offsets_[b]; }
  const std::vector<Vec>& rest_offsets() const { return rest_offsets_; }

  /// Joint position of bone b at rest (cumulative offsets along the chain).
  const Vec& rest_translation(int b) const { return rest_translations_[b]; }

  /// Translation-only rest frame of bone b.
  RigidTransform rest_frame(int b) const { return RigidTransform::translate(rest_translations_[b]); }

  /// Directed (parent, child) edges.
  std::vector<std::pair<int, int>> edges() const;

  /// Joint parameter count per bone: 1 in 2D (angle), 3 in 3D (axis-angle).
  int joint_param_size() const { return dim_ == 2 ? 1 : 3; }

  bool operator==(const Rig&) const = default;

 private:
  int dim_ = 2;
  std::vector<int> parent_;
  std::vector<Vec> rest_offsets_;
  std::vector<Vec> rest_translations_;
};

struct Pose {
  std::vector<Vec> joints;
  RigidTransform root;

  static Pose rest(const Rig& rig);

  bool operator==(const Pose& other) const;
};

/// Left-composes a global rigid motion G onto the root.
Pose apply_global(const RigidTransform& g, const Pose& pose);

struct PosedBones {
  std::vector<RigidTransform> bones;
  std::vector<RigidTransform> inverses;

  int bone_count() const { return static_cast<int>(bones.size()); }

  /// Builds from already-known inverse frames C_b = B_b^-1.
  static PosedBones from_inverses(std::vector<RigidTransform> inverses);
};

Mat rotation_2d(double angle);
Mat rotation_axis_angle(const Vec& axis_angle);

/// Rotation for one joint parameter block (angle in 2D, axis-angle in 3D).
Mat joint_rotation(int dim, const Vec& param);

/// Magnitude of a joint rotation in radians.
double joint_angle_magnitude(const Vec& param);

PosedBones forward_kinematics(const Rig& rig, const Pose& pose);

/// {B_b^-1 t0} concatenated over bones, t0 = translation of the root bone.
Eigen::VectorXd pose_encoding(const PosedBones& posed);
Eigen::VectorXd pose_encoding(std::span<const RigidTransform> inverses);

/// Gram-Schmidt rotation from two vectors. In 2D only the direction of u is used.
Mat rotation_from_two_vectors(const Vec& u, const Vec& v, double eps_norm = 1e-8);

/// Reverse pass of rotation_from_two_vectors: given dL/dR returns (dL/du, dL/dv).
std::pair<Vec, Vec> rotation_from_two_vectors_backward(const Vec& u, const Vec& v, const Mat& d_rotation);

/// Projects a near-rotation back onto SO(d) by Gram-Schmidt on its first columns.
Mat reorthogonalize(const Mat& r);

/// Random rigid transform with translation components in [-scale, scale].
RigidTransform random_rigid(int dim, Rng& rng, double translation_scale = 1.0);

}  // namespace nasa
