#include "nasa/kinematics.hpp"

#include <Eigen/Geometry>

#include <cmath>

namespace nasa {

RigidTransform RigidTransform::identity(int dim) {
  check_dim(dim);
  return {Mat::Identity(dim, dim), Vec::Zero(dim)};
}

RigidTransform RigidTransform::translate(const Vec& t) {
  const int d = static_cast<int>(t.size());
  return {Mat::Identity(d, d), t};
}

RigidTransform RigidTransform::operator*(const RigidTransform& rhs) const {
  if (rhs.dim() != dim()) throw Error(ErrorCode::DimensionMismatch, "compose");
  return {rotation * rhs.rotation, rotation * rhs.translation + translation};
}

RigidTransform RigidTransform::inverse() const {
  Mat rt = rotation.transpose();
  Vec t = -(rt * translation);
  return {rt, t};
}

Points RigidTransform::apply(const Points& x) const {
  return (rotation * x).colwise() + Eigen::VectorXd(translation);
}

Eigen::MatrixXd RigidTransform::homogeneous() const {
  const int d = dim();
  Eigen::MatrixXd h = Eigen::MatrixXd::Identity(d + 1, d + 1);
  h.topLeftCorner(d, d) = rotation;
  h.topRightCorner(d, 1) = translation;
  return h;
}

double max_abs_difference(const RigidTransform& a, const RigidTransform& b) {
  return (a.homogeneous() - b.homogeneous()).cwiseAbs().maxCoeff();
}

Rig::Rig(int dim, std::vector<int> parent, std::vector<Vec> rest_offsets)
    : dim_(dim), parent_(std::move(parent)), rest_offsets_(std::move(rest_offsets)) {
  check_dim(dim_);
  if (parent_.empty()) throw Error(ErrorCode::InvalidInput, "rig needs at least one bone");
  if (parent_.size() != rest_offsets_.size())
    throw Error(ErrorCode::DimensionMismatch, "parent and offset counts differ");
  if (parent_[0] != -1) throw Error(ErrorCode::InvalidInput, "bone 0 must be the root");
  rest_translations_.reserve(parent_.size());
  for (std::size_t b = 0; b < parent_.size(); ++b) {
    if (rest_offsets_[b].size() != dim_) throw Error(ErrorCode::DimensionMismatch, "rest offset");
    if (b > 0 && (parent_[b] < 0 || parent_[b] >= static_cast<int>(b)))
      throw Error(ErrorCode::InvalidInput, "parent[b] must satisfy 0 <= parent[b] < b");
    Vec base = b == 0 ? Vec(Vec::Zero(dim_)) : rest_translations_[parent_[b]];
    rest_translations_.push_back(base + rest_offsets_[b]);
  }
}

std::vector<std::pair<int, int>> Rig::edges() const {
  std::vector<std::pair<int, int>> out;
  for (int b = 1; b < bone_count(); ++b) out.emplace_back(parent_[b], b);
  return out;
}

Pose Pose::rest(const Rig& rig) {
  Pose p;
  p.joints.assign(rig.bone_count(), Vec::Zero(rig.joint_param_size()));
  p.root = RigidTransform::identity(rig.dim());
  return p;
}

bool Pose::operator==(const Pose& other) const {
  if (joints.size() != other.joints.size()) return false;
  for (std::size_t i = 0; i < joints.size(); ++i)
    if (joints[i] != other.joints[i]) return false;
  return root.rotation == other.root.rotation && root.translation == other.root.translation;
}

Pose apply_global(const RigidTransform& g, const Pose& pose) {
  Pose out = pose;
  out.root = g * pose.root;
  return out;
}

PosedBones PosedBones::from_inverses(std::vector<RigidTransform> inverses) {
  PosedBones p;
  p.bones.reserve(inverses.size());
  for (const auto& c : inverses) p.bones.push_back(c.inverse());
  p.inverses = std::move(inverses);
  return p;
}

Mat rotation_2d(double angle) {
  Mat r(2, 2);
  const double c = std::cos(angle), s = std::sin(angle);
  r << c, -s, s, c;
  return r;
}

Mat rotation_axis_angle(const Vec& axis_angle) {
  const Eigen::Vector3d w(axis_angle(0), axis_angle(1), axis_angle(2));
  const double angle = w.norm();
  if (angle < 1e-15) return Mat::Identity(3, 3);
  return Mat(Eigen::AngleAxisd(angle, w / angle).toRotationMatrix());
}

Mat joint_rotation(int dim, const Vec& param) {
  if (dim == 2) {
    if (param.size() != 1) throw Error(ErrorCode::DimensionMismatch, "2D joint takes one angle");
    return rotation_2d(param(0));
  }
  if (param.size() != 3) throw Error(ErrorCode::DimensionMismatch, "3D joint takes axis-angle");
  return rotation_axis_angle(param);
}

double joint_angle_magnitude(const Vec& param) {
  return param.size() == 1 ? std::abs(param(0)) : param.norm();
}

PosedBones forward_kinematics(const Rig& rig, const Pose& pose) {
  const int nb = rig.bone_count();
  if (static_cast<int>(pose.joints.size()) != nb)
    throw Error(ErrorCode::InvalidInput, "pose joint count does not match rig");
  if (pose.root.dim() != rig.dim()) throw Error(ErrorCode::InvalidInput, "root dimension");
  // Stored roots are f32-rounded matrices; the bones must be exactly rigid for analytic inverses.
  const RigidTransform root{reorthogonalize(pose.root.rotation), pose.root.translation};
  PosedBones out;
  out.bones.reserve(nb);
  out.inverses.reserve(nb);
  for (int b = 0; b < nb; ++b) {
    const Vec& q = pose.joints[b];
    if (q.size() != rig.joint_param_size()) throw Error(ErrorCode::InvalidInput, "joint parameter size");
    if (!q.allFinite()) throw Error(ErrorCode::InvalidInput, "non-finite joint parameter");
    RigidTransform local{joint_rotation(rig.dim(), q), rig.rest_offset(b)};
    const RigidTransform& base = b == 0 ? root : out.bones[rig.parent(b)];
    out.bones.push_back(base * local);
    out.inverses.push_back(out.bones.back().inverse());
  }
  return out;
}

Eigen::VectorXd pose_encoding(std::span<const RigidTransform> inverses) {
  if (inverses.empty()) return {};
  const int d = inverses[0].dim();
  const RigidTransform& c0 = inverses[0];
  const Vec t0 = -(c0.rotation.transpose() * c0.translation);
  Eigen::VectorXd enc(d * static_cast<int>(inverses.size()));
  for (std::size_t b = 0; b < inverses.size(); ++b)
    enc.segment(static_cast<Eigen::Index>(b) * d, d) = inverses[b].apply(t0);
  return enc;
}

Eigen::VectorXd pose_encoding(const PosedBones& posed) { return pose_encoding(posed.inverses); }

namespace {

Vec cross3(const Vec& a, const Vec& b) {
  Vec c(3);
  c << a(1) * b(2) - a(2) * b(1), a(2) * b(0) - a(0) * b(2), a(0) * b(1) - a(1) * b(0);
  return c;
}

}  // namespace

Mat rotation_from_two_vectors(const Vec& u, const Vec& v, double eps_norm) {
  const int d = static_cast<int>(u.size());
  check_dim(d);
  const double nu = u.norm();
  if (!(nu > eps_norm)) throw Error(ErrorCode::DegenerateRotation, "first vector has near-zero norm");
  const Vec r1 = u / nu;
  Mat r(d, d);
  if (d == 2) {
    r << r1(0), -r1(1), r1(1), r1(0);
    return r;
  }
  if (v.size() != 3) throw Error(ErrorCode::DimensionMismatch, "second vector");
  const Vec w = v - v.dot(r1) * r1;
  const double nw = w.norm();
  if (!(nw > eps_norm)) throw Error(ErrorCode::DegenerateRotation, "vectors are near-parallel");
  const Vec r2 = w / nw;
  r.col(0) = r1;
  r.col(1) = r2;
  r.col(2) = cross3(r1, r2);
  return r;
}

std::pair<Vec, Vec> rotation_from_two_vectors_backward(const Vec& u, const Vec& v, const Mat& dr) {
  const int d = static_cast<int>(u.size());
  const double nu = u.norm();
  const Vec r1 = u / nu;
  Vec dr1 = dr.col(0);
  Vec dv = Vec::Zero(v.size());
  if (d == 2) {
    // r2 = (-r1.y, r1.x)
    dr1(0) += dr(1, 1);
    dr1(1) -= dr(0, 1);
  } else {
    const double vr1 = v.dot(r1);
    const Vec w = v - vr1 * r1;
    const double nw = w.norm();
    const Vec r2 = w / nw;
    const Vec dr3 = dr.col(2);
    dr1 += cross3(r2, dr3);
    const Vec dr2 = Vec(dr.col(1)) + cross3(dr3, r1);
    const Vec dw = (dr2 - r2 * r2.dot(dr2)) / nw;
    const double r1dw = r1.dot(dw);
    dv = dw - r1 * r1dw;
    dr1 -= vr1 * dw + r1dw * v;
  }
  Vec du = (dr1 - r1 * r1.dot(dr1)) / nu;
  return {du, dv};
}

Mat reorthogonalize(const Mat& r) { return rotation_from_two_vectors(r.col(0), r.col(1)); }

RigidTransform random_rigid(int dim, Rng& rng, double translation_scale) {
  check_dim(dim);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  RigidTransform g = RigidTransform::identity(dim);
  if (dim == 2) {
    g.rotation = rotation_2d(M_PI * uni(rng));
  } else {
    Eigen::Quaterniond q(gauss(rng), gauss(rng), gauss(rng), gauss(rng));
    q.normalize();
    g.rotation = q.toRotationMatrix();
  }
  for (int i = 0; i < dim; ++i) g.translation(i) = translation_scale * uni(rng);
  return g;
}

}  // namespace nasa
