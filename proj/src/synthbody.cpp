#include "nasa/synthbody.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <limits>

namespace nasa {

double CapsuleBody::mean_radius() const {
  double s = 0.0;
  for (const auto& c : capsules) s += c.radius;
  return capsules.empty() ? 0.0 : s / static_cast<double>(capsules.size());
}

void CapsuleBody::validate() const {
  if (static_cast<int>(capsules.size()) != rig.bone_count())
    throw Error(ErrorCode::InvalidInput, "one capsule per bone required");
  for (const auto& c : capsules) {
    if (c.p.size() != dim() || c.q.size() != dim()) throw Error(ErrorCode::DimensionMismatch, "capsule endpoints");
    if (!(c.radius > 0.0)) throw Error(ErrorCode::InvalidInput, "capsule radius must be positive");
    if (!(c.bulge >= 0.0 && c.bulge < 1.0)) throw Error(ErrorCode::InvalidInput, "bulge must lie in [0, 1)");
    if (!((c.q - c.p).norm() > 0.0)) throw Error(ErrorCode::InvalidInput, "capsule segment has zero length");
  }
}

CapsuleBody make_chain_body(const ChainBodyParams& params) {
  check_dim(params.dim);
  std::vector<int> parent(params.bones);
  std::vector<Vec> offsets(params.bones, Vec::Zero(params.dim));
  CapsuleBody body;
  for (int b = 0; b < params.bones; ++b) {
    parent[b] = b - 1;
    if (b > 0) offsets[b](0) = params.segment_length;
    Capsule c;
    c.p = Vec::Zero(params.dim);
    c.q = Vec::Zero(params.dim);
    c.q(0) = params.segment_length;
    c.radius = params.radius;
    c.bulge = params.bulge;
    body.capsules.push_back(c);
  }
  body.rig = Rig(params.dim, parent, offsets);
  body.validate();
  return body;
}

Aabb Aabb::scaled(double factor) const {
  const Vec c = center();
  const Vec half = 0.5 * factor * (hi - lo);
  return {c - half, c + half};
}

bool Aabb::contains(const Vec& x) const {
  return (x.array() >= lo.array()).all() && (x.array() <= hi.array()).all();
}

double bone_bend(const PosedBones& posed, const Rig& rig, int b) {
  if (b == 0) return 0.0;
  const Mat rel = posed.bones[rig.parent(b)].rotation.transpose() * posed.bones[b].rotation;
  double angle;
  if (rig.dim() == 2) {
    angle = std::abs(std::atan2(rel(1, 0), rel(0, 0)));
  } else {
    angle = std::acos(std::clamp(0.5 * (rel.trace() - 1.0), -1.0, 1.0));
  }
  return std::clamp(angle / M_PI, 0.0, 1.0);
}

double effective_radius(const CapsuleBody& body, const PosedBones& posed, int b) {
  const Capsule& c = body.capsules[b];
  return c.radius * (1.0 + c.bulge * bone_bend(posed, body.rig, b));
}

double segment_distance(const Capsule& c, const Vec& local) {
  const Vec ab = c.q - c.p;
  const double t = std::clamp((local - c.p).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
  return (local - (c.p + t * ab)).norm();
}

Aabb posed_bounds(const CapsuleBody& body, const PosedBones& posed) {
  const int d = body.dim();
  Vec lo = Vec::Constant(d, std::numeric_limits<double>::infinity());
  Vec hi = Vec::Constant(d, -std::numeric_limits<double>::infinity());
  for (int b = 0; b < body.bone_count(); ++b) {
    const double r = effective_radius(body, posed, b);
    for (const Vec& e : {body.capsules[b].p, body.capsules[b].q}) {
      const Vec w = posed.bones[b].apply(e);
      lo = lo.cwiseMin(w - Vec::Constant(d, r));
      hi = hi.cwiseMax(w + Vec::Constant(d, r));
    }
  }
  return {lo, hi};
}

bool part_occupancy(const CapsuleBody& body, const PosedBones& posed, int b, const Vec& x) {
  const Vec local = posed.inverses[b].apply(x);
  return segment_distance(body.capsules[b], local) <= effective_radius(body, posed, b);
}

int gt_occupancy(const CapsuleBody& body, const PosedBones& posed, const Vec& x) {
  for (int b = 0; b < body.bone_count(); ++b)
    if (part_occupancy(body, posed, b, x)) return 1;
  return 0;
}

std::vector<std::uint8_t> gt_occupancy(const CapsuleBody& body, const PosedBones& posed, const Points& x) {
  std::vector<std::uint8_t> out(static_cast<std::size_t>(x.cols()), 0);
  std::vector<double> radii(body.bone_count());
  for (int b = 0; b < body.bone_count(); ++b) radii[b] = effective_radius(body, posed, b);
  for (Eigen::Index i = 0; i < x.cols(); ++i) {
    const Vec xi = x.col(i);
    for (int b = 0; b < body.bone_count(); ++b) {
      if (segment_distance(body.capsules[b], posed.inverses[b].apply(xi)) <= radii[b]) {
        out[i] = 1;
        break;
      }
    }
  }
  return out;
}

namespace {

double capsule_measure(int d, double length, double r) {
  return d == 2 ? 2.0 * length + 2.0 * M_PI * r : 2.0 * M_PI * r * length + 4.0 * M_PI * r * r;
}

// Uniform point on the boundary of a local capsule with radius r; returns (point, normal).
std::pair<Vec, Vec> sample_capsule_surface(const Capsule& c, double r, Rng& rng) {
  const int d = static_cast<int>(c.p.size());
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const Vec ab = c.q - c.p;
  const double len = ab.norm();
  const Vec axis = ab / len;
  if (d == 2) {
    Vec perp(2);
    perp << -axis(1), axis(0);
    const double total = capsule_measure(2, len, r);
    double s = uni(rng) * total;
    if (s < 2.0 * len) {
      const double side = s < len ? 1.0 : -1.0;
      const double t = s < len ? s : s - len;
      Vec n = side * perp;
      return {Vec(c.p + t * axis + r * n), n};
    }
    const double phi = 2.0 * M_PI * uni(rng);
    Vec n = std::cos(phi) * axis + std::sin(phi) * perp;
    const Vec centre = n.dot(axis) >= 0.0 ? c.q : c.p;
    return {Vec(centre + r * n), n};
  }
  // 3D: lateral cylinder vs. two hemispherical caps.
  Eigen::Vector3d a(axis(0), axis(1), axis(2));
  Eigen::Vector3d e1 = a.unitOrthogonal();
  Eigen::Vector3d e2 = a.cross(e1);
  const double lateral = 2.0 * M_PI * r * len;
  const double total = capsule_measure(3, len, r);
  if (uni(rng) * total < lateral) {
    const double t = uni(rng) * len;
    const double psi = 2.0 * M_PI * uni(rng);
    Eigen::Vector3d n = std::cos(psi) * e1 + std::sin(psi) * e2;
    Vec nv = n;
    return {Vec(c.p + t * axis + r * nv), nv};
  }
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::Vector3d n(gauss(rng), gauss(rng), gauss(rng));
  n.normalize();
  Vec nv = n;
  const Vec centre = nv.dot(axis) >= 0.0 ? c.q : c.p;
  return {Vec(centre + r * nv), nv};
}

}  // namespace

SurfaceSamples surface_samples(const CapsuleBody& body, const PosedBones& posed, int n, std::uint64_t seed) {
  if (n < 1) throw Error(ErrorCode::InvalidInput, "surface_samples needs n >= 1");
  const int d = body.dim();
  const int nb = body.bone_count();
  std::vector<double> radii(nb), cumulative(nb);
  double acc = 0.0;
  for (int b = 0; b < nb; ++b) {
    radii[b] = effective_radius(body, posed, b);
    const Capsule& c = body.capsules[b];
    acc += capsule_measure(d, (c.q - c.p).norm(), radii[b]);
    cumulative[b] = acc;
  }
  const double eps = 1e-4 * posed_bounds(body, posed).diagonal();

  Rng rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  SurfaceSamples out;
  out.points.resize(d, n);
  out.normals.resize(d, n);
  out.part.reserve(n);
  const long max_attempts = 100L * n;
  long attempts = 0;
  int accepted = 0;
  while (accepted < n) {
    if (++attempts > max_attempts)
      throw Error(ErrorCode::SamplingExhausted, "rejection sampling exceeded 100 * n attempts");
    const double pick = uni(rng) * acc;
    const int b = static_cast<int>(std::upper_bound(cumulative.begin(), cumulative.end(), pick) - cumulative.begin());
    const int part = std::min(b, nb - 1);
    auto [local, local_normal] = sample_capsule_surface(body.capsules[part], radii[part], rng);
    const Vec world = posed.bones[part].apply(local);
    bool interior = false;
    for (int o = 0; o < nb && !interior; ++o) {
      if (o == part) continue;
      const double sd = segment_distance(body.capsules[o], posed.inverses[o].apply(world)) - radii[o];
      interior = sd < 2.0 * eps;
    }
    if (interior) continue;
    out.points.col(accepted) = world;
    out.normals.col(accepted) = posed.bones[part].rotation * local_normal;
    out.part.push_back(part);
    ++accepted;
  }
  return out;
}

Eigen::VectorXd skinning_weights(const CapsuleBody& body, const Vec& rest_point) {
  const int nb = body.bone_count();
  const double tau = 0.1 * body.mean_radius();
  Eigen::VectorXd logits(nb);
  for (int b = 0; b < nb; ++b) {
    const Vec local = rest_point - body.rig.rest_translation(b);
    logits(b) = -(segment_distance(body.capsules[b], local) - body.capsules[b].radius) / tau;
  }
  const double m = logits.maxCoeff();
  Eigen::VectorXd w = (logits.array() - m).exp();
  return w / w.sum();
}

int dominant_part(const CapsuleBody& body, const Vec& rest_point) {
  const Eigen::VectorXd w = skinning_weights(body, rest_point);
  int best = 0;
  for (int b = 1; b < w.size(); ++b)
    if (w(b) > w(best)) best = b;
  return best;
}

double evaluate_channel(const Channel& channel, double t) {
  double v = 0.0;
  for (const auto& s : channel) {
    const double w = 2.0 * M_PI * s.frequency * t;
    // sin(w + pi) evaluated directly leaves a 1e-16 residue at t = 0
    v += s.amplitude * (s.phase == M_PI ? -std::sin(w) : std::sin(w + s.phase));
  }
  return v;
}

namespace {

Channel random_channel(Rng& rng, const AnimationParams& p, double max_amp, double max_vel) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  Channel ch;
  double amp_sum = 0.0, vel_sum = 0.0;
  for (int k = 0; k < p.components; ++k) {
    Sinusoid s;
    const double period = p.min_period_frames + uni(rng) * (p.max_period_frames - p.min_period_frames);
    s.frequency = p.frame_rate / period;
    s.amplitude = 0.3 + 0.7 * uni(rng);
    s.phase = uni(rng) < 0.5 ? 0.0 : M_PI;
    amp_sum += s.amplitude;
    vel_sum += s.amplitude * 2.0 * M_PI / period;
    ch.push_back(s);
  }
  double scale = 0.0;
  if (amp_sum > 0.0) scale = std::min(max_amp / amp_sum, max_vel / vel_sum);
  for (auto& s : ch) s.amplitude *= scale;
  return ch;
}

}  // namespace

AnimationSpec make_animation_spec(const Rig& rig, const AnimationParams& params, std::uint64_t seed) {
  if (!(params.max_joint_amplitude < M_PI)) throw Error(ErrorCode::InvalidInput, "joint amplitude must stay below pi");
  Rng rng(seed);
  AnimationSpec spec;
  spec.frame_count = params.frame_count;
  spec.frame_rate = params.frame_rate;
  spec.seed = seed;
  const int jp = rig.joint_param_size();
  for (int b = 0; b < rig.bone_count(); ++b) {
    for (int c = 0; c < jp; ++c) {
      // The root joint is carried by the root transform.
      if (b == 0) {
        spec.joint_channels.emplace_back();
        continue;
      }
      const double amp = params.max_joint_amplitude / std::sqrt(static_cast<double>(jp));
      spec.joint_channels.push_back(random_channel(rng, params, amp, params.max_joint_velocity / std::sqrt(jp)));
    }
  }
  for (int c = 0; c < jp; ++c)
    spec.root_rotation.push_back(random_channel(rng, params, params.root_rotation_amplitude, params.max_root_velocity));
  for (int c = 0; c < rig.dim(); ++c)
    spec.root_translation.push_back(random_channel(rng, params, params.root_translation_amplitude, params.max_root_velocity));
  return spec;
}

std::vector<Pose> generate_animation(const CapsuleBody& body, const AnimationSpec& spec) {
  const Rig& rig = body.rig;
  const int jp = rig.joint_param_size();
  const int d = rig.dim();
  if (static_cast<int>(spec.joint_channels.size()) != rig.bone_count() * jp ||
      static_cast<int>(spec.root_rotation.size()) != jp || static_cast<int>(spec.root_translation.size()) != d)
    throw Error(ErrorCode::DimensionMismatch, "animation channels do not match rig");
  std::vector<Pose> frames;
  frames.reserve(spec.frame_count);
  for (int f = 0; f < spec.frame_count; ++f) {
    const double t = static_cast<double>(f) / spec.frame_rate;
    Pose pose = Pose::rest(rig);
    for (int b = 0; b < rig.bone_count(); ++b)
      for (int c = 0; c < jp; ++c) pose.joints[b](c) = to_f32(evaluate_channel(spec.joint_channels[b * jp + c], t));
    Vec rot(jp);
    for (int c = 0; c < jp; ++c) rot(c) = evaluate_channel(spec.root_rotation[c], t);
    pose.root.rotation = joint_rotation(d, rot).unaryExpr([](double v) { return to_f32(v); });
    for (int c = 0; c < d; ++c) pose.root.translation(c) = to_f32(evaluate_channel(spec.root_translation[c], t));
    frames.push_back(std::move(pose));
  }
  return frames;
}

}  // namespace nasa
