#pragma once

#include "nasa/kinematics.hpp"

#include <cstdint>
#include <vector>

namespace nasa {

/// Segment-swept ball in the bone-local frame.
struct Capsule {
  Vec p;
  Vec q;
  double radius = 0.1;
  double bulge = 0.0;  // radius grows by (1 + bulge * bend) with joint bend in [0, 1]

  bool operator==(const Capsule& other) const = default;
};

struct CapsuleBody {
  Rig rig;
  std::vector<Capsule> capsules;

  int dim() const { return rig.dim(); }
  int bone_count() const { return rig.bone_count(); }
  double mean_radius() const;

  /// Throws InvalidInput if any capsule violates r > 0, bulge in [0, 1), |q - p| > 0.
  void validate() const;

  bool operator==(const CapsuleBody& other) const = default;
};

struct ChainBodyParams {
  int dim = 2;
  int bones = 5;
  double radius = 0.12;
  double segment_length = 0.5;
  double bulge = 0.3;
};

/// Serial chain along +x; each capsule spans from its joint to the next.
CapsuleBody make_chain_body(const ChainBodyParams& params);

struct Aabb {
  Vec lo;
  Vec hi;

  Vec center() const { return 0.5 * (lo + hi); }
  double diagonal() const { return (hi - lo).norm(); }
  Aabb scaled(double factor) const;
  bool contains(const Vec& x) const;
};

/// Bend of bone b in [0, 1]: relative rotation angle to its parent over pi.
/// The root bone has no articulation relative to the global frame, so its bend is 0.
double bone_bend(const PosedBones& posed, const Rig& rig, int b);

double effective_radius(const CapsuleBody& body, const PosedBones& posed, int b);

/// Distance from a bone-local point to the capsule axis segment.
double segment_distance(const Capsule& c, const Vec& local);

/// Exact bounding box of the posed union of capsules.
Aabb posed_bounds(const CapsuleBody& body, const PosedBones& posed);

/// Per-part indicator: point inside the (bulged) capsule of bone b.
bool part_occupancy(const CapsuleBody& body, const PosedBones& posed, int b, const Vec& x);

/// Max over parts of the per-part indicator.
int gt_occupancy(const CapsuleBody& body, const PosedBones& posed, const Vec& x);
std::vector<std::uint8_t> gt_occupancy(const CapsuleBody& body, const PosedBones& posed, const Points& x);

struct SurfaceSamples {
  Points points;   // d x n
  Points normals;  // d x n, outward unit normals
  std::vector<int> part;
};

SurfaceSamples surface_samples(const CapsuleBody& body, const PosedBones& posed, int n, std::uint64_t seed);

/// Softmin over rest-pose capsule signed distances, normalized to sum to one.
Eigen::VectorXd skinning_weights(const CapsuleBody& body, const Vec& rest_point);

/// argmax of skinning_weights; ties go to the lowest index.
int dominant_part(const CapsuleBody& body, const Vec& rest_point);

struct Sinusoid {
  double amplitude = 0.0;
  double frequency = 0.0;  // Hz
  double phase = 0.0;

  bool operator==(const Sinusoid& other) const = default;
};

using Channel = std::vector<Sinusoid>;

struct AnimationSpec {
  std::vector<Channel> joint_channels;     // bone_count * joint_param_size, bone-major
  std::vector<Channel> root_rotation;      // 1 (2D) or 3 (3D) channels
  std::vector<Channel> root_translation;   // d channels
  int frame_count = 50;
  double frame_rate = 30.0;
  std::uint64_t seed = 0;
};

double evaluate_channel(const Channel& channel, double t);

struct AnimationParams {
  int frame_count = 50;
  double frame_rate = 30.0;
  int components = 2;
  double max_joint_amplitude = 2.0;
  double max_joint_velocity = 0.25;  // rad per frame
  double root_rotation_amplitude = 1.0;
  double root_translation_amplitude = 0.3;
  double max_root_velocity = 0.05;
  double min_period_frames = 20.0;
  double max_period_frames = 80.0;
};

/// Draws a random sinusoid mixture respecting the amplitude and velocity caps.
/// Phases are 0 or pi so that frame 0 is the rest pose.
AnimationSpec make_animation_spec(const Rig& rig, const AnimationParams& params, std::uint64_t seed);

/// Frame t evaluates every channel at time t / frame_rate. Values are rounded to f32.
std::vector<Pose> generate_animation(const CapsuleBody& body, const AnimationSpec& spec);

}  // namespace nasa
