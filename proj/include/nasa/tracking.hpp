#pragma once

#include "nasa/dataset.hpp"
#include "nasa/evaluation.hpp"
#include "nasa/occmodels.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace nasa {

struct TrackConfig {
  double sigma = 0.05;  // smoothing kernel std in world units; 0 disables smoothing
  int samples = 8;
  int steps_per_frame = 50;
  double learning_rate = 1e-2;
  double w_prior = 100.0;  // balances a fit energy summed over hundreds of points
  std::uint64_t seed = 0;
  bool antithetic = true;

  /// Defaults with sigma = 0.05 of the rest-pose bounding-box diagonal.
  static TrackConfig defaults_for(const CapsuleBody& body);
  void validate() const;
};

/// d x (N*S) standard-normal offsets, column j*S + s for point j; antithetic pairs (+e, -e) when enabled.
Points perturbations(int dim, Eigen::Index n, int samples, bool antithetic, std::uint64_t seed);

/// (1/S) sum_s eval(x + sigma e_s) with the soft blend.
Eigen::RowVectorXd smoothed_occupancy(const OccupancyModel& model, std::span<const RigidTransform> inverses,
                                      const Points& x, double sigma, int samples, bool antithetic,
                                      std::uint64_t seed);

/// sum_x (smoothed_occupancy(x) - 0.5)^2. Frame gradients are added into grad_frames when given.
double fitting_energy(const OccupancyModel& model, std::span<const RigidTransform> inverses, const Points& cloud,
                      const TrackConfig& config, std::uint64_t seed,
                      std::vector<FrameGradient>* grad_frames = nullptr);

/// sum over rig edges of |(t̄_b2 - t̄_b1) - C_b1 t_b2|^2 with t_b2 the origin of bone b2.
double prior_energy(std::span<const RigidTransform> inverses, const Rig& rig,
                    std::vector<FrameGradient>* grad_frames = nullptr);

/// Per-bone update parameters (u, v, delta), 3d values per bone.
Eigen::VectorXd identity_update(int dim, int bones);

/// Candidate inverse frames ΔC_b(u, v, delta) · C_b.
std::vector<RigidTransform> apply_update(std::span<const RigidTransform> inverses, const Eigen::VectorXd& update);

struct EnergyValue {
  double fit = 0.0;
  double prior = 0.0;
  double total = 0.0;
};

/// E_fit + w_prior E_prior at the candidate frames; grad receives dE/d(update) when given.
EnergyValue update_energy(const OccupancyModel& model, const Rig& rig, std::span<const RigidTransform> inverses,
                          const Eigen::VectorXd& update, const Points& cloud, const TrackConfig& config,
                          std::uint64_t seed, Eigen::VectorXd* grad = nullptr);

struct TrackFrameResult {
  std::vector<RigidTransform> inverses;
  EnergyValue energy;
  bool failed = false;
};

/// Fits the inverse frames to one cloud starting from the previous frame's solution.
TrackFrameResult track_frame(const OccupancyModel& model, const Rig& rig, std::span<const RigidTransform> previous,
                             const Points& cloud, const TrackConfig& config, int frame_index);

struct TrackedFrame {
  int frame = 0;
  std::vector<RigidTransform> inverses;
  double e_fit = 0.0;
  double e_prior = 0.0;
  double joint_error = 0.0;  // mean bone-origin distance / body diagonal
  double iou = 0.0;
  double chamfer_l1 = 0.0;
  double fscore = 0.0;
  bool failed = false;
};

struct TrackResult {
  std::vector<TrackedFrame> frames;
  double mean_joint_error() const;
};

/// Mean distance between recovered and true bone origins as a fraction of the posed diagonal.
double joint_error(std::span<const RigidTransform> inverses, const CapsuleBody& body, const PosedBones& truth);

/// Tracks a sequence whose clouds are the frames' vertices; frame 0 is initialized from its true pose.
/// with_metrics adds IoU / Chamfer / F-score of the tracked model against the oracle.
TrackResult track_sequence(const OccupancyModel& model, const CapsuleBody& body,
                           const std::vector<FrameSamples>& frames, const TrackConfig& config,
                           bool with_metrics = true, const EvalConfig& eval = {});

std::string track_csv(const TrackResult& result);

}  // namespace nasa
