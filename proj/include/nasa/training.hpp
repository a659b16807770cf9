#pragma once

#include "nasa/dataset.hpp"
#include "nasa/occmodels.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace nasa {

struct TrainConfig {
  double lambda = 0.5;
  int batch_frames = 12;
  int points_uniform = 1024;  // per step, split across the batch frames
  int points_surface = 1024;
  int vertices = 2048;
  double sigma_frac = 0.03;
  double learning_rate = 2e-3;  // desk scale; 1e-4 suits the 200K-step schedule
  int iterations = 5000;
  std::uint64_t seed = 0;
  BlendMode blend = BlendMode::Soft;
  int history_interval = 100;
  int checkpoint_interval = 0;  // 0 disables the checkpoint callback

  void validate() const;
};

/// One posed frame of a training minibatch.
struct BatchItem {
  PosedBones posed;
  Points points;
  Eigen::RowVectorXd labels;
  Points vertices;
  std::vector<int> owners;
};

using Minibatch = std::vector<BatchItem>;

/// Fresh oracle samples for one step: uniform-in-box and near-surface points with labels,
/// plus on-surface vertices with their dominant part.
Minibatch sample_minibatch(const CapsuleBody& body, std::span<const Pose> poses, const TrainConfig& config,
                           std::uint64_t seed);

struct LossValue {
  double total = 0.0;
  double occupancy = 0.0;
  double weights = 0.0;
};

/// Mean squared occupancy error over every point in the batch.
double loss_occupancy(const OccupancyModel& model, const Minibatch& batch, BlendMode mode = BlendMode::Soft);

/// (1/V)(1/B) sum_v sum_b (part_b(v) - I_b(v))^2 with I = 0.5 at the owner and 0 elsewhere.
/// Throws UnsupportedModel for U.
double loss_weights(const OccupancyModel& model, const Minibatch& batch);

/// L_occupancy + lambda * L_weights (the weight term is skipped for U). When grad is
/// non-null it receives dL/dω; per-frame partial gradients are reduced in frame order.
LossValue total_loss(const OccupancyModel& model, const Minibatch& batch, double lambda, BlendMode mode,
                     Eigen::VectorXd* grad = nullptr);

struct LossRecord {
  int step = 0;  // last step of the window (1-based)
  double total = 0.0;
  double occupancy = 0.0;
  double weights = 0.0;
};

struct TrainResult {
  std::vector<LossRecord> history;  // window means every history_interval steps
  int skipped_steps = 0;            // non-finite gradients
};

using CheckpointFn = std::function<void(int step, const OccupancyModel& model)>;

/// Adam on fresh oracle minibatches drawn from the given training poses.
TrainResult train(OccupancyModel& model, const CapsuleBody& body, std::span<const Pose> poses,
                  const TrainConfig& config, const CheckpointFn& on_checkpoint = {});

std::vector<Pose> poses_of(const std::vector<FrameSamples>& frames);

std::string loss_history_csv(const TrainResult& result);

}  // namespace nasa
