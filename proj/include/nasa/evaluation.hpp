#pragma once

#include "nasa/dataset.hpp"
#include "nasa/occmodels.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace nasa {

/// Occupancy values in [0,1] at world points for one posed configuration.
using FieldFn = std::function<Eigen::RowVectorXd(const PosedBones&, const Points&)>;

FieldFn model_field(const OccupancyModel& model, BlendMode mode = BlendMode::Hard);
/// The analytic body wrapped as a field (exact 0/1 values).
FieldFn oracle_field(const CapsuleBody& body);

/// |pred ∧ gt| / |pred ∨ gt|; 1 when the union is empty.
double iou(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt);

/// Thresholds field values at 0.5.
std::vector<std::uint8_t> threshold(const Eigen::RowVectorXd& values);

/// Per-frame IoU on each frame's stored eval samples.
std::vector<double> frame_ious(const FieldFn& field, const Rig& rig, const std::vector<FrameSamples>& frames);
double miou(const FieldFn& field, const Rig& rig, const std::vector<FrameSamples>& frames);

struct LevelSet {
  Points points;
  bool empty = true;
};

/// Linear-interpolation 0.5 crossings along the edges of a grid_res^d cell grid over the box.
LevelSet extract_surface_points(const FieldFn& field, const PosedBones& posed, const Aabb& box, int grid_res);
/// Same, over the 110% box of the body's posed bounds.
LevelSet extract_surface_points(const FieldFn& field, const CapsuleBody& body, const PosedBones& posed,
                                int grid_res);

/// Exact nearest-neighbor distances from each query column to the reference set.
Eigen::VectorXd nearest_distances(const Points& query, const Points& reference);

double chamfer_l1(const Points& a, const Points& b);
/// Percentage F-score; tau is a squared-distance threshold.
double fscore(const Points& pred, const Points& gt, double tau);

struct EvalConfig {
  int grid_res = 64;
  int gt_surface_points = 2000;
  double fscore_tau = 1e-4;  // diagonal-normalized squared distance
  std::uint64_t seed = 0;
};

struct FrameMetrics {
  int sequence = 0;
  int frame = 0;
  double iou = 0.0;
  double chamfer_l1 = 0.0;  // diagonal-normalized
  double fscore = 0.0;
  bool empty_surface = false;
};

struct MetricsReport {
  std::vector<FrameMetrics> frames;
  double miou = 0.0;
  double chamfer_l1 = 0.0;
  double fscore = 0.0;
};

/// Surface metrics of one posed frame against analytic surface samples, in diagonal-normalized units.
FrameMetrics surface_metrics(const FieldFn& field, const CapsuleBody& body, const PosedBones& posed,
                             const EvalConfig& config, std::uint64_t seed);

MetricsReport evaluate_frames(const FieldFn& field, const CapsuleBody& body, const std::vector<FrameSamples>& frames,
                              const EvalConfig& config);

std::string metrics_csv(const MetricsReport& report);

/// Mean response of each part at vertices owned by other parts (R/D models).
Eigen::VectorXd foreign_part_response(const OccupancyModel& model, const CapsuleBody& body,
                                      const std::vector<FrameSamples>& frames);

/// 2D overlay of analytic surface samples (grey) and predicted level-set points (red).
std::string level_set_svg(const CapsuleBody& body, const PosedBones& posed, const LevelSet& predicted,
                          std::uint64_t seed);

}  // namespace nasa
