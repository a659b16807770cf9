#pragma once

#include "nasa/kinematics.hpp"
#include "nasa/neuralnet.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace nasa {

enum class ModelKind : std::uint8_t { Unstructured = 0, Rigid = 1, Deformable = 2 };
enum class BlendMode { Soft, Hard };
/// Learned: per-part D x dB projection of the pose encoding. Identity: the full encoding is fed (D = dB).
enum class ProjectionMode : std::uint8_t { Learned = 0, Identity = 1 };

const char* to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& s);

struct ModelConfig {
  ModelKind kind = ModelKind::Deformable;
  int dim = 2;
  int bones = 5;
  int width = 24;
  int layers = 4;
  int projection_dim = 4;
  ProjectionMode projection = ProjectionMode::Learned;
  double temperature = 0.05;

  /// Desk-scale defaults per kind (U: width 64; R/D: width 24).
  static ModelConfig defaults(ModelKind kind, int dim, int bones);

  /// Width of the pose code appended to each part query (0 for R).
  int pose_code_dim() const;

  bool operator==(const ModelConfig&) const = default;
};

/// dL/dC_b for one inverse frame C_b = B_b^-1.
struct FrameGradient {
  Mat rotation;
  Vec translation;
};

std::vector<FrameGradient> zero_frame_gradients(int dim, int bones);

/// Hard: max over parts. Soft: softmax(values / tau)-weighted sum of the values.
double blend(const Eigen::VectorXd& values, BlendMode mode, double temperature);

/// Column-wise blend of a (B x N) matrix.
Eigen::RowVectorXd blend_columns(const Eigen::MatrixXd& parts, BlendMode mode, double temperature);

/// Pose-conditioned occupancy decoder: U, R or D.
class OccupancyModel {
 public:
  struct Pass {
    BlendMode mode = BlendMode::Soft;
    std::vector<RigidTransform> inverses;
    Points x;
    Eigen::VectorXd encoding;
    std::vector<Eigen::VectorXd> codes;  // per-part Π_b e (D model)
    std::vector<ResidualMLP::Tape> tapes;
    Eigen::MatrixXd parts;       // part_count x N
    Eigen::RowVectorXd value;    // blended, 1 x N
  };

  OccupancyModel() = default;

  /// Zero parameters everywhere (outputs 0.5).
  static OccupancyModel zeros(const ModelConfig& config);
  /// Glorot-initialized networks; projections uniform in ±sqrt(6 / (D + dB)).
  static OccupancyModel initialized(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ModelKind kind() const { return config_.kind; }
  int part_count() const { return static_cast<int>(nets_.size()); }

  const ResidualMLP& net(int i) const { return nets_[i]; }
  ResidualMLP& net(int i) { return nets_[i]; }
  const Eigen::MatrixXd& projection(int b) const { return projections_[b]; }
  void set_projection(int b, const Eigen::MatrixXd& p);

  Eigen::Index parameter_count() const;
  ParamVector flatten() const;
  void unflatten(const ParamVector& params);
  std::vector<ParamBlock> parameter_blocks() const;

  /// Blended occupancy at world points x (d x N) given inverse frames C_b.
  Eigen::RowVectorXd evaluate(std::span<const RigidTransform> inverses, const Points& x, BlendMode mode) const;
  Eigen::RowVectorXd evaluate(const PosedBones& posed, const Points& x, BlendMode mode) const {
    return evaluate(posed.inverses, x, mode);
  }
  double evaluate(const PosedBones& posed, const Vec& x, BlendMode mode) const;

  /// Per-part values (B x N). Throws UnsupportedModel for U.
  Eigen::MatrixXd evaluate_parts(std::span<const RigidTransform> inverses, const Points& x) const;

  Pass forward(std::span<const RigidTransform> inverses, const Points& x, BlendMode mode) const;

  /// Reverse pass. d_value (1 x N) is dL/d(blended value), d_parts (B x N) is dL/d(part values);
  /// either may be null. Parameter gradients are added into grad_params (flatten() order).
  void backward(const Pass& pass, const Eigen::RowVectorXd* d_value, const Eigen::MatrixXd* d_parts,
                Eigen::Ref<Eigen::VectorXd> grad_params, std::vector<FrameGradient>* grad_frames = nullptr,
                Points* grad_x = nullptr) const;

 private:
  explicit OccupancyModel(const ModelConfig& config);
  Eigen::MatrixXd part_input(int b, const RigidTransform& c, const Points& x, const Eigen::VectorXd& code) const;

  ModelConfig config_;
  std::vector<ResidualMLP> nets_;
  std::vector<Eigen::MatrixXd> projections_;  // learned D only
};

/// Part values on C_b x (R model).
Eigen::MatrixXd eval_parts_r(const OccupancyModel& model, const PosedBones& posed, const Points& x);
/// Part values on [C_b x, Π_b e] (D model).
Eigen::MatrixXd eval_parts_d(const OccupancyModel& model, const PosedBones& posed, const Points& x);
/// MLP on [x, e] (U model).
Eigen::RowVectorXd eval_u(const OccupancyModel& model, const PosedBones& posed, const Points& x);

enum class Precision : std::uint8_t { F32 = 4, F64 = 8 };

inline constexpr char kCheckpointMagic[] = "NASAW001";
inline constexpr std::uint16_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const OccupancyModel& model, Precision precision = Precision::F64);
OccupancyModel decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const OccupancyModel& model, const std::filesystem::path& path,
                     Precision precision = Precision::F64);
OccupancyModel load_checkpoint(const std::filesystem::path& path);

}  // namespace nasa
