#pragma once

#include "nasa/common.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace nasa {

inline constexpr double kLeakySlope = 0.1;

/// Flat parameter storage ω. Models expose a stable block map over it.
using ParamVector = Eigen::VectorXd;

struct ParamBlock {
  std::string name;
  Eigen::Index offset = 0;
  Eigen::Index size = 0;
};

struct MlpShape {
  int input_dim = 1;
  int width = 1;
  int layers = 4;  // layer 0: input -> width; layers 1..L-1: width -> width with residual

  bool operator==(const MlpShape&) const = default;
};

/// Dense residual MLP with a sigmoid-squashed scalar head.
///   a0 = lrelu(W0 x + b0);  a_l = lrelu(W_l a_{l-1} + b_l) + a_{l-1};  y = sigmoid(w . a_{L-1} + c)
/// Activations are batched column-wise (features x N).
class ResidualMLP {
 public:
  struct Tape {
    const ResidualMLP* owner = nullptr;
    std::uint64_t generation = 0;
    Eigen::MatrixXd input;
    std::vector<Eigen::MatrixXd> pre;  // W a + b per layer
    std::vector<Eigen::MatrixXd> act;  // layer outputs (after residual)
    Eigen::RowVectorXd output;
  };

  ResidualMLP() = default;
  /// All-zero parameters.
  explicit ResidualMLP(const MlpShape& shape);

  /// Glorot-uniform weights in ±sqrt(6 / (fan_in + fan_out)), zero biases.
  static ResidualMLP initialized(const MlpShape& shape, std::uint64_t seed);

  const MlpShape& shape() const { return shape_; }
  Eigen::Index parameter_count() const { return params_.size(); }

  const ParamVector& params() const { return params_; }
  void set_params(std::span<const double> values);
  /// Writable view; invalidates outstanding tapes.
  std::span<double> mutable_params();

  std::uint64_t generation() const { return generation_; }

  Eigen::Map<const Eigen::MatrixXd> weight(int layer) const;
  Eigen::Map<const Eigen::VectorXd> bias(int layer) const;
  Eigen::Map<const Eigen::VectorXd> head_weight() const;
  double head_bias() const;

  Eigen::Index weight_offset(int layer) const { return offsets_[layer]; }
  Eigen::Index head_offset() const { return head_offset_; }

  /// Forward on a (input_dim x N) batch; returns values in (0, 1).
  Eigen::RowVectorXd forward(const Eigen::MatrixXd& input, Tape* tape = nullptr) const;

  /// Reverse pass for upstream dL/dy (1 x N). Adds parameter gradients summed over the batch
  /// into grad_params (size parameter_count()); optionally writes dL/dinput.
  void backward(const Tape& tape, const Eigen::RowVectorXd& upstream, Eigen::Ref<Eigen::VectorXd> grad_params,
                Eigen::MatrixXd* grad_input = nullptr) const;

 private:
  void layout();

  MlpShape shape_;
  ParamVector params_;
  std::vector<Eigen::Index> offsets_;  // start of W_l; b_l follows
  Eigen::Index head_offset_ = 0;
  std::uint64_t generation_ = 1;
};

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  std::int64_t step = 0;
};

class Adam {
 public:
  Adam() = default;
  Adam(Eigen::Index size, AdamConfig config);

  /// One bias-corrected Adam update. A non-finite gradient throws NonFiniteGradient
  /// and leaves both the parameters and the optimizer state untouched.
  void step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::VectorXd& grads);

  const AdamState& state() const { return state_; }
  const AdamConfig& config() const { return config_; }
  void reset();

 private:
  AdamConfig config_;
  AdamState state_;
};

}  // namespace nasa
