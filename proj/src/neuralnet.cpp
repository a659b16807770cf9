#include "nasa/neuralnet.hpp"

#include <cmath>

namespace nasa {

namespace {

inline double sigmoid(double s) { return 1.0 / (1.0 + std::exp(-s)); }

}  // namespace

ResidualMLP::ResidualMLP(const MlpShape& shape) : shape_(shape) {
  if (shape.input_dim < 1 || shape.width < 1 || shape.layers < 1)
    throw Error(ErrorCode::InvalidInput, "mlp shape");
  layout();
}

void ResidualMLP::layout() {
  offsets_.clear();
  Eigen::Index off = 0;
  for (int l = 0; l < shape_.layers; ++l) {
    const Eigen::Index in = l == 0 ? shape_.input_dim : shape_.width;
    offsets_.push_back(off);
    off += in * shape_.width + shape_.width;
  }
  head_offset_ = off;
  off += shape_.width + 1;
  params_ = ParamVector::Zero(off);
}

ResidualMLP ResidualMLP::initialized(const MlpShape& shape, std::uint64_t seed) {
  ResidualMLP net(shape);
  Rng rng(seed);
  for (int l = 0; l <= shape.layers; ++l) {
    const bool head = l == shape.layers;
    const int fan_in = head ? shape.width : (l == 0 ? shape.input_dim : shape.width);
    const int fan_out = head ? 1 : shape.width;
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> uni(-limit, limit);
    const Eigen::Index off = head ? net.head_offset_ : net.offsets_[l];
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(fan_in) * fan_out; ++i) net.params_(off + i) = uni(rng);
  }
  return net;
}

void ResidualMLP::set_params(std::span<const double> values) {
  if (static_cast<Eigen::Index>(values.size()) != params_.size())
    throw Error(ErrorCode::DimensionMismatch, "parameter count");
  params_ = Eigen::Map<const Eigen::VectorXd>(values.data(), params_.size());
  ++generation_;
}

std::span<double> ResidualMLP::mutable_params() {
  ++generation_;
  return {params_.data(), static_cast<std::size_t>(params_.size())};
}

Eigen::Map<const Eigen::MatrixXd> ResidualMLP::weight(int layer) const {
  const Eigen::Index in = layer == 0 ? shape_.input_dim : shape_.width;
  return {params_.data() + offsets_[layer], shape_.width, in};
}

Eigen::Map<const Eigen::VectorXd> ResidualMLP::bias(int layer) const {
  const Eigen::Index in = layer == 0 ? shape_.input_dim : shape_.width;
  return {params_.data() + offsets_[layer] + in * shape_.width, shape_.width};
}

Eigen::Map<const Eigen::VectorXd> ResidualMLP::head_weight() const {
  return {params_.data() + head_offset_, shape_.width};
}

double ResidualMLP::head_bias() const { return params_(head_offset_ + shape_.width); }

Eigen::RowVectorXd ResidualMLP::forward(const Eigen::MatrixXd& input, Tape* tape) const {
  if (input.rows() != shape_.input_dim) throw Error(ErrorCode::DimensionMismatch, "mlp input");
  if (!input.allFinite()) throw Error(ErrorCode::InvalidInput, "non-finite mlp input");
  Eigen::MatrixXd a;
  if (tape) {
    tape->owner = this;
    tape->generation = generation_;
    tape->input = input;
    tape->pre.resize(shape_.layers);
    tape->act.resize(shape_.layers);
  }
  for (int l = 0; l < shape_.layers; ++l) {
    Eigen::MatrixXd z = weight(l) * (l == 0 ? input : a);
    z.colwise() += bias(l);
    Eigen::MatrixXd next = z.cwiseMax(kLeakySlope * z);
    if (l > 0) next += a;
    if (tape) tape->pre[l] = std::move(z);
    a = std::move(next);
    if (tape) tape->act[l] = a;
  }
  Eigen::RowVectorXd s = head_weight().transpose() * a;
  s.array() += head_bias();
  Eigen::RowVectorXd y = s.unaryExpr([](double v) { return sigmoid(v); });
  if (tape) tape->output = y;
  return y;
}

void ResidualMLP::backward(const Tape& tape, const Eigen::RowVectorXd& upstream, Eigen::Ref<Eigen::VectorXd> grad,
                           Eigen::MatrixXd* grad_input) const {
  if (tape.owner != this || tape.generation != generation_)
    throw Error(ErrorCode::StaleTape, "tape does not match current parameters");
  if (upstream.size() != tape.output.size()) throw Error(ErrorCode::DimensionMismatch, "upstream size");
  if (grad.size() != params_.size()) throw Error(ErrorCode::DimensionMismatch, "gradient size");
  const int L = shape_.layers;
  const int H = shape_.width;

  const Eigen::RowVectorXd ds = upstream.array() * tape.output.array() * (1.0 - tape.output.array());
  grad.segment(head_offset_, H).noalias() += tape.act[L - 1] * ds.transpose();
  grad(head_offset_ + H) += ds.sum();
  Eigen::MatrixXd da = head_weight() * ds;

  for (int l = L - 1; l >= 0; --l) {
    const Eigen::MatrixXd& z = tape.pre[l];
    Eigen::MatrixXd dz = da.array() * (z.array() > 0.0).select(1.0, Eigen::MatrixXd::Constant(z.rows(), z.cols(), kLeakySlope)).array();
    const Eigen::MatrixXd& prev = l == 0 ? tape.input : tape.act[l - 1];
    const Eigen::Index in = prev.rows();
    Eigen::Map<Eigen::MatrixXd> gw(grad.data() + offsets_[l], H, in);
    gw.noalias() += dz * prev.transpose();
    grad.segment(offsets_[l] + in * H, H) += dz.rowwise().sum();
    if (l == 0) {
      if (grad_input) *grad_input = weight(0).transpose() * dz;
    } else {
      Eigen::MatrixXd dprev = weight(l).transpose() * dz;
      dprev += da;  // residual path
      da = std::move(dprev);
    }
  }
}

Adam::Adam(Eigen::Index size, AdamConfig config) : config_(config) {
  state_.m = Eigen::VectorXd::Zero(size);
  state_.v = Eigen::VectorXd::Zero(size);
}

void Adam::reset() {
  state_.m.setZero();
  state_.v.setZero();
  state_.step = 0;
}

void Adam::step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::VectorXd& g) {
  if (params.size() != state_.m.size() || g.size() != state_.m.size())
    throw Error(ErrorCode::DimensionMismatch, "adam shapes");
  if (!g.allFinite()) throw Error(ErrorCode::NonFiniteGradient, "step skipped");
  const double b1 = config_.beta1, b2 = config_.beta2;
  ++state_.step;
  state_.m = b1 * state_.m + (1.0 - b1) * g;
  state_.v = b2 * state_.v + (1.0 - b2) * g.cwiseProduct(g);
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state_.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state_.step));
  const double lr = config_.learning_rate;
  const double eps = config_.epsilon;
  params.array() -= lr * (state_.m.array() / c1) / ((state_.v.array() / c2).sqrt() + eps);
}

}  // namespace nasa
