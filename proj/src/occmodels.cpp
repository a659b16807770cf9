#include "nasa/occmodels.hpp"

#include "nasa/binary_io.hpp"

#include <cmath>

namespace nasa {

const char* to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::Unstructured: return "u";
    case ModelKind::Rigid: return "r";
    case ModelKind::Deformable: return "d";
  }
  return "?";
}

ModelKind parse_model_kind(const std::string& s) {
  if (s == "u" || s == "U") return ModelKind::Unstructured;
  if (s == "r" || s == "R") return ModelKind::Rigid;
  if (s == "d" || s == "D") return ModelKind::Deformable;
  throw Error(ErrorCode::InvalidInput, "model kind must be one of u, r, d");
}

ModelConfig ModelConfig::defaults(ModelKind kind, int dim, int bones) {
  ModelConfig c;
  c.kind = kind;
  c.dim = dim;
  c.bones = bones;
  c.width = kind == ModelKind::Unstructured ? 64 : 24;
  return c;
}

int ModelConfig::pose_code_dim() const {
  switch (kind) {
    case ModelKind::Unstructured: return dim * bones;
    case ModelKind::Rigid: return 0;
    case ModelKind::Deformable: return projection == ProjectionMode::Learned ? projection_dim : dim * bones;
  }
  return 0;
}

std::vector<FrameGradient> zero_frame_gradients(int dim, int bones) {
  return std::vector<FrameGradient>(bones, FrameGradient{Mat::Zero(dim, dim), Vec::Zero(dim)});
}

double blend(const Eigen::VectorXd& values, BlendMode mode, double temperature) {
  if (mode == BlendMode::Hard) return values.maxCoeff();
  if (!(temperature > 0.0)) throw Error(ErrorCode::InvalidInput, "soft blend needs a positive temperature");
  const double m = values.maxCoeff();
  const Eigen::ArrayXd w = ((values.array() - m) / temperature).exp();
  return (w * values.array()).sum() / w.sum();
}

Eigen::RowVectorXd blend_columns(const Eigen::MatrixXd& parts, BlendMode mode, double temperature) {
  if (mode == BlendMode::Hard || parts.rows() == 1) return parts.colwise().maxCoeff();
  if (!(temperature > 0.0)) throw Error(ErrorCode::InvalidInput, "soft blend needs a positive temperature");
  const Eigen::RowVectorXd m = parts.colwise().maxCoeff();
  const Eigen::ArrayXXd w = ((parts.rowwise() - m).array() / temperature).exp();
  return ((w * parts.array()).colwise().sum() / w.colwise().sum()).matrix();
}

OccupancyModel::OccupancyModel(const ModelConfig& config) : config_(config) {
  check_dim(config.dim);
  if (config.bones < 1 || config.width < 1) throw Error(ErrorCode::InvalidInput, "model config");
  if (config.kind == ModelKind::Deformable && config.projection == ProjectionMode::Learned && config.projection_dim < 1)
    throw Error(ErrorCode::InvalidInput, "projection dimension must be positive");
  if (config.kind == ModelKind::Deformable && config.projection == ProjectionMode::Identity)
    config_.projection_dim = config.dim * config.bones;
  const int d = config.dim;
  const int parts = config.kind == ModelKind::Unstructured ? 1 : config.bones;
  const MlpShape shape{d + config_.pose_code_dim(), config.width, config.layers};
  nets_.assign(parts, ResidualMLP(shape));
  if (config.kind == ModelKind::Deformable && config.projection == ProjectionMode::Learned)
    projections_.assign(config.bones, Eigen::MatrixXd::Zero(config.projection_dim, d * config.bones));
}

OccupancyModel OccupancyModel::zeros(const ModelConfig& config) { return OccupancyModel(config); }

OccupancyModel OccupancyModel::initialized(const ModelConfig& config, std::uint64_t seed) {
  OccupancyModel m(config);
  for (int i = 0; i < m.part_count(); ++i)
    m.nets_[i] = ResidualMLP::initialized(m.nets_[i].shape(), derive_seed(seed, 1, i));
  for (std::size_t b = 0; b < m.projections_.size(); ++b) {
    Eigen::MatrixXd& p = m.projections_[b];
    const double limit = std::sqrt(6.0 / static_cast<double>(p.rows() + p.cols()));
    Rng rng(derive_seed(seed, 2, b));
    std::uniform_real_distribution<double> uni(-limit, limit);
    for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = uni(rng);
  }
  return m;
}

void OccupancyModel::set_projection(int b, const Eigen::MatrixXd& p) {
  if (projections_.empty()) throw Error(ErrorCode::UnsupportedModel, "model has no learned projections");
  if (p.rows() != projections_[b].rows() || p.cols() != projections_[b].cols())
    throw Error(ErrorCode::DimensionMismatch, "projection shape");
  projections_[b] = p;
}

Eigen::Index OccupancyModel::parameter_count() const {
  Eigen::Index n = 0;
  for (const auto& net : nets_) n += net.parameter_count();
  for (const auto& p : projections_) n += p.size();
  return n;
}

ParamVector OccupancyModel::flatten() const {
  ParamVector out(parameter_count());
  Eigen::Index off = 0;
  for (const auto& net : nets_) {
    out.segment(off, net.parameter_count()) = net.params();
    off += net.parameter_count();
  }
  for (const auto& p : projections_) {
    out.segment(off, p.size()) = Eigen::Map<const Eigen::VectorXd>(p.data(), p.size());
    off += p.size();
  }
  return out;
}

void OccupancyModel::unflatten(const ParamVector& params) {
  if (params.size() != parameter_count()) throw Error(ErrorCode::DimensionMismatch, "parameter count");
  Eigen::Index off = 0;
  for (auto& net : nets_) {
    net.set_params({params.data() + off, static_cast<std::size_t>(net.parameter_count())});
    off += net.parameter_count();
  }
  for (auto& p : projections_) {
    p = Eigen::Map<const Eigen::MatrixXd>(params.data() + off, p.rows(), p.cols());
    off += p.size();
  }
}

std::vector<ParamBlock> OccupancyModel::parameter_blocks() const {
  std::vector<ParamBlock> blocks;
  Eigen::Index off = 0;
  for (std::size_t i = 0; i < nets_.size(); ++i) {
    blocks.push_back({"net" + std::to_string(i), off, nets_[i].parameter_count()});
    off += nets_[i].parameter_count();
  }
  for (std::size_t b = 0; b < projections_.size(); ++b) {
    blocks.push_back({"projection" + std::to_string(b), off, projections_[b].size()});
    off += projections_[b].size();
  }
  return blocks;
}

Eigen::MatrixXd OccupancyModel::part_input(int /*b*/, const RigidTransform& c, const Points& x,
                                           const Eigen::VectorXd& code) const {
  const int d = config_.dim;
  Eigen::MatrixXd in(d + code.size(), x.cols());
  in.topRows(d) = c.apply(x);
  if (code.size() > 0) in.bottomRows(code.size()) = code.replicate(1, x.cols());
  return in;
}

namespace {

void check_inputs(const ModelConfig& cfg, std::span<const RigidTransform> inverses, const Points& x) {
  if (static_cast<int>(inverses.size()) != cfg.bones) throw Error(ErrorCode::DimensionMismatch, "bone count");
  if (x.rows() != cfg.dim) throw Error(ErrorCode::DimensionMismatch, "query dimension");
  for (const auto& c : inverses)
    if (c.dim() != cfg.dim) throw Error(ErrorCode::DimensionMismatch, "frame dimension");
}

}  // namespace

OccupancyModel::Pass OccupancyModel::forward(std::span<const RigidTransform> inverses, const Points& x,
                                             BlendMode mode) const {
  check_inputs(config_, inverses, x);
  Pass pass;
  pass.mode = mode;
  pass.inverses.assign(inverses.begin(), inverses.end());
  pass.x = x;
  const int d = config_.dim;
  if (config_.kind != ModelKind::Rigid) pass.encoding = pose_encoding(inverses);
  pass.tapes.resize(nets_.size());
  pass.parts.resize(part_count(), x.cols());
  if (config_.kind == ModelKind::Unstructured) {
    Eigen::MatrixXd in(d + pass.encoding.size(), x.cols());
    in.topRows(d) = x;
    in.bottomRows(pass.encoding.size()) = pass.encoding.replicate(1, x.cols());
    pass.parts.row(0) = nets_[0].forward(in, &pass.tapes[0]);
    pass.value = pass.parts.row(0);
    return pass;
  }
  pass.codes.resize(nets_.size());
  for (int b = 0; b < part_count(); ++b) {
    if (config_.kind == ModelKind::Deformable)
      pass.codes[b] = projections_.empty() ? pass.encoding : Eigen::VectorXd(projections_[b] * pass.encoding);
    pass.parts.row(b) = nets_[b].forward(part_input(b, inverses[b], x, pass.codes[b]), &pass.tapes[b]);
  }
  pass.value = blend_columns(pass.parts, mode, config_.temperature);
  return pass;
}

Eigen::MatrixXd OccupancyModel::evaluate_parts(std::span<const RigidTransform> inverses, const Points& x) const {
  if (config_.kind == ModelKind::Unstructured) throw Error(ErrorCode::UnsupportedModel, "U has no parts");
  check_inputs(config_, inverses, x);
  Eigen::VectorXd enc;
  if (config_.kind == ModelKind::Deformable) enc = pose_encoding(inverses);
  Eigen::MatrixXd parts(part_count(), x.cols());
  for (int b = 0; b < part_count(); ++b) {
    Eigen::VectorXd code;
    if (config_.kind == ModelKind::Deformable) code = projections_.empty() ? enc : Eigen::VectorXd(projections_[b] * enc);
    parts.row(b) = nets_[b].forward(part_input(b, inverses[b], x, code));
  }
  return parts;
}

Eigen::RowVectorXd OccupancyModel::evaluate(std::span<const RigidTransform> inverses, const Points& x,
                                            BlendMode mode) const {
  if (config_.kind == ModelKind::Unstructured) {
    check_inputs(config_, inverses, x);
    const Eigen::VectorXd enc = pose_encoding(inverses);
    Eigen::MatrixXd in(config_.dim + enc.size(), x.cols());
    in.topRows(config_.dim) = x;
    in.bottomRows(enc.size()) = enc.replicate(1, x.cols());
    return nets_[0].forward(in);
  }
  return blend_columns(evaluate_parts(inverses, x), mode, config_.temperature);
}

double OccupancyModel::evaluate(const PosedBones& posed, const Vec& x, BlendMode mode) const {
  Points p = Eigen::VectorXd(x);
  return evaluate(posed.inverses, p, mode)(0);
}

void OccupancyModel::backward(const Pass& pass, const Eigen::RowVectorXd* d_value, const Eigen::MatrixXd* d_parts,
                              Eigen::Ref<Eigen::VectorXd> grad, std::vector<FrameGradient>* grad_frames,
                              Points* grad_x) const {
  if (grad.size() != parameter_count()) throw Error(ErrorCode::DimensionMismatch, "gradient size");
  const int d = config_.dim;
  const Eigen::Index n = pass.x.cols();
  const int P = part_count();
  const bool unstructured = config_.kind == ModelKind::Unstructured;
  if (unstructured && d_parts) throw Error(ErrorCode::UnsupportedModel, "U has no parts");

  Eigen::MatrixXd dparts = Eigen::MatrixXd::Zero(P, n);
  if (d_value) {
    if (d_value->size() != n) throw Error(ErrorCode::DimensionMismatch, "upstream size");
    if (unstructured || P == 1) {
      dparts.row(0) = *d_value;
    } else if (pass.mode == BlendMode::Hard) {
      for (Eigen::Index j = 0; j < n; ++j) {
        Eigen::Index arg;
        pass.parts.col(j).maxCoeff(&arg);
        dparts(arg, j) = (*d_value)(j);
      }
    } else {
      const double tau = config_.temperature;
      const Eigen::RowVectorXd m = pass.parts.colwise().maxCoeff();
      Eigen::ArrayXXd w = ((pass.parts.rowwise() - m).array() / tau).exp();
      w.rowwise() /= w.colwise().sum();
      for (Eigen::Index j = 0; j < n; ++j) {
        const double out = pass.value(j);
        dparts.col(j) = ((*d_value)(j) * (w.col(j) * (1.0 + (pass.parts.col(j).array() - out) / tau))).matrix();
      }
    }
  }
  if (d_parts) {
    if (d_parts->rows() != P || d_parts->cols() != n) throw Error(ErrorCode::DimensionMismatch, "part upstream");
    dparts += *d_parts;
  }
  if (grad_x) *grad_x = Points::Zero(d, n);

  const bool has_code = config_.pose_code_dim() > 0;
  const bool need_input = grad_frames || grad_x || has_code;
  Eigen::VectorXd de = Eigen::VectorXd::Zero(pass.encoding.size());
  Eigen::Index off = 0;
  std::vector<Eigen::Index> proj_off;
  {
    Eigen::Index o = 0;
    for (const auto& net : nets_) o += net.parameter_count();
    for (const auto& p : projections_) {
      proj_off.push_back(o);
      o += p.size();
    }
  }
  for (int b = 0; b < P; ++b) {
    const ResidualMLP& net = nets_[b];
    Eigen::MatrixXd din;
    net.backward(pass.tapes[b], dparts.row(b), grad.segment(off, net.parameter_count()), need_input ? &din : nullptr);
    off += net.parameter_count();
    if (!need_input) continue;
    if (unstructured) {
      if (grad_x) *grad_x += din.topRows(d);
      de += din.bottomRows(de.size()).rowwise().sum();
      continue;
    }
    const Eigen::MatrixXd dq = din.topRows(d);
    const RigidTransform& c = pass.inverses[b];
    if (grad_x) grad_x->noalias() += c.rotation.transpose() * dq;
    if (grad_frames) {
      (*grad_frames)[b].rotation += dq * pass.x.transpose();
      (*grad_frames)[b].translation += dq.rowwise().sum();
    }
    if (has_code) {
      const Eigen::VectorXd dcode = din.bottomRows(config_.pose_code_dim()).rowwise().sum();
      if (projections_.empty()) {
        de += dcode;
      } else {
        Eigen::Map<Eigen::MatrixXd> gp(grad.data() + proj_off[b], projections_[b].rows(), projections_[b].cols());
        gp.noalias() += dcode * pass.encoding.transpose();
        de.noalias() += projections_[b].transpose() * dcode;
      }
    }
  }

  if (grad_frames && de.size() > 0) {
    // e_b = C_b t0 with t0 = -R_0^T t_C0.
    const RigidTransform& c0 = pass.inverses[0];
    const Vec t0 = -(c0.rotation.transpose() * c0.translation);
    Vec dt0 = Vec::Zero(d);
    for (int b = 0; b < config_.bones; ++b) {
      const Vec deb = de.segment(b * d, d);
      (*grad_frames)[b].rotation += deb * t0.transpose();
      (*grad_frames)[b].translation += deb;
      dt0 += pass.inverses[b].rotation.transpose() * deb;
    }
    (*grad_frames)[0].rotation -= c0.translation * dt0.transpose();
    (*grad_frames)[0].translation -= c0.rotation * dt0;
  }
}

Eigen::MatrixXd eval_parts_r(const OccupancyModel& model, const PosedBones& posed, const Points& x) {
  if (model.kind() != ModelKind::Rigid) throw Error(ErrorCode::UnsupportedModel, "expected an R model");
  return model.evaluate_parts(posed.inverses, x);
}

Eigen::MatrixXd eval_parts_d(const OccupancyModel& model, const PosedBones& posed, const Points& x) {
  if (model.kind() != ModelKind::Deformable) throw Error(ErrorCode::UnsupportedModel, "expected a D model");
  return model.evaluate_parts(posed.inverses, x);
}

Eigen::RowVectorXd eval_u(const OccupancyModel& model, const PosedBones& posed, const Points& x) {
  if (model.kind() != ModelKind::Unstructured) throw Error(ErrorCode::UnsupportedModel, "expected a U model");
  return model.evaluate(posed.inverses, x, BlendMode::Hard);
}

// ---------------------------------------------------------------------------
// Checkpoint: magic(8) version(u16) kind(u8) | d(u8) B(u16) H(u16) D(u16) layers(u8) projection(u8)
// residual(u8) temperature(f64) precision(u8) count(u64) values | crc32 over everything after magic.

namespace {

constexpr std::uint8_t kResidualPostActivation = 0;

OccupancyModel parse_checkpoint_body(ByteReader& r, ModelKind kind) {
  ModelConfig cfg;
  cfg.kind = kind;
  cfg.dim = r.u8();
  cfg.bones = r.u16();
  cfg.width = r.u16();
  cfg.projection_dim = r.u16();
  cfg.layers = r.u8();
  const std::uint8_t proj = r.u8();
  const std::uint8_t residual = r.u8();
  cfg.temperature = r.f64();
  if (proj > 1 || residual != kResidualPostActivation) throw Error(ErrorCode::InvalidInput, "checkpoint flags");
  cfg.projection = static_cast<ProjectionMode>(proj);
  const std::uint8_t precision = r.u8();
  if (precision != 4 && precision != 8) throw Error(ErrorCode::InvalidInput, "checkpoint precision byte");
  const std::uint64_t count = r.u64();
  OccupancyModel model = OccupancyModel::zeros(cfg);
  if (count != static_cast<std::uint64_t>(model.parameter_count()))
    throw Error(ErrorCode::InvalidInput, "checkpoint parameter count");
  if (count > r.remaining() / precision) throw Error(ErrorCode::Truncated, "checkpoint payload");
  ParamVector params(static_cast<Eigen::Index>(count));
  for (auto& v : params) v = precision == 8 ? r.f64() : static_cast<double>(r.f32());
  model.unflatten(params);
  return model;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const OccupancyModel& model, Precision precision) {
  const ModelConfig& c = model.config();
  ByteWriter w;
  w.bytes(std::string_view(kCheckpointMagic, 8));
  w.u16(kCheckpointVersion);
  w.u8(static_cast<std::uint8_t>(c.kind));
  w.u8(static_cast<std::uint8_t>(c.dim));
  w.u16(static_cast<std::uint16_t>(c.bones));
  w.u16(static_cast<std::uint16_t>(c.width));
  w.u16(static_cast<std::uint16_t>(c.projection_dim));
  w.u8(static_cast<std::uint8_t>(c.layers));
  w.u8(static_cast<std::uint8_t>(c.projection));
  w.u8(kResidualPostActivation);
  w.f64(c.temperature);
  w.u8(static_cast<std::uint8_t>(precision));
  const ParamVector p = model.flatten();
  w.u64(static_cast<std::uint64_t>(p.size()));
  for (double v : p) {
    if (precision == Precision::F64) w.f64(v);
    else w.f32(static_cast<float>(v));
  }
  w.u32(crc32(std::span(w.data()).subspan(8)));
  return w.data();
}

OccupancyModel decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  check_magic(bytes, kCheckpointMagic, "not a checkpoint file");
  r.bytes(8);
  const std::uint16_t version = r.u16();
  if (version != kCheckpointVersion) throw Error(ErrorCode::VersionMismatch, "checkpoint version " + std::to_string(version));
  if (bytes.size() < 8 + 2 + 1 + 4) throw Error(ErrorCode::Truncated, "checkpoint header");
  ByteReader tail(bytes.subspan(bytes.size() - 4));
  const bool crc_ok = tail.u32() == crc32(bytes.subspan(8, bytes.size() - 12));
  OccupancyModel model;
  try {
    const std::uint8_t kind = r.u8();
    if (kind > 2) throw Error(ErrorCode::InvalidInput, "checkpoint model kind");
    model = parse_checkpoint_body(r, static_cast<ModelKind>(kind));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Truncated || crc_ok) throw;
    throw Error(ErrorCode::ChecksumMismatch, "checkpoint checksum mismatch");
  }
  if (r.remaining() < 4) throw Error(ErrorCode::Truncated, "missing checksum");
  if (!crc_ok) throw Error(ErrorCode::ChecksumMismatch, "checkpoint checksum mismatch");
  if (r.remaining() != 4) throw Error(ErrorCode::InvalidInput, "trailing bytes in checkpoint");
  return model;
}

void save_checkpoint(const OccupancyModel& model, const std::filesystem::path& path, Precision precision) {
  write_file(path, encode_checkpoint(model, precision));
}

OccupancyModel load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace nasa
