#include "nasa/training.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

namespace nasa {

void TrainConfig::validate() const {
  if (batch_frames < 1 || points_uniform < 1 || points_surface < 1 || vertices < 1 || iterations < 1 ||
      history_interval < 1)
    throw Error(ErrorCode::InvalidInput, "training counts must be >= 1");
  if (!(lambda >= 0.0)) throw Error(ErrorCode::InvalidInput, "lambda must be >= 0");
  if (!(learning_rate > 0.0) || !(sigma_frac > 0.0)) throw Error(ErrorCode::InvalidInput, "learning rate / sigma");
}

namespace {

int share(int total, int parts, int i) { return total / parts + (i < total % parts ? 1 : 0); }

}  // namespace

Minibatch sample_minibatch(const CapsuleBody& body, std::span<const Pose> poses, const TrainConfig& cfg,
                           std::uint64_t seed) {
  if (poses.empty()) throw Error(ErrorCode::InvalidInput, "no training poses");
  const int d = body.dim();
  Minibatch batch(cfg.batch_frames);
  Rng pick(derive_seed(seed, 0));
  std::uniform_int_distribution<std::size_t> frame(0, poses.size() - 1);
  std::vector<std::size_t> chosen(cfg.batch_frames);
  for (auto& c : chosen) c = frame(pick);

  for (int i = 0; i < cfg.batch_frames; ++i) {
    BatchItem& item = batch[i];
    item.posed = forward_kinematics(body.rig, poses[chosen[i]]);
    const Aabb bounds = posed_bounds(body, item.posed);
    const Aabb box = bounds.scaled(1.1);
    const int nu = share(cfg.points_uniform, cfg.batch_frames, i);
    const int ns = share(cfg.points_surface, cfg.batch_frames, i);
    const int nv = share(cfg.vertices, cfg.batch_frames, i);

    Rng rng(derive_seed(seed, 1, i));
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    item.points.resize(d, nu + ns);
    for (int j = 0; j < nu; ++j)
      for (int k = 0; k < d; ++k) item.points(k, j) = box.lo(k) + uni(rng) * (box.hi(k) - box.lo(k));
    if (ns > 0) {
      const SurfaceSamples s = surface_samples(body, item.posed, ns, derive_seed(seed, 2, i));
      std::normal_distribution<double> gauss(0.0, cfg.sigma_frac * bounds.diagonal());
      for (int j = 0; j < ns; ++j)
        for (int k = 0; k < d; ++k) item.points(k, nu + j) = s.points(k, j) + gauss(rng);
    }
    const auto labels = gt_occupancy(body, item.posed, item.points);
    item.labels.resize(nu + ns);
    for (int j = 0; j < nu + ns; ++j) item.labels(j) = labels[j];
    if (nv > 0) sample_vertices(body, item.posed, nv, derive_seed(seed, 3, i), item.vertices, item.owners);
    else item.vertices.resize(d, 0);
  }
  return batch;
}

namespace {

struct ItemLoss {
  double occ_sum = 0.0;
  double weight_sum = 0.0;
};

ItemLoss item_loss(const OccupancyModel& model, const BatchItem& item, bool with_weights, BlendMode mode,
                   double occ_scale, double weight_scale, Eigen::VectorXd* grad) {
  const Eigen::Index np = item.points.cols();
  const Eigen::Index nv = with_weights ? item.vertices.cols() : 0;
  Points x(item.points.rows(), np + nv);
  x.leftCols(np) = item.points;
  if (nv > 0) x.rightCols(nv) = item.vertices;

  const auto pass = model.forward(item.posed.inverses, x, mode);
  ItemLoss out;
  const Eigen::RowVectorXd err = pass.value.leftCols(np) - item.labels;
  out.occ_sum = err.squaredNorm();

  Eigen::MatrixXd part_err;
  if (nv > 0) {
    Eigen::MatrixXd target = Eigen::MatrixXd::Zero(model.part_count(), nv);
    for (Eigen::Index j = 0; j < nv; ++j) target(item.owners[j], j) = 0.5;
    part_err = pass.parts.rightCols(nv) - target;
    out.weight_sum = part_err.squaredNorm();
  }
  if (grad) {
    Eigen::RowVectorXd dv = Eigen::RowVectorXd::Zero(np + nv);
    dv.leftCols(np) = 2.0 * occ_scale * err;
    if (nv > 0) {
      Eigen::MatrixXd dp = Eigen::MatrixXd::Zero(model.part_count(), np + nv);
      dp.rightCols(nv) = 2.0 * weight_scale * part_err;
      model.backward(pass, &dv, &dp, *grad);
    } else {
      model.backward(pass, &dv, nullptr, *grad);
    }
  }
  return out;
}

}  // namespace

LossValue total_loss(const OccupancyModel& model, const Minibatch& batch, double lambda, BlendMode mode,
                     Eigen::VectorXd* grad) {
  const bool unstructured = model.kind() == ModelKind::Unstructured;
  const bool with_weights = !unstructured && lambda > 0.0;
  Eigen::Index n_points = 0, n_vertices = 0;
  for (const auto& item : batch) {
    n_points += item.points.cols();
    n_vertices += item.vertices.cols();
  }
  if (n_points == 0) throw Error(ErrorCode::InvalidInput, "empty minibatch");
  const double occ_scale = 1.0 / static_cast<double>(n_points);
  const double weight_norm = n_vertices > 0 ? 1.0 / (static_cast<double>(n_vertices) * model.part_count()) : 0.0;

  const int n = static_cast<int>(batch.size());
  std::vector<ItemLoss> losses(n);
  std::vector<Eigen::VectorXd> grads(grad ? n : 0);
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd* g = nullptr;
    if (grad) {
      grads[i] = Eigen::VectorXd::Zero(model.parameter_count());
      g = &grads[i];
    }
    losses[i] = item_loss(model, batch[i], with_weights && batch[i].vertices.cols() > 0, mode, occ_scale,
                          lambda * weight_norm, g);
  }
  LossValue out;
  for (int i = 0; i < n; ++i) {
    out.occupancy += losses[i].occ_sum;
    out.weights += losses[i].weight_sum;
  }
  out.occupancy *= occ_scale;
  out.weights *= weight_norm;
  out.total = out.occupancy + (with_weights ? lambda * out.weights : 0.0);
  if (grad) {
    grad->setZero(model.parameter_count());
    for (int i = 0; i < n; ++i) *grad += grads[i];
  }
  return out;
}

double loss_occupancy(const OccupancyModel& model, const Minibatch& batch, BlendMode mode) {
  return total_loss(model, batch, 0.0, mode).occupancy;
}

double loss_weights(const OccupancyModel& model, const Minibatch& batch) {
  if (model.kind() == ModelKind::Unstructured)
    throw Error(ErrorCode::UnsupportedModel, "the skinning-weight loss needs a part-based model");
  return total_loss(model, batch, 1.0, BlendMode::Soft).weights;
}

TrainResult train(OccupancyModel& model, const CapsuleBody& body, std::span<const Pose> poses,
                  const TrainConfig& cfg, const CheckpointFn& on_checkpoint) {
  cfg.validate();
  if (model.config().dim != body.dim() || model.config().bones != body.bone_count())
    throw Error(ErrorCode::DimensionMismatch, "model and body disagree");
  const bool unstructured = model.kind() == ModelKind::Unstructured;
  TrainConfig step_cfg = cfg;
  if (unstructured) step_cfg.vertices = 0;

  ParamVector params = model.flatten();
  Adam adam(params.size(), AdamConfig{cfg.learning_rate});
  Eigen::VectorXd grad(params.size());
  TrainResult result;
  LossValue window;
  int in_window = 0;
  for (int step = 0; step < cfg.iterations; ++step) {
    const Minibatch batch = sample_minibatch(body, poses, step_cfg, derive_seed(cfg.seed, 17, step));
    const LossValue loss = total_loss(model, batch, unstructured ? 0.0 : cfg.lambda, cfg.blend, &grad);
    if (!std::isfinite(loss.total)) {
      std::ostringstream msg;
      msg << "non-finite loss at step " << step + 1 << " (occupancy=" << loss.occupancy
          << ", weights=" << loss.weights << ")";
      throw Error(ErrorCode::Divergence, msg.str());
    }
    try {
      adam.step(params, grad);
      model.unflatten(params);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NonFiniteGradient) throw;
      ++result.skipped_steps;
    }
    window.total += loss.total;
    window.occupancy += loss.occupancy;
    window.weights += loss.weights;
    if (++in_window == cfg.history_interval) {
      const double k = 1.0 / in_window;
      result.history.push_back({step + 1, window.total * k, window.occupancy * k, window.weights * k});
      window = {};
      in_window = 0;
    }
    if (on_checkpoint && cfg.checkpoint_interval > 0 && (step + 1) % cfg.checkpoint_interval == 0)
      on_checkpoint(step + 1, model);
  }
  return result;
}

std::vector<Pose> poses_of(const std::vector<FrameSamples>& frames) {
  std::vector<Pose> out;
  out.reserve(frames.size());
  for (const auto& f : frames) out.push_back(f.pose);
  return out;
}

std::string loss_history_csv(const TrainResult& result) {
  std::ostringstream os;
  os << "step,loss_total,loss_occ,loss_weights\n" << std::setprecision(9);
  for (const auto& r : result.history) os << r.step << ',' << r.total << ',' << r.occupancy << ',' << r.weights << '\n';
  return os.str();
}

}  // namespace nasa
