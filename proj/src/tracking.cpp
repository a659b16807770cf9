#include "nasa/tracking.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace nasa {

TrackConfig TrackConfig::defaults_for(const CapsuleBody& body) {
  TrackConfig cfg;
  const PosedBones rest = forward_kinematics(body.rig, Pose::rest(body.rig));
  cfg.sigma = 0.05 * posed_bounds(body, rest).diagonal();
  return cfg;
}

void TrackConfig::validate() const {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw Error(ErrorCode::InvalidInput, "sigma must be >= 0");
  if (samples < 1) throw Error(ErrorCode::InvalidInput, "samples must be >= 1");
  if (steps_per_frame < 0) throw Error(ErrorCode::InvalidInput, "steps_per_frame must be >= 0");
  if (!(learning_rate > 0.0)) throw Error(ErrorCode::InvalidInput, "learning rate must be > 0");
  if (!(w_prior >= 0.0)) throw Error(ErrorCode::InvalidInput, "w_prior must be >= 0");
}

Points perturbations(int dim, Eigen::Index n, int samples, bool antithetic, std::uint64_t seed) {
  Points eps(dim, n * samples);
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (int s = 0; s < samples; ++s) {
      const Eigen::Index col = j * samples + s;
      if (antithetic && s % 2 == 1) {
        eps.col(col) = -eps.col(col - 1);
      } else {
        for (int k = 0; k < dim; ++k) eps(k, col) = gauss(rng);
      }
    }
  }
  return eps;
}

namespace {

Points perturbed_points(const Points& x, const Points& eps, double sigma, int samples) {
  Points out(x.rows(), x.cols() * samples);
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    for (int s = 0; s < samples; ++s) out.col(j * samples + s) = x.col(j) + sigma * eps.col(j * samples + s);
  return out;
}

Eigen::RowVectorXd sample_means(const Eigen::RowVectorXd& v, Eigen::Index n, int samples) {
  return Eigen::Map<const Eigen::MatrixXd>(v.data(), samples, n).colwise().mean();
}

constexpr int kEnergyChunks = 8;

}  // namespace

Eigen::RowVectorXd smoothed_occupancy(const OccupancyModel& model, std::span<const RigidTransform> inverses,
                                      const Points& x, double sigma, int samples, bool antithetic,
                                      std::uint64_t seed) {
  if (samples < 1) throw Error(ErrorCode::InvalidInput, "samples must be >= 1");
  const Points eps = perturbations(static_cast<int>(x.rows()), x.cols(), samples, antithetic, seed);
  const Eigen::RowVectorXd v = model.evaluate(inverses, perturbed_points(x, eps, sigma, samples), BlendMode::Soft);
  return sample_means(v, x.cols(), samples);
}

double fitting_energy(const OccupancyModel& model, std::span<const RigidTransform> inverses, const Points& cloud,
                      const TrackConfig& cfg, std::uint64_t seed, std::vector<FrameGradient>* grad_frames) {
  const Eigen::Index n = cloud.cols();
  if (n == 0) return 0.0;
  const int S = cfg.samples;
  const int d = static_cast<int>(cloud.rows());
  const Points eps = perturbations(d, n, S, cfg.antithetic, seed);
  const Points xs = perturbed_points(cloud, eps, cfg.sigma, S);

  // fixed chunking keeps the reduction order independent of the thread count
  const int chunks = static_cast<int>(std::min<Eigen::Index>(kEnergyChunks, n));
  std::vector<double> energy(chunks, 0.0);
  std::vector<std::vector<FrameGradient>> grads(chunks);
#pragma omp parallel for schedule(dynamic)
  for (int c = 0; c < chunks; ++c) {
    const Eigen::Index lo = n * c / chunks, hi = n * (c + 1) / chunks;
    const Points xc = xs.middleCols(lo * S, (hi - lo) * S);
    const auto pass = model.forward(inverses, xc, BlendMode::Soft);
    const Eigen::RowVectorXd m = sample_means(pass.value, hi - lo, S);
    const Eigen::RowVectorXd r = m.array() - 0.5;
    energy[c] = r.squaredNorm();
    if (grad_frames) {
      Eigen::RowVectorXd dv(xc.cols());
      for (Eigen::Index j = 0; j < hi - lo; ++j) dv.segment(j * S, S).setConstant(2.0 * r(j) / S);
      grads[c] = zero_frame_gradients(d, static_cast<int>(inverses.size()));
      Eigen::VectorXd scratch = Eigen::VectorXd::Zero(model.parameter_count());
      model.backward(pass, &dv, nullptr, scratch, &grads[c]);
    }
  }
  double total = 0.0;
  for (int c = 0; c < chunks; ++c) {
    total += energy[c];
    if (grad_frames)
      for (std::size_t b = 0; b < inverses.size(); ++b) {
        (*grad_frames)[b].rotation += grads[c][b].rotation;
        (*grad_frames)[b].translation += grads[c][b].translation;
      }
  }
  return total;
}

double prior_energy(std::span<const RigidTransform> inverses, const Rig& rig, std::vector<FrameGradient>* grad_frames) {
  if (static_cast<int>(inverses.size()) != rig.bone_count())
    throw Error(ErrorCode::DimensionMismatch, "frame count");
  double e = 0.0;
  for (const auto& [b1, b2] : rig.edges()) {
    const RigidTransform& c1 = inverses[b1];
    const RigidTransform& c2 = inverses[b2];
    const Vec p = -c2.rotation.transpose() * c2.translation;
    const Vec r = (rig.rest_translation(b2) - rig.rest_translation(b1)) - c1.apply(p);
    e += r.squaredNorm();
    if (grad_frames) {
      auto& g1 = (*grad_frames)[b1];
      auto& g2 = (*grad_frames)[b2];
      g1.rotation -= 2.0 * r * p.transpose();
      g1.translation -= 2.0 * r;
      const Vec dp = -2.0 * c1.rotation.transpose() * r;
      g2.rotation -= c2.translation * dp.transpose();
      g2.translation -= c2.rotation * dp;
    }
  }
  return e;
}

Eigen::VectorXd identity_update(int dim, int bones) {
  Eigen::VectorXd u = Eigen::VectorXd::Zero(3 * dim * bones);
  for (int b = 0; b < bones; ++b) {
    u(3 * dim * b) = 1.0;
    u(3 * dim * b + dim + 1) = 1.0;
  }
  return u;
}

namespace {

RigidTransform delta_of(const Eigen::VectorXd& update, int b, int d) {
  const Eigen::Index o = 3 * d * b;
  return {rotation_from_two_vectors(update.segment(o, d), update.segment(o + d, d)), update.segment(o + 2 * d, d)};
}

}  // namespace

std::vector<RigidTransform> apply_update(std::span<const RigidTransform> inverses, const Eigen::VectorXd& update) {
  const int bones = static_cast<int>(inverses.size());
  const int d = bones > 0 ? inverses[0].dim() : 0;
  if (update.size() != 3 * d * bones) throw Error(ErrorCode::DimensionMismatch, "update size");
  std::vector<RigidTransform> out;
  out.reserve(bones);
  for (int b = 0; b < bones; ++b) out.push_back(delta_of(update, b, d) * inverses[b]);
  return out;
}

EnergyValue update_energy(const OccupancyModel& model, const Rig& rig, std::span<const RigidTransform> inverses,
                          const Eigen::VectorXd& update, const Points& cloud, const TrackConfig& cfg,
                          std::uint64_t seed, Eigen::VectorXd* grad) {
  const int bones = static_cast<int>(inverses.size());
  const int d = rig.dim();
  const std::vector<RigidTransform> cand = apply_update(inverses, update);
  std::vector<FrameGradient> gf_fit, gf_prior;
  if (grad) {
    gf_fit = zero_frame_gradients(d, bones);
    gf_prior = zero_frame_gradients(d, bones);
  }
  EnergyValue e;
  e.fit = fitting_energy(model, cand, cloud, cfg, seed, grad ? &gf_fit : nullptr);
  e.prior = prior_energy(cand, rig, grad ? &gf_prior : nullptr);
  e.total = e.fit + cfg.w_prior * e.prior;
  if (grad) {
    grad->setZero(update.size());
    for (int b = 0; b < bones; ++b) {
      const Mat dr_cand = gf_fit[b].rotation + cfg.w_prior * gf_prior[b].rotation;
      const Vec dt_cand = gf_fit[b].translation + cfg.w_prior * gf_prior[b].translation;
      // candidate = (R, delta) * (R_C, t_C): R' = R R_C, t' = R t_C + delta
      const Mat d_rot = dr_cand * inverses[b].rotation.transpose() + dt_cand * inverses[b].translation.transpose();
      const Eigen::Index o = 3 * d * b;
      const auto [du, dv] = rotation_from_two_vectors_backward(update.segment(o, d), update.segment(o + d, d), d_rot);
      grad->segment(o, d) = du;
      grad->segment(o + d, d) = dv;
      grad->segment(o + 2 * d, d) = dt_cand;
    }
  }
  return e;
}

TrackFrameResult track_frame(const OccupancyModel& model, const Rig& rig, std::span<const RigidTransform> previous,
                             const Points& cloud, const TrackConfig& cfg, int frame_index) {
  cfg.validate();
  const int bones = rig.bone_count();
  const int d = rig.dim();
  TrackFrameResult out;
  out.inverses.assign(previous.begin(), previous.end());
  const Eigen::VectorXd identity = identity_update(d, bones);
  Adam adam(identity.size(), AdamConfig{cfg.learning_rate});
  Eigen::VectorXd grad(identity.size());
  for (int step = 0; step < cfg.steps_per_frame; ++step) {
    const std::uint64_t seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(frame_index), step);
    const EnergyValue e = update_energy(model, rig, out.inverses, identity, cloud, cfg, seed, &grad);
    if (!std::isfinite(e.total) || !grad.allFinite()) {
      out.inverses.assign(previous.begin(), previous.end());
      out.failed = true;
      break;
    }
    Eigen::VectorXd update = identity;
    adam.step(update, grad);
    try {
      std::vector<RigidTransform> next = apply_update(out.inverses, update);
      for (auto& c : next) c.rotation = reorthogonalize(c.rotation);
      out.inverses = std::move(next);
    } catch (const Error& err) {
      if (err.code() != ErrorCode::DegenerateRotation) throw;
      out.inverses.assign(previous.begin(), previous.end());
      out.failed = true;
      break;
    }
  }
  const std::uint64_t seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(frame_index), cfg.steps_per_frame);
  out.energy = update_energy(model, rig, out.inverses, identity, cloud, cfg, seed);
  if (!std::isfinite(out.energy.total) && !out.failed) {
    out.inverses.assign(previous.begin(), previous.end());
    out.failed = true;
  }
  return out;
}

double TrackResult::mean_joint_error() const {
  if (frames.empty()) return 0.0;
  double s = 0.0;
  for (const auto& f : frames) s += f.joint_error;
  return s / static_cast<double>(frames.size());
}

double joint_error(std::span<const RigidTransform> inverses, const CapsuleBody& body, const PosedBones& truth) {
  const double diag = posed_bounds(body, truth).diagonal();
  double s = 0.0;
  for (std::size_t b = 0; b < inverses.size(); ++b) {
    const Vec origin = -inverses[b].rotation.transpose() * inverses[b].translation;
    s += (origin - truth.bones[b].translation).norm();
  }
  return s / (static_cast<double>(inverses.size()) * diag);
}

TrackResult track_sequence(const OccupancyModel& model, const CapsuleBody& body,
                           const std::vector<FrameSamples>& frames, const TrackConfig& cfg, bool with_metrics,
                           const EvalConfig& eval) {
  cfg.validate();
  TrackResult result;
  if (frames.empty()) return result;
  const FieldFn field = model_field(model, BlendMode::Hard);
  std::vector<RigidTransform> state = forward_kinematics(body.rig, frames[0].pose).inverses;
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const FrameSamples& f = frames[t];
    TrackedFrame row;
    row.frame = f.frame_index;
    if (t == 0) {
      const std::uint64_t seed = derive_seed(cfg.seed, 0, cfg.steps_per_frame);
      const EnergyValue e = update_energy(model, body.rig, state, identity_update(body.dim(), body.bone_count()),
                                          f.vertices, cfg, seed);
      row.e_fit = e.fit;
      row.e_prior = e.prior;
    } else {
      TrackFrameResult r = track_frame(model, body.rig, state, f.vertices, cfg, static_cast<int>(t));
      state = std::move(r.inverses);
      row.e_fit = r.energy.fit;
      row.e_prior = r.energy.prior;
      row.failed = r.failed;
    }
    row.inverses = state;
    const PosedBones truth = forward_kinematics(body.rig, f.pose);
    row.joint_error = joint_error(state, body, truth);
    if (with_metrics) {
      const PosedBones tracked = PosedBones::from_inverses(state);
      row.iou = iou(threshold(field(tracked, f.eval_points())), f.labels);
      // surface metrics compare the tracked model's level set with the true surface
      const FieldFn tracked_field = [&](const PosedBones&, const Points& x) { return field(tracked, x); };
      const FrameMetrics m =
          surface_metrics(tracked_field, body, truth, eval, derive_seed(eval.seed, f.sequence_id, f.frame_index));
      row.chamfer_l1 = m.chamfer_l1;
      row.fscore = m.fscore;
    }
    result.frames.push_back(std::move(row));
  }
  return result;
}

std::string track_csv(const TrackResult& result) {
  std::ostringstream os;
  os << "frame,e_fit,e_prior,joint_error,iou,chamfer_l1,fscore,failed\n" << std::setprecision(9);
  for (const auto& f : result.frames)
    os << f.frame << ',' << f.e_fit << ',' << f.e_prior << ',' << f.joint_error << ',' << f.iou << ','
       << f.chamfer_l1 << ',' << f.fscore << ',' << (f.failed ? 1 : 0) << '\n';
  return os.str();
}

}  // namespace nasa
