#include "nasa/tracking.hpp"
#include "nasa/training.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <numbers>

using namespace nasa;
using nasa::test::central_diff;
using nasa::test::max_rel_error;

namespace {

OccupancyModel constant_model(int dim, int bones, double head_bias) {
  ModelConfig c = ModelConfig::defaults(ModelKind::Deformable, dim, bones);
  c.width = 4;
  OccupancyModel m = OccupancyModel::zeros(c);
  for (int b = 0; b < bones; ++b) m.net(b).mutable_params()[m.net(b).head_offset() + c.width] = head_bias;
  return m;
}

OccupancyModel random_model(ModelKind kind, int dim, int bones, std::uint64_t seed) {
  ModelConfig c = ModelConfig::defaults(kind, dim, bones);
  c.width = 8;
  c.projection_dim = 2;
  return OccupancyModel::initialized(c, seed);
}

Points random_cloud(int dim, int n, Rng& rng, double scale) {
  std::uniform_real_distribution<double> uni(-scale, scale);
  Points p(dim, n);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = uni(rng);
  return p;
}

/// Two-bone planar body with a D model fitted to it, shared by the tracking cases.
struct TrainedPair {
  CapsuleBody body = nasa::test::chain(2, 0.3);
  OccupancyModel model;

  TrainedPair() {
    Rng rng(100);
    std::vector<Pose> poses;
    for (int i = 0; i < 24; ++i) poses.push_back(nasa::test::random_pose(body.rig, rng, 0.8, 0.3));
    poses.push_back(Pose::rest(body.rig));
    model = OccupancyModel::initialized(ModelConfig::defaults(ModelKind::Deformable, 2, 2), 7);
    TrainConfig tc;
    tc.batch_frames = 4;
    tc.points_uniform = 256;
    tc.points_surface = 256;
    tc.vertices = 128;
    tc.iterations = 2000;
    tc.learning_rate = 1e-3;
    train(model, body, poses, tc);
  }
};

const TrainedPair& trained_pair() {
  static const TrainedPair pair;
  return pair;
}

Pose bent_pose(const Rig& rig, double angle) {
  Pose p = Pose::rest(rig);
  p.joints[1](0) = angle;
  return p;
}

double relative_angle(std::span<const RigidTransform> inverses) {
  // B_0^T B_1 rotation = C_0 C_1^T
  const Mat r = inverses[0].rotation * inverses[1].rotation.transpose();
  return std::atan2(r(1, 0), r(0, 0));
}

double orthonormality_error(std::span<const RigidTransform> frames) {
  double worst = 0.0;
  for (const auto& f : frames) {
    const Mat e = f.rotation.transpose() * f.rotation - Mat::Identity(f.dim(), f.dim());
    worst = std::max({worst, e.cwiseAbs().maxCoeff(), std::abs(f.rotation.determinant() - 1.0)});
  }
  return worst;
}

}  // namespace

TEST_CASE("perturbations") {
  const Points e = perturbations(3, 5, 4, true, 9);
  CHECK(e.cols() == 20);
  for (int j = 0; j < 5; ++j) {
    CHECK(e.col(j * 4 + 1) == -e.col(j * 4));
    CHECK(e.col(j * 4 + 3) == -e.col(j * 4 + 2));
  }
  CHECK(perturbations(3, 5, 4, true, 9) == e);
  CHECK(perturbations(3, 5, 4, true, 10) != e);
  const Points plain = perturbations(2, 2000, 1, false, 3);
  CHECK(std::abs(plain.mean()) < 0.05);
  CHECK(std::abs(plain.array().square().mean() - 1.0) < 0.05);
}

TEST_CASE("smoothed occupancy of a constant model") {
  Rng rng(1);
  const auto frames = forward_kinematics(nasa::test::chain(3, 0.3).rig, Pose::rest(nasa::test::chain(3, 0.3).rig)).inverses;
  const OccupancyModel m = constant_model(2, 3, 0.8);
  const double c = 1.0 / (1.0 + std::exp(-0.8));
  const Points x = random_cloud(2, 5, rng, 1.0);
  for (int s : {1, 3, 16}) {
    const Eigen::RowVectorXd v = smoothed_occupancy(m, frames, x, 0.2, s, s > 1, 4);
    CHECK((v.array() - c).abs().maxCoeff() <= 1e-15);
  }
  TrackConfig cfg;
  cfg.sigma = 0.1;
  CHECK(fitting_energy(m, frames, x.leftCols(1), cfg, 1) == doctest::Approx((c - 0.5) * (c - 0.5)).epsilon(1e-13));
  CHECK(fitting_energy(m, frames, Points(2, 0), cfg, 1) == 0.0);
  CHECK_THROWS_AS(smoothed_occupancy(m, frames, x, 0.2, 0, false, 1), Error);
}

TEST_CASE("zero kernel width reproduces the model") {
  Rng rng(2);
  const OccupancyModel m = random_model(ModelKind::Deformable, 2, 3, 5);
  const CapsuleBody body = nasa::test::chain(3, 0.3);
  const auto frames = forward_kinematics(body.rig, nasa::test::random_pose(body.rig, rng)).inverses;
  const Points x = random_cloud(2, 20, rng, 1.0);
  const Eigen::RowVectorXd direct = m.evaluate(frames, x, BlendMode::Soft);
  CHECK((smoothed_occupancy(m, frames, x, 0.0, 1, false, 3) - direct).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("monte carlo smoothing agrees with quadrature") {
  const OccupancyModel m = random_model(ModelKind::Rigid, 2, 2, 11);
  const CapsuleBody body = nasa::test::chain(2, 0.3);
  Pose pose = bent_pose(body.rig, 0.6);
  const auto frames = forward_kinematics(body.rig, pose).inverses;
  Points x(2, 1);
  x << 0.45, 0.1;
  const double sigma = 0.15;

  // 201 x 201 midpoint grid over +-6 sigma of the Gaussian kernel.
  const int n = 201;
  const double half = 6.0 * sigma, h = 2.0 * half / n;
  Points grid(2, n * n);
  Eigen::VectorXd w(n * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double dx = -half + (i + 0.5) * h, dy = -half + (j + 0.5) * h;
      grid(0, i * n + j) = x(0) + dx;
      grid(1, i * n + j) = x(1) + dy;
      w(i * n + j) = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma)) * h * h / (2 * std::numbers::pi * sigma * sigma);
    }
  const double quad = m.evaluate(frames, grid, BlendMode::Soft).dot(w) / w.sum();

  const int S = 4096;
  const Points eps = perturbations(2, 1, S, false, 21);
  const Eigen::RowVectorXd vals = m.evaluate(frames, (sigma * eps).colwise() + x.col(0), BlendMode::Soft);
  const double mc = smoothed_occupancy(m, frames, x, sigma, S, false, 21)(0);
  CHECK(mc == doctest::Approx(vals.mean()).epsilon(1e-12));
  const double stdev = std::sqrt((vals.array() - vals.mean()).square().sum() / (S - 1));
  MESSAGE("quadrature " << quad << " mc " << mc << " sample std " << stdev);
  CHECK(stdev > 0.0);
  CHECK(std::abs(mc - quad) <= 3.0 * stdev / std::sqrt(double(S)));

  // Unbiasedness over independent small-sample estimates.
  Eigen::VectorXd est(200);
  for (int r = 0; r < 200; ++r) est(r) = smoothed_occupancy(m, frames, x, sigma, 64, false, 1000 + r)(0);
  const double mean = est.mean();
  const double se = std::sqrt((est.array() - mean).square().sum() / 199.0) / std::sqrt(200.0);
  CHECK(std::abs(mean - quad) <= 4.0 * se);
}

TEST_CASE("prior energy") {
  Rng rng(3);
  for (int d : {2, 3}) {
    const CapsuleBody body = nasa::test::chain(4, 0.3, d);
    const auto rest = forward_kinematics(body.rig, Pose::rest(body.rig)).inverses;
    CHECK(prior_energy(rest, body.rig) == 0.0);

    Pose pose = nasa::test::random_pose(body.rig, rng, 1.5);
    const auto posed = forward_kinematics(body.rig, pose);
    // Joint rotations do not move child origins, so any FK pose has zero prior.
    CHECK(prior_energy(posed.inverses, body.rig) <= 1e-24);

    std::vector<RigidTransform> off = posed.inverses;
    off[2].translation(0) += 0.3;
    const double e = prior_energy(off, body.rig);
    const RigidTransform g = random_rigid(d, rng, 3.0);
    std::vector<RigidTransform> moved;
    for (const auto& c : off) moved.push_back(c * g.inverse());
    CHECK(prior_energy(moved, body.rig) == doctest::Approx(e).epsilon(1e-9));
  }

  // Child translated by (delta, 0) in its parent's frame.
  const CapsuleBody pair = nasa::test::chain(2, 0.3);
  const double delta = 0.07;
  auto bones = forward_kinematics(pair.rig, bent_pose(pair.rig, 0.4)).bones;
  RigidTransform parent = bones[0];
  parent.rotation = rotation_2d(0.9);
  bones[0] = parent;
  Vec shift(2);
  shift << delta, 0.0;
  bones[1].rotation = parent.rotation * rotation_2d(0.4);
  bones[1].translation = parent.apply(pair.rig.rest_offset(1) + shift);
  std::vector<RigidTransform> inv{bones[0].inverse(), bones[1].inverse()};
  CHECK(prior_energy(inv, pair.rig) == doctest::Approx(delta * delta).epsilon(1e-12));
  CHECK_THROWS_AS(prior_energy(std::vector<RigidTransform>(inv.begin(), inv.begin() + 1), pair.rig), Error);
}

TEST_CASE("prior gradient matches central differences") {
  Rng rng(4);
  const CapsuleBody body = nasa::test::chain(3, 0.3, 3);
  std::vector<RigidTransform> frames;
  for (int b = 0; b < 3; ++b) frames.push_back(random_rigid(3, rng, 1.0));
  auto g = zero_frame_gradients(3, 3);
  prior_energy(frames, body.rig, &g);
  const auto pack = [](const std::vector<RigidTransform>& f) {
    Eigen::VectorXd v(f.size() * 12);
    for (std::size_t b = 0; b < f.size(); ++b) {
      v.segment(b * 12, 9) = Eigen::Map<const Eigen::VectorXd>(f[b].rotation.data(), 9);
      v.segment(b * 12 + 9, 3) = f[b].translation;
    }
    return v;
  };
  const auto unpack = [](const Eigen::VectorXd& v) {
    std::vector<RigidTransform> f(3, RigidTransform::identity(3));
    for (int b = 0; b < 3; ++b) {
      f[b].rotation = Eigen::Map<const Eigen::Matrix3d>(v.data() + b * 12);
      f[b].translation = v.segment(b * 12 + 9, 3);
    }
    return f;
  };
  std::vector<RigidTransform> as_frames;
  for (const auto& x : g) as_frames.push_back({x.rotation, x.translation});
  const auto numeric = central_diff([&](const Eigen::VectorXd& v) { return prior_energy(unpack(v), body.rig); }, pack(frames));
  CHECK(max_rel_error(pack(as_frames), numeric) <= 1e-6);
}

TEST_CASE("update energy gradient matches central differences") {
  Rng rng(5);
  for (int d : {2, 3}) {
    for (ModelKind kind : {ModelKind::Rigid, ModelKind::Deformable}) {
      CAPTURE(d);
      const CapsuleBody body = nasa::test::chain(3, 0.3, d);
      const OccupancyModel m = random_model(kind, d, 3, rng());
      const auto frames = forward_kinematics(body.rig, nasa::test::random_pose(body.rig, rng, 0.8)).inverses;
      const Points cloud = random_cloud(d, 12, rng, 1.0);
      TrackConfig cfg;
      cfg.samples = 16;
      cfg.sigma = 0.05;
      Eigen::VectorXd update = identity_update(d, 3);
      std::normal_distribution<double> n01(0.0, 0.05);
      for (auto& v : update) v += n01(rng);
      Eigen::VectorXd grad;
      update_energy(m, body.rig, frames, update, cloud, cfg, 77, &grad);
      const auto f = [&](const Eigen::VectorXd& u) { return update_energy(m, body.rig, frames, u, cloud, cfg, 77).total; };
      CHECK(max_rel_error(grad, central_diff(f, update)) <= 1e-3);
    }
  }
}

TEST_CASE("identity update leaves the frames unchanged") {
  Rng rng(6);
  std::vector<RigidTransform> frames;
  for (int b = 0; b < 3; ++b) frames.push_back(random_rigid(3, rng));
  const auto out = apply_update(frames, identity_update(3, 3));
  for (int b = 0; b < 3; ++b) CHECK(max_abs_difference(out[b], frames[b]) <= 1e-15);
  CHECK_THROWS_AS(apply_update(frames, identity_update(3, 2)), Error);
}

TEST_CASE("tracking a static cloud stays at the solution") {
  const TrainedPair& tp = trained_pair();
  const PosedBones posed = forward_kinematics(tp.body.rig, bent_pose(tp.body.rig, 0.5));
  const LevelSet surface = extract_surface_points(model_field(tp.model, BlendMode::Soft), tp.body, posed, 128);
  REQUIRE_FALSE(surface.empty);
  TrackConfig cfg = TrackConfig::defaults_for(tp.body);
  cfg.sigma = 1e-3;
  const TrackFrameResult r = track_frame(tp.model, tp.body.rig, posed.inverses, surface.points, cfg, 1);
  CHECK_FALSE(r.failed);
  double worst_t = 0.0, worst_r = 0.0;
  for (int b = 0; b < 2; ++b) {
    const Vec o1 = -r.inverses[b].rotation.transpose() * r.inverses[b].translation;
    worst_t = std::max(worst_t, (o1 - posed.bones[b].translation).norm());
    const Mat rel = r.inverses[b].rotation * posed.bones[b].rotation;
    worst_r = std::max(worst_r, std::abs(std::atan2(rel(1, 0), rel(0, 0))));
  }
  MESSAGE("static drift: translation " << worst_t << " rotation " << worst_r);
  CHECK(worst_t <= 1e-3);
  CHECK(worst_r <= 1e-3);
  CHECK(orthonormality_error(r.inverses) <= 1e-6);
}

TEST_CASE("tracking recovers a bent joint") {
  const TrainedPair& tp = trained_pair();
  std::vector<FrameSamples> frames;
  const double angles[2] = {0.0, 0.2};
  for (int t = 0; t < 2; ++t) {
    frames.push_back(build_frame_samples(tp.body, bent_pose(tp.body.rig, angles[t]), SampleCounts{200, 200, 400, 0.03},
                                         derive_seed(5, t)));
    frames.back().frame_index = t;
  }
  const TrackConfig cfg = TrackConfig::defaults_for(tp.body);
  const TrackResult a = track_sequence(tp.model, tp.body, frames, cfg, false);
  const TrackResult b = track_sequence(tp.model, tp.body, frames, cfg, false);
  REQUIRE(a.frames.size() == 2);
  CHECK(a.frames[0].joint_error == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(track_csv(a) == track_csv(b));
  const double recovered = relative_angle(a.frames[1].inverses);
  MESSAGE("recovered angle " << recovered << " joint error " << a.frames[1].joint_error);
  CHECK(std::abs(recovered - 0.2) <= 0.02);
  CHECK(orthonormality_error(a.frames[1].inverses) <= 1e-6);
}

TEST_CASE("static sequence on the model's own surface stays put") {
  const TrainedPair& tp = trained_pair();
  const Pose pose = bent_pose(tp.body.rig, 0.3);
  const PosedBones posed = forward_kinematics(tp.body.rig, pose);
  FrameSamples f = build_frame_samples(tp.body, pose, SampleCounts{100, 100, 10, 0.03}, 4);
  f.vertices = extract_surface_points(model_field(tp.model, BlendMode::Soft), tp.body, posed, 128).points;
  std::vector<FrameSamples> frames;
  for (int t = 0; t < 5; ++t) {
    frames.push_back(f);
    frames.back().frame_index = t;
  }
  TrackConfig cfg = TrackConfig::defaults_for(tp.body);
  cfg.sigma = 1e-3;
  const TrackResult r = track_sequence(tp.model, tp.body, frames, cfg, true);
  REQUIRE(r.frames.size() == 5);
  CHECK(r.frames[0].joint_error <= 1e-12);
  for (const auto& row : r.frames) {
    CHECK_FALSE(row.failed);
    CHECK(row.joint_error <= 1e-3);
    CHECK(row.iou > 0.9);
  }
  MESSAGE(track_csv(r));
}

TEST_CASE("track config validation") {
  TrackConfig c;
  c.samples = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = TrackConfig{};
  c.sigma = -1.0;
  CHECK_THROWS_AS(c.validate(), Error);
  const CapsuleBody body = nasa::test::chain(2, 0.3);
  const TrackConfig d = TrackConfig::defaults_for(body);
  const double diag = posed_bounds(body, forward_kinematics(body.rig, Pose::rest(body.rig))).diagonal();
  CHECK(d.sigma == doctest::Approx(0.05 * diag));
}
