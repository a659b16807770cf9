#include "nasa/evaluation.hpp"
#include "nasa/training.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <sstream>

using namespace nasa;
using nasa::test::central_diff;
using nasa::test::max_rel_error;

namespace {

TrainConfig small_train_config() {
  TrainConfig c;
  c.batch_frames = 3;
  c.points_uniform = 30;
  c.points_surface = 30;
  c.vertices = 20;
  c.iterations = 50;
  c.learning_rate = 1e-3;
  c.history_interval = 10;
  return c;
}

std::vector<Pose> random_poses(const Rig& rig, int n, Rng& rng, double amplitude = 1.0) {
  std::vector<Pose> poses;
  for (int i = 0; i < n; ++i) poses.push_back(nasa::test::random_pose(rig, rng, amplitude, 0.3));
  return poses;
}

std::vector<FrameSamples> eval_frames(const CapsuleBody& body, const std::vector<Pose>& poses, std::uint64_t seed) {
  std::vector<FrameSamples> out;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    out.push_back(build_frame_samples(body, poses[i], SampleCounts{1000, 1000, 300, 0.03}, derive_seed(seed, i)));
    out.back().frame_index = static_cast<int>(i);
  }
  return out;
}

/// One-part, one-wide R model: part value = sigmoid(lrelu(q_x + q_y)) at the local point q.
OccupancyModel hand_model() {
  ModelConfig c = ModelConfig::defaults(ModelKind::Rigid, 2, 1);
  c.width = 1;
  OccupancyModel m = OccupancyModel::zeros(c);
  std::span<double> w = m.net(0).mutable_params();
  w[m.net(0).weight_offset(0)] = 1.0;
  w[m.net(0).weight_offset(0) + 1] = 1.0;
  w[m.net(0).head_offset()] = 1.0;
  return m;
}

}  // namespace

TEST_CASE("occupancy loss examples") {
  Vec t(2);
  t << 1.0, 0.0;
  BatchItem item;
  item.posed = PosedBones::from_inverses({RigidTransform::translate(-t)});
  item.points.resize(2, 3);
  item.points << 1.5, 0.0, 2.0, 0.5, 0.0, 1.0;
  item.labels.resize(3);
  item.labels << 1.0, 0.0, 1.0;
  item.vertices.resize(2, 0);
  const Minibatch batch{item};

  CHECK(loss_occupancy(hand_model(), batch) == doctest::Approx(0.10406119902509746).epsilon(1e-13));

  Minibatch perfect = batch;
  perfect[0].labels = hand_model().evaluate(item.posed, item.points, BlendMode::Soft);
  CHECK(loss_occupancy(hand_model(), perfect) == 0.0);

  const OccupancyModel half = OccupancyModel::zeros(ModelConfig::defaults(ModelKind::Rigid, 2, 1));
  CHECK(loss_occupancy(half, batch) == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("weight loss examples") {
  const CapsuleBody body = nasa::test::chain(2, 0.3);
  const PosedBones posed = forward_kinematics(body.rig, Pose::rest(body.rig));
  BatchItem item;
  item.posed = posed;
  item.points = Points::Zero(2, 1);
  item.labels = Eigen::RowVectorXd::Zero(1);
  sample_vertices(body, posed, 40, 1, item.vertices, item.owners);
  const Minibatch batch{item};

  ModelConfig rc = ModelConfig::defaults(ModelKind::Rigid, 2, 2);
  rc.width = 4;
  const OccupancyModel half = OccupancyModel::zeros(rc);
  CHECK(loss_weights(half, batch) == doctest::Approx(0.125).epsilon(1e-15));

  // Part 0 outputs 0.5 everywhere and part 1 is pushed to ~0; every vertex marked as owned by part 0.
  OccupancyModel owner = OccupancyModel::zeros(rc);
  owner.net(1).mutable_params()[owner.net(1).head_offset() + rc.width] = -60.0;
  Minibatch owned = batch;
  std::fill(owned[0].owners.begin(), owned[0].owners.end(), 0);
  CHECK(loss_weights(owner, owned) <= 1e-40);

  const OccupancyModel u = OccupancyModel::zeros(ModelConfig::defaults(ModelKind::Unstructured, 2, 2));
  try {
    loss_weights(u, batch);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnsupportedModel);
  }
  const LossValue lu = total_loss(u, batch, 0.5, BlendMode::Soft);
  CHECK(lu.weights == 0.0);
  CHECK(lu.total == lu.occupancy);

  const LossValue lr = total_loss(half, batch, 0.5, BlendMode::Soft);
  CHECK(lr.total == doctest::Approx(lr.occupancy + 0.5 * 0.125).epsilon(1e-14));
}

TEST_CASE("total loss gradient matches central differences on a frozen minibatch") {
  // A batch holds a few hundred points, so some pre-activation usually sits within 1e-5 of a
  // LeakyReLU kink; the smaller step keeps the difference quotient on one side of it.
  const double kStep = 1e-7;
  Rng rng(1);
  for (ModelKind kind : {ModelKind::Unstructured, ModelKind::Rigid, ModelKind::Deformable}) {
    for (int d : {2, 3}) {
      CAPTURE(to_string(kind));
      CAPTURE(d);
      const CapsuleBody body = nasa::test::chain(3, 0.3, d);
      const auto poses = random_poses(body.rig, 4, rng);
      const Minibatch batch = sample_minibatch(body, poses, small_train_config(), 7);
      ModelConfig c = ModelConfig::defaults(kind, d, 3);
      c.width = 5;
      c.projection_dim = 2;
      c.temperature = 0.2;
      OccupancyModel m = OccupancyModel::initialized(c, rng());
      for (double lambda : {0.0, 0.5}) {
        Eigen::VectorXd grad;
        total_loss(m, batch, lambda, BlendMode::Soft, &grad);
        OccupancyModel probe = m;
        const auto f = [&](const Eigen::VectorXd& p) {
          probe.unflatten(p);
          return total_loss(probe, batch, lambda, BlendMode::Soft).total;
        };
        CHECK(max_rel_error(grad, central_diff(f, m.flatten(), kStep)) <= 1e-4);
        if (lambda == 0.0) {
          const auto occ = [&](const Eigen::VectorXd& p) {
            probe.unflatten(p);
            return loss_occupancy(probe, batch);
          };
          CHECK(max_rel_error(grad, central_diff(occ, m.flatten(), kStep)) <= 1e-4);
        }
      }
    }
  }
}

TEST_CASE("minibatch sampling") {
  const CapsuleBody body = nasa::test::chain(3, 0.3);
  Rng rng(2);
  const auto poses = random_poses(body.rig, 5, rng);
  TrainConfig c = small_train_config();
  c.points_uniform = 10;
  c.points_surface = 7;
  c.vertices = 5;
  const Minibatch a = sample_minibatch(body, poses, c, 11);
  const Minibatch b = sample_minibatch(body, poses, c, 11);
  REQUIRE(a.size() == 3);
  Eigen::Index points = 0, vertices = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].points == b[i].points);
    CHECK(a[i].labels == b[i].labels);
    CHECK(a[i].labels.size() == a[i].points.cols());
    CHECK(a[i].owners.size() == static_cast<std::size_t>(a[i].vertices.cols()));
    const auto gt = gt_occupancy(body, a[i].posed, a[i].points);
    for (Eigen::Index j = 0; j < a[i].points.cols(); ++j) CHECK(a[i].labels(j) == gt[j]);
    points += a[i].points.cols();
    vertices += a[i].vertices.cols();
  }
  CHECK(points == 17);
  CHECK(vertices == 5);
  CHECK_THROWS_AS(sample_minibatch(body, {}, c, 1), Error);
}

TEST_CASE("training is reproducible and records history") {
  const CapsuleBody body = nasa::test::chain(2, 0.3);
  Rng rng(3);
  const auto poses = random_poses(body.rig, 6, rng);
  ModelConfig mc = ModelConfig::defaults(ModelKind::Deformable, 2, 2);
  mc.width = 8;
  const TrainConfig tc = small_train_config();
  int checkpoints = 0;
  TrainConfig with_ckpt = tc;
  with_ckpt.checkpoint_interval = 25;

  OccupancyModel a = OccupancyModel::initialized(mc, 5);
  OccupancyModel b = OccupancyModel::initialized(mc, 5);
  const TrainResult ra = train(a, body, poses, with_ckpt, [&](int, const OccupancyModel&) { ++checkpoints; });
  const TrainResult rb = train(b, body, poses, tc);
  CHECK(checkpoints == 2);
  REQUIRE(ra.history.size() == 5);
  CHECK(ra.history.back().step == 50);
  CHECK(a.flatten() == b.flatten());
  CHECK(loss_history_csv(ra) == loss_history_csv(rb));

  std::istringstream csv(loss_history_csv(ra));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "step,loss_total,loss_occ,loss_weights");
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 5);

  TrainConfig bad = tc;
  bad.lambda = -1.0;
  CHECK_THROWS_AS(train(a, body, poses, bad), Error);
  bad = tc;
  bad.batch_frames = 0;
  CHECK_THROWS_AS(train(a, body, poses, bad), Error);
}

TEST_CASE("lambda zero matches the occupancy-only trajectory") {
  const CapsuleBody body = nasa::test::chain(2, 0.3);
  Rng rng(4);
  const auto poses = random_poses(body.rig, 6, rng);
  ModelConfig mc = ModelConfig::defaults(ModelKind::Rigid, 2, 2);
  mc.width = 6;
  TrainConfig tc = small_train_config();
  tc.lambda = 0.0;
  tc.iterations = 20;
  OccupancyModel a = OccupancyModel::initialized(mc, 9);
  train(a, body, poses, tc);

  // Same steps done by hand with the occupancy loss alone.
  OccupancyModel b = OccupancyModel::initialized(mc, 9);
  Adam adam(b.parameter_count(), AdamConfig{tc.learning_rate});
  ParamVector p = b.flatten();
  for (int step = 0; step < tc.iterations; ++step) {
    Minibatch batch = sample_minibatch(body, poses, tc, derive_seed(tc.seed, 17, step));
    for (auto& item : batch) item.vertices.resize(2, 0), item.owners.clear();
    Eigen::VectorXd g;
    total_loss(b, batch, 0.0, BlendMode::Soft, &g);
    adam.step(p, g);
    b.unflatten(p);
  }
  CHECK((a.flatten() - b.flatten()).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("loss decreases on a small body") {
  const CapsuleBody body = nasa::test::chain(2, 0.3);
  Rng rng(5);
  const auto poses = random_poses(body.rig, 10, rng);
  OccupancyModel m = OccupancyModel::initialized(ModelConfig::defaults(ModelKind::Rigid, 2, 2), 3);
  TrainConfig tc = small_train_config();
  tc.points_uniform = 256;
  tc.points_surface = 256;
  tc.vertices = 128;
  tc.iterations = 600;
  tc.history_interval = 100;
  const TrainResult r = train(m, body, poses, tc);
  CHECK(r.history.back().total <= 0.5 * r.history.front().total);
}

TEST_CASE("single-part rigid model fits its capsule") {
  const CapsuleBody body = nasa::test::chain(1, 0.0);
  Rng rng(6);
  const auto poses = random_poses(body.rig, 10, rng, 3.0);
  OccupancyModel m = OccupancyModel::initialized(ModelConfig::defaults(ModelKind::Rigid, 2, 1), 4);
  TrainConfig tc;
  tc.batch_frames = 4;
  tc.points_uniform = 256;
  tc.points_surface = 256;
  tc.vertices = 64;
  tc.iterations = 2000;
  tc.learning_rate = 1e-3;
  train(m, body, poses, tc);
  const double score = miou(model_field(m), body.rig, eval_frames(body, poses, 8));
  MESSAGE("single-part train mIoU " << score);
  CHECK(score >= 0.95);

  // Hard-blend agreement with the oracle on probe points.
  const PosedBones posed = forward_kinematics(body.rig, poses[0]);
  const Aabb box = posed_bounds(body, posed).scaled(1.1);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  Points probe(2, 1000);
  for (int j = 0; j < 1000; ++j)
    for (int k = 0; k < 2; ++k) probe(k, j) = box.lo(k) + uni(rng) * (box.hi(k) - box.lo(k));
  const auto pred = threshold(m.evaluate(posed, probe, BlendMode::Hard));
  const auto gt = gt_occupancy(body, posed, probe);
  int agree = 0;
  for (int j = 0; j < 1000; ++j) agree += pred[j] == gt[j];
  CHECK(agree >= 990);
}

TEST_CASE("weight loss specializes the parts") {
  const CapsuleBody body = nasa::test::chain(2, 0.3);
  Rng rng(7);
  const auto poses = random_poses(body.rig, 12, rng, 1.2);
  const auto frames = eval_frames(body, poses, 9);
  TrainConfig tc;
  tc.batch_frames = 4;
  tc.points_uniform = 256;
  tc.points_surface = 256;
  tc.vertices = 128;
  tc.iterations = 1500;
  tc.learning_rate = 1e-3;

  Eigen::VectorXd response[2];
  const double lambdas[2] = {0.0, 0.5};
  for (int i = 0; i < 2; ++i) {
    OccupancyModel m = OccupancyModel::initialized(ModelConfig::defaults(ModelKind::Rigid, 2, 2), 5);
    tc.lambda = lambdas[i];
    train(m, body, poses, tc);
    response[i] = foreign_part_response(m, body, frames);
  }
  MESSAGE("foreign response lambda=0: " << response[0].transpose() << "  lambda=0.5: " << response[1].transpose());
  CHECK(response[1].maxCoeff() <= 0.2);
}
