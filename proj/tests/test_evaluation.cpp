#include "nasa/evaluation.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <sstream>

using namespace nasa;

namespace {

Points pts(std::initializer_list<std::pair<double, double>> list) {
  Points p(2, static_cast<Eigen::Index>(list.size()));
  Eigen::Index j = 0;
  for (const auto& [x, y] : list) {
    p(0, j) = x;
    p(1, j++) = y;
  }
  return p;
}

Points random_cloud(int dim, int n, Rng& rng, double scale) {
  std::uniform_real_distribution<double> uni(-scale, scale);
  Points p(dim, n);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = uni(rng);
  return p;
}

/// Single straight capsule, rotated off the grid axes.
struct TiltedCapsule {
  CapsuleBody body = nasa::test::chain(1, 0.0);
  PosedBones posed;

  TiltedCapsule() {
    Pose pose = Pose::rest(body.rig);
    pose.root.rotation = rotation_2d(0.37);
    posed = forward_kinematics(body.rig, pose);
  }

  /// Distance of a world point to the analytic capsule boundary.
  double boundary_distance(const Vec& x) const {
    const Capsule& c = body.capsules[0];
    return std::abs(segment_distance(c, posed.inverses[0].apply(x)) - c.radius);
  }
};

FieldFn constant_field(double c) {
  return [c](const PosedBones&, const Points& x) { return Eigen::RowVectorXd::Constant(x.cols(), c); };
}

}  // namespace

TEST_CASE("iou examples") {
  const std::vector<std::uint8_t> gt{1, 1, 0, 0};
  const std::vector<std::uint8_t> pred{1, 1, 1, 0};
  CHECK(iou(pred, gt) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(iou(gt, gt) == 1.0);
  CHECK(iou(std::vector<std::uint8_t>{0, 0, 1, 1}, gt) == 0.0);
  CHECK(iou(std::vector<std::uint8_t>{0, 0}, std::vector<std::uint8_t>{0, 0}) == 1.0);
  CHECK_THROWS_AS(iou(gt, std::vector<std::uint8_t>{1}), Error);
  Eigen::RowVectorXd v(3);
  v << 0.49, 0.5, 0.9;
  CHECK(threshold(v) == std::vector<std::uint8_t>{0, 1, 1});
}

TEST_CASE("iou does not increase as more labels are flipped") {
  Rng rng(1);
  std::vector<std::uint8_t> gt(5000);
  std::bernoulli_distribution coin(0.4);
  for (auto& g : gt) g = coin(rng);
  std::vector<std::size_t> order(gt.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  double last = 1.0;
  for (int k : {1, 5, 10, 25}) {
    auto pred = gt;
    for (std::size_t i = 0; i < gt.size() * k / 100; ++i) pred[order[i]] ^= 1;
    const double v = iou(pred, gt);
    CHECK(v <= last);
    last = v;
  }
  CHECK(last < 1.0);
}

TEST_CASE("oracle and complement on stored frames") {
  const CapsuleBody body = nasa::test::chain(3, 0.3);
  Rng rng(2);
  std::vector<FrameSamples> frames;
  for (int i = 0; i < 3; ++i)
    frames.push_back(build_frame_samples(body, nasa::test::random_pose(body.rig, rng), SampleCounts{300, 300, 10, 0.03}, i));
  CHECK(miou(oracle_field(body), body.rig, frames) == 1.0);
  const FieldFn oracle = oracle_field(body);
  const FieldFn complement = [&](const PosedBones& p, const Points& x) {
    return Eigen::RowVectorXd((1.0 - oracle(p, x).array()).matrix());
  };
  CHECK(miou(complement, body.rig, frames) == 0.0);
  CHECK_THROWS_AS(miou(oracle, body.rig, {}), Error);
}

TEST_CASE("chamfer examples") {
  const Points a = pts({{0, 0}, {2, 0}});
  CHECK(chamfer_l1(a, a) == 0.0);
  CHECK(chamfer_l1(pts({{0, 0}}), pts({{1, 0}})) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(chamfer_l1(a, pts({{1, 0}})) == doctest::Approx(1.0).epsilon(1e-15));
  Rng rng(3);
  const Points p = random_cloud(3, 300, rng, 1.0);
  const Points q = random_cloud(3, 500, rng, 1.0);
  CHECK(chamfer_l1(p, q) == doctest::Approx(chamfer_l1(q, p)).epsilon(1e-14));
  CHECK(chamfer_l1(p, p) <= 1e-12);
  try {
    chamfer_l1(Points(2, 0), a);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UndefinedMetric);
  }
}

TEST_CASE("fscore examples") {
  const double tau = 1e-4;
  const Points gt = pts({{0, 0}, {1, 0}});
  CHECK(fscore(gt, gt, tau) == doctest::Approx(100.0));
  CHECK(fscore(pts({{5, 5}, {6, 6}}), gt, tau) == 0.0);
  // Half of the prediction lies on gt, the other half far away; all gt covered.
  const Points pred = pts({{0, 0}, {1, 0}, {5, 5}, {6, 5}});
  CHECK(fscore(pred, gt, tau) == doctest::Approx(200.0 / 3.0).epsilon(1e-12));
  // Squared-distance threshold: 0.009 away is inside, 0.011 is outside.
  CHECK(fscore(pts({{0.009, 0}}), pts({{0, 0}}), tau) == doctest::Approx(100.0));
  CHECK(fscore(pts({{0.011, 0}}), pts({{0, 0}}), tau) == 0.0);
  CHECK_THROWS_AS(fscore(Points(2, 0), gt, tau), Error);
}

TEST_CASE("grid nearest neighbors agree with brute force") {
  Rng rng(4);
  for (int d : {2, 3}) {
    const Points ref = random_cloud(d, 6000, rng, 1.0);
    Points query = random_cloud(d, 500, rng, 1.3);
    query.col(0) = ref.col(17);
    const Eigen::VectorXd fast = nearest_distances(query, ref);
    for (Eigen::Index i = 0; i < query.cols(); ++i) {
      const double brute = (ref.colwise() - query.col(i)).colwise().norm().minCoeff();
      CHECK(fast(i) == doctest::Approx(brute).epsilon(1e-14));
    }
    CHECK(fast(0) == 0.0);
  }
  // Clustered reference with a far outlier.
  Points ref = Points::Zero(2, 3000);
  ref.leftCols(2999) = random_cloud(2, 2999, rng, 0.01);
  ref(0, 2999) = 10.0;
  const Points query = pts({{9.0, 0.0}, {5.0, 5.0}});
  const Eigen::VectorXd fast = nearest_distances(query, ref);
  for (Eigen::Index i = 0; i < 2; ++i)
    CHECK(fast(i) == doctest::Approx((ref.colwise() - query.col(i)).colwise().norm().minCoeff()).epsilon(1e-14));
}

TEST_CASE("oracle level set lies on the analytic surface") {
  const TiltedCapsule cap;
  const Aabb box = posed_bounds(cap.body, cap.posed).scaled(1.1);
  const int res = 128;
  const LevelSet ls = extract_surface_points(oracle_field(cap.body), cap.body, cap.posed, res);
  REQUIRE_FALSE(ls.empty);
  const double cell_diag = ((box.hi - box.lo) / res).norm();
  double worst = 0.0;
  for (Eigen::Index j = 0; j < ls.points.cols(); ++j)
    worst = std::max(worst, cap.boundary_distance(ls.points.col(j)));
  CHECK(worst <= 1.5 * cell_diag);
  CHECK_THROWS_AS(extract_surface_points(oracle_field(cap.body), cap.body, cap.posed, 7), Error);
}

TEST_CASE("level set refinement") {
  const TiltedCapsule cap;
  const FieldFn oracle = oracle_field(cap.body);
  const Points gt = surface_samples(cap.body, cap.posed, 40000, 5).points;
  Eigen::Index last_count = 0;
  std::vector<double> chamfers;
  for (int res : {32, 64, 128}) {
    const LevelSet ls = extract_surface_points(oracle, cap.body, cap.posed, res);
    CHECK(ls.points.cols() >= last_count);
    last_count = ls.points.cols();
    chamfers.push_back(chamfer_l1(ls.points, gt));
  }
  MESSAGE("chamfer at 32/64/128: " << chamfers[0] << " " << chamfers[1] << " " << chamfers[2]);
  for (int i = 1; i < 3; ++i) {
    const double ratio = chamfers[i] / chamfers[i - 1];
    CHECK(ratio >= 0.35);
    CHECK(ratio <= 0.65);
  }
}

TEST_CASE("constant fields have an empty level set") {
  const CapsuleBody body = nasa::test::chain(2, 0.3);
  const PosedBones posed = forward_kinematics(body.rig, Pose::rest(body.rig));
  for (double c : {0.0, 0.3, 0.7}) {
    const LevelSet ls = extract_surface_points(constant_field(c), body, posed, 16);
    CHECK(ls.empty);
    CHECK(ls.points.cols() == 0);
    const FrameMetrics m = surface_metrics(constant_field(c), body, posed, EvalConfig{16}, 1);
    CHECK(m.empty_surface);
    CHECK(std::isnan(m.chamfer_l1));
    CHECK(m.fscore == 0.0);
  }
}

TEST_CASE("frame evaluation of the oracle") {
  const CapsuleBody body = nasa::test::chain(3, 0.3);
  Rng rng(6);
  std::vector<FrameSamples> frames;
  for (int i = 0; i < 4; ++i) {
    frames.push_back(build_frame_samples(body, nasa::test::random_pose(body.rig, rng), SampleCounts{200, 200, 10, 0.03}, i));
    frames.back().sequence_id = 3;
    frames.back().frame_index = i;
  }
  EvalConfig cfg;
  cfg.grid_res = 64;
  const MetricsReport a = evaluate_frames(oracle_field(body), body, frames, cfg);
  const MetricsReport b = evaluate_frames(oracle_field(body), body, frames, cfg);
  CHECK(a.miou == 1.0);
  CHECK(a.chamfer_l1 > 0.0);
  CHECK(a.chamfer_l1 < 0.01);
  CHECK(a.fscore > 95.0);
  MESSAGE("oracle chamfer " << a.chamfer_l1 << " fscore " << a.fscore);
  CHECK(metrics_csv(a) == metrics_csv(b));

  std::istringstream csv(metrics_csv(a));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "sequence,frame,iou,chamfer_l1,fscore");
  int rows = 0;
  std::string last;
  while (std::getline(csv, line)) {
    ++rows;
    last = line;
  }
  CHECK(rows == 5);
  CHECK(last.rfind("all,mean,", 0) == 0);

  const std::string svg = level_set_svg(body, forward_kinematics(body.rig, frames[0].pose),
                                        extract_surface_points(oracle_field(body), body,
                                                               forward_kinematics(body.rig, frames[0].pose), 32),
                                        1);
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
}

TEST_CASE("foreign part response of a constant model") {
  const CapsuleBody body = nasa::test::chain(2, 0.3);
  Rng rng(7);
  std::vector<FrameSamples> frames{
      build_frame_samples(body, nasa::test::random_pose(body.rig, rng), SampleCounts{10, 10, 200, 0.03}, 1)};
  ModelConfig c = ModelConfig::defaults(ModelKind::Rigid, 2, 2);
  c.width = 3;
  const Eigen::VectorXd r = foreign_part_response(OccupancyModel::zeros(c), body, frames);
  REQUIRE(r.size() == 2);
  CHECK(r(0) == doctest::Approx(0.5));
  CHECK(r(1) == doctest::Approx(0.5));
}
