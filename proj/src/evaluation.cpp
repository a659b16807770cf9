#include "nasa/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace nasa {

FieldFn model_field(const OccupancyModel& model, BlendMode mode) {
  return [&model, mode](const PosedBones& posed, const Points& x) { return model.evaluate(posed, x, mode); };
}

FieldFn oracle_field(const CapsuleBody& body) {
  return [&body](const PosedBones& posed, const Points& x) {
    const auto labels = gt_occupancy(body, posed, x);
    Eigen::RowVectorXd out(x.cols());
    for (Eigen::Index i = 0; i < x.cols(); ++i) out(i) = labels[i];
    return out;
  };
}

double iou(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  if (pred.size() != gt.size()) throw Error(ErrorCode::DimensionMismatch, "iou sizes");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += pred[i] && gt[i];
    uni += pred[i] || gt[i];
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<std::uint8_t> threshold(const Eigen::RowVectorXd& values) {
  std::vector<std::uint8_t> out(values.size());
  for (Eigen::Index i = 0; i < values.size(); ++i) out[i] = values(i) >= 0.5 ? 1 : 0;
  return out;
}

std::vector<double> frame_ious(const FieldFn& field, const Rig& rig, const std::vector<FrameSamples>& frames) {
  std::vector<double> out(frames.size());
  const int n = static_cast<int>(frames.size());
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) {
    const PosedBones posed = forward_kinematics(rig, frames[i].pose);
    out[i] = iou(threshold(field(posed, frames[i].eval_points())), frames[i].labels);
  }
  return out;
}

double miou(const FieldFn& field, const Rig& rig, const std::vector<FrameSamples>& frames) {
  if (frames.empty()) throw Error(ErrorCode::UndefinedMetric, "no frames");
  const auto ious = frame_ious(field, rig, frames);
  double sum = 0.0;
  for (double v : ious) sum += v;
  return sum / static_cast<double>(ious.size());
}

LevelSet extract_surface_points(const FieldFn& field, const PosedBones& posed, const Aabb& box, int grid_res) {
  if (grid_res < 8) throw Error(ErrorCode::InvalidInput, "grid_res must be >= 8");
  const int d = static_cast<int>(box.lo.size());
  const Eigen::Index n = grid_res + 1;
  Eigen::Index total = 1;
  std::vector<Eigen::Index> stride(d);
  for (int k = 0; k < d; ++k) {
    stride[k] = total;
    total *= n;
  }
  const Vec step = (box.hi - box.lo) / grid_res;
  Points nodes(d, total);
  for (Eigen::Index i = 0; i < total; ++i)
    for (int k = 0; k < d; ++k) nodes(k, i) = box.lo(k) + static_cast<double>((i / stride[k]) % n) * step(k);
  const Eigen::RowVectorXd v = field(posed, nodes);

  std::vector<double> coords;
  for (Eigen::Index i = 0; i < total; ++i) {
    for (int k = 0; k < d; ++k) {
      if ((i / stride[k]) % n == grid_res) continue;
      const Eigen::Index j = i + stride[k];
      const double a = v(i), b = v(j);
      if ((a >= 0.5) == (b >= 0.5)) continue;
      const double t = (0.5 - a) / (b - a);
      for (int c = 0; c < d; ++c) coords.push_back(nodes(c, i) + t * (nodes(c, j) - nodes(c, i)));
    }
  }
  LevelSet out;
  out.points = Eigen::Map<const Points>(coords.data(), d, static_cast<Eigen::Index>(coords.size() / d));
  out.empty = out.points.cols() == 0;
  return out;
}

LevelSet extract_surface_points(const FieldFn& field, const CapsuleBody& body, const PosedBones& posed,
                                int grid_res) {
  return extract_surface_points(field, posed, posed_bounds(body, posed).scaled(1.1), grid_res);
}

namespace {

constexpr Eigen::Index kBruteForceBelow = 2000;

class GridIndex {
 public:
  GridIndex(const Points& ref, const Vec& lo, const Vec& hi) : ref_(ref), lo_(lo) {
    const int d = static_cast<int>(ref.rows());
    const double extent = std::max((hi - lo).maxCoeff(), 1e-12);
    const int per_axis = std::max(1, static_cast<int>(std::ceil(std::pow(static_cast<double>(ref.cols()), 1.0 / d))));
    cell_ = extent / per_axis;
    dims_.resize(d);
    Eigen::Index total = 1;
    for (int k = 0; k < d; ++k) {
      dims_[k] = std::max(1, static_cast<int>(std::ceil((hi(k) - lo(k)) / cell_)) + 1);
      total *= dims_[k];
    }
    start_.assign(total + 1, 0);
    std::vector<Eigen::Index> cell_of(ref.cols());
    for (Eigen::Index i = 0; i < ref.cols(); ++i) {
      cell_of[i] = flat(cell_coords(ref.col(i)));
      ++start_[cell_of[i] + 1];
    }
    for (Eigen::Index c = 0; c < total; ++c) start_[c + 1] += start_[c];
    items_.resize(ref.cols());
    std::vector<Eigen::Index> fill(start_.begin(), start_.end() - 1);
    for (Eigen::Index i = 0; i < ref.cols(); ++i) items_[fill[cell_of[i]]++] = i;
  }

  double nearest(const Vec& q) const {
    const int d = static_cast<int>(dims_.size());
    const std::vector<int> c = cell_coords(q);
    int max_ring = 0;
    for (int k = 0; k < d; ++k) max_ring = std::max({max_ring, c[k], dims_[k] - 1 - c[k]});
    double best = std::numeric_limits<double>::infinity();
    std::vector<int> off(d);
    for (int r = 0; r <= max_ring; ++r) {
      // visit cells at Chebyshev distance exactly r
      std::fill(off.begin(), off.end(), -r);
      while (true) {
        int cheb = 0;
        bool inside = true;
        for (int k = 0; k < d; ++k) {
          cheb = std::max(cheb, std::abs(off[k]));
          const int ck = c[k] + off[k];
          inside = inside && ck >= 0 && ck < dims_[k];
        }
        if (cheb == r && inside) {
          std::vector<int> cc(d);
          for (int k = 0; k < d; ++k) cc[k] = c[k] + off[k];
          const Eigen::Index f = flat(cc);
          for (Eigen::Index s = start_[f]; s < start_[f + 1]; ++s)
            best = std::min(best, (ref_.col(items_[s]) - q).squaredNorm());
        }
        int k = 0;
        while (k < d && ++off[k] > r) off[k++] = -r;
        if (k == d) break;
      }
      const double reach = r * cell_;
      if (best <= reach * reach) break;
    }
    return std::sqrt(best);
  }

 private:
  std::vector<int> cell_coords(const Vec& x) const {
    std::vector<int> c(dims_.size());
    for (std::size_t k = 0; k < dims_.size(); ++k)
      c[k] = std::clamp(static_cast<int>(std::floor((x(k) - lo_(k)) / cell_)), 0, dims_[k] - 1);
    return c;
  }
  Eigen::Index flat(const std::vector<int>& c) const {
    Eigen::Index f = 0;
    for (std::size_t k = dims_.size(); k-- > 0;) f = f * dims_[k] + c[k];
    return f;
  }

  const Points& ref_;
  Vec lo_;
  double cell_ = 1.0;
  std::vector<int> dims_;
  std::vector<Eigen::Index> start_;
  std::vector<Eigen::Index> items_;
};

}  // namespace

Eigen::VectorXd nearest_distances(const Points& query, const Points& reference) {
  if (reference.cols() == 0) throw Error(ErrorCode::UndefinedMetric, "empty reference set");
  if (query.rows() != reference.rows()) throw Error(ErrorCode::DimensionMismatch, "point dimensions");
  Eigen::VectorXd out(query.cols());
  if (reference.cols() < kBruteForceBelow) {
    for (Eigen::Index i = 0; i < query.cols(); ++i)
      out(i) = std::sqrt((reference.colwise() - query.col(i)).colwise().squaredNorm().minCoeff());
    return out;
  }
  Vec lo = reference.rowwise().minCoeff().cwiseMin(query.rowwise().minCoeff());
  Vec hi = reference.rowwise().maxCoeff().cwiseMax(query.rowwise().maxCoeff());
  const GridIndex index(reference, lo, hi);
  for (Eigen::Index i = 0; i < query.cols(); ++i) out(i) = index.nearest(query.col(i));
  return out;
}

double chamfer_l1(const Points& a, const Points& b) {
  if (a.cols() == 0 || b.cols() == 0) throw Error(ErrorCode::UndefinedMetric, "chamfer of an empty set");
  return 0.5 * nearest_distances(a, b).mean() + 0.5 * nearest_distances(b, a).mean();
}

double fscore(const Points& pred, const Points& gt, double tau) {
  if (pred.cols() == 0 || gt.cols() == 0) throw Error(ErrorCode::UndefinedMetric, "f-score of an empty set");
  const Eigen::VectorXd dp = nearest_distances(pred, gt);
  const Eigen::VectorXd dg = nearest_distances(gt, pred);
  const double precision = 100.0 * (dp.array().square() <= tau).cast<double>().mean();
  const double recall = 100.0 * (dg.array().square() <= tau).cast<double>().mean();
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

FrameMetrics surface_metrics(const FieldFn& field, const CapsuleBody& body, const PosedBones& posed,
                             const EvalConfig& cfg, std::uint64_t seed) {
  FrameMetrics m;
  const double diag = posed_bounds(body, posed).diagonal();
  const LevelSet pred = extract_surface_points(field, body, posed, cfg.grid_res);
  if (pred.empty) {
    m.empty_surface = true;
    m.chamfer_l1 = std::numeric_limits<double>::quiet_NaN();
    m.fscore = 0.0;
    return m;
  }
  const Points gt = surface_samples(body, posed, cfg.gt_surface_points, seed).points / diag;
  const Points p = pred.points / diag;
  m.chamfer_l1 = chamfer_l1(p, gt);
  m.fscore = fscore(p, gt, cfg.fscore_tau);
  return m;
}

MetricsReport evaluate_frames(const FieldFn& field, const CapsuleBody& body, const std::vector<FrameSamples>& frames,
                              const EvalConfig& cfg) {
  if (frames.empty()) throw Error(ErrorCode::UndefinedMetric, "no frames");
  MetricsReport report;
  report.frames.resize(frames.size());
  const int n = static_cast<int>(frames.size());
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) {
    const FrameSamples& f = frames[i];
    const PosedBones posed = forward_kinematics(body.rig, f.pose);
    FrameMetrics m = surface_metrics(field, body, posed, cfg, derive_seed(cfg.seed, f.sequence_id, f.frame_index));
    m.sequence = f.sequence_id;
    m.frame = f.frame_index;
    m.iou = iou(threshold(field(posed, f.eval_points())), f.labels);
    report.frames[i] = m;
  }
  for (const auto& m : report.frames) {
    report.miou += m.iou;
    report.chamfer_l1 += m.chamfer_l1;
    report.fscore += m.fscore;
  }
  report.miou /= n;
  report.chamfer_l1 /= n;
  report.fscore /= n;
  return report;
}

std::string metrics_csv(const MetricsReport& report) {
  std::ostringstream os;
  os << "sequence,frame,iou,chamfer_l1,fscore\n" << std::setprecision(9);
  for (const auto& m : report.frames)
    os << m.sequence << ',' << m.frame << ',' << m.iou << ',' << m.chamfer_l1 << ',' << m.fscore << '\n';
  os << "all,mean," << report.miou << ',' << report.chamfer_l1 << ',' << report.fscore << '\n';
  return os.str();
}

Eigen::VectorXd foreign_part_response(const OccupancyModel& model, const CapsuleBody& body,
                                      const std::vector<FrameSamples>& frames) {
  const int parts = model.part_count();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(parts);
  Eigen::VectorXd count = Eigen::VectorXd::Zero(parts);
  for (const auto& f : frames) {
    if (f.vertices.cols() == 0) continue;
    const PosedBones posed = forward_kinematics(body.rig, f.pose);
    const Eigen::MatrixXd values = model.evaluate_parts(posed.inverses, f.vertices);
    for (Eigen::Index j = 0; j < values.cols(); ++j)
      for (int b = 0; b < parts; ++b) {
        if (f.owners[j] == b) continue;
        sum(b) += values(b, j);
        count(b) += 1.0;
      }
  }
  if ((count.array() == 0.0).any()) throw Error(ErrorCode::UndefinedMetric, "a part has no foreign vertices");
  return sum.cwiseQuotient(count);
}

std::string level_set_svg(const CapsuleBody& body, const PosedBones& posed, const LevelSet& predicted,
                          std::uint64_t seed) {
  const Aabb box = posed_bounds(body, posed).scaled(1.1);
  const double size = 480.0;
  const double scale = size / std::max(box.hi(0) - box.lo(0), box.hi(1) - box.lo(1));
  auto px = [&](const Vec& p) {
    return std::pair{(p(0) - box.lo(0)) * scale, size - (p(1) - box.lo(1)) * scale};
  };
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  const Points gt = surface_samples(body, posed, 1500, seed).points;
  for (Eigen::Index i = 0; i < gt.cols(); ++i) {
    const auto [x, y] = px(gt.col(i));
    os << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"1.2\" fill=\"#999\"/>\n";
  }
  for (Eigen::Index i = 0; i < predicted.points.cols(); ++i) {
    const auto [x, y] = px(predicted.points.col(i));
    os << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"1\" fill=\"#d22\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace nasa
