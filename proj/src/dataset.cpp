#include "nasa/dataset.hpp"

#include "nasa/binary_io.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace nasa {

namespace {

Points quantized(const Points& p) {
  return p.unaryExpr([](double v) { return to_f32(v); });
}

bool same_points(const Points& a, const Points& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
}

}  // namespace

Points FrameSamples::eval_points() const {
  Points all(uniform_points.rows(), uniform_points.cols() + surface_points.cols());
  all << uniform_points, surface_points;
  return all;
}

bool FrameSamples::operator==(const FrameSamples& o) const {
  return sequence_id == o.sequence_id && frame_index == o.frame_index && pose == o.pose &&
         same_points(uniform_points, o.uniform_points) && same_points(surface_points, o.surface_points) &&
         labels == o.labels && same_points(vertices, o.vertices) && owners == o.owners;
}

void sample_vertices(const CapsuleBody& body, const PosedBones& posed, int n, std::uint64_t seed, Points& vertices,
                     std::vector<int>& owners) {
  owners.clear();
  if (n <= 0) {
    vertices.resize(body.dim(), 0);
    return;
  }
  const SurfaceSamples s = surface_samples(body, posed, n, seed);
  vertices = quantized(s.points);
  owners.resize(n);
  for (int i = 0; i < n; ++i) {
    const int part = s.part[i];
    const Vec rest = posed.inverses[part].apply(Vec(vertices.col(i))) + body.rig.rest_translation(part);
    owners[i] = dominant_part(body, rest);
  }
}

FrameSamples build_frame_samples(const CapsuleBody& body, const Pose& pose, const SampleCounts& counts,
                                 std::uint64_t seed) {
  if (counts.uniform < 0 || counts.surface < 0 || counts.vertices < 0 || counts.uniform + counts.surface < 1)
    throw Error(ErrorCode::InvalidInput, "sample counts");
  if (!(counts.sigma_frac > 0.0)) throw Error(ErrorCode::InvalidInput, "sigma_frac must be positive");
  const int d = body.dim();
  const PosedBones posed = forward_kinematics(body.rig, pose);
  const Aabb bounds = posed_bounds(body, posed);
  const Aabb box = bounds.scaled(1.1);
  const double sigma = counts.sigma_frac * bounds.diagonal();

  FrameSamples fs;
  fs.pose = pose;

  Rng rng(derive_seed(seed, 0));
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  fs.uniform_points.resize(d, counts.uniform);
  for (int i = 0; i < counts.uniform; ++i)
    for (int k = 0; k < d; ++k) {
      // f32 rounding may step just outside the box; nudge back inside.
      float v = static_cast<float>(box.lo(k) + uni(rng) * (box.hi(k) - box.lo(k)));
      if (v < box.lo(k)) v = std::nextafter(v, std::numeric_limits<float>::infinity());
      if (v > box.hi(k)) v = std::nextafter(v, -std::numeric_limits<float>::infinity());
      fs.uniform_points(k, i) = v;
    }

  if (counts.surface > 0) {
    const SurfaceSamples s = surface_samples(body, posed, counts.surface, derive_seed(seed, 1));
    Rng noise(derive_seed(seed, 2));
    std::normal_distribution<double> gauss(0.0, sigma);
    fs.surface_points = s.points;
    for (Eigen::Index i = 0; i < fs.surface_points.size(); ++i) fs.surface_points.data()[i] += gauss(noise);
    fs.surface_points = quantized(fs.surface_points);
  } else {
    fs.surface_points.resize(d, 0);
  }

  const auto lu = gt_occupancy(body, posed, fs.uniform_points);
  const auto ls = gt_occupancy(body, posed, fs.surface_points);
  fs.labels = lu;
  fs.labels.insert(fs.labels.end(), ls.begin(), ls.end());

  sample_vertices(body, posed, counts.vertices, derive_seed(seed, 3), fs.vertices, fs.owners);
  return fs;
}

CapsuleBody quantize_body(const CapsuleBody& body) {
  auto q = [](const Vec& v) { return Vec(v.unaryExpr([](double x) { return to_f32(x); })); };
  std::vector<Vec> offsets;
  for (const auto& o : body.rig.rest_offsets()) offsets.push_back(q(o));
  CapsuleBody out;
  out.rig = Rig(body.dim(), body.rig.parents(), offsets);
  for (const auto& c : body.capsules) out.capsules.push_back({q(c.p), q(c.q), to_f32(c.radius), to_f32(c.bulge)});
  return out;
}

Corpus build_corpus(const CapsuleBody& source_body, const CorpusSpec& spec) {
  source_body.validate();
  const CapsuleBody body = quantize_body(source_body);
  const int total = spec.train_sequences + spec.test_sequences;
  if (spec.train_sequences < 1 || spec.test_sequences < 0) throw Error(ErrorCode::InvalidInput, "sequence counts");

  std::vector<int> ids(total);
  std::iota(ids.begin(), ids.end(), 0);
  Rng split(spec.split_seed);
  std::shuffle(ids.begin(), ids.end(), split);

  Corpus corpus;
  corpus.body = body;
  corpus.test_sequences.assign(ids.begin(), ids.begin() + spec.test_sequences);
  corpus.train_sequences.assign(ids.begin() + spec.test_sequences, ids.end());
  std::sort(corpus.test_sequences.begin(), corpus.test_sequences.end());
  std::sort(corpus.train_sequences.begin(), corpus.train_sequences.end());

  struct Job {
    int seq;
    int frame;
    Pose pose;
    bool test;
  };
  std::vector<Job> jobs;
  for (int seq = 0; seq < total; ++seq) {
    const AnimationSpec anim = make_animation_spec(body.rig, spec.animation, derive_seed(spec.animation_seed, seq));
    const auto poses = generate_animation(body, anim);
    const bool test = std::binary_search(corpus.test_sequences.begin(), corpus.test_sequences.end(), seq);
    for (int f = 0; f < static_cast<int>(poses.size()); ++f) jobs.push_back({seq, f, poses[f], test});
  }

  std::vector<FrameSamples> frames(jobs.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    const Job& job = jobs[j];
    const SampleCounts& counts = job.test ? spec.test_counts : spec.train_counts;
    frames[j] = build_frame_samples(body, job.pose, counts, derive_seed(spec.sample_seed, job.seq, job.frame));
    frames[j].sequence_id = job.seq;
    frames[j].frame_index = job.frame;
  }
  for (std::size_t j = 0; j < jobs.size(); ++j) (jobs[j].test ? corpus.test : corpus.train).push_back(std::move(frames[j]));
  return corpus;
}

// ---------------------------------------------------------------------------
// File format: magic(8) version(u16) d(u8) B(u16) | payload of length-prefixed f32 arrays | crc32(payload)

namespace {

std::vector<double> to_doubles(const std::vector<int>& v) { return {v.begin(), v.end()}; }

std::vector<double> flat(const Points& p) { return {p.data(), p.data() + p.size()}; }

std::vector<double> flat_vecs(const std::vector<Vec>& vs) {
  std::vector<double> out;
  for (const auto& v : vs) out.insert(out.end(), v.data(), v.data() + v.size());
  return out;
}

void write_frame(ByteWriter& w, const FrameSamples& f) {
  w.f32_array(std::vector<double>{static_cast<double>(f.sequence_id), static_cast<double>(f.frame_index)});
  w.f32_array(flat_vecs(f.pose.joints));
  const Mat& r = f.pose.root.rotation;
  w.f32_array(std::vector<double>(r.data(), r.data() + r.size()));
  w.f32_array(std::vector<double>(f.pose.root.translation.data(), f.pose.root.translation.data() + f.pose.root.translation.size()));
  w.f32_array(flat(f.uniform_points));
  w.f32_array(flat(f.surface_points));
  w.f32_array(std::vector<double>(f.labels.begin(), f.labels.end()));
  w.f32_array(flat(f.vertices));
  w.f32_array(to_doubles(f.owners));
}

std::vector<double> expect_array(ByteReader& r, std::size_t n, const char* what) {
  auto a = r.f32_array();
  if (a.size() != n) throw Error(ErrorCode::InvalidInput, std::string("malformed corpus array: ") + what);
  return a;
}

std::vector<double> multiple_array(ByteReader& r, std::size_t k, const char* what) {
  auto a = r.f32_array();
  if (k == 0 || a.size() % k != 0) throw Error(ErrorCode::InvalidInput, std::string("malformed corpus array: ") + what);
  return a;
}

std::vector<Vec> to_vecs(const std::vector<double>& a, int d) {
  std::vector<Vec> out;
  for (std::size_t i = 0; i < a.size(); i += d) out.push_back(Eigen::Map<const Eigen::VectorXd>(a.data() + i, d));
  return out;
}

Points to_points(const std::vector<double>& a, int d) {
  return Eigen::Map<const Eigen::MatrixXd>(a.data(), d, static_cast<Eigen::Index>(a.size() / d));
}

FrameSamples read_frame(ByteReader& r, int d, int nb) {
  const int jp = d == 2 ? 1 : 3;
  FrameSamples f;
  const auto ids = expect_array(r, 2, "frame ids");
  f.sequence_id = static_cast<int>(ids[0]);
  f.frame_index = static_cast<int>(ids[1]);
  f.pose.joints = to_vecs(expect_array(r, static_cast<std::size_t>(nb * jp), "joints"), jp);
  const auto rot = expect_array(r, static_cast<std::size_t>(d * d), "root rotation");
  f.pose.root.rotation = Eigen::Map<const Eigen::MatrixXd>(rot.data(), d, d);
  const auto tr = expect_array(r, static_cast<std::size_t>(d), "root translation");
  f.pose.root.translation = Eigen::Map<const Eigen::VectorXd>(tr.data(), d);
  f.uniform_points = to_points(multiple_array(r, d, "uniform points"), d);
  f.surface_points = to_points(multiple_array(r, d, "surface points"), d);
  const auto labels = expect_array(r, static_cast<std::size_t>(f.uniform_points.cols() + f.surface_points.cols()), "labels");
  f.labels.assign(labels.begin(), labels.end());
  f.vertices = to_points(multiple_array(r, d, "vertices"), d);
  const auto owners = expect_array(r, static_cast<std::size_t>(f.vertices.cols()), "owners");
  f.owners.assign(owners.begin(), owners.end());
  return f;
}

}  // namespace

std::vector<std::uint8_t> encode_corpus(const Corpus& c) {
  const int d = c.body.dim();
  const int nb = c.body.bone_count();
  ByteWriter w;
  w.bytes(std::string_view(kCorpusMagic, 8));
  w.u16(kCorpusVersion);
  w.u8(static_cast<std::uint8_t>(d));
  w.u16(static_cast<std::uint16_t>(nb));
  const std::size_t payload_start = w.size();

  w.f32_array(std::vector<double>{static_cast<double>(c.train.size()), static_cast<double>(c.test.size()),
                                  static_cast<double>(c.train_sequences.size()),
                                  static_cast<double>(c.test_sequences.size())});
  w.f32_array(to_doubles(c.body.rig.parents()));
  w.f32_array(flat_vecs(c.body.rig.rest_offsets()));
  std::vector<Vec> ps, qs;
  std::vector<double> radii, bulge;
  for (const auto& cap : c.body.capsules) {
    ps.push_back(cap.p);
    qs.push_back(cap.q);
    radii.push_back(cap.radius);
    bulge.push_back(cap.bulge);
  }
  w.f32_array(flat_vecs(ps));
  w.f32_array(flat_vecs(qs));
  w.f32_array(radii);
  w.f32_array(bulge);
  w.f32_array(to_doubles(c.train_sequences));
  w.f32_array(to_doubles(c.test_sequences));
  for (const auto& f : c.train) write_frame(w, f);
  for (const auto& f : c.test) write_frame(w, f);

  const auto& buf = w.data();
  const std::uint32_t crc = crc32(std::span(buf).subspan(payload_start));
  w.u32(crc);
  return w.data();
}

namespace {

Corpus parse_corpus_payload(ByteReader& r, int d, int nb) {
  const auto meta = expect_array(r, 4, "meta");
  const auto parents = expect_array(r, nb, "parents");
  const auto offsets = expect_array(r, static_cast<std::size_t>(nb * d), "offsets");
  const auto ps = expect_array(r, static_cast<std::size_t>(nb * d), "capsule p");
  const auto qs = expect_array(r, static_cast<std::size_t>(nb * d), "capsule q");
  const auto radii = expect_array(r, nb, "radii");
  const auto bulge = expect_array(r, nb, "bulge");
  const auto train_seq = expect_array(r, static_cast<std::size_t>(meta[2]), "train sequences");
  const auto test_seq = expect_array(r, static_cast<std::size_t>(meta[3]), "test sequences");

  Corpus c;
  std::vector<int> parent(parents.begin(), parents.end());
  c.body.rig = Rig(d, parent, to_vecs(offsets, d));
  const auto pv = to_vecs(ps, d), qv = to_vecs(qs, d);
  for (int b = 0; b < nb; ++b) c.body.capsules.push_back({pv[b], qv[b], radii[b], bulge[b]});
  c.train_sequences.assign(train_seq.begin(), train_seq.end());
  c.test_sequences.assign(test_seq.begin(), test_seq.end());
  for (std::size_t i = 0; i < static_cast<std::size_t>(meta[0]); ++i) c.train.push_back(read_frame(r, d, nb));
  for (std::size_t i = 0; i < static_cast<std::size_t>(meta[1]); ++i) c.test.push_back(read_frame(r, d, nb));
  return c;
}

}  // namespace

Corpus decode_corpus(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  check_magic(bytes, kCorpusMagic, "not a corpus file");
  r.bytes(8);
  const std::uint16_t version = r.u16();
  if (version != kCorpusVersion)
    throw Error(ErrorCode::VersionMismatch, "corpus version " + std::to_string(version));
  const int d = r.u8();
  const int nb = r.u16();
  const std::size_t payload_start = r.position();
  if (bytes.size() < payload_start + 4) throw Error(ErrorCode::Truncated, "corpus has no payload");

  ByteReader tail(bytes.subspan(bytes.size() - 4));
  const std::uint32_t stored = tail.u32();
  const bool crc_ok = stored == crc32(bytes.subspan(payload_start, bytes.size() - 4 - payload_start));

  Corpus c;
  try {
    check_dim(d);
    c = parse_corpus_payload(r, d, nb);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Truncated || crc_ok) throw;
    throw Error(ErrorCode::ChecksumMismatch, "corpus payload checksum mismatch");
  }
  if (r.remaining() < 4) throw Error(ErrorCode::Truncated, "missing checksum");
  if (!crc_ok) throw Error(ErrorCode::ChecksumMismatch, "corpus payload checksum mismatch");
  if (r.remaining() != 4) throw Error(ErrorCode::InvalidInput, "trailing bytes after payload");
  return c;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& path) { write_file(path, encode_corpus(corpus)); }

Corpus read_corpus(const std::filesystem::path& path) { return decode_corpus(read_file(path)); }

}  // namespace nasa
