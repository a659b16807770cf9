#include "nasa/config.hpp"

#include "nasa/binary_io.hpp"

#include <charconv>
#include <functional>
#include <set>
#include <sstream>

namespace nasa {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw Error(ErrorCode::Config, "invalid value for " + key + ": '" + value + "'");
}

long long to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v);
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v);
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v);
}

int to_count(const std::string& key, const std::string& v) {
  const long long n = to_int(key, v);
  if (n < 0 || n > 100000000) bad_value(key, v);
  return static_cast<int>(n);
}

std::uint64_t to_seed(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v);
  return out;
}

const std::set<std::string> kRequiredBodyKeys = {"body.dim", "body.bone_count", "body.topology", "body.offsets",
                                                 "body.radii", "body.bulge"};

}  // namespace

ConfigValues parse_config_text(const std::string& text) {
  ConfigValues out;
  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw Error(ErrorCode::Config, "line " + std::to_string(line_no) + ": bad section");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos || section.empty())
      throw Error(ErrorCode::Config, "line " + std::to_string(line_no) + ": expected key = value in a section");
    const std::string key = section + "." + trim(line.substr(0, eq));
    if (out.count(key)) throw Error(ErrorCode::Config, "duplicate key " + key);
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

ConfigValues read_config_file(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return parse_config_text(std::string(bytes.begin(), bytes.end()));
}

CapsuleBody BodyConfig::build() const {
  check_dim(dim);
  if (bone_count < 1) throw Error(ErrorCode::InvalidInput, "body.bone_count must be >= 1");
  const auto per_bone = [&](const auto& list, const char* name) {
    if (list.size() != 1 && static_cast<int>(list.size()) != bone_count)
      throw Error(ErrorCode::InvalidInput, std::string("body.") + name + " needs 1 or bone_count entries");
  };
  per_bone(radii, "radii");
  per_bone(bulge, "bulge");
  std::vector<int> parent = parents;
  if (parent.empty())
    for (int b = 0; b < bone_count; ++b) parent.push_back(b - 1);
  if (static_cast<int>(parent.size()) != bone_count)
    throw Error(ErrorCode::InvalidInput, "body.topology needs bone_count parents");
  std::vector<Vec> off = offsets;
  if (off.empty()) {
    off.assign(bone_count, Vec::Zero(dim));
    for (int b = 1; b < bone_count; ++b) off[b](0) = offset_length;
  }
  if (static_cast<int>(off.size()) != bone_count) throw Error(ErrorCode::InvalidInput, "body.offsets count");
  for (const auto& o : off)
    if (o.size() != dim) throw Error(ErrorCode::InvalidInput, "body.offsets entries need dim values");

  CapsuleBody body;
  body.rig = Rig(dim, parent, off);
  for (int b = 0; b < bone_count; ++b) {
    Capsule c;
    c.p = Vec::Zero(dim);
    if (!segments.empty()) {
      if (static_cast<int>(segments.size()) != bone_count || segments[b].size() != dim)
        throw Error(ErrorCode::InvalidInput, "body.segments needs bone_count entries of dim values");
      c.q = segments[b];
    } else {
      int child = -1;
      for (int k = b + 1; k < bone_count && child < 0; ++k)
        if (parent[k] == b) child = k;
      if (child >= 0) {
        c.q = off[child];
      } else if (offsets.empty() || off[b].norm() == 0.0) {
        c.q = Vec::Zero(dim);
        c.q(0) = offset_length;
      } else {
        c.q = off[b];
      }
    }
    c.radius = radii.size() == 1 ? radii[0] : radii[b];
    c.bulge = bulge.size() == 1 ? bulge[0] : bulge[b];
    body.capsules.push_back(c);
  }
  body.validate();
  return body;
}

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  return out;
}

std::vector<double> to_doubles(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& item : split(v, ',')) out.push_back(to_double(key, item));
  if (out.empty()) bad_value(key, v);
  return out;
}

/// "x,y; x,y; ..." -> one vector per entry.
std::vector<Vec> to_vectors(const std::string& key, const std::string& v) {
  std::vector<Vec> out;
  for (const auto& item : split(v, ';')) {
    const auto xs = to_doubles(key, item);
    out.push_back(Eigen::Map<const Eigen::VectorXd>(xs.data(), static_cast<Eigen::Index>(xs.size())));
  }
  return out;
}

}  // namespace

void RunConfig::apply(const ConfigValues& values) {
  using Setter = std::function<void(const std::string&, const std::string&)>;
  BodyConfig b = body.value_or(BodyConfig{});
  AnimationParams& anim = data.animation;
  const std::map<std::string, Setter> setters = {
      {"body.dim", [&](auto& k, auto& v) { b.dim = static_cast<int>(to_int(k, v)); }},
      {"body.bone_count", [&](auto& k, auto& v) { b.bone_count = to_count(k, v); }},
      {"body.topology",
       [&](auto& k, auto& v) {
         b.parents.clear();
         if (v == "chain") return;
         for (const auto& item : split(v, ',')) b.parents.push_back(static_cast<int>(to_int(k, item)));
       }},
      {"body.offsets",
       [&](auto& k, auto& v) {
         b.offsets.clear();
         if (v.find(',') == std::string::npos && v.find(';') == std::string::npos) b.offset_length = to_double(k, v);
         else b.offsets = to_vectors(k, v);
       }},
      {"body.segments", [&](auto& k, auto& v) { b.segments = to_vectors(k, v); }},
      {"body.radii", [&](auto& k, auto& v) { b.radii = to_doubles(k, v); }},
      {"body.bulge", [&](auto& k, auto& v) { b.bulge = to_doubles(k, v); }},
      {"data.train_sequences", [&](auto& k, auto& v) { data.train_sequences = to_count(k, v); }},
      {"data.test_sequences", [&](auto& k, auto& v) { data.test_sequences = to_count(k, v); }},
      {"data.frames", [&](auto& k, auto& v) { anim.frame_count = to_count(k, v); }},
      {"data.frame_rate", [&](auto& k, auto& v) { anim.frame_rate = to_double(k, v); }},
      {"data.components", [&](auto& k, auto& v) { anim.components = to_count(k, v); }},
      {"data.max_joint_amplitude", [&](auto& k, auto& v) { anim.max_joint_amplitude = to_double(k, v); }},
      {"data.max_joint_velocity", [&](auto& k, auto& v) { anim.max_joint_velocity = to_double(k, v); }},
      {"data.root_rotation_amplitude", [&](auto& k, auto& v) { anim.root_rotation_amplitude = to_double(k, v); }},
      {"data.root_translation_amplitude",
       [&](auto& k, auto& v) { anim.root_translation_amplitude = to_double(k, v); }},
      {"data.max_root_velocity", [&](auto& k, auto& v) { anim.max_root_velocity = to_double(k, v); }},
      {"data.train_uniform", [&](auto& k, auto& v) { data.train_counts.uniform = to_count(k, v); }},
      {"data.train_surface", [&](auto& k, auto& v) { data.train_counts.surface = to_count(k, v); }},
      {"data.train_vertices", [&](auto& k, auto& v) { data.train_counts.vertices = to_count(k, v); }},
      {"data.test_uniform", [&](auto& k, auto& v) { data.test_counts.uniform = to_count(k, v); }},
      {"data.test_surface", [&](auto& k, auto& v) { data.test_counts.surface = to_count(k, v); }},
      {"data.test_vertices", [&](auto& k, auto& v) { data.test_counts.vertices = to_count(k, v); }},
      {"data.sigma_frac",
       [&](auto& k, auto& v) { data.train_counts.sigma_frac = data.test_counts.sigma_frac = to_double(k, v); }},
      {"data.animation_seed", [&](auto& k, auto& v) { data.animation_seed = to_seed(k, v); }},
      {"data.split_seed", [&](auto& k, auto& v) { data.split_seed = to_seed(k, v); }},
      {"data.sample_seed", [&](auto& k, auto& v) { data.sample_seed = to_seed(k, v); }},
      {"train.lambda", [&](auto& k, auto& v) { train.lambda = to_double(k, v); }},
      {"train.batch_frames", [&](auto& k, auto& v) { train.batch_frames = to_count(k, v); }},
      {"train.points_uniform", [&](auto& k, auto& v) { train.points_uniform = to_count(k, v); }},
      {"train.points_surface", [&](auto& k, auto& v) { train.points_surface = to_count(k, v); }},
      {"train.vertices", [&](auto& k, auto& v) { train.vertices = to_count(k, v); }},
      {"train.sigma_frac", [&](auto& k, auto& v) { train.sigma_frac = to_double(k, v); }},
      {"train.learning_rate", [&](auto& k, auto& v) { train.learning_rate = to_double(k, v); }},
      {"train.iterations", [&](auto& k, auto& v) { train.iterations = to_count(k, v); }},
      {"train.seed", [&](auto& k, auto& v) { train.seed = to_seed(k, v); }},
      {"train.checkpoint_interval", [&](auto& k, auto& v) { train.checkpoint_interval = to_count(k, v); }},
      {"train.width", [&](auto& k, auto& v) { model_width = to_count(k, v); }},
      {"train.projection_dim", [&](auto& k, auto& v) { projection_dim = to_count(k, v); }},
      {"train.projection",
       [&](auto& k, auto& v) {
         if (v == "learned") projection = ProjectionMode::Learned;
         else if (v == "identity") projection = ProjectionMode::Identity;
         else bad_value(k, v);
       }},
      {"train.temperature", [&](auto& k, auto& v) { temperature = to_double(k, v); }},
      {"eval.grid_res", [&](auto& k, auto& v) { eval.grid_res = to_count(k, v); }},
      {"eval.gt_surface_points", [&](auto& k, auto& v) { eval.gt_surface_points = to_count(k, v); }},
      {"eval.fscore_tau", [&](auto& k, auto& v) { eval.fscore_tau = to_double(k, v); }},
      {"eval.seed", [&](auto& k, auto& v) { eval.seed = to_seed(k, v); }},
      {"track.sigma",
       [&](auto& k, auto& v) {
         track.sigma = to_double(k, v);
         track_sigma_set = true;
       }},
      {"track.samples", [&](auto& k, auto& v) { track.samples = to_count(k, v); }},
      {"track.steps_per_frame", [&](auto& k, auto& v) { track.steps_per_frame = to_count(k, v); }},
      {"track.learning_rate", [&](auto& k, auto& v) { track.learning_rate = to_double(k, v); }},
      {"track.w_prior", [&](auto& k, auto& v) { track.w_prior = to_double(k, v); }},
      {"track.seed", [&](auto& k, auto& v) { track.seed = to_seed(k, v); }},
      {"track.antithetic", [&](auto& k, auto& v) { track.antithetic = to_bool(k, v); }},
      {"track.sequence", [&](auto& k, auto& v) { track_sequence = to_count(k, v); }},
  };
  bool any_body = false;
  for (const auto& [key, value] : values) {
    const auto it = setters.find(key);
    if (it == setters.end()) throw Error(ErrorCode::Config, "unknown key " + key);
    it->second(key, value);
    any_body = any_body || key.rfind("body.", 0) == 0;
  }
  if (any_body) {
    for (const auto& key : kRequiredBodyKeys)
      if (!values.count(key) && !body) throw Error(ErrorCode::Config, "missing body key " + key);
    body = b;
  }
}

void RunConfig::validate() const {
  try {
    if (body) body->build();
    if (data.train_sequences < 1 || data.test_sequences < 1)
      throw Error(ErrorCode::InvalidInput, "data needs >= 1 train and test sequence");
    if (data.animation.frame_count < 1 || !(data.animation.frame_rate > 0.0))
      throw Error(ErrorCode::InvalidInput, "data.frames / data.frame_rate");
    if (data.test_counts.uniform + data.test_counts.surface < 1 ||
        data.train_counts.uniform + data.train_counts.surface < 1)
      throw Error(ErrorCode::InvalidInput, "frames need at least one labeled sample");
    if (!(data.train_counts.sigma_frac > 0.0)) throw Error(ErrorCode::InvalidInput, "data.sigma_frac must be > 0");
    train.validate();
    if (projection_dim < 1) throw Error(ErrorCode::InvalidInput, "train.projection_dim must be >= 1");
    if (!(temperature > 0.0)) throw Error(ErrorCode::InvalidInput, "train.temperature must be > 0");
    if (eval.grid_res < 8) throw Error(ErrorCode::InvalidInput, "eval.grid_res must be >= 8");
    if (eval.gt_surface_points < 1 || !(eval.fscore_tau > 0.0))
      throw Error(ErrorCode::InvalidInput, "eval.gt_surface_points / eval.fscore_tau");
    track.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::Config, e.what());
  }
}

ModelConfig RunConfig::model(ModelKind kind, int dim, int bones) const {
  ModelConfig cfg = ModelConfig::defaults(kind, dim, bones);
  if (model_width > 0) cfg.width = model_width;
  cfg.projection_dim = projection_dim;
  cfg.projection = projection;
  cfg.temperature = temperature;
  return cfg;
}

}  // namespace nasa
