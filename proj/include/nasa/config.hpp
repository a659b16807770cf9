#pragma once

#include "nasa/dataset.hpp"
#include "nasa/evaluation.hpp"
#include "nasa/occmodels.hpp"
#include "nasa/tracking.hpp"
#include "nasa/training.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>

namespace nasa {

/// Flat "section.key" -> value map read from an INI-style file.
using ConfigValues = std::map<std::string, std::string>;

/// Parses "[section]" headers and "key = value" lines; '#' starts a comment.
ConfigValues parse_config_text(const std::string& text);
ConfigValues read_config_file(const std::filesystem::path& path);

/// Body description. Scalars broadcast to every bone; lists give one entry per bone.
struct BodyConfig {
  int dim = 2;
  int bone_count = 5;
  std::vector<int> parents;          // empty: serial chain
  std::vector<Vec> offsets;          // rest offset from the parent; empty: use offset_length along +x
  double offset_length = 0.5;
  std::vector<Vec> segments;         // capsule end point q per bone; empty: towards the first child
  std::vector<double> radii{0.12};
  std::vector<double> bulge{0.3};

  CapsuleBody build() const;
};

struct RunConfig {
  std::optional<BodyConfig> body;  // required by gen-data only
  CorpusSpec data;
  TrainConfig train;
  int model_width = 0;  // 0: per-kind default
  int projection_dim = 4;
  ProjectionMode projection = ProjectionMode::Learned;
  double temperature = 0.05;
  EvalConfig eval;
  TrackConfig track;
  bool track_sigma_set = false;
  int track_sequence = 0;

  /// Applies values over the defaults; unknown keys and malformed values throw Config.
  void apply(const ConfigValues& values);
  void validate() const;
  ModelConfig model(ModelKind kind, int dim, int bones) const;
};

}  // namespace nasa
