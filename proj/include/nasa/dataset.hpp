#pragma once

#include "nasa/synthbody.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace nasa {

/// Labeled occupancy samples for one posed frame. All coordinates are f32-representable.
struct FrameSamples {
  int sequence_id = 0;
  int frame_index = 0;
  Pose pose;
  Points uniform_points;  // d x N_u
  Points surface_points;  // d x N_s (noise-displaced)
  std::vector<std::uint8_t> labels;  // N_u + N_s, uniform first
  Points vertices;        // d x N_v (on the surface)
  std::vector<int> owners;  // dominant part per vertex

  /// Uniform and surface points side by side, matching labels.
  Points eval_points() const;

  bool operator==(const FrameSamples& other) const;
};

struct SampleCounts {
  int uniform = 2000;
  int surface = 2000;
  int vertices = 500;
  double sigma_frac = 0.03;
};

FrameSamples build_frame_samples(const CapsuleBody& body, const Pose& pose, const SampleCounts& counts,
                                 std::uint64_t seed);

/// Vertices with owning part, sampled on the posed surface. Owners are taken at the rest-pose location.
void sample_vertices(const CapsuleBody& body, const PosedBones& posed, int n, std::uint64_t seed, Points& vertices,
                     std::vector<int>& owners);

struct Corpus {
  CapsuleBody body;
  std::vector<FrameSamples> train;
  std::vector<FrameSamples> test;
  std::vector<int> train_sequences;
  std::vector<int> test_sequences;

  bool operator==(const Corpus& other) const = default;
};

struct CorpusSpec {
  int train_sequences = 8;
  int test_sequences = 2;
  AnimationParams animation;
  SampleCounts train_counts{500, 500, 200, 0.03};
  SampleCounts test_counts;
  std::uint64_t animation_seed = 1;
  std::uint64_t split_seed = 2;
  std::uint64_t sample_seed = 3;
};

/// Rounds every body parameter to f32 so that the stored corpus describes exactly the labeled body.
CapsuleBody quantize_body(const CapsuleBody& body);

/// Generates sequences, assigns the split and samples every frame.
Corpus build_corpus(const CapsuleBody& body, const CorpusSpec& spec);

inline constexpr char kCorpusMagic[] = "NASAOCC1";
inline constexpr std::uint16_t kCorpusVersion = 1;

std::vector<std::uint8_t> encode_corpus(const Corpus& corpus);
Corpus decode_corpus(std::span<const std::uint8_t> bytes);

void write_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus read_corpus(const std::filesystem::path& path);

}  // namespace nasa
