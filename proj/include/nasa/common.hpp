#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace nasa {

// Small geometric vectors/matrices: d is 2 or 3 at runtime, storage never exceeds 3.
using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, 3, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, 3, 3>;

// Point batches are stored column-wise: d x N.
using Points = Eigen::MatrixXd;

enum class ErrorCode {
  InvalidInput,
  DimensionMismatch,
  DegenerateRotation,
  SamplingExhausted,
  UnsupportedModel,
  StaleTape,
  NonFiniteGradient,
  Divergence,
  UndefinedMetric,
  BadMagic,
  VersionMismatch,
  Truncated,
  ChecksumMismatch,
  Io,
  Config,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

using Rng = std::mt19937_64;

/// Mixes a base seed with stream identifiers (splitmix64 finalizer), so that
/// independent work items get decorrelated generators without shared state.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

inline double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

inline void check_dim(int d) {
  if (d != 2 && d != 3) throw Error(ErrorCode::InvalidInput, "dimension must be 2 or 3");
}

}  // namespace nasa
