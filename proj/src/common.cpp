#include "nasa/common.hpp"

namespace nasa {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidInput: return "invalid input";
    case ErrorCode::DimensionMismatch: return "dimension mismatch";
    case ErrorCode::DegenerateRotation: return "degenerate rotation";
    case ErrorCode::SamplingExhausted: return "sampling exhausted";
    case ErrorCode::UnsupportedModel: return "unsupported model";
    case ErrorCode::StaleTape: return "stale tape";
    case ErrorCode::NonFiniteGradient: return "non-finite gradient";
    case ErrorCode::Divergence: return "divergence";
    case ErrorCode::UndefinedMetric: return "undefined metric";
    case ErrorCode::BadMagic: return "bad magic";
    case ErrorCode::VersionMismatch: return "version mismatch";
    case ErrorCode::Truncated: return "truncated file";
    case ErrorCode::ChecksumMismatch: return "checksum mismatch";
    case ErrorCode::Io: return "i/o error";
    case ErrorCode::Config: return "config error";
  }
  return "unknown";
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ a) ^ (b * 0x632be59bd9b4e019ULL));
}

}  // namespace nasa
