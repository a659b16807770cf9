#pragma once

#include "nasa/config.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace nasa {

/// Process exit codes of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitValidation = 2, kExitIo = 3 };

/// Maps an error code to the exit code reported by the tool.
int exit_code_for(ErrorCode code);

struct GenDataOptions {
  RunConfig config;
  std::filesystem::path out;
};

struct TrainOptions {
  RunConfig config;
  std::filesystem::path corpus;
  std::filesystem::path out;
  ModelKind kind = ModelKind::Deformable;
  bool lambda_given = false;
};

struct EvalOptions {
  RunConfig config;
  std::filesystem::path corpus;
  std::optional<std::filesystem::path> checkpoint;  // none: evaluate the oracle
  std::filesystem::path out;
  bool svg = false;
  bool train_split = false;
};

struct TrackOptions {
  RunConfig config;
  std::filesystem::path corpus;
  std::filesystem::path checkpoint;
  std::filesystem::path out;
  bool no_prior = false;
  bool no_smoothing = false;
  int max_frames = 0;  // 0: whole sequence
};

struct ReportInput {
  std::string label;
  std::filesystem::path path;
};

struct ReportOptions {
  std::vector<ReportInput> inputs;
  std::filesystem::path out;
};

/// Each command writes only inside its out directory and throws Error on failure.
void cmd_gen_data(const GenDataOptions& options);
TrainResult cmd_train(const TrainOptions& options);
MetricsReport cmd_eval(const EvalOptions& options);
TrackResult cmd_track(const TrackOptions& options);
void cmd_report(const ReportOptions& options);

/// Full command-line entry point: nasa-occ {gen-data|train|eval|track|report} ...
int run_cli(int argc, const char* const* argv);

}  // namespace nasa
