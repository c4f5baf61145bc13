#ifndef HABIT_EXPERIMENT_HPP
#define HABIT_EXPERIMENT_HPP

// End-to-end steps behind the command line: generate, train, detect,
// evaluate and sweep. The `cmd_*` functions return process exit codes:
// 0 ok, 2 config, 3 io, 4 format, 5 numeric failure.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "habit/config.hpp"
#include "habit/eval.hpp"
#include "habit/synth.hpp"
#include "habit/train.hpp"

namespace habit {

inline constexpr const char* kResolvedConfigFile = "resolved_config.json";
inline constexpr const char* kCheckpointFile = "checkpoint.bin";
inline constexpr const char* kMetricsFile = "metrics.csv";
inline constexpr const char* kDetectionSamplesFile = "detection_samples.csv";
inline constexpr const char* kDetectionFile = "detection.csv";
inline constexpr const char* kReportFile = "report.csv";
inline constexpr const char* kSweepSummaryFile = "sweep_summary.csv";

int exit_code(ErrorKind kind) noexcept;

TrainResult run_train(const ExperimentConfig& cfg, const Dataset& data);

struct SampleDetection {
  std::int64_t id = 0;
  double cleanliness = 0;
  int mask = 1;
  NoiseLabel truth = NoiseLabel::Clean;
};

struct DetectionRun {
  std::vector<SampleDetection> samples;  // ordered by id
  DetectionReport report;
};

/// Inference-mode cleanliness estimates and masks over the training split,
/// using the checkpoint's per-batch history as the previous pass.
DetectionRun run_detect(const Checkpoint& ckpt, const ExperimentConfig& cfg, const Dataset& data);

/// Retrieval on the clean test split.
RetrievalReport run_eval(const Checkpoint& ckpt, const ExperimentConfig& cfg, const Dataset& data);

/// Recovers the configuration a checkpoint was trained with.
ExperimentConfig checkpoint_config(const Checkpoint& ckpt);

std::string detection_samples_to_csv(const std::vector<SampleDetection>& rows);

struct CommandOptions {
  std::optional<std::string> config;
  std::optional<std::string> data;
  std::optional<std::string> out;
  std::optional<std::string> checkpoint;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> ks;
  std::optional<std::string> axis;
  std::optional<std::string> values;
};

int cmd_gen(const CommandOptions& opts);
int cmd_train(const CommandOptions& opts);
int cmd_detect(const CommandOptions& opts);
int cmd_eval(const CommandOptions& opts);
int cmd_sweep(const CommandOptions& opts);

enum class LogLevel { Quiet, Info, Debug };
/// Reads HABIT_LOG (quiet, info, debug); defaults to info.
LogLevel log_level();

}  // namespace habit

#endif  // HABIT_EXPERIMENT_HPP
