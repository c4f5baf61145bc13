#ifndef HABIT_CONFIG_HPP
#define HABIT_CONFIG_HPP

// Single-document experiment configuration: generator, trainer and
// evaluation settings plus optional paths. Unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <string>

#include "habit/eval.hpp"
#include "habit/synth.hpp"
#include "habit/train.hpp"

namespace habit {

struct ExperimentConfig {
  GenConfig gen;
  TrainConfig train;
  EvalConfig eval;
  std::uint64_t seed = 0;
  std::string data_dir;
  std::string out_dir;

  /// Pushes the shared seed into the generator and trainer.
  void set_seed(std::uint64_t s) {
    seed = s;
    gen.seed = s;
    train.seed = s;
  }
};

/// Parses and validates; missing keys take defaults. Throws ConfigError.
ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Every field, fully materialized. Paths are included only on request so
/// run-invariant artifacts (checkpoints) do not depend on where they live.
std::string to_json_string(const ExperimentConfig& cfg, bool include_paths);

/// Sets one sweepable field ("sigma", "kappa" or "gamma") from its text form.
void set_axis_value(ExperimentConfig& cfg, const std::string& axis, const std::string& value);

/// Parses "1,5,10" style lists of positive integers. Throws ConfigError.
std::vector<int> parse_int_list(const std::string& text, const char* field);

void validate(const ExperimentConfig& cfg);

}  // namespace habit

#endif  // HABIT_CONFIG_HPP
