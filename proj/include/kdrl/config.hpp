// Copyright 2026 The kdrl-lab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Run configuration documents (JSON). Parsing is strict: unknown keys,
// wrong types and out-of-range values are rejected before any compute.

#include "kdrl/trainer.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace kdrl {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TaskSpec {
  std::string dataset;  // path; when set, the generator fields are ignored
  TaskKind kind = TaskKind::modular_sum;
  int vocab_size = 8;
  int count = 36;
  std::uint64_t seed = 7;
  int prompt_length = 2;

  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

struct TeacherSpec {
  enum Source { none, checkpoint, hand_built, grpo };
  Source source = none;
  std::string path;       // checkpoint
  double p_gold = 0.9;    // hand_built
  int window = 3;         // hand_built, grpo
  int total_steps = 600;  // grpo
  OptimizerConfig optimizer{OptimizerKind::adam, 0.05};
  double min_pass_rate = 0.5;
  int eval_samples = 16;
  std::uint64_t seed = 1234;

  friend bool operator==(const TeacherSpec&, const TeacherSpec&) = default;
};

struct RunConfig {
  TaskSpec task;
  TeacherSpec teacher;
  TrainingConfig training;
  std::string output_dir;
  double oracle_budget = 1e6;
};

RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);

// Fully resolved document (every field explicit); parse_run_config of it
// gives back the same configuration.
nlohmann::ordered_json to_json(const RunConfig& config);

// Validates cross-field constraints (throws ConfigError).
void validate(const RunConfig& config);

// Overrides accepted on the command line.
struct ConfigOverrides {
  std::optional<std::string> beta_schedule;
  std::optional<std::uint64_t> seed;
  std::optional<int> total_steps;
  std::optional<std::string> mode;
  std::optional<std::string> estimator;
  std::optional<std::string> mask;
  std::optional<std::string> output_dir;
};

void apply_overrides(RunConfig& config, const ConfigOverrides& overrides);

// Materializes the dataset named by the task spec.
TaskInstance load_task(const TaskSpec& spec);

// Teacher named by the spec (nullptr params for source none).
TeacherPolicy load_teacher(const RunConfig& config, const TaskInstance& task);

// Resolves the output directory: absolute paths as given, relative paths
// under $KDRL_OUTPUT_ROOT when set.
std::filesystem::path resolve_output_dir(const std::string& dir);

inline constexpr const char* kOutputRootEnv = "KDRL_OUTPUT_ROOT";

}  // namespace kdrl
