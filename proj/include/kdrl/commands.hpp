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

// Subcommands of the `kdrl` tool. Each returns a process exit status and
// writes human-readable errors to `err`.

#include "kdrl/config.hpp"
#include "kdrl/oracle_suite.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

namespace kdrl {

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitUsage = 2 };

std::string code_version();

struct TrainOptions {
  std::filesystem::path config;  // a run config or a previous run's manifest.json
  ConfigOverrides overrides;
  bool force = false;  // reuse an output directory that already holds a run
};

// Writes <out>/manifest.json, <out>/metrics.jsonl and <out>/checkpoints/.
int cmd_train(const TrainOptions& options, std::ostream& out, std::ostream& err);

// Questions come from a dataset file, or from the task section of a run
// config when `dataset` is empty.
struct EvalOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path dataset;
  std::filesystem::path config;
  int n_samples = 16;
  std::uint64_t seed = 0;
  int max_len = 12;
  double temperature = 1.0;
};

// Prints a JSON report with per-question and mean pass rates.
int cmd_eval(const EvalOptions& options, std::ostream& out, std::ostream& err);

// Prints the identity-suite report; exit 0 iff every check passes.
int cmd_oracle_check(const SuiteOptions& options, std::ostream& out, std::ostream& err);

struct FilterOptions {
  std::filesystem::path dataset;
  std::filesystem::path config;  // as in EvalOptions
  std::filesystem::path policy;
  std::filesystem::path output;
  FilterSettings settings;
};

int cmd_filter_data(const FilterOptions& options, std::ostream& out, std::ostream& err);

struct BuildTeacherOptions {
  std::filesystem::path config;
  ConfigOverrides overrides;
  std::filesystem::path output;
};

// Builds the teacher named by the config's teacher section and saves it.
int cmd_build_teacher(const BuildTeacherOptions& options, std::ostream& out, std::ostream& err);

// Config document from a run config file or the "config" member of a manifest.
RunConfig load_config_or_manifest(const std::filesystem::path& path);

// Applies overrides, materializes the task, resolves defaults that depend on
// it (top-K size) and validates.
std::pair<RunConfig, TaskInstance> resolve_run(const std::filesystem::path& path, const ConfigOverrides& overrides);

}  // namespace kdrl
