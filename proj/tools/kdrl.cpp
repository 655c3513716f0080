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

#include "kdrl/commands.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

void add_overrides(CLI::App* cmd, kdrl::ConfigOverrides& o) {
  cmd->add_option("--beta-schedule", o.beta_schedule, "constant:B or linear:INIT,DECAY,FLOOR");
  cmd->add_option("--seed", o.seed, "Training seed");
  cmd->add_option("--steps", o.total_steps, "Total training steps");
  cmd->add_option("--mode", o.mode, "grpo-only, rkl-only, sft, reward-shaping or joint-kdrl");
  cmd->add_option("--estimator", o.estimator, "k2, k3, topk or topk:K");
  cmd->add_option("--mask", o.mask, "none, response or group");
  cmd->add_option("--out", o.output_dir, "Output directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"KDRL lab: GRPO and on-policy distillation on toy sequence tasks"};
  app.set_version_flag("--version", kdrl::code_version());
  app.require_subcommand(1);

  kdrl::TrainOptions train;
  auto* train_cmd = app.add_subcommand("train", "Run training from a config or manifest");
  train_cmd->add_option("config", train.config, "Run config (JSON) or manifest.json")->required();
  train_cmd->add_flag("--force", train.force, "Overwrite an existing run directory");
  add_overrides(train_cmd, train.overrides);

  kdrl::EvalOptions eval;
  auto* eval_cmd = app.add_subcommand("eval", "Pass rates of a checkpoint on a dataset");
  eval_cmd->add_option("--checkpoint", eval.checkpoint)->required();
  eval_cmd->add_option("--dataset", eval.dataset, "Dataset (JSONL)");
  eval_cmd->add_option("--config", eval.config, "Run config whose task supplies the questions");
  eval_cmd->add_option("--samples", eval.n_samples, "Samples per question")->capture_default_str();
  eval_cmd->add_option("--seed", eval.seed)->capture_default_str();
  eval_cmd->add_option("--max-len", eval.max_len)->capture_default_str();
  eval_cmd->add_option("--temperature", eval.temperature)->capture_default_str();

  kdrl::SuiteOptions suite;
  auto* oracle_cmd = app.add_subcommand("oracle-check", "Run the exact identity suite");
  oracle_cmd->add_option("--budget", suite.budget, "Enumeration budget (sequences)")->capture_default_str();
  oracle_cmd->add_option("--seed", suite.seed)->capture_default_str();
  oracle_cmd->add_option("--samples", suite.n_samples, "Monte-Carlo samples per estimator check")
      ->capture_default_str();

  kdrl::FilterOptions filter;
  auto* filter_cmd = app.add_subcommand("filter-data", "Drop easy questions and cap unsolved ones");
  filter_cmd->add_option("--dataset", filter.dataset, "Dataset (JSONL)");
  filter_cmd->add_option("--config", filter.config, "Run config whose task supplies the questions");
  filter_cmd->add_option("--policy", filter.policy, "Checkpoint used to estimate pass rates")->required();
  filter_cmd->add_option("--out", filter.output)->required();
  filter_cmd->add_option("--easy-threshold", filter.settings.easy_threshold)->capture_default_str();
  filter_cmd->add_option("--unsolved-cap", filter.settings.unsolved_cap)->capture_default_str();
  filter_cmd->add_option("--samples", filter.settings.n_samples)->capture_default_str();
  filter_cmd->add_option("--seed", filter.settings.seed)->capture_default_str();
  filter_cmd->add_option("--max-len", filter.settings.sampler.max_len)->capture_default_str();

  kdrl::BuildTeacherOptions teacher;
  auto* teacher_cmd = app.add_subcommand("build-teacher", "Build and save the teacher named by a config");
  teacher_cmd->add_option("config", teacher.config)->required();
  teacher_cmd->add_option("--out", teacher.output, "Checkpoint path")->required();

  CLI11_PARSE(app, argc, argv);

  if (*train_cmd) return kdrl::cmd_train(train, std::cout, std::cerr);
  if (*eval_cmd) return kdrl::cmd_eval(eval, std::cout, std::cerr);
  if (*oracle_cmd) return kdrl::cmd_oracle_check(suite, std::cout, std::cerr);
  if (*filter_cmd) return kdrl::cmd_filter_data(filter, std::cout, std::cerr);
  if (*teacher_cmd) return kdrl::cmd_build_teacher(teacher, std::cout, std::cerr);
  return kdrl::kExitUsage;
}
