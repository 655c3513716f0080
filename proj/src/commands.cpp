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

#include "kdrl/io.hpp"
#include "kdrl/random.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>

#ifndef KDRL_VERSION
#define KDRL_VERSION "unknown"
#endif

namespace kdrl {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

std::string code_version() { return KDRL_VERSION; }

RunConfig load_config_or_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  if (doc.is_object() && doc.value("schema", "") == "kdrl-manifest") {
    if (!doc.contains("config")) throw ConfigError("manifest " + path.string() + " has no config");
    return parse_run_config(doc["config"]);
  }
  return parse_run_config(doc);
}

std::pair<RunConfig, TaskInstance> resolve_run(const fs::path& path, const ConfigOverrides& overrides) {
  RunConfig cfg = load_config_or_manifest(path);
  apply_overrides(cfg, overrides);
  TaskInstance task;
  try {
    task = load_task(cfg.task);
  } catch (const FormatError& e) {
    throw ConfigError(e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("task: ") + e.what());
  }
  EstimatorKind& est = cfg.training.objective.estimator;
  if (est.kind == EstimatorKind::topk && est.top_k == 0) est.top_k = default_top_k(task.vocab.size());
  if (est.kind == EstimatorKind::topk && est.top_k > task.vocab.size())
    throw ConfigError("top-k K exceeds the vocabulary size");
  validate(cfg);
  return {std::move(cfg), std::move(task)};
}

namespace {

std::string step_name(std::uint64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step-%06llu.ckpt", static_cast<unsigned long long>(step));
  return buf;
}

ordered_json teacher_json(const TeacherPolicy& teacher) {
  if (!teacher.params) return nullptr;
  return {{"provenance", to_string(teacher.provenance)},
          {"window", teacher.params->shape().window},
          {"fingerprint", hex64(fingerprint(*teacher.params))}};
}

TaskInstance questions_from(const fs::path& dataset, const fs::path& config) {
  if (dataset.empty() == config.empty()) throw std::invalid_argument("give exactly one of --dataset and --config");
  return dataset.empty() ? load_task(load_config_or_manifest(config).task) : load_dataset(dataset);
}

void write_json_file(const fs::path& path, const ordered_json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace

int cmd_train(const TrainOptions& options, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  TaskInstance task;
  fs::path dir;
  try {
    std::tie(cfg, task) = resolve_run(options.config, options.overrides);
    dir = resolve_output_dir(cfg.output_dir);
    if (fs::exists(dir / "manifest.json") && !options.force)
      throw ConfigError("output directory " + dir.string() + " already holds a run (use --force to overwrite)");
  } catch (const std::exception& e) {
    err << "kdrl train: invalid configuration: " << e.what() << '\n';
    return kExitUsage;
  }

  TeacherPolicy teacher;
  try {
    teacher = load_teacher(cfg, task);
  } catch (const std::exception& e) {
    err << "kdrl train: teacher: " << e.what() << '\n';
    return kExitFailure;
  }

  std::ofstream metrics;
  try {
    fs::create_directories(dir / "checkpoints");
    ordered_json manifest;
    manifest["schema"] = "kdrl-manifest";
    manifest["version"] = kManifestVersion;
    manifest["code_version"] = code_version();
    manifest["seed"] = cfg.training.seed;
    manifest["task_fingerprint"] = hex64(fingerprint(task));
    manifest["task_questions"] = task.questions.size();
    manifest["teacher"] = teacher_json(teacher);
    manifest["config"] = to_json(cfg);
    write_json_file(dir / "manifest.json", manifest);
    metrics.open(dir / "metrics.jsonl");
    if (!metrics) throw std::runtime_error("cannot write " + (dir / "metrics.jsonl").string());
    metrics << metrics_header_line() << '\n';
  } catch (const std::exception& e) {
    err << "kdrl train: " << e.what() << '\n';
    return kExitFailure;
  }

  TrainingSinks sinks;
  sinks.metrics = &metrics;
  sinks.checkpoint = [&](const PolicyParameters& p) { save_checkpoint(dir / "checkpoints" / step_name(p.step), p); };
  try {
    const TrainingResult result = run_training(cfg.training, task, teacher.params ? &teacher : nullptr, sinks);
    save_checkpoint(dir / "checkpoints" / "final.ckpt", result.params);
    const MetricsRecord* last = result.metrics.empty() ? nullptr : &result.metrics.back();
    out << "kdrl train: " << result.metrics.size() << " steps, final reward_ema "
        << (last != nullptr ? last->reward_ema : 0.0) << ", output " << dir.string() << '\n';
  } catch (const std::exception& e) {
    err << "kdrl train: aborted: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

int cmd_eval(const EvalOptions& options, std::ostream& out, std::ostream& err) {
  try {
    if (options.n_samples < 1) throw std::invalid_argument("--samples must be >= 1");
    if (options.max_len < 1) throw std::invalid_argument("--max-len must be >= 1");
    const Checkpoint ck = load_checkpoint(options.checkpoint);
    const TaskInstance task = questions_from(options.dataset, options.config);
    if (ck.params.vocab_size() != task.vocab.size())
      throw std::invalid_argument("checkpoint vocabulary " + std::to_string(ck.params.vocab_size()) +
                                  " does not match the dataset's " + std::to_string(task.vocab.size()));
    const SamplerSettings sampler{options.max_len, options.temperature};
    ordered_json report;
    report["schema"] = "kdrl-eval";
    report["version"] = 1;
    report["checkpoint_fingerprint"] = hex64(fingerprint(ck.params));
    report["dataset_fingerprint"] = hex64(fingerprint(task));
    report["n_samples"] = options.n_samples;
    report["seed"] = options.seed;
    report["max_len"] = options.max_len;
    report["temperature"] = options.temperature;
    ordered_json rows = ordered_json::array();
    double sum = 0.0;
    for (std::size_t i = 0; i < task.questions.size(); ++i) {
      const double rate = estimate_pass_rate(ck.params, task.questions[i], task.vocab, options.n_samples, sampler,
                                             derive_seed(options.seed, {i}));
      sum += rate;
      rows.push_back({{"id", task.questions[i].id}, {"pass_rate", rate}});
    }
    report["questions"] = std::move(rows);
    report["mean_pass_rate"] = task.questions.empty() ? 0.0 : sum / static_cast<double>(task.questions.size());
    out << report.dump() << '\n';
    return kExitOk;
  } catch (const std::exception& e) {
    err << "kdrl eval: " << e.what() << '\n';
    return kExitFailure;
  }
}

int cmd_oracle_check(const SuiteOptions& options, std::ostream& out, std::ostream& err) {
  if (!(options.budget >= 1.0) || options.n_samples < 2) {
    err << "kdrl oracle-check: budget must be >= 1 and samples >= 2\n";
    return kExitUsage;
  }
  const SuiteReport report = run_identity_suite(options);
  out << report.to_json(options).dump() << '\n';
  for (const std::string& name : report.failed()) err << "kdrl oracle-check: FAILED " << name << '\n';
  return report.all_passed() ? kExitOk : kExitFailure;
}

int cmd_filter_data(const FilterOptions& options, std::ostream& out, std::ostream& err) {
  try {
    const TaskInstance task = questions_from(options.dataset, options.config);
    const Checkpoint ck = load_checkpoint(options.policy);
    if (ck.params.vocab_size() != task.vocab.size())
      throw std::invalid_argument("policy vocabulary does not match the dataset");
    const TaskInstance kept = filter_dataset(task, ck.params, options.settings);
    if (options.output.has_parent_path()) fs::create_directories(options.output.parent_path());
    save_dataset(options.output, kept);
    out << "kdrl filter-data: kept " << kept.questions.size() << " of " << task.questions.size() << " questions -> "
        << options.output.string() << '\n';
    return kExitOk;
  } catch (const std::exception& e) {
    err << "kdrl filter-data: " << e.what() << '\n';
    return kExitFailure;
  }
}

int cmd_build_teacher(const BuildTeacherOptions& options, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  TaskInstance task;
  try {
    std::tie(cfg, task) = resolve_run(options.config, options.overrides);
    if (cfg.teacher.source != TeacherSpec::hand_built && cfg.teacher.source != TeacherSpec::grpo)
      throw ConfigError("build-teacher needs teacher.source hand-built or grpo");
  } catch (const std::exception& e) {
    err << "kdrl build-teacher: invalid configuration: " << e.what() << '\n';
    return kExitUsage;
  }
  try {
    const TeacherPolicy teacher = load_teacher(cfg, task);
    if (options.output.has_parent_path()) fs::create_directories(options.output.parent_path());
    save_checkpoint(options.output, *teacher.params, teacher.provenance);
    const SamplerSettings eval{cfg.training.max_response_length, 1.0};
    const double rate = mean_pass_rate(*teacher.params, task, cfg.teacher.eval_samples, eval, cfg.teacher.seed);
    out << "kdrl build-teacher: " << to_string(teacher.provenance) << " teacher, mean pass rate " << rate << " -> "
        << options.output.string() << '\n';
    return kExitOk;
  } catch (const std::exception& e) {
    err << "kdrl build-teacher: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace kdrl
