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

#include "kdrl/config.hpp"

#include "kdrl/io.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

namespace kdrl {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// Reads fields of one JSON object and rejects any key it was not asked for.
class StrictReader {
 public:
  StrictReader(const json& obj, std::string where) : obj_(obj), where_(std::move(where)) {
    if (!obj_.is_object()) throw ConfigError(where_ + " must be an object");
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  template <typename T>
  void read(const std::string& key, T& dst) {
    const json* v = find(key);
    if (v == nullptr) return;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v->is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v->is_number_integer()) throw ConfigError("");
        if constexpr (std::is_unsigned_v<T>)
          if (v->get<long long>() < 0) throw ConfigError("");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v->is_number()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v->is_string()) throw ConfigError("");
      }
      dst = v->get<T>();
    } catch (const std::exception&) {
      throw ConfigError(where_ + "." + key + " has the wrong type");
    }
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("unknown config key '" + where_ + "." + it.key() + "'");
  }

 private:
  const json& obj_;
  std::string where_;
  std::set<std::string> seen_;
};

template <typename F>
auto wrap(const std::string& where, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

void read_optimizer(const json& j, const std::string& where, OptimizerConfig& opt) {
  StrictReader r(j, where);
  std::string kind = to_string(opt.kind);
  r.read("kind", kind);
  opt.kind = wrap(where + ".kind", [&] { return parse_optimizer_kind(kind); });
  r.read("learning_rate", opt.learning_rate);
  r.read("beta1", opt.beta1);
  r.read("beta2", opt.beta2);
  r.read("epsilon", opt.epsilon);
  r.read("max_grad_norm", opt.max_grad_norm);
  r.finish();
  wrap(where, [&] { opt.validate(); });
}

ordered_json optimizer_json(const OptimizerConfig& opt) {
  ordered_json j;
  j["kind"] = to_string(opt.kind);
  j["learning_rate"] = opt.learning_rate;
  j["beta1"] = opt.beta1;
  j["beta2"] = opt.beta2;
  j["epsilon"] = opt.epsilon;
  j["max_grad_norm"] = opt.max_grad_norm;
  return j;
}

std::string teacher_source_name(TeacherSpec::Source s) {
  switch (s) {
    case TeacherSpec::none: return "none";
    case TeacherSpec::checkpoint: return "checkpoint";
    case TeacherSpec::hand_built: return "hand-built";
    case TeacherSpec::grpo: return "grpo";
  }
  return "none";
}

std::string estimator_name(const EstimatorKind& e) {
  return e.kind == EstimatorKind::topk && e.top_k == 0 ? "topk" : to_string(e);
}

}  // namespace

RunConfig parse_run_config(const json& doc) {
  RunConfig cfg;
  StrictReader root(doc, "config");
  TrainingConfig& tc = cfg.training;

  if (const json* t = root.find("task")) {
    StrictReader r(*t, "config.task");
    r.read("dataset", cfg.task.dataset);
    std::string kind = to_string(cfg.task.kind);
    r.read("kind", kind);
    cfg.task.kind = wrap("config.task.kind", [&] { return parse_task_kind(kind); });
    r.read("vocab_size", cfg.task.vocab_size);
    r.read("count", cfg.task.count);
    r.read("seed", cfg.task.seed);
    r.read("prompt_length", cfg.task.prompt_length);
    r.finish();
  }
  if (const json* p = root.find("policy")) {
    StrictReader r(*p, "config.policy");
    std::string kind = to_string(tc.policy.kind);
    r.read("kind", kind);
    tc.policy.kind = wrap("config.policy.kind", [&] { return parse_parameterization(kind); });
    r.read("window", tc.policy.window);
    r.finish();
  }
  if (const json* o = root.find("objective")) {
    StrictReader r(*o, "config.objective");
    std::string mode = to_string(tc.objective.mode), est = estimator_name(tc.objective.estimator),
                mask = to_string(tc.objective.mask);
    r.read("mode", mode);
    r.read("estimator", est);
    r.read("mask", mask);
    r.read("entropy_coef", tc.objective.entropy_coef);
    r.finish();
    tc.objective.mode = wrap("config.objective.mode", [&] { return parse_objective_mode(mode); });
    tc.objective.mask = wrap("config.objective.mask", [&] { return parse_mask_mode(mask); });
    tc.objective.estimator = wrap("config.objective.estimator", [&] {
      return est == "topk" ? EstimatorKind{EstimatorKind::topk, 0} : parse_estimator(est, 0);
    });
  }
  if (const json* b = root.find("beta_schedule")) {
    if (!b->is_string()) throw ConfigError("config.beta_schedule must be a string like constant:2e-3");
    tc.beta = wrap("config.beta_schedule", [&] { return parse_beta_schedule(b->get<std::string>()); });
  }
  root.read("group_size", tc.group_size);
  root.read("questions_per_step", tc.questions_per_step);
  root.read("max_response_length", tc.max_response_length);
  root.read("temperature", tc.temperature);
  if (const json* o = root.find("optimizer")) read_optimizer(*o, "config.optimizer", tc.optimizer);
  root.read("total_steps", tc.total_steps);
  root.read("seed", tc.seed);
  root.read("ema_alpha", tc.ema_alpha);
  root.read("checkpoint_every", tc.checkpoint_every);
  root.read("sft_reject_filter", tc.sft_reject_filter);

  if (const json* t = root.find("teacher")) {
    StrictReader r(*t, "config.teacher");
    std::string source = "none";
    r.read("source", source);
    if (source == "none") cfg.teacher.source = TeacherSpec::none;
    else if (source == "checkpoint") cfg.teacher.source = TeacherSpec::checkpoint;
    else if (source == "hand-built") cfg.teacher.source = TeacherSpec::hand_built;
    else if (source == "grpo") cfg.teacher.source = TeacherSpec::grpo;
    else throw ConfigError("config.teacher.source must be none, checkpoint, hand-built or grpo");
    r.read("path", cfg.teacher.path);
    r.read("p_gold", cfg.teacher.p_gold);
    r.read("window", cfg.teacher.window);
    r.read("total_steps", cfg.teacher.total_steps);
    if (const json* o = r.find("optimizer")) read_optimizer(*o, "config.teacher.optimizer", cfg.teacher.optimizer);
    r.read("min_pass_rate", cfg.teacher.min_pass_rate);
    r.read("eval_samples", cfg.teacher.eval_samples);
    r.read("seed", cfg.teacher.seed);
    r.finish();
  }
  root.read("output_dir", cfg.output_dir);
  root.read("oracle_budget", cfg.oracle_budget);
  root.finish();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_run_config(doc);
}

ordered_json to_json(const RunConfig& cfg) {
  const TrainingConfig& tc = cfg.training;
  ordered_json j;
  ordered_json task;
  if (!cfg.task.dataset.empty()) task["dataset"] = cfg.task.dataset;
  task["kind"] = to_string(cfg.task.kind);
  task["vocab_size"] = cfg.task.vocab_size;
  task["count"] = cfg.task.count;
  task["seed"] = cfg.task.seed;
  task["prompt_length"] = cfg.task.prompt_length;
  j["task"] = task;
  j["policy"] = {{"kind", to_string(tc.policy.kind)}, {"window", tc.policy.window}};
  ordered_json obj;
  obj["mode"] = to_string(tc.objective.mode);
  obj["estimator"] = estimator_name(tc.objective.estimator);
  obj["mask"] = to_string(tc.objective.mask);
  obj["entropy_coef"] = tc.objective.entropy_coef;
  j["objective"] = obj;
  j["beta_schedule"] = to_string(tc.beta);
  j["group_size"] = tc.group_size;
  j["questions_per_step"] = tc.questions_per_step;
  j["max_response_length"] = tc.max_response_length;
  j["temperature"] = tc.temperature;
  j["optimizer"] = optimizer_json(tc.optimizer);
  j["total_steps"] = tc.total_steps;
  j["seed"] = tc.seed;
  j["ema_alpha"] = tc.ema_alpha;
  j["checkpoint_every"] = tc.checkpoint_every;
  j["sft_reject_filter"] = tc.sft_reject_filter;
  ordered_json t;
  t["source"] = teacher_source_name(cfg.teacher.source);
  if (cfg.teacher.source == TeacherSpec::checkpoint) t["path"] = cfg.teacher.path;
  t["p_gold"] = cfg.teacher.p_gold;
  t["window"] = cfg.teacher.window;
  t["total_steps"] = cfg.teacher.total_steps;
  t["optimizer"] = optimizer_json(cfg.teacher.optimizer);
  t["min_pass_rate"] = cfg.teacher.min_pass_rate;
  t["eval_samples"] = cfg.teacher.eval_samples;
  t["seed"] = cfg.teacher.seed;
  j["teacher"] = t;
  j["output_dir"] = cfg.output_dir;
  j["oracle_budget"] = cfg.oracle_budget;
  return j;
}

void validate(const RunConfig& cfg) {
  wrap("config", [&] { cfg.training.validate(); });
  const TaskSpec& t = cfg.task;
  if (t.dataset.empty()) {
    if (t.count < 1) throw ConfigError("config.task.count must be >= 1");
    if (t.prompt_length < 1) throw ConfigError("config.task.prompt_length must be >= 1");
    if (t.vocab_size < min_vocab_size(t.kind))
      throw ConfigError("config.task.vocab_size is too small for " + to_string(t.kind));
  }
  const TeacherSpec& teacher = cfg.teacher;
  if (cfg.training.objective.uses_teacher() && teacher.source == TeacherSpec::none)
    throw ConfigError("objective mode " + to_string(cfg.training.objective.mode) + " needs a teacher");
  if (teacher.source == TeacherSpec::checkpoint && teacher.path.empty())
    throw ConfigError("config.teacher.path is required for a checkpoint teacher");
  if (teacher.source == TeacherSpec::hand_built && !(teacher.p_gold > 0.0 && teacher.p_gold < 1.0))
    throw ConfigError("config.teacher.p_gold must be in (0, 1)");
  if (teacher.source == TeacherSpec::hand_built || teacher.source == TeacherSpec::grpo) {
    if (teacher.window < cfg.training.policy.window)
      throw ConfigError("teacher window must be >= the student's");
    if (teacher.window > PolicyParameters::kMaxWindow) throw ConfigError("teacher window must be <= 6");
  }
  if (teacher.total_steps < 0) throw ConfigError("config.teacher.total_steps must be >= 0");
  if (teacher.eval_samples < 1) throw ConfigError("config.teacher.eval_samples must be >= 1");
  if (!(teacher.min_pass_rate >= 0.0 && teacher.min_pass_rate <= 1.0))
    throw ConfigError("config.teacher.min_pass_rate must be in [0, 1]");
  if (!(cfg.oracle_budget >= 1.0)) throw ConfigError("config.oracle_budget must be >= 1");
}

void apply_overrides(RunConfig& cfg, const ConfigOverrides& o) {
  ObjectiveConfig& obj = cfg.training.objective;
  if (o.beta_schedule) cfg.training.beta = wrap("--beta-schedule", [&] { return parse_beta_schedule(*o.beta_schedule); });
  if (o.seed) cfg.training.seed = *o.seed;
  if (o.total_steps) cfg.training.total_steps = *o.total_steps;
  if (o.mode) obj.mode = wrap("--mode", [&] { return parse_objective_mode(*o.mode); });
  if (o.estimator)
    obj.estimator = wrap("--estimator", [&] {
      return *o.estimator == "topk" ? EstimatorKind{EstimatorKind::topk, 0} : parse_estimator(*o.estimator, 0);
    });
  if (o.mask) obj.mask = wrap("--mask", [&] { return parse_mask_mode(*o.mask); });
  if (o.output_dir) cfg.output_dir = *o.output_dir;
}

TaskInstance load_task(const TaskSpec& spec) {
  if (!spec.dataset.empty()) return load_dataset(spec.dataset);
  return generate_dataset(spec.kind, Vocabulary(spec.vocab_size), spec.count, spec.seed, spec.prompt_length);
}

TeacherPolicy load_teacher(const RunConfig& cfg, const TaskInstance& task) {
  const TeacherSpec& spec = cfg.teacher;
  switch (spec.source) {
    case TeacherSpec::none:
      return {};
    case TeacherSpec::checkpoint: {
      Checkpoint ck = load_checkpoint(spec.path);
      if (ck.params.vocab_size() != task.vocab.size())
        throw ConfigError("teacher checkpoint vocabulary does not match the task");
      return {std::make_shared<const PolicyParameters>(std::move(ck.params)),
              ck.provenance.value_or(TeacherProvenance::loaded)};
    }
    case TeacherSpec::hand_built:
    case TeacherSpec::grpo: {
      TeacherConfig tc;
      tc.source = spec.source == TeacherSpec::hand_built ? TeacherConfig::hand_built : TeacherConfig::grpo;
      tc.p_gold = spec.p_gold;
      tc.window = spec.window;
      tc.training = cfg.training;
      tc.training.total_steps = spec.total_steps;
      tc.training.optimizer = spec.optimizer;
      tc.training.seed = spec.seed;
      tc.training.objective.entropy_coef = cfg.training.objective.entropy_coef;
      tc.min_pass_rate = spec.min_pass_rate;
      tc.eval_samples = spec.eval_samples;
      tc.eval_seed = spec.seed;
      return build_teacher(task, tc, cfg.training.policy.shape(task.vocab.size(), cfg.training.max_response_length));
    }
  }
  return {};
}

std::filesystem::path resolve_output_dir(const std::string& dir) {
  std::filesystem::path p = dir.empty() ? std::filesystem::path("runs/latest") : std::filesystem::path(dir);
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv(kOutputRootEnv); root != nullptr && *root != '\0')
    return std::filesystem::path(root) / p;
  return p;
}

}  // namespace kdrl
