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

#include "kdrl/objectives.hpp"
#include "kdrl/optimizer.hpp"
#include "kdrl/policy.hpp"
#include "kdrl/schedule.hpp"
#include "kdrl/tasks.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace kdrl {

struct PolicyConfig {
  Parameterization kind = Parameterization::tabular;
  int window = 3;

  PolicyShape shape(int vocab_size, int max_response_length) const {
    return {kind, vocab_size, window, max_response_length};
  }
};

struct TrainingConfig {
  ObjectiveConfig objective;
  PolicyConfig policy;
  int group_size = 8;
  int questions_per_step = 8;
  int max_response_length = 12;
  double temperature = 1.0;
  OptimizerConfig optimizer;
  int total_steps = 300;
  BetaSchedule beta = BetaSchedule::make_constant(2e-3);
  std::uint64_t seed = 0;
  double ema_alpha = 0.9;
  int checkpoint_every = 50;  // 0 disables periodic checkpoints
  bool sft_reject_filter = true;  // sft: train only on verified teacher samples

  void validate() const;
};

struct MetricsRecord {
  std::uint64_t step = 0;
  double reward = 0.0;
  double reward_ema = 0.0;
  double length = 0.0;
  double length_ema = 0.0;
  double clip_ratio = 0.0;
  double repetition_rate = 0.0;
  double kd_unmasked = 0.0;
  double entropy = 0.0;
  double beta = 0.0;
  double loss_total = 0.0;
  double loss_grpo = 0.0;
  double loss_kd = 0.0;
  double loss_entropy = 0.0;
  double degenerate_groups = 0.0;
};

// EMA state carried between steps: m <- alpha * m + (1 - alpha) * x, seeded
// with the first observation.
struct EmaState {
  double alpha = 0.9;
  std::optional<double> reward;
  std::optional<double> length;

  double update(std::optional<double>& slot, double x) const {
    slot = slot ? alpha * *slot + (1.0 - alpha) * x : x;
    return *slot;
  }
};

// True if the response's most frequent 4-gram occurs at least twice and its
// occurrences cover more than 25% of the tokens.
bool is_repetitive(std::span<const Token> tokens);

MetricsRecord compute_metrics(const Batch& batch, const LossReport& report, int max_length, EmaState& ema);

// Questions used at `step`: consecutive slices of a per-epoch seeded permutation.
std::vector<std::size_t> select_questions(std::size_t n_questions, int per_step, std::uint64_t step,
                                          std::uint64_t seed);

// Samples G responses per question from a snapshot of `params`, verifies
// them, scores with the teacher when the mode needs it, and fills
// advantages (shaped rewards in reward-shaping mode). The stream of
// trajectory (q, g) is derived from (seed, step, q, g).
Batch rollout_step(const PolicyParameters& params, const PolicyParameters* teacher,
                   std::span<const Question> questions, const Vocabulary& vocab, const TrainingConfig& config,
                   std::uint64_t step, double beta);

struct StepResult {
  LossReport loss;
  MetricsRecord metrics;
};

// Evaluates the objective, applies one optimizer update and reports
// metrics. Throws NonFiniteError (with a dump of the offending group) if
// the loss or gradient is not finite. `sft_batch` carries teacher samples
// in sft mode.
StepResult train_step(PolicyParameters& params, const Batch& batch, const PolicyParameters* teacher,
                      const TrainingConfig& config, double beta, Optimizer& optimizer, EmaState& ema,
                      std::uint64_t step, const Batch* sft_batch = nullptr);

struct TrainingSinks {
  std::ostream* metrics = nullptr;  // one JSON line per step
  std::function<void(const PolicyParameters&)> checkpoint;
};

struct TrainingResult {
  PolicyParameters params;
  std::vector<MetricsRecord> metrics;
};

TrainingResult run_training(const TrainingConfig& config, const TaskInstance& task, const TeacherPolicy* teacher,
                            const TrainingSinks& sinks = {});

struct TeacherConfig {
  enum Source { hand_built, grpo };
  Source source = grpo;
  double p_gold = 0.9;            // hand_built
  int window = 3;                 // tabular window of the teacher
  TrainingConfig training;        // grpo: objective mode is forced to grpo-only
  double min_pass_rate = 0.5;     // weak-teacher guard
  int eval_samples = 16;
  std::uint64_t eval_seed = 0;
};

class WeakTeacherError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Mean pass rate of `policy` over the task's questions.
double mean_pass_rate(const PolicyParameters& policy, const TaskInstance& task, int n_samples,
                      const SamplerSettings& settings, std::uint64_t seed);

// Builds and freezes a teacher. `student_shape`, when given, must not have
// more capacity (window) than the teacher.
TeacherPolicy build_teacher(const TaskInstance& task, const TeacherConfig& config,
                            const std::optional<PolicyShape>& student_shape = std::nullopt);

std::string metrics_to_json_line(const MetricsRecord& m);

}  // namespace kdrl
