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

#include "kdrl/trainer.hpp"

#include "kdrl/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

namespace kdrl {

void TrainingConfig::validate() const {
  objective.validate();
  optimizer.validate();
  if (group_size < 2) throw std::invalid_argument("group_size must be >= 2");
  if (questions_per_step < 1) throw std::invalid_argument("questions_per_step must be >= 1");
  if (max_response_length < 1) throw std::invalid_argument("max_response_length must be >= 1");
  if (!(temperature >= 0.0)) throw std::invalid_argument("temperature must be >= 0");
  if (!(optimizer.learning_rate > 0.0)) throw std::invalid_argument("learning rate must be > 0");
  if (total_steps < 0) throw std::invalid_argument("total_steps must be >= 0");
  if (!(ema_alpha >= 0.0 && ema_alpha < 1.0)) throw std::invalid_argument("ema_alpha must be in [0, 1)");
  if (checkpoint_every < 0) throw std::invalid_argument("checkpoint_every must be >= 0");
  if (policy.window < 1 || policy.window > PolicyParameters::kMaxWindow)
    throw std::invalid_argument("policy window must be in [1, 6]");
}

bool is_repetitive(std::span<const Token> tokens) {
  const auto n = tokens.size();
  if (n < 4) return false;
  std::map<std::array<Token, 4>, std::vector<std::size_t>> starts;
  for (std::size_t i = 0; i + 4 <= n; ++i)
    starts[{tokens[i], tokens[i + 1], tokens[i + 2], tokens[i + 3]}].push_back(i);
  std::size_t best_count = 0, best_cover = 0;
  for (const auto& [gram, pos] : starts) {
    std::vector<char> covered(n, 0);
    for (std::size_t s : pos) std::fill(covered.begin() + s, covered.begin() + s + 4, 1);
    const auto cover = static_cast<std::size_t>(std::count(covered.begin(), covered.end(), 1));
    if (pos.size() > best_count || (pos.size() == best_count && cover > best_cover)) {
      best_count = pos.size();
      best_cover = cover;
    }
  }
  return best_count >= 2 && static_cast<double>(best_cover) > 0.25 * static_cast<double>(n);
}

MetricsRecord compute_metrics(const Batch& batch, const LossReport& report, int max_length, EmaState& ema) {
  MetricsRecord m;
  std::size_t total = 0, truncated = 0, repetitive = 0, degenerate = 0;
  double reward = 0.0, length = 0.0;
  for (const RolloutGroup& g : batch) {
    degenerate += g.degenerate ? 1 : 0;
    for (const Trajectory& t : g.trajectories) {
      ++total;
      reward += t.reward;
      length += std::min(t.length(), max_length);
      if (t.truncated) {
        ++truncated;
        repetitive += is_repetitive(t.tokens) ? 1 : 0;
      }
    }
  }
  if (total == 0) throw std::invalid_argument("compute_metrics needs a nonempty batch");
  m.reward = reward / static_cast<double>(total);
  m.length = length / static_cast<double>(total);
  m.clip_ratio = static_cast<double>(truncated) / static_cast<double>(total);
  m.repetition_rate = truncated == 0 ? 0.0 : static_cast<double>(repetitive) / static_cast<double>(truncated);
  m.degenerate_groups = batch.empty() ? 0.0 : static_cast<double>(degenerate) / static_cast<double>(batch.size());
  m.kd_unmasked = report.kd_unmasked_mean();
  m.entropy = report.mean_entropy;
  m.beta = report.beta;
  m.loss_total = report.total;
  m.loss_grpo = report.grpo;
  m.loss_kd = report.kd;
  m.loss_entropy = report.entropy;
  m.reward_ema = ema.update(ema.reward, m.reward);
  m.length_ema = ema.update(ema.length, m.length);
  return m;
}

std::vector<std::size_t> select_questions(std::size_t n_questions, int per_step, std::uint64_t step,
                                          std::uint64_t seed) {
  if (n_questions == 0) throw std::invalid_argument("no questions to train on");
  std::vector<std::size_t> out;
  out.reserve(per_step);
  const std::uint64_t first = step * static_cast<std::uint64_t>(per_step);
  std::uint64_t cached_epoch = ~0ULL;
  std::vector<std::size_t> order(n_questions);
  for (int k = 0; k < per_step; ++k) {
    const std::uint64_t flat = first + k;
    const std::uint64_t epoch = flat / n_questions;
    if (epoch != cached_epoch) {
      std::iota(order.begin(), order.end(), 0);
      RngStream rng(seed, {0x5e1ec7, epoch});
      for (std::size_t i = n_questions; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
      cached_epoch = epoch;
    }
    out.push_back(order[flat % n_questions]);
  }
  return out;
}

namespace {

bool mode_scores_with_teacher(ObjectiveMode mode) {
  return mode == ObjectiveMode::rkl_only || mode == ObjectiveMode::joint_kdrl ||
         mode == ObjectiveMode::reward_shaping;
}

void finish_group(RolloutGroup& group, const TrainingConfig& config, double beta) {
  std::vector<double> rewards;
  for (const Trajectory& t : group.trajectories) rewards.push_back(t.reward);
  if (config.objective.mode == ObjectiveMode::reward_shaping) {
    std::vector<double> sums;
    for (const Trajectory& t : group.trajectories) {
      double s = 0.0;
      for (int i = 0; i < t.length(); ++i) s += (*t.teacher_logp)[i] - t.student_logp[i];
      sums.push_back(s);
    }
    rewards = shape_rewards(rewards, sums, beta);
    for (std::size_t i = 0; i < rewards.size(); ++i) group.trajectories[i].shaped_reward = rewards[i];
  } else {
    for (Trajectory& t : group.trajectories) t.shaped_reward = t.reward;
  }
  const auto adv = group_advantages(Eigen::Map<const VectorXd>(rewards.data(), static_cast<Eigen::Index>(rewards.size())));
  group.advantages = adv.values;
  group.degenerate = adv.degenerate;
}

Batch sample_groups(const PolicyParameters& sampler, const PolicyParameters* teacher,
                    std::span<const Question> questions, const Vocabulary& vocab, const TrainingConfig& config,
                    std::uint64_t step, std::uint64_t stream_tag) {
  Batch batch;
  batch.reserve(questions.size());
  for (std::size_t qi = 0; qi < questions.size(); ++qi) {
    const Question& q = questions[qi];
    RolloutGroup group;
    group.question_id = q.id;
    for (int g = 0; g < config.group_size; ++g) {
      RngStream rng(config.seed, {stream_tag, step, qi, static_cast<std::uint64_t>(g)});
      Trajectory t = sample_sequence(sampler, q, config.max_response_length, config.temperature, rng);
      const VerifyResult v = verify(t.tokens, q, vocab);
      t.reward = v.reward();
      t.format_ok = v.format;
      t.answer_ok = v.accuracy;
      if (teacher != nullptr) t = score_with_teacher(std::move(t), *teacher);
      group.trajectories.push_back(std::move(t));
    }
    batch.push_back(std::move(group));
  }
  return batch;
}

std::string dump_group(const RolloutGroup& g) {
  nlohmann::ordered_json j;
  j["question_id"] = g.question_id;
  j["degenerate"] = g.degenerate;
  j["advantages"] = std::vector<double>(g.advantages.data(), g.advantages.data() + g.advantages.size());
  for (const Trajectory& t : g.trajectories) {
    nlohmann::ordered_json tj;
    tj["tokens"] = t.tokens;
    tj["reward"] = t.reward;
    tj["student_logp"] = t.student_logp;
    if (t.teacher_logp) tj["teacher_logp"] = *t.teacher_logp;
    j["trajectories"].push_back(tj);
  }
  return j.dump();
}

bool report_finite(const LossReport& r) { return std::isfinite(r.total) && r.gradient.allFinite(); }

}  // namespace

Batch rollout_step(const PolicyParameters& params, const PolicyParameters* teacher,
                   std::span<const Question> questions, const Vocabulary& vocab, const TrainingConfig& config,
                   std::uint64_t step, double beta) {
  const bool scored = mode_scores_with_teacher(config.objective.mode);
  if (scored && teacher == nullptr)
    throw std::invalid_argument("objective mode " + to_string(config.objective.mode) + " needs a teacher");
  const PolicySnapshot snapshot = make_snapshot(params);
  Batch batch = sample_groups(*snapshot, scored ? teacher : nullptr, questions, vocab, config, step, 0);
  for (RolloutGroup& g : batch) finish_group(g, config, beta);
  return batch;
}

StepResult train_step(PolicyParameters& params, const Batch& batch, const PolicyParameters* teacher,
                      const TrainingConfig& config, double beta, Optimizer& optimizer, EmaState& ema,
                      std::uint64_t step, const Batch* sft_batch) {
  if (batch.empty()) throw std::invalid_argument("train_step needs a nonempty batch");
  const bool sft = config.objective.mode == ObjectiveMode::sft;
  const Batch& loss_batch = sft && sft_batch != nullptr ? *sft_batch : batch;

  StepResult out;
  if (sft && batch_tokens(loss_batch) == 0) {
    out.loss.gradient = MatrixXd::Zero(params.weights().rows(), params.weights().cols());
    out.loss.mean_entropy = entropy_bonus(batch, params, 0.0).mean_entropy;
  } else {
    out.loss = evaluate_objective(loss_batch, params, teacher, config.objective, beta);
  }
  if (!report_finite(out.loss)) {
    std::string culprit = "unknown";
    for (const RolloutGroup& g : loss_batch) {
      const LossReport single = evaluate_objective(Batch{g}, params, teacher, config.objective, beta);
      if (!report_finite(single)) {
        culprit = dump_group(g);
        break;
      }
    }
    throw NonFiniteError("non-finite loss or gradient at step " + std::to_string(step) + "; group: " + culprit);
  }
  optimizer.step(params.weights(), out.loss.gradient);
  params.step = step + 1;
  out.metrics = compute_metrics(batch, out.loss, config.max_response_length, ema);
  out.metrics.step = step;
  out.metrics.beta = beta;
  return out;
}

std::string metrics_to_json_line(const MetricsRecord& m) {
  nlohmann::ordered_json j;
  j["step"] = m.step;
  j["reward"] = m.reward;
  j["reward_ema"] = m.reward_ema;
  j["length"] = m.length;
  j["length_ema"] = m.length_ema;
  j["clip_ratio"] = m.clip_ratio;
  j["repetition_rate"] = m.repetition_rate;
  j["kd_unmasked"] = m.kd_unmasked;
  j["entropy"] = m.entropy;
  j["beta"] = m.beta;
  j["loss_total"] = m.loss_total;
  j["loss_grpo"] = m.loss_grpo;
  j["loss_kd"] = m.loss_kd;
  j["loss_entropy"] = m.loss_entropy;
  j["degenerate_groups"] = m.degenerate_groups;
  return j.dump();
}

TrainingResult run_training(const TrainingConfig& config, const TaskInstance& task, const TeacherPolicy* teacher,
                            const TrainingSinks& sinks) {
  config.validate();
  if (task.questions.empty()) throw std::invalid_argument("task has no questions");
  const PolicyParameters* teacher_params = teacher != nullptr ? teacher->params.get() : nullptr;
  if (config.objective.uses_teacher() && teacher_params == nullptr)
    throw std::invalid_argument("objective mode " + to_string(config.objective.mode) + " needs a teacher");
  if (teacher_params != nullptr && teacher_params->vocab_size() != task.vocab.size())
    throw std::invalid_argument("teacher vocabulary differs from the task's");

  TrainingResult result{PolicyParameters(config.policy.shape(task.vocab.size(), config.max_response_length)), {}};
  PolicyParameters& params = result.params;
  Optimizer optimizer(config.optimizer);
  EmaState ema{config.ema_alpha, {}, {}};

  for (int s = 0; s < config.total_steps; ++s) {
    const auto step = static_cast<std::uint64_t>(s);
    const double beta = beta_at(config.beta, step);
    std::vector<Question> questions;
    for (std::size_t i : select_questions(task.questions.size(), config.questions_per_step, step, config.seed))
      questions.push_back(task.questions[i]);

    const Batch batch = rollout_step(params, teacher_params, questions, task.vocab, config, step, beta);
    Batch sft_batch;
    if (config.objective.mode == ObjectiveMode::sft) {
      sft_batch = sample_groups(*teacher_params, nullptr, questions, task.vocab, config, step, 1);
      if (config.sft_reject_filter)
        for (RolloutGroup& g : sft_batch)
          std::erase_if(g.trajectories, [](const Trajectory& t) { return t.reward == 0; });
    }
    const StepResult r = train_step(params, batch, teacher_params, config, beta, optimizer, ema, step, &sft_batch);
    result.metrics.push_back(r.metrics);
    if (sinks.metrics != nullptr) *sinks.metrics << metrics_to_json_line(r.metrics) << '\n' << std::flush;
    if (sinks.checkpoint && config.checkpoint_every > 0 && (s + 1) % config.checkpoint_every == 0)
      sinks.checkpoint(params);
  }
  const bool final_written = config.checkpoint_every > 0 && config.total_steps > 0 &&
                             config.total_steps % config.checkpoint_every == 0;
  if (sinks.checkpoint && !final_written) sinks.checkpoint(params);
  return result;
}

double mean_pass_rate(const PolicyParameters& policy, const TaskInstance& task, int n_samples,
                      const SamplerSettings& settings, std::uint64_t seed) {
  if (task.questions.empty()) throw std::invalid_argument("task has no questions");
  double sum = 0.0;
  for (std::size_t i = 0; i < task.questions.size(); ++i)
    sum += estimate_pass_rate(policy, task.questions[i], task.vocab, n_samples, settings, derive_seed(seed, {i}));
  return sum / static_cast<double>(task.questions.size());
}

TeacherPolicy build_teacher(const TaskInstance& task, const TeacherConfig& config,
                            const std::optional<PolicyShape>& student_shape) {
  if (student_shape && student_shape->window > config.window)
    throw std::invalid_argument("teacher window " + std::to_string(config.window) +
                                " is smaller than the student's " + std::to_string(student_shape->window));
  TeacherPolicy teacher;
  if (config.source == TeacherConfig::hand_built) {
    teacher.params = std::make_shared<const PolicyParameters>(
        hand_built_teacher(task, config.window, config.training.max_response_length, config.p_gold));
    teacher.provenance = TeacherProvenance::hand_built;
  } else {
    TrainingConfig tc = config.training;
    tc.objective.mode = ObjectiveMode::grpo_only;
    tc.objective.mask = MaskMode::none;
    tc.policy.window = config.window;
    TrainingResult trained = run_training(tc, task, nullptr);
    teacher.params = std::make_shared<const PolicyParameters>(std::move(trained.params));
    teacher.provenance = TeacherProvenance::grpo_trained;
  }
  const SamplerSettings eval{config.training.max_response_length, 1.0};
  const double rate = mean_pass_rate(*teacher.params, task, config.eval_samples, eval, config.eval_seed);
  if (rate < config.min_pass_rate)
    throw WeakTeacherError("teacher pass rate " + std::to_string(rate) + " is below the required " +
                           std::to_string(config.min_pass_rate) + " (" + to_string(teacher.provenance) + ")");
  return teacher;
}

}  // namespace kdrl
