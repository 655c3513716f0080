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

#include "kdrl/io.hpp"
#include "kdrl/oracle.hpp"
#include "kdrl/trainer.hpp"

#include <gtest/gtest.h>

#include <set>
#include <sstream>

namespace kdrl {
namespace {

TaskInstance small_task(int count = 6) {
  return generate_dataset(TaskKind::modular_sum, Vocabulary(6), count, 3);
}

TrainingConfig small_config(ObjectiveMode mode = ObjectiveMode::grpo_only) {
  TrainingConfig c;
  c.objective.mode = mode;
  c.group_size = 4;
  c.questions_per_step = 3;
  c.max_response_length = 6;
  c.total_steps = 5;
  c.optimizer = OptimizerConfig{OptimizerKind::adam, 0.05};
  c.checkpoint_every = 0;
  return c;
}

TeacherPolicy hand_teacher(const TaskInstance& task, int positions = 6) {
  return {std::make_shared<const PolicyParameters>(hand_built_teacher(task, 3, positions, 0.9)),
          TeacherProvenance::hand_built};
}

TEST(Rollout, CountsAndDeterminism) {
  const TaskInstance task = small_task();
  const TrainingConfig cfg = small_config();
  const PolicyParameters p(cfg.policy.shape(6, cfg.max_response_length));
  const Batch a = rollout_step(p, nullptr, task.questions, task.vocab, cfg, 3, 0.0);
  const Batch b = rollout_step(p, nullptr, task.questions, task.vocab, cfg, 3, 0.0);
  ASSERT_EQ(a.size(), task.questions.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a[i].size(), cfg.group_size);
    EXPECT_EQ(a[i].advantages.size(), cfg.group_size);
    for (int g = 0; g < cfg.group_size; ++g) {
      const Trajectory& t = a[i].trajectories[g];
      EXPECT_EQ(t.tokens, b[i].trajectories[g].tokens);
      EXPECT_LE(t.length(), cfg.max_response_length);
      EXPECT_FALSE(t.teacher_logp.has_value());
      EXPECT_EQ(t.reward, verify(t.tokens, task.questions[i], task.vocab).reward());
    }
  }
  const Batch c = rollout_step(p, nullptr, task.questions, task.vocab, cfg, 4, 0.0);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (int g = 0; g < cfg.group_size; ++g) differs |= a[i].trajectories[g].tokens != c[i].trajectories[g].tokens;
  EXPECT_TRUE(differs);
}

TEST(Rollout, TeacherScoresOnlyWhenNeeded) {
  const TaskInstance task = small_task();
  const TeacherPolicy teacher = hand_teacher(task);
  TrainingConfig cfg = small_config(ObjectiveMode::joint_kdrl);
  const PolicyParameters p(cfg.policy.shape(6, cfg.max_response_length));
  const Batch scored = rollout_step(p, teacher.params.get(), task.questions, task.vocab, cfg, 0, 2e-3);
  for (const RolloutGroup& g : scored)
    for (const Trajectory& t : g.trajectories) ASSERT_EQ(t.teacher_logp->size(), t.tokens.size());
  EXPECT_THROW(rollout_step(p, nullptr, task.questions, task.vocab, cfg, 0, 2e-3), std::invalid_argument);
}

TEST(Rollout, ShapedRewardsDriveAdvantages) {
  const TaskInstance task = small_task();
  const TeacherPolicy teacher = hand_teacher(task);
  TrainingConfig cfg = small_config(ObjectiveMode::reward_shaping);
  const PolicyParameters p(cfg.policy.shape(6, cfg.max_response_length));
  const Batch b = rollout_step(p, teacher.params.get(), task.questions, task.vocab, cfg, 0, 0.5);
  for (const RolloutGroup& g : b) {
    VectorXd shaped(g.size());
    for (int i = 0; i < g.size(); ++i) {
      const Trajectory& t = g.trajectories[i];
      double s = 0.0;
      for (int k = 0; k < t.length(); ++k) s += (*t.teacher_logp)[k] - t.student_logp[k];
      EXPECT_DOUBLE_EQ(t.shaped_reward, t.reward + 0.5 * s);
      shaped(i) = t.shaped_reward;
    }
    EXPECT_EQ(g.advantages, group_advantages(shaped).values);
  }
}

TEST(SelectQuestions, EpochsArePermutations) {
  std::multiset<std::size_t> seen;
  for (std::uint64_t s = 0; s < 4; ++s)
    for (std::size_t i : select_questions(6, 3, s, 9)) seen.insert(i);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(seen.count(i), 2u);
  EXPECT_EQ(select_questions(6, 3, 1, 9), select_questions(6, 3, 1, 9));
  EXPECT_THROW(select_questions(0, 1, 0, 0), std::invalid_argument);
}

TEST(TrainStep, DegenerateBatchOnlyMovesByEntropy) {
  const TaskInstance task = small_task(2);
  TrainingConfig cfg = small_config();
  cfg.optimizer = OptimizerConfig{OptimizerKind::sgd, 0.1};
  cfg.objective.entropy_coef = 0.0;
  PolicyParameters p(cfg.policy.shape(6, cfg.max_response_length));
  Batch b = rollout_step(p, nullptr, task.questions, task.vocab, cfg, 0, 0.0);
  for (RolloutGroup& g : b) {
    g.advantages.setZero();
    g.degenerate = true;
  }
  const MatrixXd before = p.weights();
  Optimizer opt(cfg.optimizer);
  EmaState ema;
  const StepResult r = train_step(p, b, nullptr, cfg, 0.0, opt, ema, 0);
  EXPECT_EQ(p.weights(), before);
  EXPECT_EQ(r.metrics.degenerate_groups, 1.0);
  EXPECT_EQ(p.step, 1u);

  cfg.objective.entropy_coef = 1e-2;
  PolicyParameters q = random_policy(p.shape(), 1.0, 5);
  const MatrixXd q0 = q.weights();
  Optimizer opt2(cfg.optimizer);
  const StepResult r2 = train_step(q, b, nullptr, cfg, 0.0, opt2, ema, 0);
  EXPECT_EQ(r2.loss.grpo, 0.0);
  EXPECT_LT(r2.loss.entropy, 0.0);
  EXPECT_NE(q.weights(), q0);
}

TEST(TrainStep, NonFiniteGradientNamesTheGroup) {
  const TaskInstance task = small_task(2);
  TrainingConfig cfg = small_config();
  PolicyParameters p(cfg.policy.shape(6, cfg.max_response_length));
  Batch b = rollout_step(p, nullptr, task.questions, task.vocab, cfg, 0, 0.0);
  b[1].advantages(0) = std::numeric_limits<double>::quiet_NaN();
  Optimizer opt(cfg.optimizer);
  EmaState ema;
  try {
    train_step(p, b, nullptr, cfg, 0.0, opt, ema, 7);
    FAIL() << "expected NonFiniteError";
  } catch (const NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find(b[1].question_id), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("step 7"), std::string::npos);
  }
}

TEST(Metrics, ClipRatioAndEma) {
  const PolicyParameters p(PolicyShape{Parameterization::tabular, 5, 3, 3});
  RolloutGroup g;
  for (int i = 0; i < 4; ++i) {
    Trajectory t;
    t.tokens = i == 0 ? TokenSeq{0, 1, 2} : TokenSeq{3, 4};
    t.truncated = i == 0;
    t.reward = i % 2;
    g.trajectories.push_back(t);
  }
  g.advantages = VectorXd::Zero(4);
  LossReport loss;
  EmaState ema{0.5, {}, {}};
  const MetricsRecord m1 = compute_metrics(Batch{g}, loss, 3, ema);
  EXPECT_DOUBLE_EQ(m1.clip_ratio, 0.25);
  EXPECT_DOUBLE_EQ(m1.reward, 0.5);
  EXPECT_DOUBLE_EQ(m1.reward_ema, 0.5);
  EXPECT_DOUBLE_EQ(m1.length, 2.25);
  for (Trajectory& t : g.trajectories) t.reward = 1;
  const MetricsRecord m2 = compute_metrics(Batch{g}, loss, 3, ema);
  EXPECT_DOUBLE_EQ(m2.reward_ema, 0.75);
}

TEST(Metrics, Repetition) {
  const TokenSeq loop{1, 2, 3, 4, 1, 2, 3, 4, 1, 2};
  EXPECT_TRUE(is_repetitive(loop));
  const TokenSeq once{1, 2, 3, 4, 5};
  EXPECT_FALSE(is_repetitive(once));
  EXPECT_FALSE(is_repetitive(TokenSeq{1, 2}));
  const TokenSeq sparse{1, 2, 3, 4, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23, 24, 25, 26, 27, 28};
  EXPECT_FALSE(is_repetitive(sparse));
}

TEST(Training, DeterministicAndRecordsBeta) {
  const TaskInstance task = small_task();
  TrainingConfig cfg = small_config(ObjectiveMode::joint_kdrl);
  cfg.beta = BetaSchedule::make_linear(5e-3, 1e-3, 2e-3);
  const TeacherPolicy teacher = hand_teacher(task);
  const std::uint64_t teacher_hash = fingerprint(*teacher.params);
  std::ostringstream log_a, log_b;
  const TrainingResult a = run_training(cfg, task, &teacher, {&log_a, {}});
  const TrainingResult b = run_training(cfg, task, &teacher, {&log_b, {}});
  EXPECT_EQ(a.params.weights(), b.params.weights());
  EXPECT_EQ(log_a.str(), log_b.str());
  EXPECT_EQ(fingerprint(*teacher.params), teacher_hash);
  ASSERT_EQ(a.metrics.size(), 5u);
  for (std::size_t s = 0; s < a.metrics.size(); ++s) {
    EXPECT_EQ(a.metrics[s].step, s);
    EXPECT_DOUBLE_EQ(a.metrics[s].beta, beta_at(cfg.beta, s));
    const MetricsRecord& m = a.metrics[s];
    EXPECT_NEAR(m.loss_total, m.loss_grpo + m.beta * m.loss_kd + m.loss_entropy, 1e-12);
  }
  EXPECT_EQ(a.params.step, 5u);
}

TEST(Training, CheckpointCadence) {
  const TaskInstance task = small_task();
  TrainingConfig cfg = small_config();
  cfg.checkpoint_every = 2;
  std::vector<std::uint64_t> steps;
  run_training(cfg, task, nullptr, {nullptr, [&](const PolicyParameters& p) { steps.push_back(p.step); }});
  EXPECT_EQ(steps, (std::vector<std::uint64_t>{2, 4, 5}));
}

TEST(Training, TeacherRequiredWhenUsed) {
  const TaskInstance task = small_task();
  EXPECT_THROW(run_training(small_config(ObjectiveMode::rkl_only), task, nullptr), std::invalid_argument);
  EXPECT_THROW(run_training(small_config(ObjectiveMode::sft), task, nullptr), std::invalid_argument);
}

TEST(Training, GrpoImprovesReward) {
  const TaskInstance task = small_task();
  TrainingConfig cfg = small_config();
  cfg.total_steps = 150;
  const TrainingResult r = run_training(cfg, task, nullptr);
  const SamplerSettings s{cfg.max_response_length, 1.0};
  const PolicyParameters base(r.params.shape());
  EXPECT_GT(mean_pass_rate(r.params, task, 32, s, 0), mean_pass_rate(base, task, 32, s, 0) + 0.3);
}

TEST(Teacher, HandBuiltPassesGuard) {
  const TaskInstance task = small_task();
  TeacherConfig tc;
  tc.source = TeacherConfig::hand_built;
  tc.training.max_response_length = 6;
  const TeacherPolicy t = build_teacher(task, tc);
  EXPECT_EQ(t.provenance, TeacherProvenance::hand_built);
  EXPECT_GT(mean_pass_rate(*t.params, task, 64, {6, 1.0}, 1), 0.8);
}

TEST(Teacher, WeakTeacherRejected) {
  const TaskInstance task = small_task();
  TeacherConfig tc;
  tc.source = TeacherConfig::hand_built;
  tc.p_gold = 0.2;
  tc.training.max_response_length = 6;
  EXPECT_THROW(build_teacher(task, tc), WeakTeacherError);
  tc.p_gold = 0.9;
  EXPECT_THROW(build_teacher(task, tc, PolicyShape{Parameterization::tabular, 6, 4, 6}), std::invalid_argument);
}

TEST(Teacher, GrpoTeacherBeatsBase) {
  const TaskInstance task = small_task();
  TeacherConfig tc;
  tc.source = TeacherConfig::grpo;
  tc.training = small_config();
  tc.training.total_steps = 150;
  const TeacherPolicy t = build_teacher(task, tc);
  EXPECT_EQ(t.provenance, TeacherProvenance::grpo_trained);
  const PolicyParameters base(t.params->shape());
  EXPECT_GT(mean_pass_rate(*t.params, task, 32, {6, 1.0}, 0), mean_pass_rate(base, task, 32, {6, 1.0}, 0));
}

}  // namespace
}  // namespace kdrl
