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

#include "kdrl/oracle.hpp"
#include "kdrl/policy.hpp"
#include "kdrl/random.hpp"
#include "kdrl/tasks.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace kdrl {
namespace {

const Vocabulary kV8(8);  // delimiter 6, end 7

Question q_with_answer(Token answer) { return {"q", {1, 2}, answer, {}}; }

TEST(Vocabulary, ReservedIdsAreTheLastTwo) {
  EXPECT_EQ(kV8.delimiter(), 6);
  EXPECT_EQ(kV8.eos(), 7);
  EXPECT_EQ(kV8.content_size(), 6);
  EXPECT_THROW(Vocabulary(2), std::invalid_argument);
}

TEST(Verify, WellFormedCorrectResponseScoresOne) {
  const TokenSeq response{0, 1, 6, 3, 7};
  const VerifyResult r = verify(response, q_with_answer(3), kV8);
  EXPECT_EQ(r.format, 1);
  EXPECT_EQ(r.accuracy, 1);
  EXPECT_EQ(r.reward(), 1);
}

TEST(Verify, CorrectTokenWithoutDelimiterScoresZero) {
  const VerifyResult r = verify(TokenSeq{3, 7}, q_with_answer(3), kV8);
  EXPECT_EQ(r.format, 0);
  EXPECT_EQ(r.reward(), 0);
}

TEST(Verify, TruncatedResponseWithoutDelimiterScoresZero) {
  EXPECT_EQ(verify(TokenSeq{0, 1, 2, 3}, q_with_answer(3), kV8).reward(), 0);
}

TEST(Verify, TwoDelimitersFailFormat) {
  const VerifyResult r = verify(TokenSeq{6, 3, 6, 3, 7}, q_with_answer(3), kV8);
  EXPECT_EQ(r.format, 0);
  EXPECT_EQ(r.reward(), 0);
}

TEST(Verify, WrongAnswerFailsAccuracyOnly) {
  const VerifyResult r = verify(TokenSeq{6, 2, 7}, q_with_answer(3), kV8);
  EXPECT_EQ(r.format, 1);
  EXPECT_EQ(r.accuracy, 0);
}

TEST(Verify, ResponseMustEndWithEndToken) {
  EXPECT_EQ(verify(TokenSeq{6, 3}, q_with_answer(3), kV8).reward(), 0);
  EXPECT_EQ(verify(TokenSeq{6, 3, 1, 7}, q_with_answer(3), kV8).reward(), 1);
}

TEST(Verify, IsPureAndFactorizes) {
  RngStream rng(3, {});
  for (int i = 0; i < 2000; ++i) {
    TokenSeq resp(1 + rng.below(6));
    for (Token& t : resp) t = static_cast<Token>(rng.below(8));
    const Question q = q_with_answer(static_cast<Token>(rng.below(6)));
    const VerifyResult a = verify(resp, q, kV8), b = verify(resp, q, kV8);
    EXPECT_EQ(a.format, b.format);
    EXPECT_EQ(a.accuracy, b.accuracy);
    EXPECT_EQ(a.reward(), a.format * a.accuracy);
    EXPECT_TRUE(a.format == 0 || a.format == 1);
    EXPECT_TRUE(a.accuracy == 0 || a.accuracy == 1);
  }
}

TEST(TaskRule, Examples) {
  const Vocabulary v(8);
  EXPECT_EQ(task_answer(TaskKind::copy_last, v, TokenSeq{3, 5}), 5);
  EXPECT_EQ(task_answer(TaskKind::parity, v, TokenSeq{1, 0, 1}), 0);
  EXPECT_EQ(task_answer(TaskKind::parity, v, TokenSeq{1, 1, 1}), 1);
  EXPECT_EQ(task_answer(TaskKind::modular_sum, v, TokenSeq{4, 5}), 3);
}

TEST(GenerateDataset, IsDeterministic) {
  const TaskInstance a = generate_dataset(TaskKind::modular_sum, Vocabulary(8), 100, 7);
  const TaskInstance b = generate_dataset(TaskKind::modular_sum, Vocabulary(8), 100, 7);
  ASSERT_EQ(a.questions.size(), 100u);
  for (std::size_t i = 0; i < a.questions.size(); ++i) {
    EXPECT_EQ(a.questions[i].id, b.questions[i].id);
    EXPECT_EQ(a.questions[i].prompt, b.questions[i].prompt);
    EXPECT_EQ(a.questions[i].answer, b.questions[i].answer);
  }
  const TaskInstance c = generate_dataset(TaskKind::modular_sum, Vocabulary(8), 100, 8);
  bool differs = false;
  for (std::size_t i = 0; i < c.questions.size(); ++i) differs |= c.questions[i].prompt != a.questions[i].prompt;
  EXPECT_TRUE(differs);
}

TEST(GenerateDataset, AnswersFollowTheRuleForEveryKind) {
  for (TaskKind kind : {TaskKind::modular_sum, TaskKind::copy_last, TaskKind::parity}) {
    const Vocabulary v(6);
    const TaskInstance inst = generate_dataset(kind, v, 50, 11, 3);
    for (const Question& q : inst.questions) {
      EXPECT_EQ(q.answer, task_answer(kind, v, q.prompt));
      EXPECT_TRUE(v.is_content(q.answer));
      EXPECT_EQ(q.prompt.size(), 3u);
      for (Token t : q.prompt) EXPECT_TRUE(v.is_content(t));
    }
  }
}

TEST(GenerateDataset, RejectsTooSmallVocabularyAndZeroCount) {
  EXPECT_THROW(generate_dataset(TaskKind::parity, Vocabulary(3), 5, 1), std::invalid_argument);
  EXPECT_THROW(generate_dataset(TaskKind::modular_sum, Vocabulary(8), 0, 1), std::invalid_argument);
  EXPECT_NO_THROW(generate_dataset(TaskKind::copy_last, Vocabulary(3), 5, 1));
}

TaskInstance small_task() { return generate_dataset(TaskKind::modular_sum, Vocabulary(6), 12, 5); }

TEST(PassRate, GreedyPerfectPolicyScoresOne) {
  const TaskInstance task = small_task();
  const PolicyParameters teacher = hand_built_teacher(task, 3, 4, 0.9);
  for (const Question& q : task.questions)
    EXPECT_EQ(estimate_pass_rate(teacher, q, task.vocab, 16, SamplerSettings{6, 0.0}, 1), 1.0);
}

TEST(PassRate, SixteenSamplesGiveMultiplesOfOneSixteenth) {
  const TaskInstance task = small_task();
  const PolicyParameters teacher = hand_built_teacher(task, 3, 4, 0.6);
  for (const Question& q : task.questions) {
    const double r = estimate_pass_rate(teacher, q, task.vocab, 16, SamplerSettings{6, 1.0}, 9);
    EXPECT_DOUBLE_EQ(r * 16.0, std::round(r * 16.0));
    EXPECT_EQ(r, estimate_pass_rate(teacher, q, task.vocab, 16, SamplerSettings{6, 1.0}, 9));
  }
}

TEST(PassRate, UniformPolicyMatchesEnumeratedSuccessProbability) {
  const Vocabulary v(4);
  const Question q{"u", {0, 1}, 1, {}};
  const PolicyParameters uniform(PolicyShape{Parameterization::tabular, 4, 2, 4});
  double exact = 0.0;
  for (const EnumeratedSequence& e : enumerate(uniform, q, 4).sequences)
    exact += verify(e.tokens, q, v).reward() * e.prob;
  const int n = 100000;
  const double rate = estimate_pass_rate(uniform, q, v, n, SamplerSettings{4, 1.0}, 21);
  const double se = std::sqrt(exact * (1.0 - exact) / n);
  EXPECT_GT(exact, 0.0);
  EXPECT_LE(std::abs(rate - exact), 3.0 * se);
}

TEST(Filter, NoOpThresholdsKeepEverything) {
  const TaskInstance task = small_task();
  const PolicyParameters teacher = hand_built_teacher(task, 3, 4, 0.5);
  FilterSettings fs;
  fs.easy_threshold = 1.1;
  fs.unsolved_cap = 1.0;
  fs.sampler = {6, 1.0};
  const TaskInstance out = filter_dataset(task, teacher, fs);
  ASSERT_EQ(out.questions.size(), task.questions.size());
  for (std::size_t i = 0; i < out.questions.size(); ++i) {
    EXPECT_EQ(out.questions[i].id, task.questions[i].id);
    EXPECT_EQ(out.questions[i].prompt, task.questions[i].prompt);
    ASSERT_TRUE(out.questions[i].pass_rate.has_value());
  }
}

TEST(Filter, DropsEasyAndCapsUnsolved) {
  const TaskInstance task = generate_dataset(TaskKind::modular_sum, Vocabulary(6), 60, 3);
  for (double p_gold : {0.3, 0.6, 0.9}) {
    // Half the questions get the hand-built teacher's answer rows, the rest are untouched (uniform).
    TaskInstance half{task.kind, task.vocab, {task.questions.begin(), task.questions.begin() + 30}};
    const PolicyParameters policy = hand_built_teacher(half, 3, 4, p_gold);
    FilterSettings fs;
    fs.sampler = {6, 1.0};
    fs.seed = 4;
    const TaskInstance out = filter_dataset(task, policy, fs);
    int unsolved = 0;
    for (const Question& q : out.questions) {
      EXPECT_LT(*q.pass_rate, fs.easy_threshold);
      unsolved += *q.pass_rate == 0.0 ? 1 : 0;
    }
    const double n = static_cast<double>(out.questions.size());
    EXPECT_LE(unsolved / n, fs.unsolved_cap + 1.0 / n);
  }
}

TEST(Filter, UnsolvedQuestionsAreKeptInIdOrder) {
  const TaskInstance task = generate_dataset(TaskKind::modular_sum, Vocabulary(6), 40, 3);
  TaskInstance half{task.kind, task.vocab, {task.questions.begin(), task.questions.begin() + 20}};
  const PolicyParameters policy = hand_built_teacher(half, 3, 4, 0.5);
  FilterSettings fs;
  fs.sampler = {6, 1.0};
  fs.unsolved_cap = 0.2;
  const TaskInstance out = filter_dataset(task, policy, fs);
  std::vector<std::string> unsolved;
  for (const Question& q : out.questions)
    if (*q.pass_rate == 0.0) unsolved.push_back(q.id);
  std::vector<std::string> all_unsolved;
  for (std::size_t i = 0; i < task.questions.size(); ++i) {
    const double r = estimate_pass_rate(policy, task.questions[i], task.vocab, fs.n_samples, fs.sampler,
                                        derive_seed(fs.seed, {i}));
    if (r == 0.0) all_unsolved.push_back(task.questions[i].id);
  }
  ASSERT_LE(unsolved.size(), all_unsolved.size());
  EXPECT_TRUE(std::equal(unsolved.begin(), unsolved.end(), all_unsolved.begin()));
}

TEST(Filter, RemovingEverythingIsAnError) {
  const TaskInstance task = small_task();
  const PolicyParameters teacher = hand_built_teacher(task, 3, 4, 0.9);
  FilterSettings fs;
  fs.sampler = {6, 0.0};
  EXPECT_THROW(filter_dataset(task, teacher, fs), EmptyDatasetError);
}

}  // namespace
}  // namespace kdrl
