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

#include "kdrl/types.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace kdrl {

class PolicyParameters;

// Token ids [0, size-2) are content tokens; the last two ids are the answer
// delimiter and end-of-sequence, in that order.
class Vocabulary {
 public:
  explicit Vocabulary(int size);

  int size() const { return size_; }
  int content_size() const { return size_ - 2; }
  Token delimiter() const { return size_ - 2; }
  Token eos() const { return size_ - 1; }
  bool is_content(Token t) const { return t >= 0 && t < size_ - 2; }
  bool is_valid(Token t) const { return t >= 0 && t < size_; }

  friend bool operator==(const Vocabulary&, const Vocabulary&) = default;

 private:
  int size_;
};

struct Question {
  std::string id;
  TokenSeq prompt;
  Token answer = 0;
  std::optional<double> pass_rate;  // difficulty tag, filled by filtering
};

enum class TaskKind { modular_sum, copy_last, parity };

std::string to_string(TaskKind kind);
TaskKind parse_task_kind(const std::string& name);

struct TaskInstance {
  TaskKind kind = TaskKind::modular_sum;
  Vocabulary vocab{3};
  std::vector<Question> questions;
};

// Gold answer of `prompt` under the task rule.
Token task_answer(TaskKind kind, const Vocabulary& vocab, std::span<const Token> prompt);

// Smallest vocabulary size the task can be posed in.
int min_vocab_size(TaskKind kind);

// Deterministic in `seed`. Prompts are `prompt_length` content tokens
// (bits 0/1 for parity). Ids are "q0000", "q0001", ...
TaskInstance generate_dataset(TaskKind kind, const Vocabulary& vocab, int count,
                              std::uint64_t seed, int prompt_length = 2);

struct VerifyResult {
  int format = 0;    // exactly one delimiter and terminated by end-of-sequence
  int accuracy = 0;  // token right after the delimiter is the gold answer
  int reward() const { return format * accuracy; }
};

VerifyResult verify(std::span<const Token> response, const Question& question,
                    const Vocabulary& vocab);

struct SamplerSettings {
  int max_len = 12;
  double temperature = 1.0;
};

// Fraction of `n_samples` responses with reward 1. Sample k draws from the
// stream derived from (seed, k).
double estimate_pass_rate(const PolicyParameters& policy, const Question& question,
                          const Vocabulary& vocab, int n_samples,
                          const SamplerSettings& settings, std::uint64_t seed);

struct FilterSettings {
  double easy_threshold = 15.0 / 16.0;
  double unsolved_cap = 0.10;
  int n_samples = 16;
  SamplerSettings sampler;
  std::uint64_t seed = 0;
};

class EmptyDatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Drops questions with pass rate >= easy_threshold, then keeps the
// lowest-id unsolved questions up to the cap. Retained questions carry their
// measured pass rate.
TaskInstance filter_dataset(const TaskInstance& instance, const PolicyParameters& policy,
                            const FilterSettings& settings);

}  // namespace kdrl
