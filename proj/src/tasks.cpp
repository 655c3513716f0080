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

#include "kdrl/tasks.hpp"

#include "kdrl/policy.hpp"
#include "kdrl/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

namespace kdrl {

Vocabulary::Vocabulary(int size) : size_(size) {
  if (size < 3) throw std::invalid_argument("vocabulary needs >= 3 tokens (content + delimiter + eos)");
}

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::modular_sum: return "modular-sum";
    case TaskKind::copy_last: return "copy-last";
    case TaskKind::parity: return "parity";
  }
  return "unknown";
}

TaskKind parse_task_kind(const std::string& name) {
  if (name == "modular-sum") return TaskKind::modular_sum;
  if (name == "copy-last") return TaskKind::copy_last;
  if (name == "parity") return TaskKind::parity;
  throw std::invalid_argument("unknown task kind '" + name + "'");
}

int min_vocab_size(TaskKind kind) {
  // modular-sum and parity need at least two content tokens.
  return kind == TaskKind::copy_last ? 3 : 4;
}

Token task_answer(TaskKind kind, const Vocabulary& vocab, std::span<const Token> prompt) {
  if (prompt.empty()) throw std::invalid_argument("prompt must contain at least one token");
  for (Token t : prompt)
    if (!vocab.is_content(t)) throw std::invalid_argument("prompt contains a reserved or invalid token");
  switch (kind) {
    case TaskKind::modular_sum:
      return std::accumulate(prompt.begin(), prompt.end(), 0) % vocab.content_size();
    case TaskKind::copy_last:
      return prompt.back();
    case TaskKind::parity: {
      int ones = 0;
      for (Token t : prompt) {
        if (t > 1) throw std::invalid_argument("parity prompts must be bits");
        ones += t;
      }
      return ones % 2;
    }
  }
  throw std::invalid_argument("unknown task kind");
}

TaskInstance generate_dataset(TaskKind kind, const Vocabulary& vocab, int count,
                              std::uint64_t seed, int prompt_length) {
  if (count < 1) throw std::invalid_argument("dataset count must be >= 1");
  if (prompt_length < 1) throw std::invalid_argument("prompt length must be >= 1");
  if (vocab.size() < min_vocab_size(kind))
    throw std::invalid_argument("vocabulary of size " + std::to_string(vocab.size()) +
                                " is too small for task " + to_string(kind));
  const int alphabet = kind == TaskKind::parity ? 2 : vocab.content_size();

  TaskInstance inst;
  inst.kind = kind;
  inst.vocab = vocab;
  inst.questions.reserve(count);
  RngStream rng(seed, {0x7a5c});
  for (int i = 0; i < count; ++i) {
    Question q;
    char id[16];
    std::snprintf(id, sizeof id, "q%04d", i);
    q.id = id;
    for (int j = 0; j < prompt_length; ++j)
      q.prompt.push_back(static_cast<Token>(rng.below(static_cast<std::uint64_t>(alphabet))));
    q.answer = task_answer(kind, vocab, q.prompt);
    inst.questions.push_back(std::move(q));
  }
  return inst;
}

VerifyResult verify(std::span<const Token> response, const Question& question,
                    const Vocabulary& vocab) {
  VerifyResult r;
  const auto delims = std::count(response.begin(), response.end(), vocab.delimiter());
  const bool terminated = !response.empty() && response.back() == vocab.eos();
  r.format = (delims == 1 && terminated) ? 1 : 0;
  const auto it = std::find(response.begin(), response.end(), vocab.delimiter());
  if (it != response.end() && std::next(it) != response.end() && *std::next(it) == question.answer)
    r.accuracy = 1;
  return r;
}

double estimate_pass_rate(const PolicyParameters& policy, const Question& question,
                          const Vocabulary& vocab, int n_samples,
                          const SamplerSettings& settings, std::uint64_t seed) {
  if (n_samples < 1) throw std::invalid_argument("n_samples must be >= 1");
  int passed = 0;
  for (int k = 0; k < n_samples; ++k) {
    RngStream rng(seed, {static_cast<std::uint64_t>(k)});
    const Trajectory t = sample_sequence(policy, question, settings.max_len, settings.temperature, rng);
    passed += verify(t.tokens, question, vocab).reward();
  }
  return static_cast<double>(passed) / n_samples;
}

TaskInstance filter_dataset(const TaskInstance& instance, const PolicyParameters& policy,
                            const FilterSettings& settings) {
  if (!(settings.easy_threshold >= 0.0) || !(settings.unsolved_cap >= 0.0 && settings.unsolved_cap <= 1.0))
    throw std::invalid_argument("filter thresholds must be in [0, 1]");

  std::vector<Question> solved, unsolved;
  for (std::size_t i = 0; i < instance.questions.size(); ++i) {
    Question q = instance.questions[i];
    q.pass_rate = estimate_pass_rate(policy, q, instance.vocab, settings.n_samples, settings.sampler,
                                     derive_seed(settings.seed, {i}));
    if (*q.pass_rate >= settings.easy_threshold) continue;
    (*q.pass_rate == 0.0 ? unsolved : solved).push_back(std::move(q));
  }

  std::size_t keep_unsolved = unsolved.size();
  if (settings.unsolved_cap < 1.0) {
    const double cap = settings.unsolved_cap;
    // Largest u with u / (u + solved) <= cap.
    keep_unsolved = std::min<std::size_t>(
        keep_unsolved,
        static_cast<std::size_t>(std::floor(cap * static_cast<double>(solved.size()) / (1.0 - cap) + 1e-9)));
  }
  std::sort(unsolved.begin(), unsolved.end(), [](const Question& a, const Question& b) { return a.id < b.id; });
  unsolved.resize(keep_unsolved);

  TaskInstance out{instance.kind, instance.vocab, {}};
  for (const Question& q : instance.questions) {
    auto match = [&](const Question& c) { return c.id == q.id; };
    if (auto it = std::find_if(solved.begin(), solved.end(), match); it != solved.end())
      out.questions.push_back(*it);
    else if (auto it2 = std::find_if(unsolved.begin(), unsolved.end(), match); it2 != unsolved.end())
      out.questions.push_back(*it2);
  }
  if (out.questions.empty()) throw EmptyDatasetError("filtering removed every question");
  return out;
}

}  // namespace kdrl
