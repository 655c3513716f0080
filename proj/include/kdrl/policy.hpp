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

#include "kdrl/random.hpp"
#include "kdrl/tasks.hpp"
#include "kdrl/types.hpp"

#include <array>
#include <memory>
#include <optional>
#include <span>
#include <string>

namespace kdrl {

enum class Parameterization { tabular, linear_head };

std::string to_string(Parameterization kind);
Parameterization parse_parameterization(const std::string& name);

struct PolicyShape {
  Parameterization kind = Parameterization::tabular;
  int vocab_size = 3;
  int window = 3;     // tokens of history visible to the policy
  int positions = 1;  // response positions with their own bucket; later ones share the last

  friend bool operator==(const PolicyShape&, const PolicyShape&) = default;
};

// The policy's view of a decoding state: `history` is the prompt followed by
// the response prefix; `position` is the prefix length.
struct Context {
  std::span<const Token> history;
  int position = 0;
};

// Rows of the weight matrix whose sum gives the logits for one context.
// Tabular policies activate one row per (window, position) bucket; the linear
// head activates one row per window slot, one position row and a bias row.
struct ActiveRows {
  static constexpr int kCapacity = 10;
  std::array<int, kCapacity> rows{};
  int count = 0;

  void push(int r) { rows[count++] = r; }
  const int* begin() const { return rows.data(); }
  const int* end() const { return rows.data() + count; }
};

class PolicyParameters {
 public:
  static constexpr int kMaxWindow = 6;

  explicit PolicyParameters(const PolicyShape& shape);
  PolicyParameters(const PolicyShape& shape, MatrixXd weights);

  const PolicyShape& shape() const { return shape_; }
  int vocab_size() const { return shape_.vocab_size; }
  const MatrixXd& weights() const { return weights_; }
  MatrixXd& weights() { return weights_; }

  // Number of weight rows required by `shape`.
  static Eigen::Index rows_for(const PolicyShape& shape);

  ActiveRows active_rows(const Context& ctx) const;
  VectorXd logits(const Context& ctx) const;

  // Throws std::invalid_argument if any weight is NaN or infinite.
  void check_finite() const;

  std::uint64_t step = 0;

 private:
  PolicyShape shape_;
  MatrixXd weights_;
};

// Frozen copy used for rollouts (the "old" policy of the importance ratio).
using PolicySnapshot = std::shared_ptr<const PolicyParameters>;

inline PolicySnapshot make_snapshot(const PolicyParameters& params) {
  return std::make_shared<const PolicyParameters>(params);
}

enum class TeacherProvenance { hand_built, grpo_trained, loaded };

std::string to_string(TeacherProvenance p);

struct TeacherPolicy {
  std::shared_ptr<const PolicyParameters> params;
  TeacherProvenance provenance = TeacherProvenance::hand_built;
};

// Probabilities of the next token; temperature 0 is a point mass on the
// argmax (lowest id on ties).
VectorXd distribution(const PolicyParameters& params, const Context& ctx, double temperature = 1.0);

double log_prob(const PolicyParameters& params, const Context& ctx, Token token,
                double temperature = 1.0);

// Gradient of log pi(token | ctx) at temperature 1, shaped like the weights.
MatrixXd log_prob_grad(const PolicyParameters& params, const Context& ctx, Token token);

// grad += coeff * d log pi(token | ctx) / d weights, given p = distribution(ctx).
void accumulate_log_prob_grad(const PolicyParameters& params, const Context& ctx, Token token,
                              const VectorXd& p, double coeff, MatrixXd& grad);

// grad += chain rule of a logit-space gradient `dlogits` at ctx.
void accumulate_logit_grad(const PolicyParameters& params, const Context& ctx,
                           const VectorXd& dlogits, MatrixXd& grad);

struct Trajectory {
  std::string question_id;
  TokenSeq prompt;
  TokenSeq tokens;
  // Temperature-1 log-probabilities of the sampled tokens under the snapshot.
  std::vector<double> student_logp;
  std::optional<std::vector<double>> teacher_logp;
  // Row t is the snapshot's temperature-1 distribution at step t.
  MatrixXd student_dist;
  int reward = 0;
  int format_ok = 0;
  int answer_ok = 0;
  double shaped_reward = 0.0;
  bool truncated = false;

  int length() const { return static_cast<int>(tokens.size()); }

  // History (prompt + full response); step t's context is its first
  // prompt.size() + t tokens.
  TokenSeq history() const;
};

// Autoregressive sampling until end-of-sequence or max_len tokens.
Trajectory sample_sequence(const PolicyParameters& snapshot, const Question& question,
                           int max_len, double temperature, RngStream& rng);

// Fills teacher log-probs along the trajectory's own token path.
Trajectory score_with_teacher(Trajectory trajectory, const PolicyParameters& teacher);

// Tabular teacher that, for every question in `instance`, emits the
// delimiter, then the gold answer with probability p_gold (remaining mass
// spread over other tokens), then end-of-sequence. Needs window >=
// prompt length + 1.
PolicyParameters hand_built_teacher(const TaskInstance& instance, int window, int positions,
                                    double p_gold);

}  // namespace kdrl
