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

// Brute-force references on tiny instances: exhaustive sequence
// enumeration, exact reverse KL and its gradients, finite differences and a
// Monte-Carlo harness for the per-token estimators.

#include "kdrl/estimators.hpp"
#include "kdrl/policy.hpp"
#include "kdrl/tasks.hpp"
#include "kdrl/types.hpp"

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace kdrl {

inline constexpr double kDefaultEnumerationBudget = 1e6;

class BudgetExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EnumeratedSequence {
  TokenSeq tokens;
  double prob = 0.0;
  double log_prob = 0.0;
  bool truncated = false;
};

// Every response that ends in end-of-sequence or reaches max_len, with its
// exact probability under the policy (temperature 1).
struct EnumerationSpace {
  int vocab_size = 0;
  int max_len = 0;
  std::vector<EnumeratedSequence> sequences;

  double total_probability() const;
};

EnumerationSpace enumerate(const PolicyParameters& policy, const Question& question, int max_len,
                           double budget = kDefaultEnumerationBudget);

struct ExactRkl {
  double value = 0.0;
  // Entry t: expected full-vocabulary KL at response position t, weighted by
  // the probability of reaching each prefix. Sums to `value`.
  std::vector<double> per_position;
};

// KL(student || teacher) over whole responses. Teacher probabilities are
// floored at kTeacherFloor inside logarithms.
ExactRkl exact_rkl(const PolicyParameters& student, const PolicyParameters& teacher, const Question& question,
                   int max_len, double budget = kDefaultEnumerationBudget);

// Gradient of exact_rkl with respect to the student weights:
// sum_o pi(o) * (-R(o)) * grad log pi(o).
MatrixXd exact_rkl_grad(const PolicyParameters& student, const PolicyParameters& teacher,
                        const Question& question, int max_len, double budget = kDefaultEnumerationBudget);

// Gradient of sum_t E[KL_t] with the prefix distribution held fixed; this is
// what the per-token k2 estimator averages to.
MatrixXd exact_token_rkl_grad(const PolicyParameters& student, const PolicyParameters& teacher,
                              const Question& question, int max_len,
                              double budget = kDefaultEnumerationBudget);

// Central differences of `f` at `params` over the given rows (all rows if empty).
MatrixXd finite_difference(const PolicyParameters& params,
                           const std::function<double(const PolicyParameters&)>& f, double h,
                           const std::vector<int>& rows = {});

// Single-step instance: student softmax(logits) vs fixed teacher probabilities.
struct CategoricalPair {
  VectorXd student_logits;
  VectorXd teacher_probs;

  VectorXd student_probs() const;
};

double exact_kl(const CategoricalPair& pair);
VectorXd exact_kl_logit_grad(const CategoricalPair& pair);

// Exact expectations of an estimator's value and logit-gradient sample
// under the student (k1 uses the score-function gradient -R * grad log p).
struct EstimatorExpectation {
  double value = 0.0;
  VectorXd gradient;
};
EstimatorExpectation exact_estimator_expectation(const CategoricalPair& pair, EstimatorKind::Kind kind);

enum class Granularity {
  sequence,  // one sample per response: R = log pi_T(o) - log pi(o)
  token      // per-token estimator summed along the response
};

using CoefficientFn = std::function<double(EstimatorKind::Kind, double)>;

// grad_coefficient for k2/k3 and the score-function form -R for k1.
double harness_coefficient(EstimatorKind::Kind kind, double r);

struct EstimatorReport {
  std::string kind;
  int n_samples = 0;
  double value_mean = 0.0;
  double value_se = 0.0;
  double value_variance = 0.0;  // per-sample
  double exact_value = 0.0;
  MatrixXd grad_mean;
  MatrixXd grad_se;
  MatrixXd exact_grad;
  double grad_max_deviation = 0.0;  // max |grad_mean - exact_grad|
  int grad_components = 0;          // components that are not identically zero
  int grad_outside_3se = 0;

  double value_z() const;
  bool value_within_3se() const;
  bool grad_within_3se() const { return grad_outside_3se == 0; }
  // True when some component deviates from exact by more than 3 SE.
  bool grad_deviates() const { return grad_outside_3se > 0; }
};

// Absolute slack added to 3-SE comparisons to absorb summation roundoff
// when a sample has zero variance.
inline constexpr double kStatSlack = 1e-9;

struct HarnessOptions {
  int n_samples = 100000;
  std::uint64_t seed = 0;
  int max_len = 3;
  Granularity granularity = Granularity::sequence;
  double budget = kDefaultEnumerationBudget;
  CoefficientFn coefficient = harness_coefficient;
};

// Monte-Carlo statistics of an estimator on a policy pair; exact references
// come from enumeration (sequence: exact_rkl_grad, token: exact_token_rkl_grad).
EstimatorReport estimator_report(const PolicyParameters& student, const PolicyParameters& teacher,
                                 const Question& question, EstimatorKind::Kind kind, const HarnessOptions& options);

// Same on a single-step pair; gradients are with respect to the student logits
// and the exact gradient is the true KL gradient.
EstimatorReport estimator_report(const CategoricalPair& pair, EstimatorKind::Kind kind, int n_samples,
                                 std::uint64_t seed, const CoefficientFn& coefficient = harness_coefficient);

// Random tabular policy with N(0, scale^2) logits.
PolicyParameters random_policy(const PolicyShape& shape, double scale, std::uint64_t seed);

}  // namespace kdrl
