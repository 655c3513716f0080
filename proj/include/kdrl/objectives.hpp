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

#include "kdrl/estimators.hpp"
#include "kdrl/policy.hpp"
#include "kdrl/types.hpp"

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace kdrl {

template <typename Scalar>
struct GroupAdvantages {
  Vector<Scalar> values;
  bool degenerate = false;
};

// (r - mean) / std with the population standard deviation. Groups whose
// std is below 1e-8 carry no signal: all advantages are 0.
template <typename Derived>
GroupAdvantages<typename Derived::Scalar> group_advantages(const Eigen::MatrixBase<Derived>& rewards) {
  using Scalar = typename Derived::Scalar;
  if (rewards.size() < 2) throw std::invalid_argument("group advantages need G >= 2");
  const Scalar mean = rewards.mean();
  const Vector<Scalar> centered = rewards.array() - mean;
  const Scalar std = std::sqrt(centered.squaredNorm() / static_cast<Scalar>(rewards.size()));
  GroupAdvantages<Scalar> out;
  if (std < Scalar(1e-8)) {
    out.values = Vector<Scalar>::Zero(rewards.size());
    out.degenerate = true;
  } else {
    out.values = centered / std;
  }
  return out;
}

struct RolloutGroup {
  std::string question_id;
  std::vector<Trajectory> trajectories;
  VectorXd advantages;
  bool degenerate = false;

  int size() const { return static_cast<int>(trajectories.size()); }
};

using Batch = std::vector<RolloutGroup>;

enum class ObjectiveMode { grpo_only, rkl_only, sft, reward_shaping, joint_kdrl };
enum class MaskMode { none, response, group };

std::string to_string(ObjectiveMode mode);
std::string to_string(MaskMode mode);
ObjectiveMode parse_objective_mode(const std::string& name);
MaskMode parse_mask_mode(const std::string& name);

struct ObjectiveConfig {
  ObjectiveMode mode = ObjectiveMode::joint_kdrl;
  EstimatorKind estimator{EstimatorKind::k2, 0};
  MaskMode mask = MaskMode::none;
  double entropy_coef = 1e-3;

  bool uses_teacher() const;
  // Throws std::invalid_argument on inconsistent combinations.
  void validate() const;
};

// All values are minimization losses: total = grpo + beta * kd + entropy,
// where grpo = -J_GRPO, kd is the KL penalty and entropy = -coef * mean entropy.
struct LossReport {
  double total = 0.0;
  double grpo = 0.0;
  double kd = 0.0;
  double entropy = 0.0;
  double beta = 0.0;
  double mean_entropy = 0.0;  // mean per-token policy entropy (nats)
  std::vector<double> kd_token_values;  // estimator values on unmasked tokens
  MatrixXd gradient;

  // Mean estimator value over unmasked tokens; 0 when everything is masked.
  double kd_unmasked_mean() const;
};

// Per group, per trajectory: 1 where the KD term is active.
using Masks = std::vector<std::vector<int>>;

// 1 iff the response failed (reward 0).
std::vector<int> response_mask(const RolloutGroup& group);
// All ones iff every response in the group failed, else all zeros.
std::vector<int> group_mask(const RolloutGroup& group);
Masks compute_masks(const Batch& batch, MaskMode mode);

// r_i + beta * sum_t R_{i,t}.
std::vector<double> shape_rewards(std::span<const double> rewards, std::span<const double> log_ratio_sums,
                                  double beta);

// Total response tokens over the batch (the token-level normalizer).
int batch_tokens(const Batch& batch);

LossReport grpo_loss(const Batch& batch, const PolicyParameters& params);

// KD penalty over unmasked tokens. `teacher` is required for topk, which
// compares full distributions; k1 is rejected (value-only estimator).
LossReport rkl_loss(const Batch& batch, const PolicyParameters& params, const PolicyParameters* teacher,
                    const EstimatorKind& kind, const Masks& masks);
LossReport rkl_loss(const Batch& batch, const PolicyParameters& params, const PolicyParameters* teacher,
                    const EstimatorKind& kind, MaskMode mask = MaskMode::none);

// Entropy bonus term: value -coef * mean entropy.
LossReport entropy_bonus(const Batch& batch, const PolicyParameters& params, double coef);

// Negative length-normalized log-likelihood of teacher-sampled sequences.
LossReport sft_loss(std::span<const Trajectory> sequences, const PolicyParameters& params);

// Joint GRPO + beta * KD + entropy, accumulated in a single pass with the
// fused per-token coefficient.
LossReport kdrl_loss(const Batch& batch, const PolicyParameters& params, const PolicyParameters* teacher,
                     const ObjectiveConfig& config, double beta);

// Mode dispatch used by the trainer.
LossReport evaluate_objective(const Batch& batch, const PolicyParameters& params,
                              const PolicyParameters* teacher, const ObjectiveConfig& config, double beta);

}  // namespace kdrl
