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

#include "kdrl/objectives.hpp"

#include "kdrl/math.hpp"

#include <numeric>
#include <stdexcept>

namespace kdrl {

std::string to_string(ObjectiveMode mode) {
  switch (mode) {
    case ObjectiveMode::grpo_only: return "grpo-only";
    case ObjectiveMode::rkl_only: return "rkl-only";
    case ObjectiveMode::sft: return "sft";
    case ObjectiveMode::reward_shaping: return "reward-shaping";
    case ObjectiveMode::joint_kdrl: return "joint-kdrl";
  }
  return "unknown";
}

std::string to_string(MaskMode mode) {
  switch (mode) {
    case MaskMode::none: return "none";
    case MaskMode::response: return "response";
    case MaskMode::group: return "group";
  }
  return "unknown";
}

ObjectiveMode parse_objective_mode(const std::string& name) {
  for (auto m : {ObjectiveMode::grpo_only, ObjectiveMode::rkl_only, ObjectiveMode::sft,
                 ObjectiveMode::reward_shaping, ObjectiveMode::joint_kdrl})
    if (to_string(m) == name) return m;
  throw std::invalid_argument("unknown objective mode '" + name + "'");
}

MaskMode parse_mask_mode(const std::string& name) {
  for (auto m : {MaskMode::none, MaskMode::response, MaskMode::group})
    if (to_string(m) == name) return m;
  throw std::invalid_argument("unknown mask mode '" + name + "'");
}

bool ObjectiveConfig::uses_teacher() const {
  return mode == ObjectiveMode::rkl_only || mode == ObjectiveMode::joint_kdrl ||
         mode == ObjectiveMode::reward_shaping || mode == ObjectiveMode::sft;
}

void ObjectiveConfig::validate() const {
  if (!(entropy_coef >= 0.0)) throw std::invalid_argument("entropy coefficient must be >= 0");
  const bool kd_loss = mode == ObjectiveMode::rkl_only || mode == ObjectiveMode::joint_kdrl;
  if (mask != MaskMode::none && !kd_loss)
    throw std::invalid_argument("masking is only valid with joint-kdrl or rkl-only");
  if (kd_loss && estimator.kind == EstimatorKind::k1)
    throw std::invalid_argument("k1 is not usable as a KD loss; choose k2, k3 or topk");
  if (estimator.kind == EstimatorKind::topk && estimator.top_k < 1)
    throw std::invalid_argument("topk estimator requires K >= 1");
}

double LossReport::kd_unmasked_mean() const {
  if (kd_token_values.empty()) return 0.0;
  return std::accumulate(kd_token_values.begin(), kd_token_values.end(), 0.0) /
         static_cast<double>(kd_token_values.size());
}

std::vector<int> response_mask(const RolloutGroup& group) {
  std::vector<int> m;
  m.reserve(group.trajectories.size());
  for (const Trajectory& t : group.trajectories) m.push_back(t.reward == 0 ? 1 : 0);
  return m;
}

std::vector<int> group_mask(const RolloutGroup& group) {
  bool all_failed = true;
  for (const Trajectory& t : group.trajectories) all_failed = all_failed && t.reward == 0;
  return std::vector<int>(group.trajectories.size(), all_failed ? 1 : 0);
}

Masks compute_masks(const Batch& batch, MaskMode mode) {
  Masks masks;
  masks.reserve(batch.size());
  for (const RolloutGroup& g : batch) {
    switch (mode) {
      case MaskMode::none: masks.emplace_back(g.trajectories.size(), 1); break;
      case MaskMode::response: masks.push_back(response_mask(g)); break;
      case MaskMode::group: masks.push_back(group_mask(g)); break;
    }
  }
  return masks;
}

std::vector<double> shape_rewards(std::span<const double> rewards, std::span<const double> log_ratio_sums,
                                  double beta) {
  if (!(beta >= 0.0)) throw std::invalid_argument("shaping beta must be >= 0");
  if (rewards.size() != log_ratio_sums.size()) throw std::invalid_argument("shape_rewards size mismatch");
  std::vector<double> out(rewards.size());
  for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = rewards[i] + beta * log_ratio_sums[i];
  return out;
}

int batch_tokens(const Batch& batch) {
  int n = 0;
  for (const RolloutGroup& g : batch)
    for (const Trajectory& t : g.trajectories) n += t.length();
  return n;
}

namespace {

template <typename F>
void for_each_token(const Trajectory& traj, F&& f) {
  const TokenSeq h = traj.history();
  const auto prompt_len = static_cast<std::ptrdiff_t>(traj.prompt.size());
  for (int t = 0; t < traj.length(); ++t)
    f(t, Context{std::span<const Token>(h.data(), prompt_len + t), t});
}

MatrixXd zeros_like(const PolicyParameters& params) {
  return MatrixXd::Zero(params.weights().rows(), params.weights().cols());
}

void require_snapshot_logp(const Trajectory& traj) {
  if (static_cast<int>(traj.student_logp.size()) != traj.length())
    throw std::invalid_argument("trajectory for " + traj.question_id + " lacks snapshot log-probs");
}

void require_teacher_logp(const Trajectory& traj) {
  if (!traj.teacher_logp || static_cast<int>(traj.teacher_logp->size()) != traj.length())
    throw std::invalid_argument("trajectory for " + traj.question_id + " was not scored by the teacher");
}

void require_masks(const Batch& batch, const Masks& masks) {
  if (masks.size() != batch.size()) throw std::invalid_argument("mask/batch group count mismatch");
  for (std::size_t g = 0; g < batch.size(); ++g)
    if (masks[g].size() != batch[g].trajectories.size())
      throw std::invalid_argument("mask/group size mismatch");
}

void require_advantages(const RolloutGroup& group) {
  if (group.advantages.size() != group.size())
    throw std::invalid_argument("group " + group.question_id + " has no advantages");
}

void check_kd_kind(const EstimatorKind& kind, const PolicyParameters* teacher) {
  if (kind.kind == EstimatorKind::k1)
    throw std::invalid_argument("k1 is not usable as a KD loss; choose k2, k3 or topk");
  if (kind.kind == EstimatorKind::topk && teacher == nullptr)
    throw std::invalid_argument("topk KD needs the teacher policy for full distributions");
}

// Adds one token's KD value and gradient (scaled by `weight`) to the report.
// Returns the raw estimator value.
double kd_token(const EstimatorKind& kind, const PolicyParameters& params, const PolicyParameters* teacher,
                const Context& ctx, Token token, double teacher_logp, const VectorXd& p, double weight,
                MatrixXd& grad) {
  if (kind.kind == EstimatorKind::topk) {
    const VectorXd q = topk_teacher_renorm(softmax(teacher->logits(ctx)), kind.top_k);
    accumulate_logit_grad(params, ctx, weight * topk_kl_logit_grad(p, q), grad);
    return topk_kl_value(p, q);
  }
  const double r = log_ratio(teacher_logp, std::log(p(token)));
  accumulate_log_prob_grad(params, ctx, token, p, weight * grad_coefficient(kind.kind, r), grad);
  return estimator_value(kind.kind, r);
}

}  // namespace

LossReport grpo_loss(const Batch& batch, const PolicyParameters& params) {
  LossReport rep;
  rep.gradient = zeros_like(params);
  const int n = batch_tokens(batch);
  if (n == 0) return rep;
  const double inv_n = 1.0 / n;
  double objective = 0.0;
  for (const RolloutGroup& g : batch) {
    require_advantages(g);
    for (int i = 0; i < g.size(); ++i) {
      const Trajectory& traj = g.trajectories[i];
      require_snapshot_logp(traj);
      const double adv = g.advantages(i);
      for_each_token(traj, [&](int t, const Context& ctx) {
        const VectorXd p = softmax(params.logits(ctx));
        const double rho = std::exp(std::log(p(traj.tokens[t])) - traj.student_logp[t]);
        objective += rho * adv;
        // d(rho)/d(theta) = rho * grad log pi; the snapshot is a constant.
        accumulate_log_prob_grad(params, ctx, traj.tokens[t], p, -rho * adv * inv_n, rep.gradient);
      });
    }
  }
  rep.grpo = -objective * inv_n;
  rep.total = rep.grpo;
  return rep;
}

LossReport rkl_loss(const Batch& batch, const PolicyParameters& params, const PolicyParameters* teacher,
                    const EstimatorKind& kind, const Masks& masks) {
  check_kd_kind(kind, teacher);
  require_masks(batch, masks);
  LossReport rep;
  rep.beta = 1.0;
  rep.gradient = zeros_like(params);
  const int n = batch_tokens(batch);
  if (n == 0) return rep;
  const double inv_n = 1.0 / n;
  double value = 0.0;
  for (std::size_t gi = 0; gi < batch.size(); ++gi) {
    const RolloutGroup& g = batch[gi];
    for (int i = 0; i < g.size(); ++i) {
      if (!masks[gi][i]) continue;
      const Trajectory& traj = g.trajectories[i];
      require_teacher_logp(traj);
      for_each_token(traj, [&](int t, const Context& ctx) {
        const VectorXd p = softmax(params.logits(ctx));
        const double v = kd_token(kind, params, teacher, ctx, traj.tokens[t], (*traj.teacher_logp)[t], p,
                                  inv_n, rep.gradient);
        rep.kd_token_values.push_back(v);
        value += v;
      });
    }
  }
  rep.kd = value * inv_n;
  rep.total = rep.kd;
  return rep;
}

LossReport rkl_loss(const Batch& batch, const PolicyParameters& params, const PolicyParameters* teacher,
                    const EstimatorKind& kind, MaskMode mask) {
  return rkl_loss(batch, params, teacher, kind, compute_masks(batch, mask));
}

LossReport entropy_bonus(const Batch& batch, const PolicyParameters& params, double coef) {
  LossReport rep;
  rep.gradient = zeros_like(params);
  const int n = batch_tokens(batch);
  if (n == 0) return rep;
  const double inv_n = 1.0 / n;
  double h_sum = 0.0;
  for (const RolloutGroup& g : batch)
    for (const Trajectory& traj : g.trajectories)
      for_each_token(traj, [&](int, const Context& ctx) {
        const VectorXd p = softmax(params.logits(ctx));
        h_sum += entropy(p);
        if (coef != 0.0) accumulate_logit_grad(params, ctx, -coef * inv_n * entropy_logit_grad(p), rep.gradient);
      });
  rep.mean_entropy = h_sum * inv_n;
  rep.entropy = -coef * rep.mean_entropy;
  rep.total = rep.entropy;
  return rep;
}

LossReport sft_loss(std::span<const Trajectory> sequences, const PolicyParameters& params) {
  if (sequences.empty()) throw std::invalid_argument("sft_loss needs a nonempty batch");
  LossReport rep;
  rep.gradient = zeros_like(params);
  const double inv_b = 1.0 / static_cast<double>(sequences.size());
  double loss = 0.0;
  for (const Trajectory& traj : sequences) {
    if (traj.length() == 0) throw std::invalid_argument("sft_loss got an empty sequence");
    const double w = inv_b / traj.length();
    for_each_token(traj, [&](int t, const Context& ctx) {
      const VectorXd z = params.logits(ctx);
      const VectorXd logp = log_softmax(z);
      loss -= w * logp(traj.tokens[t]);
      accumulate_log_prob_grad(params, ctx, traj.tokens[t], logp.array().exp().matrix(), -w, rep.gradient);
    });
  }
  rep.total = loss;
  rep.kd = loss;
  return rep;
}

LossReport kdrl_loss(const Batch& batch, const PolicyParameters& params, const PolicyParameters* teacher,
                     const ObjectiveConfig& config, double beta) {
  if (config.mode != ObjectiveMode::joint_kdrl) throw std::invalid_argument("kdrl_loss requires joint-kdrl mode");
  if (!(beta >= 0.0)) throw std::invalid_argument("beta must be >= 0");
  config.validate();
  check_kd_kind(config.estimator, teacher);
  const Masks masks = compute_masks(batch, config.mask);

  LossReport rep;
  rep.beta = beta;
  rep.gradient = zeros_like(params);
  const int n = batch_tokens(batch);
  if (n == 0) return rep;
  const double inv_n = 1.0 / n;
  const bool topk = config.estimator.kind == EstimatorKind::topk;
  double objective = 0.0, kd = 0.0, h_sum = 0.0;
  for (std::size_t gi = 0; gi < batch.size(); ++gi) {
    const RolloutGroup& g = batch[gi];
    require_advantages(g);
    for (int i = 0; i < g.size(); ++i) {
      const Trajectory& traj = g.trajectories[i];
      require_snapshot_logp(traj);
      const bool active = masks[gi][i] != 0;
      if (active) require_teacher_logp(traj);
      const double adv = g.advantages(i);
      for_each_token(traj, [&](int t, const Context& ctx) {
        const Token tok = traj.tokens[t];
        const VectorXd p = softmax(params.logits(ctx));
        const double logp = std::log(p(tok));
        const double rho = std::exp(logp - traj.student_logp[t]);
        objective += rho * adv;
        h_sum += entropy(p);

        VectorXd dlogits = config.entropy_coef * entropy_logit_grad(p);
        double coeff = rho * adv;
        if (active) {
          if (topk) {
            const VectorXd q = topk_teacher_renorm(softmax(teacher->logits(ctx)), config.estimator.top_k);
            const double v = topk_kl_value(p, q);
            rep.kd_token_values.push_back(v);
            kd += v;
            dlogits -= beta * topk_kl_logit_grad(p, q);
          } else {
            const double r = log_ratio((*traj.teacher_logp)[t], logp);
            const double v = estimator_value(config.estimator.kind, r);
            rep.kd_token_values.push_back(v);
            kd += v;
            coeff -= beta * grad_coefficient(config.estimator.kind, r);
          }
        }
        // Objective-ascent direction in logit space, negated for the loss.
        dlogits += coeff * (-p);
        dlogits(tok) += coeff;
        accumulate_logit_grad(params, ctx, -inv_n * dlogits, rep.gradient);
      });
    }
  }
  rep.grpo = -objective * inv_n;
  rep.kd = kd * inv_n;
  rep.mean_entropy = h_sum * inv_n;
  rep.entropy = -config.entropy_coef * rep.mean_entropy;
  rep.total = rep.grpo + beta * rep.kd + rep.entropy;
  return rep;
}

LossReport evaluate_objective(const Batch& batch, const PolicyParameters& params,
                              const PolicyParameters* teacher, const ObjectiveConfig& config, double beta) {
  config.validate();
  switch (config.mode) {
    case ObjectiveMode::joint_kdrl:
      return kdrl_loss(batch, params, teacher, config, beta);
    case ObjectiveMode::grpo_only:
    case ObjectiveMode::reward_shaping: {
      LossReport rep = grpo_loss(batch, params);
      const LossReport ent = entropy_bonus(batch, params, config.entropy_coef);
      rep.entropy = ent.entropy;
      rep.mean_entropy = ent.mean_entropy;
      rep.gradient += ent.gradient;
      rep.beta = config.mode == ObjectiveMode::reward_shaping ? beta : 0.0;
      rep.total = rep.grpo + rep.entropy;
      return rep;
    }
    case ObjectiveMode::rkl_only: {
      LossReport rep = rkl_loss(batch, params, teacher, config.estimator, config.mask);
      rep.mean_entropy = entropy_bonus(batch, params, 0.0).mean_entropy;
      return rep;
    }
    case ObjectiveMode::sft: {
      std::vector<Trajectory> seqs;
      for (const RolloutGroup& g : batch) seqs.insert(seqs.end(), g.trajectories.begin(), g.trajectories.end());
      LossReport rep = sft_loss(seqs, params);
      rep.mean_entropy = entropy_bonus(batch, params, 0.0).mean_entropy;
      return rep;
    }
  }
  throw std::invalid_argument("unknown objective mode");
}

}  // namespace kdrl
