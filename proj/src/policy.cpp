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

#include "kdrl/policy.hpp"

#include "kdrl/math.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace kdrl {

std::string to_string(Parameterization kind) {
  return kind == Parameterization::tabular ? "tabular" : "linear-head";
}

Parameterization parse_parameterization(const std::string& name) {
  if (name == "tabular") return Parameterization::tabular;
  if (name == "linear-head") return Parameterization::linear_head;
  throw std::invalid_argument("unknown parameterization '" + name + "'");
}

std::string to_string(TeacherProvenance p) {
  switch (p) {
    case TeacherProvenance::hand_built: return "hand-built";
    case TeacherProvenance::grpo_trained: return "grpo-trained";
    case TeacherProvenance::loaded: return "loaded";
  }
  return "unknown";
}

Eigen::Index PolicyParameters::rows_for(const PolicyShape& shape) {
  const Eigen::Index symbols = shape.vocab_size + 1;  // content + reserved + pad
  if (shape.kind == Parameterization::linear_head)
    return shape.window * symbols + shape.positions + 1;
  Eigen::Index buckets = 1;
  for (int i = 0; i < shape.window; ++i) buckets *= symbols;
  return buckets * shape.positions;
}

namespace {

void validate_shape(const PolicyShape& shape) {
  if (shape.vocab_size < 3) throw std::invalid_argument("policy vocabulary must have >= 3 tokens");
  if (shape.window < 1 || shape.window > PolicyParameters::kMaxWindow)
    throw std::invalid_argument("policy window must be in [1, 6]");
  if (shape.positions < 1) throw std::invalid_argument("policy needs >= 1 position bucket");
  const double cells = static_cast<double>(PolicyParameters::rows_for(shape)) * shape.vocab_size;
  if (cells > 5e7) throw std::invalid_argument("policy table too large for its shape");
}

}  // namespace

PolicyParameters::PolicyParameters(const PolicyShape& shape) : shape_(shape) {
  validate_shape(shape_);
  weights_ = MatrixXd::Zero(rows_for(shape_), shape_.vocab_size);
}

PolicyParameters::PolicyParameters(const PolicyShape& shape, MatrixXd weights)
    : shape_(shape), weights_(std::move(weights)) {
  validate_shape(shape_);
  if (weights_.rows() != rows_for(shape_) || weights_.cols() != shape_.vocab_size)
    throw std::invalid_argument("weight matrix does not match the policy shape");
}

ActiveRows PolicyParameters::active_rows(const Context& ctx) const {
  const int symbols = shape_.vocab_size + 1;
  const int pad = shape_.vocab_size;
  const int pos = std::min(ctx.position, shape_.positions - 1);
  const auto n = static_cast<int>(ctx.history.size());
  ActiveRows out;
  if (shape_.kind == Parameterization::tabular) {
    Eigen::Index bucket = 0;
    for (int s = 0; s < shape_.window; ++s) {
      const int idx = n - shape_.window + s;
      bucket = bucket * symbols + (idx >= 0 ? ctx.history[idx] : pad);
    }
    out.push(static_cast<int>(bucket * shape_.positions + pos));
    return out;
  }
  for (int s = 0; s < shape_.window; ++s) {
    const int idx = n - shape_.window + s;
    out.push(s * symbols + (idx >= 0 ? ctx.history[idx] : pad));
  }
  out.push(shape_.window * symbols + pos);
  out.push(shape_.window * symbols + shape_.positions);
  return out;
}

VectorXd PolicyParameters::logits(const Context& ctx) const {
  VectorXd z = VectorXd::Zero(shape_.vocab_size);
  for (int r : active_rows(ctx)) z += weights_.row(r).transpose();
  return z;
}

void PolicyParameters::check_finite() const {
  if (!weights_.allFinite()) throw std::invalid_argument("policy parameters are not finite");
}

VectorXd distribution(const PolicyParameters& params, const Context& ctx, double temperature) {
  if (!(temperature >= 0.0)) throw std::invalid_argument("temperature must be >= 0");
  const VectorXd z = params.logits(ctx);
  if (!z.allFinite()) throw std::invalid_argument("policy parameters are not finite");
  if (temperature == 0.0) {
    VectorXd p = VectorXd::Zero(z.size());
    p(argmax_lowest(z)) = 1.0;
    return p;
  }
  return softmax(z / temperature);
}

double log_prob(const PolicyParameters& params, const Context& ctx, Token token,
                double temperature) {
  if (token < 0 || token >= params.vocab_size()) throw std::invalid_argument("token out of range");
  if (!(temperature >= 0.0)) throw std::invalid_argument("temperature must be >= 0");
  const VectorXd z = params.logits(ctx);
  if (!z.allFinite()) throw std::invalid_argument("policy parameters are not finite");
  if (temperature == 0.0)
    return argmax_lowest(z) == token ? 0.0 : -std::numeric_limits<double>::infinity();
  return log_softmax(z / temperature)(token);
}

MatrixXd log_prob_grad(const PolicyParameters& params, const Context& ctx, Token token) {
  MatrixXd grad = MatrixXd::Zero(params.weights().rows(), params.weights().cols());
  accumulate_log_prob_grad(params, ctx, token, distribution(params, ctx), 1.0, grad);
  return grad;
}

void accumulate_log_prob_grad(const PolicyParameters& params, const Context& ctx, Token token,
                              const VectorXd& p, double coeff, MatrixXd& grad) {
  for (int r : params.active_rows(ctx)) {
    grad.row(r) -= coeff * p.transpose();
    grad(r, token) += coeff;
  }
}

void accumulate_logit_grad(const PolicyParameters& params, const Context& ctx,
                           const VectorXd& dlogits, MatrixXd& grad) {
  for (int r : params.active_rows(ctx)) grad.row(r) += dlogits.transpose();
}

TokenSeq Trajectory::history() const {
  TokenSeq h = prompt;
  h.insert(h.end(), tokens.begin(), tokens.end());
  return h;
}

namespace {

Token sample_categorical(const VectorXd& p, RngStream& rng) {
  const double u = rng.uniform();
  double cum = 0.0;
  Token last = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p(i) <= 0.0) continue;
    cum += p(i);
    last = static_cast<Token>(i);
    if (u < cum) return last;
  }
  return last;
}

}  // namespace

Trajectory sample_sequence(const PolicyParameters& snapshot, const Question& question,
                           int max_len, double temperature, RngStream& rng) {
  if (max_len < 1) throw std::invalid_argument("max_len must be >= 1");
  const int V = snapshot.vocab_size();
  const Token eos = V - 1;

  Trajectory traj;
  traj.question_id = question.id;
  traj.prompt = question.prompt;
  TokenSeq history = question.prompt;
  history.reserve(question.prompt.size() + max_len);
  traj.student_dist.resize(max_len, V);

  for (int t = 0; t < max_len; ++t) {
    const Context ctx{history, t};
    const VectorXd z = snapshot.logits(ctx);
    if (!z.allFinite()) throw std::invalid_argument("policy parameters are not finite");
    const VectorXd logp = log_softmax(z);
    const VectorXd p = logp.array().exp();
    Token tok;
    if (temperature == 0.0)
      tok = static_cast<Token>(argmax_lowest(z));
    else if (temperature == 1.0)
      tok = sample_categorical(p, rng);
    else
      tok = sample_categorical(softmax(z / temperature), rng);
    traj.student_dist.row(t) = p.transpose();
    traj.student_logp.push_back(logp(tok));
    traj.tokens.push_back(tok);
    history.push_back(tok);
    if (tok == eos) break;
  }
  traj.student_dist.conservativeResize(traj.length(), V);
  traj.truncated = traj.tokens.back() != eos;
  return traj;
}

Trajectory score_with_teacher(Trajectory trajectory, const PolicyParameters& teacher) {
  if (trajectory.student_dist.cols() != teacher.vocab_size())
    throw std::invalid_argument("teacher vocabulary differs from the student's");
  const TokenSeq history = trajectory.history();
  const auto prompt_len = static_cast<std::ptrdiff_t>(trajectory.prompt.size());
  std::vector<double> lp;
  lp.reserve(trajectory.tokens.size());
  for (int t = 0; t < trajectory.length(); ++t) {
    const Context ctx{std::span<const Token>(history.data(), prompt_len + t), t};
    lp.push_back(log_softmax(teacher.logits(ctx))(trajectory.tokens[t]));
  }
  trajectory.teacher_logp = std::move(lp);
  return trajectory;
}

PolicyParameters hand_built_teacher(const TaskInstance& instance, int window, int positions,
                                    double p_gold) {
  if (!(p_gold > 0.0 && p_gold < 1.0)) throw std::invalid_argument("p_gold must be in (0, 1)");
  if (positions < 3) throw std::invalid_argument("hand-built teacher needs >= 3 positions");
  const Vocabulary& vocab = instance.vocab;
  const int V = vocab.size();
  PolicyParameters teacher(PolicyShape{Parameterization::tabular, V, window, positions});
  constexpr double kSure = 40.0;  // logit gap making a token effectively certain
  const double rest = std::log((1.0 - p_gold) / (V - 1));
  for (const Question& q : instance.questions) {
    if (static_cast<int>(q.prompt.size()) + 1 > window)
      throw std::invalid_argument("hand-built teacher window must cover prompt + delimiter");
    TokenSeq h = q.prompt;
    auto row_at = [&](int pos) { return teacher.active_rows(Context{h, pos}).rows[0]; };

    teacher.weights().row(row_at(0)).setZero();
    teacher.weights()(row_at(0), vocab.delimiter()) = kSure;

    h.push_back(vocab.delimiter());
    const int answer_row = row_at(1);
    teacher.weights().row(answer_row).setConstant(rest);
    teacher.weights()(answer_row, q.answer) = std::log(p_gold);

    for (Token a = 0; a < V; ++a) {
      TokenSeq h2 = h;
      h2.push_back(a);
      const int r = teacher.active_rows(Context{h2, 2}).rows[0];
      teacher.weights().row(r).setZero();
      teacher.weights()(r, vocab.eos()) = kSure;
    }
  }
  return teacher;
}

}  // namespace kdrl
