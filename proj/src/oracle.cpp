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

#include "kdrl/math.hpp"
#include "kdrl/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

namespace kdrl {

double EnumerationSpace::total_probability() const {
  double s = 0.0;
  for (const EnumeratedSequence& e : sequences) s += e.prob;
  return s;
}

namespace {

void check_budget(int vocab, int max_len, double budget) {
  if (max_len < 1) throw std::invalid_argument("max_len must be >= 1");
  const double size = std::pow(static_cast<double>(vocab), max_len);
  if (size > budget)
    throw BudgetExceeded("enumeration of V^max_len = " + std::to_string(size) + " sequences exceeds budget " +
                         std::to_string(budget));
}

double floored_log(double prob) { return std::log(std::max(prob, kTeacherFloor)); }

// Depth-first walk over every response prefix. `on_node` sees each
// non-terminal decoding state; `on_leaf` sees each complete response with
// `history` holding prompt + response.
class PrefixWalker {
 public:
  using NodeFn = std::function<void(const Context&, double prefix_prob, const VectorXd& p, const VectorXd* q)>;
  using LeafFn = std::function<void(const TokenSeq& history, double prob, double log_p, double log_q, bool truncated)>;

  PrefixWalker(const PolicyParameters& student, const PolicyParameters* teacher, const Question& question,
               int max_len)
      : student_(student), teacher_(teacher), max_len_(max_len), eos_(student.vocab_size() - 1),
        history_(question.prompt) {
    if (teacher_ != nullptr && teacher_->vocab_size() != student_.vocab_size())
      throw std::invalid_argument("teacher and student vocabularies differ");
  }

  void run(const NodeFn& on_node, const LeafFn& on_leaf) {
    on_node_ = &on_node;
    on_leaf_ = &on_leaf;
    walk(0, 1.0, 0.0, 0.0);
  }

 private:
  void walk(int t, double prob, double log_p, double log_q) {
    const Context ctx{history_, t};
    const VectorXd lp = log_softmax(student_.logits(ctx));
    const VectorXd p = lp.array().exp();
    VectorXd q;
    if (teacher_ != nullptr) q = softmax(teacher_->logits(ctx));
    (*on_node_)(ctx, prob, p, teacher_ != nullptr ? &q : nullptr);
    for (Token v = 0; v < p.size(); ++v) {
      if (p(v) <= 0.0) continue;
      const double next_prob = prob * p(v);
      const double next_log_q = teacher_ != nullptr ? log_q + floored_log(q(v)) : 0.0;
      history_.push_back(v);
      if (v == eos_ || t + 1 == max_len_)
        (*on_leaf_)(history_, next_prob, log_p + lp(v), next_log_q, v != eos_);
      else
        walk(t + 1, next_prob, log_p + lp(v), next_log_q);
      history_.pop_back();
    }
  }

  const PolicyParameters& student_;
  const PolicyParameters* teacher_;
  int max_len_;
  Token eos_;
  TokenSeq history_;
  const NodeFn* on_node_ = nullptr;
  const LeafFn* on_leaf_ = nullptr;
};

}  // namespace

EnumerationSpace enumerate(const PolicyParameters& policy, const Question& question, int max_len, double budget) {
  check_budget(policy.vocab_size(), max_len, budget);
  EnumerationSpace space;
  space.vocab_size = policy.vocab_size();
  space.max_len = max_len;
  const auto prompt_len = static_cast<std::ptrdiff_t>(question.prompt.size());
  PrefixWalker walker(policy, nullptr, question, max_len);
  walker.run([](const Context&, double, const VectorXd&, const VectorXd*) {},
             [&](const TokenSeq& h, double prob, double log_p, double, bool truncated) {
               space.sequences.push_back({TokenSeq(h.begin() + prompt_len, h.end()), prob, log_p, truncated});
             });
  return space;
}

ExactRkl exact_rkl(const PolicyParameters& student, const PolicyParameters& teacher, const Question& question,
                   int max_len, double budget) {
  check_budget(student.vocab_size(), max_len, budget);
  ExactRkl out;
  out.per_position.assign(max_len, 0.0);
  PrefixWalker walker(student, &teacher, question, max_len);
  walker.run(
      [&](const Context& ctx, double prefix_prob, const VectorXd& p, const VectorXd* q) {
        double kl = 0.0;
        for (Eigen::Index v = 0; v < p.size(); ++v)
          if (p(v) > 0.0) kl += p(v) * (std::log(p(v)) - floored_log((*q)(v)));
        out.per_position[ctx.position] += prefix_prob * kl;
      },
      [&](const TokenSeq&, double prob, double log_p, double log_q, bool) { out.value += prob * (log_p - log_q); });
  return out;
}

MatrixXd exact_rkl_grad(const PolicyParameters& student, const PolicyParameters& teacher,
                        const Question& question, int max_len, double budget) {
  check_budget(student.vocab_size(), max_len, budget);
  MatrixXd grad = MatrixXd::Zero(student.weights().rows(), student.weights().cols());
  const auto prompt_len = static_cast<std::ptrdiff_t>(question.prompt.size());
  PrefixWalker walker(student, &teacher, question, max_len);
  walker.run([](const Context&, double, const VectorXd&, const VectorXd*) {},
             [&](const TokenSeq& h, double prob, double log_p, double log_q, bool) {
               const double coeff = prob * (log_p - log_q);  // pi(o) * (-R(o))
               const auto len = static_cast<std::ptrdiff_t>(h.size()) - prompt_len;
               for (std::ptrdiff_t t = 0; t < len; ++t) {
                 const Context ctx{std::span<const Token>(h.data(), prompt_len + t), static_cast<int>(t)};
                 accumulate_log_prob_grad(student, ctx, h[prompt_len + t], softmax(student.logits(ctx)), coeff, grad);
               }
             });
  return grad;
}

MatrixXd exact_token_rkl_grad(const PolicyParameters& student, const PolicyParameters& teacher,
                              const Question& question, int max_len, double budget) {
  check_budget(student.vocab_size(), max_len, budget);
  MatrixXd grad = MatrixXd::Zero(student.weights().rows(), student.weights().cols());
  PrefixWalker walker(student, &teacher, question, max_len);
  walker.run(
      [&](const Context& ctx, double prefix_prob, const VectorXd& p, const VectorXd* q) {
        // d KL(softmax(z) || q) / dz = p * (d - <p, d>), d = log p - log q.
        VectorXd d = VectorXd::Zero(p.size());
        for (Eigen::Index v = 0; v < p.size(); ++v)
          if (p(v) > 0.0) d(v) = std::log(p(v)) - floored_log((*q)(v));
        const double mean = p.dot(d);
        accumulate_logit_grad(student, ctx, prefix_prob * p.cwiseProduct((d.array() - mean).matrix()), grad);
      },
      [](const TokenSeq&, double, double, double, bool) {});
  return grad;
}

MatrixXd finite_difference(const PolicyParameters& params, const std::function<double(const PolicyParameters&)>& f,
                           double h, const std::vector<int>& rows) {
  PolicyParameters probe = params;
  MatrixXd grad = MatrixXd::Zero(params.weights().rows(), params.weights().cols());
  std::vector<int> all;
  const std::vector<int>* which = &rows;
  if (rows.empty()) {
    all.resize(params.weights().rows());
    for (int r = 0; r < static_cast<int>(all.size()); ++r) all[r] = r;
    which = &all;
  }
  for (int r : *which) {
    for (Eigen::Index c = 0; c < grad.cols(); ++c) {
      const double w = probe.weights()(r, c);
      probe.weights()(r, c) = w + h;
      const double up = f(probe);
      probe.weights()(r, c) = w - h;
      const double down = f(probe);
      probe.weights()(r, c) = w;
      grad(r, c) = (up - down) / (2.0 * h);
    }
  }
  return grad;
}

VectorXd CategoricalPair::student_probs() const { return softmax(student_logits); }

double exact_kl(const CategoricalPair& pair) {
  const VectorXd p = pair.student_probs();
  double kl = 0.0;
  for (Eigen::Index v = 0; v < p.size(); ++v)
    if (p(v) > 0.0) kl += p(v) * (std::log(p(v)) - floored_log(pair.teacher_probs(v)));
  return kl;
}

VectorXd exact_kl_logit_grad(const CategoricalPair& pair) {
  const VectorXd p = pair.student_probs();
  VectorXd d = VectorXd::Zero(p.size());
  for (Eigen::Index v = 0; v < p.size(); ++v)
    if (p(v) > 0.0) d(v) = std::log(p(v)) - floored_log(pair.teacher_probs(v));
  return p.cwiseProduct((d.array() - p.dot(d)).matrix());
}

double harness_coefficient(EstimatorKind::Kind kind, double r) {
  if (kind == EstimatorKind::k1) return -r;
  return grad_coefficient(kind, r);
}

EstimatorExpectation exact_estimator_expectation(const CategoricalPair& pair, EstimatorKind::Kind kind) {
  const VectorXd p = pair.student_probs();
  EstimatorExpectation e;
  e.gradient = VectorXd::Zero(p.size());
  for (Eigen::Index v = 0; v < p.size(); ++v) {
    if (p(v) <= 0.0) continue;
    const double r = floored_log(pair.teacher_probs(v)) - std::log(p(v));
    e.value += p(v) * estimator_value(kind, r);
    VectorXd score = -p;
    score(v) += 1.0;
    e.gradient += p(v) * harness_coefficient(kind, r) * score;
  }
  return e;
}

double EstimatorReport::value_z() const {
  const double dev = std::abs(value_mean - exact_value);
  if (value_se == 0.0) return dev <= kStatSlack ? 0.0 : std::numeric_limits<double>::infinity();
  return dev / value_se;
}

bool EstimatorReport::value_within_3se() const {
  return std::abs(value_mean - exact_value) <= 3.0 * value_se + kStatSlack;
}

namespace {

// Streaming first and second moments of a sparse matrix-valued sample.
class MomentAccumulator {
 public:
  MomentAccumulator(Eigen::Index rows, Eigen::Index cols)
      : sum_(MatrixXd::Zero(rows, cols)), sumsq_(MatrixXd::Zero(rows, cols)) {}

  void add_row(int row, const VectorXd& v) {
    for (auto& [r, acc] : pending_)
      if (r == row) {
        acc += v;
        return;
      }
    pending_.emplace_back(row, v);
  }

  void commit() {
    for (const auto& [r, v] : pending_) {
      sum_.row(r) += v.transpose();
      sumsq_.row(r) += v.cwiseAbs2().transpose();
    }
    pending_.clear();
  }

  void finish(int n, MatrixXd& mean, MatrixXd& se) const {
    mean = sum_ / n;
    const MatrixXd var = ((sumsq_ - n * mean.cwiseAbs2()) / (n - 1)).cwiseMax(0.0);
    se = (var / n).cwiseSqrt();
  }

 private:
  MatrixXd sum_, sumsq_;
  std::vector<std::pair<int, VectorXd>> pending_;
};

void finish_report(EstimatorReport& rep, const MomentAccumulator& acc, double value_sum, double value_sumsq) {
  const int n = rep.n_samples;
  rep.value_mean = value_sum / n;
  rep.value_variance = std::max(0.0, (value_sumsq - n * rep.value_mean * rep.value_mean) / (n - 1));
  rep.value_se = std::sqrt(rep.value_variance / n);
  acc.finish(n, rep.grad_mean, rep.grad_se);
  for (Eigen::Index i = 0; i < rep.grad_mean.rows(); ++i)
    for (Eigen::Index j = 0; j < rep.grad_mean.cols(); ++j) {
      const double mean = rep.grad_mean(i, j), exact = rep.exact_grad(i, j);
      if (mean == 0.0 && exact == 0.0 && rep.grad_se(i, j) == 0.0) continue;
      ++rep.grad_components;
      const double dev = std::abs(mean - exact);
      rep.grad_max_deviation = std::max(rep.grad_max_deviation, dev);
      if (dev > 3.0 * rep.grad_se(i, j) + kStatSlack) ++rep.grad_outside_3se;
    }
}

}  // namespace

EstimatorReport estimator_report(const PolicyParameters& student, const PolicyParameters& teacher,
                                 const Question& question, EstimatorKind::Kind kind, const HarnessOptions& options) {
  if (options.n_samples < 2) throw std::invalid_argument("estimator_report needs >= 2 samples");
  if (kind == EstimatorKind::topk) throw std::invalid_argument("estimator_report covers k1, k2 and k3");
  EstimatorReport rep;
  rep.kind = to_string(EstimatorKind{kind, 0});
  rep.n_samples = options.n_samples;
  rep.exact_value = exact_rkl(student, teacher, question, options.max_len, options.budget).value;
  rep.exact_grad = options.granularity == Granularity::sequence
                       ? exact_rkl_grad(student, teacher, question, options.max_len, options.budget)
                       : exact_token_rkl_grad(student, teacher, question, options.max_len, options.budget);

  MomentAccumulator acc(student.weights().rows(), student.weights().cols());
  double value_sum = 0.0, value_sumsq = 0.0;
  const auto prompt_len = static_cast<std::ptrdiff_t>(question.prompt.size());
  for (int k = 0; k < options.n_samples; ++k) {
    RngStream rng(options.seed, {static_cast<std::uint64_t>(k)});
    const Trajectory traj =
        score_with_teacher(sample_sequence(student, question, options.max_len, 1.0, rng), teacher);
    const TokenSeq h = traj.history();
    std::vector<double> r(traj.length());
    for (int t = 0; t < traj.length(); ++t)
      r[t] = std::max((*traj.teacher_logp)[t], std::log(kTeacherFloor)) - traj.student_logp[t];

    std::vector<double> coeff(traj.length());
    double value = 0.0;
    if (options.granularity == Granularity::sequence) {
      double total = 0.0;
      for (double x : r) total += x;
      value = estimator_value(kind, total);
      std::fill(coeff.begin(), coeff.end(), options.coefficient(kind, total));
    } else {
      for (int t = 0; t < traj.length(); ++t) {
        value += estimator_value(kind, r[t]);
        coeff[t] = options.coefficient(kind, r[t]);
      }
    }
    value_sum += value;
    value_sumsq += value * value;

    for (int t = 0; t < traj.length(); ++t) {
      const Context ctx{std::span<const Token>(h.data(), prompt_len + t), t};
      VectorXd score = -traj.student_dist.row(t).transpose();
      score(traj.tokens[t]) += 1.0;
      for (int row : student.active_rows(ctx)) acc.add_row(row, coeff[t] * score);
    }
    acc.commit();
  }
  finish_report(rep, acc, value_sum, value_sumsq);
  return rep;
}

EstimatorReport estimator_report(const CategoricalPair& pair, EstimatorKind::Kind kind, int n_samples,
                                 std::uint64_t seed, const CoefficientFn& coefficient) {
  if (n_samples < 2) throw std::invalid_argument("estimator_report needs >= 2 samples");
  if (kind == EstimatorKind::topk) throw std::invalid_argument("estimator_report covers k1, k2 and k3");
  const VectorXd p = pair.student_probs();
  const auto V = p.size();
  EstimatorReport rep;
  rep.kind = to_string(EstimatorKind{kind, 0});
  rep.n_samples = n_samples;
  rep.exact_value = exact_kl(pair);
  rep.exact_grad = exact_kl_logit_grad(pair).transpose();

  MomentAccumulator acc(1, V);
  double value_sum = 0.0, value_sumsq = 0.0;
  for (int k = 0; k < n_samples; ++k) {
    RngStream rng(seed, {static_cast<std::uint64_t>(k)});
    const double u = rng.uniform();
    Eigen::Index v = 0;
    double cum = p(0);
    while (u >= cum && v + 1 < V) cum += p(++v);
    const double r = floored_log(pair.teacher_probs(v)) - std::log(p(v));
    const double value = estimator_value(kind, r);
    value_sum += value;
    value_sumsq += value * value;
    VectorXd score = -p;
    score(v) += 1.0;
    acc.add_row(0, coefficient(kind, r) * score);
    acc.commit();
  }
  finish_report(rep, acc, value_sum, value_sumsq);
  return rep;
}

PolicyParameters random_policy(const PolicyShape& shape, double scale, std::uint64_t seed) {
  PolicyParameters p(shape);
  RngStream rng(seed, {0xa11ce});
  for (Eigen::Index i = 0; i < p.weights().size(); ++i) p.weights().data()[i] = scale * rng.normal();
  return p;
}

}  // namespace kdrl
