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

#include "kdrl/oracle_suite.hpp"

#include "kdrl/math.hpp"
#include "kdrl/random.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace kdrl {

using nlohmann::ordered_json;

std::string to_string(CheckStatus status) {
  switch (status) {
    case CheckStatus::pass: return "pass";
    case CheckStatus::fail: return "fail";
    case CheckStatus::budget_exceeded: return "budget-exceeded";
  }
  return "fail";
}

bool SuiteReport::all_passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed(); });
}

std::vector<std::string> SuiteReport::failed() const {
  std::vector<std::string> out;
  for (const CheckResult& c : checks)
    if (!c.passed()) out.push_back(c.name);
  return out;
}

ordered_json SuiteReport::to_json(const SuiteOptions& options) const {
  ordered_json j;
  j["schema"] = "kdrl-oracle-report";
  j["version"] = 1;
  j["seed"] = options.seed;
  j["budget"] = options.budget;
  j["n_samples"] = options.n_samples;
  ordered_json list = ordered_json::array();
  for (const CheckResult& c : checks) {
    ordered_json e;
    e["name"] = c.name;
    e["status"] = to_string(c.status);
    e["detail"] = c.detail;
    list.push_back(std::move(e));
  }
  j["checks"] = std::move(list);
  j["passed"] = static_cast<int>(checks.size() - failed().size());
  j["failed"] = static_cast<int>(failed().size());
  j["ok"] = all_passed();
  return j;
}

CategoricalPair two_point_pair() {
  CategoricalPair pair;
  pair.student_logits = VectorXd::Zero(2);
  pair.teacher_probs = (VectorXd(2) << 0.9, 0.1).finished();
  return pair;
}

Batch synthetic_batch(const PolicyParameters& student, const PolicyParameters& teacher, int n_groups,
                      int group_size, int max_len, std::uint64_t seed) {
  const int V = student.vocab_size();
  Batch batch;
  for (int g = 0; g < n_groups; ++g) {
    RngStream qrng(seed, {0x9b, static_cast<std::uint64_t>(g)});
    Question q;
    q.id = "s" + std::to_string(g);
    q.prompt = {static_cast<Token>(qrng.below(V - 2)), static_cast<Token>(qrng.below(V - 2))};
    RolloutGroup group;
    group.question_id = q.id;
    std::vector<double> rewards;
    for (int i = 0; i < group_size; ++i) {
      RngStream rng(seed, {0x9c, static_cast<std::uint64_t>(g), static_cast<std::uint64_t>(i)});
      Trajectory t = score_with_teacher(sample_sequence(student, q, max_len, 1.0, rng), teacher);
      t.reward = rng.uniform() < 0.5 ? 1 : 0;
      t.shaped_reward = t.reward;
      rewards.push_back(t.reward);
      group.trajectories.push_back(std::move(t));
    }
    const auto adv = group_advantages(Eigen::Map<const VectorXd>(rewards.data(), group_size));
    group.advantages = adv.values;
    group.degenerate = adv.degenerate;
    batch.push_back(std::move(group));
  }
  return batch;
}

namespace {

constexpr int kV = 5;
constexpr int kMaxLen = 3;

PolicyShape tiny_shape(Parameterization kind = Parameterization::tabular) { return {kind, kV, 3, kMaxLen}; }

Question tiny_question(std::uint64_t seed) {
  RngStream rng(seed, {0x51});
  return {"oracle", {static_cast<Token>(rng.below(kV - 2)), static_cast<Token>(rng.below(kV - 2))}, 0, {}};
}

double max_abs(const MatrixXd& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

ordered_json grad_detail(const EstimatorReport& r) {
  return {{"components", r.grad_components},
          {"outside_3se", r.grad_outside_3se},
          {"max_deviation", r.grad_max_deviation}};
}

class Suite {
 public:
  explicit Suite(const SuiteOptions& options) : opt_(options) {
    coefficient_ = [fault = options.fault](EstimatorKind::Kind kind, double r) {
      const double c = harness_coefficient(kind, r);
      return fault == SuiteFault::k3_grad_sign && kind == EstimatorKind::k3 ? -c : c;
    };
  }

  SuiteReport run() {
    check("enumeration-normalization", [&](ordered_json& d) { return enumeration_normalization(d); });
    check("rkl-zero-at-identity", [&](ordered_json& d) { return rkl_zero_at_identity(d); });
    check("rkl-nonnegative-decomposes", [&](ordered_json& d) { return rkl_nonnegative(d); });
    check("two-point-rkl", [&](ordered_json& d) { return two_point_rkl(d); });
    check("rkl-grad-finite-difference", [&](ordered_json& d) { return rkl_grad_fd(d); });
    check("k2-grad-unbiased-sequence", [&](ordered_json& d) { return k2_grad(d, Granularity::sequence); });
    check("k2-grad-unbiased-token", [&](ordered_json& d) { return k2_grad(d, Granularity::token); });
    check("k3-value-unbiased-sequence", [&](ordered_json& d) { return k3_value_sequence(d); });
    check("k1-value-unbiased", [&](ordered_json& d) { return pair_value(d, EstimatorKind::k1, false); });
    check("k3-value-unbiased", [&](ordered_json& d) { return pair_value(d, EstimatorKind::k3, false); });
    check("k2-value-biased", [&](ordered_json& d) { return pair_value(d, EstimatorKind::k2, true); });
    check("k3-grad-matches-expectation", [&](ordered_json& d) { return k3_grad_expectation(d); });
    check("k3-grad-biased", [&](ordered_json& d) { return k3_grad_biased(d); });
    check("k1-variance-near-match", [&](ordered_json& d) { return k1_variance(d); });
    check("kdrl-gradient-additivity", [&](ordered_json& d) { return additivity(d); });
    check("topk-full-vocabulary", [&](ordered_json& d) { return topk_full(d); });
    return std::move(report_);
  }

 private:
  void check(const std::string& name, const std::function<bool(ordered_json&)>& body) {
    CheckResult c;
    c.name = name;
    c.detail = ordered_json::object();
    try {
      c.status = body(c.detail) ? CheckStatus::pass : CheckStatus::fail;
    } catch (const BudgetExceeded& e) {
      c.status = CheckStatus::budget_exceeded;
      c.detail = {{"error", e.what()}};
    }
    report_.checks.push_back(std::move(c));
  }

  std::uint64_t seed(std::uint64_t tag, std::uint64_t i = 0) const { return derive_seed(opt_.seed, {tag, i}); }

  bool enumeration_normalization(ordered_json& d) {
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
      const auto kind = i % 2 == 0 ? Parameterization::tabular : Parameterization::linear_head;
      const PolicyParameters p = random_policy(tiny_shape(kind), 2.0, seed(1, i));
      const EnumerationSpace space = enumerate(p, tiny_question(seed(2, i)), kMaxLen, opt_.budget);
      worst = std::max(worst, std::abs(space.total_probability() - 1.0));
    }
    d["policies"] = 20;
    d["max_error"] = worst;
    return worst <= 1e-10;
  }

  bool rkl_zero_at_identity(ordered_json& d) {
    const PolicyParameters p = random_policy(tiny_shape(), 1.0, seed(3));
    const Question q = tiny_question(seed(4));
    const double value = exact_rkl(p, p, q, kMaxLen, opt_.budget).value;
    const double grad = max_abs(exact_rkl_grad(p, p, q, kMaxLen, opt_.budget));
    d["value"] = value;
    d["grad_max_abs"] = grad;
    return std::abs(value) <= 1e-14 && grad <= 1e-14;
  }

  bool rkl_nonnegative(ordered_json& d) {
    double min_value = INFINITY, worst_split = 0.0;
    for (int i = 0; i < 20; ++i) {
      const PolicyParameters s = random_policy(tiny_shape(), 1.0, seed(5, i));
      const PolicyParameters t = random_policy(tiny_shape(), 1.0, seed(6, i));
      const ExactRkl r = exact_rkl(s, t, tiny_question(seed(7, i)), kMaxLen, opt_.budget);
      double sum = 0.0;
      for (double x : r.per_position) sum += x;
      min_value = std::min(min_value, r.value);
      worst_split = std::max(worst_split, std::abs(sum - r.value));
    }
    d["min_value"] = min_value;
    d["max_decomposition_error"] = worst_split;
    return min_value > 0.0 && worst_split <= 1e-12;
  }

  bool two_point_rkl(ordered_json& d) {
    const double closed = 0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1);
    const double cat = exact_kl(two_point_pair());
    d["closed_form"] = closed;
    d["categorical"] = cat;
    return std::abs(cat - closed) <= 1e-12 && std::abs(closed - 0.510826) < 5e-7;
  }

  bool rkl_grad_fd(ordered_json& d) {
    double worst = 0.0;
    int probes = 0;
    for (int i = 0; i < 5; ++i) {
      const PolicyParameters s = random_policy(tiny_shape(), 1.0, seed(8, i));
      const PolicyParameters t = random_policy(tiny_shape(), 1.0, seed(9, i));
      const Question q = tiny_question(seed(10, i));
      const MatrixXd exact = exact_rkl_grad(s, t, q, kMaxLen, opt_.budget);
      // Probe rows the question can reach, so most components are nonzero.
      std::vector<int> reachable;
      for (Eigen::Index r = 0; r < exact.rows(); ++r)
        if (exact.row(r).cwiseAbs().maxCoeff() > 0.0) reachable.push_back(static_cast<int>(r));
      RngStream rng(seed(11, i));
      std::vector<std::pair<int, int>> picks;
      for (int k = 0; k < 10; ++k)
        picks.emplace_back(reachable[rng.below(reachable.size())], static_cast<int>(rng.below(kV)));
      std::vector<int> rows;
      for (auto [r, c] : picks) rows.push_back(r);
      std::sort(rows.begin(), rows.end());
      rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
      const MatrixXd fd = finite_difference(
          s, [&](const PolicyParameters& p) { return exact_rkl(p, t, q, kMaxLen, opt_.budget).value; }, 1e-5, rows);
      for (auto [r, c] : picks) {
        const double rel = std::abs(fd(r, c) - exact(r, c)) / std::max(std::abs(exact(r, c)), 1e-6);
        worst = std::max(worst, rel);
        ++probes;
      }
    }
    d["probes"] = probes;
    d["max_relative_error"] = worst;
    return worst < 1e-5;
  }

  HarnessOptions harness(Granularity g, std::uint64_t tag) const {
    HarnessOptions h;
    h.n_samples = opt_.n_samples;
    h.seed = seed(tag);
    h.max_len = kMaxLen;
    h.granularity = g;
    h.budget = opt_.budget;
    h.coefficient = coefficient_;
    return h;
  }

  bool k2_grad(ordered_json& d, Granularity g) {
    const PolicyParameters s = random_policy(tiny_shape(), 1.0, seed(12));
    const PolicyParameters t = random_policy(tiny_shape(), 1.0, seed(13));
    const EstimatorReport r =
        estimator_report(s, t, tiny_question(seed(14)), EstimatorKind::k2, harness(g, g == Granularity::sequence ? 15 : 16));
    d = grad_detail(r);
    return r.grad_within_3se();
  }

  bool k3_value_sequence(ordered_json& d) {
    const PolicyParameters s = random_policy(tiny_shape(), 1.0, seed(17));
    const PolicyParameters t = random_policy(tiny_shape(), 1.0, seed(18));
    const EstimatorReport r =
        estimator_report(s, t, tiny_question(seed(19)), EstimatorKind::k3, harness(Granularity::sequence, 20));
    d = {{"mean", r.value_mean}, {"se", r.value_se}, {"exact", r.exact_value}, {"z", r.value_z()}};
    return r.value_within_3se();
  }

  bool pair_value(ordered_json& d, EstimatorKind::Kind kind, bool expect_bias) {
    const EstimatorReport r = estimator_report(two_point_pair(), kind, opt_.n_samples, seed(21, kind), coefficient_);
    d = {{"mean", r.value_mean}, {"se", r.value_se}, {"exact", r.exact_value}, {"z", r.value_z()}};
    return expect_bias ? !r.value_within_3se() : r.value_within_3se();
  }

  bool k3_grad_expectation(ordered_json& d) {
    const CategoricalPair pair = two_point_pair();
    EstimatorReport r = estimator_report(pair, EstimatorKind::k3, opt_.n_samples, seed(22), coefficient_);
    r.exact_grad = exact_estimator_expectation(pair, EstimatorKind::k3).gradient.transpose();
    int outside = 0;
    double dev = 0.0;
    for (Eigen::Index i = 0; i < r.grad_mean.size(); ++i) {
      const double e = std::abs(r.grad_mean(i) - r.exact_grad(i));
      dev = std::max(dev, e);
      if (e > 3.0 * r.grad_se(i) + kStatSlack) ++outside;
    }
    d = {{"max_deviation", dev}, {"outside_3se", outside}};
    return outside == 0;
  }

  bool k3_grad_biased(ordered_json& d) {
    const EstimatorReport r = estimator_report(two_point_pair(), EstimatorKind::k3, opt_.n_samples, seed(23), coefficient_);
    d = grad_detail(r);
    return r.grad_deviates();
  }

  bool k1_variance(ordered_json& d) {
    CategoricalPair pair;
    pair.student_logits = VectorXd::Zero(2);
    pair.teacher_probs = (VectorXd(2) << 0.55, 0.45).finished();
    const EstimatorReport k1 = estimator_report(pair, EstimatorKind::k1, opt_.n_samples, seed(24), coefficient_);
    const EstimatorReport k3 = estimator_report(pair, EstimatorKind::k3, opt_.n_samples, seed(24), coefficient_);
    d = {{"k1_variance", k1.value_variance}, {"k3_variance", k3.value_variance}};
    return k1.value_variance >= k3.value_variance;
  }

  bool additivity(ordered_json& d) {
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
      const auto kind = i % 2 == 0 ? Parameterization::tabular : Parameterization::linear_head;
      const PolicyParameters s = random_policy(tiny_shape(kind), 1.0, seed(25, i));
      const PolicyParameters t = random_policy(tiny_shape(kind), 1.0, seed(26, i));
      const Batch batch = synthetic_batch(s, t, 3, 4, kMaxLen, seed(27, i));
      RngStream rng(seed(28, i));
      const double beta = 0.01 + rng.uniform();
      ObjectiveConfig cfg;
      cfg.entropy_coef = 0.0;
      const MatrixXd joint = kdrl_loss(batch, s, &t, cfg, beta).gradient;
      const MatrixXd sum = grpo_loss(batch, s).gradient + beta * rkl_loss(batch, s, &t, cfg.estimator).gradient;
      worst = std::max(worst, (joint - sum).norm() / std::max(sum.norm(), 1e-300));
    }
    d["batches"] = 20;
    d["max_relative_error"] = worst;
    return worst < 1e-10;
  }

  bool topk_full(ordered_json& d) {
    double worst_sum = 0.0, worst_kl = 0.0;
    for (int i = 0; i < 10; ++i) {
      const PolicyParameters s = random_policy(tiny_shape(), 1.5, seed(29, i));
      const PolicyParameters t = random_policy(tiny_shape(), 1.5, seed(30, i));
      const Question q = tiny_question(seed(31, i));
      for (const EnumeratedSequence& e : enumerate(s, q, kMaxLen, opt_.budget).sequences) {
        TokenSeq h = q.prompt;
        for (std::size_t pos = 0; pos < e.tokens.size(); ++pos) {
          const Context ctx{h, static_cast<int>(pos)};
          const VectorXd p = softmax(s.logits(ctx));
          const VectorXd qt = softmax(t.logits(ctx));
          double kl = 0.0;
          for (int v = 0; v < kV; ++v) kl += p(v) * (std::log(p(v)) - std::log(std::max(qt(v), kTeacherFloor)));
          const VectorXd renorm = topk_teacher_renorm(qt, kV);
          worst_sum = std::max(worst_sum, std::abs(renorm.sum() - 1.0));
          worst_kl = std::max(worst_kl, std::abs(topk_kl_value(p, renorm) - kl));
          h.push_back(e.tokens[pos]);
        }
      }
    }
    d["max_renorm_error"] = worst_sum;
    d["max_kl_error"] = worst_kl;
    return worst_sum <= 1e-12 && worst_kl <= 1e-12;
  }

  SuiteOptions opt_;
  CoefficientFn coefficient_;
  SuiteReport report_;
};

}  // namespace

SuiteReport run_identity_suite(const SuiteOptions& options) { return Suite(options).run(); }

}  // namespace kdrl
