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

#include "kdrl/estimators.hpp"
#include "kdrl/math.hpp"
#include "kdrl/oracle.hpp"
#include "kdrl/random.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace kdrl {
namespace {

TEST(Values, K1) {
  EXPECT_EQ(k1_value(0.0), 0.0);
  EXPECT_EQ(log_ratio(-1.0, -2.0), 1.0);
  EXPECT_EQ(k1_value(log_ratio(-1.0, -2.0)), -1.0);
}

TEST(Values, K2) {
  EXPECT_EQ(k2_value(0.0), 0.0);
  EXPECT_NEAR(k2_value(0.2), 0.02, 1e-17);
  EXPECT_EQ(k2_value(1.0), 0.5);
}

TEST(Values, K3) {
  EXPECT_EQ(k3_value(0.0), 0.0);
  EXPECT_NEAR(k3_value(1.0), std::exp(1.0) - 2.0, 1e-15);
  EXPECT_NEAR(k3_value(-1.0), std::exp(-1.0), 1e-15);
}

TEST(Values, K2AndK3AreNonnegative) {
  RngStream rng(1);
  for (int i = 0; i < 10000; ++i) {
    const double r = 20.0 * (rng.uniform() - 0.5);
    EXPECT_GE(k2_value(r), 0.0);
    EXPECT_GE(k3_value(r), 0.0);
  }
  EXPECT_GE(k3_value(1e-9), 0.0);
  EXPECT_GE(k3_value(-1e-9), 0.0);
}

TEST(GradCoefficient, Examples) {
  EXPECT_EQ(grad_coefficient(EstimatorKind::k2, 0.0), 0.0);
  EXPECT_EQ(grad_coefficient(EstimatorKind::k2, 1.0), -1.0);
  EXPECT_NEAR(grad_coefficient(EstimatorKind::k3, 1.0), -(std::exp(1.0) - 1.0), 1e-15);
  EXPECT_THROW(grad_coefficient(EstimatorKind::topk, 1.0), std::invalid_argument);
  EXPECT_THROW(grad_coefficient(EstimatorKind::k1, 1.0), std::invalid_argument);
}

TEST(GradCoefficient, IsTheDerivativeOfTheValueWithRespectToLogPi) {
  // R = log q - log pi, so d value / d log pi = -value'(R).
  for (double r : {-2.0, -0.3, 0.0, 0.7, 1.5}) {
    for (auto kind : {EstimatorKind::k2, EstimatorKind::k3}) {
      const double h = 1e-6;
      const double d = (estimator_value(kind, r + h) - estimator_value(kind, r - h)) / (2 * h);
      EXPECT_NEAR(grad_coefficient(kind, r), -d, 1e-8);
    }
  }
}

TEST(Parse, RoundTrips) {
  EXPECT_EQ(parse_estimator("k2", 8).kind, EstimatorKind::k2);
  EXPECT_EQ(parse_estimator("topk", 8).top_k, 8);
  EXPECT_EQ(parse_estimator("topk:3", 8).top_k, 3);
  EXPECT_EQ(to_string(parse_estimator("topk:3", 8)), "topk:3");
  EXPECT_THROW(parse_estimator("k4", 8), std::invalid_argument);
  EXPECT_THROW(parse_estimator("topk:0", 8), std::invalid_argument);
  EXPECT_EQ(default_top_k(5), 5);
  EXPECT_EQ(default_top_k(32), 8);
}

TEST(TopK, RenormalizationExamples) {
  const VectorXd a = topk_teacher_renorm(Eigen::Vector3d(0.5, 0.3, 0.2), 2);
  EXPECT_NEAR(a(0), 0.625, 1e-15);
  EXPECT_NEAR(a(1), 0.375, 1e-15);
  EXPECT_EQ(a(2), 0.0);

  const Eigen::Vector3d q(0.2, 0.5, 0.3);
  EXPECT_EQ(topk_teacher_renorm(q, 3), VectorXd(q));

  const VectorXd u = topk_teacher_renorm(Eigen::Vector4d::Constant(0.25), 2);
  EXPECT_EQ(u, Eigen::Vector4d(0.5, 0.5, 0.0, 0.0));
  EXPECT_THROW(topk_teacher_renorm(q, 0), std::invalid_argument);
  EXPECT_THROW(topk_teacher_renorm(q, 4), std::invalid_argument);
}

TEST(TopK, RenormalizedSupportAndMass) {
  RngStream rng(2);
  for (int i = 0; i < 300; ++i) {
    const int v = 3 + static_cast<int>(rng.below(10));
    VectorXd z(v);
    for (int k = 0; k < v; ++k) z(k) = 3.0 * rng.normal();
    const VectorXd q = softmax(z);
    for (int k = 1; k <= v; ++k) {
      const VectorXd r = topk_teacher_renorm(q, k);
      EXPECT_NEAR(r.sum(), 1.0, 1e-12);
      EXPECT_LE((r.array() > 0.0).count(), k);
    }
  }
}

TEST(TopK, KlValueExamples) {
  const Eigen::Vector2d p(0.5, 0.5), q(0.9, 0.1);
  EXPECT_EQ(topk_kl_value(p, p), 0.0);
  EXPECT_NEAR(topk_kl_value(p, q), 0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1), 1e-15);
  EXPECT_NEAR(topk_kl_value(p, q), 0.510826, 5e-7);
}

TEST(TopK, OutOfSupportMassUsesTheFloor) {
  const Eigen::Vector3d p(0.5, 0.25, 0.25), q(0.5, 0.5, 0.0);
  const double expected = 0.5 * std::log(1.0) + 0.25 * std::log(0.5) + 0.25 * std::log(0.25 / kTeacherFloor);
  EXPECT_NEAR(topk_kl_value(p, q), expected, 1e-12);
  EXPECT_TRUE(std::isfinite(topk_kl_value(p, q)));
  EXPECT_EQ(topk_kl_value(Eigen::Vector3d(1.0, 0.0, 0.0), Eigen::Vector3d(1.0, 0.0, 0.0)), 0.0);
}

TEST(TopK, FullVocabularyMatchesExactContextKl) {
  for (int i = 0; i < 50; ++i) {
    const PolicyParameters s = random_policy(PolicyShape{Parameterization::tabular, 5, 2, 2}, 1.5, i);
    const PolicyParameters t = random_policy(PolicyShape{Parameterization::tabular, 5, 2, 2}, 1.5, 100 + i);
    const TokenSeq h{static_cast<Token>(i % 5), static_cast<Token>((i / 5) % 5)};
    const Context ctx{h, i % 2};
    const CategoricalPair pair{s.logits(ctx), softmax(t.logits(ctx))};
    const double topk = topk_kl_value(pair.student_probs(), topk_teacher_renorm(pair.teacher_probs, 5));
    EXPECT_NEAR(topk, exact_kl(pair), 1e-12);
  }
}

TEST(TopK, LogitGradientMatchesFiniteDifferences) {
  RngStream rng(3);
  for (int i = 0; i < 30; ++i) {
    VectorXd z(6), zt(6);
    for (int k = 0; k < 6; ++k) {
      z(k) = rng.normal();
      zt(k) = 2.0 * rng.normal();
    }
    const VectorXd q = topk_teacher_renorm(softmax(zt), 1 + i % 6);
    const VectorXd g = topk_kl_logit_grad(softmax(z), q);
    for (int k = 0; k < 6; ++k) {
      VectorXd up = z, dn = z;
      up(k) += 1e-6;
      dn(k) -= 1e-6;
      const double fd = (topk_kl_value(softmax(up), q) - topk_kl_value(softmax(dn), q)) / 2e-6;
      EXPECT_NEAR(g(k), fd, 1e-6 * std::max(1.0, std::abs(fd)));
    }
  }
}

}  // namespace
}  // namespace kdrl
