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

// Per-token reverse-KL estimators. R is the teacher-minus-student log-ratio
// log pi_T(o_t) - log pi_theta(o_t) at a student-sampled token.

#include "kdrl/types.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace kdrl {

struct EstimatorKind {
  enum Kind { k1, k2, k3, topk };
  Kind kind = k2;
  int top_k = 0;  // only meaningful for topk

  static EstimatorKind make_topk(int k) {
    if (k < 1) throw std::invalid_argument("top-k requires K >= 1");
    return {topk, k};
  }

  friend bool operator==(const EstimatorKind&, const EstimatorKind&) = default;
};

std::string to_string(const EstimatorKind& kind);
// Accepts "k1", "k2", "k3", "topk" (K filled by `default_k`) and "topk:K".
EstimatorKind parse_estimator(const std::string& text, int default_k);

inline int default_top_k(int vocab_size) { return std::min(vocab_size, 8); }

template <typename Scalar>
Scalar log_ratio(Scalar teacher_logp, Scalar student_logp) {
  return teacher_logp - student_logp;
}

template <typename Scalar>
Scalar k1_value(Scalar r) {
  return -r;
}

template <typename Scalar>
Scalar k2_value(Scalar r) {
  return Scalar(0.5) * r * r;
}

template <typename Scalar>
Scalar k3_value(Scalar r) {
  // expm1 keeps the value accurate (and nonnegative) near r = 0.
  return std::expm1(r) - r;
}

// c such that the per-token gradient of the KL penalty is c * grad log pi(token).
template <typename Scalar>
Scalar grad_coefficient(EstimatorKind::Kind kind, Scalar r) {
  switch (kind) {
    case EstimatorKind::k2: return -r;
    case EstimatorKind::k3: return -std::expm1(r);
    case EstimatorKind::k1:
      throw std::invalid_argument("k1 is a value estimator only; it has no gradient coefficient");
    case EstimatorKind::topk:
      throw std::invalid_argument("topk uses the full-vocabulary gradient, not a coefficient");
  }
  throw std::invalid_argument("unknown estimator kind");
}

template <typename Scalar>
Scalar estimator_value(EstimatorKind::Kind kind, Scalar r) {
  switch (kind) {
    case EstimatorKind::k1: return k1_value(r);
    case EstimatorKind::k2: return k2_value(r);
    case EstimatorKind::k3: return k3_value(r);
    case EstimatorKind::topk: break;
  }
  throw std::invalid_argument("topk has no single-token value");
}

// Keeps the K most probable teacher entries (lowest id wins ties at rank K)
// and renormalizes them; everything else becomes 0.
template <typename Derived>
Vector<typename Derived::Scalar> topk_teacher_renorm(const Eigen::MatrixBase<Derived>& teacher, int k) {
  using Scalar = typename Derived::Scalar;
  const auto n = static_cast<int>(teacher.size());
  if (k < 1 || k > n) throw std::invalid_argument("top-k K must be in [1, V]");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return teacher(a) > teacher(b); });
  Vector<Scalar> out = Vector<Scalar>::Zero(n);
  Scalar mass = 0;
  for (int i = 0; i < k; ++i) mass += teacher(order[i]);
  for (int i = 0; i < k; ++i) out(order[i]) = teacher(order[i]) / mass;
  return out;
}

// Per-entry log(p / q) with q floored at kTeacherFloor; zero where p == 0.
template <typename DerivedP, typename DerivedQ>
Vector<typename DerivedP::Scalar> floored_log_ratio(const Eigen::MatrixBase<DerivedP>& student,
                                                    const Eigen::MatrixBase<DerivedQ>& teacher) {
  using Scalar = typename DerivedP::Scalar;
  Vector<Scalar> d = Vector<Scalar>::Zero(student.size());
  for (Eigen::Index v = 0; v < student.size(); ++v)
    if (student(v) > 0)
      d(v) = std::log(student(v)) - std::log(std::max<Scalar>(teacher(v), Scalar(kTeacherFloor)));
  return d;
}

// Full-vocabulary KL(student || teacher).
template <typename DerivedP, typename DerivedQ>
typename DerivedP::Scalar topk_kl_value(const Eigen::MatrixBase<DerivedP>& student,
                                        const Eigen::MatrixBase<DerivedQ>& teacher) {
  return student.dot(floored_log_ratio(student, teacher));
}

// Gradient of topk_kl_value with respect to the student's logits:
// sum_v p_v d_v (e_v - p) = p * (d - <p, d>).
template <typename DerivedP, typename DerivedQ>
Vector<typename DerivedP::Scalar> topk_kl_logit_grad(const Eigen::MatrixBase<DerivedP>& student,
                                                     const Eigen::MatrixBase<DerivedQ>& teacher) {
  const auto d = floored_log_ratio(student, teacher);
  const auto mean = student.dot(d);
  return student.cwiseProduct((d.array() - mean).matrix());
}

}  // namespace kdrl
