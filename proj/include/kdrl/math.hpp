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

#include "kdrl/types.hpp"

#include <cmath>
#include <limits>

namespace kdrl {

template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  const Scalar m = x.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((x.array() - m).exp().sum());
}

template <typename Derived>
Vector<typename Derived::Scalar> log_softmax(const Eigen::MatrixBase<Derived>& logits) {
  return logits.array() - log_sum_exp(logits);
}

template <typename Derived>
Vector<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  Vector<Scalar> p = (logits.array() - logits.maxCoeff()).exp();
  return p / p.sum();
}

// Index of the largest entry; ties go to the lowest index.
template <typename Derived>
Eigen::Index argmax_lowest(const Eigen::MatrixBase<Derived>& x) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < x.size(); ++i)
    if (x(i) > x(best)) best = i;
  return best;
}

// Shannon entropy in nats; zero-probability entries contribute nothing.
template <typename Derived>
typename Derived::Scalar entropy(const Eigen::MatrixBase<Derived>& p) {
  using Scalar = typename Derived::Scalar;
  Scalar h = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (p(i) > 0) h -= p(i) * std::log(p(i));
  return h;
}

// d entropy(softmax(z)) / dz = -p * (log p + H).
template <typename Derived>
Vector<typename Derived::Scalar> entropy_logit_grad(const Eigen::MatrixBase<Derived>& p) {
  using Scalar = typename Derived::Scalar;
  const Scalar h = entropy(p);
  Vector<Scalar> g(p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i)
    g(i) = p(i) > 0 ? -p(i) * (std::log(p(i)) + h) : Scalar(0);
  return g;
}

}  // namespace kdrl
