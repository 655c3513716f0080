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

#include "kdrl/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace kdrl {

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer_kind(const std::string& name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  throw std::invalid_argument("unknown optimizer '" + name + "'");
}

void OptimizerConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("learning rate must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw std::invalid_argument("adam betas must be in [0, 1)");
  if (!(epsilon > 0.0)) throw std::invalid_argument("adam epsilon must be > 0");
  if (!(max_grad_norm >= 0.0)) throw std::invalid_argument("max_grad_norm must be >= 0");
}

void Optimizer::step(MatrixXd& weights, const MatrixXd& grad) {
  ++t_;
  double scale = 1.0;
  if (config_.max_grad_norm > 0.0) {
    const double norm = grad.norm();
    if (norm > config_.max_grad_norm) scale = config_.max_grad_norm / norm;
  }
  if (config_.learning_rate == 0.0) return;
  if (config_.kind == OptimizerKind::sgd) {
    weights -= (config_.learning_rate * scale) * grad;
    return;
  }
  if (m_.size() == 0) {
    m_ = MatrixXd::Zero(weights.rows(), weights.cols());
    v_ = MatrixXd::Zero(weights.rows(), weights.cols());
  }
  m_ = config_.beta1 * m_ + ((1.0 - config_.beta1) * scale) * grad;
  v_ = config_.beta2 * v_ + ((1.0 - config_.beta2) * scale * scale) * grad.cwiseAbs2();
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  weights.array() -= config_.learning_rate * (m_.array() / bc1) / ((v_.array() / bc2).sqrt() + config_.epsilon);
}

}  // namespace kdrl
