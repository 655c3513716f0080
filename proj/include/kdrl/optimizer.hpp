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

#include <string>

namespace kdrl {

enum class OptimizerKind { sgd, adam };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(const std::string& name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  double learning_rate = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double max_grad_norm = 0.0;  // 0 disables clipping

  void validate() const;
  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

// Descends `grad` on `weights`. Adam keeps per-parameter moments.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config) : config_(config) { config_.validate(); }

  void step(MatrixXd& weights, const MatrixXd& grad);

  const OptimizerConfig& config() const { return config_; }
  long steps_taken() const { return t_; }

 private:
  OptimizerConfig config_;
  MatrixXd m_, v_;
  long t_ = 0;
};

}  // namespace kdrl
