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

#include <cstdint>
#include <string>

namespace kdrl {

// KL coefficient schedule. Linear anneal: beta = max(init - decay * step, floor).
struct BetaSchedule {
  enum Kind { constant, linear };
  Kind kind = constant;
  double value = 2e-3;  // constant kind
  double init = 5e-3;
  double decay = 5e-5;
  double floor = 1e-3;

  static BetaSchedule make_constant(double beta);
  static BetaSchedule make_linear(double init, double decay, double floor);

  friend bool operator==(const BetaSchedule&, const BetaSchedule&) = default;
};

// Steps are 0-based: step 0 uses the initial value.
double beta_at(const BetaSchedule& schedule, std::uint64_t step);

// "constant:B" or "linear:INIT,DECAY,FLOOR".
BetaSchedule parse_beta_schedule(const std::string& text);
std::string to_string(const BetaSchedule& schedule);

}  // namespace kdrl
