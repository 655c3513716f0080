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

// The identity suite behind `kdrl oracle-check`: exact references,
// finite differences and estimator statistics on tiny instances.

#include "kdrl/objectives.hpp"
#include "kdrl/oracle.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace kdrl {

enum class SuiteFault {
  none,
  k3_grad_sign  // flips the sign of the k3 gradient coefficient (test fixture)
};

struct SuiteOptions {
  double budget = kDefaultEnumerationBudget;
  std::uint64_t seed = 0;
  int n_samples = 100000;
  SuiteFault fault = SuiteFault::none;
};

enum class CheckStatus { pass, fail, budget_exceeded };

std::string to_string(CheckStatus status);

struct CheckResult {
  std::string name;
  CheckStatus status = CheckStatus::fail;
  nlohmann::ordered_json detail;

  bool passed() const { return status == CheckStatus::pass; }
};

struct SuiteReport {
  std::vector<CheckResult> checks;

  bool all_passed() const;
  std::vector<std::string> failed() const;
  // Deterministic given the options (no timings).
  nlohmann::ordered_json to_json(const SuiteOptions& options) const;
};

SuiteReport run_identity_suite(const SuiteOptions& options = {});

// Student-sampled groups with teacher scores, random binary rewards and
// group advantages; every trajectory is stored with its snapshot fields.
Batch synthetic_batch(const PolicyParameters& student, const PolicyParameters& teacher, int n_groups,
                      int group_size, int max_len, std::uint64_t seed);

// The single-step mismatch instance: student (0.5, 0.5), teacher (0.9, 0.1).
CategoricalPair two_point_pair();

}  // namespace kdrl
