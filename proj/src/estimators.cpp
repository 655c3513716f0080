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

namespace kdrl {

std::string to_string(const EstimatorKind& kind) {
  switch (kind.kind) {
    case EstimatorKind::k1: return "k1";
    case EstimatorKind::k2: return "k2";
    case EstimatorKind::k3: return "k3";
    case EstimatorKind::topk: return "topk:" + std::to_string(kind.top_k);
  }
  return "unknown";
}

EstimatorKind parse_estimator(const std::string& text, int default_k) {
  if (text == "k1") return {EstimatorKind::k1, 0};
  if (text == "k2") return {EstimatorKind::k2, 0};
  if (text == "k3") return {EstimatorKind::k3, 0};
  if (text == "topk") return EstimatorKind::make_topk(default_k);
  if (text.rfind("topk:", 0) == 0) {
    std::size_t used = 0;
    const int k = std::stoi(text.substr(5), &used);
    if (used != text.size() - 5) throw std::invalid_argument("bad top-k estimator '" + text + "'");
    return EstimatorKind::make_topk(k);
  }
  throw std::invalid_argument("unknown estimator '" + text + "'");
}

}  // namespace kdrl
