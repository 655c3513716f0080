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

#include "kdrl/schedule.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace kdrl {

namespace {

void require_nonnegative(double x, const char* what) {
  if (!(x >= 0.0) || !std::isfinite(x)) throw std::invalid_argument(std::string(what) + " must be finite and >= 0");
}

double parse_number(const std::string& s) {
  double x = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw std::invalid_argument("bad number '" + s + "' in beta schedule");
  return x;
}

std::string shortest(double x) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

}  // namespace

BetaSchedule BetaSchedule::make_constant(double beta) {
  require_nonnegative(beta, "beta");
  BetaSchedule s;
  s.kind = constant;
  s.value = beta;
  return s;
}

BetaSchedule BetaSchedule::make_linear(double init, double decay, double floor) {
  require_nonnegative(init, "beta_init");
  require_nonnegative(decay, "beta decay");
  require_nonnegative(floor, "beta_min");
  if (floor > init) throw std::invalid_argument("beta_min must not exceed beta_init");
  BetaSchedule s;
  s.kind = linear;
  s.init = init;
  s.decay = decay;
  s.floor = floor;
  return s;
}

double beta_at(const BetaSchedule& schedule, std::uint64_t step) {
  if (schedule.kind == BetaSchedule::constant) return schedule.value;
  return std::max(schedule.init - schedule.decay * static_cast<double>(step), schedule.floor);
}

BetaSchedule parse_beta_schedule(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw std::invalid_argument("beta schedule must look like kind:values");
  const std::string kind = text.substr(0, colon);
  std::vector<double> vals;
  std::string rest = text.substr(colon + 1);
  std::size_t start = 0;
  while (true) {
    const auto comma = rest.find(',', start);
    vals.push_back(parse_number(rest.substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (kind == "constant" && vals.size() == 1) return BetaSchedule::make_constant(vals[0]);
  if (kind == "linear" && vals.size() == 3) return BetaSchedule::make_linear(vals[0], vals[1], vals[2]);
  throw std::invalid_argument("unrecognized beta schedule '" + text + "'");
}

std::string to_string(const BetaSchedule& schedule) {
  if (schedule.kind == BetaSchedule::constant) return "constant:" + shortest(schedule.value);
  return "linear:" + shortest(schedule.init) + "," + shortest(schedule.decay) + "," + shortest(schedule.floor);
}

}  // namespace kdrl
