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

// On-disk formats. Every file starts with a schema line naming the format
// and its version.
//
// Dataset (line-delimited JSON):
//   {"schema":"kdrl-dataset","version":1,"task":"modular-sum","vocab_size":8}
//   {"id":"q0000","prompt":[1,2],"answer":3}            (one per question;
//                                                          optional "pass_rate")
// Checkpoint (text):
//   # kdrl-checkpoint 1
//   {"kind":"tabular","vocab_size":8,"window":3,"positions":12,"step":300,
//    "rows":8748,"cols":8,"provenance":"grpo-trained"}
//   then `rows` lines of `cols` space-separated shortest round-trip decimals.
// Metrics (line-delimited JSON): {"schema":"kdrl-metrics","version":1}
//   followed by one record per step.

#include "kdrl/policy.hpp"
#include "kdrl/tasks.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

namespace kdrl {

inline constexpr int kDatasetVersion = 1;
inline constexpr int kCheckpointVersion = 1;
inline constexpr int kMetricsVersion = 1;
inline constexpr int kManifestVersion = 1;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_dataset(std::ostream& out, const TaskInstance& instance);
TaskInstance read_dataset(std::istream& in);
void save_dataset(const std::filesystem::path& path, const TaskInstance& instance);
TaskInstance load_dataset(const std::filesystem::path& path);

struct Checkpoint {
  PolicyParameters params;
  std::optional<TeacherProvenance> provenance;
};

void write_checkpoint(std::ostream& out, const PolicyParameters& params,
                      std::optional<TeacherProvenance> provenance = std::nullopt);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::filesystem::path& path, const PolicyParameters& params,
                     std::optional<TeacherProvenance> provenance = std::nullopt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string metrics_header_line();

// FNV-1a over a canonical serialization.
std::uint64_t fingerprint(const TaskInstance& instance);
std::uint64_t fingerprint(const PolicyParameters& params);
std::string hex64(std::uint64_t x);

}  // namespace kdrl
