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

#include "kdrl/io.hpp"
#include "kdrl/oracle.hpp"
#include "kdrl/random.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <sstream>

namespace kdrl {
namespace {

TEST(Checkpoint, BitExactRoundTrip) {
  RngStream rng(5);
  for (int i = 0; i < 50; ++i) {
    const PolicyShape shape{i % 2 ? Parameterization::linear_head : Parameterization::tabular, 3 + static_cast<int>(rng.below(4)),
                            1 + static_cast<int>(rng.below(3)), 1 + static_cast<int>(rng.below(4))};
    PolicyParameters p = random_policy(shape, std::pow(10.0, rng.normal() * 3), 100 + i);
    p.weights()(0, 0) = std::numeric_limits<double>::denorm_min();
    p.weights()(0, 1) = -0.0;
    p.step = rng.below(100000);
    std::stringstream ss;
    const std::optional<TeacherProvenance> prov =
        i % 3 == 0 ? std::nullopt : std::optional(i % 3 == 1 ? TeacherProvenance::hand_built : TeacherProvenance::grpo_trained);
    write_checkpoint(ss, p, prov);
    const Checkpoint c = read_checkpoint(ss);
    EXPECT_EQ(c.params.shape(), p.shape());
    EXPECT_EQ(c.params.step, p.step);
    EXPECT_EQ(c.provenance, prov);
    ASSERT_EQ(c.params.weights().size(), p.weights().size());
    EXPECT_EQ(std::memcmp(c.params.weights().data(), p.weights().data(), sizeof(double) * p.weights().size()), 0);
    EXPECT_EQ(fingerprint(c.params), fingerprint(p));
  }
}

TEST(Checkpoint, RejectsMalformedFiles) {
  const PolicyParameters p(PolicyShape{Parameterization::tabular, 3, 1, 1});
  std::stringstream ok;
  write_checkpoint(ok, p);
  const std::string text = ok.str();

  std::stringstream empty("");
  EXPECT_THROW(read_checkpoint(empty), FormatError);
  std::stringstream wrong_version("# kdrl-checkpoint 2\n" + text.substr(text.find('\n') + 1));
  EXPECT_THROW(read_checkpoint(wrong_version), FormatError);
  std::stringstream truncated(text.substr(0, text.rfind('\n', text.size() - 2) + 1));
  EXPECT_THROW(read_checkpoint(truncated), FormatError);
  std::string bad = text;
  bad[bad.size() - 2] = 'x';
  std::stringstream bad_number(bad);
  EXPECT_THROW(read_checkpoint(bad_number), FormatError);
  EXPECT_THROW(load_checkpoint("/nonexistent/ckpt"), std::runtime_error);
}

TEST(Dataset, RoundTrip) {
  TaskInstance inst = generate_dataset(TaskKind::copy_last, Vocabulary(7), 12, 4, 3);
  inst.questions[2].pass_rate = 0.25;
  std::stringstream ss;
  write_dataset(ss, inst);
  const TaskInstance back = read_dataset(ss);
  EXPECT_EQ(back.kind, inst.kind);
  EXPECT_EQ(back.vocab.size(), 7);
  ASSERT_EQ(back.questions.size(), inst.questions.size());
  for (std::size_t i = 0; i < inst.questions.size(); ++i) {
    EXPECT_EQ(back.questions[i].id, inst.questions[i].id);
    EXPECT_EQ(back.questions[i].prompt, inst.questions[i].prompt);
    EXPECT_EQ(back.questions[i].answer, inst.questions[i].answer);
    EXPECT_EQ(back.questions[i].pass_rate, inst.questions[i].pass_rate);
  }
  EXPECT_EQ(fingerprint(back), fingerprint(inst));

  const auto path = std::filesystem::temp_directory_path() / "kdrl_io_dataset.jsonl";
  save_dataset(path, inst);
  EXPECT_EQ(fingerprint(load_dataset(path)), fingerprint(inst));
  std::filesystem::remove(path);
}

TEST(Dataset, RejectsBadContent) {
  const std::string header = R"({"schema":"kdrl-dataset","version":1,"task":"modular-sum","vocab_size":8})";
  auto parse = [](const std::string& s) {
    std::stringstream ss(s);
    return read_dataset(ss);
  };
  EXPECT_NO_THROW(parse(header + "\n" + R"({"id":"a","prompt":[1,2],"answer":3})" + "\n"));
  EXPECT_THROW(parse(""), FormatError);
  EXPECT_THROW(parse(R"({"schema":"kdrl-dataset","version":9,"task":"modular-sum","vocab_size":8})"), FormatError);
  EXPECT_THROW(parse(header + "\n" + R"({"id":"a","prompt":[1,2],"answer":4})"), FormatError);
  EXPECT_THROW(parse(header + "\n" + R"({"id":"a","prompt":[],"answer":3})"), FormatError);
  EXPECT_THROW(parse(header + "\n" + R"({"id":"a","prompt":[1,2],"answer":7})"), FormatError);
  EXPECT_THROW(parse(header + "\n{not json"), FormatError);
}

TEST(Fingerprint, SensitiveToContent) {
  PolicyParameters p(PolicyShape{Parameterization::tabular, 3, 1, 1});
  const std::uint64_t f0 = fingerprint(p);
  p.weights()(0, 0) = 1e-300;
  EXPECT_NE(fingerprint(p), f0);
  EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}

TEST(Metrics, HeaderLine) {
  EXPECT_EQ(metrics_header_line(), R"({"schema":"kdrl-metrics","version":1})");
}

}  // namespace
}  // namespace kdrl
