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

#include <json.hpp>

#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace kdrl {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string shortest(double x) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

json parse_line(const std::string& line, const std::string& what) {
  try {
    return json::parse(line);
  } catch (const json::parse_error& e) {
    throw FormatError("malformed " + what + ": " + e.what());
  }
}

void require_schema(const json& header, const std::string& schema, int version) {
  if (!header.is_object() || header.value("schema", "") != schema)
    throw FormatError("expected a " + schema + " header line");
  if (header.value("version", -1) != version)
    throw FormatError(schema + " version " + header.value("version", json(-1)).dump() + " is not supported");
}

class Fnv1a {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) h_ = (h_ ^ p[i]) * 0x100000001b3ULL;
  }
  std::uint64_t value() const { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

}  // namespace

void write_dataset(std::ostream& out, const TaskInstance& instance) {
  ordered_json header;
  header["schema"] = "kdrl-dataset";
  header["version"] = kDatasetVersion;
  header["task"] = to_string(instance.kind);
  header["vocab_size"] = instance.vocab.size();
  out << header.dump() << '\n';
  for (const Question& q : instance.questions) {
    ordered_json j;
    j["id"] = q.id;
    j["prompt"] = q.prompt;
    j["answer"] = q.answer;
    if (q.pass_rate) j["pass_rate"] = *q.pass_rate;
    out << j.dump() << '\n';
  }
}

TaskInstance read_dataset(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty dataset file");
  const json header = parse_line(line, "dataset header");
  require_schema(header, "kdrl-dataset", kDatasetVersion);
  TaskInstance inst;
  try {
    inst.kind = parse_task_kind(header.at("task").get<std::string>());
    inst.vocab = Vocabulary(header.at("vocab_size").get<int>());
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad dataset header: ") + e.what());
  }
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const json j = parse_line(line, "dataset line " + std::to_string(lineno));
    Question q;
    try {
      q.id = j.at("id").get<std::string>();
      q.prompt = j.at("prompt").get<TokenSeq>();
      q.answer = j.at("answer").get<Token>();
      if (j.contains("pass_rate")) q.pass_rate = j.at("pass_rate").get<double>();
    } catch (const json::exception& e) {
      throw FormatError("bad dataset line " + std::to_string(lineno) + ": " + e.what());
    }
    if (q.prompt.empty()) throw FormatError("question " + q.id + " has an empty prompt");
    if (!inst.vocab.is_content(q.answer)) throw FormatError("question " + q.id + " has a reserved or invalid answer");
    if (task_answer(inst.kind, inst.vocab, q.prompt) != q.answer)
      throw FormatError("question " + q.id + " violates the " + to_string(inst.kind) + " rule");
    inst.questions.push_back(std::move(q));
  }
  return inst;
}

void save_dataset(const std::filesystem::path& path, const TaskInstance& instance) {
  auto out = open_out(path);
  write_dataset(out, instance);
}

TaskInstance load_dataset(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_dataset(in);
}

void write_checkpoint(std::ostream& out, const PolicyParameters& params,
                      std::optional<TeacherProvenance> provenance) {
  params.check_finite();
  const PolicyShape& s = params.shape();
  ordered_json m;
  m["kind"] = to_string(s.kind);
  m["vocab_size"] = s.vocab_size;
  m["window"] = s.window;
  m["positions"] = s.positions;
  m["step"] = params.step;
  m["rows"] = params.weights().rows();
  m["cols"] = params.weights().cols();
  if (provenance) m["provenance"] = to_string(*provenance);
  out << "# kdrl-checkpoint " << kCheckpointVersion << '\n' << m.dump() << '\n';
  std::string row;
  for (Eigen::Index r = 0; r < params.weights().rows(); ++r) {
    row.clear();
    for (Eigen::Index c = 0; c < params.weights().cols(); ++c) {
      if (c) row += ' ';
      row += shortest(params.weights()(r, c));
    }
    out << row << '\n';
  }
}

Checkpoint read_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "# kdrl-checkpoint " + std::to_string(kCheckpointVersion))
    throw FormatError("not a version " + std::to_string(kCheckpointVersion) + " kdrl checkpoint");
  if (!std::getline(in, line)) throw FormatError("checkpoint manifest missing");
  const json m = parse_line(line, "checkpoint manifest");
  PolicyShape shape;
  Eigen::Index rows = 0, cols = 0;
  std::uint64_t step = 0;
  std::optional<TeacherProvenance> provenance;
  try {
    shape.kind = parse_parameterization(m.at("kind").get<std::string>());
    shape.vocab_size = m.at("vocab_size").get<int>();
    shape.window = m.at("window").get<int>();
    shape.positions = m.at("positions").get<int>();
    step = m.at("step").get<std::uint64_t>();
    rows = m.at("rows").get<Eigen::Index>();
    cols = m.at("cols").get<Eigen::Index>();
    if (m.contains("provenance")) {
      const auto p = m.at("provenance").get<std::string>();
      for (auto cand : {TeacherProvenance::hand_built, TeacherProvenance::grpo_trained, TeacherProvenance::loaded})
        if (to_string(cand) == p) provenance = cand;
      if (!provenance) throw FormatError("unknown provenance '" + p + "'");
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad checkpoint manifest: ") + e.what());
  }
  if (rows != PolicyParameters::rows_for(shape) || cols != shape.vocab_size)
    throw FormatError("checkpoint dimensions do not match its manifest");
  MatrixXd w(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (!std::getline(in, line)) throw FormatError("checkpoint truncated at row " + std::to_string(r));
    const char* p = line.data();
    const char* end = line.data() + line.size();
    for (Eigen::Index c = 0; c < cols; ++c) {
      while (p < end && *p == ' ') ++p;
      double x = 0.0;
      auto [next, ec] = std::from_chars(p, end, x);
      if (ec != std::errc()) throw FormatError("bad number in checkpoint row " + std::to_string(r));
      w(r, c) = x;
      p = next;
    }
    if (p != end) throw FormatError("extra values in checkpoint row " + std::to_string(r));
  }
  Checkpoint ck{PolicyParameters(shape, std::move(w)), provenance};
  ck.params.step = step;
  ck.params.check_finite();
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const PolicyParameters& params,
                     std::optional<TeacherProvenance> provenance) {
  auto out = open_out(path);
  write_checkpoint(out, params, provenance);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_checkpoint(in);
}

std::string metrics_header_line() {
  ordered_json h;
  h["schema"] = "kdrl-metrics";
  h["version"] = kMetricsVersion;
  return h.dump();
}

std::uint64_t fingerprint(const TaskInstance& instance) {
  std::ostringstream os;
  TaskInstance bare = instance;
  for (Question& q : bare.questions) q.pass_rate.reset();
  write_dataset(os, bare);
  const std::string s = os.str();
  Fnv1a h;
  h.bytes(s.data(), s.size());
  return h.value();
}

std::uint64_t fingerprint(const PolicyParameters& params) {
  Fnv1a h;
  const PolicyShape& s = params.shape();
  const int dims[4] = {static_cast<int>(s.kind), s.vocab_size, s.window, s.positions};
  h.bytes(dims, sizeof dims);
  h.bytes(params.weights().data(), sizeof(double) * static_cast<std::size_t>(params.weights().size()));
  return h.value();
}

std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

}  // namespace kdrl
