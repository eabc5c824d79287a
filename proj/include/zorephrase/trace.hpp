// Copyright 2026 The zorephrase Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "zorephrase/errors.hpp"

namespace zorephrase {

struct TraceRecord {
  std::uint64_t step = 0;
  double loss = 0.0;
  std::optional<double> dev_accuracy;
  std::optional<double> projected_grad;  // ZO runs only

  bool operator==(const TraceRecord&) const = default;
};

/// Per-step loss and periodic dev accuracy for one training condition.
/// Serialized as one JSON object per line; key order is fixed so identical
/// runs produce identical bytes.
struct TrainingTrace {
  std::vector<TraceRecord> records;

  bool empty() const noexcept { return records.empty(); }
  std::size_t size() const noexcept { return records.size(); }

  /// Last recorded dev accuracy, if any evaluation happened.
  std::optional<double> final_dev_accuracy() const {
    for (auto it = records.rbegin(); it != records.rend(); ++it)
      if (it->dev_accuracy) return it->dev_accuracy;
    return std::nullopt;
  }

  /// First step (1-based count of completed steps) whose dev accuracy
  /// reaches `target`, if any.
  std::optional<std::uint64_t> steps_to_dev_accuracy(double target) const {
    for (const auto& r : records)
      if (r.dev_accuracy && *r.dev_accuracy >= target) return r.step + 1;
    return std::nullopt;
  }

  void write_jsonl(std::ostream& out) const {
    for (const auto& r : records) {
      nlohmann::ordered_json line;
      line["step"] = r.step;
      line["loss"] = r.loss;
      if (r.dev_accuracy) line["dev_accuracy"] = *r.dev_accuracy;
      if (r.projected_grad) line["projected_grad"] = *r.projected_grad;
      out << line.dump() << '\n';
    }
  }

  std::string to_jsonl() const {
    std::ostringstream out;
    write_jsonl(out);
    return out.str();
  }

  static TrainingTrace read_jsonl(std::istream& in) {
    TrainingTrace trace;
    std::string text;
    std::size_t line_no = 0;
    while (std::getline(in, text)) {
      ++line_no;
      if (text.empty()) continue;
      try {
        const auto j = nlohmann::json::parse(text);
        TraceRecord r;
        r.step = j.at("step").get<std::uint64_t>();
        r.loss = j.at("loss").get<double>();
        if (j.contains("dev_accuracy")) r.dev_accuracy = j["dev_accuracy"].get<double>();
        if (j.contains("projected_grad")) r.projected_grad = j["projected_grad"].get<double>();
        trace.records.push_back(r);
      } catch (const nlohmann::json::exception& e) {
        throw ParseError("trace line " + std::to_string(line_no) + ": " + e.what());
      }
    }
    return trace;
  }
};

}  // namespace zorephrase
