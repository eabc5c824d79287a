// Copyright 2026 The zorephrase Authors.
// SPDX-License-Identifier: Apache-2.0

// Judge calibration: score a judge template against human-labeled pairs,
// gate at a threshold and, when the gate fails, hand a revision worksheet to
// a human and score the revised template they return.

#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "zorephrase/data_io.hpp"
#include "zorephrase/errors.hpp"
#include "zorephrase/rephrase_pipeline.hpp"

namespace zorephrase {

struct LabeledPair {
  std::string pair_id;
  Instance original;
  std::string target_field;
  std::string rewritten_span;
  VerdictValue human_label = VerdictValue::same;  // same or not_same
};

inline std::string verdict_label_text(VerdictValue v) {
  switch (v) {
    case VerdictValue::same: return "same";
    case VerdictValue::not_same: return "not the same";
    case VerdictValue::unparseable: return "unparseable";
  }
  return "?";
}

/// One JSON object per line: pair_id, instance (schema fields and label),
/// target_field (defaults to the first rewritable field), rewritten_span,
/// human_label ("same" or "not the same").
inline std::vector<LabeledPair> parse_labeled_pairs(std::istream& in, const TaskSchema& schema) {
  std::vector<LabeledPair> out;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fail = [&](const std::string& msg) {
      return SchemaViolationError("labeled pairs line " + std::to_string(line_no) + ": " + msg);
    };
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw fail(std::string("invalid JSON: ") + e.what());
    }
    LabeledPair p;
    try {
      p.pair_id = j.at("pair_id").get<std::string>();
      p.rewritten_span = j.at("rewritten_span").get<std::string>();
      p.target_field = j.value("target_field", schema.rewritable_fields().front());
      const auto label = j.at("human_label").get<std::string>();
      const auto parsed = parse_verdict(label);
      if (parsed == VerdictValue::unparseable)
        throw fail("human_label must be 'same' or 'not the same', got '" + label + "'");
      p.human_label = parsed;
      nlohmann::json inst = j.at("instance");
      inst["id"] = p.pair_id;
      std::istringstream one(inst.dump());
      auto ds = parse_jsonl(one, schema);
      p.original = ds.instances.at(0);
    } catch (const nlohmann::json::exception& e) {
      throw fail(e.what());
    } catch (const SchemaViolationError& e) {
      if (std::string(e.what()).rfind("labeled pairs", 0) == 0) throw;
      throw fail(e.what());
    }
    if (schema.role_of(p.target_field) != FieldRole::rewritable_span)
      throw fail("target field '" + p.target_field + "' is not rewritable");
    if (!ids.insert(p.pair_id).second) throw fail("duplicate pair_id '" + p.pair_id + "'");
    out.push_back(std::move(p));
  }
  return out;
}

inline std::vector<LabeledPair> load_labeled_pairs(const std::string& path,
                                                   const TaskSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open labeled pairs '" + path + "'");
  return parse_labeled_pairs(in, schema);
}

struct PairOutcome {
  std::string pair_id;
  VerdictValue human_label = VerdictValue::same;
  VerdictValue model_verdict = VerdictValue::unparseable;
  std::string raw_text;
  bool match = false;
};

struct CalibrationReport {
  std::vector<PairOutcome> outcomes;
  std::size_t matches = 0;
  double judge_acc = 0.0;
  double threshold = 0.90;
  bool passed = false;
  std::string template_label;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["template"] = template_label;
    j["pairs"] = outcomes.size();
    j["matches"] = matches;
    j["judge_acc"] = judge_acc;
    j["threshold"] = threshold;
    j["passed"] = passed;
    j["outcomes"] = nlohmann::ordered_json::array();
    for (const auto& o : outcomes)
      j["outcomes"].push_back({{"pair_id", o.pair_id},
                               {"human_label", verdict_label_text(o.human_label)},
                               {"model_verdict", std::string(to_string(o.model_verdict))},
                               {"raw_text", o.raw_text},
                               {"match", o.match}});
    return j;
  }
};

/// passed <=> matches / n >= threshold, compared without rounding drift so
/// that 36/40 passes at 0.90.
inline bool meets_threshold(std::size_t matches, std::size_t n, double threshold) {
  return static_cast<double>(matches) >= threshold * static_cast<double>(n) - 1e-9;
}

inline CalibrationReport evaluate_judge(Backend& backend, const PromptTemplate& judge_tpl,
                                        const TaskSchema& schema,
                                        const std::vector<LabeledPair>& pairs,
                                        double threshold = 0.90, const CallOptions& opts = {}) {
  if (pairs.empty()) throw InvalidConfigError("calibration needs at least one labeled pair");
  if (!(threshold >= 0.0 && threshold <= 1.0))
    throw InvalidConfigError("calibration threshold must lie in [0, 1]");
  CalibrationReport rep;
  rep.threshold = threshold;
  rep.template_label = judge_tpl.label();
  std::size_t failed_calls = 0;
  std::string last_error;
  for (const auto& p : pairs) {
    const Verdict v =
        judge_pair(backend, judge_tpl, schema, p.original, p.target_field, p.rewritten_span, opts);
    if (v.error) {
      ++failed_calls;
      last_error = *v.error;
    }
    PairOutcome o{p.pair_id, p.human_label, v.value, v.raw_text, v.value == p.human_label};
    rep.matches += o.match;
    rep.outcomes.push_back(std::move(o));
  }
  if (failed_calls == pairs.size())
    throw Error("every judge call failed; last error: " + last_error);
  rep.judge_acc = static_cast<double>(rep.matches) / static_cast<double>(pairs.size());
  rep.passed = meets_threshold(rep.matches, pairs.size(), threshold);
  return rep;
}

/// Human-readable list of the pairs the judge got wrong.
inline std::string revision_worksheet(const CalibrationReport& rep,
                                      const std::vector<LabeledPair>& pairs,
                                      const TaskSchema& schema) {
  std::ostringstream out;
  out << "Judge revision worksheet for " << rep.template_label << "\n";
  char acc[64];
  std::snprintf(acc, sizeof acc, "%.4f", rep.judge_acc);
  out << "judge_acc " << rep.matches << "/" << rep.outcomes.size() << " = " << acc
      << " (threshold " << rep.threshold << ")\n";
  out << "Revise the judge template (bump its version, add or edit few-shot examples) and "
         "supply the revised file.\n";
  std::size_t k = 0;
  for (std::size_t i = 0; i < rep.outcomes.size(); ++i) {
    const auto& o = rep.outcomes[i];
    if (o.match) continue;
    const auto& p = pairs.at(i);
    out << "\n[" << ++k << "] pair " << o.pair_id << "\n";
    out << "  human label:   " << verdict_label_text(o.human_label) << "\n";
    out << "  model verdict: " << to_string(o.model_verdict) << "\n";
    out << "  model reply:   " << (o.raw_text.empty() ? "(none)" : o.raw_text) << "\n";
    out << "  original " << p.target_field << ": " << p.original.fields.at(p.target_field) << "\n";
    out << "  rewritten " << p.target_field << ": " << p.rewritten_span << "\n";
    for (const auto& f : schema.fields()) {
      if (f.name == p.target_field) continue;
      if (f.role == FieldRole::label)
        out << "  " << f.name << ": " << schema.label_space().at(p.original.label) << "\n";
      else
        out << "  " << f.name << ": " << p.original.fields.at(f.name) << "\n";
    }
  }
  return out.str();
}

/// Called with the failing report and the worksheet path; returns the path
/// of the human-revised template, or nothing to stop early.
using RevisionProvider =
    std::function<std::optional<std::string>(const CalibrationReport&, const std::string&)>;

struct CalibrationOutcome {
  PromptTemplate final_template;
  std::vector<CalibrationReport> reports;
  std::vector<std::string> worksheets;
  bool calibrated = false;

  std::string status() const { return calibrated ? "calibrated" : "not-calibrated"; }
};

/// Scores the template; while it falls short and rounds remain, writes a
/// worksheet and loads the revision the human supplies. Never edits a
/// template itself.
inline CalibrationOutcome calibration_loop(Backend& backend, const PromptTemplate& initial,
                                           const TaskSchema& schema,
                                           const std::vector<LabeledPair>& pairs,
                                           const RevisionProvider& revise,
                                           const std::filesystem::path& worksheet_dir,
                                           double threshold = 0.90, int max_rounds = 3,
                                           const CallOptions& opts = {}) {
  if (max_rounds < 1) throw InvalidConfigError("max_rounds must be >= 1");
  CalibrationOutcome out{initial, {}, {}, false};
  for (int round = 1; round <= max_rounds; ++round) {
    auto rep = evaluate_judge(backend, out.final_template, schema, pairs, threshold, opts);
    const bool passed = rep.passed;
    out.reports.push_back(std::move(rep));
    if (passed) {
      out.calibrated = true;
      return out;
    }
    if (round == max_rounds) break;
    std::filesystem::create_directories(worksheet_dir);
    const auto path =
        (worksheet_dir / ("judge-revision-round-" + std::to_string(round) + ".txt")).string();
    {
      std::ofstream ws(path, std::ios::binary | std::ios::trunc);
      ws << revision_worksheet(out.reports.back(), pairs, schema);
      if (!ws) throw Error("cannot write worksheet '" + path + "'");
    }
    out.worksheets.push_back(path);
    const auto revised = revise(out.reports.back(), path);
    if (!revised) break;
    out.final_template = PromptTemplate::load(*revised);
    out.final_template.validate_against(schema);
    if (out.final_template.kind != TemplateKind::judge)
      throw TemplateError("revised template '" + *revised + "' is not a judge template");
  }
  return out;
}

}  // namespace zorephrase
