// Copyright 2026 The zorephrase Authors.
// SPDX-License-Identifier: Apache-2.0

// Rewrite, judge and gate: renders prompts, parses the rewriter and judge
// outputs, applies the rejection gate and assembles the rephrased corpus.
// Also the few-shot assembly step that turns annotated candidate rewrites
// into template exemplars.

#pragma once

#include <atomic>
#include <cctype>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"
#include "zorephrase/data_io.hpp"
#include "zorephrase/errors.hpp"
#include "zorephrase/llm_backend.hpp"
#include "zorephrase/prompt_template.hpp"

namespace zorephrase {

struct RenderedPrompt {
  std::string system_text;
  std::string user_text;

  ChatRequest request(double temperature, std::size_t max_output_tokens) const {
    return ChatRequest{system_text, user_text, temperature, max_output_tokens};
  }
};

namespace detail {

inline std::map<std::string, std::string> slot_values(const TaskSchema& schema,
                                                      const Instance& inst) {
  std::map<std::string, std::string> values;
  for (const auto& f : schema.fields()) {
    if (f.role == FieldRole::label) {
      values[f.name] = schema.label_space().at(inst.label);
    } else {
      auto it = inst.fields.find(f.name);
      if (it == inst.fields.end())
        throw SchemaViolationError("instance '" + inst.id + "' lacks field '" + f.name + "'");
      values[f.name] = it->second;
    }
  }
  return values;
}

inline std::string render_exemplar(const TaskSchema& schema, const Exemplar& e, std::size_t n,
                                   TemplateKind kind) {
  std::string out = "Example " + std::to_string(n);
  for (const auto& f : schema.fields())
    if (const auto* v = e.field(f.name)) out += "\n" + display_name(f.name) + ": " + *v;
  if (kind == TemplateKind::rewriter) {
    out += "\n" + std::string(kTargetFieldMarker) + e.target_field;
    out += "\n" + std::string(kRewrittenMarker) + " " + e.rewritten;
  } else {
    out += "\nRewritten " + e.target_field + ": " + e.rewritten;
    out += "\nVerdict: " + (e.verdict.empty() ? std::string("same") : e.verdict);
  }
  return out;
}

inline void append_block(std::string& out, const std::string& block) {
  if (block.empty()) return;
  if (!out.empty()) out += "\n\n";
  out += block;
}

inline RenderedPrompt render(const PromptTemplate& tpl, const TaskSchema& schema,
                             const std::map<std::string, std::string>& values) {
  RenderedPrompt p;
  for (const auto& s : tpl.sections) {
    switch (s.kind) {
      case SectionKind::few_shot_module: {
        std::string block = s.text;
        std::size_t n = 0;
        for (const auto* e : tpl.approved_exemplars())
          append_block(block, render_exemplar(schema, *e, ++n, tpl.kind));
        if (n > 0) append_block(p.user_text, block);
        break;
      }
      case SectionKind::instance_slots:
        append_block(p.user_text, substitute(s.text, values));
        break;
      default:
        append_block(p.system_text, substitute(s.text, values));
        break;
    }
  }
  return p;
}

inline void require_rewritable(const TaskSchema& schema, const std::string& target_field) {
  if (schema.role_of(target_field) != FieldRole::rewritable_span)
    throw SchemaViolationError("field '" + target_field + "' is not a rewritable span of schema '" +
                               schema.name() + "'");
}

}  // namespace detail

/// System text holds the instruction sections; user text holds the approved
/// exemplars, the filled instance slots and the marked target span.
inline RenderedPrompt render_rewriter_prompt(const PromptTemplate& tpl, const TaskSchema& schema,
                                             const Instance& inst,
                                             const std::string& target_field) {
  if (tpl.kind != TemplateKind::rewriter)
    throw TemplateError("template '" + tpl.name + "' is not a rewriter template");
  tpl.validate_against(schema);
  detail::require_rewritable(schema, target_field);
  auto values = detail::slot_values(schema, inst);
  values["target_field"] = target_field;
  auto p = detail::render(tpl, schema, values);
  detail::append_block(p.user_text, std::string(kTargetFieldMarker) + target_field + "\n" +
                                        std::string(kSpanOpen) + inst.fields.at(target_field) +
                                        std::string(kSpanClose));
  return p;
}

inline RenderedPrompt render_judge_prompt(const PromptTemplate& tpl, const TaskSchema& schema,
                                          const Instance& original,
                                          const std::string& target_field,
                                          const std::string& rewritten_span) {
  if (tpl.kind != TemplateKind::judge)
    throw TemplateError("template '" + tpl.name + "' is not a judge template");
  tpl.validate_against(schema);
  detail::require_rewritable(schema, target_field);
  auto values = detail::slot_values(schema, original);
  values["target_field"] = target_field;
  values["rewritten_span"] = rewritten_span;
  return detail::render(tpl, schema, values);
}

/// The text after the first line that starts with "Rewritten:", trimmed.
inline std::optional<std::string> parse_rewriter_output(std::string_view text) {
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto line_start = text.find_first_not_of(" \t", pos);
    if (line_start == std::string_view::npos) break;
    if (text.substr(line_start).starts_with(kRewrittenMarker)) {
      auto span = detail::trim(text.substr(line_start + kRewrittenMarker.size()));
      if (span.empty()) return std::nullopt;
      return span;
    }
    const auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  return std::nullopt;
}

struct RewriteResult {
  std::string instance_id;
  std::string target_field;
  std::string original_span;
  std::string rewritten_span;
  std::string backend_name;

  nlohmann::ordered_json to_json() const {
    return {{"instance_id", instance_id},
            {"target_field", target_field},
            {"original_span", original_span},
            {"rewritten_span", rewritten_span},
            {"backend", backend_name}};
  }

  static RewriteResult from_json(const nlohmann::json& j) {
    try {
      return {j.at("instance_id").get<std::string>(), j.at("target_field").get<std::string>(),
              j.at("original_span").get<std::string>(), j.at("rewritten_span").get<std::string>(),
              j.value("backend", std::string())};
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed rewrite record: ") + e.what());
    }
  }

  bool operator==(const RewriteResult&) const = default;
};

struct CallOptions {
  double temperature = 0.0;
  std::size_t max_output_tokens = 512;
  int max_backend_retries = 2;
  Backoff backoff{};
  Sleeper sleep = real_sleep;
};

inline ChatResponse call_backend(Backend& backend, const ChatRequest& request,
                                 const CallOptions& opts) {
  return send_with_retry(backend, request, opts.max_backend_retries, opts.backoff, opts.sleep);
}

/// Throws BackendError / RetriesExhaustedError on infrastructure failure and
/// ParseError when the reply breaks the output contract.
inline RewriteResult rewrite_instance(Backend& backend, const PromptTemplate& tpl,
                                      const TaskSchema& schema, const Instance& inst,
                                      const std::string& target_field,
                                      const CallOptions& opts = {}, int attempt = 0) {
  auto prompt = render_rewriter_prompt(tpl, schema, inst, target_field);
  if (attempt > 0) prompt.user_text += "\n\nAttempt " + std::to_string(attempt + 1) + ".";
  const auto response =
      call_backend(backend, prompt.request(opts.temperature, opts.max_output_tokens), opts);
  auto span = parse_rewriter_output(response.text);
  if (!span)
    throw ParseError("rewriter reply for '" + inst.id + "' lacks a nonempty '" +
                     std::string(kRewrittenMarker) + "' line");
  return {inst.id, target_field, inst.fields.at(target_field), std::move(*span),
          response.backend_name};
}

enum class VerdictValue { same, not_same, unparseable };

inline std::string_view to_string(VerdictValue v) {
  switch (v) {
    case VerdictValue::same: return "Same";
    case VerdictValue::not_same: return "NotSame";
    case VerdictValue::unparseable: return "Unparseable";
  }
  return "?";
}

struct Verdict {
  VerdictValue value = VerdictValue::unparseable;
  std::string raw_text;
  std::optional<std::string> error;  // set when the backend call failed
};

/// Lowercase, drop punctuation, split on whitespace. "not the same" as a
/// token sequence gives NotSame; otherwise a "same" token gives Same;
/// anything else is Unparseable.
inline VerdictValue parse_verdict(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      if (!cur.empty()) tokens.push_back(std::move(cur));
      cur.clear();
    } else if (!std::ispunct(c)) {
      cur += static_cast<char>(std::tolower(c));
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  for (std::size_t i = 0; i + 2 < tokens.size(); ++i)
    if (tokens[i] == "not" && tokens[i + 1] == "the" && tokens[i + 2] == "same")
      return VerdictValue::not_same;
  for (const auto& t : tokens)
    if (t == "same") return VerdictValue::same;
  return VerdictValue::unparseable;
}

/// Backend failures become Unparseable with the error recorded.
inline Verdict judge_pair(Backend& backend, const PromptTemplate& tpl, const TaskSchema& schema,
                          const Instance& original, const std::string& target_field,
                          const std::string& rewritten_span, const CallOptions& opts = {}) {
  const auto prompt = render_judge_prompt(tpl, schema, original, target_field, rewritten_span);
  try {
    const auto response =
        call_backend(backend, prompt.request(opts.temperature, opts.max_output_tokens), opts);
    return {parse_verdict(response.text), response.text, std::nullopt};
  } catch (const BackendError& e) {
    return {VerdictValue::unparseable, "", e.what()};
  } catch (const RetriesExhaustedError& e) {
    return {VerdictValue::unparseable, "", e.what()};
  }
}

enum class GateReason { judge_not_same, unparseable, backend_error };

inline std::string_view to_string(GateReason r) {
  switch (r) {
    case GateReason::judge_not_same: return "judge_not_same";
    case GateReason::unparseable: return "unparseable";
    case GateReason::backend_error: return "backend_error";
  }
  return "?";
}

struct GateDecision {
  bool accepted = false;
  std::optional<GateReason> reason;  // set iff rejected

  std::string_view value() const { return accepted ? "Accepted" : "RejectedKeptOriginal"; }
  bool operator==(const GateDecision&) const = default;
};

/// Same: the target field takes the rewritten span. Anything else: the
/// original comes back untouched.
inline std::pair<Instance, GateDecision> rejection_gate(const Verdict& verdict,
                                                        const Instance& original,
                                                        const RewriteResult& rewrite) {
  if (rewrite.instance_id != original.id || !original.fields.count(rewrite.target_field))
    throw SchemaViolationError("rewrite of '" + rewrite.instance_id + "' does not target a field of '" +
                               original.id + "'");
  if (verdict.error) return {original, {false, GateReason::backend_error}};
  switch (verdict.value) {
    case VerdictValue::same: {
      Instance out = original;
      out.fields[rewrite.target_field] = rewrite.rewritten_span;
      return {std::move(out), {true, std::nullopt}};
    }
    case VerdictValue::not_same:
      return {original, {false, GateReason::judge_not_same}};
    case VerdictValue::unparseable:
      break;
  }
  return {original, {false, GateReason::unparseable}};
}

struct DecisionRecord {
  std::string id;
  GateDecision decision;
  int attempts = 0;
  std::string original_span;
  std::optional<std::string> rewritten_span;  // last candidate, when one was produced
  std::optional<std::string> verdict_text;
  std::string detail;  // failure message, if any
  bool infra_failure = false;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["id"] = id;
    j["decision"] = std::string(decision.value());
    j["reason"] = decision.reason ? nlohmann::ordered_json(std::string(to_string(*decision.reason)))
                                  : nlohmann::ordered_json(nullptr);
    j["attempts"] = attempts;
    j["original_span"] = original_span;
    j["rewritten_span"] = rewritten_span ? nlohmann::ordered_json(*rewritten_span)
                                         : nlohmann::ordered_json(nullptr);
    j["verdict_text"] = verdict_text ? nlohmann::ordered_json(*verdict_text)
                                     : nlohmann::ordered_json(nullptr);
    if (!detail.empty()) j["detail"] = detail;
    return j;
  }
};

struct PipelineReport {
  std::vector<DecisionRecord> decisions;  // sorted-id order
  std::string target_field;
  std::string rewriter_template;
  std::string judge_template;

  std::size_t total() const { return decisions.size(); }
  std::size_t accepted() const {
    std::size_t n = 0;
    for (const auto& d : decisions) n += d.decision.accepted;
    return n;
  }
  std::size_t infra_failures() const {
    std::size_t n = 0;
    for (const auto& d : decisions) n += d.infra_failure;
    return n;
  }
  /// accepted / total; 0 for an empty pass.
  double rewriter_accuracy() const {
    return decisions.empty() ? 0.0
                             : static_cast<double>(accepted()) / static_cast<double>(total());
  }

  nlohmann::ordered_json summary() const {
    nlohmann::ordered_json s;
    s["total"] = total();
    s["accepted"] = accepted();
    s["rejected"] = total() - accepted();
    s["rewriter_accuracy"] = rewriter_accuracy();
    s["infra_failures"] = infra_failures();
    s["target_field"] = target_field;
    s["rewriter_template"] = rewriter_template;
    s["judge_template"] = judge_template;
    return s;
  }

  /// One decision per line, then a summary line.
  std::string to_jsonl() const {
    std::string out;
    for (const auto& d : decisions) out += d.to_json().dump() + "\n";
    nlohmann::ordered_json s;
    s["summary"] = summary();
    out += s.dump() + "\n";
    return out;
  }
};

struct PipelineOptions {
  std::string target_field;  // empty: first rewritable field of the schema
  int rewrite_retries = 0;   // fresh rewrite attempts after a rejection
  double max_infra_failure_fraction = 0.05;
  std::size_t workers = 1;
  CallOptions rewriter;
  CallOptions judge;
};

namespace detail {

struct InstanceOutcome {
  Instance output;
  DecisionRecord record;
};

inline InstanceOutcome process_instance(Backend& rewriter_backend, Backend& judge_backend,
                                        const PromptTemplate& rewriter_tpl,
                                        const PromptTemplate& judge_tpl,
                                        const TaskSchema& schema, const Instance& inst,
                                        const std::string& target, const PipelineOptions& opts) {
  InstanceOutcome out{inst, {}};
  DecisionRecord& rec = out.record;
  rec.id = inst.id;
  rec.original_span = inst.fields.at(target);
  for (int attempt = 0; attempt <= opts.rewrite_retries; ++attempt) {
    rec.attempts = attempt + 1;
    rec.infra_failure = false;
    rec.detail.clear();
    RewriteResult rewrite;
    try {
      rewrite = rewrite_instance(rewriter_backend, rewriter_tpl, schema, inst, target,
                                 opts.rewriter, attempt);
    } catch (const ParseError& e) {
      rec.decision = {false, GateReason::unparseable};
      rec.detail = e.what();
      continue;
    } catch (const BackendError& e) {
      rec.decision = {false, GateReason::backend_error};
      rec.detail = e.what();
      rec.infra_failure = true;
      continue;
    } catch (const RetriesExhaustedError& e) {
      rec.decision = {false, GateReason::backend_error};
      rec.detail = e.what();
      rec.infra_failure = true;
      continue;
    }
    rec.rewritten_span = rewrite.rewritten_span;
    const Verdict verdict = judge_pair(judge_backend, judge_tpl, schema, inst, target,
                                       rewrite.rewritten_span, opts.judge);
    rec.verdict_text = verdict.error ? std::nullopt : std::optional<std::string>(verdict.raw_text);
    if (verdict.error) {
      rec.detail = *verdict.error;
      rec.infra_failure = true;
    }
    auto [output, decision] = rejection_gate(verdict, inst, rewrite);
    rec.decision = decision;
    if (decision.accepted) {
      out.output = std::move(output);
      return out;
    }
  }
  out.output = inst;
  return out;
}

}  // namespace detail

/// One pass over the train split in sorted-id order; dev and test pass
/// through untouched. A dataset without split assignments is treated as all
/// train. The output keeps the input's instance order, ids, labels and splits.
inline std::pair<Dataset, PipelineReport> build_corpus(Backend& rewriter_backend,
                                                       Backend& judge_backend,
                                                       const PromptTemplate& rewriter_tpl,
                                                       const PromptTemplate& judge_tpl,
                                                       const Dataset& dataset,
                                                       const PipelineOptions& opts = {}) {
  const TaskSchema& schema = dataset.schema;
  rewriter_tpl.validate_against(schema);
  judge_tpl.validate_against(schema);
  if (rewriter_tpl.kind != TemplateKind::rewriter)
    throw TemplateError("template '" + rewriter_tpl.name + "' is not a rewriter template");
  if (judge_tpl.kind != TemplateKind::judge)
    throw TemplateError("template '" + judge_tpl.name + "' is not a judge template");
  if (opts.rewrite_retries < 0) throw InvalidConfigError("rewrite retries must be >= 0");
  if (!(opts.max_infra_failure_fraction >= 0.0 && opts.max_infra_failure_fraction <= 1.0))
    throw InvalidConfigError("infrastructure failure fraction must lie in [0, 1]");
  const std::string target =
      opts.target_field.empty() ? schema.rewritable_fields().front() : opts.target_field;
  detail::require_rewritable(schema, target);

  std::vector<const Instance*> work;
  if (dataset.split_assignment.empty()) {
    for (const auto& inst : dataset.instances) work.push_back(&inst);
    std::sort(work.begin(), work.end(), [](auto* a, auto* b) { return a->id < b->id; });
  } else {
    work = dataset.sorted_split(Split::train);
  }

  const std::size_t n = work.size();
  const double budget = opts.max_infra_failure_fraction * static_cast<double>(n);
  std::vector<std::optional<detail::InstanceOutcome>> outcomes(n);
  std::atomic<std::size_t> next{0}, infra{0};
  std::atomic<bool> abort{false};
  std::exception_ptr failure;
  std::mutex failure_mu;

  const auto worker = [&] {
    for (;;) {
      if (abort.load()) return;
      const std::size_t k = next.fetch_add(1);
      if (k >= n) return;
      try {
        outcomes[k] = detail::process_instance(rewriter_backend, judge_backend, rewriter_tpl,
                                               judge_tpl, schema, *work[k], target, opts);
        if (outcomes[k]->record.infra_failure &&
            static_cast<double>(infra.fetch_add(1) + 1) > budget)
          abort.store(true);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
        abort.store(true);
        return;
      }
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(opts.workers, n));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  if (static_cast<double>(infra.load()) > budget)
    throw Error("backend failures on " + std::to_string(infra.load()) + " of " +
                std::to_string(n) + " instances exceed the allowed fraction " +
                std::to_string(opts.max_infra_failure_fraction));

  PipelineReport report;
  report.target_field = target;
  report.rewriter_template = rewriter_tpl.label();
  report.judge_template = judge_tpl.label();
  std::map<std::string, const Instance*> replaced;
  for (auto& o : outcomes) {
    report.decisions.push_back(o->record);
    if (o->record.decision.accepted) replaced[o->output.id] = &o->output;
  }
  Dataset out = dataset;
  for (auto& inst : out.instances) {
    auto it = replaced.find(inst.id);
    if (it != replaced.end()) inst = *it->second;
  }
  require_aligned(dataset, out);
  return {std::move(out), std::move(report)};
}

inline std::pair<Dataset, PipelineReport> build_corpus(Backend& backend,
                                                       const PromptTemplate& rewriter_tpl,
                                                       const PromptTemplate& judge_tpl,
                                                       const Dataset& dataset,
                                                       const PipelineOptions& opts = {}) {
  return build_corpus(backend, backend, rewriter_tpl, judge_tpl, dataset, opts);
}

struct Annotation {
  std::string id;
  bool approved = false;
  std::string note;

  bool operator==(const Annotation&) const = default;
};

/// Tab-separated lines: id, approve|reject, optional note. Blank lines and
/// lines starting with '#' are skipped.
inline std::vector<Annotation> parse_annotations(std::istream& in) {
  std::vector<Annotation> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty() || line[0] == '#') continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      cols.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (cols.size() < 2)
      throw ParseError("annotation line " + std::to_string(line_no) +
                       ": expected id<TAB>approve|reject");
    Annotation a;
    a.id = detail::trim(cols[0]);
    const auto verdict = detail::trim(cols[1]);
    if (verdict == "approve") a.approved = true;
    else if (verdict != "reject")
      throw ParseError("annotation line " + std::to_string(line_no) + ": '" + verdict +
                       "' is neither approve nor reject");
    if (cols.size() > 2) a.note = cols[2];
    out.push_back(std::move(a));
  }
  return out;
}

inline void write_annotations(const std::vector<Annotation>& annotations, std::ostream& out) {
  for (const auto& a : annotations) {
    out << a.id << '\t' << (a.approved ? "approve" : "reject");
    if (!a.note.empty()) out << '\t' << a.note;
    out << '\n';
  }
}

/// Inserts the approved candidates as exemplars, in candidate order, and
/// bumps the template version.
inline PromptTemplate assemble_few_shot(const PromptTemplate& zero_shot,
                                        const std::vector<RewriteResult>& candidates,
                                        const std::vector<Annotation>& annotations,
                                        const Dataset& dataset) {
  std::map<std::string, const Annotation*> by_id;
  for (const auto& a : annotations) by_id[a.id] = &a;
  PromptTemplate out = zero_shot;
  out.version = zero_shot.version + 1;
  for (const auto& c : candidates) {
    auto it = by_id.find(c.instance_id);
    if (it == by_id.end())
      throw TemplateError("no annotation for candidate '" + c.instance_id + "'");
    if (!it->second->approved) continue;
    const Instance* inst = dataset.find(c.instance_id);
    if (!inst) throw SchemaViolationError("candidate '" + c.instance_id + "' is not in the corpus");
    Exemplar e;
    e.id = c.instance_id;
    e.approved = true;
    e.target_field = c.target_field;
    const auto values = detail::slot_values(dataset.schema, *inst);
    for (const auto& f : dataset.schema.fields()) e.fields.emplace_back(f.name, values.at(f.name));
    e.rewritten = c.rewritten_span;
    out.exemplars.push_back(std::move(e));
  }
  if (!out.exemplars.empty() && !out.section(SectionKind::few_shot_module)) {
    auto pos = std::find_if(out.sections.begin(), out.sections.end(),
                            [](const Section& s) { return s.kind == SectionKind::instance_slots; });
    out.sections.insert(pos, Section{SectionKind::few_shot_module, ""});
  }
  out.validate_against(dataset.schema);
  return out;
}

/// The first n train instances in sorted-id order, rewritten for review.
inline std::vector<RewriteResult> draft_candidates(Backend& backend, const PromptTemplate& tpl,
                                                   const Dataset& dataset,
                                                   const std::string& target_field, std::size_t n,
                                                   const CallOptions& opts = {}) {
  std::vector<const Instance*> pool = dataset.split_assignment.empty()
                                          ? std::vector<const Instance*>{}
                                          : dataset.sorted_split(Split::train);
  if (dataset.split_assignment.empty()) {
    for (const auto& inst : dataset.instances) pool.push_back(&inst);
    std::sort(pool.begin(), pool.end(), [](auto* a, auto* b) { return a->id < b->id; });
  }
  std::vector<RewriteResult> out;
  for (std::size_t i = 0; i < pool.size() && out.size() < n; ++i)
    out.push_back(rewrite_instance(backend, tpl, dataset.schema, *pool[i], target_field, opts));
  return out;
}

}  // namespace zorephrase
