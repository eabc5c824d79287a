// Copyright 2026 The zorephrase Authors.
// SPDX-License-Identifier: Apache-2.0

// Sectioned prompt templates for the rewriter and the judge.
//
// File format:
//
//   name: copa-rewriter
//   version: 1
//   schema: copa
//   kind: rewriter            (or judge)
//   max_exemplars: 20         (optional)
//   [section: task_description]
//   ...free text...
//   [section: few_shot_module]
//   ...optional preamble...
//   [exemplar id=copa-0001 approved=yes target=premise]
//   premise: ...
//   label: choice1
//   rewritten: ...
//   verdict: same             (judge exemplars only)
//   [/exemplar]
//   [section: instance_slots]
//   Premise: {{premise}}
//
// Lines starting with '#' before the first section are comments. Exemplar
// values escape newlines as \n and backslashes as \\.

#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "zorephrase/data_io.hpp"
#include "zorephrase/errors.hpp"

namespace zorephrase {

enum class TemplateKind { rewriter, judge };

enum class SectionKind {
  task_description,
  method_summary,
  requirements,
  schema_description,
  few_shot_module,
  instance_slots,
};

inline std::string_view to_string(TemplateKind k) {
  return k == TemplateKind::rewriter ? "rewriter" : "judge";
}

inline std::string_view to_string(SectionKind k) {
  switch (k) {
    case SectionKind::task_description: return "task_description";
    case SectionKind::method_summary: return "method_summary";
    case SectionKind::requirements: return "requirements";
    case SectionKind::schema_description: return "schema_description";
    case SectionKind::few_shot_module: return "few_shot_module";
    case SectionKind::instance_slots: return "instance_slots";
  }
  return "?";
}

inline std::optional<SectionKind> parse_section_kind(std::string_view s) {
  for (auto k : {SectionKind::task_description, SectionKind::method_summary,
                 SectionKind::requirements, SectionKind::schema_description,
                 SectionKind::few_shot_module, SectionKind::instance_slots})
    if (to_string(k) == s) return k;
  return std::nullopt;
}

/// Placeholders every template may use besides schema field names.
inline const std::set<std::string>& reserved_placeholders() {
  static const std::set<std::string> names{"target_field", "rewritten_span"};
  return names;
}

struct Section {
  SectionKind kind = SectionKind::task_description;
  std::string text;  // no trailing newline

  bool operator==(const Section&) const = default;
};

struct Exemplar {
  std::string id;
  bool approved = false;
  std::string target_field;
  std::vector<std::pair<std::string, std::string>> fields;  // in file order; label by name
  std::string rewritten;
  std::string verdict;  // judge exemplars: "same" or "not the same"

  const std::string* field(std::string_view name) const {
    for (const auto& [k, v] : fields)
      if (k == name) return &v;
    return nullptr;
  }

  bool operator==(const Exemplar&) const = default;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string escape_value(std::string_view v) {
  std::string out;
  for (char c : v) {
    if (c == '\\') out += "\\\\";
    else if (c == '\n') out += "\\n";
    else out += c;
  }
  return out;
}

inline std::string unescape_value(std::string_view v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] == '\\' && i + 1 < v.size()) {
      ++i;
      out += v[i] == 'n' ? '\n' : v[i];
    } else {
      out += v[i];
    }
  }
  return out;
}

/// Splits "key: value" at the first colon.
inline std::optional<std::pair<std::string, std::string>> key_value(std::string_view line) {
  const auto colon = line.find(':');
  if (colon == std::string_view::npos) return std::nullopt;
  std::string key = trim(line.substr(0, colon));
  std::string_view rest = line.substr(colon + 1);
  if (!rest.empty() && rest.front() == ' ') rest.remove_prefix(1);
  if (key.empty()) return std::nullopt;
  return std::make_pair(std::move(key), std::string(rest));
}

inline std::string display_name(std::string_view field) {
  std::string out(field);
  for (auto& c : out)
    if (c == '_') c = ' ';
  if (!out.empty()) out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  return out;
}

}  // namespace detail

/// Names of all {{placeholders}} in a text, in order of appearance.
inline std::vector<std::string> placeholders(std::string_view text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while ((pos = text.find("{{", pos)) != std::string_view::npos) {
    const auto end = text.find("}}", pos + 2);
    if (end == std::string_view::npos) break;
    out.push_back(detail::trim(text.substr(pos + 2, end - pos - 2)));
    pos = end + 2;
  }
  return out;
}

/// Single-pass substitution: substituted values are never rescanned, so a
/// value containing "{{" is emitted verbatim.
inline std::string substitute(std::string_view text,
                              const std::map<std::string, std::string>& values) {
  std::string out;
  std::size_t pos = 0;
  for (;;) {
    const auto open = text.find("{{", pos);
    if (open == std::string_view::npos) break;
    const auto close = text.find("}}", open + 2);
    if (close == std::string_view::npos) break;
    const std::string name = detail::trim(text.substr(open + 2, close - open - 2));
    auto it = values.find(name);
    if (it == values.end())
      throw TemplateError("unresolved placeholder {{" + name + "}}");
    out.append(text.substr(pos, open - pos));
    out += it->second;
    pos = close + 2;
  }
  out.append(text.substr(pos));
  return out;
}

/// Plain-language description of a schema's fields and roles.
inline std::string describe_schema(const TaskSchema& schema) {
  std::string out = "Schema '" + schema.name() + "'. Each instance has these fields:";
  for (const auto& f : schema.fields()) {
    out += "\n- " + f.name + ": ";
    switch (f.role) {
      case FieldRole::rewritable_span: out += "rewritable text span"; break;
      case FieldRole::fixed_span: out += "fixed text, never rewritten"; break;
      case FieldRole::label: {
        out += "label, one of";
        for (std::size_t i = 0; i < schema.label_space().size(); ++i)
          out += (i ? ", " : " ") + schema.label_space()[i];
        break;
      }
    }
  }
  return out;
}

/// One "Name: {{field}}" line per schema field; judge slots add the rewritten
/// span.
inline std::string default_instance_slots(const TaskSchema& schema, TemplateKind kind) {
  std::string out;
  for (const auto& f : schema.fields()) {
    if (!out.empty()) out += '\n';
    out += detail::display_name(f.name) + ": {{" + f.name + "}}";
  }
  if (kind == TemplateKind::judge)
    out += "\nRewritten {{target_field}}: {{rewritten_span}}";
  return out;
}

struct PromptTemplate {
  std::string name;
  int version = 1;
  std::string schema_name;
  TemplateKind kind = TemplateKind::rewriter;
  std::size_t max_exemplars = 20;
  std::vector<Section> sections;    // file order
  std::vector<Exemplar> exemplars;  // few-shot module, in order

  const Section* section(SectionKind k) const {
    for (const auto& s : sections)
      if (s.kind == k) return &s;
    return nullptr;
  }
  Section* section(SectionKind k) {
    for (auto& s : sections)
      if (s.kind == k) return &s;
    return nullptr;
  }

  std::vector<const Exemplar*> approved_exemplars() const {
    std::vector<const Exemplar*> out;
    for (const auto& e : exemplars)
      if (e.approved) out.push_back(&e);
    return out;
  }

  std::string label() const { return name + " v" + std::to_string(version); }

  bool operator==(const PromptTemplate&) const = default;

  /// Structural checks that do not need a schema.
  void validate() const {
    if (name.empty()) throw TemplateError("template lacks a name");
    if (schema_name.empty()) throw TemplateError("template '" + name + "' lacks a schema");
    if (version < 1) throw TemplateError("template '" + name + "' has version < 1");
    if (!section(SectionKind::instance_slots))
      throw TemplateError("template '" + name + "' lacks an instance_slots section");
    std::set<SectionKind> seen;
    for (const auto& s : sections)
      if (!seen.insert(s.kind).second)
        throw TemplateError("template '" + name + "' repeats section " +
                            std::string(to_string(s.kind)));
    if (exemplars.size() > max_exemplars)
      throw TemplateError("template '" + name + "' has " + std::to_string(exemplars.size()) +
                          " exemplars; the maximum is " + std::to_string(max_exemplars));
    if (!exemplars.empty() && !section(SectionKind::few_shot_module))
      throw TemplateError("template '" + name + "' has exemplars but no few_shot_module");
  }

  /// Checks the template against the schema it claims: instance slots must
  /// name exactly the schema's fields, exemplars must target rewritable
  /// fields.
  void validate_against(const TaskSchema& schema) const {
    validate();
    if (schema.name() != schema_name)
      throw TemplateError("template '" + name + "' is for schema '" + schema_name +
                          "', not '" + schema.name() + "'");
    std::set<std::string> slots;
    for (const auto& p : placeholders(section(SectionKind::instance_slots)->text))
      if (!reserved_placeholders().count(p)) slots.insert(p);
    std::set<std::string> fields;
    for (const auto& f : schema.fields()) fields.insert(f.name);
    for (const auto& f : fields)
      if (!slots.count(f))
        throw TemplateError("template '" + name + "': instance_slots lacks {{" + f + "}}");
    for (const auto& s : slots)
      if (!fields.count(s))
        throw TemplateError("template '" + name + "': instance_slots names unknown field {{" +
                            s + "}}");
    if (kind == TemplateKind::judge) {
      const auto all = placeholders(section(SectionKind::instance_slots)->text);
      if (std::find(all.begin(), all.end(), "rewritten_span") == all.end())
        throw TemplateError("judge template '" + name +
                            "': instance_slots must contain {{rewritten_span}}");
    }
    for (const auto& e : exemplars) {
      if (schema.role_of(e.target_field) != FieldRole::rewritable_span)
        throw TemplateError("exemplar '" + e.id + "' targets '" + e.target_field +
                            "', which is not a rewritable span");
      for (const auto& f : schema.fields())
        if (!e.field(f.name))
          throw TemplateError("exemplar '" + e.id + "' lacks field '" + f.name + "'");
    }
  }

  std::string serialize() const {
    std::string out;
    out += "name: " + name + "\n";
    out += "version: " + std::to_string(version) + "\n";
    out += "schema: " + schema_name + "\n";
    out += "kind: " + std::string(to_string(kind)) + "\n";
    out += "max_exemplars: " + std::to_string(max_exemplars) + "\n";
    for (const auto& s : sections) {
      out += "[section: " + std::string(to_string(s.kind)) + "]\n";
      if (!s.text.empty()) out += s.text + "\n";
      if (s.kind != SectionKind::few_shot_module) continue;
      for (const auto& e : exemplars) {
        out += "[exemplar id=" + e.id + " approved=" + (e.approved ? "yes" : "no") +
               " target=" + e.target_field + "]\n";
        for (const auto& [k, v] : e.fields) out += k + ": " + detail::escape_value(v) + "\n";
        out += "rewritten: " + detail::escape_value(e.rewritten) + "\n";
        if (!e.verdict.empty()) out += "verdict: " + e.verdict + "\n";
        out += "[/exemplar]\n";
      }
    }
    return out;
  }

  static PromptTemplate parse(std::string_view text, const std::string& origin = "template") {
    PromptTemplate t;
    std::vector<std::string> lines;
    {
      std::string cur;
      for (char c : text) {
        if (c == '\n') {
          if (!cur.empty() && cur.back() == '\r') cur.pop_back();
          lines.push_back(std::move(cur));
          cur.clear();
        } else {
          cur += c;
        }
      }
      if (!cur.empty()) lines.push_back(std::move(cur));
    }
    const auto fail = [&](std::size_t line_no, const std::string& msg) {
      return TemplateError(origin + ":" + std::to_string(line_no + 1) + ": " + msg);
    };

    std::size_t i = 0;
    bool have_name = false, have_kind = false;
    for (; i < lines.size(); ++i) {
      const std::string& line = lines[i];
      if (line.rfind("[section:", 0) == 0) break;
      if (detail::trim(line).empty() || line[0] == '#') continue;
      auto kv = detail::key_value(line);
      if (!kv) throw fail(i, "expected 'key: value' header line");
      const auto& [key, value] = *kv;
      if (key == "name") {
        t.name = detail::trim(value);
        have_name = true;
      } else if (key == "version") {
        try {
          t.version = std::stoi(value);
        } catch (const std::exception&) {
          throw fail(i, "version must be an integer");
        }
      } else if (key == "schema") {
        t.schema_name = detail::trim(value);
      } else if (key == "kind") {
        const auto v = detail::trim(value);
        if (v == "rewriter") t.kind = TemplateKind::rewriter;
        else if (v == "judge") t.kind = TemplateKind::judge;
        else throw fail(i, "kind must be 'rewriter' or 'judge'");
        have_kind = true;
      } else if (key == "max_exemplars") {
        try {
          t.max_exemplars = static_cast<std::size_t>(std::stoul(value));
        } catch (const std::exception&) {
          throw fail(i, "max_exemplars must be a nonnegative integer");
        }
      } else {
        throw fail(i, "unknown header key '" + key + "'");
      }
    }
    if (!have_name) throw TemplateError(origin + ": missing 'name' header");
    if (!have_kind) throw TemplateError(origin + ": missing 'kind' header");

    Section* current = nullptr;
    std::vector<std::string> body;
    const auto flush = [&] {
      if (!current) return;
      while (!body.empty() && detail::trim(body.back()).empty()) body.pop_back();
      std::string joined;
      for (std::size_t k = 0; k < body.size(); ++k) {
        if (k) joined += '\n';
        joined += body[k];
      }
      current->text = std::move(joined);
      body.clear();
    };

    for (; i < lines.size(); ++i) {
      const std::string& line = lines[i];
      if (line.rfind("[section:", 0) == 0) {
        flush();
        const auto close = line.find(']');
        if (close == std::string::npos) throw fail(i, "unterminated section header");
        const auto kind_name = detail::trim(std::string_view(line).substr(9, close - 9));
        auto kind = parse_section_kind(kind_name);
        if (!kind) throw fail(i, "unknown section kind '" + kind_name + "'");
        t.sections.push_back({*kind, ""});
        current = &t.sections.back();
        continue;
      }
      if (line.rfind("[exemplar", 0) == 0) {
        if (!current || current->kind != SectionKind::few_shot_module)
          throw fail(i, "exemplar outside the few_shot_module section");
        Exemplar e;
        std::istringstream attrs(line.substr(9, line.find(']') - 9));
        std::string attr;
        while (attrs >> attr) {
          const auto eq = attr.find('=');
          if (eq == std::string::npos) throw fail(i, "malformed exemplar attribute '" + attr + "'");
          const auto k = attr.substr(0, eq), v = attr.substr(eq + 1);
          if (k == "id") e.id = v;
          else if (k == "approved") {
            if (v != "yes" && v != "no") throw fail(i, "approved must be yes or no");
            e.approved = v == "yes";
          } else if (k == "target") e.target_field = v;
          else throw fail(i, "unknown exemplar attribute '" + k + "'");
        }
        if (e.id.empty() || e.target_field.empty())
          throw fail(i, "exemplar needs id and target attributes");
        bool closed = false;
        for (++i; i < lines.size(); ++i) {
          if (lines[i] == "[/exemplar]") {
            closed = true;
            break;
          }
          auto kv = detail::key_value(lines[i]);
          if (!kv) throw fail(i, "expected 'field: value' inside exemplar");
          if (kv->first == "rewritten") e.rewritten = detail::unescape_value(kv->second);
          else if (kv->first == "verdict") e.verdict = detail::trim(kv->second);
          else e.fields.emplace_back(kv->first, detail::unescape_value(kv->second));
        }
        if (!closed) throw TemplateError(origin + ": exemplar '" + e.id + "' is not closed");
        t.exemplars.push_back(std::move(e));
        continue;
      }
      if (!current) throw fail(i, "text outside any section");
      if (current->kind == SectionKind::few_shot_module && !t.exemplars.empty() &&
          !detail::trim(line).empty())
        throw fail(i, "few-shot preamble text must precede the exemplars");
      body.push_back(line);
    }
    flush();
    t.validate();
    return t;
  }

  static PromptTemplate load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw TemplateError("cannot open template '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << serialize();
    if (!out) throw Error("cannot write template '" + path + "'");
  }
};

/// Retargets a template at another schema. The few-shot exemplars are
/// dropped. The schema description and instance slots are regenerated when
/// they do not already fit the new schema; every other section is kept byte
/// for byte.
inline PromptTemplate template_transfer(const PromptTemplate& tpl, const TaskSchema& new_schema) {
  if (new_schema.rewritable_fields().empty())
    throw TemplateError("target schema '" + new_schema.name() + "' has no rewritable span");
  PromptTemplate out = tpl;
  out.schema_name = new_schema.name();
  out.version = tpl.version + 1;
  out.exemplars.clear();

  const bool same_schema = tpl.schema_name == new_schema.name();
  if (auto* s = out.section(SectionKind::schema_description)) {
    if (!same_schema) s->text = describe_schema(new_schema);
  } else if (!same_schema) {
    auto pos = std::find_if(out.sections.begin(), out.sections.end(), [](const Section& s) {
      return s.kind == SectionKind::few_shot_module || s.kind == SectionKind::instance_slots;
    });
    out.sections.insert(pos, Section{SectionKind::schema_description, describe_schema(new_schema)});
  }
  try {
    out.validate_against(new_schema);
  } catch (const TemplateError&) {
    out.section(SectionKind::instance_slots)->text = default_instance_slots(new_schema, tpl.kind);
    out.validate_against(new_schema);
  }
  return out;
}

}  // namespace zorephrase
