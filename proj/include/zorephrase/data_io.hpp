// Copyright 2026 The zorephrase Authors.
// SPDX-License-Identifier: Apache-2.0

// Task schemas, JSONL corpora, deterministic splits, the original/rephrased
// alignment check, and hashed bag-of-tokens featurization.

#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "zorephrase/errors.hpp"
#include "zorephrase/models.hpp"
#include "zorephrase/philox.hpp"
#include "zorephrase/zo_core.hpp"

namespace zorephrase {

enum class FieldRole { rewritable_span, fixed_span, label };

inline std::string_view to_string(FieldRole r) {
  switch (r) {
    case FieldRole::rewritable_span: return "rewritable_span";
    case FieldRole::fixed_span: return "fixed_span";
    case FieldRole::label: return "label";
  }
  return "?";
}

inline FieldRole parse_field_role(std::string_view s) {
  if (s == "rewritable_span") return FieldRole::rewritable_span;
  if (s == "fixed_span") return FieldRole::fixed_span;
  if (s == "label") return FieldRole::label;
  throw SchemaViolationError("unknown field role '" + std::string(s) + "'");
}

struct FieldSpec {
  std::string name;
  FieldRole role = FieldRole::fixed_span;

  bool operator==(const FieldSpec&) const = default;
};

class TaskSchema {
 public:
  TaskSchema() = default;
  TaskSchema(std::string name, std::vector<FieldSpec> fields, std::vector<std::string> label_space)
      : name_(std::move(name)), fields_(std::move(fields)), label_space_(std::move(label_space)) {
    validate();
  }

  const std::string& name() const noexcept { return name_; }
  const std::vector<FieldSpec>& fields() const noexcept { return fields_; }
  const std::vector<std::string>& label_space() const noexcept { return label_space_; }

  const FieldSpec& label_field() const {
    for (const auto& f : fields_)
      if (f.role == FieldRole::label) return f;
    throw SchemaViolationError("schema '" + name_ + "' has no label field");
  }

  /// Text fields (everything but the label), in declaration order.
  std::vector<std::string> text_fields() const {
    std::vector<std::string> out;
    for (const auto& f : fields_)
      if (f.role != FieldRole::label) out.push_back(f.name);
    return out;
  }

  std::vector<std::string> rewritable_fields() const {
    std::vector<std::string> out;
    for (const auto& f : fields_)
      if (f.role == FieldRole::rewritable_span) out.push_back(f.name);
    return out;
  }

  std::optional<FieldRole> role_of(std::string_view field) const {
    for (const auto& f : fields_)
      if (f.name == field) return f.role;
    return std::nullopt;
  }

  std::optional<std::size_t> label_index(std::string_view label) const {
    for (std::size_t i = 0; i < label_space_.size(); ++i)
      if (label_space_[i] == label) return i;
    return std::nullopt;
  }

  bool operator==(const TaskSchema&) const = default;

  static TaskSchema from_json(const nlohmann::json& j) {
    try {
      std::vector<FieldSpec> fields;
      for (const auto& f : j.at("fields"))
        fields.push_back({f.at("name").get<std::string>(),
                          parse_field_role(f.at("role").get<std::string>())});
      return TaskSchema(j.at("name").get<std::string>(), std::move(fields),
                        j.at("label_space").get<std::vector<std::string>>());
    } catch (const nlohmann::json::exception& e) {
      throw SchemaViolationError(std::string("malformed schema definition: ") + e.what());
    }
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["name"] = name_;
    j["fields"] = nlohmann::ordered_json::array();
    for (const auto& f : fields_)
      j["fields"].push_back({{"name", f.name}, {"role", std::string(to_string(f.role))}});
    j["label_space"] = label_space_;
    return j;
  }

 private:
  void validate() const {
    std::size_t labels = 0, rewritable = 0;
    std::set<std::string> seen;
    for (const auto& f : fields_) {
      if (f.name.empty()) throw SchemaViolationError("schema '" + name_ + "': empty field name");
      if (f.name == "id" || f.name == "split")
        throw SchemaViolationError("schema '" + name_ + "': field name '" + f.name +
                                   "' is reserved");
      if (!seen.insert(f.name).second)
        throw SchemaViolationError("schema '" + name_ + "': duplicate field '" + f.name + "'");
      labels += f.role == FieldRole::label;
      rewritable += f.role == FieldRole::rewritable_span;
    }
    if (labels != 1)
      throw SchemaViolationError("schema '" + name_ + "' must have exactly one label field");
    if (rewritable == 0)
      throw SchemaViolationError("schema '" + name_ + "' needs at least one rewritable_span");
    if (label_space_.size() < 2)
      throw SchemaViolationError("schema '" + name_ + "' needs at least two labels");
  }

  std::string name_;
  std::vector<FieldSpec> fields_;
  std::vector<std::string> label_space_;
};

struct Instance {
  std::string id;
  std::map<std::string, std::string> fields;  // text fields only
  std::size_t label = 0;

  bool operator==(const Instance&) const = default;
};

enum class Split { train, dev, test };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "dev") return Split::dev;
  if (s == "test") return Split::test;
  throw SchemaViolationError("unknown split '" + std::string(s) + "'");
}

inline std::uint64_t fnv1a64(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

struct Dataset {
  TaskSchema schema;
  std::vector<Instance> instances;  // file order
  std::map<std::string, Split> split_assignment;

  const Instance* find(std::string_view id) const {
    for (const auto& inst : instances)
      if (inst.id == id) return &inst;
    return nullptr;
  }

  /// Instances of one split ordered by id.
  std::vector<const Instance*> sorted_split(Split s) const {
    std::vector<const Instance*> out;
    for (const auto& inst : instances) {
      auto it = split_assignment.find(inst.id);
      if (it != split_assignment.end() && it->second == s) out.push_back(&inst);
    }
    std::sort(out.begin(), out.end(), [](auto* a, auto* b) { return a->id < b->id; });
    return out;
  }

  std::size_t split_size(Split s) const {
    std::size_t n = 0;
    for (const auto& [id, sp] : split_assignment) n += sp == s;
    return n;
  }

  bool operator==(const Dataset&) const = default;
};

/// One JSONL line for an instance: id, text fields in schema order, label
/// name, and the split when one is assigned.
inline std::string instance_to_json_line(const Dataset& ds, const Instance& inst) {
  nlohmann::ordered_json j;
  j["id"] = inst.id;
  for (const auto& f : ds.schema.fields()) {
    if (f.role == FieldRole::label) {
      j[f.name] = ds.schema.label_space().at(inst.label);
    } else {
      j[f.name] = inst.fields.at(f.name);
    }
  }
  auto it = ds.split_assignment.find(inst.id);
  if (it != ds.split_assignment.end()) j["split"] = std::string(to_string(it->second));
  return j.dump();
}

inline void write_jsonl(const Dataset& ds, std::ostream& out) {
  for (const auto& inst : ds.instances) out << instance_to_json_line(ds, inst) << '\n';
}

inline std::string to_jsonl(const Dataset& ds) {
  std::ostringstream out;
  write_jsonl(ds, out);
  return out.str();
}

inline void save_jsonl(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  write_jsonl(ds, out);
}

/// Stable fallback id for records that lack one: hash of the text fields.
inline std::string content_id(const TaskSchema& schema,
                              const std::map<std::string, std::string>& fields) {
  std::string canon;
  for (const auto& name : schema.text_fields()) {
    canon += name;
    canon += '\x1f';
    canon += fields.at(name);
    canon += '\x1e';
  }
  char buf[24];
  std::snprintf(buf, sizeof buf, "h%016llx",
                static_cast<unsigned long long>(fnv1a64(canon)));
  return buf;
}

inline Dataset parse_jsonl(std::istream& in, const TaskSchema& schema) {
  Dataset ds;
  ds.schema = schema;
  std::set<std::string> ids;
  std::string text;
  std::size_t line_no = 0;
  bool any_split = false;
  const auto fail = [&](const std::string& msg) -> SchemaViolationError {
    return SchemaViolationError("line " + std::to_string(line_no) + ": " + msg);
  };

  while (std::getline(in, text)) {
    ++line_no;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.find_first_not_of(" \t") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw fail(std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw fail("record is not a JSON object");

    Instance inst;
    for (const auto& f : schema.fields()) {
      if (!j.contains(f.name)) throw fail("missing field '" + f.name + "'");
      const auto& v = j[f.name];
      if (f.role == FieldRole::label) {
        if (v.is_string()) {
          auto idx = schema.label_index(v.get<std::string>());
          if (!idx) throw fail("unknown label '" + v.get<std::string>() + "' in field '" +
                               f.name + "'");
          inst.label = *idx;
        } else if (v.is_number_unsigned() || v.is_number_integer()) {
          const auto idx = v.get<long long>();
          if (idx < 0 || static_cast<std::size_t>(idx) >= schema.label_space().size())
            throw fail("unknown label index " + std::to_string(idx) + " in field '" + f.name +
                       "'");
          inst.label = static_cast<std::size_t>(idx);
        } else {
          throw fail("label field '" + f.name + "' must be a string or integer");
        }
      } else {
        if (!v.is_string()) throw fail("field '" + f.name + "' must be a string");
        inst.fields[f.name] = v.get<std::string>();
      }
    }
    if (j.contains("id")) {
      if (!j["id"].is_string()) throw fail("'id' must be a string");
      inst.id = j["id"].get<std::string>();
      if (inst.id.empty()) throw fail("empty id");
    } else {
      inst.id = content_id(schema, inst.fields);
    }
    if (!ids.insert(inst.id).second) throw fail("duplicate id '" + inst.id + "'");
    if (j.contains("split")) {
      if (!j["split"].is_string()) throw fail("'split' must be a string");
      try {
        ds.split_assignment[inst.id] = parse_split(j["split"].get<std::string>());
      } catch (const SchemaViolationError& e) {
        throw fail(e.what());
      }
      any_split = true;
    } else if (any_split) {
      throw fail("record lacks 'split' while earlier records carry one");
    }
    ds.instances.push_back(std::move(inst));
  }
  if (any_split && ds.split_assignment.size() != ds.instances.size())
    throw SchemaViolationError("split keys must be present on every record or none");
  return ds;
}

inline Dataset load_jsonl(const std::string& path, const TaskSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open corpus '" + path + "'");
  try {
    return parse_jsonl(in, schema);
  } catch (const SchemaViolationError& e) {
    throw SchemaViolationError(path + ": " + e.what());
  }
}

struct SplitRatios {
  double train = 0.70;
  double dev = 0.15;
  double test = 0.15;
};

/// Deterministic split: ids are sorted, shuffled with a key derived from
/// `seed`, then cut by ratio. Each split gets floor(n * ratio); leftover
/// instances go one at a time to train, dev, test, train, ...
inline Dataset split(Dataset ds, std::uint64_t seed = 0, SplitRatios ratios = {}) {
  const std::size_t n = ds.instances.size();
  if (n == 0) throw InvalidDimensionError("split: empty dataset");
  if (n < 3) throw InvalidDimensionError("split: fewer instances than splits");
  const double total = ratios.train + ratios.dev + ratios.test;
  if (ratios.train < 0 || ratios.dev < 0 || ratios.test < 0 || std::abs(total - 1.0) > 1e-9)
    throw InvalidConfigError("split ratios must be nonnegative and sum to 1");

  std::vector<std::string> ids;
  ids.reserve(n);
  for (const auto& inst : ds.instances) ids.push_back(inst.id);
  std::sort(ids.begin(), ids.end());
  KeyedStream rng(derive_key(seed, streams::kSplit));
  for (std::size_t i = n; i > 1; --i) std::swap(ids[i - 1], ids[rng.below(i)]);

  std::array<std::size_t, 3> sizes{
      static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratios.train + 1e-9)),
      static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratios.dev + 1e-9)),
      static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratios.test + 1e-9))};
  std::size_t assigned = sizes[0] + sizes[1] + sizes[2];
  for (std::size_t k = 0; assigned < n; k = (k + 1) % 3, ++assigned) ++sizes[k];

  ds.split_assignment.clear();
  std::size_t pos = 0;
  const std::array<Split, 3> order{Split::train, Split::dev, Split::test};
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t i = 0; i < sizes[k]; ++i) ds.split_assignment[ids[pos++]] = order[k];
  return ds;
}

struct AlignReport {
  std::vector<std::string> missing_ids;    // in original, not in rephrased
  std::vector<std::string> extra_ids;      // in rephrased, not in original
  std::vector<std::string> split_mismatch;
  std::vector<std::string> label_drift;
  bool schema_mismatch = false;

  bool ok() const {
    return !schema_mismatch && missing_ids.empty() && extra_ids.empty() &&
           split_mismatch.empty() && label_drift.empty();
  }

  std::string describe() const {
    std::string out;
    const auto list = [&](const char* what, const std::vector<std::string>& ids) {
      if (ids.empty()) return;
      if (!out.empty()) out += "; ";
      out += what;
      out += ':';
      for (const auto& id : ids) out += ' ' + id;
    };
    if (schema_mismatch) out += "schema mismatch";
    list("id mismatch (missing)", missing_ids);
    list("id mismatch (extra)", extra_ids);
    list("split mismatch", split_mismatch);
    list("label drift", label_drift);
    return out.empty() ? "ok" : out;
  }
};

/// The rephrased corpus must carry the same ids, splits and labels as the
/// original; only field text may differ.
inline AlignReport align_check(const Dataset& original, const Dataset& rephrased) {
  AlignReport rep;
  rep.schema_mismatch = !(original.schema == rephrased.schema);
  std::map<std::string, const Instance*> a, b;
  for (const auto& i : original.instances) a[i.id] = &i;
  for (const auto& i : rephrased.instances) b[i.id] = &i;
  for (const auto& [id, inst] : a) {
    auto it = b.find(id);
    if (it == b.end()) {
      rep.missing_ids.push_back(id);
      continue;
    }
    if (inst->label != it->second->label) rep.label_drift.push_back(id);
    auto sa = original.split_assignment.find(id);
    auto sb = rephrased.split_assignment.find(id);
    const bool has_a = sa != original.split_assignment.end();
    const bool has_b = sb != rephrased.split_assignment.end();
    if (has_a != has_b || (has_a && sa->second != sb->second)) rep.split_mismatch.push_back(id);
  }
  for (const auto& [id, inst] : b)
    if (!a.count(id)) rep.extra_ids.push_back(id);
  return rep;
}

inline void require_aligned(const Dataset& original, const Dataset& rephrased) {
  const auto rep = align_check(original, rephrased);
  if (!rep.ok()) throw AlignmentError("alignment check failed: " + rep.describe());
}

/// Lowercased alphanumeric tokens.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur += static_cast<char>(std::tolower(c));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

/// Bucket for a token. FNV-1a's low bits depend only on the low bits of each
/// byte, so the hash is passed through a 64-bit finalizer before reduction.
inline std::size_t token_bucket(std::string_view tok, std::size_t dimension) noexcept {
  std::uint64_t h = fnv1a64(tok);
  h ^= h >> 33;
  h *= 0xff51afd7ed558ccdull;
  h ^= h >> 33;
  h *= 0xc4ceb9fe1a85ec53ull;
  h ^= h >> 33;
  return static_cast<std::size_t>(h % dimension);
}

/// Hashed bag-of-tokens over the text fields, concatenated in `fields` order
/// (schema order when empty).
struct FeatureExtractor {
  std::size_t dimension = 64;
  std::vector<std::string> fields;
  bool l2_normalize = true;

  void extract(const TaskSchema& schema, const Instance& inst, std::span<double> out) const {
    std::fill(out.begin(), out.end(), 0.0);
    const auto names = fields.empty() ? schema.text_fields() : fields;
    for (const auto& name : names) {
      auto it = inst.fields.find(name);
      if (it == inst.fields.end())
        throw SchemaViolationError("instance '" + inst.id + "' lacks field '" + name + "'");
      for (const auto& tok : tokenize(it->second)) out[token_bucket(tok, dimension)] += 1.0;
    }
    if (l2_normalize) {
      double norm = 0.0;
      for (double v : out) norm += v * v;
      if (norm > 0.0) {
        norm = std::sqrt(norm);
        for (double& v : out) v /= norm;
      }
    }
  }
};

struct SplitFeatures {
  FeatureMatrix train;
  FeatureMatrix dev;
  FeatureMatrix test;
};

/// Rows follow sorted ids within the split.
inline FeatureMatrix featurize_split(const Dataset& ds, const FeatureExtractor& fx, Split s) {
  if (fx.dimension == 0) throw InvalidDimensionError("feature dimension must be positive");
  const auto members = ds.sorted_split(s);
  if (members.empty())
    throw InvalidDimensionError("featurize: empty " + std::string(to_string(s)) + " split");
  FeatureMatrix m;
  m.rows = members.size();
  m.cols = fx.dimension;
  m.values.assign(m.rows * m.cols, 0.0);
  m.labels.reserve(m.rows);
  for (std::size_t r = 0; r < members.size(); ++r) {
    fx.extract(ds.schema, *members[r],
               std::span<double>(m.values).subspan(r * m.cols, m.cols));
    m.labels.push_back(members[r]->label);
  }
  return m;
}

inline SplitFeatures featurize(const Dataset& ds, const FeatureExtractor& fx) {
  return {featurize_split(ds, fx, Split::train), featurize_split(ds, fx, Split::dev),
          featurize_split(ds, fx, Split::test)};
}

}  // namespace zorephrase
