// Copyright 2026 The zorephrase Authors.
// SPDX-License-Identifier: Apache-2.0

// Synthetic tasks for desk-scale experiments.
//
// make_blob_task: two well-separated Gaussian clusters, already featurized.
//
// generate_synthetic_task: a noisy-phrasing text classification corpus. Each
// instance's text mixes class-signal tokens with class-independent neutral
// tokens, and distractor tokens are injected at a configured rate. The label
// is the majority class among the signal tokens, so removing distractors (the
// emitted rule table does exactly that) never changes it.

#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "zorephrase/data_io.hpp"
#include "zorephrase/errors.hpp"
#include "zorephrase/models.hpp"
#include "zorephrase/philox.hpp"
#include "zorephrase/zo_core.hpp"

namespace zorephrase {

struct BlobSpec {
  std::size_t features = 10;
  std::size_t train = 200;
  std::size_t dev = 100;
  std::size_t test = 100;
  double separation = 3.0;  // distance of each mean from the origin
  double min_margin = 0.5;  // points closer than this to the boundary are redrawn
  std::uint64_t seed = 0;
};

/// Linearly separable two-class blobs: means at +/- separation * u for a
/// random unit vector u, unit isotropic noise, and a hard margin.
inline SplitFeatures make_blob_task(const BlobSpec& spec) {
  if (spec.features == 0) throw InvalidDimensionError("blob features must be positive");
  KeyedStream rng(derive_key(spec.seed, streams::kSynthetic));
  std::vector<double> u(spec.features);
  double norm = 0.0;
  for (auto& v : u) {
    v = rng.normal();
    norm += v * v;
  }
  for (auto& v : u) v /= std::sqrt(norm);

  const auto draw = [&](std::size_t n) {
    FeatureMatrix m{n, spec.features, std::vector<double>(n * spec.features), {}};
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t label = r % 2;
      const double sign = label == 0 ? 1.0 : -1.0;
      auto row = std::span<double>(m.values).subspan(r * spec.features, spec.features);
      for (;;) {
        double proj = 0.0;
        for (std::size_t i = 0; i < spec.features; ++i) {
          row[i] = sign * spec.separation * u[i] + rng.normal();
          proj += row[i] * u[i];
        }
        if (sign * proj >= spec.min_margin) break;
      }
      m.labels.push_back(label);
    }
    return m;
  };
  SplitFeatures out;
  out.train = draw(spec.train);
  out.dev = draw(spec.dev);
  out.test = draw(spec.test);
  return out;
}

/// Deterministic token-level rewrite rules: delete listed tokens, then map
/// synonyms.
struct RuleTable {
  std::set<std::string> remove;
  std::map<std::string, std::string> synonyms;

  bool empty() const { return remove.empty() && synonyms.empty(); }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["remove"] = std::vector<std::string>(remove.begin(), remove.end());
    j["synonyms"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : synonyms) j["synonyms"][k] = v;
    return j;
  }

  static RuleTable from_json(const nlohmann::json& j) {
    RuleTable t;
    try {
      if (j.contains("remove"))
        for (const auto& tok : j["remove"]) t.remove.insert(tok.get<std::string>());
      if (j.contains("synonyms"))
        for (const auto& [k, v] : j["synonyms"].items()) t.synonyms[k] = v.get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed rule table: ") + e.what());
    }
    return t;
  }

  /// Applies the rules to whitespace-separated tokens. Text with no matching
  /// token is returned verbatim; otherwise tokens are rejoined with single
  /// spaces.
  std::string apply(const std::string& text) const {
    std::vector<std::string> tokens;
    std::string cur;
    for (char c : text) {
      if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
        if (!cur.empty()) tokens.push_back(std::move(cur));
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));

    bool changed = false;
    std::string out;
    for (const auto& tok : tokens) {
      if (remove.count(tok)) {
        changed = true;
        continue;
      }
      auto it = synonyms.find(tok);
      const std::string& emit = it == synonyms.end() ? tok : it->second;
      changed |= it != synonyms.end();
      if (!out.empty()) out += ' ';
      out += emit;
    }
    return changed ? out : text;
  }
};

struct SyntheticTaskSpec {
  std::size_t classes = 2;
  std::size_t signal_vocab_per_class = 8;
  std::size_t neutral_vocab = 40;
  std::size_t distractor_vocab = 4;
  std::size_t signal_tokens = 3;    // per instance; odd keeps binary majorities strict
  double signal_purity = 0.8;       // chance a signal token comes from the true class
  std::size_t neutral_tokens = 12;  // per instance
  double distractor_rate = 0.10;    // per-token chance of injecting a distractor
  std::size_t corpus_size = 1428;   // 1000 train at the default 70/15/15 split
  std::uint64_t seed = 0;

  void validate() const {
    if (classes < 2) throw InvalidConfigError("synthetic task needs at least 2 classes");
    if (signal_vocab_per_class == 0 || signal_tokens == 0)
      throw InvalidConfigError("synthetic task needs signal tokens");
    if (!(distractor_rate >= 0.0) || distractor_rate >= 1.0)
      throw InvalidConfigError("distractor injection rate must lie in [0, 1)");
    if (!(signal_purity >= 0.0 && signal_purity <= 1.0))
      throw InvalidConfigError("signal purity must lie in [0, 1]");
    if (corpus_size == 0) throw InvalidConfigError("corpus size must be positive");
  }
};

inline void to_json(nlohmann::json& j, const SyntheticTaskSpec& s) {
  j = nlohmann::json{{"classes", s.classes},
                     {"signal_vocab_per_class", s.signal_vocab_per_class},
                     {"neutral_vocab", s.neutral_vocab},
                     {"distractor_vocab", s.distractor_vocab},
                     {"signal_tokens", s.signal_tokens},
                     {"signal_purity", s.signal_purity},
                     {"neutral_tokens", s.neutral_tokens},
                     {"distractor_rate", s.distractor_rate},
                     {"corpus_size", s.corpus_size},
                     {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, SyntheticTaskSpec& s) {
  s.classes = j.value("classes", s.classes);
  s.signal_vocab_per_class = j.value("signal_vocab_per_class", s.signal_vocab_per_class);
  s.neutral_vocab = j.value("neutral_vocab", s.neutral_vocab);
  s.distractor_vocab = j.value("distractor_vocab", s.distractor_vocab);
  s.signal_tokens = j.value("signal_tokens", s.signal_tokens);
  s.signal_purity = j.value("signal_purity", s.signal_purity);
  s.neutral_tokens = j.value("neutral_tokens", s.neutral_tokens);
  s.distractor_rate = j.value("distractor_rate", s.distractor_rate);
  s.corpus_size = j.value("corpus_size", s.corpus_size);
  s.seed = j.value("seed", s.seed);
}

struct SyntheticTask {
  Dataset original;  // unsplit
  RuleTable rules;
};

inline TaskSchema synthetic_schema(std::size_t classes) {
  std::vector<std::string> labels;
  for (std::size_t c = 0; c < classes; ++c) labels.push_back("class" + std::to_string(c));
  return TaskSchema("noisy_phrasing",
                    {{"text", FieldRole::rewritable_span}, {"label", FieldRole::label}},
                    std::move(labels));
}

inline std::string signal_token(std::size_t cls, std::size_t k) {
  return "sig" + std::string(1, static_cast<char>('a' + cls % 26)) + std::to_string(k);
}
inline std::string neutral_token(std::size_t k) { return "word" + std::to_string(k); }
inline std::string distractor_token(std::size_t k) { return "umm" + std::to_string(k); }

inline SyntheticTask generate_synthetic_task(const SyntheticTaskSpec& spec) {
  spec.validate();
  SyntheticTask task;
  task.original.schema = synthetic_schema(spec.classes);
  for (std::size_t k = 0; k < spec.distractor_vocab; ++k)
    task.rules.remove.insert(distractor_token(k));

  KeyedStream rng(derive_key(spec.seed, streams::kSynthetic));
  const std::size_t width = std::to_string(spec.corpus_size).size();
  for (std::size_t n = 0; n < spec.corpus_size; ++n) {
    const std::size_t intended = rng.below(spec.classes);
    std::vector<std::size_t> votes(spec.classes, 0);
    std::vector<std::string> base;
    for (std::size_t t = 0; t < spec.signal_tokens; ++t) {
      std::size_t cls = intended;
      if (!rng.bernoulli(spec.signal_purity)) {
        cls = rng.below(spec.classes - 1);
        if (cls >= intended) ++cls;
      }
      ++votes[cls];
      base.push_back(signal_token(cls, rng.below(spec.signal_vocab_per_class)));
    }
    for (std::size_t t = 0; t < spec.neutral_tokens && spec.neutral_vocab > 0; ++t)
      base.push_back(neutral_token(rng.below(spec.neutral_vocab)));
    for (std::size_t i = base.size(); i > 1; --i) std::swap(base[i - 1], base[rng.below(i)]);

    std::string text;
    const auto emit = [&](const std::string& tok) {
      if (!text.empty()) text += ' ';
      text += tok;
    };
    for (const auto& tok : base) {
      if (spec.distractor_vocab > 0 && rng.bernoulli(spec.distractor_rate))
        emit(distractor_token(rng.below(spec.distractor_vocab)));
      emit(tok);
    }

    Instance inst;
    std::string num = std::to_string(n);
    inst.id = "syn-" + std::string(width - num.size(), '0') + num;
    inst.fields["text"] = std::move(text);
    std::size_t label = 0;
    for (std::size_t c = 1; c < spec.classes; ++c)
      if (votes[c] > votes[label]) label = c;
    inst.label = label;
    task.original.instances.push_back(std::move(inst));
  }
  return task;
}

/// Label implied by the signal tokens of a text. Used to check that rewrites
/// preserve labels.
inline std::size_t signal_label(const std::string& text, std::size_t classes) {
  std::vector<std::size_t> votes(classes, 0);
  for (const auto& tok : tokenize(text)) {
    if (tok.size() < 4 || tok.compare(0, 3, "sig") != 0) continue;
    const std::size_t cls = static_cast<std::size_t>(tok[3] - 'a');
    if (cls < classes) ++votes[cls];
  }
  std::size_t label = 0;
  for (std::size_t c = 1; c < classes; ++c)
    if (votes[c] > votes[label]) label = c;
  return label;
}

}  // namespace zorephrase
