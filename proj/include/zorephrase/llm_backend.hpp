// Copyright 2026 The zorephrase Authors.
// SPDX-License-Identifier: Apache-2.0

// Chat backends: the Backend interface, fixture and scripted backends for
// tests, a content-addressed response cache with a replay-only mode, retry
// with backoff, and the rule-based rewriter used for desk-scale runs. The live
// HTTP backend lives in http_backend.hpp.

#pragma once

#include <openssl/evp.h>

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "zorephrase/errors.hpp"
#include "zorephrase/synthetic_task.hpp"

namespace zorephrase {

struct ChatRequest {
  std::string system_text;
  std::string user_text;
  double temperature = 0.0;
  std::size_t max_output_tokens = 512;

  void validate() const {
    if (user_text.empty()) throw InvalidConfigError("chat request has empty user text");
    if (!(temperature >= 0.0)) throw InvalidConfigError("temperature must be >= 0");
    if (max_output_tokens == 0) throw InvalidConfigError("max_output_tokens must be positive");
  }

  /// Canonical form: fixed key order, every field included.
  nlohmann::ordered_json canonical() const {
    nlohmann::ordered_json j;
    j["system_text"] = system_text;
    j["user_text"] = user_text;
    j["temperature"] = temperature;
    j["max_output_tokens"] = max_output_tokens;
    return j;
  }

  bool operator==(const ChatRequest&) const = default;
};

struct ChatResponse {
  std::string text;
  std::string backend_name;
  double latency_seconds = 0.0;
  std::optional<std::size_t> prompt_tokens;
  std::optional<std::size_t> completion_tokens;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["text"] = text;
    j["backend_name"] = backend_name;
    j["latency_seconds"] = latency_seconds;
    j["prompt_tokens"] = prompt_tokens ? nlohmann::ordered_json(*prompt_tokens) : nullptr;
    j["completion_tokens"] =
        completion_tokens ? nlohmann::ordered_json(*completion_tokens) : nullptr;
    return j;
  }

  static ChatResponse from_json(const nlohmann::json& j) {
    ChatResponse r;
    r.text = j.at("text").get<std::string>();
    r.backend_name = j.at("backend_name").get<std::string>();
    r.latency_seconds = j.at("latency_seconds").get<double>();
    if (j.contains("prompt_tokens") && !j["prompt_tokens"].is_null())
      r.prompt_tokens = j["prompt_tokens"].get<std::size_t>();
    if (j.contains("completion_tokens") && !j["completion_tokens"].is_null())
      r.completion_tokens = j["completion_tokens"].get<std::size_t>();
    return r;
  }

  bool operator==(const ChatResponse&) const = default;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string name() const = 0;
  /// Throws BackendError on failure.
  virtual ChatResponse send(const ChatRequest& request) = 0;
};

/// Response computed by a pure function of the request.
class FixtureBackend : public Backend {
 public:
  using Fn = std::function<std::string(const ChatRequest&)>;

  FixtureBackend(std::string name, Fn fn) : name_(std::move(name)), fn_(std::move(fn)) {}

  static FixtureBackend constant(std::string text) {
    return FixtureBackend("fixture", [text = std::move(text)](const ChatRequest&) { return text; });
  }

  std::string name() const override { return name_; }

  ChatResponse send(const ChatRequest& request) override {
    request.validate();
    calls_.fetch_add(1, std::memory_order_relaxed);
    return ChatResponse{fn_(request), name_, 0.0, std::nullopt, std::nullopt};
  }

  std::size_t calls() const noexcept { return calls_.load(); }

 private:
  std::string name_;
  Fn fn_;
  std::atomic<std::size_t> calls_{0};
};

/// Plays back a fixed sequence of outcomes, one per call. The last outcome
/// repeats once the script runs out.
class ScriptedBackend : public Backend {
 public:
  struct Step {
    enum class Kind { success, transient_failure, permanent_failure } kind = Kind::success;
    std::string text;

    static Step ok(std::string t) { return {Kind::success, std::move(t)}; }
    static Step transient(std::string why = "timeout") {
      return {Kind::transient_failure, std::move(why)};
    }
    static Step permanent(std::string why = "bad request") {
      return {Kind::permanent_failure, std::move(why)};
    }
  };

  explicit ScriptedBackend(std::vector<Step> script) : script_(std::move(script)) {
    if (script_.empty()) throw InvalidConfigError("scripted backend needs at least one step");
  }

  std::string name() const override { return "scripted"; }

  ChatResponse send(const ChatRequest& request) override {
    request.validate();
    Step step;
    {
      std::lock_guard lock(mu_);
      step = script_[std::min(calls_, script_.size() - 1)];
      ++calls_;
    }
    switch (step.kind) {
      case Step::Kind::success:
        return ChatResponse{step.text, name(), 0.0, std::nullopt, std::nullopt};
      case Step::Kind::transient_failure:
        throw BackendError("scripted transient failure: " + step.text, true);
      case Step::Kind::permanent_failure:
        break;
    }
    throw BackendError("scripted failure: " + step.text, false);
  }

  std::size_t calls() const {
    std::lock_guard lock(mu_);
    return calls_;
  }

 private:
  std::vector<Step> script_;
  mutable std::mutex mu_;
  std::size_t calls_ = 0;
};

struct Backoff {
  std::chrono::milliseconds initial{500};
  double multiplier = 2.0;
  std::chrono::milliseconds max{8000};
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

inline void real_sleep(std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }

/// Returns the first successful response. Transient failures are retried up
/// to max_retries times; other failures propagate immediately.
inline ChatResponse send_with_retry(Backend& backend, const ChatRequest& request, int max_retries,
                                    const Backoff& backoff = {},
                                    const Sleeper& sleep = real_sleep) {
  if (max_retries < 0) throw InvalidConfigError("max_retries must be >= 0");
  auto wait = backoff.initial;
  for (int attempt = 1;; ++attempt) {
    try {
      return backend.send(request);
    } catch (const BackendError& e) {
      if (!e.transient()) throw;
      if (attempt > max_retries) throw RetriesExhaustedError(e.what(), attempt);
    }
    if (wait.count() > 0) sleep(wait);
    wait = std::min(backoff.max, std::chrono::milliseconds(static_cast<std::int64_t>(
                                     static_cast<double>(wait.count()) * backoff.multiplier)));
  }
}

inline std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error("SHA-256 digest failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xf];
  }
  return out;
}

inline std::string cache_key(const ChatRequest& request) {
  return sha256_hex(request.canonical().dump());
}

namespace detail {

inline std::mutex& key_mutex(const std::string& key) {
  static std::mutex table_mu;
  static std::map<std::string, std::unique_ptr<std::mutex>> table;
  std::lock_guard lock(table_mu);
  auto& slot = table[key];
  if (!slot) slot = std::make_unique<std::mutex>();
  return *slot;
}

inline std::filesystem::path cache_path(const std::filesystem::path& dir, const std::string& key) {
  return dir / key.substr(0, 2) / (key + ".json");
}

inline std::optional<ChatResponse> cache_lookup(const std::filesystem::path& path,
                                                const std::string& key,
                                                const ChatRequest& request) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    const auto j = nlohmann::json::parse(ss.str());
    if (j.at("key").get<std::string>() != key)
      throw CacheCorruptionError("cache entry " + path.string() + " has mismatched key");
    if (nlohmann::json(j.at("request")) != nlohmann::json(request.canonical()))
      throw CacheCorruptionError("cache entry " + path.string() +
                                 " does not match the request it is keyed by");
    return ChatResponse::from_json(j.at("response"));
  } catch (const nlohmann::json::exception& e) {
    throw CacheCorruptionError("corrupt cache entry " + path.string() + ": " + e.what());
  }
}

}  // namespace detail

/// Content-addressed cache: one JSON file per request digest holding the
/// canonical request and the response. A hit never calls the backend;
/// failures are never stored. With backend == nullptr a miss is an error
/// (replay-only mode).
inline ChatResponse cached_send(const std::filesystem::path& cache_dir, Backend* backend,
                                const ChatRequest& request) {
  request.validate();
  const std::string key = cache_key(request);
  const auto path = detail::cache_path(cache_dir, key);
  std::lock_guard lock(detail::key_mutex(key));
  if (auto hit = detail::cache_lookup(path, key, request)) return *hit;
  if (!backend) throw BackendError("replay cache miss for request " + key, false);

  ChatResponse response = backend->send(request);
  nlohmann::ordered_json entry;
  entry["key"] = key;
  entry["request"] = request.canonical();
  entry["response"] = response.to_json();

  std::error_code ec;
  std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw Error("cannot create cache directory " + path.parent_path().string());
  static std::atomic<std::uint64_t> counter{0};
  auto tmp = path;
  tmp += ".tmp" + std::to_string(counter.fetch_add(1)) + "-" +
         std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << entry.dump(2) << '\n';
    if (!out) throw Error("cannot write cache entry " + tmp.string());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw Error("cannot publish cache entry " + path.string() + ": " + ec.message());
  }
  return response;
}

/// Backend adapter over cached_send. Pass inner == nullptr for replay-only.
class CachedBackend : public Backend {
 public:
  CachedBackend(std::filesystem::path dir, Backend* inner)
      : dir_(std::move(dir)), inner_(inner) {}

  std::string name() const override {
    return inner_ ? "cached:" + inner_->name() : std::string("replay");
  }

  ChatResponse send(const ChatRequest& request) override {
    return cached_send(dir_, inner_, request);
  }

 private:
  std::filesystem::path dir_;
  Backend* inner_;
};

/// Caps the number of concurrent sends to the wrapped backend.
class InFlightLimit : public Backend {
 public:
  InFlightLimit(Backend& inner, std::ptrdiff_t limit) : inner_(inner), sem_(limit) {
    if (limit < 1) throw InvalidConfigError("in-flight limit must be >= 1");
  }

  std::string name() const override { return inner_.name(); }

  ChatResponse send(const ChatRequest& request) override {
    sem_.acquire();
    struct Release {
      std::counting_semaphore<>& s;
      ~Release() { s.release(); }
    } release{sem_};
    return inner_.send(request);
  }

 private:
  Backend& inner_;
  std::counting_semaphore<> sem_;
};

// Output contract shared by prompt rendering and the rule rewriter: the
// rewriter prompt ends with the target field and its span between markers,
// and the rewriter answers with a `Rewritten:` line.
inline constexpr std::string_view kTargetFieldMarker = "Target field: ";
inline constexpr std::string_view kSpanOpen = "<<<SPAN\n";
inline constexpr std::string_view kSpanClose = "\nSPAN>>>";
inline constexpr std::string_view kRewrittenMarker = "Rewritten:";

/// The last marked span in a prompt.
inline std::optional<std::string> extract_target_span(std::string_view prompt) {
  const auto open = prompt.rfind(kSpanOpen);
  if (open == std::string_view::npos) return std::nullopt;
  const auto start = open + kSpanOpen.size();
  if (prompt.substr(start).starts_with(kSpanClose.substr(1))) return std::string();
  const auto close = prompt.find(kSpanClose, start);
  if (close == std::string_view::npos) return std::nullopt;
  return std::string(prompt.substr(start, close - start));
}

inline std::string rewriter_reply(std::string_view span) {
  return std::string(kRewrittenMarker) + " " + std::string(span);
}

/// Applies a rule table to the span named in the prompt.
inline ChatResponse rule_rewriter_send(const RuleTable& rules, const ChatRequest& request) {
  request.validate();
  const auto span = extract_target_span(request.user_text);
  if (!span) throw BackendError("rule rewriter: no target span in prompt", false);
  return ChatResponse{rewriter_reply(rules.apply(*span)), "rule-rewriter", 0.0, std::nullopt,
                      std::nullopt};
}

class RuleRewriterBackend : public Backend {
 public:
  explicit RuleRewriterBackend(RuleTable rules) : rules_(std::move(rules)) {}
  std::string name() const override { return "rule-rewriter"; }
  ChatResponse send(const ChatRequest& request) override {
    return rule_rewriter_send(rules_, request);
  }

 private:
  RuleTable rules_;
};

}  // namespace zorephrase
