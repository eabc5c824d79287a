// Copyright 2026 The zorephrase Authors.
// SPDX-License-Identifier: Apache-2.0

// Live chat-completions backend over HTTP(S). Endpoint and model come from
// configuration; the API key is read from an environment variable at
// construction and never written anywhere.

#pragma once

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif

#include <chrono>
#include <cstdlib>
#include <string>

#include "httplib.h"
#include "json.hpp"
#include "zorephrase/errors.hpp"
#include "zorephrase/llm_backend.hpp"

namespace zorephrase {

struct HttpBackendConfig {
  std::string endpoint;  // full URL of a chat-completions route
  std::string model;
  std::string api_key_env = "ZOREPHRASE_API_KEY";
  double timeout_seconds = 60.0;
};

inline void to_json(nlohmann::json& j, const HttpBackendConfig& c) {
  j = nlohmann::json{{"endpoint", c.endpoint},
                     {"model", c.model},
                     {"api_key_env", c.api_key_env},
                     {"timeout_seconds", c.timeout_seconds}};
}

inline void from_json(const nlohmann::json& j, HttpBackendConfig& c) {
  c.endpoint = j.value("endpoint", c.endpoint);
  c.model = j.value("model", c.model);
  c.api_key_env = j.value("api_key_env", c.api_key_env);
  c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
}

struct ParsedUrl {
  std::string scheme_host_port;  // e.g. https://api.example.com:443
  std::string path;
};

inline ParsedUrl parse_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos)
    throw InvalidConfigError("endpoint '" + url + "' lacks a scheme");
  const std::string scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https")
    throw InvalidConfigError("endpoint scheme must be http or https: '" + url + "'");
  const auto path_start = url.find('/', scheme_end + 3);
  ParsedUrl out;
  out.scheme_host_port = url.substr(0, path_start);
  out.path = path_start == std::string::npos ? "/" : url.substr(path_start);
  if (out.scheme_host_port.size() <= scheme_end + 3)
    throw InvalidConfigError("endpoint '" + url + "' lacks a host");
  return out;
}

/// 408, 429 and 5xx are transient; other HTTP errors are not.
inline bool transient_status(int status) {
  return status == 408 || status == 429 || (status >= 500 && status <= 599);
}

/// Extracts the reply from a chat-completions response body.
inline ChatResponse parse_chat_completion(const std::string& body, const std::string& backend_name,
                                          double latency_seconds) {
  try {
    const auto j = nlohmann::json::parse(body);
    ChatResponse r;
    r.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
    r.backend_name = backend_name;
    r.latency_seconds = latency_seconds;
    if (j.contains("usage")) {
      const auto& u = j["usage"];
      if (u.contains("prompt_tokens")) r.prompt_tokens = u["prompt_tokens"].get<std::size_t>();
      if (u.contains("completion_tokens"))
        r.completion_tokens = u["completion_tokens"].get<std::size_t>();
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(std::string("malformed chat completion response: ") + e.what(), false);
  }
}

inline std::string chat_completion_body(const std::string& model, const ChatRequest& request) {
  nlohmann::ordered_json j;
  j["model"] = model;
  j["messages"] = nlohmann::ordered_json::array();
  if (!request.system_text.empty())
    j["messages"].push_back({{"role", "system"}, {"content", request.system_text}});
  j["messages"].push_back({{"role", "user"}, {"content", request.user_text}});
  j["temperature"] = request.temperature;
  j["max_tokens"] = request.max_output_tokens;
  return j.dump();
}

class HttpChatBackend : public Backend {
 public:
  explicit HttpChatBackend(HttpBackendConfig config) : config_(std::move(config)) {
    if (config_.endpoint.empty() || config_.model.empty())
      throw InvalidConfigError("live backend needs both an endpoint and a model name");
    url_ = parse_url(config_.endpoint);
    const char* key = std::getenv(config_.api_key_env.c_str());
    if (!key || !*key)
      throw InvalidConfigError("environment variable " + config_.api_key_env +
                               " is not set; the live backend needs an API key");
    api_key_ = key;
  }

  std::string name() const override { return "http:" + config_.model; }

  ChatResponse send(const ChatRequest& request) override {
    request.validate();
    httplib::Client client(url_.scheme_host_port);
    const auto secs = static_cast<time_t>(config_.timeout_seconds);
    client.set_connection_timeout(secs, 0);
    client.set_read_timeout(secs, 0);
    client.set_write_timeout(secs, 0);
    httplib::Headers headers{{"Authorization", "Bearer " + api_key_}};
    const auto start = std::chrono::steady_clock::now();
    auto res = client.Post(url_.path, headers, chat_completion_body(config_.model, request),
                           "application/json");
    const double latency =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!res)
      throw BackendError("HTTP request failed: " + httplib::to_string(res.error()), true);
    if (res->status != 200)
      throw BackendError("HTTP status " + std::to_string(res->status) + " from " +
                             config_.endpoint,
                         transient_status(res->status));
    return parse_chat_completion(res->body, name(), latency);
  }

 private:
  HttpBackendConfig config_;
  ParsedUrl url_;
  std::string api_key_;
};

}  // namespace zorephrase
