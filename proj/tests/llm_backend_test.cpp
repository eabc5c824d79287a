// Copyright 2026 The zorephrase Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <thread>

#include "zorephrase/http_backend.hpp"
#include "zorephrase/llm_backend.hpp"

namespace zr = zorephrase;
namespace fs = std::filesystem;

namespace {

zr::ChatRequest request(std::string user = "hello", double temperature = 0.0) {
  return {"system", std::move(user), temperature, 64};
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("zr-cache-" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "-" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<std::chrono::milliseconds> g_sleeps;
void record_sleep(std::chrono::milliseconds d) { g_sleeps.push_back(d); }

using Step = zr::ScriptedBackend::Step;

}  // namespace

TEST(ChatRequest, ValidationRejectsBadFields) {
  EXPECT_THROW(request("").validate(), zr::InvalidConfigError);
  EXPECT_THROW(request("x", -0.1).validate(), zr::InvalidConfigError);
  auto r = request();
  r.max_output_tokens = 0;
  EXPECT_THROW(r.validate(), zr::InvalidConfigError);
}

TEST(SendWithRetry, FixtureSucceedsFirstCall) {
  auto fx = zr::FixtureBackend::constant("ok");
  g_sleeps.clear();
  EXPECT_EQ(zr::send_with_retry(fx, request(), 3, {}, record_sleep).text, "ok");
  EXPECT_EQ(fx.calls(), 1u);
  EXPECT_TRUE(g_sleeps.empty());
}

TEST(SendWithRetry, TwoTransientFailuresThenSuccess) {
  zr::ScriptedBackend b({Step::transient(), Step::transient(), Step::ok("done")});
  g_sleeps.clear();
  EXPECT_EQ(zr::send_with_retry(b, request(), 3, {}, record_sleep).text, "done");
  EXPECT_EQ(b.calls(), 3u);
  ASSERT_EQ(g_sleeps.size(), 2u);
  EXPECT_EQ(g_sleeps[0].count(), 500);
  EXPECT_EQ(g_sleeps[1].count(), 1000);
}

TEST(SendWithRetry, AlwaysFailingExhaustsAfterMaxRetriesPlusOne) {
  zr::ScriptedBackend b({Step::transient("rate limit")});
  try {
    zr::send_with_retry(b, request(), 2, {}, record_sleep);
    FAIL();
  } catch (const zr::RetriesExhaustedError& e) {
    EXPECT_EQ(e.attempts(), 3);
    EXPECT_NE(e.last_failure().find("rate limit"), std::string::npos);
  }
  EXPECT_EQ(b.calls(), 3u);
}

TEST(SendWithRetry, PermanentFailureSurfacesImmediately) {
  zr::ScriptedBackend b({Step::permanent(), Step::ok("never")});
  EXPECT_THROW(zr::send_with_retry(b, request(), 5, {}, record_sleep), zr::BackendError);
  EXPECT_EQ(b.calls(), 1u);
}

TEST(SendWithRetry, BackoffIsCapped) {
  zr::ScriptedBackend b({Step::transient()});
  g_sleeps.clear();
  zr::Backoff backoff{std::chrono::milliseconds(100), 10.0, std::chrono::milliseconds(2000)};
  EXPECT_THROW(zr::send_with_retry(b, request(), 4, backoff, record_sleep),
               zr::RetriesExhaustedError);
  ASSERT_EQ(g_sleeps.size(), 4u);
  EXPECT_EQ(g_sleeps[1].count(), 1000);
  EXPECT_EQ(g_sleeps[3].count(), 2000);
  EXPECT_THROW(zr::send_with_retry(b, request(), -1), zr::InvalidConfigError);
}

TEST(CacheKey, Sha256KnownAnswer) {
  EXPECT_EQ(zr::sha256_hex("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(CacheKey, EveryFieldParticipates) {
  const auto base = zr::cache_key(request());
  EXPECT_NE(zr::cache_key(request("hello", 0.5)), base);
  auto r = request();
  r.system_text = "other";
  EXPECT_NE(zr::cache_key(r), base);
  r = request();
  r.max_output_tokens = 65;
  EXPECT_NE(zr::cache_key(r), base);
  EXPECT_EQ(zr::cache_key(request()), base);
}

TEST(CachedSend, SecondRequestIsServedFromCache) {
  TempDir dir;
  zr::FixtureBackend fx("fixture", [](const zr::ChatRequest& r) { return "echo " + r.user_text; });
  const auto first = zr::cached_send(dir.path, &fx, request());
  const auto second = zr::cached_send(dir.path, &fx, request());
  EXPECT_EQ(fx.calls(), 1u);
  EXPECT_EQ(first, second);
  EXPECT_EQ(second.to_json().dump(), first.to_json().dump());
  zr::cached_send(dir.path, &fx, request("hello", 0.7));
  EXPECT_EQ(fx.calls(), 2u);
}

TEST(CachedSend, ReplayOnlyServesHitsAndRejectsMisses) {
  TempDir dir;
  auto fx = zr::FixtureBackend::constant("stored");
  zr::cached_send(dir.path, &fx, request());
  zr::CachedBackend replay(dir.path, nullptr);
  EXPECT_EQ(replay.send(request()).text, "stored");
  EXPECT_THROW(replay.send(request("unseen")), zr::BackendError);
}

TEST(CachedSend, FailuresAreNeverStored) {
  TempDir dir;
  zr::ScriptedBackend b({Step::permanent(), Step::ok("later")});
  EXPECT_THROW(zr::cached_send(dir.path, &b, request()), zr::BackendError);
  EXPECT_EQ(zr::cached_send(dir.path, &b, request()).text, "later");
  EXPECT_EQ(b.calls(), 2u);
}

TEST(CachedSend, CorruptEntriesRaiseNamedError) {
  TempDir dir;
  auto fx = zr::FixtureBackend::constant("x");
  zr::cached_send(dir.path, &fx, request());
  const auto key = zr::cache_key(request());
  const auto path = dir.path / key.substr(0, 2) / (key + ".json");
  ASSERT_TRUE(fs::exists(path));

  std::ofstream(path, std::ios::trunc) << "{ not json";
  EXPECT_THROW(zr::cached_send(dir.path, &fx, request()), zr::CacheCorruptionError);

  nlohmann::json wrong{{"key", key},
                       {"request", request("different").canonical()},
                       {"response", zr::ChatResponse{"x", "f", 0.0, {}, {}}.to_json()}};
  std::ofstream(path, std::ios::trunc) << wrong.dump();
  EXPECT_THROW(zr::cached_send(dir.path, &fx, request()), zr::CacheCorruptionError);
  EXPECT_EQ(fx.calls(), 1u);
}

TEST(CachedSend, ConcurrentSendsOfOneKeyCallBackendOnce) {
  TempDir dir;
  auto fx = zr::FixtureBackend::constant("x");
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t)
    threads.emplace_back([&] { zr::cached_send(dir.path, &fx, request("same")); });
  for (auto& t : threads) t.join();
  EXPECT_EQ(fx.calls(), 1u);
}

TEST(InFlightLimit, ForwardsCalls) {
  auto fx = zr::FixtureBackend::constant("x");
  zr::InFlightLimit limited(fx, 2);
  EXPECT_EQ(limited.send(request()).text, "x");
  EXPECT_THROW(zr::InFlightLimit(fx, 0), zr::InvalidConfigError);
}

TEST(RuleRewriter, RemovesInjectedDistractors) {
  zr::RuleTable rules;
  rules.remove = {"umm0", "umm1"};
  const std::string prompt = "Text: ...\n\nTarget field: text\n<<<SPAN\nsiga1 umm0 word3 umm1 "
                             "sigb2 umm0\nSPAN>>>";
  const auto r = zr::rule_rewriter_send(rules, request(prompt));
  EXPECT_EQ(r.text, "Rewritten: siga1 word3 sigb2");
}

TEST(RuleRewriter, NoMatchAndEmptyRulesAreIdentity) {
  zr::RuleTable rules;
  rules.remove = {"umm0"};
  const std::string prompt = "Target field: text\n<<<SPAN\nThe  cat sat.\nSPAN>>>";
  EXPECT_EQ(zr::rule_rewriter_send(rules, request(prompt)).text, "Rewritten: The  cat sat.");
  EXPECT_EQ(zr::rule_rewriter_send({}, request(prompt)).text, "Rewritten: The  cat sat.");
}

TEST(RuleRewriter, SynonymsAndLastSpanWins) {
  zr::RuleTable rules;
  rules.synonyms = {{"big", "large"}};
  const std::string prompt = "<<<SPAN\nbig old\nSPAN>>>\n<<<SPAN\na big dog\nSPAN>>>";
  EXPECT_EQ(zr::rule_rewriter_send(rules, request(prompt)).text, "Rewritten: a large dog");
}

TEST(RuleRewriter, MissingSpanIsAnError) {
  EXPECT_THROW(zr::rule_rewriter_send({}, request("no markers here")), zr::BackendError);
  EXPECT_THROW(zr::rule_rewriter_send({}, request("<<<SPAN\nunterminated")), zr::BackendError);
  EXPECT_EQ(zr::extract_target_span("<<<SPAN\nSPAN>>>"), std::string());
}

TEST(HttpBackend, UrlParsingAndStatusClassification) {
  const auto u = zr::parse_url("https://api.example.com:8443/v1/chat/completions");
  EXPECT_EQ(u.scheme_host_port, "https://api.example.com:8443");
  EXPECT_EQ(u.path, "/v1/chat/completions");
  EXPECT_EQ(zr::parse_url("http://localhost").path, "/");
  EXPECT_THROW(zr::parse_url("ftp://x/y"), zr::InvalidConfigError);
  EXPECT_THROW(zr::parse_url("nohost"), zr::InvalidConfigError);
  EXPECT_TRUE(zr::transient_status(429));
  EXPECT_TRUE(zr::transient_status(503));
  EXPECT_FALSE(zr::transient_status(400));
  EXPECT_FALSE(zr::transient_status(401));
}

TEST(HttpBackend, ParsesChatCompletionBody) {
  const auto r = zr::parse_chat_completion(
      R"({"choices":[{"message":{"role":"assistant","content":"same"}}],)"
      R"("usage":{"prompt_tokens":12,"completion_tokens":1}})",
      "http:m", 0.5);
  EXPECT_EQ(r.text, "same");
  EXPECT_EQ(r.prompt_tokens, 12u);
  EXPECT_EQ(r.completion_tokens, 1u);
  EXPECT_THROW(zr::parse_chat_completion("{}", "http:m", 0.0), zr::BackendError);
}

TEST(HttpBackend, RequestBodyCarriesBothMessages) {
  const auto body = nlohmann::json::parse(zr::chat_completion_body("m", request("u", 0.25)));
  EXPECT_EQ(body["model"], "m");
  ASSERT_EQ(body["messages"].size(), 2u);
  EXPECT_EQ(body["messages"][0]["role"], "system");
  EXPECT_EQ(body["messages"][1]["content"], "u");
  EXPECT_EQ(body["temperature"], 0.25);
  EXPECT_EQ(body["max_tokens"], 64);
}

TEST(HttpBackend, MissingCredentialOrEndpointIsAConfigError) {
  zr::HttpBackendConfig cfg;
  cfg.endpoint = "http://127.0.0.1:9/v1/chat/completions";
  cfg.model = "m";
  cfg.api_key_env = "ZOREPHRASE_TEST_UNSET_KEY";
  ::unsetenv("ZOREPHRASE_TEST_UNSET_KEY");
  EXPECT_THROW(zr::HttpChatBackend{cfg}, zr::InvalidConfigError);
  cfg.endpoint.clear();
  EXPECT_THROW(zr::HttpChatBackend{cfg}, zr::InvalidConfigError);
}

TEST(HttpBackend, TalksToLocalServer) {
  httplib::Server server;
  std::string seen_auth;
  int hits = 0;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen_auth = req.get_header_value("Authorization");
    if (++hits == 1) {
      res.status = 429;
      return;
    }
    const auto body = nlohmann::json::parse(req.body);
    nlohmann::json reply{
        {"choices", {{{"message", {{"content", "echo " + body["messages"][1]["content"].get<std::string>()}}}}}}};
    res.set_content(reply.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ::setenv("ZOREPHRASE_TEST_KEY", "secret", 1);
  zr::HttpBackendConfig cfg;
  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  cfg.model = "m";
  cfg.api_key_env = "ZOREPHRASE_TEST_KEY";
  cfg.timeout_seconds = 5;
  zr::HttpChatBackend backend(cfg);
  try {
    backend.send(request("hi"));
    ADD_FAILURE() << "first call should be rate limited";
  } catch (const zr::BackendError& e) {
    EXPECT_TRUE(e.transient());
  }
  const auto r = zr::send_with_retry(backend, request("hi"), 1, {}, [](auto) {});
  EXPECT_EQ(r.text, "echo hi");
  EXPECT_EQ(seen_auth, "Bearer secret");
  server.stop();
  thread.join();
}
