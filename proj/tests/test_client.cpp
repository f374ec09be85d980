#include <gtest/gtest.h>

#include <cstdlib>
#include <thread>

#include "chronopref/http_transport.hpp"

using namespace chronopref;
using namespace std::chrono_literals;

namespace {

struct SleepLog {
  std::vector<std::chrono::milliseconds> waits;
  ChatClient::Sleeper sleeper() {
    return [this](std::chrono::milliseconds d) { waits.push_back(d); };
  }
};

ClientConfig config(int retry_max = 3, int in_flight = 4) {
  ClientConfig c;
  c.model_id = "test-model";
  c.policy.retry_max = retry_max;
  c.policy.max_in_flight = in_flight;
  c.policy.backoff_base = 100ms;
  return c;
}

ChatClient::Sleeper no_sleep() {
  return [](std::chrono::milliseconds) {};
}

Conversation hello() { return {{Role::User, "hello"}}; }

}  // namespace

TEST(Request, SerializesInFixedKeyOrder) {
  CompletionRequest r{"gpt-4", {{Role::User, "q"}, {Role::Assistant, "a"}}, 1.0, 16};
  EXPECT_EQ(r.to_json(),
            R"({"model":"gpt-4","messages":[{"role":"user","content":"q"},{"role":"assistant","content":"a"}],)"
            R"("temperature":1.0,"max_tokens":16})");
  CompletionRequest no_cap{"m", {{Role::User, "q"}}, 0.0, std::nullopt};
  EXPECT_EQ(no_cap.to_json().find("max_tokens"), std::string::npos);
}

TEST(Request, Validation) {
  EXPECT_THROW((CompletionRequest{"m", {}, 1.0, {}}).validate(), std::invalid_argument);
  EXPECT_THROW((CompletionRequest{"m", hello(), 2.5, {}}).validate(), std::invalid_argument);
}

TEST(Response, ParseAndErrors) {
  const auto r = CompletionResponse::parse(CompletionResponse::make_body("(2)", {12, 3}));
  EXPECT_EQ(r.content, "(2)");
  EXPECT_EQ(r.finish_reason, "stop");
  EXPECT_EQ(r.usage.input_tokens, 12);
  EXPECT_EQ(r.usage.output_tokens, 3);
  EXPECT_THROW(CompletionResponse::parse("not json"), ProtocolError);
  EXPECT_THROW(CompletionResponse::parse(R"({"choices":[]})"), ProtocolError);
  EXPECT_THROW(CompletionResponse::parse(R"({"choices":[{"text":"x"}]})"), ProtocolError);
  const auto null_content = CompletionResponse::parse(R"({"choices":[{"message":{"content":null}}]})");
  EXPECT_EQ(null_content.content, "");
}

TEST(Client, ReturnsReplyAndAccumulatesUsage) {
  auto t = std::make_shared<MockTransport>("(1)");
  ChatClient c(config(), t);
  EXPECT_EQ(c.complete(hello()).content, "(1)");
  EXPECT_EQ(c.complete(hello()).content, "(1)");
  EXPECT_EQ(c.usage().input_tokens, 20);
  EXPECT_EQ(t->calls(), 2);
  const auto sent = nlohmann::json::parse(t->requests().front());
  EXPECT_EQ(sent["model"], "test-model");
}

TEST(Client, RetriesTransientFailuresWithExponentialBackoff) {
  auto t = std::make_shared<MockTransport>("(2)");
  t->fail_next(2, 429);
  SleepLog log;
  ChatClient c(config(3), t, log.sleeper());
  EXPECT_EQ(c.complete(hello()).content, "(2)");
  EXPECT_EQ(t->calls(), 3);
  ASSERT_EQ(log.waits.size(), 2u);
  EXPECT_EQ(log.waits[0], 100ms);
  EXPECT_EQ(log.waits[1], 200ms);
}

TEST(Client, GivesUpAfterRetryBudget) {
  auto t = std::make_shared<MockTransport>();
  t->fail_always(503);
  SleepLog log;
  ChatClient c(config(2), t, log.sleeper());
  EXPECT_THROW(c.complete(hello()), RateLimited);
  EXPECT_EQ(t->calls(), 3);
  EXPECT_EQ(log.waits, (std::vector<std::chrono::milliseconds>{100ms, 200ms}));
}

TEST(Client, TimeoutsSurfaceAsTimeout) {
  auto t = std::make_shared<MockTransport>();
  t->fail_always(0);
  SleepLog log;
  ChatClient c(config(1), t, log.sleeper());
  EXPECT_THROW(c.complete(hello()), Timeout);
}

TEST(Client, AuthFailureIsNotRetried) {
  auto t = std::make_shared<MockTransport>();
  t->fail_next(1, 401);
  SleepLog log;
  ChatClient c(config(3), t, log.sleeper());
  EXPECT_THROW(c.complete(hello()), AuthError);
  EXPECT_EQ(t->calls(), 1);
  EXPECT_TRUE(log.waits.empty());
}

TEST(Client, OtherStatusesAreProtocolErrors) {
  auto t = std::make_shared<MockTransport>();
  t->fail_next(1, 400);
  ChatClient c(config(3), t, no_sleep());
  EXPECT_THROW(c.complete(hello()), ProtocolError);
  auto bad = std::make_shared<MockTransport>();
  bad->enqueue_raw({200, "<html>", false});
  ChatClient c2(config(), bad, no_sleep());
  EXPECT_THROW(c2.complete(hello()), ProtocolError);
}

TEST(Client, BudgetStopsFurtherCalls) {
  auto t = std::make_shared<MockTransport>("(1)");
  auto cfg = config();
  cfg.token_budget = 15;
  ChatClient c(cfg, t);
  c.complete(hello());  // 11 tokens
  c.complete(hello());  // 22, over budget after the fact
  EXPECT_THROW(c.complete(hello()), BudgetExceeded);
  EXPECT_EQ(t->calls(), 2);
}

TEST(Client, BoundsConcurrentRequests) {
  auto t = std::make_shared<MockTransport>("(1)");
  t->set_latency(5ms);
  auto c = std::make_shared<ChatClient>(config(0, 3), t);
  std::vector<std::thread> threads;
  for (int i = 0; i < 12; ++i)
    threads.emplace_back([&] {
      for (int k = 0; k < 4; ++k) c->complete(hello());
    });
  for (auto& th : threads) th.join();
  EXPECT_EQ(t->calls(), 48);
  EXPECT_LE(t->max_in_flight_observed(), 3);
  EXPECT_GE(t->max_in_flight_observed(), 2);
}

TEST(Client, TranslateUsesFreshConversation) {
  auto t = std::make_shared<MockTransport>();
  t->set_handler([](const nlohmann::json& req) {
    EXPECT_EQ(req["messages"].size(), 1u);
    return std::string("Hallo");
  });
  ChatClient c(config(), t);
  const Language de{"german", "German", FtrClass::Weak};
  EXPECT_EQ(c.translate("Hello", de), "Hallo");
  EXPECT_EQ(c.translate("", de), "");
  EXPECT_EQ(t->calls(), 1);
  EXPECT_NE(t->requests()[0].find("into German"), std::string::npos);
}

TEST(Endpoint, ParsesUrls) {
  const auto a = EndpointUrl::parse("https://api.example.com/v1/chat/completions");
  EXPECT_EQ(a.scheme_host_port, "https://api.example.com");
  EXPECT_EQ(a.path, "/v1/chat/completions");
  const auto b = EndpointUrl::parse("http://127.0.0.1:8080");
  EXPECT_EQ(b.path, "/");
  EXPECT_THROW(EndpointUrl::parse("ftp://x/y"), ConfigError);
  EXPECT_THROW(EndpointUrl::parse("nonsense"), ConfigError);
}

TEST(Credentials, ReadFromEnvironmentOnly) {
  ::unsetenv("CHRONOPREF_TEST_KEY");
  EXPECT_THROW(credential_from_env("CHRONOPREF_TEST_KEY"), ConfigError);
  ::setenv("CHRONOPREF_TEST_KEY", "sk-test", 1);
  EXPECT_EQ(credential_from_env("CHRONOPREF_TEST_KEY"), "sk-test");
  ::unsetenv("CHRONOPREF_TEST_KEY");
}

TEST(HttpTransportTest, TalksToLocalServer) {
  httplib::Server srv;
  std::atomic<int> hits{0};
  srv.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    if (++hits == 1) {
      res.status = 503;
      return;
    }
    EXPECT_EQ(req.get_header_value("Authorization"), "Bearer sk-local");
    const auto j = nlohmann::json::parse(req.body);
    res.set_content(CompletionResponse::make_body("echo:" + j["messages"][0]["content"].get<std::string>(), {5, 2}),
                    "application/json");
  });
  const int port = srv.bind_to_any_port("127.0.0.1");
  std::thread th([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();

  auto cfg = config(2);
  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  cfg.policy.timeout = 5s;
  auto transport = std::make_shared<HttpTransport>(cfg.endpoint, "sk-local", cfg.policy);
  SleepLog log;
  ChatClient c(cfg, transport, log.sleeper());
  EXPECT_EQ(c.complete(hello()).content, "echo:hello");
  EXPECT_EQ(hits.load(), 2);
  EXPECT_EQ(log.waits.size(), 1u);
  EXPECT_EQ(c.usage().total(), 7);
  srv.stop();
  th.join();
}

TEST(HttpTransportTest, UnreachableEndpointIsTransient) {
  auto cfg = config(1);
  cfg.policy.timeout = 1s;
  auto transport = std::make_shared<HttpTransport>("http://127.0.0.1:9/v1", "k", cfg.policy);
  ChatClient c(cfg, transport, no_sleep());
  EXPECT_THROW(c.complete(hello()), ClientError);
}
