#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "chronopref/design.hpp"
#include "chronopref/prompting.hpp"

namespace chronopref {

class ClientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class AuthError : public ClientError {
 public:
  using ClientError::ClientError;
};
class RateLimited : public ClientError {
 public:
  using ClientError::ClientError;
};
class ProtocolError : public ClientError {
 public:
  using ClientError::ClientError;
};
class Timeout : public ClientError {
 public:
  using ClientError::ClientError;
};
class BudgetExceeded : public ClientError {
 public:
  using ClientError::ClientError;
};

struct CompletionRequest {
  std::string model_id;
  Conversation messages;
  double temperature = 1.0;
  std::optional<int> max_output_tokens;

  void validate() const {
    if (messages.empty()) throw std::invalid_argument("completion request needs at least one message");
    if (temperature < 0.0 || temperature > 2.0) throw std::invalid_argument("temperature must lie in [0, 2]");
  }

  /// Chat-completions request body. Key order is fixed so equal requests
  /// serialize to identical bytes.
  std::string to_json() const {
    nlohmann::ordered_json j;
    j["model"] = model_id;
    auto msgs = nlohmann::ordered_json::array();
    for (const auto& m : messages) {
      nlohmann::ordered_json msg;
      msg["role"] = std::string(to_string(m.role));
      msg["content"] = m.content;
      msgs.push_back(std::move(msg));
    }
    j["messages"] = std::move(msgs);
    j["temperature"] = temperature;
    if (max_output_tokens) j["max_tokens"] = *max_output_tokens;
    return j.dump();
  }
};

struct TokenUsage {
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;

  std::int64_t total() const { return input_tokens + output_tokens; }
  TokenUsage& operator+=(const TokenUsage& o) {
    input_tokens += o.input_tokens;
    output_tokens += o.output_tokens;
    return *this;
  }
};

struct CompletionResponse {
  std::string content;
  std::string finish_reason;
  TokenUsage usage;

  static CompletionResponse parse(const std::string& body) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      throw ProtocolError(std::string("response is not JSON: ") + e.what());
    }
    try {
      const auto& choices = j.at("choices");
      if (!choices.is_array() || choices.empty()) throw ProtocolError("response has no choices");
      const auto& first = choices.at(0);
      CompletionResponse r;
      const auto& content = first.at("message").at("content");
      r.content = content.is_null() ? std::string() : content.get<std::string>();
      if (first.contains("finish_reason") && first.at("finish_reason").is_string())
        r.finish_reason = first.at("finish_reason").get<std::string>();
      if (j.contains("usage") && j.at("usage").is_object()) {
        r.usage.input_tokens = j.at("usage").value("prompt_tokens", std::int64_t{0});
        r.usage.output_tokens = j.at("usage").value("completion_tokens", std::int64_t{0});
      }
      if (r.usage.input_tokens < 0 || r.usage.output_tokens < 0) throw ProtocolError("negative usage counts");
      return r;
    } catch (const nlohmann::json::exception& e) {
      throw ProtocolError(std::string("malformed chat completion: ") + e.what());
    }
  }

  static std::string make_body(const std::string& content, TokenUsage usage = {}, const std::string& finish = "stop") {
    nlohmann::ordered_json j;
    j["object"] = "chat.completion";
    j["choices"] = nlohmann::ordered_json::array(
        {{{"index", 0}, {"message", {{"role", "assistant"}, {"content", content}}}, {"finish_reason", finish}}});
    j["usage"] = {{"prompt_tokens", usage.input_tokens},
                  {"completion_tokens", usage.output_tokens},
                  {"total_tokens", usage.total()}};
    return j.dump();
  }
};

struct TransportPolicy {
  int max_in_flight = 4;
  int retry_max = 3;
  std::chrono::milliseconds backoff_base{500};
  std::chrono::milliseconds timeout{60'000};

  void validate() const {
    if (max_in_flight < 1) throw std::invalid_argument("max_in_flight must be >= 1");
    if (retry_max < 0) throw std::invalid_argument("retry_max must be >= 0");
  }
};

struct HttpReply {
  int status = 0;
  std::string body;
  bool timed_out = false;
};

/// Moves one serialized request to an endpoint. Implementations must be
/// safe to call from several threads at once.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpReply post(const std::string& body) = 0;
};

/// Scriptable in-process transport. Replies are chosen, in priority order, by
/// injected failures, the scripted queue, pattern rules on the last user
/// message, then the default reply.
class MockTransport : public Transport {
 public:
  MockTransport() = default;
  explicit MockTransport(std::string default_reply) : default_reply_(std::move(default_reply)) {}

  void set_default_reply(std::string reply) {
    std::lock_guard lock(mu_);
    default_reply_ = std::move(reply);
  }
  void enqueue_reply(std::string reply) {
    std::lock_guard lock(mu_);
    queue_.push_back({200, CompletionResponse::make_body(reply, usage_for(reply)), false});
  }
  void enqueue_raw(HttpReply reply) {
    std::lock_guard lock(mu_);
    queue_.push_back(std::move(reply));
  }
  void fail_next(int count, int status = 503) {
    std::lock_guard lock(mu_);
    for (int i = 0; i < count; ++i) failures_.push_back({status, R"({"error":{"message":"injected"}})", status == 0});
  }
  void fail_always(int status = 503) {
    std::lock_guard lock(mu_);
    always_fail_ = status;
  }
  /// Reply `reply` whenever the last user message contains `needle`.
  void reply_when(std::string needle, std::string reply) {
    std::lock_guard lock(mu_);
    patterns_.emplace_back(std::move(needle), std::move(reply));
  }
  void set_handler(std::function<std::string(const nlohmann::json& request)> handler) {
    std::lock_guard lock(mu_);
    handler_ = std::move(handler);
  }
  void set_latency(std::chrono::milliseconds latency) { latency_ = latency; }

  HttpReply post(const std::string& body) override {
    const int now = ++in_flight_;
    int prev = max_in_flight_.load();
    while (now > prev && !max_in_flight_.compare_exchange_weak(prev, now)) {
    }
    struct Guard {
      std::atomic<int>& c;
      ~Guard() { --c; }
    } guard{in_flight_};
    if (latency_.count() > 0) std::this_thread::sleep_for(latency_);

    std::lock_guard lock(mu_);
    requests_.push_back(body);
    ++calls_;
    if (always_fail_) return {*always_fail_, R"({"error":{"message":"injected"}})", *always_fail_ == 0};
    if (!failures_.empty()) {
      auto r = failures_.front();
      failures_.pop_front();
      return r;
    }
    if (!queue_.empty()) {
      auto r = queue_.front();
      queue_.pop_front();
      return r;
    }
    const auto request = nlohmann::json::parse(body);
    std::string last_user;
    for (const auto& m : request.at("messages"))
      if (m.at("role") == "user") last_user = m.at("content").get<std::string>();
    std::string reply = default_reply_;
    if (handler_) {
      reply = handler_(request);
    } else {
      for (const auto& [needle, r] : patterns_)
        if (last_user.find(needle) != std::string::npos) {
          reply = r;
          break;
        }
    }
    return {200, CompletionResponse::make_body(reply, usage_for(reply)), false};
  }

  int calls() const {
    std::lock_guard lock(mu_);
    return calls_;
  }
  int max_in_flight_observed() const { return max_in_flight_.load(); }
  std::vector<std::string> requests() const {
    std::lock_guard lock(mu_);
    return requests_;
  }

 private:
  static TokenUsage usage_for(const std::string& reply) {
    return {10, static_cast<std::int64_t>(reply.size() / 4 + 1)};
  }

  mutable std::mutex mu_;
  std::string default_reply_ = "(1)";
  std::deque<HttpReply> queue_;
  std::deque<HttpReply> failures_;
  std::optional<int> always_fail_;
  std::vector<std::pair<std::string, std::string>> patterns_;
  std::function<std::string(const nlohmann::json&)> handler_;
  std::chrono::milliseconds latency_{0};
  std::atomic<int> in_flight_{0};
  std::atomic<int> max_in_flight_{0};
  int calls_ = 0;
  std::vector<std::string> requests_;
};

struct ClientConfig {
  std::string endpoint = "https://api.openai.com/v1/chat/completions";
  std::string model_id = "gpt-4";
  double temperature = 1.0;
  std::optional<int> max_output_tokens;
  std::string api_key_env = "OPENAI_API_KEY";
  TransportPolicy policy;
  std::optional<std::int64_t> token_budget;  // hard cap on input + output tokens
};

/// Chat-completions client with retries, bounded concurrency and usage
/// accounting. Shareable across threads.
class ChatClient {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  ChatClient(ClientConfig config, std::shared_ptr<Transport> transport, Sleeper sleeper = default_sleeper())
      : config_(std::move(config)), transport_(std::move(transport)), sleeper_(std::move(sleeper)) {
    config_.policy.validate();
    if (!transport_) throw std::invalid_argument("client needs a transport");
  }

  const ClientConfig& config() const { return config_; }

  CompletionResponse complete(const CompletionRequest& request) {
    request.validate();
    check_budget();
    const auto body = request.to_json();
    Slot slot(*this);
    const int attempts = config_.policy.retry_max + 1;
    std::string last_error;
    bool last_was_timeout = false;
    for (int attempt = 1; attempt <= attempts; ++attempt) {
      const HttpReply reply = transport_->post(body);
      if (reply.status == 200 && !reply.timed_out) {
        auto response = CompletionResponse::parse(reply.body);
        record_usage(response.usage);
        return response;
      }
      if (reply.status == 401 || reply.status == 403)
        throw AuthError("endpoint rejected the credential (HTTP " + std::to_string(reply.status) + ")");
      const bool transient = reply.timed_out || reply.status == 0 || reply.status == 408 || reply.status == 409 ||
                             reply.status == 429 || reply.status >= 500;
      if (!transient)
        throw ProtocolError("unexpected HTTP " + std::to_string(reply.status) + ": " + reply.body.substr(0, 200));
      last_was_timeout = reply.timed_out || reply.status == 0;
      last_error = last_was_timeout ? "timeout" : "HTTP " + std::to_string(reply.status);
      if (attempt < attempts) sleeper_(backoff(attempt));
    }
    const auto msg = "giving up after " + std::to_string(attempts) + " attempts (" + last_error + ")";
    if (last_was_timeout) throw Timeout(msg);
    throw RateLimited(msg);
  }

  CompletionResponse complete(const Conversation& messages) {
    CompletionRequest req{config_.model_id, messages, config_.temperature, config_.max_output_tokens};
    return complete(req);
  }

  /// Single-turn translation in a fresh conversation.
  std::string translate(const std::string& text, const Language& target) {
    if (text.empty()) return {};
    Conversation conv{{Role::User, "Translate the following text into " + target.display_name +
                                       ". Reply with the translation only, keeping any text in curly braces "
                                       "unchanged.\n\n" +
                                       text}};
    return complete(conv).content;
  }

  TokenUsage usage() const {
    std::lock_guard lock(usage_mu_);
    return usage_;
  }

  std::chrono::milliseconds backoff(int attempt) const {
    return config_.policy.backoff_base * (std::int64_t{1} << std::min(attempt - 1, 16));
  }

  static Sleeper default_sleeper() {
    return [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  }

 private:
  class Slot {
   public:
    explicit Slot(ChatClient& c) : c_(c) {
      std::unique_lock lock(c_.slot_mu_);
      c_.slot_cv_.wait(lock, [&] { return c_.in_flight_ < c_.config_.policy.max_in_flight; });
      ++c_.in_flight_;
    }
    ~Slot() {
      {
        std::lock_guard lock(c_.slot_mu_);
        --c_.in_flight_;
      }
      c_.slot_cv_.notify_one();
    }
    Slot(const Slot&) = delete;
    Slot& operator=(const Slot&) = delete;

   private:
    ChatClient& c_;
  };

  void check_budget() const {
    if (!config_.token_budget) return;
    std::lock_guard lock(usage_mu_);
    if (usage_.total() >= *config_.token_budget)
      throw BudgetExceeded("token budget of " + std::to_string(*config_.token_budget) + " exhausted");
  }

  void record_usage(const TokenUsage& u) {
    std::lock_guard lock(usage_mu_);
    usage_ += u;
  }

  ClientConfig config_;
  std::shared_ptr<Transport> transport_;
  Sleeper sleeper_;
  std::mutex slot_mu_;
  std::condition_variable slot_cv_;
  int in_flight_ = 0;
  mutable std::mutex usage_mu_;
  TokenUsage usage_;
};

}  // namespace chronopref
