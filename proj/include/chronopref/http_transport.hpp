#pragma once

// HTTPS transport on cpp-httplib. Kept apart from client.hpp so code that only
// needs the mock transport does not compile httplib.

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>
// resolv.h defines _res as a macro, which breaks Eigen's product kernels when
// Eigen is included later in the same translation unit.
#ifdef _res
#undef _res
#endif

#include <cstdlib>
#include <memory>
#include <stdexcept>
#include <string>

#include "chronopref/client.hpp"

namespace chronopref {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EndpointUrl {
  std::string scheme_host_port;  // e.g. https://api.openai.com or http://127.0.0.1:8080
  std::string path;              // e.g. /v1/chat/completions

  static EndpointUrl parse(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("endpoint must be an http(s) URL: " + url);
    const auto scheme = url.substr(0, scheme_end);
    if (scheme != "http" && scheme != "https") throw ConfigError("unsupported endpoint scheme: " + scheme);
    const auto path_start = url.find('/', scheme_end + 3);
    EndpointUrl e;
    e.scheme_host_port = path_start == std::string::npos ? url : url.substr(0, path_start);
    e.path = path_start == std::string::npos ? "/" : url.substr(path_start);
    return e;
  }
};

class HttpTransport : public Transport {
 public:
  HttpTransport(const std::string& endpoint, std::string api_key, TransportPolicy policy)
      : url_(EndpointUrl::parse(endpoint)), api_key_(std::move(api_key)), policy_(policy) {}

  HttpReply post(const std::string& body) override {
    httplib::Client cli(url_.scheme_host_port);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(policy_.timeout).count();
    cli.set_connection_timeout(static_cast<time_t>(std::max<long long>(secs, 1)), 0);
    cli.set_read_timeout(static_cast<time_t>(std::max<long long>(secs, 1)), 0);
    cli.set_write_timeout(static_cast<time_t>(std::max<long long>(secs, 1)), 0);
    httplib::Headers headers{{"Authorization", "Bearer " + api_key_}};
    auto res = cli.Post(url_.path, headers, body, "application/json");
    if (!res) {
      const bool timeout = res.error() == httplib::Error::Read || res.error() == httplib::Error::Write ||
                           res.error() == httplib::Error::Connection || res.error() == httplib::Error::ConnectionTimeout;
      return {0, httplib::to_string(res.error()), timeout};
    }
    return {res->status, res->body, false};
  }

 private:
  EndpointUrl url_;
  std::string api_key_;
  TransportPolicy policy_;
};

/// Reads the credential from the configured environment variable.
inline std::string credential_from_env(const std::string& var) {
  const char* key = std::getenv(var.c_str());
  if (key == nullptr || *key == '\0') throw ConfigError("environment variable " + var + " is not set");
  return key;
}

inline std::shared_ptr<ChatClient> make_live_client(const ClientConfig& config) {
  auto transport = std::make_shared<HttpTransport>(config.endpoint, credential_from_env(config.api_key_env),
                                                   config.policy);
  return std::make_shared<ChatClient>(config, std::move(transport));
}

}  // namespace chronopref
