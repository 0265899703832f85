#pragma once

// HTTP completion backend. Posts {"prompt", "max_tokens"} as JSON and reads
// the completion from the "text" field of the JSON reply. Plain http only.

#include <cstdlib>
#include <optional>
#include <string>
#include <string_view>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "trajguard/detection.hpp"

namespace trajguard {

struct HttpBackendConfig {
  std::string endpoint;      // e.g. http://127.0.0.1:8080/v1/complete
  std::string api_key_env;   // name of the variable holding the key; may be empty
  int max_tokens = 512;
  int timeout_seconds = 30;
};

struct ParsedEndpoint {
  std::string base;  // scheme://host[:port]
  std::string path;
};

inline ParsedEndpoint parse_endpoint(std::string_view url) {
  auto scheme = url.find("://");
  if (url.empty() || scheme == std::string_view::npos || url.substr(0, scheme) != "http") {
    throw Error(ErrorCode::invalid_config, "endpoint must be an http:// URL, got '" + std::string(url) + "'");
  }
  auto slash = url.find('/', scheme + 3);
  if (slash == std::string_view::npos) return {std::string(url), "/"};
  return {std::string(url.substr(0, slash)), std::string(url.substr(slash))};
}

class HttpBackend : public ClassifierBackend {
 public:
  explicit HttpBackend(HttpBackendConfig cfg) : cfg_(std::move(cfg)), endpoint_(parse_endpoint(cfg_.endpoint)) {}

  std::string classify(std::string_view prompt) const override {
    httplib::Client client(endpoint_.base);
    client.set_connection_timeout(cfg_.timeout_seconds);
    client.set_read_timeout(cfg_.timeout_seconds);
    httplib::Headers headers;
    if (!cfg_.api_key_env.empty()) {
      const char* key = std::getenv(cfg_.api_key_env.c_str());
      if (!key) throw Error(ErrorCode::backend_unavailable, "environment variable " + cfg_.api_key_env + " is not set");
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
    nlohmann::json body = {{"prompt", std::string(prompt)}, {"max_tokens", cfg_.max_tokens}};
    auto res = client.Post(endpoint_.path, headers, body.dump(), "application/json");
    if (!res) {
      throw Error(ErrorCode::backend_unavailable, "request to " + cfg_.endpoint + " failed: " + httplib::to_string(res.error()));
    }
    if (res->status != 200) {
      throw Error(ErrorCode::backend_unavailable, "backend answered HTTP " + std::to_string(res->status));
    }
    try {
      auto reply = nlohmann::json::parse(res->body);
      return reply.at("text").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::backend_unavailable, std::string("reply is not {\"text\": ...}: ") + e.what());
    }
  }

  std::string name() const override { return "http"; }

 private:
  HttpBackendConfig cfg_;
  ParsedEndpoint endpoint_;
};

}  // namespace trajguard
