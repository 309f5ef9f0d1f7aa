// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstdlib>
#include <map>
#include <memory>
#include <regex>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "ragbench/common.hpp"
#include "ragbench/encoder.hpp"  // Endpoint

namespace ragbench {

struct GenerationConfig {
  std::string preset_name = "default";
  std::string system_prompt;
  double temperature = 0.7;
  double top_p = 1.0;
  int top_k = 50;
  int max_tokens = 1024;

  void validate() const {
    if (temperature < 0) throw Error("temperature must be >= 0");
    if (!(top_p > 0 && top_p <= 1)) throw Error("top_p must be in (0, 1]");
    if (top_k < 1) throw Error("top_k must be >= 1");
    if (max_tokens < 1) throw Error("max_tokens must be >= 1");
  }
};

namespace presets {

// Low temperature, wide top_k: long answers grounded in the supplied context.
inline GenerationConfig detailed() {
  return {"detailed",
          "You are a policy analyst. Answer the question in detail using only the provided document context. "
          "Explain the relevant provisions, cover the points of view they imply, and stay grounded in the text.",
          0.2, 0.95, 40, 1024};
}

// High temperature, narrow nucleus: short readable answers.
inline GenerationConfig concise() {
  return {"concise",
          "You are a policy analyst. Answer the question briefly and plainly in a few sentences, "
          "using only the provided document context.",
          0.9, 0.6, 20, 1024};
}

inline GenerationConfig by_name(std::string_view name) {
  if (name == "detailed") return detailed();
  if (name == "concise") return concise();
  throw Error("unknown generation preset: " + std::string(name));
}

}  // namespace presets

struct Message {
  std::string role;  // system | user | assistant
  std::string content;

  bool operator==(const Message&) const = default;
};

struct ChatExchange {
  std::vector<Message> messages;
  std::string response_text;
  long long latency_ms = 0;
  std::string backend_id;
};

inline void validate_messages(const std::vector<Message>& messages) {
  if (messages.empty()) throw Error("chat: no messages");
  for (const auto& m : messages)
    if (m.role != "system" && m.role != "user" && m.role != "assistant") throw Error("chat: invalid role '" + m.role + "'");
  if (messages.back().role != "user") throw Error("chat: final message must have role 'user'");
}

enum class GatewayFailure { Timeout, Status, Malformed, Network };

inline const char* to_string(GatewayFailure f) {
  switch (f) {
    case GatewayFailure::Timeout: return "timeout";
    case GatewayFailure::Status: return "backend error";
    case GatewayFailure::Malformed: return "malformed response";
    case GatewayFailure::Network: return "network error";
  }
  return "unknown";
}

class GatewayError : public Error {
 public:
  GatewayError(GatewayFailure kind, const std::string& detail, int status = 0)
      : Error(std::string(to_string(kind)) + ": " + detail), kind_(kind), status_(status) {}
  GatewayFailure kind() const { return kind_; }
  int status() const { return status_; }

 private:
  GatewayFailure kind_;
  int status_;
};

/// A chat-completion backend. Implementations must be safe to call from
/// several threads at once.
class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual ChatExchange chat(const std::vector<Message>& messages, const GenerationConfig& cfg) = 0;
  virtual std::string id() const = 0;
};

/// Deterministic in-process backend.
///   echo       - the last user message, prefixed with "(<preset>) " when a
///                named preset other than "default" is active
///   cite-first - "See [<id>]." where <id> is the first "[id]" line of the
///                last user message
///   fixture    - first rule whose `match` is a substring of the last user
///                message; falls back to echo
class MockBackend : public ChatBackend {
 public:
  enum class Mode { Echo, CiteFirst, Fixture };
  struct Rule {
    std::string match;
    std::string response;
  };

  explicit MockBackend(Mode mode = Mode::Echo, std::vector<Rule> rules = {}) : mode_(mode), rules_(std::move(rules)) {}

  static std::vector<Rule> load_rules(const std::string& path) {
    std::vector<Rule> rules;
    jsonl::for_each(path, [&](const json& r, std::size_t) {
      rules.push_back({require_string(r, "match"), require_string(r, "response")});
    });
    return rules;
  }

  ChatExchange chat(const std::vector<Message>& messages, const GenerationConfig& cfg) override {
    validate_messages(messages);
    const std::string& last = messages.back().content;
    ChatExchange ex{messages, {}, 0, id()};
    switch (mode_) {
      case Mode::Echo:
        ex.response_text = echo(last, cfg);
        break;
      case Mode::CiteFirst: {
        static const std::regex first_id(R"((?:^|\n)\[([^\]\n]+)\])");
        std::smatch m;
        ex.response_text = std::regex_search(last, m, first_id) ? "See [" + m[1].str() + "]." : "No sources.";
        break;
      }
      case Mode::Fixture: {
        ex.response_text = echo(last, cfg);
        for (const auto& r : rules_)
          if (last.find(r.match) != std::string::npos) {
            ex.response_text = r.response;
            break;
          }
        break;
      }
    }
    return ex;
  }

  std::string id() const override {
    switch (mode_) {
      case Mode::Echo: return "mock:echo";
      case Mode::CiteFirst: return "mock:cite-first";
      case Mode::Fixture: return "mock:fixture";
    }
    return "mock";
  }

 private:
  static std::string echo(const std::string& text, const GenerationConfig& cfg) {
    if (cfg.preset_name.empty() || cfg.preset_name == "default") return text;
    return "(" + cfg.preset_name + ") " + text;
  }

  Mode mode_;
  std::vector<Rule> rules_;
};

struct HttpBackendOptions {
  std::string endpoint;  // http://host:port[/path]; path defaults to /v1/chat/completions
  std::string api_key;
  std::string model = "default";
  int timeout_ms = 60000;
  int retries = 2;  // extra attempts after a timeout, network failure or 5xx
  int retry_backoff_ms = 100;

  /// Reads LLM_ENDPOINT, LLM_API_KEY and LLM_TIMEOUT_MS over the given defaults.
  static HttpBackendOptions from_env() { return from_env(HttpBackendOptions{}); }
  static HttpBackendOptions from_env(HttpBackendOptions base) {
    if (const char* e = std::getenv("LLM_ENDPOINT"); e && *e) base.endpoint = e;
    if (const char* k = std::getenv("LLM_API_KEY"); k && *k) base.api_key = k;
    if (const char* t = std::getenv("LLM_TIMEOUT_MS"); t && *t) base.timeout_ms = std::atoi(t);
    return base;
  }
};

/// Builds the chat-completions request body. Field set and order are
/// documented in docs/wire-formats.md.
inline json chat_request_body(const std::vector<Message>& messages, const GenerationConfig& cfg,
                              const std::string& model) {
  json msgs = json::array();
  if (!cfg.system_prompt.empty() && (messages.empty() || messages.front().role != "system"))
    msgs.push_back({{"role", "system"}, {"content", cfg.system_prompt}});
  for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
  return {{"model", model},        {"messages", msgs},   {"temperature", cfg.temperature},
          {"top_p", cfg.top_p},    {"top_k", cfg.top_k}, {"max_tokens", cfg.max_tokens}};
}

inline std::string parse_chat_response(const std::string& body) {
  try {
    auto j = json::parse(body);
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw GatewayError(GatewayFailure::Malformed, e.what());
  }
}

class HttpBackend : public ChatBackend {
 public:
  explicit HttpBackend(HttpBackendOptions opts) : opts_(std::move(opts)) {
    if (opts_.endpoint.empty()) throw Error("HTTP backend: no endpoint configured");
    ep_ = Endpoint::parse(opts_.endpoint, "/v1/chat/completions");
  }

  ChatExchange chat(const std::vector<Message>& messages, const GenerationConfig& cfg) override {
    validate_messages(messages);
    cfg.validate();
    const std::string body = chat_request_body(messages, cfg, opts_.model).dump();
    httplib::Headers headers;
    if (!opts_.api_key.empty()) headers.emplace("Authorization", "Bearer " + opts_.api_key);
    auto t0 = std::chrono::steady_clock::now();
    std::optional<GatewayError> last;
    for (int attempt = 0; attempt <= opts_.retries; ++attempt) {
      if (attempt > 0) std::this_thread::sleep_for(std::chrono::milliseconds(opts_.retry_backoff_ms * attempt));
      httplib::Client cli(ep_.base);
      cli.set_connection_timeout(std::chrono::milliseconds(opts_.timeout_ms));
      cli.set_read_timeout(std::chrono::milliseconds(opts_.timeout_ms));
      cli.set_write_timeout(std::chrono::milliseconds(opts_.timeout_ms));
      auto a0 = std::chrono::steady_clock::now();
      auto res = cli.Post(ep_.path, headers, body, "application/json");
      if (!res) {
        auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - a0);
        bool timed_out = res.error() == httplib::Error::ConnectionTimeout ||
                         (res.error() == httplib::Error::Read && elapsed.count() >= opts_.timeout_ms);
        last.emplace(timed_out ? GatewayFailure::Timeout : GatewayFailure::Network, httplib::to_string(res.error()));
        continue;
      }
      if (res->status >= 500) {
        last.emplace(GatewayFailure::Status, "status " + std::to_string(res->status), res->status);
        continue;
      }
      if (res->status != 200)
        throw GatewayError(GatewayFailure::Status, "status " + std::to_string(res->status), res->status);
      ChatExchange ex{messages, parse_chat_response(res->body), 0, id()};
      ex.latency_ms =
          std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
      return ex;
    }
    throw *last;
  }

  std::string id() const override { return "http:" + ep_.base + ep_.path; }

 private:
  HttpBackendOptions opts_;
  Endpoint ep_;
};

/// Resolves a backend locator: "mock", "mock:echo", "mock:cite-first",
/// "mock:fixture:<file>", or "http:<url>" / "http://...". An empty locator
/// falls back to LLM_ENDPOINT, then to the echo mock.
inline std::shared_ptr<ChatBackend> make_backend(const std::string& locator) {
  std::string loc = locator;
  if (loc.empty()) {
    auto opts = HttpBackendOptions::from_env();
    if (!opts.endpoint.empty()) return std::make_shared<HttpBackend>(opts);
    loc = "mock";
  }
  if (loc == "mock" || loc == "mock:echo") return std::make_shared<MockBackend>(MockBackend::Mode::Echo);
  if (loc == "mock:cite-first") return std::make_shared<MockBackend>(MockBackend::Mode::CiteFirst);
  if (loc.rfind("mock:fixture:", 0) == 0)
    return std::make_shared<MockBackend>(MockBackend::Mode::Fixture, MockBackend::load_rules(loc.substr(13)));
  if (loc.rfind("http:", 0) == 0 || loc.rfind("https:", 0) == 0) {
    auto opts = HttpBackendOptions::from_env();
    opts.endpoint = loc.rfind("http://", 0) == 0 || loc.rfind("https://", 0) == 0 ? loc : loc.substr(5);
    return std::make_shared<HttpBackend>(opts);
  }
  throw Error("unknown backend locator: " + locator);
}

}  // namespace ragbench
