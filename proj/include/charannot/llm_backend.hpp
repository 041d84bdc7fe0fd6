#pragma once

// Text-in/text-out completion backends: a scripted mock for offline runs and
// an OpenAI-compatible chat-completions client.

#include <chrono>
#include <cstdlib>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>

#include "charannot/core_model.hpp"
#include "charannot/errors.hpp"

namespace charannot {

// A completion that could not be obtained (transport, HTTP status, exhausted script).
class BackendError : public Error {
 public:
  using Error::Error;
};

struct BackendConfig {
  double temperature = 0.0;
  int max_retries = 2;
  std::chrono::milliseconds timeout{120000};
  std::chrono::milliseconds initial_backoff{1000};
};

class CompletionBackend {
 public:
  virtual ~CompletionBackend() = default;

  virtual std::string complete(const std::string& prompt) = 0;
  virtual std::string id() const = 0;
  virtual std::size_t call_count() const = 0;
};

// Fixed instruction preamble sent as the system message.
inline constexpr std::string_view kSystemPreamble =
    "You annotate characters in literary texts. Answer exactly in the requested format.";

// Replays canned responses. An entry with a `match` substring answers every
// prompt containing it; entries without one are consumed in order; a "*"
// entry answers anything. Substring entries win over positional ones, which
// win over the wildcard.
class ScriptedMock : public CompletionBackend {
 public:
  struct Entry {
    std::optional<std::string> match;
    std::string response;
  };

  ScriptedMock() = default;
  explicit ScriptedMock(std::vector<Entry> script) : script_(std::move(script)) {}

  // [{"match": "...", "response": "..."}, {"response": "..."}, ...]
  static ScriptedMock from_json(std::string_view bytes) { return ScriptedMock(parse_script(bytes)); }

  static std::vector<Entry> parse_script(std::string_view bytes) {
    auto doc = detail::parse_json(bytes, "mock script");
    if (!doc.is_array()) throw SchemaError("mock script must be a JSON array");
    std::vector<Entry> entries;
    for (std::size_t i = 0; i < doc.size(); ++i) {
      const auto& e = doc[i];
      if (!e.is_object() || !e.contains("response") || !e["response"].is_string()) {
        throw SchemaError("mock script entry " + std::to_string(i) + " needs a string \"response\"");
      }
      Entry entry;
      entry.response = e["response"].get<std::string>();
      if (e.contains("match")) {
        if (!e["match"].is_string()) throw SchemaError("mock script entry " + std::to_string(i) + ": \"match\" must be a string");
        entry.match = e["match"].get<std::string>();
      }
      entries.push_back(std::move(entry));
    }
    return entries;
  }

  void add(Entry e) {
    std::lock_guard lock(mu_);
    script_.push_back(std::move(e));
  }

  std::string complete(const std::string& prompt) override {
    std::lock_guard lock(mu_);
    ++calls_;
    const Entry* hit = nullptr;
    for (const auto& e : script_) {
      if (e.match && *e.match != "*" && prompt.find(*e.match) != std::string::npos) {
        hit = &e;
        break;
      }
    }
    if (hit == nullptr) {
      while (cursor_ < script_.size() && script_[cursor_].match) ++cursor_;
      if (cursor_ < script_.size()) hit = &script_[cursor_++];
    }
    if (hit == nullptr) {
      for (const auto& e : script_) {
        if (e.match && *e.match == "*") {
          hit = &e;
          break;
        }
      }
    }
    if (hit == nullptr) {
      bool any_positional = false;
      for (const auto& e : script_) any_positional = any_positional || !e.match;
      transcript_.emplace_back(prompt, std::nullopt);
      throw BackendError(any_positional ? "mock script exhausted after " + std::to_string(calls_ - 1) + " calls"
                                        : "mock script has no entry matching the prompt");
    }
    transcript_.emplace_back(prompt, hit->response);
    return hit->response;
  }

  std::string id() const override { return "mock"; }

  std::size_t call_count() const override {
    std::lock_guard lock(mu_);
    return calls_;
  }

  // (prompt, response) per call; a failed call has no response.
  std::vector<std::pair<std::string, std::optional<std::string>>> transcript() const {
    std::lock_guard lock(mu_);
    return transcript_;
  }

 private:
  mutable std::mutex mu_;
  std::vector<Entry> script_;
  std::size_t cursor_ = 0;
  std::size_t calls_ = 0;
  std::vector<std::pair<std::string, std::optional<std::string>>> transcript_;
};

namespace detail {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;    // path prefix without trailing '/'
};

inline Endpoint split_base_url(std::string_view url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string_view::npos) throw InvalidArgument("base URL needs a scheme: '" + std::string(url) + "'");
  auto path_start = url.find('/', scheme_end + 3);
  Endpoint ep;
  ep.origin = std::string(url.substr(0, path_start));
  if (path_start != std::string_view::npos) ep.path = std::string(url.substr(path_start));
  while (!ep.path.empty() && ep.path.back() == '/') ep.path.pop_back();
  return ep;
}

// Appends `resource` ("chat/completions", "embeddings") under /v1 unless the
// base URL already ends with it.
inline std::string api_path(const Endpoint& ep, std::string_view resource) {
  std::string p = ep.path;
  if (!(p.size() >= 3 && p.compare(p.size() - 3, 3, "/v1") == 0)) p += "/v1";
  return p + "/" + std::string(resource);
}

inline std::string env_or(const char* name, std::string fallback) {
  const char* v = std::getenv(name);
  return v != nullptr && *v != '\0' ? std::string(v) : std::move(fallback);
}

inline bool retryable_status(int status) { return status == 408 || status == 429 || status >= 500; }

// POSTs JSON with retries on transport failures, 408, 429 and 5xx.
inline std::string post_json_with_retries(const Endpoint& ep, const std::string& path, const std::string& api_key,
                                          const std::string& body, const BackendConfig& config) {
  httplib::Client client(ep.origin);
  auto secs = std::chrono::duration_cast<std::chrono::seconds>(config.timeout);
  auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());
  httplib::Headers headers;
  if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);

  std::string last_error;
  auto backoff = config.initial_backoff;
  for (int attempt = 0; attempt <= config.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
    auto res = client.Post(path, headers, body, "application/json");
    if (!res) {
      last_error = "request to " + ep.origin + path + " failed: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 200 && res->status < 300) return res->body;
    last_error = "HTTP " + std::to_string(res->status) + " from " + ep.origin + path + ": " + res->body;
    if (!retryable_status(res->status)) break;
  }
  throw BackendError(last_error);
}

}  // namespace detail

// OpenAI-compatible chat completions. Configured from LLM_API_KEY,
// LLM_BASE_URL (default https://api.openai.com) and LLM_MODEL (default gpt-4o).
class HttpChatBackend : public CompletionBackend {
 public:
  struct Options {
    std::string base_url;
    std::string model;
    std::string api_key;
    BackendConfig config;
  };

  explicit HttpChatBackend(Options opts) : opts_(std::move(opts)), endpoint_(detail::split_base_url(opts_.base_url)) {}

  static Options options_from_env(BackendConfig config = {}) {
    Options o;
    o.base_url = detail::env_or("LLM_BASE_URL", "https://api.openai.com");
    o.model = detail::env_or("LLM_MODEL", "gpt-4o");
    o.api_key = detail::env_or("LLM_API_KEY", "");
    o.config = config;
    return o;
  }

  static HttpChatBackend from_env(BackendConfig config = {}) { return HttpChatBackend(options_from_env(config)); }

  std::string complete(const std::string& prompt) override {
    if (prompt.empty()) throw InvalidArgument("prompt must not be empty");
    {
      std::lock_guard lock(mu_);
      ++calls_;
    }
    ordered_json req;
    req["model"] = opts_.model;
    req["temperature"] = opts_.config.temperature;
    req["messages"] = ordered_json::array({
        {{"role", "system"}, {"content", kSystemPreamble}},
        {{"role", "user"}, {"content", prompt}},
    });
    std::string body = detail::post_json_with_retries(endpoint_, detail::api_path(endpoint_, "chat/completions"),
                                                      opts_.api_key, detail::dump_json(req, -1), opts_.config);
    ordered_json doc;
    try {
      doc = detail::parse_json(body, "chat completion response");
    } catch (const ParseError& e) {
      throw BackendError(std::string("unparseable completion response: ") + e.what());
    }
    const ordered_json* content = nullptr;
    if (doc.contains("choices") && doc["choices"].is_array() && !doc["choices"].empty()) {
      const auto& choice = doc["choices"][0];
      if (choice.contains("message") && choice["message"].contains("content")) content = &choice["message"]["content"];
    }
    if (content == nullptr || !content->is_string()) throw BackendError("completion response has no choices[0].message.content");
    return content->get<std::string>();
  }

  std::string id() const override { return "http:" + opts_.model; }

  std::size_t call_count() const override {
    std::lock_guard lock(mu_);
    return calls_;
  }

 private:
  Options opts_;
  detail::Endpoint endpoint_;
  mutable std::mutex mu_;
  std::size_t calls_ = 0;
};

}  // namespace charannot
