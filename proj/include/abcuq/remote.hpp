#pragma once

// HTTP-backed providers. Kept apart from the offline headers because
// cpp-httplib is heavy to compile.

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <memory>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "abcuq/chat.hpp"
#include "abcuq/embed.hpp"
#include "abcuq/error.hpp"

namespace abcuq {

struct HttpTarget {
  std::string scheme_host_port;  // e.g. "http://127.0.0.1:8080"
  std::string path;              // e.g. "/v1/embeddings"
};

inline HttpTarget parse_http_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  require(scheme_end != std::string::npos, ErrorKind::Config, "endpoint '" + url + "' lacks a scheme");
  const auto scheme = url.substr(0, scheme_end);
  require(scheme == "http" || scheme == "https", ErrorKind::Config,
          "endpoint scheme must be http or https: '" + url + "'");
  const auto path_start = url.find('/', scheme_end + 3);
  HttpTarget t;
  if (path_start == std::string::npos) {
    t.scheme_host_port = url;
    t.path = "/";
  } else {
    t.scheme_host_port = url.substr(0, path_start);
    t.path = url.substr(path_start);
  }
  require(t.scheme_host_port.size() > scheme_end + 3, ErrorKind::Config,
          "endpoint '" + url + "' lacks a host");
  return t;
}

/// POSTs JSON and parses a JSON response. Connection failures, 429 and 5xx are
/// retried up to `max_retries` times with exponential backoff; other statuses fail at once.
class JsonHttpClient {
 public:
  JsonHttpClient(const std::string& url, std::chrono::milliseconds timeout, int max_retries,
                 std::chrono::milliseconds backoff, std::string api_key_env)
      : target_(parse_http_url(url)),
        timeout_(timeout),
        max_retries_(max_retries),
        backoff_(backoff),
        api_key_env_(std::move(api_key_env)) {
    require(max_retries >= 0, ErrorKind::Config, "max_retries must be >= 0");
    if (target_.scheme_host_port.rfind("https://", 0) == 0) {
      const char* key = std::getenv(api_key_env_.c_str());
      require(key != nullptr && *key != '\0', ErrorKind::Config,
              "environment variable " + api_key_env_ + " is not set (required for " +
                  target_.scheme_host_port + ")");
    }
  }

  nlohmann::json post(const nlohmann::json& body) const {
    const std::string payload = body.dump();
    httplib::Headers headers;
    if (const char* key = std::getenv(api_key_env_.c_str()); key != nullptr && *key != '\0')
      headers.emplace("Authorization", std::string("Bearer ") + key);

    std::string last_error;
    for (int attempt = 0; attempt <= max_retries_; ++attempt) {
      if (attempt > 0 && backoff_.count() > 0)
        std::this_thread::sleep_for(backoff_ * (1 << std::min(attempt - 1, 6)));
      httplib::Client client(target_.scheme_host_port);
      const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
      const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - secs);
      client.set_connection_timeout(secs.count(), usecs.count());
      client.set_read_timeout(secs.count(), usecs.count());
      client.set_write_timeout(secs.count(), usecs.count());
      requests_.fetch_add(1, std::memory_order_relaxed);
      auto res = client.Post(target_.path, headers, payload, "application/json");
      if (!res) {
        last_error = "request to " + target_.scheme_host_port + target_.path +
                     " failed: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status == 429 || res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status) + " from " + target_.path;
        continue;
      }
      require(res->status >= 200 && res->status < 300, ErrorKind::Transport,
              "HTTP " + std::to_string(res->status) + " from " + target_.path + ": " +
                  res->body.substr(0, 200));
      try {
        return nlohmann::json::parse(res->body);
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Transport, std::string("malformed JSON response: ") + e.what());
      }
    }
    throw Error(ErrorKind::Transport,
                last_error + " (gave up after " + std::to_string(max_retries_ + 1) + " attempts)");
  }

  long requests_sent() const { return requests_.load(std::memory_order_relaxed); }

 private:
  HttpTarget target_;
  std::chrono::milliseconds timeout_;
  int max_retries_;
  std::chrono::milliseconds backoff_;
  std::string api_key_env_;
  mutable std::atomic<long> requests_{0};
};

/// Embeddings endpoint: POST {"model", "input"}; accepts either the common
/// {"data":[{"embedding":[...]}]} envelope, {"embedding":[...]}, or a bare array.
class RemoteHttpEmbedder final : public Embedder {
 public:
  explicit RemoteHttpEmbedder(const EmbedderConfig& cfg)
      : model_((cfg.validate(), *cfg.model_name)),
        dim_(cfg.dim),
        client_(*cfg.endpoint, cfg.timeout, cfg.max_retries, cfg.retry_backoff, cfg.api_key_env) {
    require(cfg.kind == EmbedderKind::RemoteHttp, ErrorKind::Config, "not a remote embedder config");
  }

  std::size_t dim() const override { return dim_; }
  std::string model_name() const override { return model_; }
  long requests_sent() const { return client_.requests_sent(); }

  static std::vector<double> extract_vector(const nlohmann::json& j) {
    const nlohmann::json* arr = nullptr;
    if (j.is_array()) {
      arr = &j;
    } else if (j.contains("data") && j["data"].is_array() && !j["data"].empty() &&
               j["data"][0].contains("embedding")) {
      arr = &j["data"][0]["embedding"];
    } else if (j.contains("embedding")) {
      arr = &j["embedding"];
    }
    require(arr != nullptr && arr->is_array(), ErrorKind::Transport,
            "embedding response has no float array");
    std::vector<double> out;
    out.reserve(arr->size());
    for (const auto& v : *arr) {
      require(v.is_number(), ErrorKind::Transport, "embedding response contains a non-number");
      out.push_back(v.get<double>());
    }
    return out;
  }

 private:
  EmbeddingVector do_embed(std::string_view text) const override {
    const auto response = client_.post({{"model", model_}, {"input", std::string(text)}});
    return EmbeddingVector(extract_vector(response));
  }

  std::string model_;
  std::size_t dim_;
  JsonHttpClient client_;
};

/// Chat-completions endpoint: one user turn; the first choice's content is
/// returned trimmed.
class RemoteChatBackend final : public ChatBackend {
 public:
  explicit RemoteChatBackend(const ChatEndpointConfig& cfg)
      : model_(cfg.model_name),
        client_(cfg.endpoint, cfg.timeout, cfg.max_retries, cfg.retry_backoff, cfg.api_key_env) {
    require(!cfg.model_name.empty(), ErrorKind::Config, "chat endpoint needs a model name");
  }

  static nlohmann::json request_body(const std::string& model, const ChatRequest& request) {
    nlohmann::json body = {
        {"model", model},
        {"messages", nlohmann::json::array({{{"role", "user"}, {"content", request.prompt}}})},
        {"temperature", request.temperature},
        {"max_tokens", request.max_tokens},
    };
    if (request.top_logprobs) {
      body["logprobs"] = true;
      body["top_logprobs"] = *request.top_logprobs;
    }
    if (request.seed) body["seed"] = *request.seed;
    return body;
  }

  static ChatReply parse_response(const nlohmann::json& j) {
    require(j.contains("choices") && j["choices"].is_array() && !j["choices"].empty(),
            ErrorKind::Transport, "chat response has no choices");
    const auto& choice = j["choices"][0];
    ChatReply reply;
    if (choice.contains("message") && choice["message"].contains("content") &&
        choice["message"]["content"].is_string()) {
      reply.text = trim(choice["message"]["content"].get<std::string>());
    } else if (choice.contains("text") && choice["text"].is_string()) {
      reply.text = trim(choice["text"].get<std::string>());
    }
    if (choice.contains("logprobs") && choice["logprobs"].is_object() &&
        choice["logprobs"].contains("content") && choice["logprobs"]["content"].is_array() &&
        !choice["logprobs"]["content"].empty()) {
      const auto& first = choice["logprobs"]["content"][0];
      if (first.contains("top_logprobs"))
        for (const auto& entry : first["top_logprobs"])
          reply.first_token_top_logprobs.push_back(
              {entry.at("token").get<std::string>(), entry.at("logprob").get<double>()});
      else if (first.contains("token") && first.contains("logprob"))
        reply.first_token_top_logprobs.push_back(
            {first["token"].get<std::string>(), first["logprob"].get<double>()});
    }
    return reply;
  }

  ChatReply complete(const ChatRequest& request) const override {
    return parse_response(client_.post(request_body(model_, request)));
  }

  long requests_sent() const { return client_.requests_sent(); }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  std::string model_;
  JsonHttpClient client_;
};

/// Builds the configured embedder, wrapped in a cache when enabled.
inline std::shared_ptr<const Embedder> make_embedder(const EmbedderConfig& cfg) {
  cfg.validate();
  std::shared_ptr<const Embedder> base;
  if (cfg.kind == EmbedderKind::RemoteHttp)
    base = std::make_shared<RemoteHttpEmbedder>(cfg);
  else
    base = std::make_shared<HashedBagOfWordsEmbedder>(cfg.dim);
  if (cfg.cache_enabled) return std::make_shared<CachingEmbedder>(std::move(base));
  return base;
}

}  // namespace abcuq
