#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "abcuq/embed.hpp"
#include "abcuq/error.hpp"

namespace abcuq {

struct ChatEndpointConfig {
  std::string endpoint;
  std::string model_name;
  std::chrono::milliseconds timeout{60000};
  int max_retries = 3;
  std::chrono::milliseconds retry_backoff{250};
  std::string api_key_env = kDefaultApiKeyEnv;
};

struct ChatRequest {
  std::string case_id;  // lets replay backends key responses; never sent over the wire
  std::string prompt;
  double temperature = 0.2;
  int max_tokens = 256;
  std::optional<int> top_logprobs;  // request first-token log-probabilities
  std::optional<std::uint64_t> seed;
};

struct TokenLogprob {
  std::string token;
  double logprob = 0.0;
};

struct ChatReply {
  std::string text;
  std::vector<TokenLogprob> first_token_top_logprobs;
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual ChatReply complete(const ChatRequest& request) const = 0;
};

/// Replays recorded model outputs keyed by case id. Each line of the transcript
/// file is {"id": ..., "text": ..., "top_logprobs": {"1": -0.1, ...}} with
/// `top_logprobs` optional.
class TranscriptChatBackend final : public ChatBackend {
 public:
  explicit TranscriptChatBackend(std::map<std::string, ChatReply> replies)
      : replies_(std::move(replies)) {}

  static TranscriptChatBackend load(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(in.good(), ErrorKind::Io, "cannot open transcript " + path.string());
    std::map<std::string, ChatReply> replies;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Load, "transcript line " + std::to_string(lineno) + ": " + e.what());
      }
      require(j.contains("id") && j.contains("text"), ErrorKind::Load,
              "transcript line " + std::to_string(lineno) + " needs fields id and text");
      ChatReply reply;
      reply.text = j.at("text").get<std::string>();
      if (j.contains("top_logprobs"))
        for (const auto& [token, lp] : j.at("top_logprobs").items())
          reply.first_token_top_logprobs.push_back({token, lp.get<double>()});
      const auto id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
      require(replies.emplace(id, std::move(reply)).second, ErrorKind::Load,
              "duplicate transcript id '" + id + "'");
    }
    return TranscriptChatBackend(std::move(replies));
  }

  ChatReply complete(const ChatRequest& request) const override {
    auto it = replies_.find(request.case_id);
    require(it != replies_.end(), ErrorKind::Transport,
            "transcript has no reply for case '" + request.case_id + "'");
    return it->second;
  }

 private:
  std::map<std::string, ChatReply> replies_;
};

}  // namespace abcuq
