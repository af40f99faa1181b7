#pragma once

#include <string>

#include "rappie/gateway.hpp"

namespace rappie {

// Minimal chat-completions client for a remote provider. The bearer token
// is read from the named environment variable; transient failures retry
// with exponential backoff before surfacing BackendUnavailable.
class HttpChatBackend : public ChatBackend {
 public:
  struct Options {
    std::string host;             // e.g. "api.example.com" or "localhost"
    int port = 80;
    std::string path = "/v1/chat/completions";
    std::string model = "default";
    std::string api_key_env = "RAPPIE_API_KEY";
    std::size_t max_prompt_tokens = 8192;
    DecodingParams decoding{};
    int max_retries = 3;
    int backoff_initial_ms = 250;
    double timeout_s = 30.0;
  };

  explicit HttpChatBackend(Options opts);

  std::string name() const override { return "http:" + opts_.model; }
  std::size_t max_prompt_tokens() const override { return opts_.max_prompt_tokens; }
  DecodingParams decoding() const override { return opts_.decoding; }
  std::string generate(const std::string& prompt, std::uint64_t seed) override;

 private:
  Options opts_;
};

}  // namespace rappie
