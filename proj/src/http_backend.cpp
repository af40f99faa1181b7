#include "rappie/http_backend.hpp"

#include <chrono>
#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "rappie/errors.hpp"

namespace rappie {

using nlohmann::json;

HttpChatBackend::HttpChatBackend(Options opts) : opts_(std::move(opts)) {}

std::string HttpChatBackend::generate(const std::string& prompt, std::uint64_t seed) {
  count_call();
  const char* key = std::getenv(opts_.api_key_env.c_str());
  if (!key || !*key)
    throw BackendUnavailable("environment variable " + opts_.api_key_env + " is not set");

  json body{{"model", opts_.model},
            {"messages", json::array({json{{"role", "user"}, {"content", prompt}}})},
            {"temperature", opts_.decoding.temperature},
            {"max_tokens", opts_.decoding.max_new_tokens},
            {"seed", seed}};
  std::string payload = body.dump();

  httplib::Client client(opts_.host, opts_.port);
  client.set_connection_timeout(std::chrono::milliseconds(
      static_cast<int>(opts_.timeout_s * 1000)));
  client.set_read_timeout(std::chrono::milliseconds(static_cast<int>(opts_.timeout_s * 1000)));
  httplib::Headers headers{{"Authorization", std::string("Bearer ") + key}};

  std::string last_error;
  int delay_ms = opts_.backoff_initial_ms;
  for (int attempt = 0; attempt <= opts_.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
      delay_ms *= 2;
    }
    auto res = client.Post(opts_.path, headers, payload, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "status " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200)
      throw BackendUnavailable("backend " + name() + " returned status " +
                               std::to_string(res->status));
    json reply = json::parse(res->body, nullptr, false);
    if (reply.is_discarded())
      throw BackendUnavailable("backend " + name() + " returned unparseable JSON");
    try {
      return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception&) {
      throw BackendUnavailable("backend " + name() + " reply missing message content");
    }
  }
  throw BackendUnavailable("backend " + name() + " unavailable after " +
                           std::to_string(opts_.max_retries + 1) + " attempts (" + last_error +
                           ")");
}

}  // namespace rappie
