#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <stdexcept>

#include "agentstepper/summarizer.hpp"

namespace agentstepper {
namespace {

struct Endpoint {
  std::string base;  // scheme://host[:port]
  std::string path;
};

Endpoint split_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw std::invalid_argument("summarizer endpoint must be an http(s) URL: " + url);
  }
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) {
    return {url, "/"};
  }
  return {url.substr(0, path_start), url.substr(path_start)};
}

class ChatCompletionBackend final : public SummaryBackend {
 public:
  explicit ChatCompletionBackend(LlmBackendConfig config)
      : config_(std::move(config)), endpoint_(split_endpoint(config_.endpoint)) {}

  std::string complete(const std::string& prompt) override {
    httplib::Client client(endpoint_.base);
    const auto seconds = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout).count();
    client.set_connection_timeout(seconds, 0);
    client.set_read_timeout(seconds, 0);
    client.set_write_timeout(seconds, 0);

    httplib::Headers headers;
    if (!config_.api_key.empty()) {
      headers.emplace("Authorization", "Bearer " + config_.api_key);
    }
    Value request{{"model", config_.model},
                  {"temperature", 0},
                  {"messages", Value::array({Value{{"role", "user"}, {"content", prompt}}})}};

    auto response = client.Post(endpoint_.path, headers, request.dump(), "application/json");
    if (!response) {
      throw std::runtime_error("summary request failed: " + httplib::to_string(response.error()));
    }
    if (response->status != 200) {
      throw std::runtime_error("summary backend returned HTTP " + std::to_string(response->status));
    }
    auto body = Value::parse(response->body, nullptr, false);
    if (body.is_discarded()) {
      throw std::runtime_error("summary backend returned invalid JSON");
    }
    const auto content = body.value("/choices/0/message/content"_json_pointer, Value{});
    if (!content.is_string()) {
      throw std::runtime_error("summary backend response has no message content");
    }
    return content.get<std::string>();
  }

 private:
  LlmBackendConfig config_;
  Endpoint endpoint_;
};

}  // namespace

std::unique_ptr<SummaryBackend> make_llm_backend(LlmBackendConfig config) {
  return std::make_unique<ChatCompletionBackend>(std::move(config));
}

}  // namespace agentstepper
