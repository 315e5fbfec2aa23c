#pragma once

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "agentstepper/trajectory.hpp"

namespace agentstepper {

inline constexpr std::size_t kSummaryMaxChars = 240;
inline constexpr std::size_t kFallbackExcerptChars = 160;

enum class SummaryKind { llm_query, llm_response, tool_invocation, tool_result, diff_message };
enum class SummaryOrigin { llm, fallback };

[[nodiscard]] std::string_view to_string(SummaryKind kind);
[[nodiscard]] std::string_view to_string(SummaryOrigin origin);
[[nodiscard]] std::optional<SummaryKind> summary_kind_for(EventKind kind);

struct SummaryRequest {
  SummaryKind kind = SummaryKind::llm_query;
  std::string current;                  // rendered event text, or diff text
  std::optional<std::string> previous;  // preceding event of the same kind
  // Extra structure the fallback uses; both optional.
  std::optional<std::string> tool_name;
  std::vector<std::string> argument_keys;
  std::int64_t files_changed = 0;  // diff_message only
};

struct SummaryResult {
  std::string text;
  SummaryOrigin origin = SummaryOrigin::fallback;
};

// Canonical text rendering of an event body: strings as-is, structured values
// as indented JSON with sorted keys. Tool invocations render as
// `name(<args>)`; tool results are prefixed with the invoked tool's name when
// known.
[[nodiscard]] std::string render_event_for_summary(
    const Event& event, const std::optional<std::string>& invoked_tool = std::nullopt);

// Builds the request for `event`; `previous` is the preceding event of the
// same kind, if any. The invoked tools name the tool_invocation a tool_result
// answers.
[[nodiscard]] SummaryRequest make_summary_request(
    const Event& event, const Event* previous,
    const std::optional<std::string>& invoked_tool = std::nullopt,
    const std::optional<std::string>& previous_invoked_tool = std::nullopt);

// Forces text into a valid summary: first sentence, one line, collapsed
// whitespace, at most kSummaryMaxChars code points (ellipsis when cut).
[[nodiscard]] std::string normalize_summary(std::string_view text, bool first_sentence_only);

// Deterministic, offline summary.
[[nodiscard]] std::string fallback_summary(const SummaryRequest& request);

// The prompt sent to an LLM backend for this request.
[[nodiscard]] std::string build_summary_prompt(const SummaryRequest& request);

class SummaryBackend {
 public:
  virtual ~SummaryBackend() = default;
  // Returns the raw completion text; throws on any failure.
  virtual std::string complete(const std::string& prompt) = 0;
};

struct LlmBackendConfig {
  std::string endpoint;  // e.g. http://localhost:11434/v1/chat/completions
  std::string model;
  std::string api_key;   // sent as a bearer token when non-empty
  std::chrono::milliseconds timeout{20000};
};

// Chat-completion style HTTP backend: one user message, temperature 0.
[[nodiscard]] std::unique_ptr<SummaryBackend> make_llm_backend(LlmBackendConfig config);

struct SummarizerConfig {
  enum class Mode { fallback, llm };
  Mode mode = Mode::fallback;
  LlmBackendConfig llm;
  int retries = 1;
};

class Summarizer {
 public:
  Summarizer() = default;
  explicit Summarizer(std::unique_ptr<SummaryBackend> backend, int retries = 1);

  [[nodiscard]] static Summarizer from_config(const SummarizerConfig& config);

  // Total: never throws, always returns a valid summary.
  [[nodiscard]] SummaryResult summarize(const SummaryRequest& request) const;

 private:
  std::shared_ptr<SummaryBackend> backend_;
  int retries_ = 1;
};

// Fixed-size worker pool for summary jobs.
class SummaryPool {
 public:
  explicit SummaryPool(std::size_t workers);
  ~SummaryPool();
  SummaryPool(const SummaryPool&) = delete;
  SummaryPool& operator=(const SummaryPool&) = delete;

  void submit(std::function<void()> job);
  // Blocks until the queue is empty and no job is running.
  void wait_idle();
  void stop();

 private:
  void work();

  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable idle_cv_;
  std::deque<std::function<void()>> queue_;
  std::size_t running_ = 0;
  bool stopping_ = false;
  std::vector<std::thread> threads_;
};

}  // namespace agentstepper
