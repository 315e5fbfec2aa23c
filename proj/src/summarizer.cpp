#include "agentstepper/summarizer.hpp"

#include <spdlog/spdlog.h>

#include <cctype>

namespace agentstepper {
namespace {

bool is_continuation(char c) { return (static_cast<unsigned char>(c) & 0xC0) == 0x80; }

std::size_t code_points(std::string_view s) {
  std::size_t n = 0;
  for (char c : s) {
    n += is_continuation(c) ? 0 : 1;
  }
  return n;
}

// Byte offset just past the first `count` code points.
std::size_t prefix_bytes(std::string_view s, std::size_t count) {
  std::size_t seen = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!is_continuation(s[i])) {
      if (seen == count) {
        return i;
      }
      ++seen;
    }
  }
  return s.size();
}

std::string collapse_whitespace(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c)) != 0) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(c);
  }
  return out;
}

std::string clip(std::string_view text, std::size_t max_chars) {
  if (code_points(text) <= max_chars) {
    return std::string(text);
  }
  auto out = std::string(text.substr(0, prefix_bytes(text, max_chars - 3)));
  while (!out.empty() && out.back() == ' ') {
    out.pop_back();
  }
  return out + "...";
}

std::string excerpt(std::string_view text) {
  return clip(collapse_whitespace(text), kFallbackExcerptChars);
}

struct Delta {
  bool identical = false;
  std::string inserted;  // the part of `current` not shared with `previous`
};

// Strips the longest common prefix and suffix (on code point boundaries).
Delta text_delta(std::string_view current, std::string_view previous) {
  if (current == previous) {
    return {true, {}};
  }
  std::size_t prefix = 0;
  const std::size_t limit = std::min(current.size(), previous.size());
  while (prefix < limit && current[prefix] == previous[prefix]) {
    ++prefix;
  }
  while (prefix > 0 && prefix < current.size() && is_continuation(current[prefix])) {
    --prefix;
  }
  std::size_t suffix = 0;
  while (suffix < limit - prefix &&
         current[current.size() - 1 - suffix] == previous[previous.size() - 1 - suffix]) {
    ++suffix;
  }
  while (suffix > 0 && is_continuation(current[current.size() - suffix])) {
    --suffix;
  }
  return {false, std::string(current.substr(prefix, current.size() - prefix - suffix))};
}

std::string diff_content_lines(std::string_view diff) {
  std::string out;
  std::size_t start = 0;
  while (start < diff.size()) {
    auto nl = diff.find('\n', start);
    auto line = diff.substr(start, (nl == std::string_view::npos ? diff.size() : nl) - start);
    start = nl == std::string_view::npos ? diff.size() : nl + 1;
    if ((line.starts_with("+") && !line.starts_with("+++")) ||
        (line.starts_with("-") && !line.starts_with("---"))) {
      out.append(line);
      out.push_back('\n');
    }
    if (out.size() > 4 * kFallbackExcerptChars) {
      break;
    }
  }
  return out;
}

std::string join(const std::vector<std::string>& items, std::string_view sep) {
  std::string out;
  for (const auto& item : items) {
    if (!out.empty()) {
      out += sep;
    }
    out += item;
  }
  return out;
}

std::string_view lead_in(SummaryKind kind) {
  switch (kind) {
    case SummaryKind::llm_query:
      return "Sends prompt";
    case SummaryKind::llm_response:
      return "LLM responds";
    case SummaryKind::tool_invocation:
      return "Invokes tool";
    case SummaryKind::tool_result:
      return "Tool returns";
    case SummaryKind::diff_message:
      return "Changes";
  }
  return "";
}

std::string_view instruction(SummaryKind kind) {
  switch (kind) {
    case SummaryKind::llm_query:
      return "The following is a prompt that an LLM-based software development agent sends to its "
             "LLM. Summarize what the agent asks the LLM to do in exactly one sentence. Ignore "
             "boilerplate such as system instructions, tool documentation and formatting rules.";
    case SummaryKind::llm_response:
      return "The following is a response an LLM returned to a software development agent. "
             "Summarize in exactly one sentence what the LLM decided or proposed. Ignore "
             "boilerplate and formatting.";
    case SummaryKind::tool_invocation:
      return "The following is a tool call a software development agent is about to execute. "
             "Summarize in exactly one sentence which tool is invoked and what it is meant to do "
             "with its arguments.";
    case SummaryKind::tool_result:
      return "The following is the output a tool returned to a software development agent. "
             "Summarize in exactly one sentence what the output shows, such as success, failure "
             "or key findings. Ignore repetitive log lines.";
    case SummaryKind::diff_message:
      return "The following is a diff of changes a software development agent made to a code "
             "base. Write a concise one-line commit message describing the change.";
  }
  return "";
}

}  // namespace

std::string_view to_string(SummaryKind kind) {
  switch (kind) {
    case SummaryKind::llm_query:
      return "llm_query";
    case SummaryKind::llm_response:
      return "llm_response";
    case SummaryKind::tool_invocation:
      return "tool_invocation";
    case SummaryKind::tool_result:
      return "tool_result";
    case SummaryKind::diff_message:
      return "diff_message";
  }
  return "";
}

std::string_view to_string(SummaryOrigin origin) {
  return origin == SummaryOrigin::llm ? "llm" : "fallback";
}

std::optional<SummaryKind> summary_kind_for(EventKind kind) {
  switch (kind) {
    case EventKind::llm_query:
      return SummaryKind::llm_query;
    case EventKind::llm_response:
      return SummaryKind::llm_response;
    case EventKind::tool_invocation:
      return SummaryKind::tool_invocation;
    case EventKind::tool_result:
      return SummaryKind::tool_result;
    case EventKind::debug_message:
      return std::nullopt;
  }
  return std::nullopt;
}

std::string render_event_for_summary(const Event& event, const std::optional<std::string>& invoked_tool) {
  auto render = [](const Value& v) { return v.is_string() ? v.get<std::string>() : v.dump(2); };
  switch (event.kind) {
    case EventKind::tool_invocation: {
      const auto& args = event.body.contains("args") ? event.body["args"] : Value{};
      return event.tool_name.value_or("") + "(" + (args.is_string() ? args.get<std::string>() : args.dump()) +
             ")";
    }
    case EventKind::tool_result:
      if (invoked_tool) {
        return *invoked_tool + " -> " + render(event.body);
      }
      return render(event.body);
    default:
      return render(event.body);
  }
}

SummaryRequest make_summary_request(const Event& event, const Event* previous,
                                    const std::optional<std::string>& invoked_tool,
                                    const std::optional<std::string>& previous_invoked_tool) {
  SummaryRequest request;
  request.kind = summary_kind_for(event.kind).value_or(SummaryKind::llm_query);
  request.current = render_event_for_summary(event, invoked_tool);
  if (previous != nullptr) {
    request.previous = render_event_for_summary(*previous, previous_invoked_tool);
  }
  if (event.kind == EventKind::tool_invocation) {
    request.tool_name = event.tool_name;
    if (event.body.contains("args") && event.body["args"].is_object()) {
      for (const auto& [key, _] : event.body["args"].items()) {
        request.argument_keys.push_back(key);
      }
    }
  }
  return request;
}

std::string normalize_summary(std::string_view text, bool first_sentence_only) {
  auto line = collapse_whitespace(text);
  if (first_sentence_only) {
    for (std::size_t i = 0; i + 1 < line.size(); ++i) {
      const char c = line[i];
      if ((c == '.' || c == '!' || c == '?') && line[i + 1] == ' ') {
        line.resize(i + 1);
        break;
      }
    }
  }
  return clip(line, kSummaryMaxChars);
}

std::string fallback_summary(const SummaryRequest& request) {
  const std::string kind_name(to_string(request.kind));
  std::string head(lead_in(request.kind));
  if (request.kind == SummaryKind::tool_invocation) {
    head += " " + request.tool_name.value_or("unknown");
    head += request.argument_keys.empty() ? " with no arguments"
                                          : " with " + join(request.argument_keys, ", ");
  } else if (request.kind == SummaryKind::diff_message) {
    head += " " + std::to_string(request.files_changed) + " file(s)";
  }

  std::string text;
  if (request.kind == SummaryKind::diff_message) {
    const auto lines = diff_content_lines(request.current);
    text = lines.empty() ? head + "." : head + ": " + excerpt(lines);
  } else if (!request.previous) {
    text = head + ": " + excerpt(request.current);
  } else {
    auto delta = text_delta(request.current, *request.previous);
    if (delta.identical) {
      return "Identical to previous " + kind_name + ".";
    }
    auto changed = excerpt(delta.inserted);
    text = changed.empty() ? head + ", removing text relative to the previous " + kind_name + "."
                           : head + ", changed from the previous " + kind_name + ": " + changed;
  }
  return normalize_summary(text, false);
}

std::string build_summary_prompt(const SummaryRequest& request) {
  std::string prompt(instruction(request.kind));
  if (request.previous && request.kind != SummaryKind::diff_message) {
    prompt +=
        " You are also given the previous message of the same type. Highlight only the "
        "differences between the two; if they are identical, say that it is unchanged.\n\n"
        "PREVIOUS:\n" +
        *request.previous + "\n\nCURRENT:\n" + request.current;
  } else {
    prompt += "\n\n" + request.current;
  }
  prompt += "\n\nAnswer with the single sentence only.";
  return prompt;
}

Summarizer::Summarizer(std::unique_ptr<SummaryBackend> backend, int retries)
    : backend_(std::move(backend)), retries_(retries) {}

Summarizer Summarizer::from_config(const SummarizerConfig& config) {
  if (config.mode == SummarizerConfig::Mode::llm && !config.llm.endpoint.empty()) {
    return Summarizer(make_llm_backend(config.llm), config.retries);
  }
  return Summarizer{};
}

SummaryResult Summarizer::summarize(const SummaryRequest& request) const {
  if (backend_) {
    const auto prompt = build_summary_prompt(request);
    for (int attempt = 0; attempt <= retries_; ++attempt) {
      try {
        auto text = normalize_summary(backend_->complete(prompt), true);
        if (!text.empty()) {
          return {std::move(text), SummaryOrigin::llm};
        }
      } catch (const std::exception& ex) {
        spdlog::warn("summary backend failed (attempt {}): {}", attempt + 1, ex.what());
      }
    }
  }
  try {
    return {fallback_summary(request), SummaryOrigin::fallback};
  } catch (const std::exception&) {
    return {std::string(lead_in(request.kind)) + ".", SummaryOrigin::fallback};
  }
}

SummaryPool::SummaryPool(std::size_t workers) {
  threads_.reserve(workers);
  for (std::size_t i = 0; i < workers; ++i) {
    threads_.emplace_back([this] { work(); });
  }
}

SummaryPool::~SummaryPool() { stop(); }

void SummaryPool::submit(std::function<void()> job) {
  {
    std::lock_guard lock(mu_);
    if (stopping_) {
      return;
    }
    queue_.push_back(std::move(job));
  }
  cv_.notify_one();
}

void SummaryPool::wait_idle() {
  std::unique_lock lock(mu_);
  idle_cv_.wait(lock, [this] { return queue_.empty() && running_ == 0; });
}

void SummaryPool::stop() {
  {
    std::lock_guard lock(mu_);
    if (stopping_ && threads_.empty()) {
      return;
    }
    stopping_ = true;
  }
  cv_.notify_all();
  for (auto& t : threads_) {
    if (t.joinable()) {
      t.join();
    }
  }
  threads_.clear();
}

void SummaryPool::work() {
  for (;;) {
    std::function<void()> job;
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
      if (queue_.empty()) {
        return;
      }
      job = std::move(queue_.front());
      queue_.pop_front();
      ++running_;
    }
    try {
      job();
    } catch (const std::exception& ex) {
      spdlog::error("summary job failed: {}", ex.what());
    }
    {
      std::lock_guard lock(mu_);
      --running_;
    }
    idle_cv_.notify_all();
  }
}

}  // namespace agentstepper
