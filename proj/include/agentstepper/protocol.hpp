#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "agentstepper/trajectory.hpp"

namespace agentstepper {

inline constexpr std::int64_t kProtocolVersion = 1;

// One wire-protocol message. Encoded as a single JSON text document per
// transport message.
struct Envelope {
  std::int64_t v = kProtocolVersion;
  std::string type;
  std::string session;
  std::string run_id;
  std::int64_t seq = 0;
  Value payload = Value::object();

  bool operator==(const Envelope&) const = default;
};

namespace msg {
// agent -> server
inline constexpr std::string_view hello_agent = "hello_agent";
inline constexpr std::string_view event_begin = "event_begin";
inline constexpr std::string_view event_end = "event_end";
inline constexpr std::string_view commit_request = "commit_request";
inline constexpr std::string_view debug_message = "debug_message";
inline constexpr std::string_view goodbye = "goodbye";
// server -> agent
inline constexpr std::string_view hello_ack = "hello_ack";
inline constexpr std::string_view resume = "resume";
inline constexpr std::string_view commit_ack = "commit_ack";
inline constexpr std::string_view fatal = "fatal";
// ui -> server
inline constexpr std::string_view subscribe = "subscribe";
inline constexpr std::string_view control = "control";
inline constexpr std::string_view edit = "edit";
inline constexpr std::string_view import_run = "import_run";
inline constexpr std::string_view list_runs = "list_runs";
// server -> ui
inline constexpr std::string_view run_list = "run_list";
inline constexpr std::string_view event_appended = "event_appended";
inline constexpr std::string_view event_updated = "event_updated";
inline constexpr std::string_view summary_ready = "summary_ready";
inline constexpr std::string_view commit_appended = "commit_appended";
inline constexpr std::string_view state_changed = "state_changed";
inline constexpr std::string_view error = "error";
}  // namespace msg

enum class Direction { agent_to_server, server_to_agent, ui_to_server, server_to_ui };

// Direction of a catalog message type, or nullopt for an unknown type.
[[nodiscard]] std::optional<Direction> direction_of(std::string_view type);

[[nodiscard]] std::string encode(const Envelope& envelope);
// Throws ProtocolError ("unknown-type", "missing-field", "malformed") or
// VersionError. Never crashes on arbitrary input.
[[nodiscard]] Envelope decode(std::string_view frame);

enum class ResumeAction { continue_, step };

[[nodiscard]] std::string_view to_string(ResumeAction action);

struct ResumeDecision {
  ResumeAction action = ResumeAction::continue_;
  bool edited = false;
  std::optional<Value> body;  // present iff edited

  [[nodiscard]] static ResumeDecision unedited(ResumeAction action) { return {action, false, {}}; }
  [[nodiscard]] static ResumeDecision with_edit(ResumeAction action, Value body) {
    return {action, true, std::move(body)};
  }

  bool operator==(const ResumeDecision&) const = default;
};

[[nodiscard]] Value to_json(const ResumeDecision& decision);
[[nodiscard]] ResumeDecision resume_from_json(const Value& json);

// The two event kinds that open an event on the wire. event_end carries the
// kind of the begin it closes.
[[nodiscard]] std::optional<EventKind> wire_event_kind(std::string_view text);
// llm_query -> llm_response, tool_invocation -> tool_result.
[[nodiscard]] EventKind closing_kind(EventKind begin_kind);

// Per-connection ordering rules for agent messages.
class ProtocolState {
 public:
  struct Verdict {
    bool accepted = true;
    std::string reason;  // not_handshaken, unmatched_end, nested_begin, ...

    explicit operator bool() const { return accepted; }
  };

  // Checks one agent->server message and, if accepted, advances the state.
  // `event_kind` is the payload's event_kind for event_begin / event_end.
  Verdict accept(std::string_view type, std::optional<EventKind> event_kind = std::nullopt);

  [[nodiscard]] bool handshaken() const { return handshaken_; }
  [[nodiscard]] std::optional<EventKind> outstanding_begin() const { return outstanding_; }
  [[nodiscard]] bool finished() const { return finished_; }

 private:
  bool handshaken_ = false;
  bool finished_ = false;
  std::optional<EventKind> outstanding_;
};

}  // namespace agentstepper
