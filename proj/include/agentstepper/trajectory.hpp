#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace agentstepper {

// Structured event payload: a tree of maps, sequences, strings, numbers,
// booleans and nulls, or a plain string. Object keys serialize sorted.
using Value = nlohmann::json;

using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;

[[nodiscard]] Timestamp now();
// RFC-3339 UTC with millisecond precision, e.g. 2026-10-18T09:15:02.041Z.
[[nodiscard]] std::string format_timestamp(Timestamp ts);
// Accepts RFC-3339 with an optional fraction and a Z or +hh:mm offset.
[[nodiscard]] std::optional<Timestamp> parse_timestamp(std::string_view text);

enum class RunMode { interactive, post_hoc };
enum class RunStatus { live, completed, aborted, imported };
enum class EventKind { llm_query, llm_response, tool_invocation, tool_result, debug_message };
enum class Phase { begin, end };

[[nodiscard]] std::string_view to_string(RunMode mode);
[[nodiscard]] std::string_view to_string(RunStatus status);
[[nodiscard]] std::string_view to_string(EventKind kind);
[[nodiscard]] std::string_view to_string(Phase phase);

[[nodiscard]] std::optional<RunMode> run_mode_from_string(std::string_view text);
[[nodiscard]] std::optional<RunStatus> run_status_from_string(std::string_view text);
[[nodiscard]] std::optional<EventKind> event_kind_from_string(std::string_view text);
[[nodiscard]] std::optional<Phase> phase_from_string(std::string_view text);

// llm_query and tool_invocation open an event; everything else closes one.
[[nodiscard]] constexpr Phase phase_of(EventKind kind) {
  return kind == EventKind::llm_query || kind == EventKind::tool_invocation ? Phase::begin
                                                                            : Phase::end;
}

struct CommitRecord {
  std::string commit_id;
  std::string message_summary;
  std::string message_description;
  std::int64_t triggering_event_id = 0;
  std::int64_t files_changed = 0;
  std::int64_t insertions = 0;
  std::int64_t deletions = 0;
  Timestamp timestamp{};

  bool operator==(const CommitRecord&) const = default;
};

struct Event {
  std::int64_t event_id = 0;
  EventKind kind = EventKind::llm_query;
  std::int64_t cycle_index = 0;
  Timestamp timestamp{};
  // For tool_invocation the body is the call object {"tool": name, "args": ...}.
  Value body;
  std::optional<std::string> tool_name;
  bool held = false;
  bool edited = false;
  std::optional<Value> original_body;
  std::optional<std::string> summary;
  // Latest commit triggered at this event; every such commit is in `commits`.
  std::optional<std::string> commit_id;
  std::vector<CommitRecord> commits;

  [[nodiscard]] Phase phase() const { return phase_of(kind); }

  bool operator==(const Event&) const = default;
};

struct RunRecord {
  std::string run_id;
  std::string agent_name;
  RunMode mode = RunMode::interactive;
  RunStatus status = RunStatus::live;
  Timestamp started_at{};
  std::optional<Timestamp> ended_at;
  std::optional<std::string> workspace_path;
  std::optional<std::string> original_branch;
  std::optional<std::string> run_branch;
  std::int64_t event_count = 0;

  // Mode and status as written in the document an imported run came from,
  // so that re-exporting reproduces that document exactly.
  std::optional<RunMode> recorded_mode;
  std::optional<RunStatus> recorded_status;

  bool operator==(const RunRecord&) const = default;
};

struct Cycle {
  std::int64_t cycle_index = 0;
  std::vector<std::int64_t> event_ids;

  bool operator==(const Cycle&) const = default;
};

struct Trajectory {
  RunRecord run;
  std::vector<Event> events;

  [[nodiscard]] std::vector<CommitRecord> commits() const;
  [[nodiscard]] std::vector<Cycle> cycles() const;

  bool operator==(const Trajectory&) const = default;
};

// Cycles are delimited by llm_query events: a query that arrives when the
// current cycle already holds an event opens the next cycle. Every other kind
// joins the current cycle.
class CycleTracker {
 public:
  std::int64_t next(EventKind kind);
  [[nodiscard]] std::int64_t current() const { return current_; }

 private:
  std::int64_t current_ = 0;
  bool current_has_events_ = false;
};

[[nodiscard]] std::int64_t assign_cycle(std::span<const EventKind> previous, EventKind next);

// Throws IntegrityError on the first violated model invariant.
void validate(const Trajectory& trajectory);

[[nodiscard]] Value to_json(const CommitRecord& commit);
[[nodiscard]] Value to_json(const Event& event);
[[nodiscard]] Value to_json(const RunRecord& run);
// Throw std::invalid_argument describing the offending field.
[[nodiscard]] CommitRecord commit_from_json(const Value& json);
[[nodiscard]] Event event_from_json(const Value& json);
[[nodiscard]] RunRecord run_from_json(const Value& json);

inline constexpr std::string_view kTrajectorySchema = "agentstepper-trajectory/1";

struct SerializeOptions {
  // Adds a top-level "imported": true marker to the header; used by the
  // server's own data directory so imported runs survive a restart.
  bool mark_imported = false;
};

[[nodiscard]] std::string serialize_header(const RunRecord& run, SerializeOptions options = {});
[[nodiscard]] std::string serialize_event(const Event& event);
[[nodiscard]] std::string serialize_run(const Trajectory& trajectory, SerializeOptions options = {});

// Strict parse of an exported document. The result has mode=post_hoc and
// status=imported. Throws ParseError or IntegrityError.
[[nodiscard]] Trajectory deserialize_run(std::string_view document);

}  // namespace agentstepper
