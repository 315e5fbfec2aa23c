#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "agentstepper/protocol.hpp"
#include "agentstepper/trajectory.hpp"

namespace agentstepper {

enum class ExecState { running, stepping, paused };
enum class ControlCommand { pause, step, continue_ };

[[nodiscard]] std::string_view to_string(ExecState state);
[[nodiscard]] std::string_view to_string(ControlCommand command);
[[nodiscard]] std::optional<ExecState> exec_state_from_string(std::string_view text);
[[nodiscard]] std::optional<ControlCommand> control_command_from_string(std::string_view text);

struct ExecutionState {
  ExecState state = ExecState::stepping;
  std::optional<std::int64_t> held_event_id;  // present iff paused

  bool operator==(const ExecutionState&) const = default;
};

struct HoldSlot {
  std::string run_id;
  std::int64_t event_id = 0;
  EventKind event_kind = EventKind::llm_query;
  Phase phase = Phase::begin;
  std::optional<Value> submitted_edit;
  std::optional<ResumeDecision> resolution;
};

// Per-run execution control: decides which events hold, tracks the single
// outstanding hold, and turns control commands and edits into exactly one
// ResumeDecision per hold. Not thread-safe; the server serializes access per
// run.
class BreakpointEngine {
 public:
  enum class Outcome { hold, auto_resume };

  explicit BreakpointEngine(std::string run_id, ExecState initial = ExecState::stepping);

  // Called once per appended holdable-capable event.
  Outcome on_event(std::int64_t event_id, EventKind kind, bool holdable);

  // Returns the released hold (with its resolution set) when the command
  // resumes a held agent.
  std::optional<HoldSlot> on_control(ControlCommand command);

  // Stages `new_body` as the replacement payload of the held event.
  // `current_body` is the event's body as the agent sent it; an edit equal to
  // it clears any staged edit.
  void submit_edit(std::int64_t event_id, Value new_body, const Value& current_body);

  // Releases an outstanding hold with action=continue and no edit (hold
  // timeout, server shutdown). State becomes running.
  std::optional<HoldSlot> release_unedited();

  // The run is over; the hold, if any, is dropped and later commands fail.
  void deactivate();

  [[nodiscard]] ExecutionState state() const;
  [[nodiscard]] bool pause_pending() const { return pause_pending_; }
  [[nodiscard]] bool active() const { return active_; }
  [[nodiscard]] const std::optional<HoldSlot>& hold() const { return hold_; }

 private:
  HoldSlot resolve(ResumeDecision decision);

  std::string run_id_;
  ExecState state_;
  bool pause_pending_ = false;
  bool active_ = true;
  std::optional<HoldSlot> hold_;
};

}  // namespace agentstepper
