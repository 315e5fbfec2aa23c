#include "agentstepper/breakpoint.hpp"

#include "agentstepper/errors.hpp"

namespace agentstepper {

std::string_view to_string(ExecState state) {
  switch (state) {
    case ExecState::running:
      return "running";
    case ExecState::stepping:
      return "stepping";
    case ExecState::paused:
      return "paused";
  }
  return "unknown";
}

std::string_view to_string(ControlCommand command) {
  switch (command) {
    case ControlCommand::pause:
      return "pause";
    case ControlCommand::step:
      return "step";
    case ControlCommand::continue_:
      return "continue";
  }
  return "unknown";
}

std::optional<ExecState> exec_state_from_string(std::string_view text) {
  if (text == "running") return ExecState::running;
  if (text == "stepping") return ExecState::stepping;
  if (text == "paused") return ExecState::paused;
  return std::nullopt;
}

std::optional<ControlCommand> control_command_from_string(std::string_view text) {
  if (text == "pause") return ControlCommand::pause;
  if (text == "step") return ControlCommand::step;
  if (text == "continue") return ControlCommand::continue_;
  return std::nullopt;
}

BreakpointEngine::BreakpointEngine(std::string run_id, ExecState initial)
    : run_id_(std::move(run_id)), state_(initial == ExecState::paused ? ExecState::stepping : initial) {
  // Starting "paused" means: hold at the very first event.
  pause_pending_ = initial == ExecState::paused;
}

BreakpointEngine::Outcome BreakpointEngine::on_event(std::int64_t event_id, EventKind kind,
                                                     bool holdable) {
  if (!active_) {
    throw InvalidStateError("run " + run_id_ + " is not live");
  }
  if (hold_) {
    throw InvalidStateError("event " + std::to_string(event_id) + " arrived while event " +
                            std::to_string(hold_->event_id) + " is held");
  }
  if (!holdable || (state_ != ExecState::stepping && !pause_pending_)) {
    return Outcome::auto_resume;
  }
  pause_pending_ = false;
  state_ = ExecState::paused;
  hold_ = HoldSlot{run_id_, event_id, kind, phase_of(kind), std::nullopt, std::nullopt};
  return Outcome::hold;
}

HoldSlot BreakpointEngine::resolve(ResumeDecision decision) {
  HoldSlot slot = std::move(*hold_);
  hold_.reset();
  slot.resolution = std::move(decision);
  return slot;
}

std::optional<HoldSlot> BreakpointEngine::on_control(ControlCommand command) {
  if (!active_) {
    throw InvalidStateError("run " + run_id_ + " is not live; controls are read-only");
  }
  switch (command) {
    case ControlCommand::pause:
      if (!hold_) {
        pause_pending_ = true;
      }
      return std::nullopt;
    case ControlCommand::step:
    case ControlCommand::continue_: {
      const auto action = command == ControlCommand::step ? ResumeAction::step : ResumeAction::continue_;
      state_ = command == ControlCommand::step ? ExecState::stepping : ExecState::running;
      if (command == ControlCommand::continue_) {
        pause_pending_ = false;
      }
      if (!hold_) {
        return std::nullopt;
      }
      auto decision = hold_->submitted_edit
                          ? ResumeDecision::with_edit(action, *hold_->submitted_edit)
                          : ResumeDecision::unedited(action);
      return resolve(std::move(decision));
    }
  }
  return std::nullopt;
}

void BreakpointEngine::submit_edit(std::int64_t event_id, Value new_body, const Value& current_body) {
  if (!active_) {
    throw InvalidStateError("run " + run_id_ + " is not live");
  }
  if (!hold_ || hold_->event_id != event_id) {
    throw StaleEditError("event " + std::to_string(event_id) + " is not the held event");
  }
  if (hold_->event_kind == EventKind::tool_invocation) {
    if (!new_body.is_object() || !new_body.contains("tool") || !new_body["tool"].is_string() ||
        new_body["tool"].get<std::string>().empty() || !new_body.contains("args")) {
      throw InvalidEditError("a tool_invocation edit must be {\"tool\": <name>, \"args\": ...}");
    }
  }
  if (new_body == current_body) {
    hold_->submitted_edit.reset();
  } else {
    hold_->submitted_edit = std::move(new_body);
  }
}

std::optional<HoldSlot> BreakpointEngine::release_unedited() {
  if (!hold_) {
    return std::nullopt;
  }
  state_ = ExecState::running;
  return resolve(ResumeDecision::unedited(ResumeAction::continue_));
}

void BreakpointEngine::deactivate() {
  active_ = false;
  hold_.reset();
  pause_pending_ = false;
}

ExecutionState BreakpointEngine::state() const {
  ExecutionState s{state_, std::nullopt};
  if (hold_) {
    s.held_event_id = hold_->event_id;
  }
  return s;
}

}  // namespace agentstepper
