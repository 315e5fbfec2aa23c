#include "agentstepper/hub.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <random>

#include "agentstepper/errors.hpp"
#include "agentstepper/workspace.hpp"

namespace agentstepper {

using SteadyClock = std::chrono::steady_clock;

struct DebugHub::Run {
  explicit Run(Trajectory t, ExecState initial)
      : trajectory(std::move(t)), engine(trajectory.run.run_id, initial) {}

  std::mutex mu;
  Trajectory trajectory;
  bool imported = false;
  BreakpointEngine engine;
  CycleTracker cycles;
  std::optional<WorkspaceSession> workspace;
  std::weak_ptr<Connection> agent;
  std::map<const Connection*, std::weak_ptr<Connection>> subscribers;
  std::unique_ptr<RunJournal> journal;
  std::int64_t pending_summaries = 0;
  std::map<std::int64_t, std::uint64_t> summary_versions;
  bool awaiting_resume = false;
  std::optional<SteadyClock::time_point> hold_deadline;

  [[nodiscard]] const std::string& id() const { return trajectory.run.run_id; }
  [[nodiscard]] bool live() const { return trajectory.run.status == RunStatus::live; }
};

struct DebugHub::ConnState {
  enum class Role { unknown, agent, ui };
  Role role = Role::unknown;
  ProtocolState protocol;
  std::string run_id;      // agent connections
  std::string subscribed;  // ui connections
  std::int64_t last_seq = -1;
  bool failed = false;
};

namespace {

Value run_entry(const RunRecord& record) {
  auto json = to_json(record);
  json["mode"] = to_string(record.mode);
  json["status"] = to_string(record.status);
  return json;
}

std::optional<std::string> optional_text(const Value& payload, const char* field) {
  auto it = payload.find(field);
  if (it == payload.end() || it->is_null()) {
    return std::nullopt;
  }
  if (!it->is_string()) {
    throw ProtocolError("bad_payload", std::string("payload.") + field + " must be a string");
  }
  return it->get<std::string>();
}

}  // namespace

DebugHub::DebugHub(ServerConfig config)
    : config_(std::move(config)),
      store_(config_.data_dir),
      summarizer_(Summarizer::from_config(config_.summarizer)),
      pool_(std::max<std::size_t>(1, config_.summary_workers)) {
  timer_thread_ = std::thread([this] { hold_timer_loop(); });
}

DebugHub::~DebugHub() { shutdown(); }

void DebugHub::load_runs() {
  auto stored = store_.load_all();
  std::lock_guard lock(registry_mu_);
  for (auto& s : stored) {
    auto run = std::make_shared<Run>(std::move(s.trajectory), config_.initial_state);
    run->imported = s.imported;
    run->engine.deactivate();
    runs_[run->id()] = std::move(run);
  }
  spdlog::info("loaded {} run(s) from {}", runs_.size(), store_.data_dir().string());
}

void DebugHub::on_open(const std::shared_ptr<Connection>& conn) {
  std::lock_guard lock(registry_mu_);
  conns_.try_emplace(conn.get(), std::make_shared<ConnState>());
}

void DebugHub::on_message(const std::shared_ptr<Connection>& conn, std::string_view frame) {
  std::shared_ptr<ConnState> state;
  {
    std::lock_guard lock(registry_mu_);
    auto [it, _] = conns_.try_emplace(conn.get(), std::make_shared<ConnState>());
    state = it->second;
  }
  if (state->failed) {
    return;
  }

  Envelope env;
  try {
    env = decode(frame);
  } catch (const ProtocolError& ex) {
    if (state->role == ConnState::Role::agent) {
      fatal(conn, *state, ex.code(), ex.what());
    } else {
      send_error(conn, ex.code(), ex.what());
    }
    return;
  }

  const auto direction = direction_of(env.type);
  const bool from_agent = direction == Direction::agent_to_server;
  const bool from_ui = direction == Direction::ui_to_server;
  if ((!from_agent && !from_ui) || (from_agent && state->role == ConnState::Role::ui) ||
      (from_ui && state->role == ConnState::Role::agent)) {
    const std::string message = "message " + env.type + " is not valid on this connection";
    if (state->role == ConnState::Role::agent) {
      fatal(conn, *state, "wrong_direction", message);
    } else {
      send_error(conn, "wrong_direction", message);
    }
    return;
  }
  if (env.seq <= state->last_seq) {
    const std::string message = "seq " + std::to_string(env.seq) + " does not increase";
    if (from_agent) {
      fatal(conn, *state, "bad_seq", message);
    } else {
      send_error(conn, "bad_seq", message);
    }
    return;
  }
  state->last_seq = env.seq;

  if (from_agent) {
    state->role = ConnState::Role::agent;
    try {
      handle_agent(conn, *state, std::move(env));
    } catch (const Error& ex) {
      fatal(conn, *state, ex.code(), ex.what());
    } catch (const std::exception& ex) {
      fatal(conn, *state, "internal", ex.what());
    }
  } else {
    if (state->role == ConnState::Role::unknown) {
      state->role = ConnState::Role::ui;
      std::lock_guard lock(registry_mu_);
      ui_conns_[conn.get()] = conn;
    }
    try {
      handle_ui(conn, *state, env);
    } catch (const Error& ex) {
      send_error(conn, ex.code(), ex.what(), env.run_id);
    } catch (const std::exception& ex) {
      send_error(conn, "internal", ex.what(), env.run_id);
    }
  }
}

void DebugHub::on_close(const std::shared_ptr<Connection>& conn) {
  std::shared_ptr<ConnState> state;
  {
    std::lock_guard lock(registry_mu_);
    auto it = conns_.find(conn.get());
    if (it == conns_.end()) {
      return;
    }
    state = it->second;
    conns_.erase(it);
    ui_conns_.erase(conn.get());
  }
  if (state->role == ConnState::Role::agent && !state->run_id.empty()) {
    abort_run(state->run_id, "agent disconnected");
  }
  if (state->role == ConnState::Role::ui && !state->subscribed.empty()) {
    if (auto run = find_run(state->subscribed)) {
      std::lock_guard lock(run->mu);
      run->subscribers.erase(conn.get());
    }
  }
}

void DebugHub::shutdown() {
  {
    std::lock_guard lock(timer_mu_);
    if (stopping_) {
      return;
    }
    stopping_ = true;
  }
  timer_cv_.notify_all();
  if (timer_thread_.joinable()) {
    timer_thread_.join();
  }
  std::vector<std::shared_ptr<Run>> runs;
  {
    std::lock_guard lock(registry_mu_);
    for (const auto& [_, run] : runs_) {
      runs.push_back(run);
    }
  }
  for (const auto& run : runs) {
    std::lock_guard lock(run->mu);
    if (auto released = run->engine.release_unedited()) {
      apply_release_locked(*run, std::move(*released));
      broadcast_state_locked(*run);
    }
  }
  pool_.stop();
}

void DebugHub::wait_idle() { pool_.wait_idle(); }

std::vector<RunRecord> DebugHub::list_runs() const {
  std::vector<std::shared_ptr<Run>> runs;
  {
    std::lock_guard lock(registry_mu_);
    for (const auto& [_, run] : runs_) {
      runs.push_back(run);
    }
  }
  std::vector<RunRecord> out;
  for (const auto& run : runs) {
    std::lock_guard lock(run->mu);
    out.push_back(run->trajectory.run);
  }
  std::sort(out.begin(), out.end(), [](const RunRecord& a, const RunRecord& b) {
    return std::tie(a.started_at, a.run_id) < std::tie(b.started_at, b.run_id);
  });
  return out;
}

std::optional<Trajectory> DebugHub::snapshot(const std::string& run_id) const {
  auto run = find_run(run_id);
  if (!run) {
    return std::nullopt;
  }
  std::lock_guard lock(run->mu);
  return run->trajectory;
}

// ---------------------------------------------------------------------------
// agent side

void DebugHub::handle_agent(const std::shared_ptr<Connection>& conn, ConnState& state, Envelope env) {
  std::optional<EventKind> wire_kind;
  const bool is_event = env.type == msg::event_begin || env.type == msg::event_end;
  if (is_event) {
    const auto& kind = env.payload["event_kind"];
    if (kind.is_string()) {
      wire_kind = wire_event_kind(kind.get<std::string>());
    }
  }
  if (auto verdict = state.protocol.accept(env.type, wire_kind); !verdict) {
    fatal(conn, state, verdict.reason, "message " + env.type + " rejected: " + verdict.reason);
    return;
  }
  if (!state.run_id.empty() && (is_event || env.type == msg::goodbye)) {
    if (auto run = find_run(state.run_id)) {
      std::lock_guard lock(run->mu);
      if (run->awaiting_resume) {
        // The agent must wait for resume before its next breakpoint.
        fatal(conn, state, "awaiting_resume", "message " + env.type + " sent while held");
        return;
      }
    }
  }

  if (env.type == msg::hello_agent) {
    agent_hello(conn, state, env);
  } else if (is_event) {
    agent_event(conn, state, env);
  } else if (env.type == msg::commit_request) {
    agent_commit(conn, state, env);
  } else if (env.type == msg::debug_message) {
    agent_debug(state, env);
  } else if (env.type == msg::goodbye) {
    agent_goodbye(conn, state);
  }
}

void DebugHub::agent_hello(const std::shared_ptr<Connection>& conn, ConnState& state,
                           const Envelope& env) {
  const auto& name = env.payload["agent_name"];
  if (!name.is_string()) {
    throw ProtocolError("bad_payload", "payload.agent_name must be a string");
  }
  auto workspace_path = optional_text(env.payload, "workspace_path");

  Trajectory trajectory;
  auto& record = trajectory.run;
  record.run_id = new_run_id();
  record.agent_name = name.get<std::string>();
  record.mode = RunMode::interactive;
  record.status = RunStatus::live;
  record.started_at = now();
  record.workspace_path = workspace_path;

  auto run = std::make_shared<Run>(std::move(trajectory), config_.initial_state);
  Value ack{{"run_id", run->id()}};
  if (workspace_path) {
    try {
      auto session = open_session(*workspace_path, run->id());
      session.auto_commit = config_.auto_commit;
      run->trajectory.run.workspace_path = session.workspace_path.string();
      run->trajectory.run.original_branch = session.original_branch;
      run->trajectory.run.run_branch = session.run_branch;
      run->workspace = std::move(session);
    } catch (const Error& ex) {
      spdlog::warn("run {}: workspace tracking disabled: {}", run->id(), ex.what());
      ack["workspace_error"] = ex.what();
    }
  }
  run->agent = conn;
  run->journal = store_.start_journal(run->trajectory.run);
  {
    std::lock_guard lock(registry_mu_);
    runs_[run->id()] = run;
  }
  state.run_id = run->id();
  spdlog::info("run {} started for agent \"{}\"", run->id(), run->trajectory.run.agent_name);
  conn->send(Envelope{kProtocolVersion, std::string(msg::hello_ack), {}, run->id(), 0, ack});
  broadcast_run_list();
}

void DebugHub::agent_event(const std::shared_ptr<Connection>& conn, ConnState& state,
                           const Envelope& env) {
  const auto wire_kind = *wire_event_kind(env.payload["event_kind"].get<std::string>());
  const auto kind = env.type == msg::event_begin ? wire_kind : closing_kind(wire_kind);
  const auto& holdable_field = env.payload.contains("holdable") ? env.payload["holdable"] : Value(true);
  if (!holdable_field.is_boolean()) {
    throw ProtocolError("bad_payload", "payload.holdable must be a boolean");
  }

  Event event;
  event.kind = kind;
  event.body = env.payload["body"];
  if (kind == EventKind::tool_invocation) {
    const auto& body = event.body;
    if (!body.is_object() || !body.contains("tool") || !body["tool"].is_string() ||
        !body.contains("args")) {
      throw ProtocolError("bad_payload", "tool_invocation body must be {\"tool\": <name>, \"args\": ...}");
    }
    event.tool_name = body["tool"].get<std::string>();
    if (auto named = optional_text(env.payload, "tool_name"); named && *named != *event.tool_name) {
      throw ProtocolError("bad_payload", "payload.tool_name disagrees with body.tool");
    }
  }

  auto run = find_run(state.run_id);
  if (!run) {
    throw InvalidStateError("no run for this connection");
  }
  std::lock_guard lock(run->mu);
  event.event_id = static_cast<std::int64_t>(run->trajectory.events.size());
  event.cycle_index = run->cycles.next(kind);
  event.timestamp = now();
  run->trajectory.events.push_back(std::move(event));
  run->trajectory.run.event_count = static_cast<std::int64_t>(run->trajectory.events.size());
  auto& appended = run->trajectory.events.back();
  const auto event_id = appended.event_id;

  std::optional<CommitRecord> commit;
  if (kind == EventKind::tool_result && run->workspace && run->workspace->auto_commit) {
    std::string message;
    commit = commit_locked(*run, std::nullopt, std::nullopt, message);
  }

  const auto outcome = run->engine.on_event(event_id, kind, holdable_field.get<bool>());
  auto& stored = run->trajectory.events.back();
  if (outcome == BreakpointEngine::Outcome::hold) {
    stored.held = true;
    run->awaiting_resume = true;
    if (config_.hold_timeout) {
      run->hold_deadline = SteadyClock::now() + *config_.hold_timeout;
    }
  }
  if (run->journal) {
    run->journal->append(stored);
  }
  broadcast_locked(*run, msg::event_appended, Value{{"event", to_json(stored)}});
  if (commit) {
    broadcast_locked(*run, msg::commit_appended, Value{{"commit", to_json(*commit)}});
  }
  schedule_summary_locked(*run, event_id);

  if (outcome == BreakpointEngine::Outcome::hold) {
    broadcast_state_locked(*run);
  } else {
    conn->send(Envelope{kProtocolVersion, std::string(msg::resume), {}, run->id(), 0,
                        to_json(ResumeDecision::unedited(ResumeAction::continue_))});
  }
}

void DebugHub::agent_commit(const std::shared_ptr<Connection>& conn, ConnState& state,
                            const Envelope& env) {
  auto summary = optional_text(env.payload, "summary");
  auto description = optional_text(env.payload, "description");
  auto run = find_run(state.run_id);
  if (!run) {
    throw InvalidStateError("no run for this connection");
  }
  Value ack{{"committed", false}};
  {
    std::lock_guard lock(run->mu);
    if (!run->workspace) {
      ack["message"] = "no workspace configured";
    } else if (run->trajectory.events.empty()) {
      ack["message"] = "no events recorded yet; changes stay pending";
    } else {
      std::string message;
      if (auto record = commit_locked(*run, summary, description, message)) {
        update_event_locked(*run, record->triggering_event_id);
        broadcast_locked(*run, msg::commit_appended, Value{{"commit", to_json(*record)}});
        ack = Value{{"committed", true}, {"commit_id", record->commit_id},
                    {"message", record->message_summary}};
      } else {
        ack["message"] = message;
      }
    }
  }
  conn->send(Envelope{kProtocolVersion, std::string(msg::commit_ack), {}, run->id(), 0, ack});
}

void DebugHub::agent_debug(ConnState& state, const Envelope& env) {
  const auto& text = env.payload["text"];
  if (!text.is_string()) {
    throw ProtocolError("bad_payload", "payload.text must be a string");
  }
  auto run = find_run(state.run_id);
  if (!run) {
    throw InvalidStateError("no run for this connection");
  }
  std::lock_guard lock(run->mu);
  Event event;
  event.event_id = static_cast<std::int64_t>(run->trajectory.events.size());
  event.kind = EventKind::debug_message;
  event.cycle_index = run->cycles.next(EventKind::debug_message);
  event.timestamp = now();
  event.body = text;
  append_event_locked(*run, std::move(event));
}

void DebugHub::agent_goodbye(const std::shared_ptr<Connection>& conn, ConnState& state) {
  auto run = find_run(state.run_id);
  if (run) {
    std::lock_guard lock(run->mu);
    finish_run_locked(*run, RunStatus::completed);
  }
  state.run_id.clear();
  conn->close();
  broadcast_run_list();
}

void DebugHub::abort_run(const std::string& run_id, const std::string& reason) {
  auto run = find_run(run_id);
  if (!run) {
    return;
  }
  {
    std::lock_guard lock(run->mu);
    if (!run->live()) {
      return;
    }
    spdlog::warn("run {} aborted: {}", run_id, reason);
    finish_run_locked(*run, RunStatus::aborted);
  }
  broadcast_run_list();
}

// ---------------------------------------------------------------------------
// ui side

void DebugHub::handle_ui(const std::shared_ptr<Connection>& conn, ConnState& state, const Envelope& env) {
  if (env.type == msg::list_runs) {
    conn->send(Envelope{kProtocolVersion, std::string(msg::run_list), {}, {}, 0, run_list_payload()});
  } else if (env.type == msg::subscribe) {
    ui_subscribe(conn, state, env);
  } else if (env.type == msg::control) {
    ui_control(conn, state, env);
  } else if (env.type == msg::edit) {
    ui_edit(conn, env);
  } else if (env.type == msg::import_run) {
    ui_import(conn, env);
  }
}

void DebugHub::ui_subscribe(const std::shared_ptr<Connection>& conn, ConnState& state,
                            const Envelope& env) {
  auto target = optional_text(env.payload, "run_id");
  if (!target && !env.run_id.empty()) {
    target = env.run_id;
  }
  if (!state.subscribed.empty()) {
    if (auto old = find_run(state.subscribed)) {
      std::lock_guard lock(old->mu);
      old->subscribers.erase(conn.get());
    }
    state.subscribed.clear();
  }
  if (!target) {
    conn->send(Envelope{kProtocolVersion, std::string(msg::run_list), {}, {}, 0, run_list_payload()});
    return;
  }
  auto run = find_run(*target);
  if (!run) {
    throw NotFoundError("unknown run " + *target);
  }
  std::lock_guard lock(run->mu);
  run->subscribers[conn.get()] = conn;
  state.subscribed = *target;

  auto send = [&](std::string_view type, Value payload) {
    conn->send(Envelope{kProtocolVersion, std::string(type), {}, run->id(), 0, std::move(payload)});
  };
  for (const auto& event : run->trajectory.events) {
    send(msg::event_appended, Value{{"event", to_json(event)}});
  }
  for (const auto& event : run->trajectory.events) {
    if (event.summary) {
      send(msg::summary_ready, Value{{"event_id", event.event_id}, {"text", *event.summary},
                                     {"origin", "replay"}});
    }
  }
  for (const auto& commit : run->trajectory.commits()) {
    send(msg::commit_appended, Value{{"commit", to_json(commit)}});
  }
  send(msg::state_changed, state_payload_locked(*run));
}

void DebugHub::ui_control(const std::shared_ptr<Connection>& conn, ConnState& state,
                          const Envelope& env) {
  (void)conn;
  auto target = optional_text(env.payload, "run_id");
  if (!target) {
    target = env.run_id.empty() ? state.subscribed : env.run_id;
  }
  const auto& command_field = env.payload["command"];
  auto command = command_field.is_string()
                     ? control_command_from_string(command_field.get<std::string>())
                     : std::nullopt;
  if (!command) {
    throw ProtocolError("bad_payload", "control.command must be pause, step or continue");
  }
  auto run = find_run(*target);
  if (!run) {
    throw NotFoundError("unknown run " + *target);
  }
  std::lock_guard lock(run->mu);
  if (!run->live()) {
    throw InvalidStateError("run " + run->id() + " is " +
                            std::string(to_string(run->trajectory.run.status)) + "; it is read-only");
  }
  if (auto released = run->engine.on_control(*command)) {
    apply_release_locked(*run, std::move(*released));
  }
  broadcast_state_locked(*run);
}

void DebugHub::ui_edit(const std::shared_ptr<Connection>& conn, const Envelope& env) {
  (void)conn;
  const auto& run_field = env.payload["run_id"];
  const auto& id_field = env.payload["event_id"];
  if (!run_field.is_string() || !id_field.is_number_integer()) {
    throw ProtocolError("bad_payload", "edit needs a string run_id and an integer event_id");
  }
  auto run = find_run(run_field.get<std::string>());
  if (!run) {
    throw NotFoundError("unknown run " + run_field.get<std::string>());
  }
  std::lock_guard lock(run->mu);
  if (!run->live()) {
    throw InvalidStateError("run " + run->id() + " is read-only");
  }
  const auto event_id = id_field.get<std::int64_t>();
  const auto& events = run->trajectory.events;
  const bool in_range = event_id >= 0 && event_id < static_cast<std::int64_t>(events.size());
  run->engine.submit_edit(event_id, env.payload["body"],
                          in_range ? events[static_cast<std::size_t>(event_id)].body : Value());
  broadcast_state_locked(*run);
}

void DebugHub::ui_import(const std::shared_ptr<Connection>& conn, const Envelope& env) {
  const auto& document = env.payload["document"];
  if (!document.is_string()) {
    throw ProtocolError("bad_payload", "import_run.document must be a string");
  }
  auto trajectory = deserialize_run(document.get<std::string>());
  std::string run_id;
  {
    std::lock_guard lock(registry_mu_);
    if (runs_.contains(trajectory.run.run_id) || store_.exists(trajectory.run.run_id)) {
      trajectory.run.run_id.clear();
    }
  }
  if (trajectory.run.run_id.empty()) {
    trajectory.run.run_id = new_run_id();
  }
  auto run = std::make_shared<Run>(std::move(trajectory), config_.initial_state);
  run->imported = true;
  run->engine.deactivate();
  store_.write(run->trajectory, true);
  run_id = run->id();
  {
    std::lock_guard lock(registry_mu_);
    runs_[run_id] = run;
  }
  spdlog::info("imported run {}", run_id);
  auto payload = run_list_payload();
  payload["imported_run_id"] = run_id;
  conn->send(Envelope{kProtocolVersion, std::string(msg::run_list), {}, run_id, 0, payload});
  broadcast_run_list();
}

// ---------------------------------------------------------------------------
// helpers (run mutex held)

void DebugHub::append_event_locked(Run& run, Event event) {
  run.trajectory.events.push_back(std::move(event));
  run.trajectory.run.event_count = static_cast<std::int64_t>(run.trajectory.events.size());
  const auto& stored = run.trajectory.events.back();
  if (run.journal) {
    run.journal->append(stored);
  }
  broadcast_locked(run, msg::event_appended, Value{{"event", to_json(stored)}});
  schedule_summary_locked(run, stored.event_id);
}

void DebugHub::update_event_locked(Run& run, std::int64_t event_id) {
  const auto& event = run.trajectory.events.at(static_cast<std::size_t>(event_id));
  if (run.journal) {
    run.journal->append(event);
  }
  broadcast_locked(run, msg::event_updated, Value{{"event", to_json(event)}});
}

void DebugHub::apply_release_locked(Run& run, HoldSlot released) {
  const auto& decision = *released.resolution;
  auto& event = run.trajectory.events.at(static_cast<std::size_t>(released.event_id));
  if (decision.edited) {
    event.original_body = event.body;
    event.body = *decision.body;
    event.edited = true;
    if (event.kind == EventKind::tool_invocation) {
      event.tool_name = event.body["tool"].get<std::string>();
    }
    update_event_locked(run, event.event_id);
    schedule_summary_locked(run, event.event_id);
  }
  run.awaiting_resume = false;
  run.hold_deadline.reset();
  if (auto agent = run.agent.lock()) {
    agent->send(Envelope{kProtocolVersion, std::string(msg::resume), {}, run.id(), 0, to_json(decision)});
  }
}

void DebugHub::schedule_summary_locked(Run& run, std::int64_t event_id) {
  auto& events = run.trajectory.events;
  auto& event = events.at(static_cast<std::size_t>(event_id));
  if (event.kind == EventKind::debug_message) {
    const auto text = event.body.is_string() ? event.body.get<std::string>() : event.body.dump();
    event.summary = normalize_summary(text, false);
    if (event.summary->empty()) {
      event.summary = "Empty debug message.";
    }
    if (run.journal) {
      run.journal->append(event);
    }
    broadcast_locked(run, msg::summary_ready,
                     Value{{"event_id", event_id}, {"text", *event.summary}, {"origin", "fallback"}});
    return;
  }

  auto invoked_tool_before = [&](std::int64_t id) -> std::optional<std::string> {
    for (auto i = id - 1; i >= 0; --i) {
      const auto& e = events[static_cast<std::size_t>(i)];
      if (e.kind == EventKind::tool_invocation) {
        return e.tool_name;
      }
    }
    return std::nullopt;
  };
  const Event* previous = nullptr;
  for (auto i = event_id - 1; i >= 0; --i) {
    if (events[static_cast<std::size_t>(i)].kind == event.kind) {
      previous = &events[static_cast<std::size_t>(i)];
      break;
    }
  }
  std::optional<std::string> invoked;
  std::optional<std::string> previous_invoked;
  if (event.kind == EventKind::tool_result) {
    invoked = invoked_tool_before(event_id);
    if (previous != nullptr) {
      previous_invoked = invoked_tool_before(previous->event_id);
    }
  }
  auto request = make_summary_request(event, previous, invoked, previous_invoked);
  const auto version = ++run.summary_versions[event_id];
  ++run.pending_summaries;

  std::shared_ptr<Run> keep_alive = find_run(run.id());
  pool_.submit([this, keep_alive, event_id, version, request = std::move(request)] {
    auto result = summarizer_.summarize(request);
    std::lock_guard lock(keep_alive->mu);
    auto& r = *keep_alive;
    --r.pending_summaries;
    if (r.summary_versions[event_id] == version) {
      auto& target = r.trajectory.events.at(static_cast<std::size_t>(event_id));
      target.summary = result.text;
      if (r.journal) {
        r.journal->append(target);
      }
      broadcast_locked(r, msg::summary_ready,
                       Value{{"event_id", event_id}, {"text", result.text},
                             {"origin", to_string(result.origin)}});
    }
    if (!r.live() && r.pending_summaries == 0) {
      persist_final_locked(r);
      broadcast_state_locked(r);
    }
  });
}

std::optional<CommitRecord> DebugHub::commit_locked(Run& run, std::optional<std::string> summary,
                                                    std::optional<std::string> description,
                                                    std::string& message) {
  const auto trigger = static_cast<std::int64_t>(run.trajectory.events.size()) - 1;
  try {
    auto outcome = commit_changes(*run.workspace, std::move(summary), std::move(description), trigger,
                                  [this](const DiffResult& diff) { return commit_message(diff); });
    if (!outcome.committed) {
      message = outcome.message;
      return std::nullopt;
    }
    auto& event = run.trajectory.events.at(static_cast<std::size_t>(trigger));
    event.commits.push_back(*outcome.record);
    event.commit_id = outcome.record->commit_id;
    return outcome.record;
  } catch (const Error& ex) {
    spdlog::warn("run {}: snapshot failed: {}", run.id(), ex.what());
    message = ex.what();
    return std::nullopt;
  }
}

std::string DebugHub::commit_message(const DiffResult& diff) const {
  SummaryRequest request;
  request.kind = SummaryKind::diff_message;
  request.current = diff.text;
  request.files_changed = diff.files_changed;
  return summarizer_.summarize(request).text;
}

void DebugHub::finish_run_locked(Run& run, RunStatus status) {
  if (run.workspace) {
    std::optional<std::int64_t> trigger;
    if (!run.trajectory.events.empty()) {
      trigger = static_cast<std::int64_t>(run.trajectory.events.size()) - 1;
    }
    try {
      auto outcome = close_session(*run.workspace, trigger,
                                   [this](const DiffResult& diff) { return commit_message(diff); });
      if (outcome.record) {
        auto& event = run.trajectory.events.at(static_cast<std::size_t>(*trigger));
        event.commits.push_back(*outcome.record);
        event.commit_id = outcome.record->commit_id;
        update_event_locked(run, *trigger);
        broadcast_locked(run, msg::commit_appended, Value{{"commit", to_json(*outcome.record)}});
      }
    } catch (const Error& ex) {
      spdlog::error("run {}: closing the workspace failed: {}", run.id(), ex.what());
    }
    run.workspace.reset();
  }
  run.trajectory.run.status = status;
  run.trajectory.run.ended_at = now();
  run.engine.deactivate();
  run.awaiting_resume = false;
  run.hold_deadline.reset();
  run.agent.reset();
  persist_final_locked(run);
  spdlog::info("run {} {} with {} event(s)", run.id(), to_string(status), run.trajectory.events.size());
  broadcast_state_locked(run);
}

void DebugHub::persist_final_locked(Run& run) {
  try {
    store_.write(run.trajectory, run.imported);
    run.journal.reset();
  } catch (const std::exception& ex) {
    spdlog::error("run {}: persisting failed: {}", run.id(), ex.what());
  }
}

void DebugHub::broadcast_locked(Run& run, std::string_view type, Value payload) {
  for (auto it = run.subscribers.begin(); it != run.subscribers.end();) {
    if (auto conn = it->second.lock()) {
      conn->send(Envelope{kProtocolVersion, std::string(type), {}, run.id(), 0, payload});
      ++it;
    } else {
      it = run.subscribers.erase(it);
    }
  }
}

Value DebugHub::state_payload_locked(const Run& run) const {
  Value payload{{"run_id", run.id()},
                {"status", to_string(run.trajectory.run.status)},
                {"mode", to_string(run.trajectory.run.mode)},
                {"summaries_pending", run.pending_summaries}};
  if (run.live()) {
    const auto state = run.engine.state();
    payload["state"] = to_string(state.state);
    payload["pause_pending"] = run.engine.pause_pending();
    if (state.held_event_id) {
      payload["held_event_id"] = *state.held_event_id;
      payload["edit_pending"] = run.engine.hold()->submitted_edit.has_value();
    }
  } else {
    payload["state"] = nullptr;
  }
  return payload;
}

void DebugHub::broadcast_state_locked(Run& run) {
  broadcast_locked(run, msg::state_changed, state_payload_locked(run));
}

Value DebugHub::run_list_payload() const {
  Value runs = Value::array();
  for (const auto& record : list_runs()) {
    runs.push_back(run_entry(record));
  }
  return Value{{"runs", std::move(runs)}};
}

void DebugHub::broadcast_run_list() {
  const auto payload = run_list_payload();
  std::vector<std::shared_ptr<Connection>> targets;
  {
    std::lock_guard lock(registry_mu_);
    for (const auto& [_, weak] : ui_conns_) {
      if (auto conn = weak.lock()) {
        targets.push_back(std::move(conn));
      }
    }
  }
  for (const auto& conn : targets) {
    conn->send(Envelope{kProtocolVersion, std::string(msg::run_list), {}, {}, 0, payload});
  }
}

std::shared_ptr<DebugHub::Run> DebugHub::find_run(const std::string& run_id) const {
  std::lock_guard lock(registry_mu_);
  auto it = runs_.find(run_id);
  return it == runs_.end() ? nullptr : it->second;
}

std::string DebugHub::new_run_id() {
  static thread_local std::mt19937_64 rng{std::random_device{}()};
  const auto stamp = format_timestamp(now());
  // 2026-10-18T09:15:02.041Z -> 20261018-091502
  std::string base = stamp.substr(0, 4) + stamp.substr(5, 2) + stamp.substr(8, 2) + "-" +
                     stamp.substr(11, 2) + stamp.substr(14, 2) + stamp.substr(17, 2);
  std::lock_guard lock(registry_mu_);
  for (;;) {
    char suffix[8];
    std::snprintf(suffix, sizeof suffix, "%06llx",
                  static_cast<unsigned long long>((rng() ^ ++run_counter_) & 0xffffff));
    auto id = base + "-" + suffix;
    if (!runs_.contains(id) && !store_.exists(id)) {
      return id;
    }
  }
}

void DebugHub::send_error(const std::shared_ptr<Connection>& conn, const std::string& reason,
                          const std::string& message, const std::string& run_id) {
  conn->send(Envelope{kProtocolVersion, std::string(msg::error), {}, run_id, 0,
                      Value{{"reason", reason}, {"message", message}}});
}

void DebugHub::fatal(const std::shared_ptr<Connection>& conn, ConnState& state, const std::string& reason,
                     const std::string& message) {
  spdlog::warn("{}: protocol violation ({}): {}", conn->describe(), reason, message);
  state.failed = true;
  conn->send(Envelope{kProtocolVersion, std::string(msg::fatal), {}, state.run_id, 0,
                      Value{{"reason", reason}, {"message", message}}});
  if (!state.run_id.empty()) {
    abort_run(state.run_id, "protocol violation: " + reason);
  }
  conn->close();
}

void DebugHub::hold_timer_loop() {
  std::unique_lock lock(timer_mu_);
  while (!stopping_) {
    timer_cv_.wait_for(lock, std::chrono::milliseconds(50));
    if (stopping_ || !config_.hold_timeout) {
      continue;
    }
    lock.unlock();
    std::vector<std::shared_ptr<Run>> runs;
    {
      std::lock_guard reg(registry_mu_);
      for (const auto& [_, run] : runs_) {
        runs.push_back(run);
      }
    }
    const auto current = SteadyClock::now();
    for (const auto& run : runs) {
      std::lock_guard run_lock(run->mu);
      if (run->hold_deadline && *run->hold_deadline <= current) {
        if (auto released = run->engine.release_unedited()) {
          spdlog::info("run {}: hold on event {} timed out", run->id(), released->event_id);
          apply_release_locked(*run, std::move(*released));
          broadcast_state_locked(*run);
        }
        run->hold_deadline.reset();
      }
    }
    lock.lock();
  }
}

}  // namespace agentstepper
