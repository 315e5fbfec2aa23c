#include "agentstepper/protocol.hpp"

#include <array>
#include <initializer_list>

#include "agentstepper/errors.hpp"

namespace agentstepper {
namespace {

struct CatalogEntry {
  std::string_view type;
  Direction direction;
  std::initializer_list<std::string_view> required;
};

const std::array<CatalogEntry, 22>& catalog() {
  static const std::array<CatalogEntry, 22> entries{{
      {msg::hello_agent, Direction::agent_to_server, {"agent_name"}},
      {msg::event_begin, Direction::agent_to_server, {"event_kind", "body"}},
      {msg::event_end, Direction::agent_to_server, {"event_kind", "body"}},
      {msg::commit_request, Direction::agent_to_server, {}},
      {msg::debug_message, Direction::agent_to_server, {"text"}},
      {msg::goodbye, Direction::agent_to_server, {}},
      {msg::hello_ack, Direction::server_to_agent, {"run_id"}},
      {msg::resume, Direction::server_to_agent, {"action", "edited"}},
      {msg::commit_ack, Direction::server_to_agent, {"committed"}},
      {msg::fatal, Direction::server_to_agent, {"reason"}},
      {msg::subscribe, Direction::ui_to_server, {}},
      {msg::control, Direction::ui_to_server, {"command"}},
      {msg::edit, Direction::ui_to_server, {"run_id", "event_id", "body"}},
      {msg::import_run, Direction::ui_to_server, {"document"}},
      {msg::list_runs, Direction::ui_to_server, {}},
      {msg::run_list, Direction::server_to_ui, {"runs"}},
      {msg::event_appended, Direction::server_to_ui, {"event"}},
      {msg::event_updated, Direction::server_to_ui, {"event"}},
      {msg::summary_ready, Direction::server_to_ui, {"event_id", "text", "origin"}},
      {msg::commit_appended, Direction::server_to_ui, {"commit"}},
      {msg::state_changed, Direction::server_to_ui, {"state"}},
      {msg::error, Direction::server_to_ui, {"reason"}},
  }};
  return entries;
}

const CatalogEntry* find_entry(std::string_view type) {
  for (const auto& entry : catalog()) {
    if (entry.type == type) {
      return &entry;
    }
  }
  return nullptr;
}

}  // namespace

std::optional<Direction> direction_of(std::string_view type) {
  const auto* entry = find_entry(type);
  return entry ? std::optional{entry->direction} : std::nullopt;
}

std::string encode(const Envelope& envelope) {
  Value json{{"v", envelope.v},         {"type", envelope.type}, {"session", envelope.session},
             {"run_id", envelope.run_id}, {"seq", envelope.seq},   {"payload", envelope.payload}};
  return json.dump();
}

Envelope decode(std::string_view frame) {
  Value json = Value::parse(frame, nullptr, false);
  if (json.is_discarded() || !json.is_object()) {
    throw ProtocolError("malformed", "frame is not a structured-value object");
  }
  auto field = [&](const char* name) -> const Value& {
    auto it = json.find(name);
    if (it == json.end()) {
      throw ProtocolError("missing-field", std::string("missing field \"") + name + "\"");
    }
    return *it;
  };

  Envelope env;
  const auto& v = field("v");
  if (!v.is_number_integer()) {
    throw ProtocolError("malformed", "field \"v\" must be an integer");
  }
  env.v = v.get<std::int64_t>();
  if (env.v != kProtocolVersion) {
    throw VersionError(env.v);
  }
  const auto& type = field("type");
  if (!type.is_string()) {
    throw ProtocolError("malformed", "field \"type\" must be a string");
  }
  env.type = type.get<std::string>();
  const auto* entry = find_entry(env.type);
  if (entry == nullptr) {
    throw ProtocolError("unknown-type", "unknown type \"" + env.type + "\"");
  }
  const auto& session = field("session");
  const auto& run_id = field("run_id");
  const auto& seq = field("seq");
  if (!session.is_string() || !run_id.is_string()) {
    throw ProtocolError("malformed", "fields \"session\" and \"run_id\" must be strings");
  }
  if (!seq.is_number_integer()) {
    throw ProtocolError("malformed", "field \"seq\" must be an integer");
  }
  env.session = session.get<std::string>();
  env.run_id = run_id.get<std::string>();
  env.seq = seq.get<std::int64_t>();
  env.payload = field("payload");
  if (!env.payload.is_object()) {
    throw ProtocolError("malformed", "field \"payload\" must be an object");
  }
  for (auto name : entry->required) {
    if (!env.payload.contains(name)) {
      throw ProtocolError("missing-field", "missing field \"payload." + std::string(name) +
                                               "\" for " + env.type);
    }
  }
  return env;
}

std::string_view to_string(ResumeAction action) {
  return action == ResumeAction::step ? "step" : "continue";
}

Value to_json(const ResumeDecision& decision) {
  Value json{{"action", to_string(decision.action)}, {"edited", decision.edited}};
  if (decision.body) {
    json["body"] = *decision.body;
  }
  return json;
}

ResumeDecision resume_from_json(const Value& json) {
  ResumeDecision d;
  const auto action = json.value("action", "");
  if (action == "step") {
    d.action = ResumeAction::step;
  } else if (action == "continue") {
    d.action = ResumeAction::continue_;
  } else {
    throw ProtocolError("malformed", "resume action must be step or continue");
  }
  if (!json.contains("edited") || !json["edited"].is_boolean()) {
    throw ProtocolError("malformed", "resume.edited must be a boolean");
  }
  d.edited = json["edited"].get<bool>();
  if (d.edited) {
    if (!json.contains("body")) {
      throw ProtocolError("missing-field", "edited resume without body");
    }
    d.body = json["body"];
  }
  return d;
}

std::optional<EventKind> wire_event_kind(std::string_view text) {
  auto kind = event_kind_from_string(text);
  if (kind && phase_of(*kind) == Phase::begin) {
    return kind;
  }
  return std::nullopt;
}

EventKind closing_kind(EventKind begin_kind) {
  return begin_kind == EventKind::llm_query ? EventKind::llm_response : EventKind::tool_result;
}

ProtocolState::Verdict ProtocolState::accept(std::string_view type,
                                             std::optional<EventKind> event_kind) {
  auto reject = [](std::string reason) { return Verdict{false, std::move(reason)}; };

  if (direction_of(type) != Direction::agent_to_server) {
    return reject("not_agent_message");
  }
  if (finished_) {
    return reject("after_goodbye");
  }
  if (type == msg::hello_agent) {
    if (handshaken_) {
      return reject("duplicate_hello");
    }
    handshaken_ = true;
    return {};
  }
  if (!handshaken_) {
    return reject("not_handshaken");
  }
  if (type == msg::event_begin) {
    if (!event_kind) {
      return reject("bad_event_kind");
    }
    if (outstanding_) {
      return reject("nested_begin");
    }
    outstanding_ = event_kind;
    return {};
  }
  if (type == msg::event_end) {
    if (!event_kind) {
      return reject("bad_event_kind");
    }
    if (!outstanding_ || *outstanding_ != *event_kind) {
      return reject("unmatched_end");
    }
    outstanding_.reset();
    return {};
  }
  if (type == msg::goodbye) {
    if (outstanding_) {
      return reject("outstanding_begin");
    }
    finished_ = true;
  }
  return {};
}

}  // namespace agentstepper
