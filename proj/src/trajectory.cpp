#include "agentstepper/trajectory.hpp"

#include <array>
#include <charconv>
#include <stdexcept>

#include "agentstepper/errors.hpp"

namespace agentstepper {
namespace {

using namespace std::chrono;

template <typename Enum, std::size_t N>
std::optional<Enum> lookup(const std::array<std::string_view, N>& names, std::string_view text) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == text) {
      return static_cast<Enum>(i);
    }
  }
  return std::nullopt;
}

constexpr std::array<std::string_view, 2> kModeNames{"interactive", "post_hoc"};
constexpr std::array<std::string_view, 4> kStatusNames{"live", "completed", "aborted", "imported"};
constexpr std::array<std::string_view, 5> kKindNames{"llm_query", "llm_response", "tool_invocation",
                                                     "tool_result", "debug_message"};
constexpr std::array<std::string_view, 2> kPhaseNames{"begin", "end"};

bool read_int(std::string_view text, std::size_t pos, std::size_t len, int& out) {
  if (pos + len > text.size()) {
    return false;
  }
  auto [ptr, ec] = std::from_chars(text.data() + pos, text.data() + pos + len, out);
  return ec == std::errc{} && ptr == text.data() + pos + len;
}

const Value& require(const Value& json, const char* field) {
  if (!json.is_object()) {
    throw std::invalid_argument("expected an object");
  }
  auto it = json.find(field);
  if (it == json.end()) {
    throw std::invalid_argument(std::string("missing field \"") + field + "\"");
  }
  return *it;
}

std::string require_string(const Value& json, const char* field) {
  const auto& v = require(json, field);
  if (!v.is_string()) {
    throw std::invalid_argument(std::string("field \"") + field + "\" must be a string");
  }
  return v.get<std::string>();
}

std::int64_t require_count(const Value& json, const char* field) {
  const auto& v = require(json, field);
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
    throw std::invalid_argument(std::string("field \"") + field +
                                "\" must be a nonnegative integer");
  }
  return v.get<std::int64_t>();
}

bool require_bool(const Value& json, const char* field) {
  const auto& v = require(json, field);
  if (!v.is_boolean()) {
    throw std::invalid_argument(std::string("field \"") + field + "\" must be a boolean");
  }
  return v.get<bool>();
}

Timestamp require_timestamp(const Value& json, const char* field) {
  auto text = require_string(json, field);
  auto ts = parse_timestamp(text);
  if (!ts) {
    throw std::invalid_argument(std::string("field \"") + field +
                                "\" is not an RFC-3339 timestamp: " + text);
  }
  return *ts;
}

std::optional<std::string> optional_string(const Value& json, const char* field) {
  auto it = json.find(field);
  if (it == json.end() || it->is_null()) {
    return std::nullopt;
  }
  if (!it->is_string()) {
    throw std::invalid_argument(std::string("field \"") + field + "\" must be a string");
  }
  return it->get<std::string>();
}

}  // namespace

Timestamp now() { return floor<milliseconds>(system_clock::now()); }

std::string format_timestamp(Timestamp ts) {
  auto days = floor<std::chrono::days>(ts);
  year_month_day ymd{days};
  hh_mm_ss hms{ts - days};
  std::array<char, 32> buf{};
  std::snprintf(buf.data(), buf.size(), "%04d-%02u-%02uT%02d:%02d:%02d.%03dZ",
                static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()), static_cast<int>(hms.hours().count()),
                static_cast<int>(hms.minutes().count()), static_cast<int>(hms.seconds().count()),
                static_cast<int>(hms.subseconds().count()));
  return buf.data();
}

std::optional<Timestamp> parse_timestamp(std::string_view text) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  if (text.size() < 20 || text[4] != '-' || text[7] != '-' || (text[10] != 'T' && text[10] != 't') ||
      text[13] != ':' || text[16] != ':') {
    return std::nullopt;
  }
  if (!read_int(text, 0, 4, y) || !read_int(text, 5, 2, mo) || !read_int(text, 8, 2, d) ||
      !read_int(text, 11, 2, h) || !read_int(text, 14, 2, mi) || !read_int(text, 17, 2, s)) {
    return std::nullopt;
  }
  year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || s > 60) {
    return std::nullopt;
  }
  std::size_t pos = 19;
  milliseconds fraction{0};
  if (pos < text.size() && text[pos] == '.') {
    ++pos;
    int digits = 0;
    int ms = 0;
    while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') {
      if (digits < 3) {
        ms = ms * 10 + (text[pos] - '0');
      }
      ++digits;
      ++pos;
    }
    if (digits == 0) {
      return std::nullopt;
    }
    for (int i = digits; i < 3; ++i) {
      ms *= 10;
    }
    fraction = milliseconds{ms};
  }
  minutes offset{0};
  if (pos < text.size() && (text[pos] == 'Z' || text[pos] == 'z')) {
    ++pos;
  } else if (pos < text.size() && (text[pos] == '+' || text[pos] == '-')) {
    int oh = 0, om = 0;
    if (pos + 6 > text.size() || text[pos + 3] != ':' || !read_int(text, pos + 1, 2, oh) ||
        !read_int(text, pos + 4, 2, om)) {
      return std::nullopt;
    }
    offset = hours{oh} + minutes{om};
    if (text[pos] == '-') {
      offset = -offset;
    }
    pos += 6;
  } else {
    return std::nullopt;
  }
  if (pos != text.size()) {
    return std::nullopt;
  }
  return Timestamp{sys_days{ymd} + hours{h} + minutes{mi} + seconds{s} + fraction - offset};
}

std::string_view to_string(RunMode mode) { return kModeNames[static_cast<std::size_t>(mode)]; }
std::string_view to_string(RunStatus status) {
  return kStatusNames[static_cast<std::size_t>(status)];
}
std::string_view to_string(EventKind kind) { return kKindNames[static_cast<std::size_t>(kind)]; }
std::string_view to_string(Phase phase) { return kPhaseNames[static_cast<std::size_t>(phase)]; }

std::optional<RunMode> run_mode_from_string(std::string_view text) {
  return lookup<RunMode>(kModeNames, text);
}
std::optional<RunStatus> run_status_from_string(std::string_view text) {
  return lookup<RunStatus>(kStatusNames, text);
}
std::optional<EventKind> event_kind_from_string(std::string_view text) {
  return lookup<EventKind>(kKindNames, text);
}
std::optional<Phase> phase_from_string(std::string_view text) {
  return lookup<Phase>(kPhaseNames, text);
}

std::vector<CommitRecord> Trajectory::commits() const {
  std::vector<CommitRecord> out;
  for (const auto& event : events) {
    out.insert(out.end(), event.commits.begin(), event.commits.end());
  }
  return out;
}

std::vector<Cycle> Trajectory::cycles() const {
  std::vector<Cycle> out;
  for (const auto& event : events) {
    if (out.empty() || out.back().cycle_index != event.cycle_index) {
      out.push_back(Cycle{event.cycle_index, {}});
    }
    out.back().event_ids.push_back(event.event_id);
  }
  return out;
}

std::int64_t CycleTracker::next(EventKind kind) {
  if (kind == EventKind::llm_query && current_has_events_) {
    ++current_;
  }
  current_has_events_ = true;
  return current_;
}

std::int64_t assign_cycle(std::span<const EventKind> previous, EventKind next) {
  CycleTracker tracker;
  for (auto kind : previous) {
    tracker.next(kind);
  }
  return tracker.next(next);
}

void validate(const Trajectory& trajectory) {
  const auto& run = trajectory.run;
  if (run.run_id.empty()) {
    throw IntegrityError("run_id is empty");
  }
  if (run.status == RunStatus::live && run.ended_at) {
    throw IntegrityError("live run has ended_at");
  }
  if (!run.workspace_path && (run.original_branch || run.run_branch)) {
    throw IntegrityError("branches recorded without a workspace_path");
  }
  if (run.mode == RunMode::post_hoc && run.status != RunStatus::imported) {
    throw IntegrityError("post_hoc run must have status imported");
  }
  if (run.event_count != static_cast<std::int64_t>(trajectory.events.size())) {
    throw IntegrityError("event_count " + std::to_string(run.event_count) + " but " +
                         std::to_string(trajectory.events.size()) + " events");
  }

  CycleTracker cycles;
  for (std::size_t i = 0; i < trajectory.events.size(); ++i) {
    const auto& e = trajectory.events[i];
    const auto where = "event " + std::to_string(e.event_id) + ": ";
    if (e.event_id != static_cast<std::int64_t>(i)) {
      throw IntegrityError("event_id " + std::to_string(e.event_id) + " where " +
                           std::to_string(i) + " expected");
    }
    if (e.cycle_index != cycles.next(e.kind)) {
      throw IntegrityError(where + "cycle_index " + std::to_string(e.cycle_index) +
                           " does not follow the llm_query boundaries");
    }
    if (e.tool_name.has_value() != (e.kind == EventKind::tool_invocation)) {
      throw IntegrityError(where + "tool_name must be present exactly on tool_invocation");
    }
    if (e.kind == EventKind::tool_invocation) {
      if (!e.body.is_object() || !e.body.contains("tool") || e.body["tool"] != *e.tool_name) {
        throw IntegrityError(where + "tool_invocation body must be {tool, args} matching tool_name");
      }
    }
    if (e.edited && !e.held) {
      throw IntegrityError(where + "edited event was never held");
    }
    if (e.edited != e.original_body.has_value()) {
      throw IntegrityError(where + "original_body must be present exactly when edited");
    }
    if (e.edited && *e.original_body == e.body) {
      throw IntegrityError(where + "edited body equals original_body");
    }
    if (e.commit_id.has_value() != !e.commits.empty() ||
        (e.commit_id && e.commits.back().commit_id != *e.commit_id)) {
      throw IntegrityError(where + "commit_id must name the event's latest commit");
    }
    for (const auto& c : e.commits) {
      if (c.triggering_event_id != e.event_id) {
        throw IntegrityError(where + "commit " + c.commit_id + " names triggering event " +
                             std::to_string(c.triggering_event_id));
      }
      if (c.files_changed < 1) {
        throw IntegrityError(where + "commit " + c.commit_id + " changes no files");
      }
    }
  }
}

Value to_json(const CommitRecord& commit) {
  return Value{{"commit_id", commit.commit_id},
               {"message_summary", commit.message_summary},
               {"message_description", commit.message_description},
               {"triggering_event_id", commit.triggering_event_id},
               {"files_changed", commit.files_changed},
               {"insertions", commit.insertions},
               {"deletions", commit.deletions},
               {"timestamp", format_timestamp(commit.timestamp)}};
}

Value to_json(const Event& event) {
  Value json{{"event_id", event.event_id},
             {"kind", to_string(event.kind)},
             {"cycle_index", event.cycle_index},
             {"timestamp", format_timestamp(event.timestamp)},
             {"body", event.body},
             {"phase", to_string(event.phase())},
             {"held", event.held},
             {"edited", event.edited}};
  if (event.tool_name) {
    json["tool_name"] = *event.tool_name;
  }
  if (event.original_body) {
    json["original_body"] = *event.original_body;
  }
  if (event.summary) {
    json["summary"] = *event.summary;
  }
  if (event.commit_id) {
    json["commit_id"] = *event.commit_id;
  }
  if (!event.commits.empty()) {
    auto& commits = json["commits"] = Value::array();
    for (const auto& c : event.commits) {
      commits.push_back(to_json(c));
    }
  }
  return json;
}

Value to_json(const RunRecord& run) {
  Value json{{"run_id", run.run_id},
             {"agent_name", run.agent_name},
             {"mode", to_string(run.recorded_mode.value_or(run.mode))},
             {"status", to_string(run.recorded_status.value_or(run.status))},
             {"started_at", format_timestamp(run.started_at)},
             {"event_count", run.event_count}};
  if (run.ended_at) {
    json["ended_at"] = format_timestamp(*run.ended_at);
  }
  if (run.workspace_path) {
    json["workspace_path"] = *run.workspace_path;
  }
  if (run.original_branch) {
    json["original_branch"] = *run.original_branch;
  }
  if (run.run_branch) {
    json["run_branch"] = *run.run_branch;
  }
  return json;
}

CommitRecord commit_from_json(const Value& json) {
  CommitRecord c;
  c.commit_id = require_string(json, "commit_id");
  c.message_summary = require_string(json, "message_summary");
  c.message_description = require_string(json, "message_description");
  c.triggering_event_id = require_count(json, "triggering_event_id");
  c.files_changed = require_count(json, "files_changed");
  c.insertions = require_count(json, "insertions");
  c.deletions = require_count(json, "deletions");
  c.timestamp = require_timestamp(json, "timestamp");
  return c;
}

Event event_from_json(const Value& json) {
  Event e;
  e.event_id = require_count(json, "event_id");
  auto kind_text = require_string(json, "kind");
  auto kind = event_kind_from_string(kind_text);
  if (!kind) {
    throw std::invalid_argument("unknown event kind \"" + kind_text + "\"");
  }
  e.kind = *kind;
  e.cycle_index = require_count(json, "cycle_index");
  e.timestamp = require_timestamp(json, "timestamp");
  e.body = require(json, "body");
  auto phase = phase_from_string(require_string(json, "phase"));
  if (!phase || *phase != phase_of(e.kind)) {
    throw std::invalid_argument("phase does not match kind " + kind_text);
  }
  e.held = require_bool(json, "held");
  e.edited = require_bool(json, "edited");
  e.tool_name = optional_string(json, "tool_name");
  if (auto it = json.find("original_body"); it != json.end()) {
    e.original_body = *it;
  }
  e.summary = optional_string(json, "summary");
  e.commit_id = optional_string(json, "commit_id");
  if (auto it = json.find("commits"); it != json.end()) {
    if (!it->is_array()) {
      throw std::invalid_argument("field \"commits\" must be an array");
    }
    for (const auto& c : *it) {
      e.commits.push_back(commit_from_json(c));
    }
  }
  return e;
}

RunRecord run_from_json(const Value& json) {
  RunRecord run;
  run.run_id = require_string(json, "run_id");
  run.agent_name = require_string(json, "agent_name");
  auto mode = run_mode_from_string(require_string(json, "mode"));
  if (!mode) {
    throw std::invalid_argument("unknown run mode");
  }
  run.mode = *mode;
  auto status = run_status_from_string(require_string(json, "status"));
  if (!status) {
    throw std::invalid_argument("unknown run status");
  }
  run.status = *status;
  run.started_at = require_timestamp(json, "started_at");
  if (json.contains("ended_at")) {
    run.ended_at = require_timestamp(json, "ended_at");
  }
  run.workspace_path = optional_string(json, "workspace_path");
  run.original_branch = optional_string(json, "original_branch");
  run.run_branch = optional_string(json, "run_branch");
  run.event_count = require_count(json, "event_count");
  return run;
}

std::string serialize_header(const RunRecord& run, SerializeOptions options) {
  Value header{{"schema", kTrajectorySchema}, {"run", to_json(run)}};
  if (options.mark_imported) {
    header["imported"] = true;
  }
  return header.dump() + "\n";
}

std::string serialize_event(const Event& event) { return to_json(event).dump() + "\n"; }

std::string serialize_run(const Trajectory& trajectory, SerializeOptions options) {
  std::string out = serialize_header(trajectory.run, options);
  for (const auto& event : trajectory.events) {
    out += serialize_event(event);
  }
  return out;
}

Trajectory deserialize_run(std::string_view document) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < document.size()) {
    auto nl = document.find('\n', start);
    if (nl == std::string_view::npos) {
      lines.push_back(document.substr(start));
      break;
    }
    lines.push_back(document.substr(start, nl - start));
    start = nl + 1;
  }
  if (lines.empty()) {
    throw ParseError(1, "empty document, expected a metadata header");
  }

  Trajectory trajectory;
  {
    Value header = Value::parse(lines[0], nullptr, false);
    if (header.is_discarded() || !header.is_object()) {
      throw ParseError(1, "metadata header is not a valid record");
    }
    if (header.value("schema", "") != kTrajectorySchema) {
      throw ParseError(1, "unsupported schema, expected " + std::string(kTrajectorySchema));
    }
    try {
      trajectory.run = run_from_json(header.at("run"));
    } catch (const std::exception& ex) {
      throw ParseError(1, std::string("bad run record: ") + ex.what());
    }
  }

  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto line_no = static_cast<std::int64_t>(i + 1);
    if (lines[i].empty()) {
      throw ParseError(line_no, "empty line");
    }
    Value record = Value::parse(lines[i], nullptr, false);
    if (record.is_discarded()) {
      throw ParseError(line_no, "not a valid event record (truncated or malformed)");
    }
    Event event;
    try {
      event = event_from_json(record);
    } catch (const std::exception& ex) {
      throw ParseError(line_no, ex.what());
    }
    const auto expected = static_cast<std::int64_t>(trajectory.events.size());
    if (event.event_id != expected) {
      throw IntegrityError(line_no, "event_id " + std::to_string(event.event_id) + " where " +
                                        std::to_string(expected) +
                                        " expected (event ids must be consecutive)");
    }
    trajectory.events.push_back(std::move(event));
  }

  const auto found = static_cast<std::int64_t>(trajectory.events.size());
  if (found != trajectory.run.event_count) {
    throw IntegrityError(static_cast<std::int64_t>(lines.size()) + 1,
                         "document ends after " + std::to_string(found) +
                             " events but the header declares " +
                             std::to_string(trajectory.run.event_count));
  }

  auto& run = trajectory.run;
  run.recorded_mode = run.mode;
  run.recorded_status = run.status;
  run.mode = RunMode::post_hoc;
  run.status = RunStatus::imported;
  validate(trajectory);
  return trajectory;
}

}  // namespace agentstepper
