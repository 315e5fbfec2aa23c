#include "agentstepper/sim.hpp"

#include <fstream>
#include <sstream>

#include "agentstepper/errors.hpp"

namespace agentstepper::sim {

namespace fs = std::filesystem;

namespace {

Holdable holdable_from_json(const Value& json) {
  Holdable h;
  if (json.is_boolean()) {
    const bool all = json.get<bool>();
    return Holdable{all, all, all, all};
  }
  if (!json.is_object()) {
    throw UsageError("cycle.holdable must be a boolean or an object");
  }
  h.llm_query = json.value("llm_query", true);
  h.llm_response = json.value("llm_response", true);
  h.tool_invocation = json.value("tool_invocation", true);
  h.tool_result = json.value("tool_result", true);
  return h;
}

ScriptCycle cycle_from_json(const Value& json, std::size_t index) {
  const auto where = "cycle " + std::to_string(index) + ": ";
  if (!json.is_object()) {
    throw UsageError(where + "must be an object");
  }
  for (const char* field : {"prompt", "response", "tool"}) {
    if (!json.contains(field)) {
      throw UsageError(where + "missing \"" + field + "\"");
    }
  }
  if (!json["tool"].is_string()) {
    throw UsageError(where + "\"tool\" must be a string");
  }
  ScriptCycle c;
  c.prompt = json["prompt"];
  c.response = json["response"];
  c.tool = json["tool"].get<std::string>();
  c.args = json.value("args", Value::object());
  if (json.contains("holdable")) {
    c.holdable = holdable_from_json(json["holdable"]);
  }
  if (json.contains("debug")) {
    const auto& debug = json["debug"];
    if (debug.is_string()) {
      c.debug_messages.push_back(debug.get<std::string>());
    } else {
      c.debug_messages = debug.get<std::vector<std::string>>();
    }
  }
  if (json.contains("commit")) {
    const auto& commit = json["commit"];
    if (commit.is_boolean()) {
      c.commit = commit.get<bool>();
    } else if (commit.is_object()) {
      c.commit = true;
      if (commit.contains("summary")) c.commit_summary = commit["summary"].get<std::string>();
      if (commit.contains("description")) c.commit_description = commit["description"].get<std::string>();
    } else {
      throw UsageError(where + "\"commit\" must be a boolean or an object");
    }
  }
  return c;
}

Value cycle_to_json(const ScriptCycle& c) {
  Value json{{"prompt", c.prompt}, {"response", c.response}, {"tool", c.tool}, {"args", c.args}};
  json["holdable"] = Value{{"llm_query", c.holdable.llm_query},
                           {"llm_response", c.holdable.llm_response},
                           {"tool_invocation", c.holdable.tool_invocation},
                           {"tool_result", c.holdable.tool_result}};
  if (!c.debug_messages.empty()) {
    json["debug"] = c.debug_messages;
  }
  if (c.commit) {
    Value commit = Value::object();
    if (c.commit_summary) commit["summary"] = *c.commit_summary;
    if (c.commit_description) commit["description"] = *c.commit_description;
    json["commit"] = commit.empty() ? Value(true) : commit;
  }
  return json;
}

// Resolves a sandbox-relative path; nullopt when it would escape the sandbox.
std::optional<fs::path> sandbox_path(const fs::path& sandbox, const Value& path) {
  if (!path.is_string()) {
    return std::nullopt;
  }
  const fs::path rel = fs::path(path.get<std::string>()).lexically_normal();
  if (rel.empty() || rel.is_absolute() || *rel.begin() == ".." || *rel.begin() == ".git") {
    return std::nullopt;
  }
  return sandbox / rel;
}

Value compose_prompt(const Value& prompt, const std::optional<Value>& observation) {
  if (!observation) {
    return prompt;
  }
  if (prompt.is_string()) {
    const auto text = observation->is_string() ? observation->get<std::string>() : observation->dump();
    return prompt.get<std::string>() + "\n\nObservation: " + text;
  }
  auto structured = prompt;
  if (structured.is_object()) {
    structured["observation"] = *observation;
  }
  return structured;
}

}  // namespace

AgentScript AgentScript::from_json(const Value& json) {
  if (!json.is_object() || !json.contains("cycles") || !json["cycles"].is_array()) {
    throw UsageError("agent script must be an object with a \"cycles\" array");
  }
  AgentScript script;
  script.agent_name = json.value("agent_name", script.agent_name);
  for (std::size_t i = 0; i < json["cycles"].size(); ++i) {
    script.cycles.push_back(cycle_from_json(json["cycles"][i], i));
  }
  return script;
}

AgentScript AgentScript::load(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) {
    throw UsageError("cannot read script " + file.string());
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  auto json = Value::parse(buffer.str(), nullptr, false);
  if (json.is_discarded()) {
    throw UsageError("script " + file.string() + " is not valid JSON");
  }
  return from_json(json);
}

Value AgentScript::to_json() const {
  Value cycles_json = Value::array();
  for (const auto& c : cycles) {
    cycles_json.push_back(cycle_to_json(c));
  }
  return Value{{"agent_name", agent_name}, {"cycles", std::move(cycles_json)}};
}

Value execute_tool(const fs::path& sandbox, const std::string& tool, const Value& args) {
  auto error = [](const std::string& message) { return Value("error: " + message); };
  if (tool == "noop") {
    return "ok";
  }
  if (tool == "fail") {
    return error(args.is_object() ? args.value("message", std::string("tool failed")) : "tool failed");
  }
  if (tool != "write_file" && tool != "delete_file" && tool != "append_file") {
    return error("unknown tool " + tool);
  }
  if (!args.is_object()) {
    return error(tool + " expects an object of arguments");
  }
  auto target = sandbox_path(sandbox, args.value("path", Value()));
  if (!target) {
    return error("invalid path argument");
  }
  std::error_code ec;
  if (tool == "delete_file") {
    if (!fs::remove(*target, ec) || ec) {
      return error("no such file " + args["path"].get<std::string>());
    }
    return "deleted " + args["path"].get<std::string>();
  }
  fs::create_directories(target->parent_path(), ec);
  if (tool == "write_file") {
    const auto& contents = args.value("contents", Value(""));
    const auto text = contents.is_string() ? contents.get<std::string>() : contents.dump();
    std::ofstream out(*target, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) {
      return error("cannot write " + args["path"].get<std::string>());
    }
    return "wrote " + std::to_string(text.size()) + " bytes to " + args["path"].get<std::string>();
  }
  const auto& line = args.value("line", Value(""));
  std::ofstream out(*target, std::ios::binary | std::ios::app);
  out << (line.is_string() ? line.get<std::string>() : line.dump()) << '\n';
  if (!out) {
    return error("cannot append to " + args["path"].get<std::string>());
  }
  return "appended a line to " + args["path"].get<std::string>();
}

Value ScriptReport::to_json() const {
  Value calls_json = Value::array();
  for (const auto& c : calls) {
    calls_json.push_back(Value{{"call", c.call}, {"cycle", c.cycle}, {"sent", c.sent}, {"received", c.received}});
  }
  Value json{{"script", script.to_json()},
             {"run_id", run_id},
             {"completed", completed},
             {"calls", std::move(calls_json)},
             {"trajectory", trajectory}};
  if (error) {
    json["error"] = *error;
  }
  return json;
}

ScriptReport ScriptReport::from_json(const Value& json) {
  ScriptReport report;
  report.script = AgentScript::from_json(json.at("script"));
  report.run_id = json.value("run_id", "");
  report.completed = json.value("completed", false);
  if (json.contains("error")) {
    report.error = json["error"].get<std::string>();
  }
  for (const auto& c : json.value("calls", Value::array())) {
    report.calls.push_back(CallRecord{c.at("call").get<std::string>(), c.value("cycle", std::int64_t{0}),
                                      c.value("sent", Value()), c.value("received", Value())});
  }
  report.trajectory = json.value("trajectory", Value::array());
  return report;
}

ScriptReport run_script(const AgentScript& script, const std::string& host, int port, const fs::path& sandbox,
                        const RunOptions& options) {
  ScriptReport report;
  report.script = script;
  std::optional<fs::path> workspace;
  if (options.use_workspace) {
    workspace = sandbox;
  }
  auto debugger = std::make_unique<AgentStepper>(script.agent_name, host, port, workspace,
                                                 AgentStepper::Options{options.reply_timeout});
  report.run_id = debugger->run_id();
  auto record = [&](std::string call, std::int64_t cycle, Value sent, Value received) {
    report.calls.push_back(CallRecord{std::move(call), cycle, std::move(sent), std::move(received)});
  };

  try {
    std::optional<Value> observation;
    for (std::size_t i = 0; i < script.cycles.size(); ++i) {
      const auto& c = script.cycles[i];
      const auto cycle = static_cast<std::int64_t>(i);
      for (const auto& text : c.debug_messages) {
        debugger->post_debug_message(text);
        record("debug", cycle, text, nullptr);
      }
      auto prompt = compose_prompt(c.prompt, observation);
      auto sent_prompt = prompt;
      record("begin_llm_query", cycle, std::move(sent_prompt),
             debugger->begin_llm_query_breakpoint(std::move(prompt), c.holdable.llm_query));
      record("end_llm_query", cycle, c.response,
             debugger->end_llm_query_breakpoint(c.response, c.holdable.llm_response));
      auto [tool, args] = debugger->begin_tool_invocation_breakpoint(c.tool, c.args, c.holdable.tool_invocation);
      record("begin_tool", cycle, Value{{"tool", c.tool}, {"args", c.args}}, Value{{"tool", tool}, {"args", args}});
      auto output = execute_tool(sandbox, tool, args);
      auto result = debugger->end_tool_invocation_breakpoint(output, c.holdable.tool_result);
      record("end_tool", cycle, output, result);
      observation = result;
      if (c.commit) {
        Value sent = Value::object();
        if (c.commit_summary) sent["summary"] = *c.commit_summary;
        if (c.commit_description) sent["description"] = *c.commit_description;
        record("commit", cycle, sent, debugger->commit_agent_changes(c.commit_summary, c.commit_description));
      }
    }
    debugger->finish();
    report.completed = true;
  } catch (const FatalError& ex) {
    report.error = ex.what();
  } catch (const ConnectionError& ex) {
    report.error = ex.what();
  }
  debugger.reset();

  if (report.completed && options.fetch_trajectory) {
    report.trajectory = normalize_events(fetch_events(host, port, report.run_id, options.fetch_timeout));
  }
  return report;
}

std::vector<Event> fetch_events(const std::string& host, int port, const std::string& run_id, Millis timeout) {
  {
    // Wait for the run to end and for its summaries to be written.
    UiClient watcher(host, port);
    watcher.send(msg::subscribe, Value{{"run_id", run_id}});
    auto settled = watcher.wait_for(
        [&](const Envelope& e) {
          if (e.type == msg::error) {
            throw NotFoundError(e.payload.value("message", "cannot subscribe to " + run_id));
          }
          return e.type == msg::state_changed && e.run_id == run_id && e.payload.value("status", "") != "live" &&
                 e.payload.value("summaries_pending", std::int64_t{1}) == 0;
        },
        timeout);
    if (!settled) {
      throw ConnectionError("run " + run_id + " did not settle in time");
    }
  }
  UiClient reader(host, port);
  reader.send(msg::subscribe, Value{{"run_id", run_id}});
  std::vector<Event> events;
  for (;;) {
    auto env = reader.wait_for(
        [](const Envelope& e) { return e.type == msg::event_appended || e.type == msg::state_changed; }, timeout);
    if (!env) {
      throw ConnectionError("timed out reading run " + run_id);
    }
    if (env->type == msg::state_changed) {
      return events;
    }
    events.push_back(event_from_json(env->payload.at("event")));
  }
}

Value normalize_events(const std::vector<Event>& events) {
  Value out = Value::array();
  for (const auto& event : events) {
    auto json = agentstepper::to_json(event);
    json.erase("timestamp");
    json.erase("commit_id");
    if (json.contains("commits")) {
      for (auto& commit : json["commits"]) {
        commit.erase("commit_id");
        commit.erase("timestamp");
      }
    }
    out.push_back(std::move(json));
  }
  return out;
}

ReplayVerdict compare_trajectories(const Value& recorded, const Value& replayed) {
  auto clip = [](const Value& v) {
    auto text = v.dump();
    return text.size() > 300 ? text.substr(0, 300) + "..." : text;
  };
  const auto common = std::min(recorded.size(), replayed.size());
  for (std::size_t i = 0; i < common; ++i) {
    if (recorded[i] != replayed[i]) {
      return ReplayVerdict{false, static_cast<std::int64_t>(i),
                           "event " + std::to_string(i) + " differs: recorded " + clip(recorded[i]) +
                               ", replayed " + clip(replayed[i])};
    }
  }
  if (recorded.size() != replayed.size()) {
    return ReplayVerdict{false, static_cast<std::int64_t>(common),
                         "recorded run has " + std::to_string(recorded.size()) + " events, replay has " +
                             std::to_string(replayed.size())};
  }
  return ReplayVerdict{true, std::nullopt, "identical (" + std::to_string(recorded.size()) + " events)"};
}

ReplayVerdict record_and_replay(const ScriptReport& recorded, const std::string& host, int port,
                                const fs::path& sandbox, const RunOptions& options) {
  auto run_options = options;
  run_options.fetch_trajectory = true;
  auto replay = run_script(recorded.script, host, port, sandbox, run_options);
  if (!replay.completed) {
    return ReplayVerdict{false, std::nullopt, "replay did not complete: " + replay.error.value_or("unknown error")};
  }
  return compare_trajectories(recorded.trajectory, replay.trajectory);
}

}  // namespace agentstepper::sim
