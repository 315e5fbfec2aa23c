#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "agentstepper/client.hpp"
#include "agentstepper/trajectory.hpp"

namespace agentstepper::sim {

// Per-event holdable flags of one cycle.
struct Holdable {
  bool llm_query = true;
  bool llm_response = true;
  bool tool_invocation = true;
  bool tool_result = true;
};

struct ScriptCycle {
  Value prompt;    // string or structured
  Value response;  // canned LLM response
  std::string tool;
  Value args = Value::object();
  Holdable holdable;
  std::vector<std::string> debug_messages;  // posted before the prompt
  bool commit = false;                      // explicit commit after the tool result
  std::optional<std::string> commit_summary;
  std::optional<std::string> commit_description;
};

// Tools the sim understands (selected by name on the possibly edited call):
//   write_file {path, contents}   delete_file {path}   append_file {path, line}
//   noop {}                       fail {message}
struct AgentScript {
  std::string agent_name = "sim-agent";
  std::vector<ScriptCycle> cycles;

  [[nodiscard]] static AgentScript from_json(const Value& json);
  [[nodiscard]] static AgentScript load(const std::filesystem::path& file);
  [[nodiscard]] Value to_json() const;
};

// Executes one tool call against the sandbox and returns its output.
[[nodiscard]] Value execute_tool(const std::filesystem::path& sandbox, const std::string& tool, const Value& args);

// One API call as seen by the agent.
struct CallRecord {
  std::string call;  // begin_llm_query, end_llm_query, begin_tool, end_tool, commit, debug
  std::int64_t cycle = 0;
  Value sent;
  Value received;
};

struct ScriptReport {
  AgentScript script;
  std::string run_id;
  bool completed = false;
  std::optional<std::string> error;  // fatal reason or connection failure
  std::vector<CallRecord> calls;
  // Normalized persisted events (see normalize_events), filled by run_script
  // when `fetch_trajectory` is set.
  Value trajectory = Value::array();

  [[nodiscard]] Value to_json() const;
  [[nodiscard]] static ScriptReport from_json(const Value& json);
};

struct RunOptions {
  bool use_workspace = true;  // pass the sandbox as workspace_path
  bool fetch_trajectory = true;
  std::optional<Millis> reply_timeout;
  Millis fetch_timeout{30000};
};

// Runs the script against a server. Throws ConnectionError when the server
// cannot be reached; a fatal reply ends the run and is recorded in the report.
ScriptReport run_script(const AgentScript& script, const std::string& host, int port,
                        const std::filesystem::path& sandbox, const RunOptions& options = {});

// Waits until the run is finished and its summaries are in, then returns its
// events as a UI client sees them.
[[nodiscard]] std::vector<Event> fetch_events(const std::string& host, int port, const std::string& run_id,
                                              Millis timeout);

// Drops what legitimately differs between two executions of one script:
// timestamps, commit hashes and run identity.
[[nodiscard]] Value normalize_events(const std::vector<Event>& events);

struct ReplayVerdict {
  bool identical = false;
  std::optional<std::int64_t> first_difference;  // event_id
  std::string detail;
};

[[nodiscard]] ReplayVerdict compare_trajectories(const Value& recorded, const Value& replayed);

// Runs the recorded script again and compares the persisted trajectories.
ReplayVerdict record_and_replay(const ScriptReport& recorded, const std::string& host, int port,
                                const std::filesystem::path& sandbox, const RunOptions& options = {});

}  // namespace agentstepper::sim
