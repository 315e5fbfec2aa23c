#include <doctest.h>

#include <set>
#include <thread>

#include "agentstepper/client.hpp"
#include "agentstepper/errors.hpp"
#include "agentstepper/sim.hpp"
#include "support.hpp"

using namespace agentstepper;
using namespace std::chrono_literals;
using testing::TempDir;
using testing::TestServer;

namespace {

const std::string kHost = "127.0.0.1";

sim::AgentScript three_cycles() {
  return sim::AgentScript::from_json(Value::parse(R"({
    "agent_name": "ThreeCycles",
    "cycles": [
      {"prompt": "Create the greeting file", "response": "write_file notes.txt",
       "tool": "write_file", "args": {"path": "notes.txt", "contents": "hello\n"}},
      {"prompt": "Add a second line", "response": "append_file notes.txt",
       "tool": "append_file", "args": {"path": "notes.txt", "line": "world"}},
      {"prompt": "Add a module", "response": "write_file src/mod.py",
       "tool": "write_file", "args": {"path": "src/mod.py", "contents": "x = 1\n"}}
    ]
  })"));
}

std::string wait_live_run(UiClient& ui) {
  ui.send("list_runs");
  auto list = ui.wait_for(
      [](const Envelope& e) {
        if (e.type != "run_list") return false;
        for (const auto& r : e.payload["runs"]) {
          if (r["status"] == "live") return true;
        }
        return false;
      },
      10s);
  REQUIRE(list.has_value());
  for (const auto& r : list->payload["runs"]) {
    if (r["status"] == "live") return r["run_id"].get<std::string>();
  }
  return {};
}

bool wait_status(DebugHub& hub, const std::string& run_id, RunStatus status, std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (std::chrono::steady_clock::now() < deadline) {
    for (const auto& r : hub.list_runs()) {
      if (r.run_id == run_id && r.status == status) return true;
    }
    std::this_thread::sleep_for(20ms);
  }
  return false;
}

}  // namespace

TEST_CASE("a three-cycle run records twelve events and three commits") {
  TestServer server;
  TempDir sandbox;
  const auto report = sim::run_script(three_cycles(), kHost, server.port(), sandbox.path());
  REQUIRE(report.completed);
  CHECK(report.calls.size() == 12);

  auto t = server.hub().snapshot(report.run_id);
  REQUIRE(t.has_value());
  CHECK(t->run.status == RunStatus::completed);
  CHECK(t->events.size() == 12);
  CHECK(t->commits().size() == 3);
  CHECK(t->cycles().size() == 3);
  for (const auto& c : t->commits()) {
    CHECK(t->events[static_cast<std::size_t>(c.triggering_event_id)].kind == EventKind::tool_result);
  }
  CHECK(t->run.run_branch == "agentstepper/run-" + report.run_id);
  CHECK(testing::git(sandbox.path(), "rev-list --count " + *t->run.original_branch + ".." + *t->run.run_branch) ==
        "3");
  CHECK(testing::git(sandbox.path(), "symbolic-ref --short HEAD") == *t->run.original_branch);
  validate(*t);
}

TEST_CASE("an edit at a held tool invocation changes what the agent executes") {
  TestServer server([](ServerConfig& c) { c.initial_state = ExecState::stepping; });
  TempDir sandbox;
  sim::ScriptReport report;
  std::thread agent([&] { report = sim::run_script(three_cycles(), kHost, server.port(), sandbox.path()); });

  UiClient ui(kHost, server.port());
  const auto run_id = wait_live_run(ui);
  ui.send("subscribe", Value{{"run_id", run_id}}, run_id);

  const Value edited{{"tool", "write_file"}, {"args", {{"path", "edited.txt"}, {"contents", "E\n"}}}};
  std::set<std::int64_t> handled;
  bool done = false;
  while (!done) {
    auto msg = ui.wait_for_type("state_changed", 10s);
    REQUIRE(msg.has_value());
    const auto& p = msg->payload;
    if (p["status"] != "live") {
      done = true;
      break;
    }
    if (!p.contains("held_event_id")) continue;
    const auto held = p["held_event_id"].get<std::int64_t>();
    if (!handled.insert(held).second) continue;
    if (held == 6) {
      ui.send("edit", Value{{"run_id", run_id}, {"event_id", 6}, {"body", edited}}, run_id);
    }
    ui.send("control", Value{{"run_id", run_id}, {"command", "step"}}, run_id);
  }
  agent.join();
  REQUIRE(report.completed);
  CHECK(handled.size() == 12);

  const auto& call = report.calls[6];
  CHECK(call.call == "begin_tool");
  CHECK(call.received == edited);
  auto t = server.hub().snapshot(run_id);
  REQUIRE(t.has_value());
  // the run branch holds what the agent did; the working tree is back on the original branch
  const auto branch = *t->run.run_branch;
  CHECK(testing::git(sandbox.path(), "show " + branch + ":edited.txt") == "E");
  CHECK(testing::git(sandbox.path(), "show " + branch + ":notes.txt") == "hello");
  const auto& ev = t->events[6];
  CHECK(ev.edited);
  CHECK(ev.held);
  CHECK(ev.body == edited);
  CHECK(ev.tool_name == "write_file");
  REQUIRE(ev.original_body.has_value());
  CHECK((*ev.original_body)["tool"] == "append_file");
  CHECK((*ev.original_body)["args"]["path"] == "notes.txt");
}

TEST_CASE("agent disconnect after a begin aborts the run") {
  TestServer server;
  std::string run_id;
  {
    AgentStepper debugger("Quitter", kHost, server.port());
    run_id = debugger.run_id();
    (void)debugger.begin_llm_query_breakpoint("hello");
    debugger.abort();
  }
  REQUIRE(wait_status(server.hub(), run_id, RunStatus::aborted, 10s));
  auto t = server.hub().snapshot(run_id);
  REQUIRE(t.has_value());
  CHECK(t->events.size() == 1);
  CHECK(t->run.ended_at.has_value());
}

TEST_CASE("a protocol violation is fatal to the agent") {
  TestServer server;
  WireClient wire(kHost, server.port());
  wire.send(Envelope{kProtocolVersion, "hello_agent", {}, {}, 0, Value{{"agent_name", "bad"}}});
  auto ack = wire.receive(5s);
  REQUIRE(ack.has_value());
  CHECK(ack->type == "hello_ack");
  wire.send(Envelope{kProtocolVersion, "event_end", {}, ack->payload["run_id"], 0,
                     Value{{"event_kind", "llm_query"}, {"body", "r"}}});
  auto fatal = wire.receive(5s);
  REQUIRE(fatal.has_value());
  CHECK(fatal->type == "fatal");
  CHECK(fatal->payload["reason"] == "unmatched_end");
  CHECK(wire.wait_closed(5s));
}

TEST_CASE("runs survive a server restart") {
  TempDir data;
  TempDir sandbox;
  std::string run_id;
  std::string before;
  {
    TestServer server({}, data.path());
    auto report = sim::run_script(three_cycles(), kHost, server.port(), sandbox.path());
    REQUIRE(report.completed);
    run_id = report.run_id;
    server.hub().wait_idle();
    before = serialize_run(*server.hub().snapshot(run_id));
    server.stop();
  }
  TestServer restarted({}, data.path());
  auto t = restarted.hub().snapshot(run_id);
  REQUIRE(t.has_value());
  CHECK(t->run.status == RunStatus::completed);
  CHECK(serialize_run(*t) == before);
}

TEST_CASE("subscribe replays the run then its state") {
  TestServer server;
  TempDir sandbox;
  auto report = sim::run_script(three_cycles(), kHost, server.port(), sandbox.path());
  REQUIRE(report.completed);

  UiClient ui(kHost, server.port());
  ui.send("subscribe", Value{{"run_id", report.run_id}}, report.run_id);
  auto state = ui.wait_for_type("state_changed", 10s);
  REQUIRE(state.has_value());
  CHECK(state->payload["status"] == "completed");
  CHECK(state->payload["state"].is_null());

  std::vector<std::string> types;
  for (const auto& e : ui.history()) types.push_back(e.type);
  REQUIRE(types.size() >= 13);
  for (int i = 0; i < 12; ++i) {
    CHECK(types[static_cast<std::size_t>(i)] == "event_appended");
    CHECK(ui.history()[static_cast<std::size_t>(i)].payload["event"]["event_id"] == i);
  }
  CHECK(types.back() == "state_changed");
  CHECK(std::count(types.begin(), types.end(), "commit_appended") == 3);
  CHECK(std::count(types.begin(), types.end(), "summary_ready") == 12);
}

TEST_CASE("UI errors") {
  TestServer server;
  TempDir sandbox;
  auto report = sim::run_script(three_cycles(), kHost, server.port(), sandbox.path());
  REQUIRE(report.completed);
  UiClient ui(kHost, server.port());

  auto error_reason = [&] {
    auto e = ui.wait_for_type("error", 5s);
    REQUIRE(e.has_value());
    return e->payload["reason"].get<std::string>();
  };

  SUBCASE("unknown run") {
    ui.send("subscribe", Value{{"run_id", "nope"}}, "nope");
    CHECK(error_reason() == "not-found");
    ui.send("edit", Value{{"run_id", "nope"}, {"event_id", 0}, {"body", "x"}});
    CHECK(error_reason() == "not-found");
  }
  SUBCASE("finished runs are read-only") {
    ui.send("control", Value{{"run_id", report.run_id}, {"command", "step"}}, report.run_id);
    CHECK(error_reason() == "invalid-state");
  }
  SUBCASE("imported runs are read-only") {
    const auto doc = serialize_run(*server.hub().snapshot(report.run_id));
    ui.send("import_run", Value{{"document", doc}});
    auto list = ui.wait_for([](const Envelope& e) { return e.type == "run_list" && e.payload.contains("imported_run_id"); },
                            5s);
    REQUIRE(list.has_value());
    const auto imported = list->payload["imported_run_id"].get<std::string>();
    CHECK(imported != report.run_id);
    auto t = server.hub().snapshot(imported);
    REQUIRE(t.has_value());
    CHECK(t->run.status == RunStatus::imported);
    CHECK(t->run.mode == RunMode::post_hoc);
    ui.send("control", Value{{"run_id", imported}, {"command", "pause"}}, imported);
    CHECK(error_reason() == "invalid-state");
  }
  SUBCASE("malformed import names the line") {
    ui.send("import_run", Value{{"document", "{\"schema\":\"x\"}\n"}});
    auto e = ui.wait_for_type("error", 5s);
    REQUIRE(e.has_value());
    CHECK(e->payload["reason"] == "parse-error");
    CHECK(e->payload["message"].get<std::string>().find("line 1") != std::string::npos);
  }
}

TEST_CASE("stale edits are rejected") {
  TestServer server([](ServerConfig& c) { c.initial_state = ExecState::stepping; });
  std::atomic<bool> stop{false};
  std::string run_id;
  std::thread agent([&] {
    AgentStepper debugger("Held", kHost, server.port());
    (void)debugger.begin_llm_query_breakpoint("p");
    (void)debugger.end_llm_query_breakpoint("r");
  });
  UiClient ui(kHost, server.port());
  run_id = wait_live_run(ui);
  ui.send("subscribe", Value{{"run_id", run_id}}, run_id);
  auto held = ui.wait_for([](const Envelope& e) { return e.type == "state_changed" && e.payload.contains("held_event_id"); },
                          10s);
  REQUIRE(held.has_value());
  CHECK(held->payload["held_event_id"] == 0);
  ui.send("edit", Value{{"run_id", run_id}, {"event_id", 3}, {"body", "x"}}, run_id);
  auto err = ui.wait_for_type("error", 5s);
  REQUIRE(err.has_value());
  CHECK(err->payload["reason"] == "stale-edit");
  ui.send("control", Value{{"run_id", run_id}, {"command", "continue"}}, run_id);
  agent.join();
  REQUIRE(wait_status(server.hub(), run_id, RunStatus::completed, 10s));
}

TEST_CASE("hold timeout releases a forgotten hold") {
  TestServer server([](ServerConfig& c) {
    c.initial_state = ExecState::stepping;
    c.hold_timeout = 200ms;
  });
  AgentStepper debugger("Alone", kHost, server.port());
  const auto start = std::chrono::steady_clock::now();
  CHECK(debugger.begin_llm_query_breakpoint("p") == Value("p"));
  CHECK(std::chrono::steady_clock::now() - start >= 150ms);
  (void)debugger.end_llm_query_breakpoint("r");
  debugger.finish();
}

TEST_CASE("record and replay") {
  TempDir s1;
  TempDir s2;

  SUBCASE("identical replay") {
    TestServer server;
    auto report = sim::run_script(three_cycles(), kHost, server.port(), s1.path());
    REQUIRE(report.completed);
    CHECK(report.trajectory.size() == 12);
    auto round = sim::ScriptReport::from_json(report.to_json());
    auto verdict = sim::record_and_replay(round, kHost, server.port(), s2.path());
    CHECK(verdict.identical);
    CHECK_FALSE(verdict.first_difference.has_value());
  }
  SUBCASE("a changed response is reported at its event") {
    TestServer server;
    auto report = sim::run_script(three_cycles(), kHost, server.port(), s1.path());
    report.script.cycles[1].response = "something else";
    auto verdict = sim::record_and_replay(report, kHost, server.port(), s2.path());
    CHECK_FALSE(verdict.identical);
    CHECK(verdict.first_difference == 5);
  }
  SUBCASE("without auto-commit") {
    TestServer server([](ServerConfig& c) { c.auto_commit = false; });
    auto report = sim::run_script(three_cycles(), kHost, server.port(), s1.path());
    REQUIRE(report.completed);
    auto t = server.hub().snapshot(report.run_id);
    CHECK(t->commits().size() == 1);  // final snapshot at close
    CHECK(sim::record_and_replay(report, kHost, server.port(), s2.path()).identical);
  }
}

TEST_CASE("sim tools") {
  TempDir box;
  CHECK(sim::execute_tool(box.path(), "write_file", {{"path", "a/b.txt"}, {"contents", "hi"}}) ==
        "wrote 2 bytes to a/b.txt");
  CHECK(testing::read_file(box / "a/b.txt") == "hi");
  (void)sim::execute_tool(box.path(), "append_file", {{"path", "a/b.txt"}, {"line", "more"}});
  CHECK(testing::read_file(box / "a/b.txt") == "himore\n");
  CHECK(sim::execute_tool(box.path(), "delete_file", {{"path", "a/b.txt"}}) == "deleted a/b.txt");
  CHECK(sim::execute_tool(box.path(), "delete_file", {{"path", "a/b.txt"}}).get<std::string>().rfind("error: ", 0) == 0);
  CHECK(sim::execute_tool(box.path(), "write_file", {{"path", "../escape"}}).get<std::string>().rfind("error: ", 0) == 0);
  CHECK(sim::execute_tool(box.path(), "fail", {{"message", "boom"}}) == "error: boom");
  CHECK(sim::execute_tool(box.path(), "noop", Value::object()) == "ok");
  CHECK(sim::execute_tool(box.path(), "teleport", Value::object()) == "error: unknown tool teleport");

  const auto script = three_cycles();
  CHECK(sim::AgentScript::from_json(script.to_json()).to_json() == script.to_json());
}

TEST_CASE("several agents can run at once") {
  TestServer server;
  std::vector<TempDir> boxes(3);
  std::vector<sim::ScriptReport> reports(3);
  std::vector<std::thread> agents;
  for (std::size_t i = 0; i < 3; ++i) {
    agents.emplace_back([&, i] { reports[i] = sim::run_script(three_cycles(), kHost, server.port(), boxes[i].path()); });
  }
  for (auto& t : agents) t.join();
  std::set<std::string> ids;
  for (const auto& r : reports) {
    REQUIRE(r.completed);
    ids.insert(r.run_id);
    auto t = server.hub().snapshot(r.run_id);
    REQUIRE(t.has_value());
    CHECK(t->events.size() == 12);
    CHECK(t->commits().size() == 3);
  }
  CHECK(ids.size() == 3);
}
