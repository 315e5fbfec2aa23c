// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails.
#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <spdlog/spdlog.h>

#include <cstdio>
#include <iostream>
#include <regex>
#include <set>
#include <thread>

#include "agentstepper/client.hpp"
#include "agentstepper/errors.hpp"
#include "agentstepper/sim.hpp"
#include "support.hpp"

extern char** environ;

using namespace agentstepper;
using namespace std::chrono_literals;
using testing::TempDir;
using testing::TestServer;

namespace {

const std::string kHost = "127.0.0.1";

struct Outcome {
  bool pass = true;
  std::string detail;

  void expect(bool condition, const std::string& what) {
    if (!condition) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt_seconds(double s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3fs", s);
  return buf;
}

// Ten cycles with varied payloads: plain, structured, unicode, nested args.
sim::AgentScript ten_cycles() {
  sim::AgentScript script;
  script.agent_name = "TenCycles";
  for (int i = 0; i < 10; ++i) {
    sim::ScriptCycle c;
    if (i % 3 == 1) {
      c.prompt = Value{{"messages", Value::array({Value{{"role", "system"}, {"content", "You fix bugs."}},
                                                  Value{{"role", "user"}, {"content", "step " + std::to_string(i)}}})},
                       {"temperature", 0.25}};
    } else {
      c.prompt = "Cycle " + std::to_string(i) + ": continue the task \xE2\x9C\x93\n\twith \"quotes\" and \\slashes";
    }
    c.response = i % 2 == 0 ? Value("Thought: edit file " + std::to_string(i))
                            : Value{{"action", "write"}, {"confidence", 0.9}, {"ids", {1, 2, 3}}};
    if (i % 4 == 3) {
      c.tool = "noop";
    } else {
      c.tool = "write_file";
      c.args = {{"path", "out/f" + std::to_string(i) + ".txt"},
                {"contents", "line " + std::to_string(i) + "\n\xC3\xBC\n"},
                {"meta", {{"nested", {{"deep", Value::array({nullptr, true, -7, 1.5})}}}}}};
    }
    script.cycles.push_back(std::move(c));
  }
  return script;
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
  if (!list) throw std::runtime_error("no live run appeared");
  for (const auto& r : list->payload["runs"]) {
    if (r["status"] == "live") return r["run_id"].get<std::string>();
  }
  return {};
}

struct Child {
  pid_t pid = -1;
};

Child spawn(const std::vector<std::string>& args) {
  std::vector<char*> argv;
  for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_addopen(&actions, STDOUT_FILENO, "/dev/null", O_WRONLY, 0);
  posix_spawn_file_actions_addopen(&actions, STDERR_FILENO, "/dev/null", O_WRONLY, 0);
  Child child;
  const int rc = posix_spawn(&child.pid, argv[0], &actions, nullptr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  if (rc != 0) throw std::runtime_error("cannot spawn " + args[0]);
  return child;
}

int wait_port_file(const std::filesystem::path& file) {
  const auto deadline = Clock::now() + 15s;
  while (Clock::now() < deadline) {
    const auto text = testing::trim(testing::read_file(file));
    if (!text.empty()) return std::stoi(text);
    std::this_thread::sleep_for(20ms);
  }
  throw std::runtime_error("server did not write its port file");
}

// ---------------------------------------------------------------------------

Outcome integration_parity() {
  Outcome o;
  const auto start = Clock::now();
  const std::string dir = std::string(AGENTSTEPPER_SOURCE_DIR) + "/tools/reference_agent/";
  const auto plain = dir + "plain_agent.cpp";
  const auto instrumented = dir + "instrumented_agent.cpp";

  // changed lines per git
  const auto numstat = testing::shell("git diff --no-index --numstat " + testing::quote(plain) + " " +
                                      testing::quote(instrumented));
  long added = 0;
  long deleted = 0;
  std::sscanf(numstat.out.c_str(), "%ld %ld", &added, &deleted);
  const long changed = added + deleted;

  // API call sites among the added lines
  const auto diff = testing::shell("git diff --no-index -U0 " + testing::quote(plain) + " " +
                                   testing::quote(instrumented));
  const std::regex call(
      R"(\b(begin_llm_query_breakpoint|end_llm_query_breakpoint|begin_tool_invocation_breakpoint|)"
      R"(end_tool_invocation_breakpoint|commit_agent_changes|post_debug_message)\s*\(|AgentStepper\s+\w+\s*\()");
  int calls = 0;
  std::istringstream lines(diff.out);
  for (std::string line; std::getline(lines, line);) {
    if (line.rfind("+", 0) != 0 || line.rfind("+++", 0) == 0) continue;
    calls += static_cast<int>(std::distance(std::sregex_iterator(line.begin(), line.end(), call), std::sregex_iterator()));
  }
  const double elapsed = seconds_since(start);

  o.expect(calls == 7, "expected 7 API call sites, found " + std::to_string(calls));
  o.expect(changed > 0 && changed <= 42, "changed lines " + std::to_string(changed) + " not in 1..42");
  o.expect(elapsed < 1.0, "took " + fmt_seconds(elapsed));

  // the instrumented agent actually runs against a server
  TestServer server;
  TempDir workspace;
  const auto run = testing::shell(testing::quote(AGENTSTEPPER_INSTRUMENTED_AGENT) + " " +
                                  testing::quote(workspace.path().string()) + " 127.0.0.1 " +
                                  std::to_string(server.port()));
  o.expect(run.status == 0, "instrumented agent exited with " + std::to_string(run.status));
  server.hub().wait_idle();
  const auto runs = server.hub().list_runs();
  o.expect(runs.size() == 1 && runs[0].status == RunStatus::completed, "instrumented agent run not completed");

  if (o.pass) {
    o.detail = std::to_string(calls) + " call sites, " + std::to_string(changed) + " lines changed (+" +
               std::to_string(added) + " -" + std::to_string(deleted) + "), " + fmt_seconds(elapsed);
    if (!runs.empty()) o.detail += ", reference run recorded " + std::to_string(runs[0].event_count) + " events";
  }
  return o;
}

Outcome unedited_round_trip() {
  Outcome o;
  TestServer server;
  TempDir sandbox;
  const auto start = Clock::now();
  sim::RunOptions options;
  options.fetch_trajectory = false;
  const auto report = sim::run_script(ten_cycles(), kHost, server.port(), sandbox.path(), options);
  const double elapsed = seconds_since(start);
  o.expect(report.completed, "run did not complete: " + report.error.value_or(""));
  int compared = 0;
  int identical = 0;
  for (const auto& c : report.calls) {
    if (c.call == "commit" || c.call == "debug") continue;
    ++compared;
    if (c.sent.dump() == c.received.dump()) {
      ++identical;
    } else {
      o.expect(false, c.call + " in cycle " + std::to_string(c.cycle) + " came back changed");
    }
  }
  o.expect(compared == 40, "expected 40 comparisons, made " + std::to_string(compared));
  o.expect(elapsed < 5.0, "took " + fmt_seconds(elapsed));
  if (o.pass) o.detail = std::to_string(identical) + "/" + std::to_string(compared) + " byte-identical, " + fmt_seconds(elapsed);
  return o;
}

Outcome edit_round_trip() {
  Outcome o;
  TestServer server([](ServerConfig& c) { c.initial_state = ExecState::stepping; });
  TempDir sandbox;

  sim::AgentScript script;
  script.agent_name = "EditMe";
  for (int i = 0; i < 3; ++i) {
    sim::ScriptCycle c;
    c.prompt = "cycle " + std::to_string(i + 1);
    c.response = "write a file";
    c.tool = "write_file";
    c.args = {{"path", "cycle" + std::to_string(i + 1) + ".txt"}, {"contents", "original\n"}};
    // only cycle 2's tool invocation stops
    c.holdable = sim::Holdable{false, false, i == 1, false};
    script.cycles.push_back(c);
  }
  const Value original{{"tool", "write_file"}, {"args", script.cycles[1].args}};
  const Value edited{{"tool", "write_file"}, {"args", {{"path", "edited.txt"}, {"contents", "edited\n"}}}};

  const auto start = Clock::now();
  sim::ScriptReport report;
  sim::RunOptions options;
  options.use_workspace = false;
  options.fetch_trajectory = false;
  std::thread agent([&] { report = sim::run_script(script, kHost, server.port(), sandbox.path(), options); });

  std::optional<std::int64_t> held;
  try {
    UiClient ui(kHost, server.port());
    const auto run_id = wait_live_run(ui);
    ui.send("subscribe", Value{{"run_id", run_id}}, run_id);
    auto msg = ui.wait_for(
        [](const Envelope& e) { return e.type == "state_changed" && e.payload.contains("held_event_id"); }, 10s);
    if (msg) {
      held = msg->payload["held_event_id"].get<std::int64_t>();
      ui.send("edit", Value{{"run_id", run_id}, {"event_id", *held}, {"body", edited}}, run_id);
      ui.send("control", Value{{"run_id", run_id}, {"command", "continue"}}, run_id);
    }
  } catch (const std::exception& ex) {
    o.expect(false, ex.what());
  }
  agent.join();
  const double elapsed = seconds_since(start);

  o.expect(report.completed, "run did not complete");
  o.expect(held == 6, "expected the hold at event 6 (cycle 2 tool invocation)");
  o.expect(testing::read_file(sandbox / "edited.txt") == "edited\n", "sandbox lacks the edited file");
  o.expect(!std::filesystem::exists(sandbox / "cycle2.txt"), "original action ran anyway");
  o.expect(std::filesystem::exists(sandbox / "cycle3.txt"), "run did not continue after the edit");

  server.hub().wait_idle();
  auto t = server.hub().snapshot(report.run_id);
  if (!t || t->events.size() != 12) {
    o.expect(false, "trajectory missing or incomplete");
  } else {
    const auto& ev = t->events[6];
    o.expect(ev.kind == EventKind::tool_invocation && ev.cycle_index == 1, "event 6 is not cycle 2's tool call");
    o.expect(ev.edited && ev.held, "event 6 not marked edited and held");
    o.expect(ev.body == edited, "event 6 body is not the edit");
    o.expect(ev.original_body == original, "original_body not preserved");
    int edited_count = 0;
    for (const auto& e : t->events) edited_count += e.edited;
    o.expect(edited_count == 1, "other events marked edited");
  }
  o.expect(elapsed < 5.0, "took " + fmt_seconds(elapsed));
  if (o.pass) o.detail = "hold at event 6, edited write landed, original_body kept, " + fmt_seconds(elapsed);
  return o;
}

Outcome state_machine() {
  Outcome o;
  // (a) running: no holds
  int running_holds = -1;
  {
    TestServer server;
    TempDir sandbox;
    sim::RunOptions options;
    options.use_workspace = false;
    auto report = sim::run_script(ten_cycles(), kHost, server.port(), sandbox.path(), options);
    o.expect(report.completed, "running run did not complete");
    running_holds = 0;
    for (const auto& e : report.trajectory) running_holds += e.value("held", false);
    o.expect(report.trajectory.size() == 40, "running run has " + std::to_string(report.trajectory.size()) + " events");
    o.expect(running_holds == 0, "running mode held " + std::to_string(running_holds) + " events");
  }
  // (b) stepping: one resume per event
  int resumes = 0;
  {
    TestServer server([](ServerConfig& c) { c.initial_state = ExecState::stepping; });
    TempDir sandbox;
    sim::RunOptions options;
    options.use_workspace = false;
    options.fetch_trajectory = false;
    sim::ScriptReport report;
    std::thread agent([&] { report = sim::run_script(ten_cycles(), kHost, server.port(), sandbox.path(), options); });
    try {
      UiClient ui(kHost, server.port());
      const auto run_id = wait_live_run(ui);
      ui.send("subscribe", Value{{"run_id", run_id}}, run_id);
      std::set<std::int64_t> handled;
      for (;;) {
        auto msg = ui.wait_for_type("state_changed", 10s);
        if (!msg) throw std::runtime_error("no state change within 10s");
        const auto& p = msg->payload;
        if (p["status"] != "live") break;
        if (!p.contains("held_event_id")) continue;
        if (!handled.insert(p["held_event_id"].get<std::int64_t>()).second) continue;
        ui.send("control", Value{{"run_id", run_id}, {"command", "step"}}, run_id);
        ++resumes;
      }
    } catch (const std::exception& ex) {
      o.expect(false, ex.what());
    }
    agent.join();
    o.expect(report.completed, "stepping run did not complete");
    o.expect(resumes == 40, "stepping needed " + std::to_string(resumes) + " resumes");
  }
  // (c) pause while running arms at the next event
  std::optional<std::int64_t> paused_at;
  {
    TestServer server;
    try {
      AgentStepper debugger("Pausable", kHost, server.port());
      const auto run_id = debugger.run_id();
      (void)debugger.begin_llm_query_breakpoint("q");  // event 0, runs through
      UiClient ui(kHost, server.port());
      ui.send("subscribe", Value{{"run_id", run_id}}, run_id);
      ui.send("control", Value{{"run_id", run_id}, {"command", "pause"}}, run_id);
      auto armed = ui.wait_for(
          [](const Envelope& e) { return e.type == "state_changed" && e.payload.value("pause_pending", false); }, 5s);
      o.expect(armed.has_value() && armed->payload["state"] == "running" && !armed->payload.contains("held_event_id"),
               "pause did not arm while running");
      std::thread agent([&] {
        (void)debugger.end_llm_query_breakpoint("r");  // event 1
      });
      auto hold = ui.wait_for(
          [](const Envelope& e) { return e.type == "state_changed" && e.payload.contains("held_event_id"); }, 5s);
      if (hold) {
        paused_at = hold->payload["held_event_id"].get<std::int64_t>();
        o.expect(hold->payload["state"] == "paused", "held without paused state");
      }
      ui.send("control", Value{{"run_id", run_id}, {"command", "continue"}}, run_id);
      agent.join();
      debugger.finish();
    } catch (const std::exception& ex) {
      o.expect(false, ex.what());
    }
    o.expect(paused_at == 1, "pause did not hold the next event");
  }
  if (o.pass) {
    o.detail = "running: " + std::to_string(running_holds) + " holds; stepping: " + std::to_string(resumes) +
               " resumes; pause held event " + std::to_string(*paused_at);
  }
  return o;
}

Outcome commit_per_tool() {
  Outcome o;
  TestServer server;
  TempDir repo;
  testing::make_repo(repo.path());
  const auto main_head = testing::git(repo.path(), "rev-parse main");

  sim::AgentScript script;
  script.agent_name = "Committer";
  const std::vector<std::pair<std::string, Value>> tools = {
      {"write_file", {{"path", "src/a.py"}, {"contents", "def a():\n    return 1\n"}}},
      {"noop", Value::object()},
      {"append_file", {{"path", "README"}, {"line", "more docs"}}},
      {"fail", {{"message", "tests failed"}}},
      {"write_file", {{"path", "src/a.py"}, {"contents", "def a():\n    return 2\n\n# done\n"}}},
  };
  for (std::size_t i = 0; i < tools.size(); ++i) {
    sim::ScriptCycle c;
    c.prompt = "step " + std::to_string(i);
    c.response = "use " + tools[i].first;
    c.tool = tools[i].first;
    c.args = tools[i].second;
    script.cycles.push_back(c);
  }
  auto report = sim::run_script(script, kHost, server.port(), repo.path());
  o.expect(report.completed, "run did not complete");
  auto t = server.hub().snapshot(report.run_id);
  if (!t) {
    o.expect(false, "no trajectory");
    return o;
  }
  const auto branch = "agentstepper/run-" + report.run_id;
  o.expect(t->run.run_branch == branch, "unexpected run branch name");
  const auto on_branch = testing::git(repo.path(), "rev-list --count main.." + branch);
  o.expect(on_branch == "3", "run branch has " + on_branch + " commits");
  const auto commits = t->commits();
  o.expect(commits.size() == 3, "trajectory has " + std::to_string(commits.size()) + " commits");
  o.expect(testing::git(repo.path(), "rev-parse main") == main_head, "original branch head moved");
  o.expect(testing::git(repo.path(), "symbolic-ref --short HEAD") == "main", "HEAD not back on main");

  std::set<std::string> git_ids;
  std::istringstream ids(testing::git(repo.path(), "rev-list main.." + branch));
  for (std::string id; std::getline(ids, id);) git_ids.insert(id);
  for (const auto& c : commits) {
    o.expect(git_ids.contains(c.commit_id), "commit " + c.commit_id + " not on the run branch");
    std::int64_t files = 0;
    std::int64_t ins = 0;
    std::int64_t del = 0;
    std::istringstream ns(testing::git(repo.path(), "show --numstat --no-renames --format= " + c.commit_id));
    for (std::string line; std::getline(ns, line);) {
      if (line.empty()) continue;
      ++files;
      long a = 0;
      long d = 0;
      std::sscanf(line.c_str(), "%ld %ld", &a, &d);
      ins += a;
      del += d;
    }
    o.expect(files == c.files_changed && ins == c.insertions && del == c.deletions,
             "stats of " + c.commit_id.substr(0, 8) + " differ from git");
    const auto& trigger = t->events.at(static_cast<std::size_t>(c.triggering_event_id));
    o.expect(trigger.kind == EventKind::tool_result, "commit not attached to a tool result");
  }
  if (o.pass) o.detail = "5 tool calls, 3 commits on " + branch + ", main unchanged, stats match git numstat";
  return o;
}

Outcome trajectory_round_trip() {
  Outcome o;
  TempDir data;
  TempDir data2;
  TempDir files;
  TempDir sandbox;
  std::string run_id;
  {
    TestServer server({}, data.path());
    auto report = sim::run_script(ten_cycles(), kHost, server.port(), sandbox.path());
    o.expect(report.completed, "run did not complete");
    run_id = report.run_id;
    server.hub().wait_idle();
    server.stop();
  }
  const std::string cli = AGENTSTEPPER_CLI;
  auto run_cli = [&](const std::string& args) {
    return testing::shell("(" + testing::quote(cli) + " --log-level error " + args + " 2>&1)");
  };
  const auto first = files / "first.jsonl";
  const auto second = files / "second.jsonl";
  auto r1 = run_cli("export " + run_id + " --data-dir " + testing::quote(data.path().string()) + " -o " +
                    testing::quote(first.string()));
  o.expect(r1.status == 0, "export failed: " + r1.out);
  auto r2 = run_cli("import " + testing::quote(first.string()) + " --data-dir " + testing::quote(data2.path().string()));
  o.expect(r2.status == 0, "import failed: " + r2.out);
  const auto imported_id = testing::trim(r2.out);
  auto r3 = run_cli("export " + imported_id + " --data-dir " + testing::quote(data2.path().string()) + " -o " +
                    testing::quote(second.string()));
  o.expect(r3.status == 0, "second export failed: " + r3.out);
  const auto doc1 = testing::read_file(first);
  const auto doc2 = testing::read_file(second);
  o.expect(!doc1.empty() && doc1 == doc2, "export -> import -> export differs");

  // the same through the server's import message
  {
    TestServer server;
    UiClient ui(kHost, server.port());
    ui.send("import_run", Value{{"document", doc1}});
    auto list = ui.wait_for([](const Envelope& e) { return e.type == "run_list" && e.payload.contains("imported_run_id"); },
                            5s);
    if (!list) {
      o.expect(false, "server import gave no run_list");
    } else {
      auto t = server.hub().snapshot(list->payload["imported_run_id"].get<std::string>());
      o.expect(t && serialize_run(*t) == doc1, "server import does not re-export identically");
    }
  }

  // truncation in the middle of a record
  const auto cut = doc1.substr(0, doc1.size() - doc1.size() / 3);
  const auto expected_line = std::count(cut.begin(), cut.end(), '\n') + 1;
  const auto truncated = files / "truncated.jsonl";
  testing::write_file(truncated, cut);
  TempDir data3;
  auto r4 = run_cli("import " + testing::quote(truncated.string()) + " --data-dir " + testing::quote(data3.path().string()));
  const auto needle = "line " + std::to_string(expected_line);
  o.expect(r4.status != 0, "truncated import succeeded");
  o.expect(r4.out.find(needle) != std::string::npos, "error does not name " + needle + ": " + testing::trim(r4.out));
  o.expect(RunStore(data3.path()).scan().empty(), "truncated import left a run behind");

  if (o.pass) {
    o.detail = std::to_string(doc1.size()) + " bytes identical after export/import/export; truncated file rejected at " +
               needle;
  }
  return o;
}

Outcome fallback_summaries() {
  Outcome o;
  ::unsetenv("AGENTSTEPPER_LLM_KEY");
  TestServer server;  // default summarizer: fallback
  TempDir sandbox;
  auto report = sim::run_script(ten_cycles(), kHost, server.port(), sandbox.path());
  o.expect(report.completed, "run did not complete");
  o.expect(report.trajectory.size() == 40, "expected 40 events");
  std::size_t longest = 0;
  for (const auto& e : report.trajectory) {
    const auto id = e.value("event_id", -1);
    if (!e.contains("summary") || !e["summary"].is_string()) {
      o.expect(false, "event " + std::to_string(id) + " has no summary");
      continue;
    }
    const auto s = e["summary"].get<std::string>();
    std::size_t chars = 0;
    for (char ch : s) chars += (static_cast<unsigned char>(ch) & 0xC0) != 0x80;
    longest = std::max(longest, chars);
    o.expect(!s.empty() && s.find('\n') == std::string::npos && s.find('\r') == std::string::npos && chars <= 240,
             "event " + std::to_string(id) + " summary invalid");
  }
  auto t = server.hub().snapshot(report.run_id);
  for (const auto& c : t ? t->commits() : std::vector<CommitRecord>{}) {
    o.expect(!c.message_summary.empty() && c.message_summary.find('\n') == std::string::npos &&
                 c.message_summary.size() <= 240 * 4,
             "commit message summary invalid");
  }
  if (o.pass) o.detail = std::to_string(report.trajectory.size()) + " summaries valid, longest " + std::to_string(longest) + " chars";
  return o;
}

Outcome crash_resilience() {
  Outcome o;
  TempDir data;
  TempDir files;
  const std::string cli = AGENTSTEPPER_CLI;
  auto serve = [&](const std::string& port_file) {
    return spawn({cli, "--log-level", "error", "serve", "--port", "0", "--data-dir", data.path().string(),
                  "--start-state", "running", "--port-file", port_file});
  };

  const auto port_file1 = (files / "port1").string();
  auto server = serve(port_file1);
  std::string run_id;
  std::vector<Value> sent;
  try {
    const int port = wait_port_file(port_file1);
    AgentStepper debugger("Doomed", kHost, port);
    run_id = debugger.run_id();
    sent.push_back("first prompt");
    (void)debugger.begin_llm_query_breakpoint(sent.back());
    sent.push_back(Value{{"plan", "edit"}});
    (void)debugger.end_llm_query_breakpoint(sent.back());
    sent.push_back(Value{{"tool", "noop"}, {"args", Value::object()}});
    (void)debugger.begin_tool_invocation_breakpoint("noop", Value::object());
    sent.push_back("ok");
    (void)debugger.end_tool_invocation_breakpoint(sent.back());
    sent.push_back("second prompt");
    (void)debugger.begin_llm_query_breakpoint(sent.back());
    // mid-run: a begin is outstanding
    ::kill(server.pid, SIGKILL);
    ::waitpid(server.pid, nullptr, 0);
    server.pid = -1;
    debugger.abort();
  } catch (const std::exception& ex) {
    o.expect(false, std::string("before the crash: ") + ex.what());
  }
  if (server.pid > 0) {
    ::kill(server.pid, SIGKILL);
    ::waitpid(server.pid, nullptr, 0);
  }

  const auto port_file2 = (files / "port2").string();
  auto restarted = serve(port_file2);
  try {
    const int port = wait_port_file(port_file2);
    UiClient ui(kHost, port);
    ui.send("list_runs");
    auto list = ui.wait_for_type("run_list", 5s);
    bool listed = false;
    if (list) {
      for (const auto& r : list->payload["runs"]) {
        if (r["run_id"] != run_id) continue;
        listed = true;
        o.expect(r["status"] == "aborted", "run listed as " + r["status"].dump());
        o.expect(r["event_count"] == 5, "run lists " + r["event_count"].dump() + " events");
      }
    }
    o.expect(listed, "run not listed after restart");
    ui.send("subscribe", Value{{"run_id", run_id}}, run_id);
    auto state = ui.wait_for_type("state_changed", 5s);
    o.expect(state.has_value(), "no state after subscribe");
    std::vector<Event> events;
    for (const auto& e : ui.history()) {
      if (e.type == "event_appended") events.push_back(event_from_json(e.payload["event"]));
    }
    o.expect(events.size() == sent.size(), "replayed " + std::to_string(events.size()) + " events");
    for (std::size_t i = 0; i < std::min(events.size(), sent.size()); ++i) {
      o.expect(events[i].body == sent[i], "event " + std::to_string(i) + " body changed");
    }
  } catch (const std::exception& ex) {
    o.expect(false, std::string("after the restart: ") + ex.what());
  }
  ::kill(restarted.pid, SIGTERM);
  int status = 0;
  ::waitpid(restarted.pid, &status, 0);
  o.expect(WIFEXITED(status) && WEXITSTATUS(status) == 0, "restarted server did not shut down cleanly");
  if (o.pass) o.detail = "SIGKILL after 5 events; restart lists run aborted with 5 intact events";
  return o;
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::off);
  const std::vector<std::pair<std::string, Outcome (*)()>> criteria = {
      {"integration-effort parity", integration_parity},
      {"unedited round-trip identity", unedited_round_trip},
      {"edit round trip", edit_round_trip},
      {"state machine", state_machine},
      {"commit per tool invocation", commit_per_tool},
      {"trajectory round trip", trajectory_round_trip},
      {"fallback summaries", fallback_summaries},
      {"crash resilience", crash_resilience},
  };
  int failures = 0;
  for (const auto& [name, check] : criteria) {
    Outcome outcome;
    try {
      outcome = check();
    } catch (const std::exception& ex) {
      outcome.pass = false;
      outcome.detail = std::string("threw: ") + ex.what();
    }
    failures += outcome.pass ? 0 : 1;
    std::cout << (outcome.pass ? "PASS " : "FAIL ") << name << ": " << outcome.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
