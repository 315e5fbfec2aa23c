// agentstepper-sim: scripted reference agent and replay checker.
#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <fstream>
#include <iostream>
#include <sstream>

#include "agentstepper/errors.hpp"
#include "agentstepper/sim.hpp"

using namespace agentstepper;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitFailure = 2;
constexpr int kExitDivergence = 3;

std::pair<std::string, int> split_server(const std::string& address) {
  const auto colon = address.rfind(':');
  if (colon == std::string::npos || colon == 0) {
    throw UsageError("--server must look like host:port, got \"" + address + "\"");
  }
  try {
    return {address.substr(0, colon), std::stoi(address.substr(colon + 1))};
  } catch (const std::exception&) {
    throw UsageError("bad port in --server \"" + address + "\"");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AgentStepper scripted agent"};
  app.require_subcommand(1);
  std::string server = "localhost:8765";
  std::string sandbox;
  std::string report_file;
  std::string input;
  bool no_workspace = false;
  double timeout = 0;

  auto* run_cmd = app.add_subcommand("run", "execute an agent script against a server");
  run_cmd->add_option("script", input, "script file")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--server", server, "host:port")->capture_default_str();
  run_cmd->add_option("--sandbox", sandbox, "workspace the tools operate on")->required();
  run_cmd->add_option("--report", report_file, "write the call report here");
  run_cmd->add_flag("--no-workspace", no_workspace, "do not register the sandbox as the run's workspace");
  run_cmd->add_option("--timeout", timeout, "give up waiting for a server reply after this many seconds");

  auto* replay_cmd = app.add_subcommand("replay", "rerun a recorded report and compare trajectories");
  replay_cmd->add_option("report", input, "report file from a previous run")->required()->check(CLI::ExistingFile);
  replay_cmd->add_option("--server", server, "host:port")->capture_default_str();
  replay_cmd->add_option("--sandbox", sandbox, "fresh workspace for the replay")->required();
  replay_cmd->add_flag("--no-workspace", no_workspace, "do not register the sandbox as the run's workspace");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    const auto [host, port] = split_server(server);
    std::filesystem::create_directories(sandbox);
    sim::RunOptions options;
    options.use_workspace = !no_workspace;
    if (timeout > 0) {
      options.reply_timeout = Millis(static_cast<std::int64_t>(timeout * 1000));
    }

    if (*run_cmd) {
      auto report = sim::run_script(sim::AgentScript::load(input), host, port, sandbox, options);
      if (!report_file.empty()) {
        std::ofstream out(report_file, std::ios::binary | std::ios::trunc);
        out << report.to_json().dump(2) << '\n';
      }
      if (!report.completed) {
        std::cerr << "run " << report.run_id << " failed: " << report.error.value_or("unknown error") << '\n';
        return kExitFailure;
      }
      std::cout << "run " << report.run_id << " completed: " << report.calls.size() << " calls, "
                << report.trajectory.size() << " events\n";
      return 0;
    }

    std::ifstream in(input, std::ios::binary);
    std::stringstream buffer;
    buffer << in.rdbuf();
    const auto recorded = sim::ScriptReport::from_json(Value::parse(buffer.str()));
    const auto verdict = sim::record_and_replay(recorded, host, port, sandbox, options);
    std::cout << (verdict.identical ? "replay matches: " : "replay diverged: ") << verdict.detail << '\n';
    return verdict.identical ? 0 : kExitDivergence;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}
