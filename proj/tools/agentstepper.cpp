// agentstepper: debug server and offline run management.
#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "agentstepper/errors.hpp"
#include "agentstepper/run_store.hpp"
#include "agentstepper/server.hpp"

using namespace agentstepper;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitFailure = 2;

std::string read_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot read " + file.string());
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

int serve(ServerConfig config, const std::string& port_file) {
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  // Block before any thread starts so only sigwait sees them.
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  Server server(std::move(config));
  server.start();
  if (!port_file.empty()) {
    // Written atomically so a watcher never reads a partial number.
    const std::string tmp = port_file + ".tmp";
    std::ofstream(tmp) << server.port() << '\n';
    std::filesystem::rename(tmp, port_file);
  }
  int received = 0;
  sigwait(&signals, &received);
  spdlog::info("received signal {}, shutting down", received);
  server.stop();
  return 0;
}

int import_run(const std::filesystem::path& data_dir, const std::filesystem::path& file) {
  auto trajectory = deserialize_run(read_file(file));
  RunStore store(data_dir);
  const auto original = trajectory.run.run_id;
  for (int n = 2; store.exists(trajectory.run.run_id); ++n) {
    trajectory.run.run_id = original + "-" + std::to_string(n);
  }
  store.write(trajectory, true);
  std::cout << trajectory.run.run_id << '\n';
  return 0;
}

int export_run(const std::filesystem::path& data_dir, const std::string& run_id, const std::string& output) {
  RunStore store(data_dir);
  if (!store.exists(run_id)) {
    throw NotFoundError("no run " + run_id + " in " + data_dir.string());
  }
  const auto stored = RunStore::read_journal(read_file(store.trajectory_file(run_id)));
  const auto document = serialize_run(stored.trajectory);
  if (output.empty() || output == "-") {
    std::cout << document;
  } else {
    std::ofstream out(output, std::ios::binary | std::ios::trunc);
    out << document;
    if (!out) {
      throw std::runtime_error("cannot write " + output);
    }
  }
  return 0;
}

int list_runs(const std::filesystem::path& data_dir) {
  RunStore store(data_dir);
  const auto runs = store.scan();
  if (runs.empty()) {
    std::cout << "no runs in " << data_dir.string() << '\n';
    return 0;
  }
  std::printf("%-26s %-10s %-12s %7s  %-24s %s\n", "RUN", "STATUS", "MODE", "EVENTS", "STARTED", "AGENT");
  for (const auto& s : runs) {
    const auto& r = s.trajectory.run;
    std::printf("%-26s %-10s %-12s %7lld  %-24s %s\n", r.run_id.c_str(), std::string(to_string(r.status)).c_str(),
                std::string(to_string(r.mode)).c_str(), static_cast<long long>(r.event_count),
                format_timestamp(r.started_at).c_str(), r.agent_name.c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AgentStepper: interactive debugger for LLM agents"};
  app.require_subcommand(1);
  std::string data_dir = ".agentstepper";
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn or error")->capture_default_str();

  ServerConfig config;
  config.summarizer.llm.endpoint = "http://localhost:11434/v1/chat/completions";
  config.summarizer.llm.model = "gpt-4o-mini";
  std::string summarizer = "fallback";
  std::string start_state = "stepping";
  double hold_timeout = 0;
  bool no_auto_commit = false;
  std::string ui_dir;
  std::string port_file;
  auto* serve_cmd = app.add_subcommand("serve", "run the debug server");
  serve_cmd->add_option("--address", config.bind_address, "bind address")->capture_default_str();
  serve_cmd->add_option("--port", config.port, "listen port (0 picks a free one)")
      ->check(CLI::Range(0, 65535))
      ->capture_default_str();
  serve_cmd->add_option("--data-dir", data_dir, "where runs are stored")->capture_default_str();
  serve_cmd->add_flag("--no-auto-commit", no_auto_commit, "do not snapshot the workspace after tool results");
  serve_cmd->add_option("--summarizer", summarizer, "summary backend")
      ->check(CLI::IsMember({"llm", "fallback"}))
      ->capture_default_str();
  serve_cmd->add_option("--llm-endpoint", config.summarizer.llm.endpoint, "chat completions URL")
      ->capture_default_str();
  serve_cmd->add_option("--llm-model", config.summarizer.llm.model, "model name")->capture_default_str();
  serve_cmd->add_option("--hold-timeout", hold_timeout, "seconds before a hold continues on its own (0 = never)")
      ->check(CLI::NonNegativeNumber);
  serve_cmd->add_option("--start-state", start_state, "execution state of newly attached agents")
      ->check(CLI::IsMember({"running", "stepping", "paused"}))
      ->capture_default_str();
  serve_cmd->add_option("--ui-dir", ui_dir, "directory with the web UI's static files");
  serve_cmd->add_option("--port-file", port_file, "write the listening port to this file once ready");

  std::string import_file;
  auto* import_cmd = app.add_subcommand("import", "import a trajectory file into the data directory");
  import_cmd->add_option("file", import_file, "trajectory file")->required();
  import_cmd->add_option("--data-dir", data_dir, "where runs are stored")->capture_default_str();

  std::string run_id;
  std::string output;
  auto* export_cmd = app.add_subcommand("export", "write a run's trajectory document");
  export_cmd->add_option("run_id", run_id, "run to export")->required();
  export_cmd->add_option("-o,--output", output, "output file (default stdout)");
  export_cmd->add_option("--data-dir", data_dir, "where runs are stored")->capture_default_str();

  auto* list_cmd = app.add_subcommand("list", "list stored runs");
  list_cmd->add_option("--data-dir", data_dir, "where runs are stored")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*serve_cmd) {
      config.data_dir = data_dir;
      config.auto_commit = !no_auto_commit;
      config.summarizer.mode = summarizer == "llm" ? SummarizerConfig::Mode::llm : SummarizerConfig::Mode::fallback;
      if (const char* key = std::getenv("AGENTSTEPPER_LLM_KEY")) {
        config.summarizer.llm.api_key = key;
      }
      if (hold_timeout > 0) {
        config.hold_timeout = std::chrono::milliseconds(static_cast<std::int64_t>(hold_timeout * 1000));
      }
      config.initial_state = *exec_state_from_string(start_state);
      if (!ui_dir.empty()) {
        config.ui_dir = ui_dir;
      }
      return serve(std::move(config), port_file);
    }
    if (*import_cmd) {
      return import_run(data_dir, import_file);
    }
    if (*export_cmd) {
      return export_run(data_dir, run_id, output);
    }
    if (*list_cmd) {
      return list_runs(data_dir);
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}
