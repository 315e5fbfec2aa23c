#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "agentstepper/breakpoint.hpp"
#include "agentstepper/protocol.hpp"
#include "agentstepper/run_store.hpp"
#include "agentstepper/summarizer.hpp"
#include "agentstepper/trajectory.hpp"
#include "agentstepper/workspace.hpp"

namespace agentstepper {

struct ServerConfig {
  std::string bind_address = "127.0.0.1";
  int port = 8765;
  std::filesystem::path data_dir = ".agentstepper";
  bool auto_commit = true;
  SummarizerConfig summarizer;
  std::optional<std::chrono::milliseconds> hold_timeout;
  // Execution state of a newly attached agent. Stepping holds at every
  // breakpoint until a UI steps or continues.
  ExecState initial_state = ExecState::stepping;
  std::size_t summary_workers = 2;
  std::optional<std::filesystem::path> ui_dir;
};

// One transport connection (agent or UI). `send` must not block: the
// transport queues the envelope and stamps `session` and `seq`.
class Connection {
 public:
  virtual ~Connection() = default;
  virtual void send(Envelope envelope) = 0;
  virtual void close() = 0;
  [[nodiscard]] virtual std::string describe() const = 0;
};

// The server's run registry and message router, independent of the
// transport. Thread-safe: distinct connections may call in concurrently;
// messages of one connection must be delivered in arrival order.
class DebugHub {
 public:
  explicit DebugHub(ServerConfig config);
  ~DebugHub();
  DebugHub(const DebugHub&) = delete;
  DebugHub& operator=(const DebugHub&) = delete;

  // Rebuilds the run index from data_dir.
  void load_runs();

  void on_open(const std::shared_ptr<Connection>& conn);
  void on_message(const std::shared_ptr<Connection>& conn, std::string_view frame);
  void on_close(const std::shared_ptr<Connection>& conn);

  // Releases every hold (continue, unedited) and stops background work.
  void shutdown();

  // Waits for queued summary jobs to finish.
  void wait_idle();

  [[nodiscard]] std::vector<RunRecord> list_runs() const;
  [[nodiscard]] std::optional<Trajectory> snapshot(const std::string& run_id) const;
  [[nodiscard]] const ServerConfig& config() const { return config_; }

 private:
  struct Run;
  struct ConnState;

  void handle_agent(const std::shared_ptr<Connection>& conn, ConnState& state, Envelope env);
  void handle_ui(const std::shared_ptr<Connection>& conn, ConnState& state, const Envelope& env);

  void agent_hello(const std::shared_ptr<Connection>& conn, ConnState& state, const Envelope& env);
  void agent_event(const std::shared_ptr<Connection>& conn, ConnState& state, const Envelope& env);
  void agent_commit(const std::shared_ptr<Connection>& conn, ConnState& state, const Envelope& env);
  void agent_debug(ConnState& state, const Envelope& env);
  void agent_goodbye(const std::shared_ptr<Connection>& conn, ConnState& state);
  void abort_run(const std::string& run_id, const std::string& reason);

  void ui_subscribe(const std::shared_ptr<Connection>& conn, ConnState& state, const Envelope& env);
  void ui_control(const std::shared_ptr<Connection>& conn, ConnState& state, const Envelope& env);
  void ui_edit(const std::shared_ptr<Connection>& conn, const Envelope& env);
  void ui_import(const std::shared_ptr<Connection>& conn, const Envelope& env);

  // Helpers that expect the run's mutex to be held.
  void append_event_locked(Run& run, Event event);
  void update_event_locked(Run& run, std::int64_t event_id);
  void apply_release_locked(Run& run, HoldSlot released);
  void schedule_summary_locked(Run& run, std::int64_t event_id);
  std::optional<CommitRecord> commit_locked(Run& run, std::optional<std::string> summary,
                                            std::optional<std::string> description,
                                            std::string& message);
  void finish_run_locked(Run& run, RunStatus status);
  void persist_final_locked(Run& run);
  void broadcast_locked(Run& run, std::string_view type, Value payload);
  void broadcast_state_locked(Run& run);
  Value state_payload_locked(const Run& run) const;
  std::string commit_message(const DiffResult& diff) const;

  void broadcast_run_list();
  Value run_list_payload() const;

  std::shared_ptr<Run> find_run(const std::string& run_id) const;
  std::string new_run_id();
  void send_error(const std::shared_ptr<Connection>& conn, const std::string& reason,
                  const std::string& message, const std::string& run_id = {});
  void fatal(const std::shared_ptr<Connection>& conn, ConnState& state, const std::string& reason,
             const std::string& message);
  void hold_timer_loop();

  ServerConfig config_;
  RunStore store_;
  Summarizer summarizer_;
  SummaryPool pool_;

  mutable std::mutex registry_mu_;
  std::map<std::string, std::shared_ptr<Run>> runs_;
  std::map<const Connection*, std::shared_ptr<ConnState>> conns_;
  std::map<const Connection*, std::weak_ptr<Connection>> ui_conns_;
  std::uint64_t run_counter_ = 0;

  std::mutex timer_mu_;
  std::condition_variable timer_cv_;
  bool stopping_ = false;
  std::thread timer_thread_;
};

}  // namespace agentstepper
