#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "agentstepper/protocol.hpp"

namespace agentstepper {

using Millis = std::chrono::milliseconds;

// Blocking WebSocket client for the debug protocol. A background thread reads
// incoming envelopes into a queue.
class WireClient {
 public:
  WireClient(const std::string& host, int port, const std::string& target = "/ws");
  ~WireClient();
  WireClient(const WireClient&) = delete;
  WireClient& operator=(const WireClient&) = delete;

  // Stamps seq (and the session, once known) and queues the frame.
  void send(Envelope envelope);
  // Sends a raw text frame as is.
  void send_raw(std::string frame);

  // Next envelope, or nullopt when `timeout` elapses first (no timeout waits
  // forever). Throws ConnectionError once the peer closed and the queue is
  // empty.
  std::optional<Envelope> receive(std::optional<Millis> timeout = std::nullopt);

  // Waits until the peer has closed the connection.
  bool wait_closed(Millis timeout);
  [[nodiscard]] bool is_open() const;
  void close();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Agent-side instrumentation API: a constructor plus six calls, mirroring the
// points an agent loop exposes to the debugger. Every breakpoint call blocks
// while the server holds the event and returns the (possibly edited) payload.
class AgentStepper {
 public:
  struct Options {
    // Upper bound on waiting for any server reply, holds included.
    std::optional<Millis> reply_timeout;
  };

  AgentStepper(std::string agent_name, const std::string& host, int port,
               std::optional<std::filesystem::path> workspace_path = std::nullopt);
  AgentStepper(std::string agent_name, const std::string& host, int port,
               std::optional<std::filesystem::path> workspace_path, Options options);
  // Says goodbye on normal scope exit; during stack unwinding it drops the
  // connection instead, so the run is recorded as aborted.
  ~AgentStepper();
  AgentStepper(const AgentStepper&) = delete;
  AgentStepper& operator=(const AgentStepper&) = delete;

  Value begin_llm_query_breakpoint(Value prompt, bool holdable = true);
  Value end_llm_query_breakpoint(Value response, bool holdable = true);
  std::pair<std::string, Value> begin_tool_invocation_breakpoint(std::string tool, Value args,
                                                                 bool holdable = true);
  Value end_tool_invocation_breakpoint(Value results, bool holdable = true);
  bool commit_agent_changes(std::optional<std::string> summary = std::nullopt,
                            std::optional<std::string> description = std::nullopt);
  void post_debug_message(const std::string& message);

  // Ends the run (goodbye) and waits for the server to close the connection.
  void finish();
  // Drops the connection without goodbye.
  void abort();

  [[nodiscard]] const std::string& run_id() const { return run_id_; }
  [[nodiscard]] const std::optional<std::string>& workspace_error() const { return workspace_error_; }

 private:
  Value breakpoint(std::string_view type, EventKind wire_kind, Value body, bool holdable,
                   std::optional<std::string> tool_name);
  Envelope expect(std::string_view type);
  void require_open() const;

  std::unique_ptr<WireClient> wire_;
  std::optional<Millis> reply_timeout_;
  std::string run_id_;
  std::optional<std::string> workspace_error_;
  ProtocolState protocol_;
  bool done_ = false;
  int uncaught_at_start_ = 0;
};

// UI-side client used by tools and tests: keeps every received envelope and
// can wait for one matching a predicate.
class UiClient {
 public:
  UiClient(const std::string& host, int port);

  void send(std::string_view type, Value payload = Value::object(), const std::string& run_id = {});

  // Returns the first not yet consumed envelope matching `pred`, waiting up to
  // `timeout`. Non-matching envelopes stay in the backlog.
  std::optional<Envelope> wait_for(const std::function<bool(const Envelope&)>& pred, Millis timeout);
  std::optional<Envelope> wait_for_type(std::string_view type, Millis timeout);

  // Everything received so far, in arrival order.
  [[nodiscard]] const std::vector<Envelope>& history() const { return history_; }
  // Pulls whatever has already arrived into the backlog without waiting.
  void drain();

 private:
  WireClient wire_;
  std::vector<Envelope> history_;
  std::vector<bool> consumed_;
};

}  // namespace agentstepper
