#pragma once

#include <memory>

#include "agentstepper/hub.hpp"

namespace agentstepper {

// Network front end of a DebugHub: one TCP listener that serves the UI's
// static files over HTTP and the debug protocol over WebSocket upgrades
// (any path; clients use /ws).
class Server {
 public:
  explicit Server(ServerConfig config);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  // Loads persisted runs, binds and starts serving. Port 0 picks a free port.
  void start();
  // Releases holds, closes every connection and joins the I/O threads.
  void stop();

  [[nodiscard]] int port() const;
  [[nodiscard]] DebugHub& hub();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace agentstepper
