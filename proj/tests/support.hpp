#pragma once

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <sys/wait.h>

#include "agentstepper/server.hpp"

namespace testing {

namespace fs = std::filesystem;

class TempDir {
 public:
  explicit TempDir(const std::string& prefix = "agentstepper-test") {
    std::string pattern = (fs::temp_directory_path() / (prefix + "-XXXXXX")).string();
    if (mkdtemp(pattern.data()) == nullptr) {
      throw std::runtime_error("mkdtemp failed");
    }
    path_ = pattern;
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  [[nodiscard]] const fs::path& path() const { return path_; }
  [[nodiscard]] fs::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  fs::path path_;
};

struct ShellResult {
  int status = 0;
  std::string out;
};

inline std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) {
    if (c == '\'') {
      q += "'\\''";
    } else {
      q += c;
    }
  }
  return q + "'";
}

// Runs a shell command and captures stdout. Used as an independent oracle:
// the library drives git through its own process layer.
inline ShellResult shell(const std::string& command) {
  ShellResult result;
  FILE* pipe = popen((command + " 2>/dev/null").c_str(), "r");
  if (pipe == nullptr) {
    throw std::runtime_error("popen failed: " + command);
  }
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) {
    result.out.append(buf.data(), n);
  }
  const int raw = pclose(pipe);
  result.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return result;
}

inline std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r' || s.back() == ' ')) {
    s.pop_back();
  }
  return s;
}

inline std::string git(const fs::path& repo, const std::string& args) {
  return trim(shell("git -C " + quote(repo.string()) + " " + args).out);
}

// A repository with one commit on "main".
inline void make_repo(const fs::path& dir) {
  fs::create_directories(dir);
  const auto q = quote(dir.string());
  shell("git -C " + q + " init -q -b main && git -C " + q + " config user.email t@example.com && git -C " + q +
        " config user.name tester && git -C " + q + " config commit.gpgsign false");
  std::ofstream(dir / "README") << "fixture\n";
  shell("git -C " + q + " add -A && git -C " + q + " commit -q -m initial");
}

inline void write_file(const fs::path& file, const std::string& contents) {
  fs::create_directories(file.parent_path());
  std::ofstream(file, std::ios::binary | std::ios::trunc) << contents;
}

inline std::string read_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

// In-process server on a free port with its own data directory.
class TestServer {
 public:
  explicit TestServer(const std::function<void(agentstepper::ServerConfig&)>& tweak = {},
                      const fs::path& data_dir = {}) {
    agentstepper::ServerConfig config;
    config.port = 0;
    config.data_dir = data_dir.empty() ? data_.path() : data_dir;
    config.initial_state = agentstepper::ExecState::running;
    if (tweak) {
      tweak(config);
    }
    server_ = std::make_unique<agentstepper::Server>(config);
    server_->start();
  }

  [[nodiscard]] int port() const { return server_->port(); }
  [[nodiscard]] agentstepper::DebugHub& hub() { return server_->hub(); }
  [[nodiscard]] const fs::path& data_dir() const { return data_.path(); }
  void stop() { server_->stop(); }

 private:
  TempDir data_{"agentstepper-data"};
  std::unique_ptr<agentstepper::Server> server_;
};

}  // namespace testing
