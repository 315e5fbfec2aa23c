#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace agentstepper {

// Base for every error the library raises. `code()` is the machine-readable
// reason that travels on the wire in error{reason} / fatal{reason} messages.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  [[nodiscard]] const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

// Malformed trajectory document. `line` is 1-based.
class ParseError : public Error {
 public:
  ParseError(std::int64_t line, const std::string& message)
      : Error("parse-error", "line " + std::to_string(line) + ": " + message), line_(line) {}

  [[nodiscard]] std::int64_t line() const noexcept { return line_; }

 private:
  std::int64_t line_;
};

// Trajectory data that parses but violates a model invariant.
class IntegrityError : public Error {
 public:
  explicit IntegrityError(const std::string& message) : Error("integrity-error", message) {}
  IntegrityError(std::int64_t line, const std::string& message)
      : Error("integrity-error", "line " + std::to_string(line) + ": " + message), line_(line) {}

  [[nodiscard]] std::optional<std::int64_t> line() const noexcept { return line_; }

 private:
  std::optional<std::int64_t> line_;
};

// Wire frame that cannot be turned into a valid envelope.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

class VersionError : public ProtocolError {
 public:
  explicit VersionError(std::int64_t version)
      : ProtocolError("version", "unsupported protocol version " + std::to_string(version)) {}
};

class InvalidStateError : public Error {
 public:
  explicit InvalidStateError(const std::string& message) : Error("invalid-state", message) {}
};

class StaleEditError : public Error {
 public:
  explicit StaleEditError(const std::string& message) : Error("stale-edit", message) {}
};

class InvalidEditError : public Error {
 public:
  explicit InvalidEditError(const std::string& message) : Error("invalid-edit", message) {}
};

class NotFoundError : public Error {
 public:
  explicit NotFoundError(const std::string& message) : Error("not-found", message) {}
};

class WorkspaceError : public Error {
 public:
  explicit WorkspaceError(const std::string& message) : Error("workspace-error", message) {}
};

class CommitError : public Error {
 public:
  explicit CommitError(const std::string& message) : Error("commit-error", message) {}
};

// Raised on the client side when the server cannot be reached or drops us.
class ConnectionError : public Error {
 public:
  explicit ConnectionError(const std::string& message) : Error("connection-error", message) {}
};

// The server sent fatal{reason}.
class FatalError : public Error {
 public:
  FatalError(const std::string& reason, const std::string& message)
      : Error(reason, "server reported fatal error (" + reason + "): " + message) {}
};

// Client API misuse, e.g. ending an event that was never begun.
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& message) : Error("usage", message) {}
};

}  // namespace agentstepper
