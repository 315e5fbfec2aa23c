#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace agentstepper {

struct ProcessResult {
  int exit_code = -1;
  std::string out;
  std::string err;

  [[nodiscard]] bool ok() const { return exit_code == 0; }
};

// Runs argv[0] (looked up on PATH) in `cwd` with stdin closed and both output
// streams captured. Throws std::system_error if the process cannot be started.
ProcessResult run_process(const std::vector<std::string>& argv, const std::filesystem::path& cwd);

}  // namespace agentstepper
