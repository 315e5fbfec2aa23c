#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "agentstepper/trajectory.hpp"

namespace agentstepper {

inline constexpr std::string_view kRunBranchPrefix = "agentstepper/run-";
inline constexpr std::string_view kIgnoreFileName = ".agentstepperignore";

struct FileDiffStat {
  std::string path;
  std::int64_t insertions = 0;
  std::int64_t deletions = 0;
  bool binary = false;
};

struct DiffResult {
  std::string text;  // unified diff
  std::vector<FileDiffStat> files;
  std::int64_t files_changed = 0;
  std::int64_t insertions = 0;
  std::int64_t deletions = 0;
};

// Counts files and +/- lines of a `git diff`-style unified diff, following
// hunk headers so content lines that look like headers are not miscounted.
[[nodiscard]] DiffResult parse_unified_diff(std::string text);

struct WorkspaceSession {
  std::filesystem::path workspace_path;
  std::string original_branch;  // branch name, or a commit hash if HEAD was detached
  bool original_detached = false;
  std::string run_branch;
  std::string baseline_commit;
  bool auto_commit = true;
};

// Produces the one-line commit summary for a staged diff when the caller
// supplied none.
using CommitMessageFn = std::function<std::string(const DiffResult& staged)>;

struct CommitOutcome {
  bool committed = false;
  std::optional<CommitRecord> record;
  std::string message;  // reason when nothing was committed
};

// Makes `workspace_path` a repository if it is not one, records the current
// branch and checks out a fresh run branch. The original branch never moves,
// except that a repository without any commit receives the baseline commit.
[[nodiscard]] WorkspaceSession open_session(const std::filesystem::path& workspace_path,
                                            const std::string& run_id);

// Stages everything (new, modified, deleted; minus ignore rules) and commits
// it on the run branch. An empty staged diff commits nothing.
[[nodiscard]] CommitOutcome commit_changes(const WorkspaceSession& session,
                                           std::optional<std::string> summary,
                                           std::optional<std::string> description,
                                           std::int64_t triggering_event_id,
                                           const CommitMessageFn& make_message);

// Commits leftover changes (when `triggering_event_id` is given) and checks
// the original branch out again. The run branch is kept.
CommitOutcome close_session(const WorkspaceSession& session,
                            std::optional<std::int64_t> triggering_event_id,
                            const CommitMessageFn& make_message);

// Diff of `commit_id` against its parent; the commit must be reachable from
// `run_branch`. Throws NotFoundError otherwise.
[[nodiscard]] DiffResult get_diff(const std::filesystem::path& workspace_path,
                                  const std::string& run_branch, const std::string& commit_id);

}  // namespace agentstepper
