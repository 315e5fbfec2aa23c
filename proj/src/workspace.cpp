#include "agentstepper/workspace.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <system_error>

#include "agentstepper/errors.hpp"
#include "agentstepper/process.hpp"

namespace agentstepper {
namespace {

namespace fs = std::filesystem;

class Git {
 public:
  explicit Git(fs::path dir) : dir_(std::move(dir)) {}

  ProcessResult try_run(std::vector<std::string> args, const std::vector<std::string>& config = {}) const {
    std::vector<std::string> argv{"git",
                                  "-c", "user.name=AgentStepper",
                                  "-c", "user.email=agentstepper@localhost",
                                  "-c", "commit.gpgsign=false",
                                  "-c", "core.hooksPath=/dev/null",
                                  "-c", "core.autocrlf=false",
                                  "-c", "advice.detachedHead=false"};
    for (const auto& c : config) {
      argv.push_back("-c");
      argv.push_back(c);
    }
    argv.insert(argv.end(), std::make_move_iterator(args.begin()), std::make_move_iterator(args.end()));
    try {
      return run_process(argv, dir_);
    } catch (const std::system_error& ex) {
      throw WorkspaceError(std::string("cannot run git: ") + ex.what());
    }
  }

  template <typename ErrorT = WorkspaceError>
  std::string run(std::vector<std::string> args, const std::vector<std::string>& config = {}) const {
    auto cmd = args.empty() ? std::string{} : args.front();
    auto result = try_run(std::move(args), config);
    if (!result.ok()) {
      throw ErrorT("git " + cmd + " failed in " + dir_.string() + ": " + trim(result.err));
    }
    return result.out;
  }

  static std::string trim(std::string s) {
    while (!s.empty() && (s.back() == '\n' || s.back() == '\r' || s.back() == ' ')) {
      s.pop_back();
    }
    return s;
  }

  [[nodiscard]] const fs::path& dir() const { return dir_; }

 private:
  fs::path dir_;
};

std::vector<std::string> ignore_config(const fs::path& workspace) {
  const auto ignore_file = workspace / kIgnoreFileName;
  std::error_code ec;
  if (fs::is_regular_file(ignore_file, ec)) {
    return {"core.excludesFile=" + ignore_file.string()};
  }
  return {};
}

template <typename ErrorT>
void stage_all(const Git& git) {
  git.run<ErrorT>({"add", "-A", "--", "."}, ignore_config(git.dir()));
}

bool staged_changes(const Git& git) {
  auto result = git.try_run({"diff", "--cached", "--quiet", "--no-ext-diff"});
  if (result.exit_code > 1) {
    throw CommitError("git diff --cached failed: " + Git::trim(result.err));
  }
  return result.exit_code == 1;
}

bool has_commits(const Git& git) {
  return git.try_run({"rev-parse", "-q", "--verify", "HEAD^{commit}"}).ok();
}

bool branch_exists(const Git& git, const std::string& name) {
  return git.try_run({"show-ref", "--verify", "--quiet", "refs/heads/" + name}).ok();
}

std::string one_line(std::string text) {
  std::replace_if(text.begin(), text.end(), [](char c) { return c == '\n' || c == '\r'; }, ' ');
  return text;
}

std::string describe_files(const DiffResult& diff) {
  std::string out;
  for (const auto& f : diff.files) {
    if (!out.empty()) {
      out += "\n";
    }
    out += f.path;
    out += f.binary ? " (binary)"
                    : " (+" + std::to_string(f.insertions) + " -" + std::to_string(f.deletions) + ")";
  }
  return out;
}

// "@@ -a[,b] +c[,d] @@" -> {b, d}; counts default to 1.
bool parse_hunk_header(std::string_view line, std::int64_t& old_count, std::int64_t& new_count) {
  auto read_range = [](std::string_view s, std::size_t& pos, std::int64_t& count) {
    std::int64_t start = 0;
    auto [p, ec] = std::from_chars(s.data() + pos, s.data() + s.size(), start);
    if (ec != std::errc{}) {
      return false;
    }
    pos = static_cast<std::size_t>(p - s.data());
    count = 1;
    if (pos < s.size() && s[pos] == ',') {
      ++pos;
      auto [q, ec2] = std::from_chars(s.data() + pos, s.data() + s.size(), count);
      if (ec2 != std::errc{}) {
        return false;
      }
      pos = static_cast<std::size_t>(q - s.data());
    }
    return true;
  };
  if (!line.starts_with("@@ -")) {
    return false;
  }
  std::size_t pos = 4;
  if (!read_range(line, pos, old_count)) {
    return false;
  }
  if (line.substr(pos, 2) != " +") {
    return false;
  }
  pos += 2;
  return read_range(line, pos, new_count);
}

std::string strip_prefix_path(std::string_view p) {
  if (p.starts_with("a/") || p.starts_with("b/")) {
    p.remove_prefix(2);
  }
  return std::string(p);
}

}  // namespace

DiffResult parse_unified_diff(std::string text) {
  DiffResult result;
  std::int64_t old_left = 0;
  std::int64_t new_left = 0;
  bool in_hunk = false;

  std::size_t start = 0;
  while (start < text.size()) {
    auto nl = text.find('\n', start);
    std::string_view line(text.data() + start,
                          (nl == std::string::npos ? text.size() : nl) - start);
    start = nl == std::string::npos ? text.size() : nl + 1;

    if (in_hunk && (old_left > 0 || new_left > 0)) {
      if (line.starts_with("\\")) {
        continue;  // "\ No newline at end of file"
      }
      auto& file = result.files.back();
      const char tag = line.empty() ? ' ' : line.front();
      if (tag == '+') {
        ++file.insertions;
        --new_left;
      } else if (tag == '-') {
        ++file.deletions;
        --old_left;
      } else {
        --old_left;
        --new_left;
      }
      continue;
    }
    in_hunk = false;

    if (line.starts_with("diff --git ")) {
      FileDiffStat file;
      auto rest = line.substr(11);
      if (auto pos = rest.rfind(" b/"); pos != std::string_view::npos) {
        file.path = std::string(rest.substr(pos + 3));
      } else {
        file.path = std::string(rest);
      }
      result.files.push_back(std::move(file));
    } else if (result.files.empty()) {
      continue;
    } else if (line.starts_with("+++ ") && line.substr(4) != "/dev/null") {
      result.files.back().path = strip_prefix_path(line.substr(4));
    } else if (line.starts_with("Binary files ")) {
      result.files.back().binary = true;
    } else if (parse_hunk_header(line, old_left, new_left)) {
      in_hunk = true;
    }
  }

  for (const auto& f : result.files) {
    result.insertions += f.insertions;
    result.deletions += f.deletions;
  }
  result.files_changed = static_cast<std::int64_t>(result.files.size());
  result.text = std::move(text);
  return result;
}

WorkspaceSession open_session(const fs::path& workspace_path, const std::string& run_id) {
  std::error_code ec;
  if (!fs::is_directory(workspace_path, ec)) {
    throw WorkspaceError("workspace path " + workspace_path.string() + " is not a directory");
  }
  const auto path = fs::canonical(workspace_path);
  for (const auto& part : path) {
    if (part == ".git") {
      throw WorkspaceError("workspace path " + path.string() + " is inside repository metadata");
    }
  }
  Git git(path);
  if (auto inside = git.try_run({"rev-parse", "--is-inside-git-dir"});
      inside.ok() && Git::trim(inside.out) == "true") {
    throw WorkspaceError("workspace path " + path.string() + " is inside repository metadata");
  }

  bool is_repo_root = false;
  if (auto top = git.try_run({"rev-parse", "--show-toplevel"}); top.ok()) {
    is_repo_root = fs::equivalent(fs::path(Git::trim(top.out)), path, ec);
  }
  if (!is_repo_root) {
    git.run({"init", "-q"});
    spdlog::info("initialized repository in {}", path.string());
  }

  WorkspaceSession session;
  session.workspace_path = path;
  if (auto head = git.try_run({"symbolic-ref", "--short", "-q", "HEAD"}); head.ok()) {
    session.original_branch = Git::trim(head.out);
  } else {
    session.original_branch = Git::trim(git.run({"rev-parse", "HEAD"}));
    session.original_detached = true;
  }

  if (!has_commits(git)) {
    // Unborn branch: the baseline becomes its first commit.
    stage_all<WorkspaceError>(git);
    git.run({"commit", "-q", "--allow-empty", "--no-verify", "-m", "AgentStepper baseline"});
  }

  std::string branch = std::string(kRunBranchPrefix) + run_id;
  for (int suffix = 2; branch_exists(git, branch); ++suffix) {
    branch = std::string(kRunBranchPrefix) + run_id + "-" + std::to_string(suffix);
  }
  git.run({"checkout", "-q", "-b", branch});
  session.run_branch = branch;

  stage_all<WorkspaceError>(git);
  if (staged_changes(git)) {
    git.run({"commit", "-q", "--no-verify", "-m", "AgentStepper baseline",
             "-m", "Uncommitted changes present when the run started."});
  }
  session.baseline_commit = Git::trim(git.run({"rev-parse", "HEAD"}));
  return session;
}

CommitOutcome commit_changes(const WorkspaceSession& session, std::optional<std::string> summary,
                             std::optional<std::string> description,
                             std::int64_t triggering_event_id, const CommitMessageFn& make_message) {
  Git git(session.workspace_path);
  auto head = git.try_run({"symbolic-ref", "--short", "-q", "HEAD"});
  if (!head.ok() || Git::trim(head.out) != session.run_branch) {
    throw CommitError("workspace is no longer on " + session.run_branch);
  }
  stage_all<CommitError>(git);
  if (!staged_changes(git)) {
    return CommitOutcome{false, std::nullopt, "no changes to commit"};
  }

  auto staged = parse_unified_diff(
      git.run<CommitError>({"diff", "--cached", "--no-color", "--no-renames", "--no-ext-diff"}));

  CommitRecord record;
  record.message_summary = one_line(summary && !summary->empty() ? *summary : make_message(staged));
  record.message_description = description ? *description : describe_files(staged);

  std::vector<std::string> args{"commit", "-q", "--no-verify", "-m", record.message_summary};
  if (!record.message_description.empty()) {
    args.push_back("-m");
    args.push_back(record.message_description);
  }
  git.run<CommitError>(std::move(args));

  record.commit_id = Git::trim(git.run<CommitError>({"rev-parse", "HEAD"}));
  record.triggering_event_id = triggering_event_id;
  record.files_changed = staged.files_changed;
  record.insertions = staged.insertions;
  record.deletions = staged.deletions;
  record.timestamp = now();
  return CommitOutcome{true, std::move(record), {}};
}

CommitOutcome close_session(const WorkspaceSession& session,
                            std::optional<std::int64_t> triggering_event_id,
                            const CommitMessageFn& make_message) {
  Git git(session.workspace_path);
  CommitOutcome outcome;
  if (triggering_event_id) {
    outcome = commit_changes(session, std::nullopt, std::nullopt, *triggering_event_id, make_message);
  } else {
    // No event to attach a record to; still snapshot so the switch is clean.
    stage_all<CommitError>(git);
    if (staged_changes(git)) {
      git.run<CommitError>({"commit", "-q", "--no-verify", "-m", "AgentStepper final snapshot"});
    }
  }
  if (session.original_detached) {
    git.run({"checkout", "-q", "--detach", session.original_branch});
  } else {
    git.run({"checkout", "-q", session.original_branch});
  }
  return outcome;
}

DiffResult get_diff(const fs::path& workspace_path, const std::string& run_branch,
                    const std::string& commit_id) {
  Git git(workspace_path);
  auto resolved = git.try_run({"rev-parse", "-q", "--verify", commit_id + "^{commit}"});
  if (commit_id.empty() || !resolved.ok()) {
    throw NotFoundError("unknown commit " + commit_id);
  }
  const auto full_id = Git::trim(resolved.out);
  if (!git.try_run({"merge-base", "--is-ancestor", full_id, run_branch}).ok()) {
    throw NotFoundError("commit " + commit_id + " is not on " + run_branch);
  }
  return parse_unified_diff(git.run({"show", "--format=", "--no-color", "--no-renames",
                                     "--no-ext-diff", "-p", full_id}));
}

}  // namespace agentstepper
