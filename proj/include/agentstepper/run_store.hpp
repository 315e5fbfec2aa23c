#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "agentstepper/trajectory.hpp"

namespace agentstepper {

// Append-only trajectory file of one live run. The first line is the header;
// every append writes a full event record. A later record with an event_id
// that was already written supersedes the earlier one (summaries, commits and
// edits arrive after the event itself).
class RunJournal {
 public:
  RunJournal(std::filesystem::path file, const RunRecord& run);

  void append(const Event& event);
  [[nodiscard]] const std::filesystem::path& path() const { return file_; }

 private:
  std::filesystem::path file_;
  std::ofstream out_;
};

struct StoredRun {
  Trajectory trajectory;
  bool imported = false;
};

// data_dir/runs/<run_id>/trajectory.jsonl
class RunStore {
 public:
  explicit RunStore(std::filesystem::path data_dir);

  [[nodiscard]] const std::filesystem::path& data_dir() const { return data_dir_; }
  [[nodiscard]] std::filesystem::path trajectory_file(const std::string& run_id) const;
  [[nodiscard]] bool exists(const std::string& run_id) const;

  [[nodiscard]] std::unique_ptr<RunJournal> start_journal(const RunRecord& run) const;

  // Atomically replaces the run's file with its canonical document.
  void write(const Trajectory& trajectory, bool imported) const;

  // Reads every run directory. Runs persisted as live are demoted to aborted
  // (and rewritten); unreadable runs are skipped with a warning.
  [[nodiscard]] std::vector<StoredRun> load_all() const;

  // Same as load_all but never writes; live runs stay live.
  [[nodiscard]] std::vector<StoredRun> scan() const;

  // Tolerant reader for journal files: superseding records, a torn last line
  // and a stale header event_count are accepted.
  [[nodiscard]] static StoredRun read_journal(std::string_view document);

 private:
  [[nodiscard]] std::vector<StoredRun> read_all(bool repair) const;

  std::filesystem::path data_dir_;
};

}  // namespace agentstepper
