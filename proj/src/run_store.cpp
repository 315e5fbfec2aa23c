#include "agentstepper/run_store.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <sstream>
#include <tuple>

#include "agentstepper/errors.hpp"

namespace agentstepper {

namespace fs = std::filesystem;

RunJournal::RunJournal(fs::path file, const RunRecord& run) : file_(std::move(file)) {
  fs::create_directories(file_.parent_path());
  out_.open(file_, std::ios::binary | std::ios::trunc);
  if (!out_) {
    throw std::runtime_error("cannot open " + file_.string() + " for writing");
  }
  out_ << serialize_header(run) << std::flush;
}

void RunJournal::append(const Event& event) {
  out_ << serialize_event(event) << std::flush;
  if (!out_) {
    spdlog::error("failed to append event {} to {}", event.event_id, file_.string());
  }
}

RunStore::RunStore(fs::path data_dir) : data_dir_(std::move(data_dir)) {
  fs::create_directories(data_dir_ / "runs");
}

fs::path RunStore::trajectory_file(const std::string& run_id) const {
  return data_dir_ / "runs" / run_id / "trajectory.jsonl";
}

bool RunStore::exists(const std::string& run_id) const {
  return fs::exists(data_dir_ / "runs" / run_id);
}

std::unique_ptr<RunJournal> RunStore::start_journal(const RunRecord& run) const {
  return std::make_unique<RunJournal>(trajectory_file(run.run_id), run);
}

void RunStore::write(const Trajectory& trajectory, bool imported) const {
  const auto target = trajectory_file(trajectory.run.run_id);
  fs::create_directories(target.parent_path());
  auto tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << serialize_run(trajectory, SerializeOptions{imported});
    out.flush();
    if (!out) {
      throw std::runtime_error("cannot write " + tmp.string());
    }
  }
  fs::rename(tmp, target);
}

StoredRun RunStore::read_journal(std::string_view document) {
  StoredRun stored;
  auto& trajectory = stored.trajectory;

  std::size_t start = 0;
  std::int64_t line_no = 0;
  bool have_header = false;
  while (start < document.size()) {
    auto nl = document.find('\n', start);
    const bool torn = nl == std::string_view::npos;
    auto line = document.substr(start, (torn ? document.size() : nl) - start);
    start = torn ? document.size() : nl + 1;
    ++line_no;

    Value record = Value::parse(line, nullptr, false);
    if (!have_header) {
      if (record.is_discarded() || !record.is_object() ||
          record.value("schema", "") != kTrajectorySchema || !record.contains("run")) {
        throw ParseError(line_no, "missing or malformed metadata header");
      }
      try {
        trajectory.run = run_from_json(record["run"]);
      } catch (const std::exception& ex) {
        throw ParseError(line_no, ex.what());
      }
      stored.imported = record.value("imported", false);
      have_header = true;
      continue;
    }
    if (record.is_discarded()) {
      spdlog::warn("dropping unreadable record at line {} ({})", line_no,
                   torn ? "torn write" : "malformed");
      break;
    }
    Event event;
    try {
      event = event_from_json(record);
    } catch (const std::exception& ex) {
      spdlog::warn("dropping invalid event record at line {}: {}", line_no, ex.what());
      break;
    }
    const auto count = static_cast<std::int64_t>(trajectory.events.size());
    if (event.event_id < count) {
      trajectory.events[static_cast<std::size_t>(event.event_id)] = std::move(event);
    } else if (event.event_id == count) {
      trajectory.events.push_back(std::move(event));
    } else {
      spdlog::warn("event id gap at line {}; ignoring the rest", line_no);
      break;
    }
  }
  if (!have_header) {
    throw ParseError(1, "empty trajectory file");
  }

  auto& run = trajectory.run;
  run.event_count = static_cast<std::int64_t>(trajectory.events.size());
  if (stored.imported) {
    run.recorded_mode = run.mode;
    run.recorded_status = run.status;
    run.mode = RunMode::post_hoc;
    run.status = RunStatus::imported;
  }
  validate(trajectory);
  return stored;
}

std::vector<StoredRun> RunStore::load_all() const { return read_all(true); }

std::vector<StoredRun> RunStore::scan() const { return read_all(false); }

std::vector<StoredRun> RunStore::read_all(bool repair) const {
  std::vector<StoredRun> runs;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(data_dir_ / "runs", ec)) {
    if (!entry.is_directory()) {
      continue;
    }
    const auto file = entry.path() / "trajectory.jsonl";
    try {
      std::ifstream in(file, std::ios::binary);
      if (!in) {
        throw std::runtime_error("cannot open " + file.string());
      }
      std::stringstream buffer;
      buffer << in.rdbuf();
      auto stored = read_journal(buffer.str());
      auto& run = stored.trajectory.run;
      if (repair && run.status == RunStatus::live) {
        run.status = RunStatus::aborted;
        run.ended_at = stored.trajectory.events.empty() ? run.started_at
                                                        : stored.trajectory.events.back().timestamp;
        spdlog::warn("run {} was live when the server stopped; marking it aborted", run.run_id);
        write(stored.trajectory, stored.imported);
      }
      runs.push_back(std::move(stored));
    } catch (const std::exception& ex) {
      spdlog::warn("skipping run directory {}: {}", entry.path().string(), ex.what());
    }
  }
  std::sort(runs.begin(), runs.end(), [](const StoredRun& a, const StoredRun& b) {
    return std::tie(a.trajectory.run.started_at, a.trajectory.run.run_id) <
           std::tie(b.trajectory.run.started_at, b.trajectory.run.run_id);
  });
  return runs;
}

}  // namespace agentstepper
