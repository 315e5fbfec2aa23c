// Minimal tool-using agent: asks a model for the next action, runs it,
// feeds the observation back, until the model says it is done.
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

using json = nlohmann::json;

struct Action {
  std::string name;
  json args;
};

// Stands in for a model client by replaying canned completions.
class CannedLlm {
 public:
  std::string get_completion(const std::string& prompt) {
    (void)prompt;
    static const std::vector<std::string> replies = {
        R"({"tool": "write_file", "args": {"path": "notes.txt", "contents": "hello\n"}})",
        R"({"tool": "append_file", "args": {"path": "notes.txt", "line": "world"}})",
        R"({"tool": "finish", "args": {}})",
    };
    return replies.at(std::min(turn_++, replies.size() - 1));
  }

 private:
  std::size_t turn_ = 0;
};

class Environment {
 public:
  explicit Environment(std::filesystem::path root) : root_(std::move(root)) {}

  std::string execute(const Action& action) {
    const auto path = root_ / action.args.value("path", "scratch.txt");
    if (action.name == "write_file") {
      std::ofstream(path, std::ios::trunc) << action.args.value("contents", "");
      return "wrote " + path.filename().string();
    }
    if (action.name == "append_file") {
      std::ofstream(path, std::ios::app) << action.args.value("line", "") << '\n';
      return "appended to " + path.filename().string();
    }
    return "ok";
  }

 private:
  std::filesystem::path root_;
};

class MyAgent {
 public:
  Action think() {
    auto prompt = get_next_prompt();
    auto response = llm_.get_completion(prompt);
    return response_to_action(response);
  }

  bool is_done() const { return done_; }
  void add_observation_to_history(const std::string& result) { history_.push_back(result); }

 private:
  std::string get_next_prompt() const {
    std::string prompt = "Task: leave a greeting in notes.txt.";
    for (const auto& observation : history_) {
      prompt += "\nObservation: " + observation;
    }
    return prompt;
  }

  Action response_to_action(const std::string& response) {
    auto parsed = json::parse(response);
    Action action{parsed["tool"].get<std::string>(), parsed["args"]};
    done_ = action.name == "finish";
    return action;
  }

  CannedLlm llm_;
  std::vector<std::string> history_;
  bool done_ = false;
};

int main(int argc, char** argv) {
  const std::filesystem::path workspace = argc > 1 ? argv[1] : "agent_workspace";
  std::filesystem::create_directories(workspace);
  MyAgent agent;
  Environment environment(workspace);
  while (!agent.is_done()) {
    auto action = agent.think();
    auto result = environment.execute(action);
    agent.add_observation_to_history(result);
  }
  return 0;
}
