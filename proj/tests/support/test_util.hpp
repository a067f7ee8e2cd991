#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <unistd.h>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mdtroom/chat_client.hpp"
#include "mdtroom/engine.hpp"
#include "mdtroom/event_store.hpp"

namespace mdtroom::testing {

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("mdtroom-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline CaseRecord small_case(int n_items = 4) {
  CaseRecord record;
  record.case_id = "case-1";
  record.narrative = "test";
  for (int k = 0; k < n_items; ++k) {
    record = apply_item_edit(record, ItemEdit::add(Category::Labs, "finding " + std::to_string(k + 1), ""));
  }
  record.revision = 0;
  return record;
}

inline std::vector<AgentProfile> panel(int n) {
  std::vector<AgentProfile> agents;
  for (int k = 0; k < n; ++k) agents.push_back({"a" + std::to_string(k + 1), "Specialty", "", 0});
  return agents;
}

/// Wire-format reply citing `items` in one reasoning step.
inline std::string reply(const std::string& hypothesis, const std::vector<std::string>& items,
                         const nlohmann::json& evidence = nlohmann::json::array()) {
  nlohmann::json step = {{"text", "because"}, {"items", items}, {"evidence", nlohmann::json::array()}};
  for (const auto& e : evidence) step["evidence"].push_back(e.at("id"));
  return nlohmann::json{{"hypothesis", hypothesis}, {"summary", "s"}, {"steps", {step}}, {"evidence", evidence}}
      .dump();
}

/// Transport driven by a callback; counts queries per agent.
class LambdaTransport final : public AgentTransport {
 public:
  using Fn = std::function<std::string(const ContextBundle&)>;
  explicit LambdaTransport(Fn fn) : fn_(std::move(fn)) {}
  std::string query(const ContextBundle& bundle) override {
    ++calls[bundle.agent.agent_id];
    return fn_(bundle);
  }
  std::map<std::string, int> calls;

 private:
  Fn fn_;
};

/// Replies from a table keyed by (agent, round); missing entries fail.
inline std::shared_ptr<LambdaTransport> table_transport(std::map<std::pair<std::string, int>, std::string> table) {
  return std::make_shared<LambdaTransport>([table = std::move(table)](const ContextBundle& b) {
    auto it = table.find({b.agent.agent_id, b.round_index});
    if (it == table.end()) throw TransportError("no reply for " + b.agent.agent_id);
    return it->second;
  });
}

// A session whose next replies are set per agent before each round.
struct Scripted {
  explicit Scripted(int agents, int items = 4, DebateConfig config = {}, std::shared_ptr<LogSink> sink = nullptr)
      : store(fixed_step_clock(), std::move(sink)) {
    config.convergence_stops_debate = false;
    config.max_debate_rounds = 5;
    create_session(store, "s", small_case(items), panel(agents), config);
    transport = std::make_shared<LambdaTransport>([this](const ContextBundle& b) { return next.at(b.agent.agent_id); });
    engine = std::make_unique<DebateEngine>(store, transport);
  }
  const Round& round(RoundKind kind, std::map<std::string, std::string> replies) {
    next = std::move(replies);
    return engine->run_round(kind);
  }
  std::string hid(const std::string& label) const {
    return store.state().hypotheses.find_key(HypothesisRegistry::normalize(label))->hypothesis_id;
  }

  SessionStore store;
  std::map<std::string, std::string> next;
  std::shared_ptr<LambdaTransport> transport;
  std::unique_ptr<DebateEngine> engine;
};

}  // namespace mdtroom::testing
