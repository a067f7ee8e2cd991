#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mdtroom/chat_client.hpp"
#include "mdtroom/session_state.hpp"

namespace mdtroom {

struct OpinionDigest {
  int round_index = 0;
  std::string agent_id;
  std::string specialty;
  std::string hypothesis;  // display label
  std::string summary;
  IdSet cited_item_ids;
};

struct ConflictBrief {
  std::string conflict_id;
  std::string hypothesis_a;
  std::string hypothesis_b;
  IdSet contested_item_ids;
};

/// What one agent sees when asked for a statement.
struct ContextBundle {
  RoundKind kind = RoundKind::Initial;
  int round_index = 0;
  int attempt = 0;  // 0 = first ask, k = k-th repair
  AgentProfile agent;
  std::vector<CaseItem> case_items;
  std::vector<OpinionDigest> prior_opinions;  // Debate, Revision, ReEval
  IdSet highlighted_item_ids;                 // Revision
  std::string instruction;                    // Revision
  std::optional<ConflictBrief> conflict;      // ReEval
  std::vector<std::string> repair_reasons;
};

ContextBundle build_context(const SessionState& state, const InFlightRound& round, const std::string& agent_id);

std::vector<ChatMessage> render_prompt(const ContextBundle& bundle);

void to_json(nlohmann::json& j, const ContextBundle& bundle);

/// (AgentProfile, ContextBundle) -> raw reply text. Throws TransportError.
class AgentTransport {
 public:
  virtual ~AgentTransport() = default;
  virtual std::string query(const ContextBundle& bundle) = 0;
};

/// Replies from a fixture tree. For agent A in round r of kind K the first
/// existing file wins:
///   attempt k > 0:  A/r.repair<k>.json
///   always:         A/r.<k>.json (k = initial|debate|revision|reeval), A/r.json
class ScriptedTransport final : public AgentTransport {
 public:
  explicit ScriptedTransport(std::filesystem::path root) : root_(std::move(root)) {}
  std::string query(const ContextBundle& bundle) override;

 private:
  std::filesystem::path root_;
};

class LiveTransport final : public AgentTransport {
 public:
  explicit LiveTransport(std::shared_ptr<ChatClient> client) : client_(std::move(client)) {}
  std::string query(const ContextBundle& bundle) override;

 private:
  std::shared_ptr<ChatClient> client_;
};

}  // namespace mdtroom
