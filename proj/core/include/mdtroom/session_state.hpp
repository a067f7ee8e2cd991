#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mdtroom/case_model.hpp"
#include "mdtroom/debate.hpp"

namespace mdtroom {

enum class ConflictStatus { Active, Resolved };
enum class LifecycleKind { Opened, AgentJoined, StanceChanged, ReEvalRequested, Resolved };

std::string_view to_string(ConflictStatus status) noexcept;
std::string_view to_string(LifecycleKind kind) noexcept;

struct LifecycleEvent {
  LifecycleKind kind = LifecycleKind::Opened;
  int round_index = 0;
  std::string detail;
  bool operator==(const LifecycleEvent&) const = default;
};

/// A disagreement between two hypotheses grounded in shared data items.
/// Identity is the hypothesis pair; a recurrence after resolution is a new
/// conflict that points back through `supersedes`.
struct Conflict {
  std::string conflict_id;
  std::pair<std::string, std::string> hypothesis_pair;  // first < second
  IdSet involved_agents;
  IdSet contested_item_ids;
  ConflictStatus status = ConflictStatus::Active;
  std::vector<LifecycleEvent> lifecycle;
  std::optional<std::string> supersedes;
  bool operator==(const Conflict&) const = default;

  int opened_round() const;
  std::optional<int> resolved_round() const;
};

enum class ChangeKind { Opened, Updated, Resolved };

/// One entry of a round's conflict delta; the unit recorded as an analytics
/// event.
struct ConflictChange {
  ChangeKind kind = ChangeKind::Opened;
  int round_index = 0;
  std::string conflict_id;
  std::optional<Conflict> opened;  // kind == Opened
  IdSet added_agents;
  IdSet added_items;
  std::vector<LifecycleEvent> lifecycle;  // appended entries
  bool operator==(const ConflictChange&) const = default;
};

struct ConflictDelta {
  int round_index = 0;
  std::vector<ConflictChange> changes;
  bool operator==(const ConflictDelta&) const = default;

  int count(ChangeKind kind) const;
  bool empty() const noexcept { return changes.empty(); }
};

/// Applies one recorded change to the conflict list. Throws IllegalEvent when
/// the change does not fit (unknown id, event after resolution, ...).
void apply_conflict_change(std::vector<Conflict>& conflicts, const ConflictChange& change);

struct InFlightRound {
  int round_index = 0;
  RoundKind kind = RoundKind::Initial;
  std::optional<RoundTrigger> trigger;
  IdSet targets;
  bool operator==(const InFlightRound&) const = default;
};

/// Everything a session knows at one point of its event history. Always the
/// result of folding a log prefix.
struct SessionState {
  std::string session_id;
  std::uint64_t seq = 0;
  CaseRecord case_record;
  std::vector<AgentProfile> agents;
  DebateConfig config;
  std::vector<Round> rounds;
  HypothesisRegistry hypotheses;
  std::vector<Conflict> conflicts;   // opening order
  std::vector<ConflictDelta> deltas;  // one per committed round
  SessionStatus status;
  std::vector<Intervention> interventions;
  std::optional<InFlightRound> in_flight;
  std::vector<std::uint64_t> round_end_seq;
  bool operator==(const SessionState&) const = default;

  const AgentProfile* find_agent(std::string_view agent_id) const;
  bool is_muted(std::string_view agent_id) const;
  const Conflict* find_conflict(std::string_view conflict_id) const;
  /// The agent's opinion in the most recent committed round where it has one.
  const Opinion* latest_opinion(std::string_view agent_id) const;
  int initial_and_debate_rounds() const;
  std::vector<std::string> unmuted_agents() const;  // agent order
  const Round& round(int round_index) const;         // throws UnknownRound
};

void to_json(nlohmann::json& j, const LifecycleEvent& event);
void from_json(const nlohmann::json& j, LifecycleEvent& event);
void to_json(nlohmann::json& j, const Conflict& conflict);
void from_json(const nlohmann::json& j, Conflict& conflict);
void to_json(nlohmann::json& j, const ConflictChange& change);
void from_json(const nlohmann::json& j, ConflictChange& change);
void to_json(nlohmann::json& j, const InFlightRound& round);
void to_json(nlohmann::json& j, const SessionState& state);

}  // namespace mdtroom
