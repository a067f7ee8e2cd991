#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mdtroom/session_state.hpp"

/// Derived analytics over committed rounds. Every function here is a pure
/// function of a SessionState.
namespace mdtroom::analysis {

/// Computes the conflict delta produced by committing `round_index`. The
/// state must hold that round as its latest and conflicts as of the round
/// before. Agents A, B disagree over a pair {h1, h2} when they hold h1 != h2
/// and cite at least one common item.
ConflictDelta detect_conflicts(const SessionState& state, int round_index);

/// Conflicts as they stood right after `round_index` committed.
std::vector<Conflict> conflicts_as_of(const SessionState& state, int round_index);

struct ProvenanceBadge {
  std::string item_id;
  std::string agent_id;
  std::string hypothesis_id;
  int round_index = 0;
  IdSet evidence_ids;
  bool operator==(const ProvenanceBadge&) const = default;
};

using ProvenanceIndex = std::map<std::string, std::vector<ProvenanceBadge>>;

/// Latest badge per (item, agent) up to `round_index`, badges ordered by agent
/// color index. Every current case item has an entry.
ProvenanceIndex build_provenance_index(const SessionState& state, int round_index);

enum class ItemFlag { None, Conflict, Resolved };
std::string_view to_string(ItemFlag flag) noexcept;

struct ItemBadgeState {
  std::vector<ProvenanceBadge> badges;
  ItemFlag flag = ItemFlag::None;
  bool operator==(const ItemBadgeState&) const = default;
};

ItemBadgeState item_badge_state(const SessionState& state, const std::string& item_id, int round_index);

struct OpinionChange {
  std::string agent_id;
  std::string from_hypothesis;
  std::string to_hypothesis;
  bool operator==(const OpinionChange&) const = default;
};

struct RoundSummary {
  int round_index = 0;
  std::map<std::string, int> support;
  int new_conflicts = 0;
  int resolved_conflicts = 0;
  std::vector<OpinionChange> opinion_changes;
  bool operator==(const RoundSummary&) const = default;
};

RoundSummary compute_round_summary(const SessionState& state, int round_index);

struct FlowNode {
  int round_index = 0;
  std::string hypothesis_id;
  bool operator==(const FlowNode&) const = default;
};

struct FlowEdge {
  FlowNode from;
  FlowNode to;
  int weight = 0;
  bool operator==(const FlowEdge&) const = default;
};

/// Throws TooFewRounds with fewer than two committed rounds.
std::vector<FlowEdge> compute_hypothesis_flow(const SessionState& state);

enum class DivergenceKind { DifferentEvidence, SameEvidenceDifferentReading };

struct EvidenceUse {
  std::string agent_id;
  std::string hypothesis_id;
  std::string evidence_id;
  std::string citation;
  std::string snippet;
  bool operator==(const EvidenceUse&) const = default;
};

struct EvidenceRow {
  std::string item_id;
  std::vector<EvidenceUse> side_a;  // holders of hypothesis_pair.first
  std::vector<EvidenceUse> side_b;
  DivergenceKind divergence_kind = DivergenceKind::DifferentEvidence;
  bool operator==(const EvidenceRow&) const = default;
};

struct EvidenceComparison {
  std::string conflict_id;
  std::vector<EvidenceRow> rows;
  bool operator==(const EvidenceComparison&) const = default;
};

EvidenceComparison compare_evidence(const SessionState& state, const std::string& conflict_id);

struct ConvergenceStatus {
  bool converged = false;
  std::optional<std::string> hypothesis_id;  // modal hypothesis
  int modal_count = 0;
  int participants = 0;
  double support_share = 0.0;
  IdSet dissenting_agents;
  int as_of_round = 0;
  bool operator==(const ConvergenceStatus&) const = default;
};

/// Modal-share test over one round's opinions.
ConvergenceStatus evaluate_convergence(const Round& round, double threshold);

/// Convergence of the latest round. Throws NoRounds.
ConvergenceStatus check_convergence(const SessionState& state);

struct ConsensusSummary {
  bool converged = false;
  std::optional<std::string> hypothesis_id;
  double support_share = 0.0;
  IdSet dissenting_agents;
  int as_of_round = 0;
  bool operator==(const ConsensusSummary&) const = default;
};

ConsensusSummary consensus_summary(const SessionState& state);

void to_json(nlohmann::json& j, const ProvenanceBadge& badge);
void to_json(nlohmann::json& j, const RoundSummary& summary);
void to_json(nlohmann::json& j, const FlowEdge& edge);
void to_json(nlohmann::json& j, const EvidenceComparison& comparison);
void to_json(nlohmann::json& j, const ConsensusSummary& summary);
void from_json(const nlohmann::json& j, ConsensusSummary& summary);

}  // namespace mdtroom::analysis
