#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mdtroom/case_model.hpp"

namespace mdtroom {

using IdSet = std::set<std::string>;

struct AgentProfile {
  std::string agent_id;
  std::string specialty;
  std::string role_prompt;
  int color_index = 0;
  bool operator==(const AgentProfile&) const = default;
};

struct DebateConfig {
  int max_debate_rounds = 3;
  bool convergence_stops_debate = true;
  int max_repairs = 2;
  double consensus_threshold = 1.0;
  std::map<std::string, std::string> hypothesis_aliases;
  bool operator==(const DebateConfig&) const = default;

  /// Throws InvalidConfig when a bound is violated.
  void validate() const;
};

enum class EvidenceSource { Guideline, Literature };

struct EvidenceRef {
  std::string evidence_id;
  EvidenceSource source_type = EvidenceSource::Guideline;
  std::string citation;
  std::string snippet;
  IdSet applies_to_item_ids;
  bool operator==(const EvidenceRef&) const = default;
};

struct ReasoningStep {
  std::string text;
  IdSet cited_item_ids;
  IdSet cited_evidence_ids;
  bool operator==(const ReasoningStep&) const = default;
};

struct Opinion {
  std::string agent_id;
  int round_index = 0;
  std::string hypothesis_id;
  std::string hypothesis_label_raw;
  std::vector<ReasoningStep> reasoning_steps;
  std::string summary;
  std::vector<EvidenceRef> evidence;
  std::optional<std::string> changed_from;
  bool carried_forward = false;
  bool invalid_output = false;
  bool operator==(const Opinion&) const = default;

  /// Items the agent relied on: every step citation plus every item an
  /// evidence entry was applied to.
  IdSet cited_item_ids() const;
  /// Evidence the agent tied to one item, either through a step citing both
  /// or through the evidence's own item list.
  IdSet evidence_for_item(std::string_view item_id) const;
  const EvidenceRef* find_evidence(std::string_view evidence_id) const;
};

enum class RoundKind { Initial, Debate, Revision, ReEval };

std::string_view to_string(RoundKind kind) noexcept;
std::optional<RoundKind> parse_round_kind(std::string_view text) noexcept;

struct RoundTrigger {
  enum class Kind { Intervention, Conflict };
  Kind kind = Kind::Intervention;
  std::string id;
  bool operator==(const RoundTrigger&) const = default;
};

struct Round {
  int round_index = 0;
  RoundKind kind = RoundKind::Initial;
  IdSet spoke;                    // agents queried for a fresh statement
  std::vector<Opinion> opinions;  // agent order
  std::optional<RoundTrigger> trigger;
  bool operator==(const Round&) const = default;

  const Opinion* opinion_of(std::string_view agent_id) const;
};

struct Intervention {
  std::string intervention_id;
  IdSet selected_item_ids;
  std::string instruction;
  IdSet target_agent_ids;
  std::vector<ItemEdit> case_edits;
  bool operator==(const Intervention&) const = default;
};

enum class SessionPhase { Configuring, Running, Paused, Converged, Terminated };

std::string_view to_string(SessionPhase phase) noexcept;

struct SessionStatus {
  SessionPhase phase = SessionPhase::Configuring;
  IdSet muted_agents;
  bool operator==(const SessionStatus&) const = default;
};

struct Hypothesis {
  std::string hypothesis_id;
  std::string canonical_label;
  std::string display_label;
  int color_index = 0;
  bool operator==(const Hypothesis&) const = default;
};

inline constexpr int kHypothesisPaletteSize = 12;

/// Canonical hypothesis identities, allocated in first-seen order.
class HypothesisRegistry {
 public:
  /// trim, case-fold, collapse internal whitespace
  static std::string normalize(std::string_view label);

  /// Normalized label with the alias table applied. Throws EmptyHypothesis.
  static std::string canonical_key(std::string_view label, const std::map<std::string, std::string>& aliases);

  const Hypothesis* find_key(std::string_view canonical_label) const;
  const Hypothesis* find_id(std::string_view hypothesis_id) const;

  /// Returns the existing entry for the label or registers a new one whose
  /// display label is the raw form first seen.
  const Hypothesis& intern(std::string_view raw_label, const std::map<std::string, std::string>& aliases);

  const std::vector<Hypothesis>& entries() const noexcept { return entries_; }
  std::string display(std::string_view hypothesis_id) const;
  bool operator==(const HypothesisRegistry&) const = default;

 private:
  std::vector<Hypothesis> entries_;
};

void to_json(nlohmann::json& j, const AgentProfile& agent);
void from_json(const nlohmann::json& j, AgentProfile& agent);
void to_json(nlohmann::json& j, const DebateConfig& config);
void from_json(const nlohmann::json& j, DebateConfig& config);
void to_json(nlohmann::json& j, const EvidenceRef& evidence);
void from_json(const nlohmann::json& j, EvidenceRef& evidence);
void to_json(nlohmann::json& j, const ReasoningStep& step);
void from_json(const nlohmann::json& j, ReasoningStep& step);
void to_json(nlohmann::json& j, const Opinion& opinion);
void from_json(const nlohmann::json& j, Opinion& opinion);
void to_json(nlohmann::json& j, const RoundTrigger& trigger);
void from_json(const nlohmann::json& j, RoundTrigger& trigger);
void to_json(nlohmann::json& j, const Round& round);
void from_json(const nlohmann::json& j, Round& round);
void to_json(nlohmann::json& j, const Intervention& intervention);
void from_json(const nlohmann::json& j, Intervention& intervention);
void to_json(nlohmann::json& j, const SessionStatus& status);
void to_json(nlohmann::json& j, const Hypothesis& hypothesis);
void from_json(const nlohmann::json& j, Hypothesis& hypothesis);

}  // namespace mdtroom
