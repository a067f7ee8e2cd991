#pragma once

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "mdtroom/analysis.hpp"
#include "mdtroom/event_store.hpp"
#include "mdtroom/transport.hpp"

namespace mdtroom {

enum class StatementError { SchemaMismatch, UnknownItemReference, UnknownEvidenceReference, EmptyHypothesis };

std::string_view to_string(StatementError code) noexcept;

struct StatementIssue {
  StatementError code = StatementError::SchemaMismatch;
  std::string detail;
  bool operator==(const StatementIssue&) const = default;

  std::string render() const;  // "UnknownItemReference(i9)"
};

struct ValidationFailure {
  std::vector<StatementIssue> issues;
  bool has(StatementError code) const;
  std::vector<std::string> reasons() const;
};

using StatementResult = std::variant<Opinion, ValidationFailure>;

/// Parses one agent reply against the wire schema and the session's case.
/// On success the Opinion carries the engine's changed_from; hypothesis_id is
/// empty when the label has not been registered yet (the commit assigns it).
StatementResult validate_statement(std::string_view raw, const SessionState& state, const std::string& agent_id,
                                   int round_index);

/// Appends SessionCreated. Agents get color indices by position. Throws
/// InvalidCase, TooFewAgents, DuplicateAgent, InvalidConfig.
void create_session(SessionStore& store, const std::string& session_id, const CaseRecord& record,
                    std::vector<AgentProfile> agents, const DebateConfig& config);

struct ControlAction {
  enum class Kind { Pause, Resume, Terminate, Mute, Unmute };
  Kind kind = Kind::Pause;
  std::string agent_id;  // Mute / Unmute

  static std::optional<Kind> parse_kind(std::string_view text);
};

std::string_view to_string(ControlAction::Kind kind) noexcept;

struct EngineOptions {
  bool parallel_queries = false;
};

/// Drives one session. Each operation either appends a complete batch to the
/// store or throws and appends nothing.
class DebateEngine {
 public:
  DebateEngine(SessionStore& store, std::shared_ptr<AgentTransport> transport, EngineOptions options = {});

  /// kind must be Initial or Debate.
  const Round& run_round(RoundKind kind);
  /// Runs Initial or the next Debate round, whichever applies.
  const Round& advance();
  bool can_advance() const;

  /// An empty intervention_id is assigned as "iv<n>".
  const Round& submit_intervention(Intervention intervention);
  const Round& request_reeval(const std::string& conflict_id);
  const SessionStatus& control(const ControlAction& action);

  analysis::ConvergenceStatus check_convergence() const { return analysis::check_convergence(store_.state()); }
  const SessionState& state() const noexcept { return store_.state(); }

 private:
  const Round& execute(std::vector<PendingEvent> preamble, InFlightRound round);

  SessionStore& store_;
  std::shared_ptr<AgentTransport> transport_;
  EngineOptions options_;
};

}  // namespace mdtroom
