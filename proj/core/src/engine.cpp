#include "mdtroom/engine.hpp"

#include <algorithm>
#include <future>

#include <nlohmann/json.hpp>

#include "mdtroom/error.hpp"

namespace mdtroom {

namespace {

std::string strip_fences(std::string_view raw) {
  auto first = raw.find('{');
  auto last = raw.rfind('}');
  if (first == std::string_view::npos || last == std::string_view::npos || last < first) return std::string(raw);
  return std::string(raw.substr(first, last - first + 1));
}

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

// Reads an optional array of strings; records a schema issue on a bad shape.
IdSet string_set(const nlohmann::json& obj, const char* key, const std::string& where,
                 std::vector<StatementIssue>& issues) {
  IdSet out;
  if (!obj.contains(key) || obj[key].is_null()) return out;
  const auto& arr = obj[key];
  if (!arr.is_array()) {
    issues.push_back({StatementError::SchemaMismatch, where + "." + key + " must be an array"});
    return out;
  }
  for (const auto& v : arr) {
    if (v.is_string()) {
      out.insert(v.get<std::string>());
    } else {
      issues.push_back({StatementError::SchemaMismatch, where + "." + key + " must hold strings"});
    }
  }
  return out;
}

std::string string_field(const nlohmann::json& obj, const char* key, bool required, const std::string& where,
                         std::vector<StatementIssue>& issues) {
  if (obj.contains(key) && obj[key].is_string()) return obj[key].get<std::string>();
  if (required || (obj.contains(key) && !obj[key].is_null())) {
    issues.push_back({StatementError::SchemaMismatch, where + key + " must be a string"});
  }
  return {};
}

}  // namespace

std::string_view to_string(StatementError code) noexcept {
  switch (code) {
    case StatementError::SchemaMismatch: return "SchemaMismatch";
    case StatementError::UnknownItemReference: return "UnknownItemReference";
    case StatementError::UnknownEvidenceReference: return "UnknownEvidenceReference";
    case StatementError::EmptyHypothesis: return "EmptyHypothesis";
  }
  return "SchemaMismatch";
}

std::string StatementIssue::render() const { return std::string(to_string(code)) + "(" + detail + ")"; }

bool ValidationFailure::has(StatementError code) const {
  return std::any_of(issues.begin(), issues.end(), [&](const StatementIssue& i) { return i.code == code; });
}

std::vector<std::string> ValidationFailure::reasons() const {
  std::vector<std::string> out;
  for (const auto& i : issues) out.push_back(i.render());
  return out;
}

StatementResult validate_statement(std::string_view raw, const SessionState& state, const std::string& agent_id,
                                   int round_index) {
  std::vector<StatementIssue> issues;
  nlohmann::json j = nlohmann::json::parse(strip_fences(raw), nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    return ValidationFailure{{{StatementError::SchemaMismatch, "reply is not a JSON object"}}};
  }

  Opinion op;
  op.agent_id = agent_id;
  op.round_index = round_index;
  op.hypothesis_label_raw = string_field(j, "hypothesis", true, "", issues);
  op.summary = string_field(j, "summary", true, "", issues);

  if (j.contains("evidence") && !j["evidence"].is_null()) {
    if (!j["evidence"].is_array()) {
      issues.push_back({StatementError::SchemaMismatch, "evidence must be an array"});
    } else {
      IdSet seen;
      for (std::size_t k = 0; k < j["evidence"].size(); ++k) {
        const auto& e = j["evidence"][k];
        const std::string where = "evidence[" + std::to_string(k) + "].";
        if (!e.is_object()) {
          issues.push_back({StatementError::SchemaMismatch, where + " must be an object"});
          continue;
        }
        EvidenceRef ref;
        ref.evidence_id = string_field(e, "id", true, where, issues);
        auto type = string_field(e, "type", true, where, issues);
        std::transform(type.begin(), type.end(), type.begin(), [](unsigned char c) { return std::tolower(c); });
        if (type == "guideline") {
          ref.source_type = EvidenceSource::Guideline;
        } else if (type == "literature") {
          ref.source_type = EvidenceSource::Literature;
        } else {
          issues.push_back({StatementError::SchemaMismatch, where + "type must be guideline or literature"});
        }
        ref.citation = string_field(e, "citation", true, where, issues);
        ref.snippet = string_field(e, "snippet", false, where, issues);
        ref.applies_to_item_ids = string_set(e, "items", where, issues);
        if (!ref.evidence_id.empty() && !seen.insert(ref.evidence_id).second) {
          issues.push_back({StatementError::SchemaMismatch, "duplicate evidence id " + ref.evidence_id});
        }
        op.evidence.push_back(std::move(ref));
      }
    }
  }

  if (!j.contains("steps") || !j["steps"].is_array()) {
    issues.push_back({StatementError::SchemaMismatch, "steps must be an array"});
  } else {
    for (std::size_t k = 0; k < j["steps"].size(); ++k) {
      const auto& s = j["steps"][k];
      const std::string where = "steps[" + std::to_string(k) + "].";
      if (!s.is_object()) {
        issues.push_back({StatementError::SchemaMismatch, where + " must be an object"});
        continue;
      }
      ReasoningStep step;
      step.text = string_field(s, "text", true, where, issues);
      step.cited_item_ids = string_set(s, "items", where, issues);
      step.cited_evidence_ids = string_set(s, "evidence", where, issues);
      op.reasoning_steps.push_back(std::move(step));
    }
  }

  for (const auto& item : op.cited_item_ids()) {
    if (!state.case_record.contains(item)) issues.push_back({StatementError::UnknownItemReference, item});
  }
  for (const auto& step : op.reasoning_steps) {
    for (const auto& ev : step.cited_evidence_ids) {
      if (!op.find_evidence(ev)) issues.push_back({StatementError::UnknownEvidenceReference, ev});
    }
  }

  std::string key;
  if (j.contains("hypothesis") && j["hypothesis"].is_string()) {
    if (trim(op.hypothesis_label_raw).empty()) {
      issues.push_back({StatementError::EmptyHypothesis, "hypothesis is blank"});
    } else {
      key = HypothesisRegistry::canonical_key(op.hypothesis_label_raw, state.config.hypothesis_aliases);
    }
  }
  if (!issues.empty()) return ValidationFailure{std::move(issues)};

  if (const auto* h = state.hypotheses.find_key(key)) op.hypothesis_id = h->hypothesis_id;
  if (const auto* prior = state.latest_opinion(agent_id)) {
    const auto* held = state.hypotheses.find_id(prior->hypothesis_id);
    if (!held || held->canonical_label != key) op.changed_from = prior->hypothesis_id;
  }
  return op;
}

// ---------------------------------------------------------------------------

void create_session(SessionStore& store, const std::string& session_id, const CaseRecord& record,
                    std::vector<AgentProfile> agents, const DebateConfig& config) {
  if (!store.log().events.empty()) throw Error(ErrorCode::WrongPhase, "store already holds a session");
  if (session_id.empty()) throw Error(ErrorCode::BadRequest, "session id is empty");
  auto report = validate_case(record);
  if (!report.ok()) {
    throw Error(ErrorCode::InvalidCase, "case fails validation: " + report.violations.front().code);
  }
  if (agents.size() < 2) throw Error(ErrorCode::TooFewAgents, "a debate needs at least two agents");
  IdSet ids;
  for (std::size_t k = 0; k < agents.size(); ++k) {
    if (agents[k].agent_id.empty()) throw Error(ErrorCode::BadRequest, "agent without an id");
    if (!ids.insert(agents[k].agent_id).second) {
      throw Error(ErrorCode::DuplicateAgent, "agent " + agents[k].agent_id + " listed twice");
    }
    agents[k].color_index = static_cast<int>(k);
  }
  config.validate();
  store.append(events::session_created(session_id, record, agents, config));
}

std::optional<ControlAction::Kind> ControlAction::parse_kind(std::string_view text) {
  for (auto k : {Kind::Pause, Kind::Resume, Kind::Terminate, Kind::Mute, Kind::Unmute}) {
    auto name = to_string(k);
    if (text.size() == name.size() &&
        std::equal(text.begin(), text.end(), name.begin(),
                   [](char a, char b) { return std::tolower(static_cast<unsigned char>(a)) == std::tolower(static_cast<unsigned char>(b)); })) {
      return k;
    }
  }
  return std::nullopt;
}

std::string_view to_string(ControlAction::Kind kind) noexcept {
  switch (kind) {
    case ControlAction::Kind::Pause: return "Pause";
    case ControlAction::Kind::Resume: return "Resume";
    case ControlAction::Kind::Terminate: return "Terminate";
    case ControlAction::Kind::Mute: return "Mute";
    case ControlAction::Kind::Unmute: return "Unmute";
  }
  return "Pause";
}

// ---------------------------------------------------------------------------

DebateEngine::DebateEngine(SessionStore& store, std::shared_ptr<AgentTransport> transport, EngineOptions options)
    : store_(store), transport_(std::move(transport)), options_(options) {}

const Round& DebateEngine::run_round(RoundKind kind) {
  const auto& st = store_.state();
  if (kind != RoundKind::Initial && kind != RoundKind::Debate) {
    throw Error(ErrorCode::BadRequest, "run_round only starts Initial or Debate rounds");
  }
  if (st.status.phase != SessionPhase::Running) {
    throw Error(ErrorCode::WrongPhase, "new rounds need phase Running, session is " +
                                           std::string(to_string(st.status.phase)));
  }
  if (kind == RoundKind::Initial && !st.rounds.empty()) throw Error(ErrorCode::WrongPhase, "initial round already ran");
  if (kind == RoundKind::Debate && st.rounds.empty()) throw Error(ErrorCode::WrongPhase, "initial round has not run");
  if (kind == RoundKind::Debate && st.initial_and_debate_rounds() >= st.config.max_debate_rounds) {
    throw Error(ErrorCode::RoundBudgetExhausted,
                "max_debate_rounds = " + std::to_string(st.config.max_debate_rounds) + " reached");
  }
  InFlightRound r;
  r.round_index = static_cast<int>(st.rounds.size());
  r.kind = kind;
  auto unmuted = st.unmuted_agents();
  r.targets = IdSet(unmuted.begin(), unmuted.end());
  return execute({}, std::move(r));
}

bool DebateEngine::can_advance() const {
  const auto& st = store_.state();
  return st.status.phase == SessionPhase::Running && !st.in_flight &&
         (st.rounds.empty() || st.initial_and_debate_rounds() < st.config.max_debate_rounds);
}

const Round& DebateEngine::advance() {
  return run_round(store_.state().rounds.empty() ? RoundKind::Initial : RoundKind::Debate);
}

const Round& DebateEngine::submit_intervention(Intervention iv) {
  const auto& st = store_.state();
  if (st.status.phase != SessionPhase::Running && st.status.phase != SessionPhase::Converged) {
    throw Error(ErrorCode::WrongPhase, "interventions need phase Running or Converged");
  }
  if (st.rounds.empty()) throw Error(ErrorCode::WrongPhase, "interventions follow the initial round");
  if (iv.target_agent_ids.empty()) throw Error(ErrorCode::EmptyTargets, "intervention names no target agents");
  if (iv.instruction.find_first_not_of(" \t\r\n") == std::string::npos) {
    throw Error(ErrorCode::EmptyInstruction, "intervention instruction is empty");
  }
  if (iv.selected_item_ids.empty()) throw Error(ErrorCode::UnknownItem, "intervention selects no items");
  for (const auto& agent : iv.target_agent_ids) {
    if (!st.find_agent(agent)) throw Error(ErrorCode::UnknownAgent, "unknown agent " + agent);
    if (st.is_muted(agent)) throw Error(ErrorCode::MutedAgent, "agent " + agent + " is muted");
  }
  if (iv.intervention_id.empty()) iv.intervention_id = "iv" + std::to_string(st.interventions.size() + 1);

  std::vector<PendingEvent> preamble;
  auto edited = st.case_record;
  for (const auto& edit : iv.case_edits) {
    if (edit.kind == EditKind::Remove) {
      for (const auto& round : st.rounds) {
        for (const auto& op : round.opinions) {
          if (op.cited_item_ids().count(edit.target_id)) {
            throw Error(ErrorCode::ItemInUse, "item " + edit.target_id + " is cited by committed opinions");
          }
        }
      }
    }
    edited = apply_item_edit(edited, edit);
    preamble.push_back(events::case_item_edited(edit, iv.intervention_id));
  }
  for (const auto& item : iv.selected_item_ids) {
    if (!edited.contains(item)) throw Error(ErrorCode::UnknownItem, "unknown item " + item);
  }
  preamble.push_back(events::intervention_submitted(iv));

  InFlightRound r;
  r.round_index = static_cast<int>(st.rounds.size());
  r.kind = RoundKind::Revision;
  r.trigger = RoundTrigger{RoundTrigger::Kind::Intervention, iv.intervention_id};
  r.targets = iv.target_agent_ids;
  return execute(std::move(preamble), std::move(r));
}

const Round& DebateEngine::request_reeval(const std::string& conflict_id) {
  const auto& st = store_.state();
  const auto* c = st.find_conflict(conflict_id);
  if (!c) throw Error(ErrorCode::UnknownConflict, "unknown conflict " + conflict_id);
  if (c->status == ConflictStatus::Resolved) {
    throw Error(ErrorCode::ConflictAlreadyResolved, "conflict " + conflict_id + " is resolved");
  }
  if (st.status.phase != SessionPhase::Running && st.status.phase != SessionPhase::Converged) {
    throw Error(ErrorCode::WrongPhase, "re-evaluation needs phase Running or Converged");
  }
  IdSet targets;
  for (const auto& agent : c->involved_agents) {
    if (!st.is_muted(agent)) targets.insert(agent);
  }
  if (targets.empty()) throw Error(ErrorCode::EmptyTargets, "every agent in conflict " + conflict_id + " is muted");

  InFlightRound r;
  r.round_index = static_cast<int>(st.rounds.size());
  r.kind = RoundKind::ReEval;
  r.trigger = RoundTrigger{RoundTrigger::Kind::Conflict, conflict_id};
  r.targets = targets;
  std::vector<PendingEvent> preamble;
  preamble.push_back(events::reeval_requested(conflict_id, targets));
  return execute(std::move(preamble), std::move(r));
}

const SessionStatus& DebateEngine::control(const ControlAction& action) {
  const auto& st = store_.state();
  const auto phase = st.status.phase;
  auto illegal = [&](const std::string& what) {
    throw Error(ErrorCode::IllegalTransition, what + " is not allowed in phase " + std::string(to_string(phase)));
  };
  if (phase == SessionPhase::Terminated) illegal(std::string(to_string(action.kind)));
  switch (action.kind) {
    case ControlAction::Kind::Pause:
      if (phase != SessionPhase::Running) illegal("Pause");
      store_.append(events::session_paused());
      break;
    case ControlAction::Kind::Resume:
      if (phase != SessionPhase::Paused) illegal("Resume");
      store_.append(events::session_resumed());
      break;
    case ControlAction::Kind::Terminate: {
      std::optional<analysis::ConsensusSummary> consensus;
      if (!st.rounds.empty()) consensus = analysis::consensus_summary(st);
      store_.append(events::session_terminated(consensus));
      break;
    }
    case ControlAction::Kind::Mute:
      if (!st.find_agent(action.agent_id)) throw Error(ErrorCode::UnknownAgent, "unknown agent " + action.agent_id);
      if (st.is_muted(action.agent_id)) illegal("muting an already muted agent");
      if (st.unmuted_agents().size() <= 1) illegal("muting the last unmuted agent");
      store_.append(events::agent_muted(action.agent_id));
      break;
    case ControlAction::Kind::Unmute:
      if (!st.find_agent(action.agent_id)) throw Error(ErrorCode::UnknownAgent, "unknown agent " + action.agent_id);
      if (!st.is_muted(action.agent_id)) illegal("unmuting an agent that is not muted");
      store_.append(events::agent_unmuted(action.agent_id));
      break;
  }
  return store_.state().status;
}

namespace {

struct AgentOutcome {
  std::vector<PendingEvent> statements;
  std::optional<Opinion> opinion;  // nullopt = abstained
};

AgentOutcome ask_agent(AgentTransport& transport, const SessionState& state, const InFlightRound& round,
                       const std::string& agent_id) {
  AgentOutcome out;
  auto bundle = build_context(state, round, agent_id);
  for (int attempt = 0; attempt <= state.config.max_repairs; ++attempt) {
    bundle.attempt = attempt;
    std::string raw;
    try {
      raw = transport.query(bundle);
    } catch (const std::exception& e) {
      throw Error(ErrorCode::TransportDown, "agent " + agent_id + ": " + e.what());
    }
    auto result = validate_statement(raw, state, agent_id, round.round_index);
    if (auto* op = std::get_if<Opinion>(&result)) {
      out.statements.push_back(events::statement_accepted(round.round_index, agent_id, attempt));
      out.opinion = std::move(*op);
      return out;
    }
    auto reasons = std::get<ValidationFailure>(result).reasons();
    out.statements.push_back(events::statement_rejected(round.round_index, agent_id, attempt, reasons));
    bundle.repair_reasons = std::move(reasons);
  }
  return out;
}

}  // namespace

const Round& DebateEngine::execute(std::vector<PendingEvent> batch, InFlightRound round) {
  batch.push_back(events::round_started(round));
  const auto scratch = store_.preview(batch);

  std::vector<std::string> targets;
  for (const auto& agent : scratch.agents) {
    if (round.targets.count(agent.agent_id)) targets.push_back(agent.agent_id);
  }
  std::vector<AgentOutcome> outcomes(targets.size());
  if (options_.parallel_queries && targets.size() > 1) {
    std::vector<std::future<AgentOutcome>> futures;
    for (const auto& agent : targets) {
      futures.push_back(std::async(std::launch::async, [&, agent] { return ask_agent(*transport_, scratch, round, agent); }));
    }
    std::exception_ptr failure;
    for (std::size_t k = 0; k < futures.size(); ++k) {
      try {
        outcomes[k] = futures[k].get();
      } catch (...) {
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);
  } else {
    for (std::size_t k = 0; k < targets.size(); ++k) outcomes[k] = ask_agent(*transport_, scratch, round, targets[k]);
  }

  Round committed;
  committed.round_index = round.round_index;
  committed.kind = round.kind;
  committed.spoke = round.targets;
  committed.trigger = round.trigger;
  auto registry = scratch.hypotheses;
  for (const auto& agent : scratch.unmuted_agents()) {
    const Opinion* prior = scratch.latest_opinion(agent);
    auto it = std::find(targets.begin(), targets.end(), agent);
    if (it != targets.end()) {
      auto& outcome = outcomes[static_cast<std::size_t>(it - targets.begin())];
      for (auto& e : outcome.statements) batch.push_back(std::move(e));
      if (outcome.opinion) {
        auto op = std::move(*outcome.opinion);
        op.hypothesis_id = registry.intern(op.hypothesis_label_raw, scratch.config.hypothesis_aliases).hypothesis_id;
        committed.opinions.push_back(std::move(op));
        continue;
      }
    }
    if (!prior) continue;
    Opinion carried = *prior;
    carried.round_index = round.round_index;
    carried.carried_forward = true;
    if (it != targets.end()) carried.invalid_output = true;
    committed.opinions.push_back(std::move(carried));
  }
  batch.push_back(events::round_committed(committed));
  for (auto& e : store_.derive_analytics(batch)) batch.push_back(std::move(e));
  store_.append_batch(std::move(batch));
  return store_.state().rounds.back();
}

}  // namespace mdtroom
