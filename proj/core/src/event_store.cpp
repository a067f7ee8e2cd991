#include "mdtroom/event_store.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>
#include <zlib.h>

#include "mdtroom/error.hpp"

namespace mdtroom {

namespace {

constexpr std::array<std::pair<EventKind, std::string_view>, 16> kEventNames{{
    {EventKind::SessionCreated, "SessionCreated"},
    {EventKind::CaseItemEdited, "CaseItemEdited"},
    {EventKind::RoundStarted, "RoundStarted"},
    {EventKind::StatementAccepted, "StatementAccepted"},
    {EventKind::StatementRejected, "StatementRejected"},
    {EventKind::RoundCommitted, "RoundCommitted"},
    {EventKind::ConflictOpened, "ConflictOpened"},
    {EventKind::ConflictUpdated, "ConflictUpdated"},
    {EventKind::ConflictResolved, "ConflictResolved"},
    {EventKind::InterventionSubmitted, "InterventionSubmitted"},
    {EventKind::ReEvalRequested, "ReEvalRequested"},
    {EventKind::AgentMuted, "AgentMuted"},
    {EventKind::AgentUnmuted, "AgentUnmuted"},
    {EventKind::SessionPaused, "SessionPaused"},
    {EventKind::SessionResumed, "SessionResumed"},
    {EventKind::SessionTerminated, "SessionTerminated"},
}};

[[noreturn]] void illegal(const std::string& message) { throw Error(ErrorCode::IllegalEvent, message); }

std::string crc_hex(std::string_view text) {
  auto crc = crc32(0L, reinterpret_cast<const Bytef*>(text.data()), static_cast<uInt>(text.size()));
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(crc));
  return buf;
}

}  // namespace

std::string_view to_string(EventKind kind) noexcept {
  for (const auto& [k, name] : kEventNames) {
    if (k == kind) return name;
  }
  return "SessionCreated";
}

std::optional<EventKind> parse_event_kind(std::string_view text) noexcept {
  for (const auto& [k, name] : kEventNames) {
    if (name == text) return k;
  }
  return std::nullopt;
}

bool is_analytic(EventKind kind) noexcept {
  return kind == EventKind::ConflictOpened || kind == EventKind::ConflictUpdated ||
         kind == EventKind::ConflictResolved;
}

nlohmann::json encode_event(const Event& event) {
  return {{"seq", event.seq},
          {"ts", event.ts},
          {"kind", to_string(event.kind)},
          {"v", event.v},
          {"payload", event.payload}};
}

Event decode_event(const nlohmann::json& j) {
  Event e;
  e.seq = j.at("seq").get<std::uint64_t>();
  e.ts = j.at("ts").get<std::int64_t>();
  auto kind = parse_event_kind(j.at("kind").get<std::string>());
  if (!kind) throw Error(ErrorCode::CorruptFile, "unknown event kind " + j.at("kind").dump());
  e.kind = *kind;
  e.v = j.at("v").get<int>();
  e.payload = j.at("payload");
  return e;
}

// ---------------------------------------------------------------------------

namespace events {

PendingEvent session_created(const std::string& session_id, const CaseRecord& record,
                             const std::vector<AgentProfile>& agents, const DebateConfig& config) {
  return {EventKind::SessionCreated,
          {{"session_id", session_id}, {"case", record}, {"agents", agents}, {"config", config}}};
}

PendingEvent case_item_edited(const ItemEdit& edit, const std::string& intervention_id) {
  return {EventKind::CaseItemEdited, {{"edit", edit}, {"intervention_id", intervention_id}}};
}

PendingEvent round_started(const InFlightRound& round) { return {EventKind::RoundStarted, round}; }

PendingEvent statement_accepted(int round_index, const std::string& agent_id, int attempt) {
  return {EventKind::StatementAccepted, {{"round_index", round_index}, {"agent_id", agent_id}, {"attempt", attempt}}};
}

PendingEvent statement_rejected(int round_index, const std::string& agent_id, int attempt,
                                const std::vector<std::string>& reasons) {
  return {EventKind::StatementRejected,
          {{"round_index", round_index}, {"agent_id", agent_id}, {"attempt", attempt}, {"reasons", reasons}}};
}

PendingEvent round_committed(const Round& round) { return {EventKind::RoundCommitted, {{"round", round}}}; }

PendingEvent intervention_submitted(const Intervention& intervention) {
  return {EventKind::InterventionSubmitted, {{"intervention", intervention}}};
}

PendingEvent reeval_requested(const std::string& conflict_id, const IdSet& targets) {
  return {EventKind::ReEvalRequested, {{"conflict_id", conflict_id}, {"target_agent_ids", targets}}};
}

PendingEvent agent_muted(const std::string& agent_id) { return {EventKind::AgentMuted, {{"agent_id", agent_id}}}; }

PendingEvent agent_unmuted(const std::string& agent_id) {
  return {EventKind::AgentUnmuted, {{"agent_id", agent_id}}};
}

PendingEvent session_paused() { return {EventKind::SessionPaused, nlohmann::json::object()}; }

PendingEvent session_resumed() { return {EventKind::SessionResumed, nlohmann::json::object()}; }

PendingEvent session_terminated(const std::optional<analysis::ConsensusSummary>& consensus) {
  return {EventKind::SessionTerminated, {{"consensus", consensus ? nlohmann::json(*consensus) : nlohmann::json(nullptr)}}};
}

std::vector<PendingEvent> conflict_analytics(const ConflictDelta& delta) {
  std::vector<PendingEvent> out;
  for (const auto& change : delta.changes) {
    EventKind kind = change.kind == ChangeKind::Opened    ? EventKind::ConflictOpened
                     : change.kind == ChangeKind::Updated ? EventKind::ConflictUpdated
                                                          : EventKind::ConflictResolved;
    out.push_back({kind, change});
  }
  return out;
}

}  // namespace events

// ---------------------------------------------------------------------------
// Fold

void Folder::diverge(std::uint64_t seq, const std::string& message) {
  if (mode_ == Mode::Strict) throw DivergenceError(seq, "seq " + std::to_string(seq) + ": " + message);
  divergences_.push_back({seq, message});
}

void Folder::flush_pending(std::uint64_t) {
  while (!pending_.empty()) {
    auto expected = std::move(pending_.front());
    pending_.pop_front();
    auto change = expected.payload.get<ConflictChange>();
    if (expected.kind == EventKind::ConflictResolved) change.kind = ChangeKind::Resolved;
    apply_conflict_change(state_.conflicts, change);
    state_.deltas.back().changes.push_back(std::move(change));
  }
}

void Folder::apply(const Event& event) {
  if (event.seq != state_.seq + 1) {
    illegal("event seq " + std::to_string(event.seq) + " does not follow " + std::to_string(state_.seq));
  }
  if (event.v != kEventSchemaVersion) illegal("unsupported event schema version " + std::to_string(event.v));
  if (state_.status.phase == SessionPhase::Terminated) illegal("session is terminated");
  if (state_.seq == 0 && event.kind != EventKind::SessionCreated) illegal("first event must be SessionCreated");

  try {
    if (is_analytic(event.kind)) {
      apply_analytic(event);
    } else {
      if (!pending_.empty()) {
        diverge(event.seq, "recorded analytics missing before " + std::string(to_string(event.kind)));
        flush_pending(event.seq);
      }
      apply_domain(event);
    }
  } catch (const nlohmann::json::exception& e) {
    illegal(std::string("malformed ") + std::string(to_string(event.kind)) + " payload: " + e.what());
  }
  state_.seq = event.seq;
}

void Folder::apply_analytic(const Event& event) {
  if (pending_.empty()) {
    diverge(event.seq, "recorded " + std::string(to_string(event.kind)) + " has no recomputed counterpart");
    return;
  }
  auto expected = std::move(pending_.front());
  pending_.pop_front();
  if (expected.kind != event.kind || expected.payload != event.payload) {
    diverge(event.seq, "recorded " + std::string(to_string(event.kind)) + " differs from recomputed " +
                           std::string(to_string(expected.kind)) + " " + expected.payload.dump());
  }
  auto change = expected.payload.get<ConflictChange>();
  if (expected.kind == EventKind::ConflictResolved) change.kind = ChangeKind::Resolved;
  apply_conflict_change(state_.conflicts, change);
  state_.deltas.back().changes.push_back(std::move(change));
  state_.round_end_seq.back() = event.seq;
}

void Folder::apply_domain(const Event& event) {
  auto& st = state_;
  const auto& p = event.payload;
  const bool idle = !st.in_flight.has_value();
  auto require_idle = [&] {
    if (!idle) illegal(std::string(to_string(event.kind)) + " while a round is in flight");
  };
  auto phase_is = [&](std::initializer_list<SessionPhase> phases) {
    return std::find(phases.begin(), phases.end(), st.status.phase) != phases.end();
  };

  switch (event.kind) {
    case EventKind::SessionCreated: {
      if (st.seq != 0) illegal("SessionCreated must be the first event");
      st.session_id = p.at("session_id").get<std::string>();
      st.case_record = p.at("case").get<CaseRecord>();
      st.agents = p.at("agents").get<std::vector<AgentProfile>>();
      st.config = p.at("config").get<DebateConfig>();
      if (!validate_case(st.case_record).ok()) illegal("session case does not validate");
      if (st.agents.size() < 2) illegal("a session needs at least two agents");
      IdSet ids;
      std::set<int> colors;
      for (const auto& a : st.agents) {
        if (!ids.insert(a.agent_id).second) illegal("duplicate agent " + a.agent_id);
        if (!colors.insert(a.color_index).second) illegal("duplicate agent color index");
      }
      st.config.validate();
      st.status.phase = SessionPhase::Running;
      break;
    }
    case EventKind::CaseItemEdited: {
      require_idle();
      auto edit = p.at("edit").get<ItemEdit>();
      if (edit.kind == EditKind::Remove) {
        for (const auto& r : st.rounds) {
          for (const auto& op : r.opinions) {
            if (op.cited_item_ids().count(edit.target_id)) {
              throw Error(ErrorCode::ItemInUse, "item " + edit.target_id + " is cited by committed opinions");
            }
          }
        }
      }
      st.case_record = apply_item_edit(st.case_record, edit);
      break;
    }
    case EventKind::InterventionSubmitted: {
      require_idle();
      if (!phase_is({SessionPhase::Running, SessionPhase::Converged})) illegal("intervention in wrong phase");
      auto iv = p.at("intervention").get<Intervention>();
      if (iv.selected_item_ids.empty() || iv.instruction.empty() || iv.target_agent_ids.empty()) {
        illegal("intervention needs items, an instruction and targets");
      }
      for (const auto& item : iv.selected_item_ids) {
        if (!st.case_record.contains(item)) illegal("intervention selects unknown item " + item);
      }
      for (const auto& agent : iv.target_agent_ids) {
        if (!st.find_agent(agent) || st.is_muted(agent)) illegal("intervention targets unavailable agent " + agent);
      }
      for (const auto& prior : st.interventions) {
        if (prior.intervention_id == iv.intervention_id) illegal("duplicate intervention id");
      }
      st.interventions.push_back(std::move(iv));
      break;
    }
    case EventKind::ReEvalRequested: {
      require_idle();
      if (!phase_is({SessionPhase::Running, SessionPhase::Converged})) illegal("re-evaluation in wrong phase");
      const auto* c = st.find_conflict(p.at("conflict_id").get<std::string>());
      if (!c || c->status != ConflictStatus::Active) illegal("re-evaluation of a conflict that is not active");
      break;
    }
    case EventKind::RoundStarted: {
      require_idle();
      InFlightRound r;
      r.round_index = p.at("round_index").get<int>();
      auto kind = parse_round_kind(p.at("kind").get<std::string>());
      if (!kind) illegal("unknown round kind");
      r.kind = *kind;
      if (!p.at("trigger").is_null()) r.trigger = p["trigger"].get<RoundTrigger>();
      r.targets = p.at("targets").get<IdSet>();
      if (r.round_index != static_cast<int>(st.rounds.size())) illegal("round indices must be contiguous");
      if (r.targets.empty()) illegal("a round needs at least one target");
      for (const auto& a : r.targets) {
        if (!st.find_agent(a) || st.is_muted(a)) illegal("round targets unavailable agent " + a);
      }
      switch (r.kind) {
        case RoundKind::Initial:
        case RoundKind::Debate: {
          if (st.status.phase != SessionPhase::Running) illegal("new rounds need phase Running");
          if ((r.kind == RoundKind::Initial) != st.rounds.empty()) illegal("Initial round must come first, once");
          if (r.kind == RoundKind::Debate && st.initial_and_debate_rounds() >= st.config.max_debate_rounds) {
            illegal("debate round budget exhausted");
          }
          auto unmuted = st.unmuted_agents();
          if (r.targets != IdSet(unmuted.begin(), unmuted.end())) illegal("open rounds query every unmuted agent");
          if (r.trigger) illegal("open rounds carry no trigger");
          break;
        }
        case RoundKind::Revision: {
          if (!phase_is({SessionPhase::Running, SessionPhase::Converged})) illegal("revision in wrong phase");
          if (!r.trigger || r.trigger->kind != RoundTrigger::Kind::Intervention) illegal("revision needs an intervention");
          auto it = std::find_if(st.interventions.begin(), st.interventions.end(),
                                 [&](const Intervention& iv) { return iv.intervention_id == r.trigger->id; });
          if (it == st.interventions.end() || it->target_agent_ids != r.targets) {
            illegal("revision targets must match the intervention");
          }
          break;
        }
        case RoundKind::ReEval: {
          if (!phase_is({SessionPhase::Running, SessionPhase::Converged})) illegal("re-evaluation in wrong phase");
          if (!r.trigger || r.trigger->kind != RoundTrigger::Kind::Conflict) illegal("re-evaluation needs a conflict");
          const auto* c = st.find_conflict(r.trigger->id);
          if (!c || c->status != ConflictStatus::Active) illegal("re-evaluation of a conflict that is not active");
          for (const auto& a : r.targets) {
            if (!c->involved_agents.count(a)) illegal("re-evaluation targets an uninvolved agent");
          }
          break;
        }
      }
      st.in_flight = std::move(r);
      break;
    }
    case EventKind::StatementAccepted:
    case EventKind::StatementRejected: {
      if (idle) illegal("statement outside a round");
      if (p.at("round_index").get<int>() != st.in_flight->round_index) illegal("statement for another round");
      if (!st.in_flight->targets.count(p.at("agent_id").get<std::string>())) illegal("statement from a non-target");
      break;
    }
    case EventKind::RoundCommitted:
      commit_round(event);
      break;
    case EventKind::AgentMuted: {
      require_idle();
      auto agent = p.at("agent_id").get<std::string>();
      if (!st.find_agent(agent) || st.is_muted(agent)) illegal("cannot mute " + agent);
      if (st.unmuted_agents().size() <= 1) illegal("cannot mute the last unmuted agent");
      st.status.muted_agents.insert(agent);
      break;
    }
    case EventKind::AgentUnmuted: {
      require_idle();
      auto agent = p.at("agent_id").get<std::string>();
      if (!st.is_muted(agent)) illegal("cannot unmute " + agent);
      st.status.muted_agents.erase(agent);
      break;
    }
    case EventKind::SessionPaused:
      require_idle();
      if (st.status.phase != SessionPhase::Running) illegal("pause needs phase Running");
      st.status.phase = SessionPhase::Paused;
      break;
    case EventKind::SessionResumed:
      require_idle();
      if (st.status.phase != SessionPhase::Paused) illegal("resume needs phase Paused");
      st.status.phase = SessionPhase::Running;
      break;
    case EventKind::SessionTerminated: {
      require_idle();
      nlohmann::json expected = nullptr;
      if (!st.rounds.empty()) expected = analysis::consensus_summary(st);
      if (p.at("consensus") != expected) {
        diverge(event.seq, "recorded consensus differs from recomputed " + expected.dump());
      }
      st.status.phase = SessionPhase::Terminated;
      break;
    }
    case EventKind::ConflictOpened:
    case EventKind::ConflictUpdated:
    case EventKind::ConflictResolved:
      break;  // routed to apply_analytic
  }
}

void Folder::commit_round(const Event& event) {
  auto& st = state_;
  if (!st.in_flight) illegal("RoundCommitted without RoundStarted");
  const auto& started = *st.in_flight;
  auto round = event.payload.at("round").get<Round>();
  if (round.round_index != started.round_index || round.kind != started.kind || round.trigger != started.trigger ||
      round.spoke != started.targets) {
    illegal("committed round does not match the started round");
  }

  auto registry = st.hypotheses;
  std::size_t last_position = 0;
  bool first = true;
  IdSet present;
  for (const auto& op : round.opinions) {
    auto agent_it = std::find_if(st.agents.begin(), st.agents.end(),
                                 [&](const AgentProfile& a) { return a.agent_id == op.agent_id; });
    if (agent_it == st.agents.end() || st.is_muted(op.agent_id)) illegal("opinion from unavailable agent " + op.agent_id);
    auto position = static_cast<std::size_t>(agent_it - st.agents.begin());
    if (!first && position <= last_position) illegal("opinions must follow agent order without repeats");
    first = false;
    last_position = position;
    present.insert(op.agent_id);
    if (op.round_index != round.round_index) illegal("opinion round index mismatch");

    const Opinion* prior = st.latest_opinion(op.agent_id);
    if (op.carried_forward) {
      if (!prior) illegal("carried-forward opinion without a prior opinion for " + op.agent_id);
      Opinion expected = *prior;
      expected.round_index = op.round_index;
      expected.carried_forward = true;
      // a queried agent whose opinion is carried abstained
      if (round.spoke.count(op.agent_id)) expected.invalid_output = true;
      if (op != expected) illegal("carried-forward opinion of " + op.agent_id + " differs from its prior opinion");
      continue;
    }
    if (!round.spoke.count(op.agent_id)) illegal("fresh opinion from an agent that was not queried");
    if (op.invalid_output) illegal("fresh opinion flagged invalid");
    const auto& h = registry.intern(op.hypothesis_label_raw, st.config.hypothesis_aliases);
    if (h.hypothesis_id != op.hypothesis_id) illegal("hypothesis id does not match canonicalization");
    for (const auto& item : op.cited_item_ids()) {
      if (!st.case_record.contains(item)) illegal("opinion cites unknown item " + item);
    }
    IdSet evidence_ids;
    for (const auto& ev : op.evidence) {
      if (!evidence_ids.insert(ev.evidence_id).second) illegal("duplicate evidence id " + ev.evidence_id);
    }
    for (const auto& step : op.reasoning_steps) {
      for (const auto& ev : step.cited_evidence_ids) {
        if (!evidence_ids.count(ev)) illegal("step cites undeclared evidence " + ev);
      }
    }
    std::optional<std::string> changed;
    if (prior && prior->hypothesis_id != op.hypothesis_id) changed = prior->hypothesis_id;
    if (op.changed_from != changed) illegal("changed_from of " + op.agent_id + " disagrees with the history");
  }
  for (const auto& agent : st.unmuted_agents()) {
    if (!present.count(agent) && st.latest_opinion(agent)) illegal("unmuted agent " + agent + " missing from round");
  }

  st.hypotheses = std::move(registry);
  st.rounds.push_back(std::move(round));
  st.round_end_seq.push_back(event.seq);
  st.in_flight.reset();

  auto convergence = analysis::check_convergence(st);
  if (st.config.convergence_stops_debate && convergence.converged && st.status.phase == SessionPhase::Running) {
    st.status.phase = SessionPhase::Converged;
  } else if (!convergence.converged && st.status.phase == SessionPhase::Converged) {
    st.status.phase = SessionPhase::Running;
  }

  auto delta = analysis::detect_conflicts(st, static_cast<int>(st.rounds.size()) - 1);
  st.deltas.push_back({delta.round_index, {}});
  for (auto& pending : events::conflict_analytics(delta)) pending_.push_back(std::move(pending));
}

// ---------------------------------------------------------------------------

SessionState fold_state(const EventLog& log, FoldTarget upto) {
  if (const auto* target = std::get_if<SeqTarget>(&upto)) {
    if (target->seq == 0 || target->seq > log.last_seq()) {
      throw Error(ErrorCode::OutOfRange, "seq " + std::to_string(target->seq) + " outside log range 1.." +
                                             std::to_string(log.last_seq()));
    }
    Folder folder;
    for (const auto& e : log.events) {
      if (e.seq > target->seq) break;
      folder.apply(e);
    }
    return folder.state();
  }
  const int round_index = std::get<RoundBoundary>(upto).round_index;
  if (round_index >= 0) {
    Folder folder;
    for (std::size_t i = 0; i < log.events.size(); ++i) {
      folder.apply(log.events[i]);
      const bool boundary_next = i + 1 == log.events.size() || !is_analytic(log.events[i + 1].kind);
      if (static_cast<int>(folder.state().rounds.size()) == round_index + 1 && boundary_next) return folder.state();
    }
  }
  throw Error(ErrorCode::OutOfRange, "round " + std::to_string(round_index) + " was never committed");
}

SessionState fold_state(const EventLog& log) {
  if (log.events.empty()) throw Error(ErrorCode::OutOfRange, "empty log");
  return fold_state(log, SeqTarget{log.last_seq()});
}

std::uint64_t round_boundary_seq(const EventLog& log, int round_index) {
  return fold_state(log, RoundBoundary{round_index}).seq;
}

// ---------------------------------------------------------------------------

SessionStore::SessionStore(Clock clock, std::shared_ptr<LogSink> sink)
    : clock_(std::move(clock)), sink_(std::move(sink)) {}

SessionStore SessionStore::from_log(EventLog log, Clock clock, std::shared_ptr<LogSink> sink) {
  SessionStore store(std::move(clock), std::move(sink));
  for (const auto& e : log.events) store.folder_.apply(e);
  store.log_ = std::move(log);
  return store;
}

std::uint64_t SessionStore::append(PendingEvent event) {
  std::vector<PendingEvent> batch;
  batch.push_back(std::move(event));
  return append_batch(std::move(batch));
}

std::uint64_t SessionStore::append_batch(std::vector<PendingEvent> batch) {
  if (batch.empty()) return log_.last_seq();
  Folder trial = folder_;
  std::vector<Event> stamped;
  stamped.reserve(batch.size());
  auto seq = log_.last_seq();
  for (auto& p : batch) {
    Event e;
    e.seq = ++seq;
    e.ts = clock_();
    e.kind = p.kind;
    e.payload = std::move(p.payload);
    trial.apply(e);
    stamped.push_back(std::move(e));
  }
  if (trial.awaiting_analytics()) illegal("batch leaves recorded analytics incomplete");
  if (log_.events.empty()) log_.session_id = trial.state().session_id;
  if (sink_) sink_->write(stamped);
  folder_ = std::move(trial);
  for (auto& e : stamped) log_.events.push_back(std::move(e));
  return log_.last_seq();
}

namespace {

Folder fold_onto(Folder trial, std::uint64_t seq, const std::vector<PendingEvent>& batch) {
  for (const auto& p : batch) {
    Event e;
    e.seq = ++seq;
    e.kind = p.kind;
    e.payload = p.payload;
    trial.apply(e);
  }
  return trial;
}

}  // namespace

SessionState SessionStore::preview(const std::vector<PendingEvent>& batch) const {
  return fold_onto(folder_, log_.last_seq(), batch).state();
}

std::vector<PendingEvent> SessionStore::derive_analytics(const std::vector<PendingEvent>& batch) const {
  auto trial = fold_onto(folder_, log_.last_seq(), batch);
  const auto& pending = trial.pending_analytics();
  return {pending.begin(), pending.end()};
}

// ---------------------------------------------------------------------------
// Persistence

std::string encode_log_line(const Event& event) {
  auto line = encode_event(event);
  line["crc"] = crc_hex(line.dump());
  return line.dump();
}

std::string encode_log_header(const std::string& session_id) {
  nlohmann::json header = {{"magic", kLogMagic}, {"v", kEventSchemaVersion}, {"session_id", session_id}};
  header["crc"] = crc_hex(header.dump());
  return header.dump();
}

FileLogSink::FileLogSink(std::filesystem::path path, std::string session_id)
    : path_(std::move(path)), session_id_(std::move(session_id)) {}

void FileLogSink::write(const std::vector<Event>& batch) {
  if (!out_.is_open()) {
    std::error_code ec;
    const bool fresh = !std::filesystem::exists(path_, ec) || std::filesystem::file_size(path_, ec) == 0;
    out_.open(path_, std::ios::binary | std::ios::app);
    if (!out_) throw Error(ErrorCode::StorageFailure, "cannot open " + path_.string());
    if (fresh) out_ << encode_log_header(session_id_) << '\n';
  }
  for (const auto& e : batch) out_ << encode_log_line(e) << '\n';
  out_.flush();
  if (!out_) throw Error(ErrorCode::StorageFailure, "write to " + path_.string() + " failed");
}

void save_session(const EventLog& log, const std::filesystem::path& path) {
  if (log.events.empty()) throw Error(ErrorCode::StorageFailure, "refusing to save an empty log");
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::StorageFailure, "cannot open " + tmp.string());
    out << encode_log_header(log.session_id) << '\n';
    for (const auto& e : log.events) out << encode_log_line(e) << '\n';
    out.flush();
    if (!out) throw Error(ErrorCode::StorageFailure, "write to " + tmp.string() + " failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::StorageFailure, "rename to " + path.string() + " failed: " + ec.message());
}

namespace {

[[noreturn]] void corrupt(const std::string& message) { throw Error(ErrorCode::CorruptFile, message); }

nlohmann::json parse_checked_line(std::string_view line, std::size_t line_no, std::vector<std::string>* notes) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception&) {
    corrupt("line " + std::to_string(line_no) + " is not valid JSON");
  }
  if (!j.is_object() || !j.contains("crc") || !j["crc"].is_string()) {
    corrupt("line " + std::to_string(line_no) + " carries no checksum");
  }
  auto crc = j["crc"].get<std::string>();
  j.erase("crc");
  if (crc_hex(j.dump()) != crc) {
    if (!notes) corrupt("checksum mismatch on line " + std::to_string(line_no));
    notes->push_back("checksum mismatch on line " + std::to_string(line_no) +
                     (j.contains("seq") ? " (seq " + j["seq"].dump() + ")" : std::string{}));
  }
  if (!j.contains("v") || !j["v"].is_number_integer()) corrupt("line " + std::to_string(line_no) + " has no version");
  if (auto v = j["v"].get<int>(); v != kEventSchemaVersion) {
    corrupt("unsupported schema version " + std::to_string(v) + " on line " + std::to_string(line_no) +
            " (this build reads version " + std::to_string(kEventSchemaVersion) + ")");
  }
  return j;
}

}  // namespace

EventLog load_session(const std::filesystem::path& path, LoadMode mode, std::vector<std::string>* notes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::StorageFailure, "cannot open " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (data.empty()) corrupt(path.string() + " is empty");
  std::vector<std::string>* audit_notes = mode == LoadMode::Audit ? notes : nullptr;

  std::vector<std::string_view> lines;
  std::string_view rest(data);
  while (!rest.empty()) {
    auto nl = rest.find('\n');
    if (nl == std::string_view::npos) {
      if (mode == LoadMode::Strict) corrupt("final line is truncated");
      if (audit_notes) audit_notes->push_back("dropped a truncated final line");
      break;
    }
    lines.push_back(rest.substr(0, nl));
    rest.remove_prefix(nl + 1);
  }
  if (lines.empty()) corrupt("header line is missing");

  auto header = parse_checked_line(lines[0], 1, audit_notes);
  if (header.value("magic", std::string{}) != kLogMagic) corrupt("bad magic; not an .mdtlog file");

  EventLog log;
  log.session_id = header.value("session_id", std::string{});
  for (std::size_t i = 1; i < lines.size(); ++i) {
    auto j = parse_checked_line(lines[i], i + 1, audit_notes);
    Event e;
    try {
      e = decode_event(j);
    } catch (const nlohmann::json::exception&) {
      corrupt("line " + std::to_string(i + 1) + " is not an event");
    }
    if (e.seq != log.last_seq() + 1) corrupt("sequence gap at line " + std::to_string(i + 1));
    log.events.push_back(std::move(e));
  }
  if (log.events.empty()) corrupt(path.string() + " holds no events");
  return log;
}

std::string log_fingerprint(const EventLog& log) {
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  for (const auto& e : log.events) {
    auto j = encode_event(e);
    j.erase("ts");
    auto text = j.dump();
    EVP_DigestUpdate(ctx, text.data(), text.size());
    EVP_DigestUpdate(ctx, "\n", 1);
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return hex.str();
}

}  // namespace mdtroom
