#include "mdtroom/session_state.hpp"

#include <algorithm>

#include <nlohmann/json.hpp>

#include "mdtroom/error.hpp"

namespace mdtroom {

std::string_view to_string(ConflictStatus status) noexcept {
  return status == ConflictStatus::Active ? "Active" : "Resolved";
}

std::string_view to_string(LifecycleKind kind) noexcept {
  switch (kind) {
    case LifecycleKind::Opened: return "Opened";
    case LifecycleKind::AgentJoined: return "AgentJoined";
    case LifecycleKind::StanceChanged: return "StanceChanged";
    case LifecycleKind::ReEvalRequested: return "ReEvalRequested";
    case LifecycleKind::Resolved: return "Resolved";
  }
  return "Opened";
}

namespace {

LifecycleKind parse_lifecycle_kind(const std::string& text) {
  for (auto kind : {LifecycleKind::Opened, LifecycleKind::AgentJoined, LifecycleKind::StanceChanged,
                    LifecycleKind::ReEvalRequested, LifecycleKind::Resolved}) {
    if (to_string(kind) == text) return kind;
  }
  throw Error(ErrorCode::IllegalEvent, "unknown lifecycle kind " + text);
}

std::string_view to_string(ChangeKind kind) {
  switch (kind) {
    case ChangeKind::Opened: return "Opened";
    case ChangeKind::Updated: return "Updated";
    case ChangeKind::Resolved: return "Resolved";
  }
  return "Opened";
}

}  // namespace

int Conflict::opened_round() const { return lifecycle.empty() ? 0 : lifecycle.front().round_index; }

std::optional<int> Conflict::resolved_round() const {
  if (status != ConflictStatus::Resolved || lifecycle.empty()) return std::nullopt;
  return lifecycle.back().round_index;
}

int ConflictDelta::count(ChangeKind kind) const {
  return static_cast<int>(std::count_if(changes.begin(), changes.end(),
                                        [&](const ConflictChange& c) { return c.kind == kind; }));
}

void apply_conflict_change(std::vector<Conflict>& conflicts, const ConflictChange& change) {
  if (change.kind == ChangeKind::Opened) {
    if (!change.opened) throw Error(ErrorCode::IllegalEvent, "ConflictOpened without a conflict body");
    const Conflict& c = *change.opened;
    if (c.conflict_id != change.conflict_id) throw Error(ErrorCode::IllegalEvent, "conflict id mismatch");
    if (std::any_of(conflicts.begin(), conflicts.end(),
                    [&](const Conflict& x) { return x.conflict_id == c.conflict_id; })) {
      throw Error(ErrorCode::IllegalEvent, "conflict " + c.conflict_id + " already exists");
    }
    if (c.hypothesis_pair.first == c.hypothesis_pair.second || c.contested_item_ids.empty() ||
        c.lifecycle.empty() || c.lifecycle.front().kind != LifecycleKind::Opened ||
        c.status != ConflictStatus::Active) {
      throw Error(ErrorCode::IllegalEvent, "malformed opened conflict " + c.conflict_id);
    }
    conflicts.push_back(c);
    return;
  }
  auto it = std::find_if(conflicts.begin(), conflicts.end(),
                         [&](const Conflict& x) { return x.conflict_id == change.conflict_id; });
  if (it == conflicts.end()) throw Error(ErrorCode::IllegalEvent, "unknown conflict " + change.conflict_id);
  if (it->status == ConflictStatus::Resolved) {
    throw Error(ErrorCode::IllegalEvent, "conflict " + change.conflict_id + " is already resolved");
  }
  for (const auto& ev : change.lifecycle) {
    if (!it->lifecycle.empty() && ev.round_index < it->lifecycle.back().round_index) {
      throw Error(ErrorCode::IllegalEvent, "lifecycle rounds must be non-decreasing");
    }
    it->lifecycle.push_back(ev);
  }
  it->involved_agents.insert(change.added_agents.begin(), change.added_agents.end());
  it->contested_item_ids.insert(change.added_items.begin(), change.added_items.end());
  if (change.kind == ChangeKind::Resolved) {
    if (it->lifecycle.back().kind != LifecycleKind::Resolved) {
      throw Error(ErrorCode::IllegalEvent, "resolution must end with a Resolved lifecycle entry");
    }
    it->status = ConflictStatus::Resolved;
  }
}

const AgentProfile* SessionState::find_agent(std::string_view agent_id) const {
  auto it = std::find_if(agents.begin(), agents.end(), [&](const AgentProfile& a) { return a.agent_id == agent_id; });
  return it == agents.end() ? nullptr : &*it;
}

bool SessionState::is_muted(std::string_view agent_id) const {
  return status.muted_agents.count(std::string(agent_id)) > 0;
}

const Conflict* SessionState::find_conflict(std::string_view conflict_id) const {
  auto it = std::find_if(conflicts.begin(), conflicts.end(),
                         [&](const Conflict& c) { return c.conflict_id == conflict_id; });
  return it == conflicts.end() ? nullptr : &*it;
}

const Opinion* SessionState::latest_opinion(std::string_view agent_id) const {
  for (auto r = rounds.rbegin(); r != rounds.rend(); ++r) {
    if (const auto* op = r->opinion_of(agent_id)) return op;
  }
  return nullptr;
}

int SessionState::initial_and_debate_rounds() const {
  return static_cast<int>(std::count_if(rounds.begin(), rounds.end(), [](const Round& r) {
    return r.kind == RoundKind::Initial || r.kind == RoundKind::Debate;
  }));
}

std::vector<std::string> SessionState::unmuted_agents() const {
  std::vector<std::string> out;
  for (const auto& a : agents) {
    if (!is_muted(a.agent_id)) out.push_back(a.agent_id);
  }
  return out;
}

const Round& SessionState::round(int round_index) const {
  if (round_index < 0 || round_index >= static_cast<int>(rounds.size())) {
    throw Error(ErrorCode::UnknownRound, "round " + std::to_string(round_index) + " is not committed");
  }
  return rounds[static_cast<std::size_t>(round_index)];
}

// ---------------------------------------------------------------------------

void to_json(nlohmann::json& j, const LifecycleEvent& event) {
  j = {{"kind", to_string(event.kind)}, {"round_index", event.round_index}, {"detail", event.detail}};
}

void from_json(const nlohmann::json& j, LifecycleEvent& event) {
  event.kind = parse_lifecycle_kind(j.at("kind").get<std::string>());
  event.round_index = j.at("round_index").get<int>();
  event.detail = j.at("detail").get<std::string>();
}

void to_json(nlohmann::json& j, const Conflict& conflict) {
  j = {{"conflict_id", conflict.conflict_id},
       {"hypothesis_pair", {conflict.hypothesis_pair.first, conflict.hypothesis_pair.second}},
       {"involved_agents", conflict.involved_agents},
       {"contested_item_ids", conflict.contested_item_ids},
       {"status", to_string(conflict.status)},
       {"lifecycle", conflict.lifecycle},
       {"supersedes", conflict.supersedes ? nlohmann::json(*conflict.supersedes) : nlohmann::json(nullptr)}};
}

void from_json(const nlohmann::json& j, Conflict& conflict) {
  conflict.conflict_id = j.at("conflict_id").get<std::string>();
  const auto& pair = j.at("hypothesis_pair");
  conflict.hypothesis_pair = {pair.at(0).get<std::string>(), pair.at(1).get<std::string>()};
  conflict.involved_agents = j.at("involved_agents").get<IdSet>();
  conflict.contested_item_ids = j.at("contested_item_ids").get<IdSet>();
  conflict.status = j.at("status").get<std::string>() == "Resolved" ? ConflictStatus::Resolved : ConflictStatus::Active;
  conflict.lifecycle = j.at("lifecycle").get<std::vector<LifecycleEvent>>();
  conflict.supersedes.reset();
  if (!j.at("supersedes").is_null()) conflict.supersedes = j["supersedes"].get<std::string>();
}

void to_json(nlohmann::json& j, const ConflictChange& change) {
  j = {{"round_index", change.round_index}, {"conflict_id", change.conflict_id}};
  if (change.kind == ChangeKind::Opened) {
    j["conflict"] = *change.opened;
  } else {
    j["added_agents"] = change.added_agents;
    j["added_items"] = change.added_items;
    j["lifecycle"] = change.lifecycle;
  }
}

void from_json(const nlohmann::json& j, ConflictChange& change) {
  change.round_index = j.at("round_index").get<int>();
  change.conflict_id = j.at("conflict_id").get<std::string>();
  change.opened.reset();
  change.added_agents.clear();
  change.added_items.clear();
  change.lifecycle.clear();
  if (j.contains("conflict")) {
    change.kind = ChangeKind::Opened;
    change.opened = j["conflict"].get<Conflict>();
  } else {
    change.added_agents = j.at("added_agents").get<IdSet>();
    change.added_items = j.at("added_items").get<IdSet>();
    change.lifecycle = j.at("lifecycle").get<std::vector<LifecycleEvent>>();
    change.kind = (!change.lifecycle.empty() && change.lifecycle.back().kind == LifecycleKind::Resolved)
                      ? ChangeKind::Resolved
                      : ChangeKind::Updated;
  }
}

void to_json(nlohmann::json& j, const InFlightRound& round) {
  j = {{"round_index", round.round_index},
       {"kind", to_string(round.kind)},
       {"trigger", round.trigger ? nlohmann::json(*round.trigger) : nlohmann::json(nullptr)},
       {"targets", round.targets}};
}

void to_json(nlohmann::json& j, const SessionState& state) {
  nlohmann::json deltas = nlohmann::json::array();
  for (const auto& d : state.deltas) {
    nlohmann::json changes = nlohmann::json::array();
    for (const auto& c : d.changes) {
      nlohmann::json cj = c;
      cj["change"] = to_string(c.kind);
      changes.push_back(std::move(cj));
    }
    deltas.push_back({{"round_index", d.round_index}, {"changes", std::move(changes)}});
  }
  j = {{"session_id", state.session_id},
       {"seq", state.seq},
       {"case", state.case_record},
       {"agents", state.agents},
       {"config", state.config},
       {"rounds", state.rounds},
       {"hypotheses", state.hypotheses.entries()},
       {"conflicts", state.conflicts},
       {"deltas", std::move(deltas)},
       {"status", state.status},
       {"interventions", state.interventions},
       {"in_flight", state.in_flight ? nlohmann::json(*state.in_flight) : nlohmann::json(nullptr)},
       {"round_end_seq", state.round_end_seq}};
}

}  // namespace mdtroom
