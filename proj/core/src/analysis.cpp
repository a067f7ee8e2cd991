#include "mdtroom/analysis.hpp"

#include <algorithm>
#include <iterator>

#include <nlohmann/json.hpp>

#include "mdtroom/error.hpp"

namespace mdtroom::analysis {

namespace {

using HypothesisPair = std::pair<std::string, std::string>;

HypothesisPair make_pair_key(const std::string& a, const std::string& b) {
  return a < b ? HypothesisPair{a, b} : HypothesisPair{b, a};
}

IdSet set_difference(const IdSet& a, const IdSet& b) {
  IdSet out;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::inserter(out, out.end()));
  return out;
}

IdSet set_intersection(const IdSet& a, const IdSet& b) {
  IdSet out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::inserter(out, out.end()));
  return out;
}

std::string join(const IdSet& ids) {
  std::string out;
  for (const auto& id : ids) {
    if (!out.empty()) out += ", ";
    out += id;
  }
  return out;
}

void check_round(const SessionState& state, int round_index) {
  if (round_index < 0 || round_index >= static_cast<int>(state.rounds.size())) {
    throw Error(ErrorCode::UnknownRound, "round " + std::to_string(round_index) + " is not committed");
  }
}

std::vector<const AgentProfile*> agents_by_color(const SessionState& state) {
  std::vector<const AgentProfile*> out;
  for (const auto& a : state.agents) out.push_back(&a);
  std::sort(out.begin(), out.end(), [](const AgentProfile* a, const AgentProfile* b) {
    return a->color_index != b->color_index ? a->color_index < b->color_index : a->agent_id < b->agent_id;
  });
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

ConflictDelta detect_conflicts(const SessionState& state, int round_index) {
  if (round_index != static_cast<int>(state.rounds.size()) - 1 ||
      static_cast<int>(state.deltas.size()) != round_index) {
    throw Error(ErrorCode::UnknownRound, "conflict detection runs on the round being committed");
  }
  const Round& round = state.rounds.back();

  struct Hits {
    IdSet agents;
    IdSet items;
  };
  std::map<HypothesisPair, Hits> hits;
  std::vector<IdSet> cited;
  cited.reserve(round.opinions.size());
  for (const auto& op : round.opinions) cited.push_back(op.cited_item_ids());
  for (std::size_t i = 0; i < round.opinions.size(); ++i) {
    for (std::size_t j = i + 1; j < round.opinions.size(); ++j) {
      const auto& a = round.opinions[i];
      const auto& b = round.opinions[j];
      if (a.hypothesis_id == b.hypothesis_id) continue;
      auto shared = set_intersection(cited[i], cited[j]);
      if (shared.empty()) continue;
      auto& h = hits[make_pair_key(a.hypothesis_id, b.hypothesis_id)];
      h.agents.insert(a.agent_id);
      h.agents.insert(b.agent_id);
      h.items.insert(shared.begin(), shared.end());
    }
  }

  std::map<std::string, std::string> stance_detail;
  for (const auto& op : round.opinions) {
    if (!op.carried_forward && op.changed_from) {
      stance_detail[op.agent_id] = op.agent_id + ": " + state.hypotheses.display(*op.changed_from) + " -> " +
                                   state.hypotheses.display(op.hypothesis_id);
    }
  }

  ConflictDelta delta;
  delta.round_index = round_index;
  std::set<HypothesisPair> matched;

  for (const auto& c : state.conflicts) {
    if (c.status != ConflictStatus::Active) continue;
    ConflictChange change;
    change.round_index = round_index;
    change.conflict_id = c.conflict_id;
    if (round.trigger && round.trigger->kind == RoundTrigger::Kind::Conflict && round.trigger->id == c.conflict_id) {
      change.lifecycle.push_back({LifecycleKind::ReEvalRequested, round_index, "re-evaluation by " + join(round.spoke)});
    }
    IdSet pool = c.involved_agents;
    auto hit = hits.find(c.hypothesis_pair);
    if (hit != hits.end()) {
      matched.insert(c.hypothesis_pair);
      change.added_agents = set_difference(hit->second.agents, c.involved_agents);
      change.added_items = set_difference(hit->second.items, c.contested_item_ids);
      for (const auto& agent : change.added_agents) {
        change.lifecycle.push_back({LifecycleKind::AgentJoined, round_index, agent});
      }
      pool.insert(change.added_agents.begin(), change.added_agents.end());
    }
    for (const auto& agent : pool) {
      if (auto it = stance_detail.find(agent); it != stance_detail.end()) {
        change.lifecycle.push_back({LifecycleKind::StanceChanged, round_index, it->second});
      }
    }
    if (hit == hits.end()) {
      IdSet held;
      for (const auto& agent : c.involved_agents) {
        if (const auto* op = round.opinion_of(agent)) held.insert(op->hypothesis_id);
      }
      std::string detail = held.size() == 1 ? "agents agree on " + state.hypotheses.display(*held.begin())
                                            : "no shared item divides the pair";
      change.lifecycle.push_back({LifecycleKind::Resolved, round_index, detail});
      change.kind = ChangeKind::Resolved;
      delta.changes.push_back(std::move(change));
    } else if (!change.lifecycle.empty() || !change.added_items.empty()) {
      change.kind = ChangeKind::Updated;
      delta.changes.push_back(std::move(change));
    }
  }

  std::size_t next_number = state.conflicts.size() + 1;
  for (const auto& [pair, h] : hits) {
    if (matched.count(pair)) continue;
    Conflict c;
    c.conflict_id = "c" + std::to_string(next_number++);
    c.hypothesis_pair = pair;
    c.involved_agents = h.agents;
    c.contested_item_ids = h.items;
    c.status = ConflictStatus::Active;
    c.lifecycle.push_back({LifecycleKind::Opened, round_index,
                           state.hypotheses.display(pair.first) + " vs " + state.hypotheses.display(pair.second) +
                               " over " + join(h.items)});
    for (auto it = state.conflicts.rbegin(); it != state.conflicts.rend(); ++it) {
      if (it->hypothesis_pair == pair) {
        c.supersedes = it->conflict_id;
        break;
      }
    }
    ConflictChange change;
    change.kind = ChangeKind::Opened;
    change.round_index = round_index;
    change.conflict_id = c.conflict_id;
    change.opened = std::move(c);
    delta.changes.push_back(std::move(change));
  }
  return delta;
}

std::vector<Conflict> conflicts_as_of(const SessionState& state, int round_index) {
  check_round(state, round_index);
  std::vector<Conflict> out;
  const auto last = std::min<std::size_t>(static_cast<std::size_t>(round_index) + 1, state.deltas.size());
  for (std::size_t r = 0; r < last; ++r) {
    for (const auto& change : state.deltas[r].changes) apply_conflict_change(out, change);
  }
  return out;
}

// ---------------------------------------------------------------------------

ProvenanceIndex build_provenance_index(const SessionState& state, int round_index) {
  check_round(state, round_index);
  ProvenanceIndex index;
  const auto agents = agents_by_color(state);
  for (const auto& item : state.case_record.items) {
    auto& badges = index[item.item_id];
    for (const auto* agent : agents) {
      for (int r = round_index; r >= 0; --r) {
        const auto* op = state.rounds[static_cast<std::size_t>(r)].opinion_of(agent->agent_id);
        if (!op || !op->cited_item_ids().count(item.item_id)) continue;
        badges.push_back({item.item_id, agent->agent_id, op->hypothesis_id, op->round_index,
                          op->evidence_for_item(item.item_id)});
        break;
      }
    }
  }
  return index;
}

std::string_view to_string(ItemFlag flag) noexcept {
  switch (flag) {
    case ItemFlag::None: return "None";
    case ItemFlag::Conflict: return "Conflict";
    case ItemFlag::Resolved: return "Resolved";
  }
  return "None";
}

ItemBadgeState item_badge_state(const SessionState& state, const std::string& item_id, int round_index) {
  if (!state.case_record.contains(item_id)) throw Error(ErrorCode::UnknownItem, "unknown item " + item_id);
  check_round(state, round_index);
  ItemBadgeState out;
  out.badges = build_provenance_index(state, round_index)[item_id];
  bool ever = false;
  for (const auto& c : conflicts_as_of(state, round_index)) {
    if (!c.contested_item_ids.count(item_id)) continue;
    if (c.status == ConflictStatus::Active) {
      out.flag = ItemFlag::Conflict;
      return out;
    }
    ever = true;
  }
  out.flag = ever ? ItemFlag::Resolved : ItemFlag::None;
  return out;
}

RoundSummary compute_round_summary(const SessionState& state, int round_index) {
  check_round(state, round_index);
  const Round& round = state.rounds[static_cast<std::size_t>(round_index)];
  RoundSummary summary;
  summary.round_index = round_index;
  for (const auto& op : round.opinions) ++summary.support[op.hypothesis_id];
  if (static_cast<std::size_t>(round_index) < state.deltas.size()) {
    const auto& delta = state.deltas[static_cast<std::size_t>(round_index)];
    summary.new_conflicts = delta.count(ChangeKind::Opened);
    summary.resolved_conflicts = delta.count(ChangeKind::Resolved);
  }
  for (const auto& op : round.opinions) {
    if (!op.carried_forward && op.changed_from) {
      summary.opinion_changes.push_back({op.agent_id, *op.changed_from, op.hypothesis_id});
    }
  }
  std::sort(summary.opinion_changes.begin(), summary.opinion_changes.end(),
            [](const OpinionChange& a, const OpinionChange& b) { return a.agent_id < b.agent_id; });
  return summary;
}

std::vector<FlowEdge> compute_hypothesis_flow(const SessionState& state) {
  if (state.rounds.size() < 2) throw Error(ErrorCode::TooFewRounds, "flow needs at least two committed rounds");
  std::vector<FlowEdge> edges;
  for (std::size_t r = 0; r + 1 < state.rounds.size(); ++r) {
    std::map<std::pair<std::string, std::string>, int> counts;
    for (const auto& op : state.rounds[r].opinions) {
      if (const auto* next = state.rounds[r + 1].opinion_of(op.agent_id)) {
        ++counts[{op.hypothesis_id, next->hypothesis_id}];
      }
    }
    for (const auto& [key, weight] : counts) {
      edges.push_back({{static_cast<int>(r), key.first}, {static_cast<int>(r + 1), key.second}, weight});
    }
  }
  return edges;
}

EvidenceComparison compare_evidence(const SessionState& state, const std::string& conflict_id) {
  const auto* c = state.find_conflict(conflict_id);
  if (!c) throw Error(ErrorCode::UnknownConflict, "unknown conflict " + conflict_id);
  const int opened = c->opened_round();
  const int reference = c->resolved_round() ? *c->resolved_round() - 1 : static_cast<int>(state.rounds.size()) - 1;

  // each involved agent's latest opinion inside the conflict's active window
  // that still backs one side of the pair
  auto side_opinion = [&](const std::string& agent) -> const Opinion* {
    for (int r = reference; r >= opened; --r) {
      const auto* op = state.rounds[static_cast<std::size_t>(r)].opinion_of(agent);
      if (op && (op->hypothesis_id == c->hypothesis_pair.first || op->hypothesis_id == c->hypothesis_pair.second)) {
        return op;
      }
    }
    return nullptr;
  };

  EvidenceComparison out;
  out.conflict_id = conflict_id;
  for (const auto& item : c->contested_item_ids) {
    EvidenceRow row;
    row.item_id = item;
    std::set<std::string> citations_a;
    std::set<std::string> citations_b;
    for (const auto& agent : c->involved_agents) {
      const auto* op = side_opinion(agent);
      if (!op || !op->cited_item_ids().count(item)) continue;
      const bool first = op->hypothesis_id == c->hypothesis_pair.first;
      auto& side = first ? row.side_a : row.side_b;
      auto& citations = first ? citations_a : citations_b;
      auto evidence_ids = op->evidence_for_item(item);
      if (evidence_ids.empty()) {
        side.push_back({agent, op->hypothesis_id, "", "", ""});
        continue;
      }
      for (const auto& ev_id : evidence_ids) {
        const auto* ev = op->find_evidence(ev_id);
        if (!ev) continue;
        side.push_back({agent, op->hypothesis_id, ev->evidence_id, ev->citation, ev->snippet});
        citations.insert(ev->citation);
      }
    }
    row.divergence_kind = set_intersection(citations_a, citations_b).empty() ? DivergenceKind::DifferentEvidence
                                                                             : DivergenceKind::SameEvidenceDifferentReading;
    out.rows.push_back(std::move(row));
  }
  return out;
}

// ---------------------------------------------------------------------------

ConvergenceStatus evaluate_convergence(const Round& round, double threshold) {
  ConvergenceStatus status;
  status.as_of_round = round.round_index;
  status.participants = static_cast<int>(round.opinions.size());
  if (status.participants == 0) return status;
  std::map<std::string, int> counts;
  for (const auto& op : round.opinions) ++counts[op.hypothesis_id];
  for (const auto& [h, n] : counts) {
    if (n > status.modal_count) {
      status.modal_count = n;
      status.hypothesis_id = h;
    }
  }
  status.support_share = static_cast<double>(status.modal_count) / status.participants;
  // epsilon absorbs rounding in threshold * participants
  status.converged = static_cast<double>(status.modal_count) >= threshold * status.participants - 1e-9;
  if (status.converged) {
    for (const auto& op : round.opinions) {
      if (op.hypothesis_id != *status.hypothesis_id) status.dissenting_agents.insert(op.agent_id);
    }
  }
  return status;
}

ConvergenceStatus check_convergence(const SessionState& state) {
  if (state.rounds.empty()) throw Error(ErrorCode::NoRounds, "no committed rounds");
  return evaluate_convergence(state.rounds.back(), state.config.consensus_threshold);
}

ConsensusSummary consensus_summary(const SessionState& state) {
  auto status = check_convergence(state);
  ConsensusSummary out;
  out.converged = status.converged;
  if (status.converged) out.hypothesis_id = status.hypothesis_id;
  out.support_share = status.support_share;
  out.dissenting_agents = status.dissenting_agents;
  out.as_of_round = status.as_of_round;
  return out;
}

// ---------------------------------------------------------------------------

void to_json(nlohmann::json& j, const ProvenanceBadge& badge) {
  j = {{"item_id", badge.item_id},
       {"agent_id", badge.agent_id},
       {"hypothesis_id", badge.hypothesis_id},
       {"round_index", badge.round_index},
       {"evidence_ids", badge.evidence_ids}};
}

void to_json(nlohmann::json& j, const RoundSummary& summary) {
  nlohmann::json changes = nlohmann::json::array();
  for (const auto& c : summary.opinion_changes) {
    changes.push_back({{"agent_id", c.agent_id}, {"from_hypothesis", c.from_hypothesis}, {"to_hypothesis", c.to_hypothesis}});
  }
  j = {{"round_index", summary.round_index},
       {"support", summary.support},
       {"new_conflicts", summary.new_conflicts},
       {"resolved_conflicts", summary.resolved_conflicts},
       {"opinion_changes", std::move(changes)}};
}

void to_json(nlohmann::json& j, const FlowEdge& edge) {
  j = {{"from", {{"round_index", edge.from.round_index}, {"hypothesis_id", edge.from.hypothesis_id}}},
       {"to", {{"round_index", edge.to.round_index}, {"hypothesis_id", edge.to.hypothesis_id}}},
       {"weight", edge.weight}};
}

namespace {

nlohmann::json encode_uses(const std::vector<EvidenceUse>& uses) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& u : uses) {
    out.push_back({{"agent_id", u.agent_id},
                   {"hypothesis_id", u.hypothesis_id},
                   {"evidence_id", u.evidence_id},
                   {"citation", u.citation},
                   {"snippet", u.snippet}});
  }
  return out;
}

}  // namespace

void to_json(nlohmann::json& j, const EvidenceComparison& comparison) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : comparison.rows) {
    rows.push_back({{"item_id", row.item_id},
                    {"side_a", encode_uses(row.side_a)},
                    {"side_b", encode_uses(row.side_b)},
                    {"divergence_kind", row.divergence_kind == DivergenceKind::DifferentEvidence
                                            ? "DifferentEvidence"
                                            : "SameEvidenceDifferentReading"}});
  }
  j = {{"conflict_id", comparison.conflict_id}, {"rows", std::move(rows)}};
}

void to_json(nlohmann::json& j, const ConsensusSummary& summary) {
  j = {{"converged", summary.converged},
       {"hypothesis_id", summary.hypothesis_id ? nlohmann::json(*summary.hypothesis_id) : nlohmann::json(nullptr)},
       {"support_share", summary.support_share},
       {"dissenting_agents", summary.dissenting_agents},
       {"as_of_round", summary.as_of_round}};
}

void from_json(const nlohmann::json& j, ConsensusSummary& summary) {
  summary.converged = j.at("converged").get<bool>();
  summary.hypothesis_id.reset();
  if (!j.at("hypothesis_id").is_null()) summary.hypothesis_id = j["hypothesis_id"].get<std::string>();
  summary.support_share = j.at("support_share").get<double>();
  summary.dissenting_agents = j.at("dissenting_agents").get<IdSet>();
  summary.as_of_round = j.at("as_of_round").get<int>();
}

}  // namespace mdtroom::analysis
