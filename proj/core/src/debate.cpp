#include "mdtroom/debate.hpp"

#include <algorithm>
#include <cctype>

#include <nlohmann/json.hpp>

#include "mdtroom/error.hpp"

namespace mdtroom {

void DebateConfig::validate() const {
  if (max_debate_rounds < 1) throw Error(ErrorCode::InvalidConfig, "max_debate_rounds must be positive");
  if (max_repairs < 0) throw Error(ErrorCode::InvalidConfig, "max_repairs must be non-negative");
  if (!(consensus_threshold > 0.5 && consensus_threshold <= 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "consensus_threshold must lie in (0.5, 1.0]");
  }
}

IdSet Opinion::cited_item_ids() const {
  IdSet out;
  for (const auto& step : reasoning_steps) out.insert(step.cited_item_ids.begin(), step.cited_item_ids.end());
  for (const auto& ev : evidence) out.insert(ev.applies_to_item_ids.begin(), ev.applies_to_item_ids.end());
  return out;
}

IdSet Opinion::evidence_for_item(std::string_view item_id) const {
  IdSet out;
  const std::string id(item_id);
  for (const auto& step : reasoning_steps) {
    if (step.cited_item_ids.count(id)) out.insert(step.cited_evidence_ids.begin(), step.cited_evidence_ids.end());
  }
  for (const auto& ev : evidence) {
    if (ev.applies_to_item_ids.count(id)) out.insert(ev.evidence_id);
  }
  return out;
}

const EvidenceRef* Opinion::find_evidence(std::string_view evidence_id) const {
  auto it = std::find_if(evidence.begin(), evidence.end(),
                         [&](const EvidenceRef& e) { return e.evidence_id == evidence_id; });
  return it == evidence.end() ? nullptr : &*it;
}

std::string_view to_string(RoundKind kind) noexcept {
  switch (kind) {
    case RoundKind::Initial: return "Initial";
    case RoundKind::Debate: return "Debate";
    case RoundKind::Revision: return "Revision";
    case RoundKind::ReEval: return "ReEval";
  }
  return "Initial";
}

std::optional<RoundKind> parse_round_kind(std::string_view text) noexcept {
  for (auto kind : {RoundKind::Initial, RoundKind::Debate, RoundKind::Revision, RoundKind::ReEval}) {
    if (to_string(kind) == text) return kind;
  }
  return std::nullopt;
}

const Opinion* Round::opinion_of(std::string_view agent_id) const {
  auto it = std::find_if(opinions.begin(), opinions.end(),
                         [&](const Opinion& o) { return o.agent_id == agent_id; });
  return it == opinions.end() ? nullptr : &*it;
}

std::string_view to_string(SessionPhase phase) noexcept {
  switch (phase) {
    case SessionPhase::Configuring: return "Configuring";
    case SessionPhase::Running: return "Running";
    case SessionPhase::Paused: return "Paused";
    case SessionPhase::Converged: return "Converged";
    case SessionPhase::Terminated: return "Terminated";
  }
  return "Configuring";
}

// ---------------------------------------------------------------------------

std::string HypothesisRegistry::normalize(std::string_view label) {
  std::string out;
  bool pending_space = false;
  for (char c : label) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

std::string HypothesisRegistry::canonical_key(std::string_view label,
                                              const std::map<std::string, std::string>& aliases) {
  auto key = normalize(label);
  if (key.empty()) throw Error(ErrorCode::EmptyHypothesis, "hypothesis label is empty");
  for (const auto& [from, to] : aliases) {
    if (normalize(from) == key) {
      auto target = normalize(to);
      return target.empty() ? key : target;
    }
  }
  return key;
}

const Hypothesis* HypothesisRegistry::find_key(std::string_view canonical_label) const {
  auto it = std::find_if(entries_.begin(), entries_.end(),
                         [&](const Hypothesis& h) { return h.canonical_label == canonical_label; });
  return it == entries_.end() ? nullptr : &*it;
}

const Hypothesis* HypothesisRegistry::find_id(std::string_view hypothesis_id) const {
  auto it = std::find_if(entries_.begin(), entries_.end(),
                         [&](const Hypothesis& h) { return h.hypothesis_id == hypothesis_id; });
  return it == entries_.end() ? nullptr : &*it;
}

const Hypothesis& HypothesisRegistry::intern(std::string_view raw_label,
                                             const std::map<std::string, std::string>& aliases) {
  auto key = canonical_key(raw_label, aliases);
  if (const auto* existing = find_key(key)) return *existing;
  Hypothesis h;
  h.hypothesis_id = "h" + std::to_string(entries_.size() + 1);
  h.canonical_label = key;
  // trimmed, whitespace-collapsed, but case preserved
  std::string display;
  bool pending_space = false;
  for (char c : raw_label) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !display.empty();
      continue;
    }
    if (pending_space) display.push_back(' ');
    pending_space = false;
    display.push_back(c);
  }
  h.display_label = display;
  h.color_index = static_cast<int>(entries_.size() % kHypothesisPaletteSize);
  entries_.push_back(std::move(h));
  return entries_.back();
}

std::string HypothesisRegistry::display(std::string_view hypothesis_id) const {
  if (const auto* h = find_id(hypothesis_id)) return h->display_label;
  return std::string(hypothesis_id);
}

// ---------------------------------------------------------------------------
// Wire encoding

void to_json(nlohmann::json& j, const AgentProfile& agent) {
  j = {{"agent_id", agent.agent_id},
       {"specialty", agent.specialty},
       {"role_prompt", agent.role_prompt},
       {"color_index", agent.color_index}};
}

void from_json(const nlohmann::json& j, AgentProfile& agent) {
  agent.agent_id = j.at("agent_id").get<std::string>();
  agent.specialty = j.value("specialty", std::string{});
  agent.role_prompt = j.value("role_prompt", std::string{});
  agent.color_index = j.value("color_index", 0);
}

void to_json(nlohmann::json& j, const DebateConfig& config) {
  j = {{"max_debate_rounds", config.max_debate_rounds},
       {"convergence_stops_debate", config.convergence_stops_debate},
       {"max_repairs", config.max_repairs},
       {"consensus_threshold", config.consensus_threshold},
       {"hypothesis_aliases", config.hypothesis_aliases}};
}

void from_json(const nlohmann::json& j, DebateConfig& config) {
  DebateConfig defaults;
  config.max_debate_rounds = j.value("max_debate_rounds", defaults.max_debate_rounds);
  config.convergence_stops_debate = j.value("convergence_stops_debate", defaults.convergence_stops_debate);
  config.max_repairs = j.value("max_repairs", defaults.max_repairs);
  config.consensus_threshold = j.value("consensus_threshold", defaults.consensus_threshold);
  config.hypothesis_aliases =
      j.value("hypothesis_aliases", std::map<std::string, std::string>{});
}

void to_json(nlohmann::json& j, const EvidenceRef& evidence) {
  j = {{"evidence_id", evidence.evidence_id},
       {"source_type", evidence.source_type == EvidenceSource::Guideline ? "Guideline" : "Literature"},
       {"citation", evidence.citation},
       {"snippet", evidence.snippet},
       {"applies_to_item_ids", evidence.applies_to_item_ids}};
}

void from_json(const nlohmann::json& j, EvidenceRef& evidence) {
  evidence.evidence_id = j.at("evidence_id").get<std::string>();
  evidence.source_type =
      j.at("source_type").get<std::string>() == "Literature" ? EvidenceSource::Literature : EvidenceSource::Guideline;
  evidence.citation = j.at("citation").get<std::string>();
  evidence.snippet = j.at("snippet").get<std::string>();
  evidence.applies_to_item_ids = j.at("applies_to_item_ids").get<IdSet>();
}

void to_json(nlohmann::json& j, const ReasoningStep& step) {
  j = {{"text", step.text}, {"cited_item_ids", step.cited_item_ids}, {"cited_evidence_ids", step.cited_evidence_ids}};
}

void from_json(const nlohmann::json& j, ReasoningStep& step) {
  step.text = j.at("text").get<std::string>();
  step.cited_item_ids = j.at("cited_item_ids").get<IdSet>();
  step.cited_evidence_ids = j.at("cited_evidence_ids").get<IdSet>();
}

void to_json(nlohmann::json& j, const Opinion& opinion) {
  j = {{"agent_id", opinion.agent_id},
       {"round_index", opinion.round_index},
       {"hypothesis_id", opinion.hypothesis_id},
       {"hypothesis_label_raw", opinion.hypothesis_label_raw},
       {"reasoning_steps", opinion.reasoning_steps},
       {"summary", opinion.summary},
       {"evidence", opinion.evidence},
       {"changed_from", opinion.changed_from ? nlohmann::json(*opinion.changed_from) : nlohmann::json(nullptr)},
       {"carried_forward", opinion.carried_forward},
       {"invalid_output", opinion.invalid_output}};
}

void from_json(const nlohmann::json& j, Opinion& opinion) {
  opinion.agent_id = j.at("agent_id").get<std::string>();
  opinion.round_index = j.at("round_index").get<int>();
  opinion.hypothesis_id = j.at("hypothesis_id").get<std::string>();
  opinion.hypothesis_label_raw = j.at("hypothesis_label_raw").get<std::string>();
  opinion.reasoning_steps = j.at("reasoning_steps").get<std::vector<ReasoningStep>>();
  opinion.summary = j.at("summary").get<std::string>();
  opinion.evidence = j.at("evidence").get<std::vector<EvidenceRef>>();
  opinion.changed_from.reset();
  if (!j.at("changed_from").is_null()) opinion.changed_from = j["changed_from"].get<std::string>();
  opinion.carried_forward = j.at("carried_forward").get<bool>();
  opinion.invalid_output = j.at("invalid_output").get<bool>();
}

void to_json(nlohmann::json& j, const RoundTrigger& trigger) {
  j = {{"kind", trigger.kind == RoundTrigger::Kind::Intervention ? "Intervention" : "Conflict"}, {"id", trigger.id}};
}

void from_json(const nlohmann::json& j, RoundTrigger& trigger) {
  trigger.kind = j.at("kind").get<std::string>() == "Conflict" ? RoundTrigger::Kind::Conflict
                                                                : RoundTrigger::Kind::Intervention;
  trigger.id = j.at("id").get<std::string>();
}

void to_json(nlohmann::json& j, const Round& round) {
  j = {{"round_index", round.round_index},
       {"kind", to_string(round.kind)},
       {"spoke", round.spoke},
       {"opinions", round.opinions},
       {"trigger", round.trigger ? nlohmann::json(*round.trigger) : nlohmann::json(nullptr)}};
}

void from_json(const nlohmann::json& j, Round& round) {
  round.round_index = j.at("round_index").get<int>();
  auto kind = parse_round_kind(j.at("kind").get<std::string>());
  if (!kind) throw Error(ErrorCode::IllegalEvent, "unknown round kind " + j.at("kind").dump());
  round.kind = *kind;
  round.spoke = j.at("spoke").get<IdSet>();
  round.opinions = j.at("opinions").get<std::vector<Opinion>>();
  round.trigger.reset();
  if (!j.at("trigger").is_null()) round.trigger = j["trigger"].get<RoundTrigger>();
}

void to_json(nlohmann::json& j, const Intervention& intervention) {
  j = {{"intervention_id", intervention.intervention_id},
       {"selected_item_ids", intervention.selected_item_ids},
       {"instruction", intervention.instruction},
       {"target_agent_ids", intervention.target_agent_ids},
       {"case_edits", intervention.case_edits}};
}

void from_json(const nlohmann::json& j, Intervention& intervention) {
  intervention.intervention_id = j.value("intervention_id", std::string{});
  intervention.selected_item_ids = j.at("selected_item_ids").get<IdSet>();
  intervention.instruction = j.at("instruction").get<std::string>();
  intervention.target_agent_ids = j.at("target_agent_ids").get<IdSet>();
  intervention.case_edits = j.value("case_edits", std::vector<ItemEdit>{});
}

void to_json(nlohmann::json& j, const SessionStatus& status) {
  j = {{"phase", to_string(status.phase)}, {"muted_agents", status.muted_agents}};
}

void to_json(nlohmann::json& j, const Hypothesis& hypothesis) {
  j = {{"hypothesis_id", hypothesis.hypothesis_id},
       {"canonical_label", hypothesis.canonical_label},
       {"display_label", hypothesis.display_label},
       {"color_index", hypothesis.color_index}};
}

void from_json(const nlohmann::json& j, Hypothesis& hypothesis) {
  hypothesis.hypothesis_id = j.at("hypothesis_id").get<std::string>();
  hypothesis.canonical_label = j.at("canonical_label").get<std::string>();
  hypothesis.display_label = j.at("display_label").get<std::string>();
  hypothesis.color_index = j.at("color_index").get<int>();
}

}  // namespace mdtroom
