#include "mdtroom/transport.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mdtroom/error.hpp"

namespace mdtroom {

namespace {

std::string lower(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

constexpr const char* kWireSchema = R"(Reply with one JSON object and nothing else:
{"hypothesis": "<diagnosis>",
 "steps": [{"text": "<reasoning step>", "items": ["<item id>"], "evidence": ["<evidence id>"]}],
 "summary": "<one paragraph>",
 "evidence": [{"id": "<e1>", "type": "guideline|literature", "citation": "<source>", "snippet": "<quote>", "items": ["<item id>"]}]}
Cite only item ids from the case and evidence ids you declare.)";

}  // namespace

ContextBundle build_context(const SessionState& state, const InFlightRound& round, const std::string& agent_id) {
  ContextBundle b;
  b.kind = round.kind;
  b.round_index = round.round_index;
  if (const auto* agent = state.find_agent(agent_id)) b.agent = *agent;
  b.case_items = state.case_record.items;
  if (round.kind != RoundKind::Initial) {
    for (const auto& r : state.rounds) {
      for (const auto& op : r.opinions) {
        const auto* agent = state.find_agent(op.agent_id);
        b.prior_opinions.push_back({r.round_index, op.agent_id, agent ? agent->specialty : std::string{},
                                    state.hypotheses.display(op.hypothesis_id), op.summary, op.cited_item_ids()});
      }
    }
  }
  if (round.trigger && round.trigger->kind == RoundTrigger::Kind::Intervention) {
    for (const auto& iv : state.interventions) {
      if (iv.intervention_id == round.trigger->id) {
        b.highlighted_item_ids = iv.selected_item_ids;
        b.instruction = iv.instruction;
      }
    }
  }
  if (round.trigger && round.trigger->kind == RoundTrigger::Kind::Conflict) {
    if (const auto* c = state.find_conflict(round.trigger->id)) {
      b.conflict = ConflictBrief{c->conflict_id, state.hypotheses.display(c->hypothesis_pair.first),
                                 state.hypotheses.display(c->hypothesis_pair.second), c->contested_item_ids};
    }
  }
  return b;
}

void to_json(nlohmann::json& j, const ContextBundle& b) {
  j = nlohmann::json{{"kind", to_string(b.kind)}, {"round_index", b.round_index}, {"attempt", b.attempt},
                     {"agent_id", b.agent.agent_id}, {"specialty", b.agent.specialty}};
  auto items = nlohmann::json::array();
  for (const auto& item : b.case_items) {
    items.push_back({{"id", item.item_id}, {"category", to_string(item.category)}, {"label", item.label},
                     {"value", item.value}});
  }
  j["case_items"] = std::move(items);
  if (!b.prior_opinions.empty()) {
    auto prior = nlohmann::json::array();
    for (const auto& d : b.prior_opinions) {
      prior.push_back({{"round", d.round_index}, {"agent_id", d.agent_id}, {"specialty", d.specialty},
                       {"hypothesis", d.hypothesis}, {"summary", d.summary}, {"items", d.cited_item_ids}});
    }
    j["prior_opinions"] = std::move(prior);
  }
  if (!b.instruction.empty()) {
    j["highlighted_items"] = b.highlighted_item_ids;
    j["instruction"] = b.instruction;
  }
  if (b.conflict) {
    j["conflict"] = {{"id", b.conflict->conflict_id},
                     {"hypotheses", {b.conflict->hypothesis_a, b.conflict->hypothesis_b}},
                     {"contested_items", b.conflict->contested_item_ids}};
  }
  if (!b.repair_reasons.empty()) j["previous_reply_errors"] = b.repair_reasons;
}

std::vector<ChatMessage> render_prompt(const ContextBundle& b) {
  std::ostringstream system;
  system << "You are the " << b.agent.specialty << " member of a multidisciplinary diagnostic team.\n";
  if (!b.agent.role_prompt.empty()) system << b.agent.role_prompt << '\n';
  system << kWireSchema;

  std::ostringstream user;
  switch (b.kind) {
    case RoundKind::Initial:
      user << "Review the case from your department's perspective and give your leading diagnosis.\n";
      break;
    case RoundKind::Debate:
      user << "Weigh your colleagues' opinions and restate or revise your diagnosis.\n";
      break;
    case RoundKind::Revision:
      user << "The attending clinician asks you to revisit the highlighted items: " << b.instruction << '\n';
      break;
    case RoundKind::ReEval:
      user << "Your team disagrees over the contested items. Re-evaluate your diagnosis.\n";
      break;
  }
  if (!b.repair_reasons.empty()) user << "Your previous reply was rejected; fix the listed errors.\n";
  user << nlohmann::json(b).dump(2);
  return {{"system", system.str()}, {"user", user.str()}};
}

std::string ScriptedTransport::query(const ContextBundle& b) {
  const auto dir = root_ / b.agent.agent_id;
  const auto r = std::to_string(b.round_index);
  std::vector<std::filesystem::path> candidates;
  if (b.attempt > 0) candidates.push_back(dir / (r + ".repair" + std::to_string(b.attempt) + ".json"));
  candidates.push_back(dir / (r + "." + lower(to_string(b.kind)) + ".json"));
  candidates.push_back(dir / (r + ".json"));
  for (const auto& path : candidates) {
    std::ifstream in(path, std::ios::binary);
    if (!in) continue;
    std::ostringstream text;
    text << in.rdbuf();
    return text.str();
  }
  throw TransportError("no fixture for agent " + b.agent.agent_id + " round " + r + " under " + root_.string());
}

std::string LiveTransport::query(const ContextBundle& b) { return client_->complete(render_prompt(b)); }

}  // namespace mdtroom
