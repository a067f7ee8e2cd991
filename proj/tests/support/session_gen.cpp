#include "session_gen.hpp"

#include <algorithm>

#include <nlohmann/json.hpp>

#include "mdtroom/chat_client.hpp"
#include "mdtroom/error.hpp"

namespace mdtroom::testing {

namespace {

std::uint64_t fnv1a(std::uint64_t h, std::string_view text) {
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string decorate(const std::string& label, std::mt19937_64& rng) {
  switch (rng() % 4) {
    case 0: return label;
    case 1: {
      std::string lower = label;
      std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
      return lower;
    }
    case 2: return "  " + label + " ";
    default: {
      std::string spaced;
      for (char c : label) spaced += c == ' ' ? std::string("   ") : std::string(1, c);
      return spaced;
    }
  }
}

template <typename T>
std::vector<T> sample(const std::vector<T>& pool, std::size_t n, std::mt19937_64& rng) {
  std::vector<T> copy = pool;
  std::shuffle(copy.begin(), copy.end(), rng);
  copy.resize(std::min(n, copy.size()));
  return copy;
}

}  // namespace

std::string RandomTransport::query(const ContextBundle& b) {
  ++queries;
  if (fail) throw TransportError("injected transport fault");
  std::uint64_t h = fnv1a(14695981039346656037ULL ^ seed_, b.agent.agent_id);
  h = fnv1a(h, std::to_string(b.round_index) + "/" + std::to_string(b.attempt));
  std::mt19937_64 rng(h);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<std::string> items;
  for (const auto& item : b.case_items) items.push_back(item.item_id);

  // Hypotheses drift: most agents keep what they said last time.
  std::string label = kHypothesisPool[rng() % 4];
  for (auto it = b.prior_opinions.rbegin(); it != b.prior_opinions.rend(); ++it) {
    if (it->agent_id == b.agent.agent_id) {
      if (unit(rng) < 0.6) label = it->hypothesis;
      break;
    }
  }

  nlohmann::json reply;
  reply["hypothesis"] = decorate(label, rng);
  reply["summary"] = "summary from " + b.agent.agent_id;
  auto evidence = nlohmann::json::array();
  const int n_evidence = static_cast<int>(rng() % 3);
  for (int k = 0; k < n_evidence; ++k) {
    evidence.push_back({{"id", "e" + std::to_string(k + 1)},
                        {"type", rng() % 2 ? "guideline" : "literature"},
                        {"citation", "Source " + std::to_string(rng() % 5)},
                        {"snippet", "snippet"},
                        {"items", sample(items, rng() % 3, rng)}});
  }
  reply["evidence"] = evidence;
  auto steps = nlohmann::json::array();
  const int n_steps = 1 + static_cast<int>(rng() % 2);
  for (int k = 0; k < n_steps; ++k) {
    nlohmann::json step = {{"text", "step"}, {"items", sample(items, 1 + rng() % 3, rng)}};
    auto ev = nlohmann::json::array();
    if (n_evidence > 0 && rng() % 2) ev.push_back("e" + std::to_string(1 + rng() % n_evidence));
    step["evidence"] = ev;
    steps.push_back(step);
  }
  reply["steps"] = steps;
  if (rng() % 5 == 0) reply["changed_opinion"] = rng() % 2 == 0;  // self-report the engine must ignore

  if (unit(rng) < invalid_rate_) {
    switch (rng() % 5) {
      case 0: return "I think it is " + label;
      case 1: reply["steps"][0]["items"].push_back("i99"); break;
      case 2: reply["hypothesis"] = "   "; break;
      case 3: reply["steps"][0]["evidence"].push_back("e42"); break;
      default: reply.erase("steps"); break;
    }
  }
  std::string text = reply.dump();
  return rng() % 4 == 0 ? "```json\n" + text + "\n```" : text;
}

GeneratedSession generate_session(std::uint64_t seed, const GeneratorLimits& limits) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto pick = [&](int lo, int hi) { return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1)); };

  GeneratedSession out;
  out.seed = seed;

  CaseRecord record;
  record.case_id = "gen-" + std::to_string(seed);
  record.narrative = "generated";
  const int n_items = pick(1, limits.max_items);
  for (int k = 0; k < n_items; ++k) {
    record = apply_item_edit(record, ItemEdit::add(static_cast<Category>(k % 6), "finding " + std::to_string(k), ""));
  }
  record.revision = 0;
  std::vector<AgentProfile> agents;
  const int n_agents = pick(2, limits.max_agents);
  for (int k = 0; k < n_agents; ++k) agents.push_back({"a" + std::to_string(k + 1), "Specialty", "", 0});

  DebateConfig config;
  config.max_debate_rounds = pick(1, 5);
  config.convergence_stops_debate = rng() % 3 != 0;
  config.max_repairs = pick(0, 2);
  const double thresholds[] = {0.6, 0.75, 1.0};
  config.consensus_threshold = thresholds[rng() % 3];
  if (rng() % 2) config.hypothesis_aliases["sarcoid"] = "sarcoidosis";

  auto transport = std::make_shared<RandomTransport>(seed, limits.invalid_rate);
  SessionStore store(fixed_step_clock());
  create_session(store, "s" + std::to_string(seed), record, agents, config);
  DebateEngine engine(store, transport);

  const int target_rounds = pick(1, limits.max_rounds);
  auto commit_happened = [&](std::size_t before) {
    if (store.state().rounds.size() > before) out.committed.push_back(store.state());
  };

  for (int step = 0; step < 40 && static_cast<int>(store.state().rounds.size()) < target_rounds; ++step) {
    const auto& st = store.state();
    const auto before_rounds = st.rounds.size();
    const auto before_seq = store.log().last_seq();
    const bool inject = unit(rng) < limits.fault_rate;
    transport->fail = inject;
    try {
      if (st.rounds.empty()) {
        engine.run_round(RoundKind::Initial);
      } else {
        switch (rng() % 6) {
          case 0:
          case 1:
            engine.run_round(RoundKind::Debate);
            break;
          case 2: {
            std::vector<std::string> ids;
            for (const auto& item : st.case_record.items) ids.push_back(item.item_id);
            auto unmuted = st.unmuted_agents();
            Intervention iv;
            for (const auto& id : sample(ids, 1 + rng() % 2, rng)) iv.selected_item_ids.insert(id);
            for (const auto& id : sample(unmuted, 1 + rng() % unmuted.size(), rng)) iv.target_agent_ids.insert(id);
            iv.instruction = "reconsider";
            engine.submit_intervention(iv);
            break;
          }
          case 3: {
            std::vector<std::string> active;
            for (const auto& c : st.conflicts) {
              if (c.status == ConflictStatus::Active) active.push_back(c.conflict_id);
            }
            engine.request_reeval(active.empty() ? std::string("c999") : active[rng() % active.size()]);
            break;
          }
          case 4: {
            const auto& agent = agents[rng() % agents.size()].agent_id;
            engine.control({st.is_muted(agent) ? ControlAction::Kind::Unmute : ControlAction::Kind::Mute, agent});
            break;
          }
          default:
            engine.control({st.status.phase == SessionPhase::Paused ? ControlAction::Kind::Resume
                                                                     : ControlAction::Kind::Pause, ""});
            break;
        }
      }
    } catch (const Error& e) {
      if (e.code() == ErrorCode::TransportDown) {
        ++out.transport_faults;
        if (store.log().last_seq() == before_seq) ++out.atomic_faults;
      } else if (e.code() == ErrorCode::IllegalEvent || e.code() == ErrorCode::Divergence) {
        throw;
      }
    }
    transport->fail = false;
    commit_happened(before_rounds);
  }
  if (rng() % 3 == 0) {
    try {
      engine.control({ControlAction::Kind::Terminate, ""});
    } catch (const Error&) {
    }
  }
  for (const auto& round : store.state().rounds) {
    for (const auto& op : round.opinions) out.invalid_outputs += op.carried_forward && round.spoke.count(op.agent_id);
  }
  out.log = store.log();
  return out;
}

}  // namespace mdtroom::testing
