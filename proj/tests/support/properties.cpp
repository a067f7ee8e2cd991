#include "properties.hpp"

#include <filesystem>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "mdtroom/analysis.hpp"
#include "mdtroom/error.hpp"
#include "mdtroom/report.hpp"
#include "oracles.hpp"

namespace mdtroom::testing {

namespace {

std::string tag(const GeneratedSession& s) { return "seed " + std::to_string(s.seed) + ": "; }

std::string describe(const OracleConflictSet& set) {
  std::string out = "{";
  for (const auto& [pair, c] : set) {
    out += " " + pair.first + "/" + pair.second + " agents=" + std::to_string(c.agents.size()) +
           " items=" + std::to_string(c.items.size());
  }
  return out + " }";
}

}  // namespace

Violations check_conflict_oracle(const GeneratedSession& s) {
  Violations out;
  std::vector<Round> rounds;
  for (const auto& snap : s.committed) rounds.push_back(snap.rounds.back());
  auto expected = active_conflicts_by_round(rounds);
  for (std::size_t r = 0; r < s.committed.size(); ++r) {
    auto got = engine_active(s.committed[r].conflicts);
    if (got != expected[r]) {
      out.push_back(tag(s) + "round " + std::to_string(r) + " engine " + describe(got) + " oracle " +
                    describe(expected[r]));
    }
  }
  return out;
}

Violations check_carry_forward(const GeneratedSession& s) {
  Violations out;
  const auto& rounds = s.committed.empty() ? std::vector<Round>{} : s.committed.back().rounds;
  for (std::size_t r = 1; r < rounds.size(); ++r) {
    const auto& round = rounds[r];
    if (round.kind != RoundKind::Revision && round.kind != RoundKind::ReEval) continue;
    const auto& before = s.committed[r - 1];
    for (const auto& agent : s.committed[r].unmuted_agents()) {
      if (round.spoke.count(agent)) continue;
      const Opinion* prior = before.latest_opinion(agent);
      const Opinion* now = round.opinion_of(agent);
      if (!prior) {
        if (now) out.push_back(tag(s) + "round " + std::to_string(r) + " invented an opinion for " + agent);
        continue;
      }
      if (!now) {
        out.push_back(tag(s) + "round " + std::to_string(r) + " dropped " + agent);
        continue;
      }
      Opinion expected = *prior;
      expected.round_index = now->round_index;
      expected.carried_forward = true;
      if (*now != expected || now->round_index != static_cast<int>(r)) {
        out.push_back(tag(s) + "round " + std::to_string(r) + " altered carried opinion of " + agent);
      }
    }
  }
  return out;
}

Violations check_flow_conservation(const GeneratedSession& s) {
  Violations out;
  if (s.committed.empty() || s.committed.back().rounds.size() < 2) return out;
  const auto& st = s.committed.back();
  auto edges = analysis::compute_hypothesis_flow(st);
  std::map<std::pair<int, std::string>, int> outgoing;
  for (const auto& e : edges) {
    if (e.weight <= 0) out.push_back(tag(s) + "non-positive edge weight");
    if (e.to.round_index != e.from.round_index + 1) out.push_back(tag(s) + "edge skips a round");
    outgoing[{e.from.round_index, e.from.hypothesis_id}] += e.weight;
  }
  for (std::size_t r = 0; r + 1 < st.rounds.size(); ++r) {
    for (const auto& [h, n] : restricted_support(st.rounds[r], st.rounds[r + 1])) {
      const int got = outgoing[{static_cast<int>(r), h}];
      if (got != n) {
        out.push_back(tag(s) + "node (" + std::to_string(r) + ", " + h + ") out " + std::to_string(got) +
                      " support " + std::to_string(n));
      }
      outgoing.erase({static_cast<int>(r), h});
    }
  }
  for (const auto& [node, w] : outgoing) {
    out.push_back(tag(s) + "edge weight from unsupported node (" + std::to_string(node.first) + ", " + node.second + ")");
  }
  return out;
}

Violations check_time_travel(const GeneratedSession& s) {
  Violations out;
  for (std::size_t b = 0; b < s.committed.size(); ++b) {
    try {
      if (fold_state(s.log, RoundBoundary{static_cast<int>(b)}) != s.committed[b]) {
        out.push_back(tag(s) + "fold at round " + std::to_string(b) + " differs from the live snapshot");
      }
    } catch (const Error& e) {
      out.push_back(tag(s) + "fold at round " + std::to_string(b) + " failed: " + e.what());
    }
  }
  return out;
}

Violations check_replay_clean(const GeneratedSession& s) {
  Violations out;
  auto report = replay_log(s.log);
  if (!report.clean() || report.trailing_commit) out.push_back(tag(s) + render_replay(report));
  return out;
}

Violations check_tamper_detected(const GeneratedSession& s, std::uint64_t seed) {
  Violations out;
  std::vector<std::size_t> analytics;
  for (std::size_t i = 0; i < s.log.events.size(); ++i) {
    if (is_analytic(s.log.events[i].kind)) analytics.push_back(i);
  }
  if (analytics.empty()) return out;
  std::mt19937_64 rng(seed);
  const auto idx = analytics[rng() % analytics.size()];
  EventLog tampered = s.log;
  auto& payload = tampered.events[idx].payload;
  switch (rng() % 3) {
    case 0: payload["round_index"] = payload["round_index"].get<int>() + 1; break;
    case 1: payload["conflict_id"] = "c" + std::to_string(900 + rng() % 99); break;
    default:
      if (payload.contains("conflict")) {
        payload["conflict"]["contested_item_ids"].push_back("i999");
      } else {
        payload["added_agents"].push_back("intruder");
      }
      break;
  }
  auto report = replay_log(tampered);
  const auto seq = tampered.events[idx].seq;
  bool hit = false;
  for (const auto& d : report.divergences) hit = hit || d.seq == seq;
  if (!hit) out.push_back(tag(s) + "mutation at seq " + std::to_string(seq) + " not reported");
  return out;
}

Violations check_conflict_invariants(const GeneratedSession& s) {
  Violations out;
  for (std::size_t r = 0; r < s.committed.size(); ++r) {
    const auto& st = s.committed[r];
    std::set<std::string> ids;
    std::set<std::pair<std::string, std::string>> active_pairs;
    for (const auto& c : st.conflicts) {
      if (!ids.insert(c.conflict_id).second) out.push_back(tag(s) + "duplicate conflict id " + c.conflict_id);
      if (!(c.hypothesis_pair.first < c.hypothesis_pair.second)) out.push_back(tag(s) + "unordered pair");
      if (c.lifecycle.empty() || c.lifecycle.front().kind != LifecycleKind::Opened) {
        out.push_back(tag(s) + c.conflict_id + " does not start with Opened");
      }
      const bool resolved_entry = !c.lifecycle.empty() && c.lifecycle.back().kind == LifecycleKind::Resolved;
      if ((c.status == ConflictStatus::Resolved) != resolved_entry) {
        out.push_back(tag(s) + c.conflict_id + " status disagrees with lifecycle");
      }
      for (std::size_t k = 1; k < c.lifecycle.size(); ++k) {
        if (c.lifecycle[k].round_index < c.lifecycle[k - 1].round_index) {
          out.push_back(tag(s) + c.conflict_id + " lifecycle out of order");
        }
      }
      if (c.status == ConflictStatus::Active && !active_pairs.insert(c.hypothesis_pair).second) {
        out.push_back(tag(s) + "two active conflicts over one pair");
      }
      if (r > 0) {
        const auto* before = s.committed[r - 1].find_conflict(c.conflict_id);
        if (before && before->status == ConflictStatus::Resolved && c.status == ConflictStatus::Active) {
          out.push_back(tag(s) + c.conflict_id + " reopened");
        }
        if (before && (!std::includes(c.involved_agents.begin(), c.involved_agents.end(),
                                      before->involved_agents.begin(), before->involved_agents.end()) ||
                       !std::includes(c.contested_item_ids.begin(), c.contested_item_ids.end(),
                                      before->contested_item_ids.begin(), before->contested_item_ids.end()))) {
          out.push_back(tag(s) + c.conflict_id + " shrank");
        }
      }
    }
  }
  return out;
}

Violations check_fault_atomicity(const GeneratedSession& s) {
  Violations out;
  if (s.atomic_faults != s.transport_faults) {
    out.push_back(tag(s) + std::to_string(s.transport_faults - s.atomic_faults) + " faults left partial events");
  }
  return out;
}

Violations check_truncation(const EventLog& log, const std::string& scratch_file, int cuts, std::uint64_t seed) {
  Violations out;
  save_session(log, scratch_file);
  std::string data;
  {
    std::ifstream in(scratch_file, std::ios::binary);
    data.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  std::mt19937_64 rng(seed);
  for (int k = 0; k < cuts; ++k) {
    const auto cut = static_cast<std::size_t>(rng() % data.size());
    {
      std::ofstream o(scratch_file, std::ios::binary | std::ios::trunc);
      o.write(data.data(), static_cast<std::streamsize>(cut));
    }
    // complete lines before the cut, header excluded
    const auto complete = static_cast<std::size_t>(std::count(data.begin(), data.begin() + static_cast<long>(cut), '\n'));
    const std::size_t expect_events = complete > 0 ? complete - 1 : 0;
    try {
      auto loaded = load_session(scratch_file, LoadMode::ValidPrefix);
      if (loaded.events.size() != expect_events ||
          !std::equal(loaded.events.begin(), loaded.events.end(), log.events.begin())) {
        out.push_back("cut at " + std::to_string(cut) + " exposed a non-prefix");
        continue;
      }
      (void)fold_state(loaded);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::CorruptFile || expect_events > 0) {
        out.push_back("cut at " + std::to_string(cut) + ": " + e.what());
      }
    }
    try {
      auto strict = load_session(scratch_file, LoadMode::Strict);
      if (cut > 0 && data[cut - 1] != '\n') out.push_back("strict load accepted a torn line");
      (void)strict;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::CorruptFile) out.push_back(std::string("strict load: ") + e.what());
    }
  }
  std::filesystem::remove(scratch_file);
  return out;
}

}  // namespace mdtroom::testing
