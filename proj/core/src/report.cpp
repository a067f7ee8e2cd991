#include "mdtroom/report.hpp"

#include <cstdio>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mdtroom/analysis.hpp"
#include "mdtroom/error.hpp"

namespace mdtroom {

ReplayReport replay_log(const EventLog& log) {
  ReplayReport report;
  Folder folder(Folder::Mode::Audit);
  for (const auto& e : log.events) {
    try {
      folder.apply(e);
    } catch (const Error& err) {
      report.fatal = "seq " + std::to_string(e.seq) + ": " + std::string(to_string(err.code())) + ": " + err.what();
      break;
    }
    ++report.events;
  }
  report.rounds = static_cast<int>(folder.state().rounds.size());
  report.divergences = folder.divergences();
  report.trailing_commit = !report.fatal && folder.awaiting_analytics();
  return report;
}

ReplayReport replay_file(const std::filesystem::path& path) {
  std::vector<std::string> notes;
  auto log = load_session(path, LoadMode::Audit, &notes);
  auto report = replay_log(log);
  report.integrity_notes = std::move(notes);
  return report;
}

std::string render_replay(const ReplayReport& report) {
  std::ostringstream out;
  out << "replayed " << report.events << " events, " << report.rounds << " rounds\n";
  for (const auto& note : report.integrity_notes) out << "integrity: " << note << '\n';
  for (const auto& d : report.divergences) out << "divergence at seq " << d.seq << ": " << d.message << '\n';
  if (report.fatal) out << "illegal event at " << *report.fatal << '\n';
  if (report.trailing_commit) out << "note: log ends before the last round's conflict events\n";
  out << report.divergences.size() << " divergences\n";
  return out.str();
}

ExportFormat parse_export_format(std::string_view text) {
  if (text == "md" || text == "markdown") return ExportFormat::Markdown;
  if (text == "json") return ExportFormat::Json;
  throw Error(ErrorCode::UnknownFormat, "unknown export format " + std::string(text));
}

namespace {

std::string join(const IdSet& ids, const char* sep = ", ") {
  std::string out;
  for (const auto& id : ids) {
    if (!out.empty()) out += sep;
    out += id;
  }
  return out.empty() ? "-" : out;
}

std::string cell(std::string text) {
  std::string out;
  for (char c : text) {
    if (c == '|') {
      out += "\\|";
    } else if (c == '\n') {
      out += ' ';
    } else {
      out += c;
    }
  }
  return out.empty() ? "-" : out;
}

std::string percent(double share) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.0f%%", share * 100.0);
  return buf;
}

}  // namespace

std::string export_markdown(const SessionState& st) {
  std::ostringstream out;
  auto label = [&](const std::string& h) { return st.hypotheses.display(h); };

  out << "# Session " << st.session_id << "\n\n";
  out << "Phase: " << to_string(st.status.phase) << ". Rounds: " << st.rounds.size() << ". Events: " << st.seq
      << ".\n\n";

  out << "## Case " << st.case_record.case_id << "\n\n";
  out << "| item | category | label | value |\n|---|---|---|---|\n";
  for (const auto& item : st.case_record.items) {
    out << "| " << item.item_id << " | " << to_string(item.category) << " | " << cell(item.label) << " | "
        << cell(item.value) << " |\n";
  }

  out << "\n## Agents\n\n| agent | specialty | color | muted |\n|---|---|---|---|\n";
  for (const auto& a : st.agents) {
    out << "| " << a.agent_id << " | " << cell(a.specialty) << " | " << a.color_index << " | "
        << (st.is_muted(a.agent_id) ? "yes" : "no") << " |\n";
  }

  out << "\n## Hypotheses\n\n| id | label | color |\n|---|---|---|\n";
  for (const auto& h : st.hypotheses.entries()) {
    out << "| " << h.hypothesis_id << " | " << cell(h.display_label) << " | " << h.color_index << " |\n";
  }

  out << "\n## Rounds\n";
  for (const auto& round : st.rounds) {
    auto summary = analysis::compute_round_summary(st, round.round_index);
    out << "\n### Round " << round.round_index << " (" << to_string(round.kind) << ")\n\n";
    if (round.trigger) {
      out << "Trigger: " << (round.trigger->kind == RoundTrigger::Kind::Intervention ? "intervention " : "conflict ")
          << round.trigger->id << "\n";
    }
    out << "Spoke: " << join(round.spoke) << "\n";
    out << "Support:";
    for (const auto& [h, n] : summary.support) out << ' ' << label(h) << " = " << n << ';';
    out << "\nNew conflicts: " << summary.new_conflicts << ". Resolved conflicts: " << summary.resolved_conflicts
        << ".\n\n";
    out << "| agent | hypothesis | changed from | items | evidence | status |\n|---|---|---|---|---|---|\n";
    for (const auto& op : round.opinions) {
      IdSet evidence;
      for (const auto& ev : op.evidence) evidence.insert(ev.evidence_id);
      std::string status = op.carried_forward
                               ? (round.spoke.count(op.agent_id) ? "abstained (invalid output)" : "carried forward")
                                              : "fresh";
      out << "| " << op.agent_id << " | " << cell(label(op.hypothesis_id)) << " | "
          << (op.changed_from ? cell(label(*op.changed_from)) : "-") << " | " << join(op.cited_item_ids()) << " | "
          << join(evidence) << " | " << status << " |\n";
    }
  }

  out << "\n## Opinion changes\n\n";
  if (st.rounds.size() < 2) out << "Fewer than two rounds.\n";
  for (std::size_t r = 1; r < st.rounds.size(); ++r) {
    auto summary = analysis::compute_round_summary(st, static_cast<int>(r));
    out << "- Round " << r - 1 << " -> " << r << ":";
    if (summary.opinion_changes.empty()) out << " none";
    for (std::size_t k = 0; k < summary.opinion_changes.size(); ++k) {
      const auto& c = summary.opinion_changes[k];
      out << (k ? ";" : "") << ' ' << c.agent_id << ' ' << label(c.from_hypothesis) << " -> " << label(c.to_hypothesis);
    }
    out << '\n';
  }

  out << "\n## Conflicts\n";
  if (st.conflicts.empty()) out << "\nNone.\n";
  for (const auto& c : st.conflicts) {
    out << "\n### " << c.conflict_id << ": " << label(c.hypothesis_pair.first) << " vs "
        << label(c.hypothesis_pair.second) << " (" << to_string(c.status) << ")\n\n";
    out << "Agents: " << join(c.involved_agents) << ". Contested items: " << join(c.contested_item_ids) << ".";
    if (c.supersedes) out << " Supersedes " << *c.supersedes << ".";
    out << "\n\n";
    for (const auto& ev : c.lifecycle) {
      out << "- " << to_string(ev.kind) << '(' << ev.round_index << "): " << ev.detail << '\n';
    }
  }

  out << "\n## Item flags\n\n| item |";
  for (const auto& round : st.rounds) out << " r" << round.round_index << " |";
  out << "\n|---|";
  for (std::size_t r = 0; r < st.rounds.size(); ++r) out << "---|";
  out << '\n';
  for (const auto& item : st.case_record.items) {
    out << "| " << item.item_id << " |";
    for (const auto& round : st.rounds) {
      out << ' ' << to_string(analysis::item_badge_state(st, item.item_id, round.round_index).flag) << " |";
    }
    out << '\n';
  }

  out << "\n## Hypothesis flow\n\n";
  if (st.rounds.size() < 2) {
    out << "Fewer than two rounds.\n";
  } else {
    out << "| from | to | agents |\n|---|---|---|\n";
    for (const auto& e : analysis::compute_hypothesis_flow(st)) {
      out << "| r" << e.from.round_index << ' ' << cell(label(e.from.hypothesis_id)) << " | r" << e.to.round_index
          << ' ' << cell(label(e.to.hypothesis_id)) << " | " << e.weight << " |\n";
    }
  }

  out << "\n## Consensus\n\n";
  if (st.rounds.empty()) {
    out << "No committed rounds.\n";
  } else {
    auto consensus = analysis::consensus_summary(st);
    if (consensus.converged) {
      out << "Converged on " << label(*consensus.hypothesis_id) << " with " << percent(consensus.support_share)
          << " support as of round " << consensus.as_of_round << ". Dissenting: " << join(consensus.dissenting_agents)
          << ".\n";
    } else {
      out << "Not converged as of round " << consensus.as_of_round << "; modal share "
          << percent(consensus.support_share) << ".\n";
    }
  }
  return out.str();
}

nlohmann::json export_json(const SessionState& st) {
  nlohmann::json j;
  j["session_id"] = st.session_id;
  j["seq"] = st.seq;
  j["status"] = st.status;
  j["case"] = st.case_record;
  j["agents"] = st.agents;
  j["hypotheses"] = st.hypotheses.entries();
  j["rounds"] = st.rounds;
  auto summaries = nlohmann::json::array();
  auto flags = nlohmann::json::object();
  for (const auto& round : st.rounds) summaries.push_back(analysis::compute_round_summary(st, round.round_index));
  for (const auto& item : st.case_record.items) {
    auto row = nlohmann::json::array();
    for (const auto& round : st.rounds) {
      row.push_back(to_string(analysis::item_badge_state(st, item.item_id, round.round_index).flag));
    }
    flags[item.item_id] = std::move(row);
  }
  j["summaries"] = std::move(summaries);
  j["conflicts"] = st.conflicts;
  j["item_flags"] = std::move(flags);
  j["flow"] = st.rounds.size() < 2 ? nlohmann::json::array() : nlohmann::json(analysis::compute_hypothesis_flow(st));
  j["consensus"] = st.rounds.empty() ? nlohmann::json(nullptr) : nlohmann::json(analysis::consensus_summary(st));
  return j;
}

std::string export_report(const EventLog& log, ExportFormat format) {
  auto state = fold_state(log);
  if (format == ExportFormat::Json) return export_json(state).dump(2) + "\n";
  return export_markdown(state);
}

}  // namespace mdtroom
