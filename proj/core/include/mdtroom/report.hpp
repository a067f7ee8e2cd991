#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mdtroom/event_store.hpp"

namespace mdtroom {

struct ReplayReport {
  std::size_t events = 0;
  int rounds = 0;
  std::vector<Divergence> divergences;
  std::vector<std::string> integrity_notes;  // checksum mismatches, dropped tail
  std::optional<std::string> fatal;          // illegal event; folding stopped
  bool trailing_commit = false;              // log ends before a round's analytics

  bool clean() const noexcept { return divergences.empty() && integrity_notes.empty() && !fatal; }
};

/// Folds the log in audit mode, recomputing every recorded analytic.
ReplayReport replay_log(const EventLog& log);
/// Loads leniently first so a hand-edited line is reported, not rejected.
ReplayReport replay_file(const std::filesystem::path& path);
std::string render_replay(const ReplayReport& report);

enum class ExportFormat { Markdown, Json };

/// Throws UnknownFormat.
ExportFormat parse_export_format(std::string_view text);

std::string export_markdown(const SessionState& state);
nlohmann::json export_json(const SessionState& state);
std::string export_report(const EventLog& log, ExportFormat format);

}  // namespace mdtroom
