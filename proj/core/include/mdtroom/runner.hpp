#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mdtroom/clock.hpp"
#include "mdtroom/engine.hpp"

namespace mdtroom {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDivergence = 1;
inline constexpr int kExitInvalidSpec = 2;
inline constexpr int kExitTransport = 3;
inline constexpr int kExitInvariant = 4;

struct RunSpec {
  std::filesystem::path case_file;
  std::filesystem::path agents_file;
  std::filesystem::path fixtures_dir;
  std::optional<std::filesystem::path> directives_file;
  std::optional<std::filesystem::path> config_file;
  std::filesystem::path out_dir;
  bool parallel_queries = false;
};

struct Directive {
  enum class Kind { Intervention, ReEval, Control };
  int after_round = 0;
  Kind kind = Kind::Intervention;
  Intervention intervention;
  std::string conflict_id;
  ControlAction control;

  std::string describe() const;
};

struct DirectiveOutcome {
  Directive directive;
  bool applied = false;
  std::string detail;
};

struct RunResult {
  int exit_code = kExitOk;
  std::string message;
  std::vector<DirectiveOutcome> directives;
  std::filesystem::path log_path;
  std::filesystem::path report_path;
};

/// A case file holds either a full case record or {"case_id", "narrative"},
/// in which case the rule-based extractor structures it.
CaseRecord load_case_file(const std::filesystem::path& path);
/// A JSON array of agent profiles, or {"agents": [...]}.
std::vector<AgentProfile> load_agents_file(const std::filesystem::path& path);
DebateConfig load_config_file(const std::filesystem::path& path);
std::vector<Directive> load_directives(const std::filesystem::path& path);

/// Runs Initial and Debate rounds until convergence or budget, applying
/// directives after the rounds they name. Writes session.mdtlog and
/// report.md into out_dir. Scripted transport over fixtures_dir unless one is
/// supplied.
RunResult run_debate(const RunSpec& spec, std::shared_ptr<AgentTransport> transport = nullptr,
                     Clock clock = fixed_step_clock());

}  // namespace mdtroom
