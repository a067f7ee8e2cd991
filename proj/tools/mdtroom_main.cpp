// mdtroom: headless runner, auditor and exporter for debate sessions.

#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mdtroom/error.hpp"
#include "mdtroom/report.hpp"
#include "mdtroom/runner.hpp"

namespace {

int cmd_run(const mdtroom::RunSpec& spec) {
  auto result = mdtroom::run_debate(spec);
  auto& stream = result.exit_code == mdtroom::kExitOk ? std::cout : std::cerr;
  stream << result.message << '\n';
  if (!result.log_path.empty()) std::cout << "log: " << result.log_path.string() << '\n';
  if (!result.report_path.empty() && std::filesystem::exists(result.report_path)) {
    std::cout << "report: " << result.report_path.string() << '\n';
  }
  return result.exit_code;
}

int cmd_replay(const std::string& log_path) {
  auto report = mdtroom::replay_file(log_path);
  std::cout << mdtroom::render_replay(report);
  return report.clean() ? mdtroom::kExitOk : mdtroom::kExitDivergence;
}

int cmd_export(const std::string& log_path, const std::string& format) {
  auto fmt = mdtroom::parse_export_format(format);
  std::cout << mdtroom::export_report(mdtroom::load_session(log_path), fmt);
  return mdtroom::kExitOk;
}

int cmd_extract(const std::string& case_path) {
  std::cout << nlohmann::json(mdtroom::load_case_file(case_path)).dump(2) << '\n';
  return mdtroom::kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-agent diagnostic debate runner"};
  app.require_subcommand(1);

  mdtroom::RunSpec spec;
  std::string case_file, agents_file, fixtures_dir, directives_file, config_file, out_dir;
  auto* run = app.add_subcommand("run", "Run a scripted debate to completion");
  run->add_option("--case", case_file, "Case file (record or narrative)")->required()->check(CLI::ExistingFile);
  run->add_option("--agents", agents_file, "Agents file")->required()->check(CLI::ExistingFile);
  run->add_option("--fixtures", fixtures_dir, "Scripted reply directory")->required();
  run->add_option("--directives", directives_file, "Directives file")->check(CLI::ExistingFile);
  run->add_option("--config", config_file, "Debate config overrides")->check(CLI::ExistingFile);
  run->add_option("--out", out_dir, "Output directory")->required();
  run->add_flag("--parallel", spec.parallel_queries, "Query agents concurrently");

  std::string log_path;
  auto* replay = app.add_subcommand("replay", "Verify a session log by refolding it");
  replay->add_option("--log", log_path, "Session .mdtlog")->required();

  std::string format = "md";
  auto* exporter = app.add_subcommand("export", "Render a session log as a report");
  exporter->add_option("--log", log_path, "Session .mdtlog")->required();
  exporter->add_option("--format", format, "md or json");

  std::string narrative_path;
  auto* extract = app.add_subcommand("extract", "Structure a case file with the rule-based extractor");
  extract->add_option("--case", narrative_path, "Case file")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : mdtroom::kExitInvalidSpec;
  }

  try {
    if (*run) {
      spec.case_file = case_file;
      spec.agents_file = agents_file;
      spec.fixtures_dir = fixtures_dir;
      if (!directives_file.empty()) spec.directives_file = directives_file;
      if (!config_file.empty()) spec.config_file = config_file;
      spec.out_dir = out_dir;
      return cmd_run(spec);
    }
    if (*replay) return cmd_replay(log_path);
    if (*exporter) return cmd_export(log_path, format);
    if (*extract) return cmd_extract(narrative_path);
  } catch (const mdtroom::Error& e) {
    std::cerr << mdtroom::to_string(e.code()) << ": " << e.what() << '\n';
    return mdtroom::kExitInvalidSpec;
  } catch (const std::exception& e) {
    std::cerr << e.what() << '\n';
    return mdtroom::kExitInvariant;
  }
  return mdtroom::kExitOk;
}
