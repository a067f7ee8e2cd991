#include <gtest/gtest.h>

#include <cstdio>
#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "mdtroom/error.hpp"
#include "mdtroom/report.hpp"
#include "mdtroom/runner.hpp"
#include "test_util.hpp"

using namespace mdtroom;
using namespace mdtroom::testing;

namespace {

const std::filesystem::path kFixtures = MDTROOM_FIXTURES_DIR;
const std::filesystem::path kGolden = MDTROOM_GOLDEN_DIR;

RunSpec spec_for(const std::string& name, const std::filesystem::path& out, bool directives = false) {
  RunSpec spec;
  spec.case_file = kFixtures / name / "case.json";
  spec.agents_file = kFixtures / name / "agents.json";
  spec.config_file = kFixtures / name / "config.json";
  spec.fixtures_dir = kFixtures / name / "replies";
  if (directives) spec.directives_file = kFixtures / name / "directives.json";
  spec.out_dir = out;
  return spec;
}

struct Cli {
  int status = -1;
  std::string output;
};

Cli cli(const std::string& args) {
  Cli out;
  std::string cmd = std::string(MDTROOM_CLI) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return out;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) out.output.append(buf, n);
  int raw = pclose(pipe);
  out.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return out;
}

std::string quote(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST(Runner, LifecycleScenario) {
  TempDir dir("lifecycle");
  auto result = run_debate(spec_for("lifecycle", dir.path(), true));
  ASSERT_EQ(result.exit_code, kExitOk) << result.message;
  ASSERT_EQ(result.directives.size(), 1u);
  EXPECT_TRUE(result.directives[0].applied);

  auto log = load_session(result.log_path);
  auto st = fold_state(log);
  ASSERT_EQ(st.rounds.size(), 4u);
  EXPECT_EQ(st.rounds[3].kind, RoundKind::Revision);
  EXPECT_EQ(st.status.phase, SessionPhase::Converged);
  ASSERT_EQ(st.conflicts.size(), 1u);
  const auto& c = st.conflicts[0];
  EXPECT_EQ(c.opened_round(), 1);
  EXPECT_EQ(c.resolved_round(), 3);
  EXPECT_TRUE(c.contested_item_ids.count("i5"));

  const auto report = read_text(result.report_path);
  EXPECT_NE(report.find("- Opened(1)"), std::string::npos);
  EXPECT_NE(report.find("- StanceChanged(3)"), std::string::npos);
  EXPECT_NE(report.find("- Resolved(3)"), std::string::npos);
  EXPECT_NE(report.find("| i5 | None | Conflict | Conflict | Resolved |"), std::string::npos);
}

TEST(Runner, DeterministicAcrossRunsAndParallelism) {
  TempDir a("det-a"), b("det-b");
  auto spec_a = spec_for("lifecycle", a.path(), true);
  auto spec_b = spec_for("lifecycle", b.path(), true);
  spec_b.parallel_queries = true;
  ASSERT_EQ(run_debate(spec_a).exit_code, kExitOk);
  ASSERT_EQ(run_debate(spec_b).exit_code, kExitOk);
  EXPECT_EQ(read_text(a.path() / "session.mdtlog"), read_text(b.path() / "session.mdtlog"));
  EXPECT_EQ(read_text(a.path() / "report.md"), read_text(b.path() / "report.md"));
}

TEST(Runner, MalformedAgentAbstains) {
  TempDir dir("malformed");
  auto result = run_debate(spec_for("malformed", dir.path()));
  ASSERT_EQ(result.exit_code, kExitOk) << result.message;
  auto st = fold_state(load_session(result.log_path));
  ASSERT_EQ(st.rounds.size(), 2u);
  const auto* op = st.rounds[1].opinion_of("neuro");
  ASSERT_NE(op, nullptr);
  EXPECT_TRUE(op->carried_forward);
  EXPECT_TRUE(op->invalid_output);
  EXPECT_EQ(op->hypothesis_label_raw, "Seizure disorder");
  int rejected = 0;
  for (const auto& e : load_session(result.log_path).events) rejected += e.kind == EventKind::StatementRejected;
  EXPECT_EQ(rejected, 3);
  EXPECT_NE(read_text(result.report_path).find("| neuro | Seizure disorder | - | i2 | - | abstained (invalid output) |"),
            std::string::npos);
}

TEST(Runner, MissingReplyIsTransportFailureWithoutPartialRound) {
  TempDir dir("missing");
  auto result = run_debate(spec_for("missing", dir.path()));
  EXPECT_EQ(result.exit_code, kExitTransport);
  auto log = load_session(result.log_path);
  auto st = fold_state(log);
  EXPECT_EQ(st.rounds.size(), 1u);
  EXPECT_FALSE(st.in_flight);
  for (const auto& e : log.events) {
    if (e.kind == EventKind::RoundStarted) EXPECT_EQ(e.payload.at("round_index"), 0);
  }
}

TEST(Runner, InvalidSpecs) {
  TempDir dir("invalid");
  auto spec = spec_for("lifecycle", dir.path());
  spec.case_file = kFixtures / "nope.json";
  EXPECT_EQ(run_debate(spec).exit_code, kExitInvalidSpec);
  spec = spec_for("lifecycle", dir.path());
  spec.fixtures_dir = kFixtures / "nope";
  EXPECT_EQ(run_debate(spec).exit_code, kExitInvalidSpec);
  write_text(dir.path() / "one.json", R"([{"agent_id": "solo", "specialty": "x"}])");
  spec = spec_for("lifecycle", dir.path() / "out");
  spec.agents_file = dir.path() / "one.json";
  EXPECT_EQ(run_debate(spec).exit_code, kExitInvalidSpec);
  EXPECT_FALSE(std::filesystem::exists(dir.path() / "out" / "session.mdtlog"));
}

TEST(Runner, DirectiveOutcomesAreReported) {
  TempDir dir("directives");
  write_text(dir.path() / "d.json", R"({"directives": [
    {"after_round": 0, "reeval": "c9"},
    {"after_round": 1, "control": {"action": "mute", "agent_id": "nobody"}},
    {"after_round": 9, "control": {"action": "pause"}}
  ]})");
  auto spec = spec_for("lifecycle", dir.path() / "out");
  spec.directives_file = dir.path() / "d.json";
  auto result = run_debate(spec);
  ASSERT_EQ(result.exit_code, kExitOk) << result.message;
  ASSERT_EQ(result.directives.size(), 3u);
  EXPECT_FALSE(result.directives[0].applied);
  EXPECT_NE(result.directives[0].detail.find("UnknownConflict"), std::string::npos);
  EXPECT_NE(result.directives[1].detail.find("UnknownAgent"), std::string::npos);
  EXPECT_EQ(result.directives[2].detail, "round never reached");
}

TEST(Runner, ReEvalOnResolvedConflictIsRejected) {
  TempDir dir("reeval");
  auto directives = nlohmann::json::parse(read_text(kFixtures / "lifecycle" / "directives.json"));
  directives.push_back({{"after_round", 3}, {"reeval", "c1"}});
  write_text(dir.path() / "d.json", directives.dump());
  auto spec = spec_for("lifecycle", dir.path() / "out");
  spec.directives_file = dir.path() / "d.json";
  auto result = run_debate(spec);
  ASSERT_EQ(result.exit_code, kExitOk) << result.message;
  ASSERT_EQ(result.directives.size(), 2u);
  EXPECT_FALSE(result.directives[1].applied);
  EXPECT_NE(result.directives[1].detail.find("ConflictAlreadyResolved"), std::string::npos);
}

TEST(Cli, LifecycleExportMatchesGolden) {
  TempDir dir("cli");
  const auto fx = kFixtures / "lifecycle";
  auto run = cli("run --case " + quote(fx / "case.json") + " --agents " + quote(fx / "agents.json") + " --config " +
                 quote(fx / "config.json") + " --directives " + quote(fx / "directives.json") + " --fixtures " +
                 quote(fx / "replies") + " --out " + quote(dir.path()));
  ASSERT_EQ(run.status, 0) << run.output;
  auto exported = cli("export --format md --log " + quote(dir.path() / "session.mdtlog"));
  ASSERT_EQ(exported.status, 0) << exported.output;
  EXPECT_EQ(exported.output, read_text(kGolden / "lifecycle_report.md"));

  auto json = cli("export --format json --log " + quote(dir.path() / "session.mdtlog"));
  ASSERT_EQ(json.status, 0);
  auto j = nlohmann::json::parse(json.output);
  EXPECT_EQ(j["conflicts"][0]["status"], "Resolved");

  EXPECT_EQ(cli("export --format pdf --log " + quote(dir.path() / "session.mdtlog")).status, 2);
}

TEST(Cli, ReplayReportsDivergences) {
  TempDir dir("replay");
  auto result = run_debate(spec_for("lifecycle", dir.path(), true));
  ASSERT_EQ(result.exit_code, kExitOk);
  auto clean = cli("replay --log " + quote(result.log_path));
  EXPECT_EQ(clean.status, 0) << clean.output;
  EXPECT_NE(clean.output.find("0 divergences"), std::string::npos);

  // rewrite a recorded analytic with a valid checksum
  auto log = load_session(result.log_path);
  for (auto& e : log.events) {
    if (e.kind == EventKind::ConflictOpened) {
      e.payload["conflict"]["involved_agents"] = {"gastro"};
      break;
    }
  }
  save_session(log, dir.path() / "tampered.mdtlog");
  auto bad = cli("replay --log " + quote(dir.path() / "tampered.mdtlog"));
  EXPECT_EQ(bad.status, 1) << bad.output;
  EXPECT_NE(bad.output.find("1 divergences"), std::string::npos);

  write_text(dir.path() / "empty.mdtlog", "");
  EXPECT_EQ(cli("replay --log " + quote(dir.path() / "empty.mdtlog")).status, 2);
}

TEST(Cli, ExtractPrintsCaseJson) {
  TempDir dir("extract");
  write_text(dir.path() / "n.json",
             R"({"case_id": "c-extract", "narrative": "62-year-old male; chronic diarrhea; CRP 48 mg/L"})");
  auto out = cli("extract --case " + quote(dir.path() / "n.json"));
  ASSERT_EQ(out.status, 0) << out.output;
  EXPECT_EQ(nlohmann::json::parse(out.output), nlohmann::json::parse(read_text(kGolden / "extract_basic.json")));
}

TEST(Report, MarkdownAndJsonExports) {
  TempDir dir("report");
  auto result = run_debate(spec_for("lifecycle", dir.path(), true));
  auto log = load_session(result.log_path);
  EXPECT_EQ(export_report(log, ExportFormat::Markdown), export_markdown(fold_state(log)));
  auto j = nlohmann::json::parse(export_report(log, ExportFormat::Json));
  EXPECT_EQ(j["rounds"].size(), 4u);
  EXPECT_EQ(parse_export_format("markdown"), ExportFormat::Markdown);
  EXPECT_THROW(parse_export_format("html"), Error);
}
