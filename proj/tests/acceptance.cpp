// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
// failure. Runs the CLI for the scripted scenarios and the engine API for the
// generated-session properties.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sys/wait.h>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mdtroom/analysis.hpp"
#include "mdtroom/event_store.hpp"
#include "mdtroom/report.hpp"
#include "oracles.hpp"
#include "properties.hpp"
#include "session_gen.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace mdtroom;
using namespace mdtroom::testing;

namespace {

constexpr int kSessions = 1000;
constexpr double kOracleBudgetSeconds = 60.0;
constexpr int kTruncations = 200;

struct Args {
  std::string cli;
  fs::path fixtures;
  fs::path golden;
  fs::path work;
};

int failures = 0;

void verdict(const std::string& name, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS" : "FAIL") << "  " << name << "  (" << detail << ")" << std::endl;
  if (!ok) ++failures;
}

std::string first(const Violations& v) { return v.empty() ? "" : "; first: " + v.front(); }

struct Shell {
  int status = -1;
  std::string output;
};

Shell sh(const std::string& cmd) {
  Shell out;
  FILE* pipe = popen((cmd + " 2>&1").c_str(), "r");
  if (!pipe) return out;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) out.output.append(buf, n);
  int raw = pclose(pipe);
  out.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return out;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

Shell run_fixture(const Args& a, const std::string& name, const fs::path& out, bool directives) {
  const auto fx = a.fixtures / name;
  std::string cmd = q(a.cli) + " run --case " + q(fx / "case.json") + " --agents " + q(fx / "agents.json") +
                    " --config " + q(fx / "config.json") + " --fixtures " + q(fx / "replies") + " --out " + q(out);
  if (directives) cmd += " --directives " + q(fx / "directives.json");
  return sh(cmd);
}

// ---------------------------------------------------------------------------

void generated_properties(std::vector<GeneratedSession>& sessions) {
  const auto t0 = std::chrono::steady_clock::now();
  Violations oracle;
  std::size_t rounds_checked = 0;
  for (std::uint64_t seed = 1; seed <= kSessions; ++seed) {
    sessions.push_back(generate_session(seed * 7919));
    auto v = check_conflict_oracle(sessions.back());
    oracle.insert(oracle.end(), v.begin(), v.end());
    rounds_checked += sessions.back().committed.size();
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  char detail[256];
  std::snprintf(detail, sizeof detail, "%d sessions, %zu rounds, %zu mismatches, %.1f s of %.0f s", kSessions,
                rounds_checked, oracle.size(), secs, kOracleBudgetSeconds);
  verdict("conflict-oracle-equivalence", oracle.empty() && secs < kOracleBudgetSeconds, detail + first(oracle));

  Violations carry;
  std::size_t carried_rounds = 0;
  for (const auto& s : sessions) {
    auto v = check_carry_forward(s);
    carry.insert(carry.end(), v.begin(), v.end());
    if (!s.committed.empty()) {
      for (const auto& r : s.committed.back().rounds) {
        carried_rounds += r.kind == RoundKind::Revision || r.kind == RoundKind::ReEval;
      }
    }
  }
  verdict("carry-forward", carry.empty() && carried_rounds > 0,
          std::to_string(carried_rounds) + " Revision/ReEval rounds, " + std::to_string(carry.size()) + " violations" +
              first(carry));

  Violations flow;
  for (const auto& s : sessions) {
    auto v = check_flow_conservation(s);
    flow.insert(flow.end(), v.begin(), v.end());
  }
  verdict("flow-conservation", flow.empty(), std::to_string(flow.size()) + " violations" + first(flow));

  Violations travel;
  std::size_t boundaries = 0;
  TempDir dir("travel");
  for (std::size_t k = 0; k < sessions.size(); ++k) {
    const auto& s = sessions[k];
    auto v = check_time_travel(s);
    travel.insert(travel.end(), v.begin(), v.end());
    boundaries += s.committed.size();
    if (k % 10 == 0 && !s.log.events.empty()) {
      // the same through a save/load cycle
      auto path = dir.path() / "t.mdtlog";
      save_session(s.log, path);
      GeneratedSession reloaded = s;
      reloaded.log = load_session(path);
      auto w = check_time_travel(reloaded);
      travel.insert(travel.end(), w.begin(), w.end());
    }
  }
  verdict("time-travel-fidelity", travel.empty(),
          std::to_string(boundaries) + " round boundaries, " + std::to_string(travel.size()) + " mismatches" +
              first(travel));
}

void replay_and_tamper(const Args& a, const std::vector<GeneratedSession>& sessions, const fs::path& lifecycle_log) {
  Violations clean;
  Violations tamper;
  std::size_t tampered = 0;
  for (const auto& s : sessions) {
    auto v = check_replay_clean(s);
    clean.insert(clean.end(), v.begin(), v.end());
    for (std::uint64_t k = 0; k < 3; ++k) {
      auto w = check_tamper_detected(s, s.seed * 3 + k);
      tamper.insert(tamper.end(), w.begin(), w.end());
    }
    for (const auto& e : s.log.events) {
      if (is_analytic(e.kind)) {
        tampered += 3;
        break;
      }
    }
  }

  // and through the CLI on the scripted scenario
  auto cli_clean = sh(q(a.cli) + " replay --log " + q(lifecycle_log));
  bool cli_ok = cli_clean.status == 0 && cli_clean.output.find("0 divergences") != std::string::npos;
  int cli_mutations = 0;
  int cli_detected = 0;
  auto log = load_session(lifecycle_log);
  for (std::size_t i = 0; i < log.events.size(); ++i) {
    if (!is_analytic(log.events[i].kind)) continue;
    auto bad = log;
    bad.events[i].payload["round_index"] = bad.events[i].payload["round_index"].get<int>() + 1;
    auto path = lifecycle_log.parent_path() / "tampered.mdtlog";
    save_session(bad, path);
    auto out = sh(q(a.cli) + " replay --log " + q(path));
    ++cli_mutations;
    const auto at = "at seq " + std::to_string(bad.events[i].seq) + ":";
    if (out.status == 1 && out.output.find(at) != std::string::npos) ++cli_detected;
  }
  verdict("replay-determinism-and-tamper-detection",
          clean.empty() && tamper.empty() && cli_ok && cli_mutations > 0 && cli_detected == cli_mutations,
          std::to_string(sessions.size()) + " clean replays with " + std::to_string(clean.size()) + " divergent, " +
              std::to_string(tampered) + " mutated analytics with " + std::to_string(tamper.size()) + " missed, CLI " +
              std::to_string(cli_detected) + "/" + std::to_string(cli_mutations) + " detected" + first(clean) +
              first(tamper));
}

void crash_safety(const fs::path& lifecycle_log, const std::vector<GeneratedSession>& sessions, const fs::path& work) {
  auto log = load_session(lifecycle_log);
  auto v = check_truncation(log, (work / "crash.mdtlog").string(), kTruncations, 20240101);
  // a larger generated log as well
  const GeneratedSession* biggest = &sessions.front();
  for (const auto& s : sessions) {
    if (s.log.events.size() > biggest->log.events.size()) biggest = &s;
  }
  auto w = check_truncation(biggest->log, (work / "crash2.mdtlog").string(), kTruncations, 424242);
  v.insert(v.end(), w.begin(), w.end());
  verdict("crash-safety", v.empty(),
          std::to_string(2 * kTruncations) + " truncations over 2 logs, " + std::to_string(v.size()) +
              " exposed partial events" + first(v));
}

void lifecycle(const Args& a, const fs::path& out) {
  auto run = run_fixture(a, "lifecycle", out, true);
  if (run.status != 0) {
    verdict("lifecycle-golden", false, "run exited " + std::to_string(run.status) + ": " + run.output);
    return;
  }
  auto exported = sh(q(a.cli) + " export --format md --log " + q(out / "session.mdtlog"));
  const auto golden = read_text(a.golden / "lifecycle_report.md");
  const bool exact = exported.status == 0 && exported.output == golden;
  const auto& text = exported.output;
  const bool markers = text.find("- Opened(1)") != std::string::npos &&
                       text.find("- StanceChanged(3)") != std::string::npos &&
                       text.find("- Resolved(3)") != std::string::npos &&
                       text.find("| i5 | None | Conflict | Conflict | Resolved |") != std::string::npos;
  verdict("lifecycle-golden", exact && markers,
          std::string(exact ? "export matches golden byte for byte" : "export differs from golden") +
              (markers ? ", Opened(1) StanceChanged Resolved(3) and i5 None>Conflict>Conflict>Resolved present"
                       : ", lifecycle markers missing"));
}

void malformed(const Args& a, const fs::path& out) {
  auto run = run_fixture(a, "malformed", out, false);
  bool ok = run.status == 0;
  std::string detail = "run exit " + std::to_string(run.status);
  if (ok) {
    auto log = load_session(out / "session.mdtlog");
    auto st = fold_state(log);
    int rejected = 0;
    for (const auto& e : log.events) rejected += e.kind == EventKind::StatementRejected;
    const Opinion* op = st.rounds.size() >= 2 ? st.rounds[1].opinion_of("neuro") : nullptr;
    Opinion expected;
    if (op) {
      expected = *st.rounds[0].opinion_of("neuro");
      expected.round_index = 1;
      expected.carried_forward = true;
      expected.invalid_output = true;
    }
    ok = op && *op == expected && rejected == st.config.max_repairs + 1 && st.rounds[1].opinions.size() == 4;
    detail += ", " + std::to_string(rejected) + " rejected attempts (max_repairs " +
              std::to_string(st.config.max_repairs) + "), round 1 committed with " +
              (op ? std::string("neuro carried forward, invalid_output=") + (op->invalid_output ? "true" : "false")
                  : std::string("no neuro opinion"));
  }
  verdict("malformed-agent-handling", ok, detail);
}

void convergence() {
  struct Example {
    std::vector<std::string> hypotheses;
    double threshold;
    bool expected;
  };
  const std::vector<Example> examples{{{"h1", "h1", "h1", "h1"}, 1.0, true},
                                      {{"h1", "h1", "h1", "h2"}, 0.75, true},
                                      {{"h1", "h1", "h2", "h2"}, 0.75, false},
                                      {{"h1", "h1", "h2", "h2"}, 1.0, false}};
  int agree = 0;
  for (const auto& ex : examples) {
    Round r;
    for (std::size_t k = 0; k < ex.hypotheses.size(); ++k) {
      Opinion op;
      op.agent_id = "a" + std::to_string(k);
      op.hypothesis_id = ex.hypotheses[k];
      r.opinions.push_back(op);
    }
    auto got = analysis::evaluate_convergence(r, ex.threshold);
    const bool oracle = brute_force_modal_share(ex.hypotheses) >= ex.threshold;
    agree += got.converged == oracle && oracle == ex.expected &&
             got.support_share == brute_force_modal_share(ex.hypotheses);
  }
  verdict("convergence-threshold-examples", agree == static_cast<int>(examples.size()),
          std::to_string(agree) + "/" + std::to_string(examples.size()) + " examples match the brute-force share");
}

}  // namespace

int main(int argc, char** argv) {
  Args a;
  CLI::App app{"acceptance suite"};
  app.add_option("--cli", a.cli, "mdtroom executable")->required();
  app.add_option("--fixtures", a.fixtures, "fixture root")->required();
  app.add_option("--golden", a.golden, "golden file directory")->required();
  app.add_option("--work", a.work, "scratch directory")->required();
  CLI11_PARSE(app, argc, argv);

  fs::remove_all(a.work);
  fs::create_directories(a.work);

  try {
    std::vector<GeneratedSession> sessions;
    sessions.reserve(kSessions);
    generated_properties(sessions);
    lifecycle(a, a.work / "lifecycle");
    replay_and_tamper(a, sessions, a.work / "lifecycle" / "session.mdtlog");
    crash_safety(a.work / "lifecycle" / "session.mdtlog", sessions, a.work);
    malformed(a, a.work / "malformed");
    convergence();
  } catch (const std::exception& e) {
    std::cout << "FAIL  harness  (" << e.what() << ")" << std::endl;
    return 1;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
