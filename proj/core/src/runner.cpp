#include "mdtroom/runner.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mdtroom/error.hpp"
#include "mdtroom/report.hpp"

namespace mdtroom {

namespace {

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::BadRequest, "cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BadRequest, path.string() + ": " + e.what());
  }
}

template <typename Fn>
auto decode(const std::filesystem::path& path, Fn&& fn) {
  try {
    return fn(read_json(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BadRequest, path.string() + ": " + e.what());
  }
}

}  // namespace

CaseRecord load_case_file(const std::filesystem::path& path) {
  return decode(path, [](const nlohmann::json& j) {
    if (j.contains("items")) return j.get<CaseRecord>();
    return extract_case_items(j.at("narrative").get<std::string>(), RuleBasedExtractor{},
                              j.value("case_id", std::string("case")));
  });
}

std::vector<AgentProfile> load_agents_file(const std::filesystem::path& path) {
  return decode(path, [](const nlohmann::json& j) {
    return (j.is_object() ? j.at("agents") : j).get<std::vector<AgentProfile>>();
  });
}

DebateConfig load_config_file(const std::filesystem::path& path) {
  auto config = decode(path, [](const nlohmann::json& j) {
    return (j.contains("debate") ? j.at("debate") : j).get<DebateConfig>();
  });
  config.validate();
  return config;
}

std::vector<Directive> load_directives(const std::filesystem::path& path) {
  return decode(path, [&](const nlohmann::json& j) {
    std::vector<Directive> out;
    for (const auto& d : j.is_object() ? j.at("directives") : j) {
      Directive directive;
      directive.after_round = d.at("after_round").get<int>();
      if (d.contains("intervention")) {
        directive.kind = Directive::Kind::Intervention;
        directive.intervention = d["intervention"].get<Intervention>();
      } else if (d.contains("reeval")) {
        directive.kind = Directive::Kind::ReEval;
        directive.conflict_id = d["reeval"].get<std::string>();
      } else if (d.contains("control")) {
        directive.kind = Directive::Kind::Control;
        auto action = ControlAction::parse_kind(d["control"].at("action").get<std::string>());
        if (!action) throw Error(ErrorCode::BadRequest, "unknown control action " + d["control"]["action"].dump());
        directive.control.kind = *action;
        directive.control.agent_id = d["control"].value("agent_id", std::string{});
      } else {
        throw Error(ErrorCode::BadRequest, "directive needs intervention, reeval or control: " + d.dump());
      }
      out.push_back(std::move(directive));
    }
    return out;
  });
}

std::string Directive::describe() const {
  std::string out = "after round " + std::to_string(after_round) + ": ";
  switch (kind) {
    case Kind::Intervention: {
      out += "intervention to ";
      std::string targets;
      for (const auto& t : intervention.target_agent_ids) targets += (targets.empty() ? "" : ", ") + t;
      return out + targets;
    }
    case Kind::ReEval:
      return out + "re-evaluation of " + conflict_id;
    case Kind::Control:
      out += "control " + std::string(to_string(control.kind));
      return control.agent_id.empty() ? out : out + " " + control.agent_id;
  }
  return out;
}

namespace {

std::string render_run_report(const SessionState& state, const RunResult& result) {
  std::ostringstream out;
  out << export_markdown(state);
  out << "\n## Directives\n\n";
  if (result.directives.empty()) out << "None.\n";
  for (const auto& d : result.directives) {
    out << "- " << d.directive.describe() << ": " << (d.applied ? "applied" : "rejected") << "; " << d.detail << '\n';
  }
  out << "\n## Run outcome\n\nExit " << result.exit_code << ": " << result.message << "\n";
  return out.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw Error(ErrorCode::StorageFailure, "cannot write " + path.string());
}

}  // namespace

RunResult run_debate(const RunSpec& spec, std::shared_ptr<AgentTransport> transport, Clock clock) {
  RunResult result;
  CaseRecord record;
  std::vector<AgentProfile> agents;
  DebateConfig config;
  std::vector<Directive> directives;
  try {
    record = load_case_file(spec.case_file);
    agents = load_agents_file(spec.agents_file);
    if (spec.config_file) config = load_config_file(*spec.config_file);
    if (spec.directives_file) directives = load_directives(*spec.directives_file);
    if (!transport) {
      if (!std::filesystem::is_directory(spec.fixtures_dir)) {
        throw Error(ErrorCode::BadRequest, "fixtures directory " + spec.fixtures_dir.string() + " does not exist");
      }
      transport = std::make_shared<ScriptedTransport>(spec.fixtures_dir);
    }
    std::filesystem::create_directories(spec.out_dir);
  } catch (const std::exception& e) {
    result.exit_code = kExitInvalidSpec;
    result.message = e.what();
    return result;
  }

  result.log_path = spec.out_dir / "session.mdtlog";
  result.report_path = spec.out_dir / "report.md";
  std::filesystem::remove(result.log_path);
  const std::string session_id = "session-" + record.case_id;

  std::optional<SessionStore> store;
  try {
    store.emplace(std::move(clock), std::make_shared<FileLogSink>(result.log_path, session_id));
    create_session(*store, session_id, record, agents, config);
  } catch (const std::exception& e) {
    result.exit_code = kExitInvalidSpec;
    result.message = e.what();
    return result;
  }

  DebateEngine engine(*store, transport, EngineOptions{spec.parallel_queries});
  std::vector<bool> done(directives.size(), false);
  try {
    engine.run_round(RoundKind::Initial);
    for (;;) {
      const int last = static_cast<int>(engine.state().rounds.size()) - 1;
      bool applied = false;
      for (std::size_t k = 0; k < directives.size() && !applied; ++k) {
        if (done[k] || directives[k].after_round > last) continue;
        done[k] = applied = true;
        DirectiveOutcome outcome{directives[k], false, {}};
        try {
          switch (directives[k].kind) {
            case Directive::Kind::Intervention: {
              const auto& round = engine.submit_intervention(directives[k].intervention);
              outcome.detail = "round " + std::to_string(round.round_index) + " (Revision)";
              break;
            }
            case Directive::Kind::ReEval: {
              const auto& round = engine.request_reeval(directives[k].conflict_id);
              outcome.detail = "round " + std::to_string(round.round_index) + " (ReEval)";
              break;
            }
            case Directive::Kind::Control: {
              const auto& status = engine.control(directives[k].control);
              outcome.detail = "phase " + std::string(to_string(status.phase));
              break;
            }
          }
          outcome.applied = true;
        } catch (const Error& e) {
          if (e.code() == ErrorCode::TransportDown || e.code() == ErrorCode::IllegalEvent ||
              e.code() == ErrorCode::Divergence || e.code() == ErrorCode::StorageFailure) {
            throw;
          }
          outcome.detail = std::string(to_string(e.code())) + ": " + e.what();
        }
        result.directives.push_back(std::move(outcome));
      }
      if (applied) continue;
      if (!engine.can_advance()) break;
      engine.run_round(RoundKind::Debate);
    }
    for (std::size_t k = 0; k < directives.size(); ++k) {
      if (!done[k]) result.directives.push_back({directives[k], false, "round never reached"});
    }

    auto replay = replay_log(store->log());
    if (!replay.clean()) {
      result.exit_code = kExitInvariant;
      result.message = "self-replay failed:\n" + render_replay(replay);
    } else {
      const auto& st = engine.state();
      result.message = std::to_string(st.rounds.size()) + " rounds, phase " + std::string(to_string(st.status.phase));
    }
  } catch (const Error& e) {
    result.exit_code = e.code() == ErrorCode::TransportDown ? kExitTransport : kExitInvariant;
    result.message = std::string(to_string(e.code())) + ": " + e.what();
  } catch (const std::exception& e) {
    result.exit_code = kExitInvariant;
    result.message = e.what();
  }

  try {
    write_text(result.report_path, render_run_report(engine.state(), result));
  } catch (const std::exception& e) {
    if (result.exit_code == kExitOk) result.exit_code = kExitInvariant;
    result.message += std::string("; report: ") + e.what();
  }
  return result;
}

}  // namespace mdtroom
