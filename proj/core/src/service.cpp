#include "mdtroom/service.hpp"

#include <atomic>
#include <condition_variable>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <random>
#include <regex>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "mdtroom/analysis.hpp"
#include "mdtroom/error.hpp"

namespace mdtroom {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

void ServiceConfig::validate() const {
  if (port < 0 || port > 65535) throw Error(ErrorCode::InvalidConfig, "port out of range");
  if (transport == TransportMode::Scripted && fixtures_dir.empty()) {
    throw Error(ErrorCode::InvalidConfig, "scripted transport needs transport.fixtures_dir");
  }
  if (transport == TransportMode::Live &&
      (endpoint.base_url.empty() || endpoint.model.empty() || endpoint.api_key_env.empty())) {
    throw Error(ErrorCode::InvalidConfig, "live transport needs base_url, model and api_key_env");
  }
  if (heartbeat.count() <= 0) throw Error(ErrorCode::InvalidConfig, "heartbeat_ms must be positive");
  debate.validate();
}

void from_json(const json& j, ServiceConfig& c) {
  if (j.contains("bind")) {
    auto bind = j["bind"].get<std::string>();
    auto colon = bind.rfind(':');
    if (colon == std::string::npos) throw Error(ErrorCode::InvalidConfig, "bind must be host:port");
    c.host = bind.substr(0, colon);
    try {
      c.port = std::stoi(bind.substr(colon + 1));
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidConfig, "bad port in bind " + bind);
    }
  }
  if (j.contains("transport")) {
    const auto& t = j["transport"];
    auto mode = t.value("mode", std::string("scripted"));
    if (mode == "scripted") {
      c.transport = ServiceConfig::TransportMode::Scripted;
    } else if (mode == "live") {
      c.transport = ServiceConfig::TransportMode::Live;
    } else {
      throw Error(ErrorCode::InvalidConfig, "transport.mode must be scripted or live");
    }
    c.fixtures_dir = t.value("fixtures_dir", std::string{});
    c.endpoint.base_url = t.value("base_url", std::string{});
    c.endpoint.model = t.value("model", std::string{});
    c.endpoint.api_key_env = t.value("api_key_env", std::string{});
    c.endpoint.timeout = std::chrono::seconds(t.value("timeout_s", 120));
  }
  c.data_dir = j.value("data_dir", std::string{});
  if (j.contains("debate")) c.debate = j["debate"].get<DebateConfig>();
  c.heartbeat = std::chrono::milliseconds(j.value("heartbeat_ms", 15000));
  c.auto_advance = j.value("auto_advance", false);
  c.parallel_queries = j.value("parallel_queries", true);
  c.live_extractor = j.value("extractor", std::string("rule")) == "live";
}

ServiceConfig load_service_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InvalidConfig, "cannot read " + path.string());
  ServiceConfig config;
  try {
    config = json::parse(in).get<ServiceConfig>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
  }
  config.validate();
  return config;
}

int http_status(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::UnknownSession:
    case ErrorCode::UnknownConflict:
    case ErrorCode::UnknownRound:
      return 404;
    case ErrorCode::WrongPhase:
    case ErrorCode::ConflictAlreadyResolved:
    case ErrorCode::IllegalTransition:
    case ErrorCode::RoundBudgetExhausted:
    case ErrorCode::TooFewRounds:
    case ErrorCode::NoRounds:
    case ErrorCode::MutedAgent:
    case ErrorCode::ItemInUse:
    case ErrorCode::IllegalEvent:
      return 409;
    case ErrorCode::OutOfRange:
      return 416;
    case ErrorCode::TransportDown:
    case ErrorCode::ExtractorUnavailable:
      return 503;
    case ErrorCode::Divergence:
    case ErrorCode::StorageFailure:
    case ErrorCode::CorruptFile:
      return 500;
    default:
      return 400;
  }
}

// ---------------------------------------------------------------------------
// Session hosting

namespace {

/// One live session: a single-writer engine plus a published copy of the log
/// and state that readers (streams, views) use without touching the writer.
class SessionHost {
 public:
  SessionHost(SessionStore store, std::shared_ptr<AgentTransport> transport, EngineOptions options)
      : store_(std::move(store)), engine_(store_, std::move(transport), options) {
    publish();
  }

  ~SessionHost() { close(); }

  template <typename Fn>
  auto act(Fn&& fn) {
    std::lock_guard op(op_mu_);
    struct Publish {
      SessionHost* host;
      ~Publish() { host->publish(); }
    } guard{this};
    return fn(engine_, store_);
  }

  std::uint64_t latest() const {
    std::lock_guard lk(read_mu_);
    return events_.empty() ? 0 : events_.back().seq;
  }

  std::shared_ptr<const SessionState> snapshot() const {
    std::lock_guard lk(read_mu_);
    return snapshot_;
  }

  /// Events with seq > cursor, waiting up to `timeout` for one to appear.
  std::vector<Event> events_after(std::uint64_t cursor, std::chrono::milliseconds timeout) const {
    std::unique_lock lk(read_mu_);
    if (timeout.count() > 0) {
      changed_.wait_for(lk, timeout, [&] { return closing_ || (!events_.empty() && events_.back().seq > cursor); });
    }
    std::vector<Event> out;
    for (auto k = static_cast<std::size_t>(cursor); k < events_.size(); ++k) out.push_back(events_[k]);
    return out;
  }

  bool finished() const {
    std::lock_guard lk(read_mu_);
    return closing_ || (snapshot_ && snapshot_->status.phase == SessionPhase::Terminated);
  }

  /// State after `at`, folded from the published log.
  std::shared_ptr<const SessionState> state_at(std::optional<std::uint64_t> at) const {
    EventLog log;
    {
      std::lock_guard lk(read_mu_);
      if (!at || (!events_.empty() && *at == events_.back().seq)) return snapshot_;
      const auto last = events_.empty() ? 0 : events_.back().seq;
      if (*at == 0 || *at > last) {
        throw Error(ErrorCode::OutOfRange, "at=" + std::to_string(*at) + " outside 1.." + std::to_string(last));
      }
      log.events.assign(events_.begin(), events_.begin() + static_cast<std::ptrdiff_t>(*at));
    }
    return std::make_shared<const SessionState>(fold_state(log, SeqTarget{*at}));
  }

  void start_driver() {
    driver_ = std::thread([this] { drive(); });
  }

  void close() {
    {
      std::lock_guard lk(read_mu_);
      closing_ = true;
    }
    changed_.notify_all();
    if (driver_.joinable()) driver_.join();
  }

 private:
  void publish() {
    {
      std::lock_guard lk(read_mu_);
      const auto& log = store_.log();
      for (auto k = events_.size(); k < log.events.size(); ++k) events_.push_back(log.events[k]);
      snapshot_ = std::make_shared<const SessionState>(store_.state());
      ++generation_;
    }
    changed_.notify_all();
  }

  // Background Debate rounds; after a failed attempt waits for the next change.
  void drive() {
    std::uint64_t seen = 0;
    for (;;) {
      {
        std::unique_lock lk(read_mu_);
        changed_.wait(lk, [&] { return closing_ || generation_ != seen; });
        if (closing_) return;
        seen = generation_;
      }
      std::lock_guard op(op_mu_);
      if (!engine_.can_advance()) continue;
      try {
        engine_.advance();
        publish();
      } catch (const std::exception& e) {
        std::cerr << "session " << store_.state().session_id << ": background round failed: " << e.what() << '\n';
      }
    }
  }

  std::mutex op_mu_;
  SessionStore store_;
  DebateEngine engine_;

  mutable std::mutex read_mu_;
  mutable std::condition_variable changed_;
  std::vector<Event> events_;
  std::shared_ptr<const SessionState> snapshot_;
  std::uint64_t generation_ = 0;
  bool closing_ = false;
  std::thread driver_;
};

std::string random_session_id() {
  static std::mutex mu;
  static std::mt19937_64 rng{std::random_device{}()};
  std::lock_guard lk(mu);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(rng()));
  return buf;
}

bool valid_session_id(const std::string& id) {
  static const std::regex pattern("[A-Za-z0-9_-]{1,64}");
  return std::regex_match(id, pattern);
}

json convergence_json(const analysis::ConvergenceStatus& s) {
  return {{"converged", s.converged},
          {"hypothesis_id", s.hypothesis_id ? json(*s.hypothesis_id) : json(nullptr)},
          {"modal_count", s.modal_count},
          {"participants", s.participants},
          {"support_share", s.support_share},
          {"dissenting_agents", s.dissenting_agents},
          {"as_of_round", s.as_of_round}};
}

json round_descriptor(const Round& round, const SessionState& state) {
  return {{"round_index", round.round_index},
          {"kind", to_string(round.kind)},
          {"spoke", round.spoke},
          {"seq", state.seq},
          {"phase", to_string(state.status.phase)}};
}

}  // namespace

// ---------------------------------------------------------------------------

struct Service::Impl {
  ServiceConfig config;
  std::shared_ptr<AgentTransport> transport;
  std::shared_ptr<CaseExtractor> extractor;
  Clock clock;
  httplib::Server server;
  std::thread server_thread;
  std::atomic<bool> stopping{false};

  mutable std::mutex sessions_mu;
  std::map<std::string, std::shared_ptr<SessionHost>> sessions;

  Impl(ServiceConfig c, std::shared_ptr<AgentTransport> t, std::shared_ptr<CaseExtractor> x, Clock k)
      : config(std::move(c)), transport(std::move(t)), extractor(std::move(x)), clock(std::move(k)) {
    config.validate();
    std::shared_ptr<ChatClient> client;
    if (config.transport == ServiceConfig::TransportMode::Live || config.live_extractor) {
      if (!config.endpoint.base_url.empty()) client = std::make_shared<HttpChatClient>(config.endpoint);
    }
    if (!transport) {
      if (config.transport == ServiceConfig::TransportMode::Live) {
        transport = std::make_shared<LiveTransport>(client);
      } else {
        transport = std::make_shared<ScriptedTransport>(config.fixtures_dir);
      }
    }
    if (!extractor) {
      if (config.live_extractor && client) {
        extractor = std::make_shared<LiveExtractor>(client);
      } else {
        extractor = std::make_shared<RuleBasedExtractor>();
      }
    }
    restore_sessions();
    routes();
  }

  std::shared_ptr<LogSink> sink_for(const std::string& id) const {
    if (config.data_dir.empty()) return nullptr;
    return std::make_shared<FileLogSink>(config.data_dir / (id + ".mdtlog"), id);
  }

  void restore_sessions() {
    if (config.data_dir.empty()) return;
    std::filesystem::create_directories(config.data_dir);
    for (const auto& entry : std::filesystem::directory_iterator(config.data_dir)) {
      if (entry.path().extension() != ".mdtlog") continue;
      try {
        auto log = load_session(entry.path(), LoadMode::ValidPrefix);
        save_session(log, entry.path());  // drop any torn tail before appending again
        auto id = log.session_id;
        auto store = SessionStore::from_log(std::move(log), clock, sink_for(id));
        auto host = std::make_shared<SessionHost>(std::move(store), transport, EngineOptions{config.parallel_queries});
        if (config.auto_advance) host->start_driver();
        sessions.emplace(id, std::move(host));
      } catch (const std::exception& e) {
        std::cerr << "skipping " << entry.path().string() << ": " << e.what() << '\n';
      }
    }
  }

  std::shared_ptr<SessionHost> find(const std::string& id) const {
    std::lock_guard lk(sessions_mu);
    auto it = sessions.find(id);
    if (it == sessions.end()) throw Error(ErrorCode::UnknownSession, "unknown session " + id);
    return it->second;
  }

  static void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void reply_error(httplib::Response& res, ErrorCode code, const std::string& message, json extra = {}) {
    json body = {{"code", to_string(code)}, {"message", message}};
    if (extra.is_object()) body.update(extra);
    reply(res, http_status(code), body);
  }

  template <typename Fn>
  static httplib::Server::Handler guarded(Fn fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
      try {
        fn(req, res);
      } catch (const Error& e) {
        reply_error(res, e.code(), e.what());
      } catch (const json::exception& e) {
        reply_error(res, ErrorCode::BadRequest, e.what());
      } catch (const std::exception& e) {
        reply(res, 500, {{"code", "Internal"}, {"message", e.what()}});
      }
    };
  }

  static json body_of(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    auto j = json::parse(req.body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::BadRequest, "request body must be a JSON object");
    return j;
  }

  static std::optional<std::uint64_t> at_param(const httplib::Request& req) {
    if (!req.has_param("at")) return std::nullopt;
    try {
      return std::stoull(req.get_param_value("at"));
    } catch (const std::exception&) {
      throw Error(ErrorCode::BadRequest, "at must be a sequence number");
    }
  }

  void create(const httplib::Request& req, httplib::Response& res) {
    auto body = body_of(req);
    CaseRecord record;
    const auto& c = body.at("case");
    if (c.contains("items")) {
      record = c.get<CaseRecord>();
    } else {
      record = extract_case_items(c.at("narrative").get<std::string>(), *extractor, c.value("case_id", "case"));
    }
    auto agents = body.at("agents").get<std::vector<AgentProfile>>();
    json config_json = config.debate;
    if (body.contains("config")) config_json.merge_patch(body["config"]);
    auto debate = config_json.get<DebateConfig>();

    std::string id = body.value("session_id", std::string{});
    if (id.empty()) id = random_session_id();
    if (!valid_session_id(id)) throw Error(ErrorCode::BadRequest, "session_id must match [A-Za-z0-9_-]{1,64}");

    SessionStore store(clock, sink_for(id));
    create_session(store, id, record, agents, debate);
    auto host = std::make_shared<SessionHost>(std::move(store), transport, EngineOptions{config.parallel_queries});
    {
      std::lock_guard lk(sessions_mu);
      if (!sessions.emplace(id, host).second) throw Error(ErrorCode::BadRequest, "session " + id + " exists");
    }

    json descriptor = {{"session_id", id}, {"stream_url", "/api/v1/sessions/" + id + "/events"}};
    try {
      host->act([](DebateEngine& engine, SessionStore&) { return engine.run_round(RoundKind::Initial).round_index; });
    } catch (const Error& e) {
      if (e.code() != ErrorCode::TransportDown) throw;
      descriptor["seq"] = host->latest();
      descriptor["rounds"] = 0;
      reply_error(res, e.code(), e.what(), descriptor);
      return;
    }
    if (config.auto_advance) host->start_driver();
    auto snap = host->snapshot();
    descriptor["seq"] = snap->seq;
    descriptor["rounds"] = snap->rounds.size();
    descriptor["phase"] = to_string(snap->status.phase);
    reply(res, 201, descriptor);
  }

  void stream(const httplib::Request& req, httplib::Response& res) {
    auto host = find(req.matches[1]);
    std::uint64_t from = 0;
    try {
      if (req.has_param("from")) from = std::stoull(req.get_param_value("from"));
      if (req.has_header("Last-Event-ID")) from = std::stoull(req.get_header_value("Last-Event-ID"));
    } catch (const std::exception&) {
      throw Error(ErrorCode::BadRequest, "from must be a sequence number");
    }
    if (from > host->latest()) {
      throw Error(ErrorCode::OutOfRange,
                  "from=" + std::to_string(from) + " is beyond latest seq " + std::to_string(host->latest()));
    }
    const bool tail = !req.has_param("tail") || req.get_param_value("tail") != "0";
    auto cursor = std::make_shared<std::uint64_t>(from);
    const auto heartbeat = config.heartbeat;
    res.set_header("Cache-Control", "no-cache");
    res.set_chunked_content_provider(
        "text/event-stream", [this, host, cursor, tail, heartbeat](std::size_t, httplib::DataSink& sink) {
          auto batch = host->events_after(*cursor, std::chrono::milliseconds(tail ? heartbeat.count() : 0));
          std::string frames;
          for (const auto& e : batch) {
            frames += "id: " + std::to_string(e.seq) + "\ndata: " + encode_event(e).dump() + "\n\n";
            *cursor = e.seq;
          }
          if (batch.empty() && tail && !stopping) {
            frames = "event: heartbeat\ndata: " + json{{"heartbeat", true}, {"seq", *cursor}}.dump() + "\n\n";
          }
          if (!frames.empty() && !sink.write(frames.data(), frames.size())) return false;
          const bool caught_up = *cursor >= host->latest();
          if (caught_up && (!tail || host->finished() || stopping)) sink.done();
          return true;
        });
  }

  void view(const httplib::Request& req, httplib::Response& res) {
    auto host = find(req.matches[1]);
    const std::string name = req.matches[2];
    const std::string arg = req.matches.size() > 3 ? std::string(req.matches[3]) : std::string{};
    auto st = host->state_at(at_param(req));
    json doc = {{"session_id", st->session_id}, {"seq", st->seq}, {"view", name}};
    if (name == "state") {
      doc["state"] = *st;
    } else if (name == "round") {
      int index = 0;
      try {
        index = std::stoi(arg);
      } catch (const std::exception&) {
        throw Error(ErrorCode::BadRequest, "round view needs an index");
      }
      const auto& round = st->round(index);
      doc["round"] = round;
      doc["summary"] = analysis::compute_round_summary(*st, index);
      doc["convergence"] = convergence_json(analysis::evaluate_convergence(round, st->config.consensus_threshold));
    } else if (name == "conflicts") {
      doc["conflicts"] = st->conflicts;
    } else if (name == "provenance") {
      if (st->rounds.empty()) throw Error(ErrorCode::NoRounds, "no committed rounds");
      const int r = static_cast<int>(st->rounds.size()) - 1;
      json items = json::object();
      json flags = json::object();
      for (const auto& [item, badges] : analysis::build_provenance_index(*st, r)) {
        items[item] = badges;
        flags[item] = to_string(analysis::item_badge_state(*st, item, r).flag);
      }
      doc["round_index"] = r;
      doc["items"] = std::move(items);
      doc["flags"] = std::move(flags);
    } else if (name == "flow") {
      doc["edges"] = analysis::compute_hypothesis_flow(*st);
    } else if (name == "consensus") {
      doc["consensus"] = analysis::consensus_summary(*st);
      doc["convergence"] = convergence_json(analysis::check_convergence(*st));
    } else if (name == "summaries") {
      auto list = json::array();
      for (const auto& round : st->rounds) list.push_back(analysis::compute_round_summary(*st, round.round_index));
      doc["summaries"] = std::move(list);
    } else if (name == "evidence") {
      doc["comparison"] = analysis::compare_evidence(*st, arg);
    } else {
      reply(res, 404, {{"code", "UnknownView"}, {"message", "unknown view " + name}});
      return;
    }
    reply(res, 200, doc);
  }

  void routes() {
    server.new_task_queue = [] { return new httplib::ThreadPool(32); };
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});

    server.Get("/api/v1/health", [](const httplib::Request&, httplib::Response& res) {
      reply(res, 200, {{"ok", true}});
    });

    server.Post("/api/v1/sessions", guarded([this](const auto& req, auto& res) { create(req, res); }));

    server.Get("/api/v1/sessions", guarded([this](const auto&, auto& res) {
      auto list = json::array();
      std::lock_guard lk(sessions_mu);
      for (const auto& [id, host] : sessions) {
        auto snap = host->snapshot();
        list.push_back({{"session_id", id},
                        {"seq", snap->seq},
                        {"rounds", snap->rounds.size()},
                        {"phase", to_string(snap->status.phase)}});
      }
      reply(res, 200, {{"sessions", list}});
    }));

    server.Post("/api/v1/cases/extract", guarded([this](const auto& req, auto& res) {
      auto body = body_of(req);
      auto record = extract_case_items(body.at("narrative").template get<std::string>(), *extractor,
                                       body.value("case_id", std::string("case")));
      reply(res, 200, {{"case", record}, {"report", {{"ok", validate_case(record).ok()}}}});
    }));

    server.Get(R"(/api/v1/sessions/([^/]+)/events)",
               guarded([this](const auto& req, auto& res) { stream(req, res); }));

    server.Post(R"(/api/v1/sessions/([^/]+)/rounds)", guarded([this](const auto& req, auto& res) {
      auto host = find(req.matches[1]);
      auto doc = host->act([](DebateEngine& engine, SessionStore& store) {
        const auto& round = engine.advance();
        return round_descriptor(round, store.state());
      });
      reply(res, 200, doc);
    }));

    server.Post(R"(/api/v1/sessions/([^/]+)/interventions)", guarded([this](const auto& req, auto& res) {
      auto host = find(req.matches[1]);
      auto iv = body_of(req).template get<Intervention>();
      auto doc = host->act([&](DebateEngine& engine, SessionStore& store) {
        const auto& round = engine.submit_intervention(iv);
        auto out = round_descriptor(round, store.state());
        out["intervention_id"] = round.trigger ? round.trigger->id : std::string{};
        return out;
      });
      reply(res, 200, doc);
    }));

    server.Post(R"(/api/v1/sessions/([^/]+)/conflicts/([^/]+)/reeval)", guarded([this](const auto& req, auto& res) {
      auto host = find(req.matches[1]);
      const std::string conflict = req.matches[2];
      auto doc = host->act([&](DebateEngine& engine, SessionStore& store) {
        return round_descriptor(engine.request_reeval(conflict), store.state());
      });
      reply(res, 200, doc);
    }));

    server.Post(R"(/api/v1/sessions/([^/]+)/control)", guarded([this](const auto& req, auto& res) {
      auto host = find(req.matches[1]);
      auto body = body_of(req);
      auto kind = ControlAction::parse_kind(body.at("action").template get<std::string>());
      if (!kind) throw Error(ErrorCode::BadRequest, "unknown action " + body["action"].dump());
      ControlAction action{*kind, body.value("agent_id", std::string{})};
      auto doc = host->act([&](DebateEngine& engine, SessionStore& store) {
        json status = engine.control(action);
        return json{{"status", status}, {"seq", store.state().seq}};
      });
      reply(res, 200, doc);
    }));

    server.Get(R"(/api/v1/sessions/([^/]+)/views/([a-z]+)(?:/([^/]+))?)",
               guarded([this](const auto& req, auto& res) { view(req, res); }));
  }

  void shutdown() {
    stopping = true;
    std::vector<std::shared_ptr<SessionHost>> hosts;
    {
      std::lock_guard lk(sessions_mu);
      for (auto& [id, host] : sessions) hosts.push_back(host);
    }
    for (auto& host : hosts) host->close();
    server.stop();
    if (server_thread.joinable()) server_thread.join();
  }
};

Service::Service(ServiceConfig config, std::shared_ptr<AgentTransport> transport,
                 std::shared_ptr<CaseExtractor> extractor, Clock clock)
    : impl_(std::make_unique<Impl>(std::move(config), std::move(transport), std::move(extractor), std::move(clock))) {}

Service::~Service() { stop(); }

int Service::start() {
  int port = impl_->config.port;
  if (port == 0) {
    port = impl_->server.bind_to_any_port(impl_->config.host);
  } else if (!impl_->server.bind_to_port(impl_->config.host, port)) {
    port = -1;
  }
  if (port < 0) throw Error(ErrorCode::StorageFailure, "cannot bind " + impl_->config.host);
  impl_->server_thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port;
}

bool Service::listen() { return impl_->server.listen(impl_->config.host, impl_->config.port); }

void Service::stop() {
  if (impl_ && !impl_->stopping) impl_->shutdown();
}

std::size_t Service::session_count() const {
  std::lock_guard lk(impl_->sessions_mu);
  return impl_->sessions.size();
}

}  // namespace mdtroom
