#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "mdtroom/chat_client.hpp"
#include "mdtroom/clock.hpp"
#include "mdtroom/engine.hpp"
#include "mdtroom/error.hpp"

namespace mdtroom {

struct ServiceConfig {
  enum class TransportMode { Scripted, Live };

  std::string host = "127.0.0.1";
  int port = 8080;  // 0 = any free port
  TransportMode transport = TransportMode::Scripted;
  std::filesystem::path fixtures_dir;
  ChatEndpoint endpoint;
  std::filesystem::path data_dir;  // empty = in-memory only
  DebateConfig debate;
  std::chrono::milliseconds heartbeat{15000};
  bool auto_advance = false;  // keep running Debate rounds in the background
  bool parallel_queries = true;
  bool live_extractor = false;

  /// Throws InvalidConfig.
  void validate() const;
};

void from_json(const nlohmann::json& j, ServiceConfig& config);
ServiceConfig load_service_config(const std::filesystem::path& path);

/// HTTP status for an engine error code.
int http_status(ErrorCode code) noexcept;

/// REST + server-sent-events front end over a set of debate sessions.
class Service {
 public:
  /// Transport and extractor default to what the config describes.
  explicit Service(ServiceConfig config, std::shared_ptr<AgentTransport> transport = nullptr,
                   std::shared_ptr<CaseExtractor> extractor = nullptr, Clock clock = system_clock());
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds and serves on a background thread. Returns the bound port.
  int start();
  /// Blocks serving on the calling thread.
  bool listen();
  void stop();

  std::size_t session_count() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace mdtroom
