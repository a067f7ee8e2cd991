// mdtroom-server: serves the /api/v1 REST and event-stream interface.

#include <csignal>
#include <iostream>

#include <CLI11.hpp>

#include "mdtroom/error.hpp"
#include "mdtroom/service.hpp"

namespace {
mdtroom::Service* g_service = nullptr;

void on_signal(int) {
  if (g_service) g_service->stop();
}
}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Debate session server"};
  std::string config_path;
  app.add_option("--config", config_path, "Service config (JSON)")->required()->check(CLI::ExistingFile);
  CLI11_PARSE(app, argc, argv);

  try {
    auto config = mdtroom::load_service_config(config_path);
    mdtroom::Service service(config);
    g_service = &service;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::cerr << "listening on " << config.host << ':' << config.port << '\n';
    if (!service.listen()) {
      std::cerr << "cannot listen on " << config.host << ':' << config.port << '\n';
      return 1;
    }
    g_service = nullptr;
  } catch (const mdtroom::Error& e) {
    std::cerr << mdtroom::to_string(e.code()) << ": " << e.what() << '\n';
    return 2;
  }
  return 0;
}
