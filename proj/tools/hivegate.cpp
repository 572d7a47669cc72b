#include <csignal>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "hivegate/daemon/proxy.hpp"

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitBind = 2;

void print_diagnostics(const std::vector<hivegate::Diagnostic>& diags) {
  for (const auto& d : diags)
    std::cerr << (d.severity == hivegate::Diagnostic::Severity::Error ? "error: " : "warning: ")
              << (d.where.empty() ? "" : d.where + ": ") << d.message << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hivegate: adaptive HTTP message proxy"};
  std::string config, log_level = "info";
  int admin_port = -1;
  long grace_ms = -1;
  bool passthrough = false, check_only = false;
  app.add_option("--config", config, "manifest file")->required();
  app.add_option("--admin-port", admin_port, "admin endpoint port (overrides the manifest)")
      ->check(CLI::Range(0, 65535));
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error, off");
  app.add_flag("--passthrough", passthrough, "forward without queues or policies");
  app.add_option("--grace-ms", grace_ms, "shutdown drain period (overrides the manifest)")
      ->check(CLI::NonNegativeNumber);
  app.add_flag("--check", check_only, "validate the manifest and exit");
  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(log_level));

  hivegate::Manifest manifest;
  try {
    manifest = hivegate::load_manifest(config);
  } catch (const hivegate::ConfigError& e) {
    print_diagnostics(e.diagnostics());
    return kExitConfig;
  }
  print_diagnostics(manifest.warnings);
  if (check_only) {
    std::cout << config << ": ok\n";
    return 0;
  }
  if (grace_ms >= 0) manifest.shutdown_grace = hivegate::Millis{grace_ms};

  // Signals are taken synchronously on this thread; every other thread
  // inherits the blocked mask.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  hivegate::ProxyOptions opts;
  opts.passthrough = passthrough;
  if (admin_port >= 0) opts.admin_port = static_cast<std::uint16_t>(admin_port);
  hivegate::Proxy proxy(std::move(manifest), opts);
  try {
    proxy.start();
  } catch (const hivegate::net::BindError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitBind;
  }
  std::cout << "listening egress=" << proxy.egress_port() << " ingress=" << proxy.ingress_port()
            << " admin=" << proxy.admin_port() << std::endl;

  int sig = 0;
  sigwait(&signals, &sig);
  spdlog::info("signal {}: draining", sig);
  proxy.stop();
  return 0;
}
