#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <thread>

#include <gtest/gtest.h>

#include "hivegate/daemon/echo_server.hpp"
#include "hivegate/daemon/proxy.hpp"

using namespace hivegate;
using nlohmann::json;

namespace {

const std::filesystem::path kRoot = HIVEGATE_SOURCE_DIR;

class TempDir {
 public:
  TempDir() {
    static int n = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("hivegate_daemon_" + std::to_string(::getpid()) + "_" + std::to_string(n++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path write(const std::string& name, const std::string& text) const {
    auto p = path_ / name;
    std::ofstream(p) << text;
    return p;
  }

 private:
  std::filesystem::path path_;
};

json base_manifest(std::uint16_t echo_port) {
  return {{"listen", {{"egress_port", 1}, {"admin_port", 1}, {"local_name", "client"}}},
          {"upstreams", {{"echo", "127.0.0.1:" + std::to_string(echo_port)}}}};
}

ProxyOptions test_options(bool passthrough = false) {
  ProxyOptions o;
  o.passthrough = passthrough;
  o.ephemeral_ports = true;
  return o;
}

HttpFrame request(const std::string& host, const std::string& body, const std::string& target = "/x") {
  HttpFrame f;
  f.start.method = "POST";
  f.start.target = target;
  f.headers.set("Host", host);
  f.headers.set("Content-Type", "text/plain");
  f.headers.set("Content-Length", std::to_string(body.size()));
  f.body = body;
  return f;
}

HttpFrame call(std::uint16_t port, const HttpFrame& req) {
  net::HttpConnection c({"127.0.0.1", port});
  return c.exchange(serialize(req));
}

std::string admin_get(std::uint16_t port, const std::string& path) {
  httplib::Client cli("127.0.0.1", port);
  auto r = cli.Get(path);
  return r ? r->body : std::string();
}

}  // namespace

TEST(Manifest, MinimalIsValid) {
  auto m = parse_manifest(base_manifest(9000), ".");
  EXPECT_EQ(m.upstreams.at("echo").port, 9000);
  EXPECT_TRUE(m.bindings.empty());
  EXPECT_EQ(m.shutdown_grace, Millis{5000});
}

TEST(Manifest, ReportsEveryProblemInOnePass) {
  json doc = base_manifest(9000);
  doc["upstreams"]["bad"] = "no-port";
  doc["queues"] = json::array({{{"route_pattern", "a b"}}, {{"route_pattern", "*"}, {"rate_kb_per_s", -1}}});
  doc["policies"] = json::array({
      {{"route_pattern", "client->nowhere/request"}, {"builtin", "fifo_lifo"}},
      {{"route_pattern", "client->echo/request"}, {"program_path", "missing.lua"}},
      {{"route_pattern", "client->echo/request"}, {"trigger", "on_response"}, {"builtin", "deadline_downsample"}},
      {{"route_pattern", "client->echo/request"}, {"builtin", "traffic_monitor"},
       {"notify_endpoints", {"http://n/x"}}, {"transform_endpoint", "http://t/x"},
       {"params", {{"edge_name", "ghost"}}}},
  });
  try {
    parse_manifest(doc, ".");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    std::string all;
    std::size_t errors = 0;
    for (const auto& d : e.diagnostics()) {
      all += d.where + ": " + d.message + "\n";
      errors += d.severity == Diagnostic::Severity::Error;
    }
    EXPECT_GE(errors, 7u) << all;
    for (const char* needle : {"upstreams.bad", "bad route pattern 'a b'", "rate_kb_per_s",
                               "unknown upstream 'nowhere'", "program file not found",
                               "calls transform but the binding has no transform_endpoint",
                               "unknown upstream 'ghost'"})
      EXPECT_NE(all.find(needle), std::string::npos) << needle << "\n" << all;
  }
}

TEST(Manifest, TransformWithoutEndpointIsAStaticError) {
  TempDir dir;
  dir.write("t.lua", "function on_request(h) h:transform('180p') end\n");
  json doc = base_manifest(9000);
  doc["policies"] = json::array({{{"route_pattern", "client->echo/request"}, {"program_path", "t.lua"}}});
  EXPECT_THROW(parse_manifest(doc, dir.path()), ConfigError);
  doc["policies"][0]["transform_endpoint"] = "http://127.0.0.1:1/t";
  EXPECT_NO_THROW(parse_manifest(doc, dir.path()));
}

TEST(Manifest, DuplicatePolicyWarnsAndLaterWins) {
  json doc = base_manifest(9000);
  doc["policies"] = json::array({{{"route_pattern", "client->echo/request"}, {"builtin", "fifo_lifo"}},
                                 {{"route_pattern", "client->echo/request"}, {"builtin", "load_shed"}}});
  auto m = parse_manifest(doc, ".");
  ASSERT_EQ(m.warnings.size(), 1u);
  EXPECT_NE(m.warnings[0].message.find("replaces"), std::string::npos);
  BindingSet set(m.bindings);
  ASSERT_EQ(set.bindings().size(), 1u);
  EXPECT_NE(set.match("client->echo/request", Trigger::OnRequest)->program->describe().find("load_shed"),
            std::string::npos);
}

TEST(Manifest, ShippedManifestsLoad) {
  std::size_t n = 0;
  for (const auto& e : std::filesystem::directory_iterator(kRoot / "configs" / "manifests")) {
    EXPECT_NO_THROW(load_manifest(e.path())) << e.path();
    ++n;
  }
  EXPECT_GE(n, 6u);
}

TEST(Manifest, UnreadableOrMalformedFile) {
  EXPECT_THROW(load_manifest("/nonexistent/manifest.json"), ConfigError);
  TempDir dir;
  EXPECT_THROW(load_manifest(dir.write("m.json", "{ not json")), ConfigError);
}

TEST(Proxy, EchoRoundTripIsByteIdentical) {
  EchoServer echo;
  json doc = base_manifest(echo.port());
  doc["policies"] = json::array({{{"route_pattern", "client->echo/request"},
                                  {"program_path", (kRoot / "policies" / "empty.lua").string()}}});
  Proxy proxy(parse_manifest(doc, "."), test_options());
  proxy.start();
  std::string body;
  for (int i = 0; i < 256; ++i) body.push_back(static_cast<char>(i));
  net::HttpConnection c({"127.0.0.1", proxy.egress_port()});
  for (int i = 0; i < 20; ++i) {
    auto r = c.exchange(serialize(request("echo", body + std::to_string(i))));
    EXPECT_EQ(r.start.status, 200);
    EXPECT_EQ(r.body, body + std::to_string(i));
  }
  EXPECT_EQ(proxy.engine().stats().executions, 20u);
  proxy.stop(Millis{0});
}

// With no policies and no limits the upstream sees what a direct client would
// have sent, minus hop-by-hop fields.
TEST(Proxy, IdentityModuloHopByHop) {
  EchoServer mirror({.mirror = true});
  Proxy proxy(parse_manifest(base_manifest(mirror.port()), "."), test_options());
  proxy.start();
  auto req = request("echo", "payload");
  req.headers.set("X-Trace", "abc");
  req.headers.set("Keep-Alive", "timeout=5");
  req.headers.set("X-Hop", "1");
  req.headers.set("Connection", "keep-alive, X-Hop");
  auto via_proxy = call(proxy.egress_port(), req);

  auto direct_req = req;
  detail::strip_hop_by_hop(direct_req.headers);
  direct_req.headers.set("Host", mirror.address().str());
  auto direct = call(mirror.port(), direct_req);
  EXPECT_EQ(via_proxy.body, direct.body);
  EXPECT_EQ(via_proxy.body.find("X-Hop"), std::string::npos);
  EXPECT_NE(via_proxy.body.find("X-Trace: abc"), std::string::npos);
  proxy.stop(Millis{0});
}

TEST(Proxy, PassthroughForwardsWithoutQueues) {
  EchoServer echo;
  Proxy proxy(parse_manifest(base_manifest(echo.port()), "."), test_options(true));
  proxy.start();
  auto r = call(proxy.egress_port(), request("echo", "hi"));
  EXPECT_EQ(r.body, "hi");
  EXPECT_TRUE(proxy.queues().queues().empty());
  proxy.stop(Millis{0});
}

TEST(Proxy, UnknownUpstreamIsBadGateway) {
  EchoServer echo;
  Proxy proxy(parse_manifest(base_manifest(echo.port()), "."), test_options());
  proxy.start();
  auto r = call(proxy.egress_port(), request("nowhere", "hi"));
  EXPECT_EQ(r.start.status, 502);
  proxy.stop(Millis{0});
}

TEST(Proxy, DroppedMessagesGet503) {
  EchoServer echo;
  TempDir dir;
  dir.write("drop.lua", "function on_request(h) h:drop() end\n");
  json doc = base_manifest(echo.port());
  doc["policies"] = json::array({{{"route_pattern", "client->echo/request"}, {"program_path", "drop.lua"}}});
  Proxy proxy(parse_manifest(doc, dir.path()), test_options());
  proxy.start();
  auto r = call(proxy.egress_port(), request("echo", "hi"));
  EXPECT_EQ(r.start.status, 503);
  EXPECT_EQ(r.headers.get("X-Hivegate-Dropped"), "policy");
  EXPECT_EQ(echo.requests(), 0u);
  proxy.stop(Millis{0});
}

TEST(Proxy, RedirectReachesTheOtherUpstream) {
  EchoServer cloud({.name = "cloud"}), edge({.name = "edge"});
  TempDir dir;
  dir.write("r.lua", "function on_request(h) h:redirect('edge') end\n");
  json doc = base_manifest(cloud.port());
  doc["upstreams"] = {{"cloud", cloud.address().str()}, {"edge", edge.address().str()}};
  doc["policies"] = json::array({{{"route_pattern", "client->cloud/request"}, {"program_path", "r.lua"}}});
  Proxy proxy(parse_manifest(doc, dir.path()), test_options());
  proxy.start();
  auto r = call(proxy.egress_port(), request("cloud", "frame"));
  EXPECT_EQ(r.start.status, 200);
  EXPECT_EQ(r.headers.get("Server"), "edge");
  EXPECT_EQ(cloud.requests(), 0u);
  EXPECT_EQ(edge.requests(), 1u);
  EXPECT_TRUE(proxy.queues().find("client->edge/request"));
  proxy.stop(Millis{0});
}

TEST(Proxy, RateLimitPacesForwarding) {
  EchoServer echo;
  json doc = base_manifest(echo.port());
  doc["queues"] = json::array({{{"route_pattern", "client->echo/request"}, {"rate_kb_per_s", 20}}});
  Proxy proxy(parse_manifest(doc, "."), test_options());
  proxy.start();
  const std::string body(4096, 'x');
  net::HttpConnection c({"127.0.0.1", proxy.egress_port()});
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < 10; ++i) EXPECT_EQ(c.exchange(serialize(request("echo", body))).start.status, 200);
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  // 40 KiB at 20 KB/s, less the initial burst of one message.
  EXPECT_GT(s, 1.6);
  EXPECT_LT(s, 3.0);
  proxy.stop(Millis{0});
}

TEST(Admin, MetricsScrapeFormat) {
  EchoServer echo;
  Proxy proxy(parse_manifest(base_manifest(echo.port()), "."), test_options());
  proxy.start();
  for (int i = 0; i < 5; ++i) call(proxy.egress_port(), request("echo", "abc"));
  auto text = admin_get(proxy.admin_port(), "/metrics");
  std::regex line(R"(^(\S+->\S+/(request|response)) (\S+) (\S+) (\d+)$)");
  std::istringstream in(text);
  std::string l;
  std::set<std::string> routes;
  while (std::getline(in, l)) {
    std::smatch m;
    ASSERT_TRUE(std::regex_match(l, m, line)) << l;
    routes.insert(m[1]);
    EXPECT_GE(std::stod(m[3]), 0);
    EXPECT_GT(std::stod(m[4]), 0) << "latency recorded for " << m[1];
  }
  EXPECT_EQ(routes, (std::set<std::string>{"client->echo/request", "echo->client/response"}));
  auto queues = json::parse(admin_get(proxy.admin_port(), "/queues"));
  ASSERT_EQ(queues.size(), 2u);
  EXPECT_TRUE(queues[0].contains("mean_rtt_ms"));
  auto stats = json::parse(admin_get(proxy.admin_port(), "/stats"));
  EXPECT_EQ(stats["responses"], 5);
  proxy.stop(Millis{0});
}

TEST(Admin, ReloadSwapsPrograms) {
  EchoServer mirror({.mirror = true});
  TempDir dir;
  auto program = [&](const std::string& tag) {
    dir.write("tag.lua", "function on_request(h) h:header():replace('X-Tag', '" + tag + "') end\n");
  };
  program("v1");
  json doc = base_manifest(mirror.port());
  doc["policies"] = json::array({{{"route_pattern", "client->echo/request"}, {"program_path", "tag.lua"}}});
  auto path = dir.write("manifest.json", doc.dump());
  Proxy proxy(load_manifest(path), test_options());
  proxy.start();
  EXPECT_NE(call(proxy.egress_port(), request("echo", "a")).body.find("X-Tag: v1"), std::string::npos);

  program("v2");
  EXPECT_NE(call(proxy.egress_port(), request("echo", "a")).body.find("X-Tag: v1"), std::string::npos);
  httplib::Client admin("127.0.0.1", proxy.admin_port());
  auto r = admin.Post("/policies/reload");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200) << r->body;
  EXPECT_NE(call(proxy.egress_port(), request("echo", "a")).body.find("X-Tag: v2"), std::string::npos);

  dir.write("tag.lua", "function on_request(h) this is not lua end\n");
  r = admin.Post("/policies/reload");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 400);
  EXPECT_NE(call(proxy.egress_port(), request("echo", "a")).body.find("X-Tag: v2"), std::string::npos);
  proxy.stop(Millis{0});
}

// A message held back by a stalled link keeps the program it ran under even
// if a reload happens while it waits.
TEST(Admin, ReloadLeavesQueuedMessagesAlone) {
  EchoServer mirror({.mirror = true});
  TempDir dir;
  dir.write("tag.lua", "function on_request(h) h:header():replace('X-Tag', 'old') end\n");
  json doc = base_manifest(mirror.port());
  doc["queues"] = json::array({{{"route_pattern", "client->echo/request"}, {"rate_kb_per_s", 0}}});
  doc["policies"] = json::array({{{"route_pattern", "client->echo/request"}, {"program_path", "tag.lua"}}});
  auto path = dir.write("manifest.json", doc.dump());
  Proxy proxy(load_manifest(path), test_options());
  proxy.start();
  std::string body;
  std::thread client([&] { body = call(proxy.egress_port(), request("echo", "a")).body; });
  auto q = [&] { return proxy.queues().find("client->echo/request"); };
  for (int i = 0; i < 200 && (!q() || q()->length() == 0); ++i) std::this_thread::sleep_for(Millis{5});
  dir.write("tag.lua", "function on_request(h) h:header():replace('X-Tag', 'new') end\n");
  proxy.reload();
  proxy.queues().set_rate_limit(Route("client", "echo", Direction::Request), 1000);
  client.join();
  EXPECT_NE(body.find("X-Tag: old"), std::string::npos) << body;
  proxy.stop(Millis{0});
}

TEST(Proxy, ShutdownDropsWhatCannotDrain) {
  EchoServer echo;
  json doc = base_manifest(echo.port());
  doc["queues"] = json::array({{{"route_pattern", "client->echo/request"}, {"rate_kb_per_s", 0}}});
  Proxy proxy(parse_manifest(doc, "."), test_options());
  proxy.start();
  HttpFrame r;
  std::thread client([&] { r = call(proxy.egress_port(), request("echo", "stuck")); });
  std::this_thread::sleep_for(Millis{100});
  const auto t0 = std::chrono::steady_clock::now();
  proxy.stop(Millis{200});
  client.join();
  EXPECT_GE(std::chrono::steady_clock::now() - t0, Millis{200});
  EXPECT_EQ(r.start.status, 503);
  EXPECT_EQ(r.headers.get("X-Hivegate-Dropped"), "shutdown");
}

TEST(Proxy, OversizedBodyIsRejected) {
  EchoServer echo;
  json doc = base_manifest(echo.port());
  doc["max_payload_bytes"] = 10;
  Proxy proxy(parse_manifest(doc, "."), test_options());
  proxy.start();
  auto r = call(proxy.egress_port(), request("echo", std::string(11, 'x')));
  EXPECT_EQ(r.start.status, 413);
  proxy.stop(Millis{0});
}

TEST(Proxy, BindConflictIsReported) {
  auto taken = net::listen_on("127.0.0.1", 0);
  json doc = base_manifest(9000);
  doc["listen"]["egress_port"] = net::local_port(taken.fd());
  Proxy proxy(parse_manifest(doc, "."), ProxyOptions{});
  EXPECT_THROW(proxy.start(), net::BindError);
}

TEST(Cli, ExitCodes) {
  const std::string bin = HIVEGATE_PROXY_BIN;
  EXPECT_EQ(WEXITSTATUS(std::system((bin + " --config /nonexistent.json 2>/dev/null").c_str())), 1);
  EXPECT_EQ(WEXITSTATUS(std::system((bin + " --check --config " + (kRoot / "configs/manifests/minimal.json").string() +
                                     " >/dev/null").c_str())),
            0);
  auto taken = net::listen_on("127.0.0.1", 0);
  TempDir dir;
  json doc = base_manifest(9000);
  doc["listen"]["egress_port"] = net::local_port(taken.fd());
  doc["listen"]["admin_port"] = 0;
  auto path = dir.write("m.json", doc.dump());
  EXPECT_EQ(WEXITSTATUS(std::system((bin + " --config " + path.string() + " 2>/dev/null >/dev/null").c_str())), 2);
}

TEST(Proxy, TransformCallbackRewritesPayloadBeforeForwarding) {
  EchoServer mirror({.mirror = true});
  httplib::Server transformer;
  std::atomic<int> calls{0};
  transformer.Post("/downsample", [&](const httplib::Request& req, httplib::Response& res) {
    ++calls;
    res.set_content(req.get_header_value("X-Transform-Args") + ":" + req.body.substr(0, 4),
                    "application/octet-stream");
  });
  const int tport = transformer.bind_to_any_port("127.0.0.1");
  std::thread tthread([&] { transformer.listen_after_bind(); });
  TempDir dir;
  dir.write("t.lua", "function on_request(h) h:transform('180p') end\n");
  json doc = base_manifest(mirror.port());
  doc["policies"] = json::array({{{"route_pattern", "client->echo/request"},
                                  {"program_path", "t.lua"},
                                  {"transform_endpoint", "http://127.0.0.1:" + std::to_string(tport) + "/downsample"}}});
  Proxy proxy(parse_manifest(doc, dir.path()), test_options());
  proxy.start();
  auto r = call(proxy.egress_port(), request("echo", std::string(1000, 'f')));
  EXPECT_EQ(calls.load(), 1);
  EXPECT_NE(r.body.find("Content-Length: 9\r\n"), std::string::npos) << r.body;
  EXPECT_NE(r.body.find("\r\n\r\n180p:ffff"), std::string::npos) << r.body;
  EXPECT_EQ(proxy.dispatcher().stats().transforms_completed, 1u);
  proxy.stop(Millis{0});
  transformer.stop();
  tthread.join();
}
