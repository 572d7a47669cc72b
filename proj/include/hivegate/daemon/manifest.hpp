#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "hivegate/callback/http_transport.hpp"
#include "hivegate/daemon/net.hpp"
#include "hivegate/policy/loader.hpp"
#include "hivegate/queue/queue_manager.hpp"

namespace hivegate {

struct ListenConfig {
  std::string bind = "127.0.0.1";
  // 0 disables a data listener; the admin port 0 binds an ephemeral port.
  std::uint16_t egress_port = 0;
  std::uint16_t ingress_port = 0;
  std::uint16_t admin_port = 0;
  // The co-located application: source of egress traffic, destination of
  // ingress traffic.
  std::string local_name;
  // Source name for ingress requests that do not name themselves.
  std::string remote_name = "remote";
};

struct Manifest {
  std::filesystem::path path;
  std::filesystem::path base_dir;
  ListenConfig listen;
  std::map<std::string, net::Address> upstreams;
  std::vector<QueueRule> queues;
  std::vector<PolicyBinding> bindings;
  CallbackConfig callbacks;
  Millis shutdown_grace{5000};
  std::size_t max_payload = FramingLimits{}.max_payload;
  std::vector<Diagnostic> warnings;

  bool has_upstream(std::string_view name) const { return upstreams.count(std::string(name)) > 0; }
};

namespace detail {

inline bool valid_endpoint_name(std::string_view n) {
  if (n.empty()) return false;
  for (char c : n) {
    const auto u = static_cast<unsigned char>(c);
    if (u <= 0x20 || u == 0x7f || c == '/' || c == '*' || c == '?' || c == ':') return false;
  }
  return n.find("->") == std::string_view::npos;
}

// The destination of a "src->dst/request" pattern when it is a literal name.
inline std::optional<std::string> literal_request_destination(std::string_view pattern) {
  constexpr std::string_view suffix = "/request";
  if (pattern.size() < suffix.size() || pattern.substr(pattern.size() - suffix.size()) != suffix)
    return std::nullopt;
  auto body = pattern.substr(0, pattern.size() - suffix.size());
  auto arrow = body.find("->");
  if (arrow == std::string_view::npos) return std::nullopt;
  auto dst = body.substr(arrow + 2);
  if (dst.empty() || dst.find_first_of("*?") != std::string_view::npos) return std::nullopt;
  return std::string(dst);
}

}  // namespace detail

// Validates a manifest document, collecting every problem before failing.
inline Manifest parse_manifest(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
  using nlohmann::json;
  Manifest m;
  m.base_dir = base_dir;
  std::vector<Diagnostic> diags;
  auto error = [&](std::string where, std::string msg) {
    diags.push_back({Diagnostic::Severity::Error, std::move(where), std::move(msg)});
  };
  if (!doc.is_object()) {
    error("", "manifest must be an object");
    throw ConfigError(diags);
  }

  auto port = [&](const json& obj, const char* key, std::uint16_t& out) {
    if (!obj.contains(key)) return;
    const auto& v = obj[key];
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0 || v.get<std::int64_t>() > 65535)
      error(std::string("listen.") + key, "must be a port number");
    else
      out = static_cast<std::uint16_t>(v.get<std::int64_t>());
  };
  if (doc.contains("listen")) {
    const auto& l = doc["listen"];
    if (!l.is_object()) {
      error("listen", "must be an object");
    } else {
      port(l, "egress_port", m.listen.egress_port);
      port(l, "ingress_port", m.listen.ingress_port);
      port(l, "admin_port", m.listen.admin_port);
      m.listen.bind = l.value("bind", m.listen.bind);
      m.listen.local_name = l.value("local_name", "");
      m.listen.remote_name = l.value("remote_name", m.listen.remote_name);
    }
  } else {
    error("listen", "missing");
  }

  if (!doc.contains("upstreams") || !doc["upstreams"].is_object() || doc["upstreams"].empty()) {
    error("upstreams", "must map at least one logical name to host:port");
  } else {
    for (const auto& [name, v] : doc["upstreams"].items()) {
      const std::string w = "upstreams." + name;
      if (!detail::valid_endpoint_name(name)) error(w, "bad logical name");
      auto addr = v.is_string() ? net::parse_address(v.get<std::string>()) : std::nullopt;
      if (!addr) error(w, "must be \"host:port\"");
      else m.upstreams[name] = *addr;
    }
  }

  const auto& lc = m.listen;
  if (lc.egress_port == 0 && lc.ingress_port == 0) error("listen", "needs an egress_port or an ingress_port");
  if (lc.egress_port != 0 || lc.ingress_port != 0) {
    if (!detail::valid_endpoint_name(lc.local_name)) error("listen.local_name", "must name the local application");
  }
  if (lc.ingress_port != 0 && !m.upstreams.empty() && !m.has_upstream(lc.local_name))
    error("listen.local_name", "ingress needs an upstream entry for '" + lc.local_name + "'");
  if (!detail::valid_endpoint_name(lc.remote_name)) error("listen.remote_name", "bad logical name");
  if (lc.egress_port != 0 && lc.egress_port == lc.ingress_port) error("listen", "egress and ingress ports collide");

  if (doc.contains("queues")) {
    if (!doc["queues"].is_array()) error("queues", "must be a list");
    else
      for (std::size_t i = 0; i < doc["queues"].size(); ++i) {
        const auto& q = doc["queues"][i];
        const std::string w = "queues[" + std::to_string(i) + "]";
        if (!q.is_object()) {
          error(w, "must be an object");
          continue;
        }
        QueueRule r;
        r.route_pattern = q.value("route_pattern", "");
        if (!valid_route_pattern(r.route_pattern)) error(w, "bad route pattern '" + r.route_pattern + "'");
        auto number = [&](const char* key) -> std::optional<double> {
          if (!q.contains(key)) return std::nullopt;
          if (!q[key].is_number() || q[key].get<double>() < 0) {
            error(w + "." + key, "must be a non-negative number");
            return std::nullopt;
          }
          return q[key].get<double>();
        };
        r.config.rate_kb_per_s = number("rate_kb_per_s");
        r.config.capacity_bytes = number("capacity_bytes");
        if (auto n = number("max_length")) {
          if (*n < 1) error(w + ".max_length", "must be at least 1");
          else r.config.max_length = static_cast<std::size_t>(*n);
        }
        if (auto n = number("bw_window_ms")) {
          if (*n < 1) error(w + ".bw_window_ms", "must be at least 1");
          else r.config.bw_window = Millis{static_cast<std::int64_t>(*n)};
        }
        m.queues.push_back(std::move(r));
      }
  }

  auto loaded = load_bindings(doc.value("policies", json()), base_dir);
  for (auto& d : loaded.diagnostics) {
    if (d.severity == Diagnostic::Severity::Warning) m.warnings.push_back(d);
    diags.push_back(std::move(d));
  }
  for (std::size_t i = 0; i < loaded.bindings.size(); ++i) {
    const auto& b = loaded.bindings[i];
    const std::string w = "policies[" + std::to_string(i) + "]";
    if (auto dst = detail::literal_request_destination(b.route_pattern); dst && !m.upstreams.empty() &&
                                                                         !m.has_upstream(*dst))
      error(w, "unknown upstream '" + *dst + "' in route pattern");
    if (auto edge = b.params.find("edge_name"); edge != b.params.end() && !m.upstreams.empty() &&
                                                !m.has_upstream(edge->second))
      error(w, "unknown upstream '" + edge->second + "' in edge_name");
    for (const auto& e : b.notify_endpoints)
      if (!parse_endpoint(e)) error(w, "notify endpoint '" + e + "' is not an http:// URL");
    if (b.transform_endpoint && !parse_endpoint(*b.transform_endpoint))
      error(w, "transform endpoint '" + *b.transform_endpoint + "' is not an http:// URL");
  }
  m.bindings = std::move(loaded.bindings);

  if (doc.contains("callbacks")) {
    const auto& c = doc["callbacks"];
    auto ms = [&](const char* key, Millis& out) {
      if (!c.contains(key)) return;
      if (!c[key].is_number_integer() || c[key].get<std::int64_t>() <= 0) error(std::string("callbacks.") + key, "must be a positive integer");
      else out = Millis{c[key].get<std::int64_t>()};
    };
    ms("transform_timeout_ms", m.callbacks.transform_timeout);
    ms("notify_timeout_ms", m.callbacks.notify_timeout);
    m.callbacks.notify_retries = c.value("notify_retries", 0);
    m.callbacks.transform_retries = c.value("transform_retries", 0);
  }
  if (doc.contains("shutdown_grace_ms")) {
    const auto& g = doc["shutdown_grace_ms"];
    if (!g.is_number_integer() || g.get<std::int64_t>() < 0) error("shutdown_grace_ms", "must be a non-negative integer");
    else m.shutdown_grace = Millis{g.get<std::int64_t>()};
  }
  if (doc.contains("max_payload_bytes")) {
    const auto& g = doc["max_payload_bytes"];
    if (!g.is_number_integer() || g.get<std::int64_t>() <= 0) error("max_payload_bytes", "must be a positive integer");
    else m.max_payload = static_cast<std::size_t>(g.get<std::int64_t>());
  }

  for (const auto& d : diags)
    if (d.severity == Diagnostic::Severity::Error) throw ConfigError(diags);
  return m;
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  auto text = read_text_file(path);
  if (!text) throw ConfigError({{Diagnostic::Severity::Error, path.string(), "cannot read file"}});
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(*text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError({{Diagnostic::Severity::Error, path.string(), e.what()}});
  }
  auto m = parse_manifest(doc, path.parent_path());
  m.path = path;
  return m;
}

}  // namespace hivegate
