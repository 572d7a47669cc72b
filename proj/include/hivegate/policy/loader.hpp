#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "hivegate/policies/reference.hpp"
#include "hivegate/policy/binding.hpp"
#include "hivegate/policy/lua_program.hpp"

namespace hivegate {

inline std::optional<std::string> read_text_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Scalar JSON values become param strings; numbers keep an integral form when
// they have one.
inline std::optional<std::string> param_text(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  if (v.is_number_unsigned()) return std::to_string(v.get<std::uint64_t>());
  if (v.is_number_float()) return lua_number_string(v.get<double>());
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  return std::nullopt;
}

struct LoadedBindings {
  std::vector<PolicyBinding> bindings;
  std::vector<Diagnostic> diagnostics;

  bool ok() const {
    for (const auto& d : diagnostics)
      if (d.severity == Diagnostic::Severity::Error) return false;
    return true;
  }
};

// Reads a "policies" array. Every problem is collected rather than stopping at
// the first; program files are compiled once per path.
inline LoadedBindings load_bindings(const nlohmann::json& policies, const std::filesystem::path& base_dir,
                                    const std::string& where = "policies") {
  LoadedBindings out;
  auto error = [&](const std::string& w, std::string msg) {
    out.diagnostics.push_back({Diagnostic::Severity::Error, w, std::move(msg)});
  };
  if (policies.is_null()) return out;
  if (!policies.is_array()) {
    error(where, "must be a list");
    return out;
  }
  static const NativeRegistry registry = policies::builtin_registry();
  std::map<std::string, std::shared_ptr<Program>> compiled;
  std::map<std::pair<std::string, Trigger>, std::size_t> seen;

  for (std::size_t i = 0; i < policies.size(); ++i) {
    const auto& p = policies[i];
    const std::string w = where + "[" + std::to_string(i) + "]";
    if (!p.is_object()) {
      error(w, "must be an object");
      continue;
    }
    PolicyBinding b;
    b.route_pattern = p.value("route_pattern", "");
    const std::string trigger = p.value("trigger", "on_request");
    if (auto t = parse_trigger(trigger)) b.trigger = *t;
    else error(w, "unknown trigger '" + trigger + "'");

    const bool has_builtin = p.contains("builtin"), has_path = p.contains("program_path");
    if (has_builtin == has_path) {
      error(w, "needs exactly one of builtin or program_path");
    } else if (has_builtin) {
      const auto name = p["builtin"].is_string() ? p["builtin"].get<std::string>() : std::string();
      b.program = registry.find(name);
      if (!b.program) error(w, "unknown builtin '" + name + "'");
    } else {
      const auto rel = p["program_path"].is_string() ? p["program_path"].get<std::string>() : std::string();
      const auto path = (base_dir / rel).lexically_normal();
      auto it = compiled.find(path.string());
      if (it != compiled.end()) {
        b.program = it->second;
      } else if (auto src = read_text_file(path)) {
        try {
          b.program = LuaProgram::compile(*src, path.filename().string());
          compiled[path.string()] = b.program;
        } catch (const ProgramError& e) {
          error(w, e.what());
        }
      } else {
        error(w, "program file not found: " + path.string());
      }
    }
    if (p.contains("notify_endpoints")) {
      if (!p["notify_endpoints"].is_array()) error(w, "notify_endpoints must be a list");
      else
        for (const auto& e : p["notify_endpoints"])
          if (e.is_string()) b.notify_endpoints.push_back(e.get<std::string>());
          else error(w, "notify endpoint must be a string");
    }
    if (p.contains("transform_endpoint")) {
      if (p["transform_endpoint"].is_string()) b.transform_endpoint = p["transform_endpoint"].get<std::string>();
      else error(w, "transform_endpoint must be a string");
    }
    if (p.contains("params")) {
      if (!p["params"].is_object()) error(w, "params must be an object");
      else
        for (const auto& [k, v] : p["params"].items()) {
          if (auto s = param_text(v)) b.params[k] = *s;
          else error(w, "param '" + k + "' must be a scalar");
        }
    }
    if (b.program)
      for (auto& d : check_binding(b, w)) out.diagnostics.push_back(std::move(d));
    else if (!valid_route_pattern(b.route_pattern))
      error(w, "bad route pattern '" + b.route_pattern + "'");

    auto key = std::make_pair(b.route_pattern, b.trigger);
    if (auto s = seen.find(key); s != seen.end())
      out.diagnostics.push_back({Diagnostic::Severity::Warning, w,
                                 "replaces " + where + "[" + std::to_string(s->second) + "] for " +
                                     b.route_pattern + " " + std::string(to_string(b.trigger))});
    seen[key] = i;
    out.bindings.push_back(std::move(b));
  }
  return out;
}

}  // namespace hivegate
