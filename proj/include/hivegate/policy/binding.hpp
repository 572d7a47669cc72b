#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hivegate/core/errors.hpp"
#include "hivegate/core/glob.hpp"

namespace hivegate {

enum class Trigger { OnRequest, OnResponse };

inline std::string_view to_string(Trigger t) {
  return t == Trigger::OnRequest ? "on_request" : "on_response";
}

inline std::optional<Trigger> parse_trigger(std::string_view s) {
  if (s == "on_request" || s == "OnRequest" || s == "request") return Trigger::OnRequest;
  if (s == "on_response" || s == "OnResponse" || s == "response") return Trigger::OnResponse;
  return std::nullopt;
}

class ExecutionContext;

// Host capabilities a program may call; checked against the binding at load.
struct ProgramCapabilities {
  bool transform = false;
  bool notify = false;
};

class Program {
 public:
  virtual ~Program() = default;
  virtual std::string describe() const = 0;
  virtual ProgramCapabilities capabilities() const = 0;
  // Throws ProgramError or BudgetExceeded on failure.
  virtual void run(ExecutionContext& ctx, Trigger trigger) = 0;
};

using Params = std::map<std::string, std::string, std::less<>>;

struct PolicyBinding {
  std::string route_pattern;
  Trigger trigger = Trigger::OnRequest;
  std::shared_ptr<Program> program;
  std::vector<std::string> notify_endpoints;
  std::optional<std::string> transform_endpoint;
  Params params;

  bool matches(std::string_view route_key, Trigger t) const {
    return t == trigger && glob_match(route_pattern, route_key);
  }
};

inline std::vector<Diagnostic> check_binding(const PolicyBinding& b, const std::string& where) {
  std::vector<Diagnostic> out;
  auto error = [&](std::string msg) {
    out.push_back({Diagnostic::Severity::Error, where, std::move(msg)});
  };
  if (!valid_route_pattern(b.route_pattern)) error("bad route pattern '" + b.route_pattern + "'");
  if (!b.program) {
    error("no program");
    return out;
  }
  auto caps = b.program->capabilities();
  if (caps.transform && !b.transform_endpoint)
    error(b.program->describe() + " calls transform but the binding has no transform_endpoint");
  if (caps.notify && b.notify_endpoints.empty())
    error(b.program->describe() + " calls notify but the binding has no notify_endpoints");
  return out;
}

}  // namespace hivegate
