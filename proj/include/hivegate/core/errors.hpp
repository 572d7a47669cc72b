#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace hivegate {

class FramingError : public std::runtime_error {
 public:
  enum class Kind { Malformed, BodyTooLarge };

  FramingError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class QueueFullError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised by host calls on programmer faults (stale handles, bad byte ranges,
// unknown destinations). The engine converts it into a fail-open report.
class ProgramError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class BudgetExceeded : public ProgramError {
 public:
  using ProgramError::ProgramError;
};

struct Diagnostic {
  enum class Severity { Warning, Error };
  Severity severity = Severity::Error;
  std::string where;
  std::string message;
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<Diagnostic> diagnostics)
      : std::runtime_error(summarize(diagnostics)), diagnostics_(std::move(diagnostics)) {}

  const std::vector<Diagnostic>& diagnostics() const noexcept { return diagnostics_; }

 private:
  static std::string summarize(const std::vector<Diagnostic>& diags) {
    std::string out = "invalid configuration";
    for (const auto& d : diags) {
      if (d.severity != Diagnostic::Severity::Error) continue;
      out += "\n  ";
      if (!d.where.empty()) out += d.where + ": ";
      out += d.message;
    }
    return out;
  }

  std::vector<Diagnostic> diagnostics_;
};

class ScenarioError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace hivegate
