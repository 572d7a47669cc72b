#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "hivegate/policy/binding.hpp"
#include "hivegate/policy/context.hpp"

namespace hivegate {

// A policy implemented in C++ against the same host interface scripts use.
class NativeProgram final : public Program {
 public:
  using Body = std::function<void(ExecutionContext&, Trigger)>;

  NativeProgram(std::string name, ProgramCapabilities caps, Body body)
      : name_(std::move(name)), caps_(caps), body_(std::move(body)) {}

  std::string describe() const override { return "builtin:" + name_; }
  ProgramCapabilities capabilities() const override { return caps_; }
  void run(ExecutionContext& ctx, Trigger trigger) override { body_(ctx, trigger); }

 private:
  std::string name_;
  ProgramCapabilities caps_;
  Body body_;
};

class NativeRegistry {
 public:
  void add(const std::string& name, ProgramCapabilities caps, NativeProgram::Body body) {
    entries_[name] = std::make_shared<NativeProgram>(name, caps, std::move(body));
  }

  std::shared_ptr<Program> find(std::string_view name) const {
    auto it = entries_.find(std::string(name));
    return it == entries_.end() ? nullptr : it->second;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
  }

 private:
  std::map<std::string, std::shared_ptr<Program>> entries_;
};

}  // namespace hivegate
