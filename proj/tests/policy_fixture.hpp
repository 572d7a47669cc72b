#pragma once

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "hivegate/policies/reference.hpp"
#include "hivegate/policy/engine.hpp"
#include "hivegate/policy/lua_program.hpp"
#include "test_support.hpp"

namespace hivegate::test {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::shared_ptr<Program> lua_policy(const std::string& name) {
  const std::string path = std::string(HIVEGATE_SOURCE_DIR) + "/policies/" + name + ".lua";
  return LuaProgram::compile(read_file(path), name + ".lua");
}

inline std::shared_ptr<Program> native(NativeProgram::Body body, ProgramCapabilities caps = {true, true}) {
  return std::make_shared<NativeProgram>("test", caps, std::move(body));
}

struct RecordingSink : MessageSink {
  std::mutex mu;
  std::vector<MessageId> dropped;
  void on_dropped(const MessagePtr& m) override {
    std::lock_guard lk(mu);
    dropped.push_back(m->id());
  }
};

// Engine over a hand-driven clock; messages are admitted through the data path.
class PolicyFixture : public ::testing::Test {
 protected:
  PolicyFixture() : qm(clock), engine(qm) {
    sink = std::make_shared<RecordingSink>();
    qm.set_fallback_sink(sink);
  }

  void bind(std::shared_ptr<Program> program, std::string pattern = "*",
            Trigger trigger = Trigger::OnRequest, Params params = {}) {
    PolicyBinding b;
    b.route_pattern = std::move(pattern);
    b.trigger = trigger;
    b.program = std::move(program);
    b.params = std::move(params);
    b.transform_endpoint = "http://transformer/t";
    b.notify_endpoints = {"http://source/notify"};
    engine.set_bindings({b});
  }

  MessagePtr make(const Route& r, std::size_t bytes = 10, Headers extra = {}) {
    return make_message(qm.next_id(), r, bytes, std::move(extra));
  }

  // Enqueues without running any program.
  MessagePtr seed(const Route& r, std::size_t bytes = 10, Headers extra = {}) {
    auto m = make(r, bytes, std::move(extra));
    auto q = qm.queue_for(r);
    auto lk = q->lock();
    q->enqueue(m, clock.now());
    return m;
  }

  AdmitResult admit(const MessagePtr& m) { return engine.admit(m); }

  std::vector<MessageId> contents(const Route& r) {
    auto q = qm.queue_for(r);
    auto lk = q->lock();
    return ids(q->items());
  }

  ManualClock clock;
  QueueManager qm;
  PolicyEngine engine;
  std::shared_ptr<RecordingSink> sink;
  const Route up{"camera", "cloud", Direction::Request};
  const Route side{"camera", "edge", Direction::Request};
  const Route back{"cloud", "camera", Direction::Response};
};

}  // namespace hivegate::test
