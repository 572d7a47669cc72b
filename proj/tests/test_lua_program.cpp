#include <filesystem>
#include <regex>

#include "policy_fixture.hpp"

using namespace hivegate;
using namespace hivegate::test;

namespace {

std::shared_ptr<Program> lua(const std::string& src) { return LuaProgram::compile(src, "test.lua"); }

}  // namespace

class LuaTest : public PolicyFixture {
 protected:
  // Runs `body` as on_request for a fresh message on `up`; returns the report.
  ExecutionReport run(const std::string& body, Params params = {}) {
    bind(lua("function on_request(h)\n" + body + "\nend"), "*", Trigger::OnRequest, std::move(params));
    auto r = admit(make(up));
    return *r.report;
  }

  // Runs a script that stores its observations in the global `out` via
  // x-out header replacement on the trigger; returns that header.
  std::string eval(const std::string& expr, std::size_t trigger_bytes = 10) {
    bind(lua("function on_request(h)\n h:header():replace('x-out', tostring(" + expr + "))\nend"));
    auto m = make(up, trigger_bytes);
    auto r = admit(m);
    EXPECT_EQ(r.report->outcome, ExecutionOutcome::Completed) << r.report->error;
    auto v = m->headers().get("x-out");
    return v ? std::string(*v) : "<unset>";
  }
};

TEST_F(LuaTest, CompileRejectsSyntaxErrors) {
  EXPECT_THROW(lua("function on_request(h"), ProgramError);
  EXPECT_THROW(lua("x = 1"), ProgramError) << "no entry point";
  EXPECT_THROW(lua("error('at load')\nfunction on_request() end"), ProgramError);
}

TEST_F(LuaTest, EntryPointAliases) {
  for (const char* src : {"function on_request(h) h:header():replace('x-e', 'a') end",
                          "function envoy_on_request(h) h:header():replace('x-e', 'a') end"}) {
    bind(lua(src));
    auto m = make(up);
    admit(m);
    EXPECT_EQ(*m->headers().get("x-e"), "a") << src;
  }
  // A single response entry runs for a request binding too.
  bind(lua("function on_response(h) h:header():replace('x-e', 'r') end"));
  auto m = make(up);
  admit(m);
  EXPECT_EQ(*m->headers().get("x-e"), "r");
}

TEST_F(LuaTest, SandboxHidesDangerousLibraries) {
  for (const char* name : {"io", "os", "package", "debug", "dofile", "loadfile", "load", "require",
                           "collectgarbage"})
    EXPECT_EQ(eval(std::string("type(") + name + ")"), "nil") << name;
  for (const char* name : {"string", "table", "math", "utf8", "coroutine", "pairs", "pcall"})
    EXPECT_NE(eval(std::string("type(") + name + ")"), "nil") << name;
  EXPECT_EQ(eval("getmetatable(h)"), "false");
}

TEST_F(LuaTest, MessageInspection) {
  EXPECT_EQ(eval("h:size()", 123), "123");
  EXPECT_EQ(eval("h:age()"), "0");
  EXPECT_EQ(eval("h:getAge()"), "0");
  EXPECT_EQ(eval("h:dst()"), "cloud");
  EXPECT_EQ(eval("h:getHeader('path') == h:header():get(':path')"), "true");
  EXPECT_EQ(eval("h:getHeader(':method')"), "POST");
  EXPECT_EQ(eval("h:getHeader('nope')"), "nil");
  EXPECT_EQ(eval("h:bytes(0, 3)", 5), "xxx");
  EXPECT_EQ(eval("h:json():valid()"), "false");
  EXPECT_EQ(eval("h:TCPMetrics('rtt')"), "nil");
  EXPECT_EQ(eval("h:tcpMetrics()"), "nil");
  EXPECT_EQ(eval("type(h:id())"), "number");
  EXPECT_EQ(eval("h:message():size()", 7), "7");
  EXPECT_EQ(eval("type(h:epoch())"), "number");
}

TEST_F(LuaTest, JsonAccess) {
  bind(lua(R"(function on_request(h)
    local j = h:json()
    h:header():replace('x-t', j:getString('event_type'))
    h:header():replace('x-n', j:getNum('meta.n') + 1)
    h:header():replace('x-missing', tostring(j:getNum('meta.none')))
  end)"));
  auto m = std::make_shared<Message>(qm.next_id(), up,
                                     request_frame("/e", R"({"event_type":"click","meta":{"n":41}})"));
  admit(m);
  EXPECT_EQ(*m->headers().get("x-t"), "click");
  EXPECT_EQ(*m->headers().get("x-n"), "42.0");
  EXPECT_EQ(*m->headers().get("x-missing"), "nil");
}

TEST_F(LuaTest, QueueInspection) {
  seed(up, 4);
  seed(up, 6);
  clock.advance(Millis{1});
  EXPECT_EQ(eval("queue:length()"), "3");
  EXPECT_EQ(eval("h:queue():length()"), "4");
  EXPECT_EQ(eval("queue:route()"), up.key());
  EXPECT_EQ(eval("select(2, queue:avgLatency())"), "false");
  qm.record_latency(up, 80);
  EXPECT_EQ(eval("queue:avgLatency()"), "80.0");
  EXPECT_EQ(eval("queue:observedBW()"), "0.0");
  EXPECT_EQ(eval("queue:getBW()"), "0.0");
  EXPECT_EQ(eval("queue:TCPMetrics('cwnd')"), "nil");
  EXPECT_EQ(eval("queue:tcpMetrics()"), "nil");
}

TEST_F(LuaTest, IterationOverQueuesAndMessages) {
  qm.queue_for(side);
  seed(up, 4);
  seed(side, 6);
  bind(lua(R"(function on_request(h)
    local parts = {}
    for q in h:Queues():getQueue() do
      local sizes = {}
      for m in q:messages() do sizes[#sizes + 1] = m:size() end
      for m in q:getItem() do end
      parts[#parts + 1] = q:route() .. '=' .. table.concat(sizes, ',')
    end
    for q in h:queues():list() do end
    h:header():replace('x-out', table.concat(parts, ';'))
  end)"));
  auto m = make(up, 9);
  admit(m);
  EXPECT_EQ(*m->headers().get("x-out"), up.key() + "=4,9;" + side.key() + "=6");
}

TEST_F(LuaTest, Mutations) {
  auto a = seed(up), b = seed(up);
  auto report = run(R"(
    local items = {}
    for m in queue:messages() do items[#items + 1] = m end
    assert(items[2]:drop() == 2)
    assert(h:pushFront() == 2)
    local c = items[1]:copy()
    assert(items[1]:insert(c) == 3)
    assert(h:moveToBack() == 3)
    assert(h:pushBack() == 3)
    h:moveToFront()
  )");
  ASSERT_EQ(report.outcome, ExecutionOutcome::Completed) << report.error;
  std::vector<MutationOp> ops;
  for (auto& m : report.mutations) ops.push_back(m.op);
  EXPECT_EQ(ops, (std::vector<MutationOp>{MutationOp::Drop, MutationOp::MoveToFront, MutationOp::Insert,
                                          MutationOp::MoveToBack, MutationOp::MoveToBack,
                                          MutationOp::MoveToFront}));
  EXPECT_EQ(b->state(), MessageState::Dropped);
  auto got = contents(up);
  ASSERT_EQ(got.size(), 3u);
  EXPECT_EQ(got[1], a->id());
}

TEST_F(LuaTest, TransformAndNotify) {
  auto report = run(R"(
    assert(h:transform('180p'))
    h:notify(12.5)
    h:notify(0)
  )");
  ASSERT_EQ(report.outcome, ExecutionOutcome::Completed) << report.error;
  ASSERT_EQ(report.mutations.size(), 3u);
  EXPECT_EQ(report.mutations[0].op, MutationOp::Transform);
  EXPECT_EQ(report.mutations[0].detail, "180p");
  EXPECT_EQ(report.mutations[1].detail, "12.5");
  EXPECT_EQ(report.mutations[2].detail, "0");
  EXPECT_EQ(report.callbacks_issued, 3u);
}

TEST_F(LuaTest, RedirectedItemIsImmutableForTheRestOfTheRun) {
  qm.queue_for(side);
  auto report = run(R"(
    assert(h:redirect('edge'))
    assert(h:dst() == 'edge')
    assert(not h:transform('180p'))
    assert(h:drop() == 1)
  )");
  ASSERT_EQ(report.outcome, ExecutionOutcome::Completed) << report.error;
  ASSERT_EQ(report.mutations.size(), 1u);
  EXPECT_EQ(report.mutations[0].op, MutationOp::Redirect);
  EXPECT_EQ(contents(side).size(), 1u);
}

TEST_F(LuaTest, ParamsAreVisible) {
  auto report = run("assert(params.required_bw == '1000')", {{"required_bw", "1000"}});
  EXPECT_EQ(report.outcome, ExecutionOutcome::Completed) << report.error;
  report = run("assert(params.required_bw == nil)");
  EXPECT_EQ(report.outcome, ExecutionOutcome::Completed) << report.error;
}

TEST_F(LuaTest, ErrorsRollBack) {
  auto a = seed(up);
  auto report = run(R"(
    for m in queue:messages() do m:drop() end
    error('late failure')
  )");
  EXPECT_EQ(report.outcome, ExecutionOutcome::ProgramError);
  EXPECT_NE(report.error.find("late failure"), std::string::npos);
  EXPECT_EQ(contents(up).size(), 2u);
  EXPECT_EQ(a->state(), MessageState::Queued);
}

TEST_F(LuaTest, HostErrorsSurfaceAsProgramErrors) {
  EXPECT_EQ(run("h:bytes(0, 99999)").outcome, ExecutionOutcome::ProgramError);
  EXPECT_EQ(run("h:header():replace(':method', 'PUT')").outcome, ExecutionOutcome::ProgramError);
  EXPECT_EQ(run("queue.length(h)").outcome, ExecutionOutcome::ProgramError);
  EXPECT_EQ(run("h.size(42)").outcome, ExecutionOutcome::ProgramError);
  EXPECT_EQ(run("h:header().get(42, 'x')").outcome, ExecutionOutcome::ProgramError);
}

TEST_F(LuaTest, InfiniteLoopHitsBudget) {
  auto report = run("while true do end");
  EXPECT_EQ(report.outcome, ExecutionOutcome::BudgetExceeded);
  EXPECT_EQ(contents(up).size(), 1u) << "the message still goes through";
}

TEST_F(LuaTest, BudgetCannotBeCaughtByPcall) {
  auto report = run(R"(
    while true do pcall(function() while true do end end) end
  )");
  EXPECT_EQ(report.outcome, ExecutionOutcome::BudgetExceeded);
}

TEST_F(LuaTest, HostCallLoopHitsBudget) {
  auto report = run("while true do queue:length() end");
  EXPECT_EQ(report.outcome, ExecutionOutcome::BudgetExceeded);
  EXPECT_LE(report.steps_used, kDefaultStepBudget + 2);
}

TEST_F(LuaTest, MemoryIsCapped) {
  auto report = run(R"(
    local t = {}
    for i = 1, 1e9 do t[i] = string.rep('x', 1024) .. i end
  )");
  EXPECT_NE(report.outcome, ExecutionOutcome::Completed);
  // The state is still usable afterwards.
  EXPECT_EQ(run("local x = 1").outcome, ExecutionOutcome::Completed);
}

TEST_F(LuaTest, HandlesDoNotOutliveAnExecution) {
  bind(lua(R"(
    local saved
    function on_request(h)
      if saved then saved:size() end
      saved = h
    end)"));
  EXPECT_EQ(admit(make(up)).report->outcome, ExecutionOutcome::Completed);
  auto r = admit(make(up));
  EXPECT_EQ(r.report->outcome, ExecutionOutcome::ProgramError);
  EXPECT_NE(r.report->error.find("stale"), std::string::npos);
}

TEST_F(LuaTest, CapabilityScanIgnoresComments) {
  auto p = lua("-- h:transform('x')\nfunction on_request(h) h:notify(1) end");
  EXPECT_FALSE(p->capabilities().transform);
  EXPECT_TRUE(p->capabilities().notify);
}

TEST(LuaNumberString, MatchesTostring) {
  EXPECT_EQ(lua_number_string(0), "0.0");
  EXPECT_EQ(lua_number_string(12.5), "12.5");
  EXPECT_EQ(lua_number_string(1e20), "1e+20");
  EXPECT_EQ(lua_number_string(102400), "102400.0");
  EXPECT_EQ(lua_number_string(1.0 / 3), "0.33333333333333");
}

TEST(ReferencePolicies, ScriptsCompile) {
  for (const char* name : {"traffic_monitor", "load_shed", "fifo_lifo", "chunk_rewrite",
                           "deadline_downsample", "empty", "iterate"})
    EXPECT_NO_THROW(lua_policy(name)) << name;
}

// Every operation the scripting surface registers is called by at least one
// program in this file or in the shipped policies.
TEST(ApiConformance, EveryHostOperationIsExercised) {
  std::string fixtures = read_file(std::string(HIVEGATE_SOURCE_DIR) + "/tests/test_lua_program.cpp");
  for (const auto& e : std::filesystem::directory_iterator(std::string(HIVEGATE_SOURCE_DIR) + "/policies"))
    if (e.path().extension() == ".lua") fixtures += read_file(e.path().string());
  std::size_t ops = 0;
  for (const auto& [type, methods] : lua_detail::api_types())
    for (const auto& m : methods) {
      ++ops;
      const std::regex call(std::string("[:.]") + m.name + R"(\s*\()");
      EXPECT_TRUE(std::regex_search(fixtures, call)) << type << ":" << m.name << " is never called";
    }
  EXPECT_GE(ops, 40u);
}
