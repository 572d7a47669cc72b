#pragma once

#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <mutex>
#include <regex>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

// The interpreter is compiled as C++ (see third_party/lua), so its headers are
// included without C linkage and Lua errors unwind through C++ frames.
#include "lauxlib.h"
#include "lua.h"
#include "lualib.h"

#include "hivegate/policy/binding.hpp"
#include "hivegate/policy/context.hpp"

namespace hivegate {

inline constexpr int kLuaInstructionsPerStep = 100;
inline constexpr std::size_t kLuaMemoryLimit = 64u << 20;

// Formats a number the way Lua's tostring does, so native and scripted
// policies produce identical notify strings.
inline std::string lua_number_string(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return v != v ? "nan" : "-nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.14g", v);
  std::string s = buf;
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

namespace lua_detail {

struct Allocator {
  std::size_t used = 0;
  std::size_t limit = kLuaMemoryLimit;
};

inline void* allocate(void* ud, void* ptr, std::size_t osize, std::size_t nsize) {
  auto* a = static_cast<Allocator*>(ud);
  const std::size_t old = ptr ? osize : 0;
  if (nsize == 0) {
    a->used -= old;
    std::free(ptr);
    return nullptr;
  }
  if (nsize > old && a->used + (nsize - old) > a->limit) return nullptr;
  void* p = std::realloc(ptr, nsize);
  if (p) a->used = a->used - old + nsize;
  return p;
}

// Per-execution state reachable from the interpreter's extra space.
struct Run {
  ExecutionContext* ctx = nullptr;
  std::vector<MessageHandle> messages;
  std::vector<QueueHandle> queues;
  bool budget_hit = false;
  std::string budget_message;
};

struct Ref {
  std::uint32_t slot;
  std::uint64_t generation;
};

constexpr const char* kHost = "hivegate.host";
constexpr const char* kQueue = "hivegate.queue";
constexpr const char* kQueues = "hivegate.queues";
constexpr const char* kMessage = "hivegate.message";
constexpr const char* kHeader = "hivegate.header";
constexpr const char* kJson = "hivegate.json";

inline Run*& run_slot(lua_State* L) { return *static_cast<Run**>(lua_getextraspace(L)); }

inline Run& run_of(lua_State* L) {
  Run* r = run_slot(L);
  if (!r || !r->ctx) throw ProgramError("host object used outside an execution");
  return *r;
}

inline void push_ref(lua_State* L, const char* type, std::uint32_t slot, std::uint64_t gen) {
  auto* r = static_cast<Ref*>(lua_newuserdatauv(L, sizeof(Ref), 0));
  r->slot = slot;
  r->generation = gen;
  luaL_setmetatable(L, type);
}

inline Ref& ref_arg(lua_State* L, int idx, const char* type) {
  return *static_cast<Ref*>(luaL_checkudata(L, idx, type));
}

inline MessageHandle& message_of(lua_State* L, Run& run, int idx, const char* type) {
  auto& r = ref_arg(L, idx, type);
  if (r.generation != run.ctx->generation() || r.slot >= run.messages.size())
    throw ProgramError("stale message handle used outside its execution");
  return run.messages[r.slot];
}

// Host objects, messages, headers and JSON views all resolve to a message.
inline MessageHandle& any_message(lua_State* L, Run& run, int idx) {
  for (const char* type : {kMessage, kHost, kHeader, kJson}) {
    if (luaL_testudata(L, idx, type)) return message_of(L, run, idx, type);
  }
  luaL_typeerror(L, idx, "message");
  throw ProgramError("unreachable");
}

inline QueueHandle& queue_of(lua_State* L, Run& run, int idx) {
  auto& r = ref_arg(L, idx, kQueue);
  if (r.generation != run.ctx->generation() || r.slot >= run.queues.size())
    throw ProgramError("stale queue handle used outside its execution");
  return run.queues[r.slot];
}

inline std::uint32_t add_message(Run& run, MessageHandle h) {
  run.messages.push_back(std::move(h));
  return static_cast<std::uint32_t>(run.messages.size() - 1);
}

inline void push_message(lua_State* L, Run& run, MessageHandle h) {
  auto gen = run.ctx->generation();
  push_ref(L, kMessage, add_message(run, std::move(h)), gen);
}

inline void push_optional(lua_State* L, const std::optional<std::string>& s) {
  if (s) lua_pushlstring(L, s->data(), s->size());
  else lua_pushnil(L);
}

inline void push_optional(lua_State* L, const std::optional<double>& d) {
  if (d) lua_pushnumber(L, *d);
  else lua_pushnil(L);
}

inline void count_hook(lua_State* L, lua_Debug*);

// After the budget is gone every instruction raises, so a script that catches
// the error with pcall still unwinds on its next instruction.
inline void trip_budget(lua_State* L, Run& run, const char* what) {
  run.budget_hit = true;
  run.budget_message = what;
  lua_sethook(L, count_hook, LUA_MASKCOUNT, 1);
}

using HostFn = int (*)(lua_State*, Run&);

// Converts C++ failures inside host calls into Lua errors; a budget failure is
// remembered so the engine can classify it after the interpreter unwinds.
template <HostFn F>
int host(lua_State* L) {
  std::string error;
  {
    Run* run = run_slot(L);
    try {
      if (!run || !run->ctx) throw ProgramError("host object used outside an execution");
      return F(L, *run);
    } catch (const BudgetExceeded& e) {
      trip_budget(L, *run, e.what());
      error = e.what();
    } catch (const std::exception& e) {
      error = e.what();
    }
  }
  lua_pushlstring(L, error.data(), error.size());
  return lua_error(L);
}

inline void count_hook(lua_State* L, lua_Debug*) {
  Run* run = run_slot(L);
  if (!run || !run->ctx) return;
  if (run->budget_hit) luaL_error(L, "%s", run->budget_message.c_str());
  try {
    run->ctx->charge(1);
  } catch (const BudgetExceeded& e) {
    trip_budget(L, *run, e.what());
    lua_pushstring(L, e.what());
    lua_error(L);
  }
}

// ---- message operations (shared by host, message objects) ------------------

inline int m_size(lua_State* L, Run& r) {
  lua_pushinteger(L, static_cast<lua_Integer>(r.ctx->size(any_message(L, r, 1))));
  return 1;
}
inline int m_age(lua_State* L, Run& r) {
  lua_pushinteger(L, r.ctx->age_ms(any_message(L, r, 1)));
  return 1;
}
inline int m_dst(lua_State* L, Run& r) {
  auto d = r.ctx->dst(any_message(L, r, 1));
  lua_pushlstring(L, d.data(), d.size());
  return 1;
}
inline int m_id(lua_State* L, Run& r) {
  auto& mh = any_message(L, r, 1);
  r.ctx->charge();
  lua_pushinteger(L, static_cast<lua_Integer>(mh.message->id()));
  return 1;
}
inline int m_header(lua_State* L, Run& r) {
  any_message(L, r, 1);
  auto& ref = *static_cast<Ref*>(lua_touserdata(L, 1));
  r.ctx->charge();
  push_ref(L, kHeader, ref.slot, ref.generation);
  return 1;
}
inline int m_get_header(lua_State* L, Run& r) {
  auto& mh = any_message(L, r, 1);
  push_optional(L, r.ctx->header(mh, luaL_checkstring(L, 2)));
  return 1;
}
inline int m_bytes(lua_State* L, Run& r) {
  auto& mh = any_message(L, r, 1);
  auto s = r.ctx->bytes(mh, luaL_checkinteger(L, 2), luaL_checkinteger(L, 3));
  lua_pushlstring(L, s.data(), s.size());
  return 1;
}
inline int m_json(lua_State* L, Run& r) {
  any_message(L, r, 1);
  auto& ref = *static_cast<Ref*>(lua_touserdata(L, 1));
  r.ctx->charge();
  push_ref(L, kJson, ref.slot, ref.generation);
  return 1;
}
inline int m_tcp(lua_State* L, Run& r) {
  auto& mh = any_message(L, r, 1);
  push_optional(L, r.ctx->transport_metric(mh, luaL_optstring(L, 2, "rtt")));
  return 1;
}
inline int m_redirect(lua_State* L, Run& r) {
  auto& mh = any_message(L, r, 1);
  lua_pushboolean(L, r.ctx->redirect(mh, luaL_checkstring(L, 2)));
  return 1;
}
inline int m_transform(lua_State* L, Run& r) {
  auto& mh = any_message(L, r, 1);
  std::size_t n = 0;
  const char* args = luaL_tolstring(L, 2, &n);
  lua_pushboolean(L, r.ctx->transform(mh, std::string(args, n)));
  return 1;
}
inline int m_drop(lua_State* L, Run& r) {
  lua_pushinteger(L, static_cast<lua_Integer>(r.ctx->drop(any_message(L, r, 1))));
  return 1;
}
inline int m_copy(lua_State* L, Run& r) {
  auto& mh = any_message(L, r, 1);
  auto m = r.ctx->copy(mh);
  push_message(L, r, MessageHandle{std::move(m), nullptr, 0, r.ctx->generation()});
  return 1;
}
inline int m_insert(lua_State* L, Run& r) {
  auto& mh = any_message(L, r, 1);
  MessagePtr fresh;
  if (lua_isnoneornil(L, 2)) fresh = r.ctx->copy(mh);
  else fresh = message_of(L, r, 2, kMessage).message;
  auto& again = any_message(L, r, 1);  // copy() may have grown the slot table
  lua_pushinteger(L, static_cast<lua_Integer>(r.ctx->insert(again, fresh)));
  return 1;
}
inline int m_front(lua_State* L, Run& r) {
  lua_pushinteger(L, static_cast<lua_Integer>(r.ctx->move_to_front(any_message(L, r, 1))));
  return 1;
}
inline int m_back(lua_State* L, Run& r) {
  lua_pushinteger(L, static_cast<lua_Integer>(r.ctx->move_to_back(any_message(L, r, 1))));
  return 1;
}

// ---- host-only operations ----------------------------------------------------

inline int h_notify(lua_State* L, Run& r) {
  std::size_t n = 0;
  const char* s = luaL_tolstring(L, 2, &n);
  r.ctx->notify(std::string(s, n));
  lua_pushboolean(L, 1);
  return 1;
}
inline int h_epoch(lua_State* L, Run& r) {
  lua_pushinteger(L, r.ctx->epoch_ms());
  return 1;
}
inline int h_message(lua_State* L, Run& r) {
  auto& ref = ref_arg(L, 1, kHost);
  any_message(L, r, 1);
  r.ctx->charge();
  push_ref(L, kMessage, ref.slot, ref.generation);
  return 1;
}
inline int h_queue(lua_State* L, Run& r) {
  luaL_checkudata(L, 1, kHost);
  auto q = r.ctx->trigger_queue();
  r.queues.push_back(q);
  push_ref(L, kQueue, static_cast<std::uint32_t>(r.queues.size() - 1), r.ctx->generation());
  return 1;
}

inline int queues_next_impl(lua_State* L, Run& r) {
    auto base = static_cast<std::uint32_t>(lua_tointeger(L, lua_upvalueindex(1)));
    auto count = static_cast<std::uint32_t>(lua_tointeger(L, lua_upvalueindex(2)));
    auto i = static_cast<std::uint32_t>(lua_tointeger(L, lua_upvalueindex(3)));
    auto gen = static_cast<std::uint64_t>(lua_tointeger(L, lua_upvalueindex(4)));
    if (gen != r.ctx->generation()) throw ProgramError("stale queue iterator");
    r.ctx->charge();
    if (i >= count) return 0;
    lua_pushinteger(L, i + 1);
    lua_replace(L, lua_upvalueindex(3));
    push_ref(L, kQueue, base + i, gen);
    return 1;
}

inline int queues_next(lua_State* L) { return host<queues_next_impl>(L); }

inline int h_queues(lua_State* L, Run& r) {
  luaL_checkudata(L, 1, kHost);
  r.ctx->charge();
  push_ref(L, kQueues, 0, r.ctx->generation());
  return 1;
}

inline int qs_iter(lua_State* L, Run& r) {
  auto& ref = ref_arg(L, 1, kQueues);
  if (ref.generation != r.ctx->generation()) throw ProgramError("stale queues handle");
  auto list = r.ctx->queues();
  auto base = static_cast<lua_Integer>(r.queues.size());
  r.queues.insert(r.queues.end(), list.begin(), list.end());
  lua_pushinteger(L, base);
  lua_pushinteger(L, static_cast<lua_Integer>(list.size()));
  lua_pushinteger(L, 0);
  lua_pushinteger(L, static_cast<lua_Integer>(r.ctx->generation()));
  lua_pushcclosure(L, queues_next, 4);
  return 1;
}

// ---- queue objects -----------------------------------------------------------

inline int q_length(lua_State* L, Run& r) {
  lua_pushinteger(L, static_cast<lua_Integer>(r.ctx->length(queue_of(L, r, 1))));
  return 1;
}
inline int q_latency(lua_State* L, Run& r) {
  auto v = r.ctx->avg_latency_ms(queue_of(L, r, 1));
  lua_pushnumber(L, v.value_or(0.0));
  lua_pushboolean(L, v.has_value());
  return 2;
}
inline int q_bw(lua_State* L, Run& r) {
  lua_pushnumber(L, r.ctx->observed_bw(queue_of(L, r, 1)));
  return 1;
}
inline int q_tcp(lua_State* L, Run& r) {
  push_optional(L, r.ctx->transport_metric(queue_of(L, r, 1), luaL_optstring(L, 2, "rtt")));
  return 1;
}
inline int q_route(lua_State* L, Run& r) {
  auto k = r.ctx->route_key(queue_of(L, r, 1));
  lua_pushlstring(L, k.data(), k.size());
  return 1;
}

inline int messages_next_impl(lua_State* L, Run& r) {
    auto base = static_cast<std::uint32_t>(lua_tointeger(L, lua_upvalueindex(1)));
    auto count = static_cast<std::uint32_t>(lua_tointeger(L, lua_upvalueindex(2)));
    auto i = static_cast<std::uint32_t>(lua_tointeger(L, lua_upvalueindex(3)));
    auto gen = static_cast<std::uint64_t>(lua_tointeger(L, lua_upvalueindex(4)));
    if (gen != r.ctx->generation()) throw ProgramError("stale message iterator");
    r.ctx->charge();
    if (i >= count) return 0;
    lua_pushinteger(L, i + 1);
    lua_replace(L, lua_upvalueindex(3));
    push_ref(L, kMessage, base + i, gen);
    return 1;
}

inline int messages_next(lua_State* L) { return host<messages_next_impl>(L); }

inline int q_messages(lua_State* L, Run& r) {
  auto& qh = queue_of(L, r, 1);
  auto list = r.ctx->messages(qh);
  auto base = static_cast<lua_Integer>(r.messages.size());
  for (auto& m : list) r.messages.push_back(std::move(m));
  lua_pushinteger(L, base);
  lua_pushinteger(L, static_cast<lua_Integer>(list.size()));
  lua_pushinteger(L, 0);
  lua_pushinteger(L, static_cast<lua_Integer>(r.ctx->generation()));
  lua_pushcclosure(L, messages_next, 4);
  return 1;
}

// ---- header and JSON views ---------------------------------------------------

inline int hdr_get(lua_State* L, Run& r) {
  auto& mh = message_of(L, r, 1, kHeader);
  push_optional(L, r.ctx->header(mh, luaL_checkstring(L, 2)));
  return 1;
}
inline int hdr_replace(lua_State* L, Run& r) {
  auto& mh = message_of(L, r, 1, kHeader);
  std::size_t n = 0;
  const char* v = luaL_tolstring(L, 3, &n);
  lua_pushboolean(L, r.ctx->replace_header(mh, luaL_checkstring(L, 2), std::string(v, n)));
  return 1;
}
inline int json_string(lua_State* L, Run& r) {
  auto& mh = message_of(L, r, 1, kJson);
  push_optional(L, r.ctx->json_string(mh, luaL_checkstring(L, 2)));
  return 1;
}
inline int json_number(lua_State* L, Run& r) {
  auto& mh = message_of(L, r, 1, kJson);
  push_optional(L, r.ctx->json_number(mh, luaL_checkstring(L, 2)));
  return 1;
}
inline int json_valid(lua_State* L, Run& r) {
  auto& mh = message_of(L, r, 1, kJson);
  lua_pushboolean(L, r.ctx->json(mh) != nullptr);
  return 1;
}

struct Method {
  const char* name;
  lua_CFunction fn;
};

inline void define_type(lua_State* L, const char* type, const std::vector<Method>& methods) {
  luaL_newmetatable(L, type);
  lua_createtable(L, 0, static_cast<int>(methods.size()));
  for (const auto& m : methods) {
    lua_pushcfunction(L, m.fn);
    lua_setfield(L, -2, m.name);
  }
  lua_setfield(L, -2, "__index");
  lua_pushstring(L, type);
  lua_setfield(L, -2, "__name");
  lua_pushboolean(L, 0);
  lua_setfield(L, -2, "__metatable");  // scripts cannot reach or replace metatables
  lua_pop(L, 1);
}

// Every object type scripts can see, with its methods. The host handle carries
// the message operations plus the host-level ones.
inline const std::vector<std::pair<const char*, std::vector<Method>>>& api_types() {
  static const auto types = [] {
    const std::vector<Method> message_ops = {
        {"size", host<m_size>},         {"age", host<m_age>},
        {"getAge", host<m_age>},        {"dst", host<m_dst>},
        {"id", host<m_id>},             {"header", host<m_header>},
        {"getHeader", host<m_get_header>}, {"bytes", host<m_bytes>},
        {"json", host<m_json>},         {"TCPMetrics", host<m_tcp>},
        {"tcpMetrics", host<m_tcp>},    {"redirect", host<m_redirect>},
        {"transform", host<m_transform>}, {"drop", host<m_drop>},
        {"copy", host<m_copy>},         {"insert", host<m_insert>},
        {"moveToFront", host<m_front>}, {"pushFront", host<m_front>},
        {"moveToBack", host<m_back>},   {"pushBack", host<m_back>},
    };
    std::vector<Method> host_ops = message_ops;
    host_ops.push_back({"notify", host<h_notify>});
    host_ops.push_back({"epoch", host<h_epoch>});
    host_ops.push_back({"message", host<h_message>});
    host_ops.push_back({"queue", host<h_queue>});
    host_ops.push_back({"Queues", host<h_queues>});
    host_ops.push_back({"queues", host<h_queues>});
    return std::vector<std::pair<const char*, std::vector<Method>>>{
        {kMessage, message_ops},
        {kHost, host_ops},
        {kQueues, {{"getQueue", host<qs_iter>}, {"list", host<qs_iter>}}},
        {kQueue,
         {{"length", host<q_length>},
          {"avgLatency", host<q_latency>},
          {"observedBW", host<q_bw>},
          {"getBW", host<q_bw>},
          {"TCPMetrics", host<q_tcp>},
          {"tcpMetrics", host<q_tcp>},
          {"messages", host<q_messages>},
          {"getItem", host<q_messages>},
          {"route", host<q_route>}}},
        {kHeader, {{"get", host<hdr_get>}, {"replace", host<hdr_replace>}}},
        {kJson, {{"getString", host<json_string>}, {"getNum", host<json_number>}, {"valid", host<json_valid>}}},
    };
  }();
  return types;
}

inline void register_types(lua_State* L) {
  for (const auto& [type, methods] : api_types()) define_type(L, type, methods);
}

inline int sandboxed_print(lua_State* L) {
  std::string line;
  const int n = lua_gettop(L);
  for (int i = 1; i <= n; ++i) {
    std::size_t len = 0;
    const char* s = luaL_tolstring(L, i, &len);
    if (i > 1) line += '\t';
    line.append(s, len);
    lua_pop(L, 1);
  }
  spdlog::info("[policy] {}", line);
  return 0;
}

// Built-in capabilities only: no io, os, package, debug, or code loading.
inline void open_sandbox(lua_State* L) {
  const luaL_Reg libs[] = {{LUA_GNAME, luaopen_base},          {LUA_STRLIBNAME, luaopen_string},
                           {LUA_TABLIBNAME, luaopen_table},    {LUA_MATHLIBNAME, luaopen_math},
                           {LUA_UTF8LIBNAME, luaopen_utf8},    {LUA_COLIBNAME, luaopen_coroutine}};
  for (const auto& lib : libs) {
    luaL_requiref(L, lib.name, lib.func, 1);
    lua_pop(L, 1);
  }
  for (const char* name : {"dofile", "loadfile", "load", "require", "collectgarbage"}) {
    lua_pushnil(L);
    lua_setglobal(L, name);
  }
  lua_pushcfunction(L, sandboxed_print);
  lua_setglobal(L, "print");
  // string.rep can allocate without bound; the allocator cap still applies.
}

inline std::string strip_comments(const std::string& src) {
  static const std::regex block(R"(--\[(=*)\[[\s\S]*?\]\1\])");
  static const std::regex line(R"(--[^\n]*)");
  return std::regex_replace(std::regex_replace(src, block, " "), line, " ");
}

}  // namespace lua_detail

// A policy program written in Lua. Each program keeps a small pool of
// interpreter states so different queues can run it in parallel.
class LuaProgram final : public Program {
 public:
  // Throws ProgramError on syntax errors or a missing entry point.
  static std::shared_ptr<LuaProgram> compile(std::string source, std::string chunk_name) {
    auto p = std::shared_ptr<LuaProgram>(new LuaProgram(std::move(source), std::move(chunk_name)));
    auto st = p->make_state();
    for (const char* e : {"on_request", "envoy_on_request"})
      if (has_function(st->L, e) && p->request_entry_.empty()) p->request_entry_ = e;
    for (const char* e : {"on_response", "envoy_on_response"})
      if (has_function(st->L, e) && p->response_entry_.empty()) p->response_entry_ = e;
    if (p->request_entry_.empty() && p->response_entry_.empty())
      throw ProgramError(p->chunk_name_ + ": defines none of on_request/on_response");
    p->release(std::move(st));
    return p;
  }

  ~LuaProgram() override = default;

  std::string describe() const override { return chunk_name_; }

  ProgramCapabilities capabilities() const override {
    static const std::regex transform_call(R"([:.]\s*transform\s*\()");
    static const std::regex notify_call(R"([:.]\s*notify\s*\()");
    auto code = lua_detail::strip_comments(source_);
    return {std::regex_search(code, transform_call), std::regex_search(code, notify_call)};
  }

  void run(ExecutionContext& ctx, Trigger trigger) override {
    auto st = acquire();
    lua_State* L = st->L;
    lua_detail::Run& run = st->run;
    run.ctx = &ctx;
    run.messages.clear();
    run.queues.clear();
    run.budget_hit = false;
    lua_detail::run_slot(L) = &run;

    struct Reset {
      State* st;
      LuaProgram* self;
      ~Reset() {
        lua_settop(st->L, 0);
        st->run.ctx = nullptr;
        st->run.messages.clear();
        st->run.queues.clear();
        self->release(std::unique_ptr<State>(st));
      }
    } reset{st.release(), this};

    const auto gen = ctx.generation();
    auto h = ctx.trigger();
    std::uint32_t slot = lua_detail::add_message(run, std::move(h));

    // Globals every policy can use: `queue` (the trigger's queue) and `params`.
    auto q = ctx.trigger_queue();
    run.queues.push_back(q);
    lua_detail::push_ref(L, lua_detail::kQueue, 0, gen);
    lua_setglobal(L, "queue");
    if (!params_pushed_for(reset.st, ctx)) {
      lua_createtable(L, 0, static_cast<int>(ctx.params().size()));
      for (const auto& [k, v] : ctx.params()) {
        lua_pushlstring(L, v.data(), v.size());
        lua_setfield(L, -2, k.c_str());
      }
      lua_setglobal(L, "params");
    }

    const char* entry = entry_for(trigger);
    if (lua_getglobal(L, entry) != LUA_TFUNCTION)
      throw ProgramError(chunk_name_ + ": entry point " + entry + " is not defined");
    lua_detail::push_ref(L, lua_detail::kHost, slot, gen);
    lua_sethook(L, lua_detail::count_hook, LUA_MASKCOUNT, kLuaInstructionsPerStep);
    const int status = lua_pcall(L, 1, 0, 0);
    lua_sethook(L, nullptr, 0, 0);
    if (status == LUA_OK) return;
    std::string msg = lua_type(L, -1) == LUA_TSTRING ? lua_tostring(L, -1) : "non-string error";
    if (run.budget_hit) throw BudgetExceeded(chunk_name_ + ": " + run.budget_message);
    if (status == LUA_ERRMEM) msg = "memory limit exceeded";
    throw ProgramError(msg);
  }

 private:
  struct State {
    lua_detail::Allocator alloc;
    lua_State* L = nullptr;
    lua_detail::Run run;
    std::optional<Params> params_for;
    ~State() {
      if (L) lua_close(L);
    }
  };

  LuaProgram(std::string source, std::string chunk_name)
      : source_(std::move(source)), chunk_name_(std::move(chunk_name)) {}

  std::unique_ptr<State> make_state() {
    auto st = std::make_unique<State>();
    st->L = lua_newstate(lua_detail::allocate, &st->alloc);
    if (!st->L) throw ProgramError("cannot create interpreter");
    lua_State* L = st->L;
    lua_detail::run_slot(L) = nullptr;
    lua_detail::open_sandbox(L);
    lua_detail::register_types(L);
    if (luaL_loadbufferx(L, source_.data(), source_.size(), ("@" + chunk_name_).c_str(), "t") != LUA_OK) {
      std::string msg = lua_tostring(L, -1);
      throw ProgramError(msg);
    }
    // Top-level code runs once per state, without a context: it may only
    // define functions and constants.
    top_level_ticks() = 0;
    lua_sethook(L, top_level_hook, LUA_MASKCOUNT, 1000);
    if (lua_pcall(L, 0, 0, 0) != LUA_OK) {
      std::string msg = lua_tostring(L, -1) ? lua_tostring(L, -1) : "error";
      throw ProgramError(msg);
    }
    lua_sethook(L, nullptr, 0, 0);
    return st;
  }

  static int& top_level_ticks() {
    static thread_local int ticks = 0;
    return ticks;
  }

  // Top-level code gets the same 100,000-instruction allowance.
  static void top_level_hook(lua_State* L, lua_Debug*) {
    if (++top_level_ticks() > 100) luaL_error(L, "top-level code ran too long");
  }

  static bool has_function(lua_State* L, const char* name) {
    bool f = lua_getglobal(L, name) == LUA_TFUNCTION;
    lua_pop(L, 1);
    return f;
  }

  const char* entry_for(Trigger t) const {
    // A program with a single entry point runs for whichever trigger it is bound to.
    if (t == Trigger::OnRequest) return request_entry_.empty() ? response_entry_.c_str() : request_entry_.c_str();
    return response_entry_.empty() ? request_entry_.c_str() : response_entry_.c_str();
  }

  bool params_pushed_for(State* st, const ExecutionContext& ctx) {
    if (st->params_for && *st->params_for == ctx.params()) return true;
    st->params_for = ctx.params();
    return false;
  }

  std::unique_ptr<State> acquire() {
    {
      std::lock_guard lk(mu_);
      if (!pool_.empty()) {
        auto st = std::move(pool_.back());
        pool_.pop_back();
        return st;
      }
    }
    return make_state();
  }

  void release(std::unique_ptr<State> st) {
    std::lock_guard lk(mu_);
    pool_.push_back(std::move(st));
  }

  std::string source_;
  std::string chunk_name_;
  std::string request_entry_;
  std::string response_entry_;
  std::mutex mu_;
  std::vector<std::unique_ptr<State>> pool_;
};

}  // namespace hivegate
