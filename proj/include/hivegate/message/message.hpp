#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "hivegate/core/time.hpp"
#include "hivegate/message/headers.hpp"
#include "hivegate/message/route.hpp"

namespace hivegate {

using MessageId = std::uint64_t;

enum class MessageState { Assembling, Queued, InProgress, Forwarding, Forwarded, Dropped };

inline std::string_view to_string(MessageState s) {
  switch (s) {
    case MessageState::Assembling: return "assembling";
    case MessageState::Queued: return "queued";
    case MessageState::InProgress: return "in_progress";
    case MessageState::Forwarding: return "forwarding";
    case MessageState::Forwarded: return "forwarded";
    case MessageState::Dropped: return "dropped";
  }
  return "?";
}

inline bool transition_allowed(MessageState from, MessageState to) {
  using S = MessageState;
  switch (to) {
    case S::Queued: return from == S::Assembling || from == S::InProgress;
    case S::InProgress: return from == S::Queued;
    case S::Forwarding: return from == S::Queued;
    case S::Forwarded: return from == S::Forwarding;
    case S::Dropped: return from == S::Assembling || from == S::Queued || from == S::InProgress;
    case S::Assembling: return false;
  }
  return false;
}

struct StartLine {
  bool is_response = false;
  std::string method;   // requests
  std::string target;   // requests
  std::string version = "HTTP/1.1";
  int status = 0;       // responses
  std::string reason;   // responses

  bool operator==(const StartLine&) const = default;
};

// A framed HTTP/1.1 message as produced by the assembler.
struct HttpFrame {
  StartLine start;
  Headers headers;
  std::string body;

  bool operator==(const HttpFrame&) const = default;
};

class Message;
class RouteQueue;
using MessagePtr = std::shared_ptr<Message>;

// Observer for terminal outcomes; the daemon uses it to release a waiting
// connection, the emulator to record per-message outcomes.
class MessageSink {
 public:
  virtual ~MessageSink() = default;
  virtual void on_forwarded(const MessagePtr&) {}
  virtual void on_dropped(const MessagePtr&) {}
};

class Message {
 public:
  Message(MessageId id, Route route, HttpFrame frame)
      : id_(id),
        route_(std::move(route)),
        frame_(std::move(frame)),
        original_size_(frame_.body.size()) {
    sync_content_length();
  }

  MessageId id() const noexcept { return id_; }
  const Route& route() const noexcept { return route_; }
  const StartLine& start_line() const noexcept { return frame_.start; }
  const Headers& headers() const noexcept { return frame_.headers; }
  const std::string& payload() const noexcept { return frame_.body; }
  const HttpFrame& frame() const noexcept { return frame_; }
  std::size_t size() const noexcept { return frame_.body.size(); }
  std::size_t original_size() const noexcept { return original_size_; }
  MessageState state() const noexcept { return state_.load(std::memory_order_acquire); }
  Timestamp enqueue_time() const noexcept { return enqueue_time_; }
  bool is_response() const noexcept { return frame_.start.is_response; }

  // Headers and payload are frozen once transmission starts.
  bool is_mutable() const noexcept {
    auto s = state();
    return s != MessageState::Forwarding && s != MessageState::Forwarded;
  }

  void transition(MessageState next) {
    auto cur = state();
    if (!transition_allowed(cur, next))
      throw std::logic_error("illegal message transition " + std::string(to_string(cur)) +
                             " -> " + std::string(to_string(next)));
    state_.store(next, std::memory_order_release);
  }

  void set_payload(std::string payload) {
    require_mutable();
    frame_.body = std::move(payload);
    ++payload_version_;
    sync_content_length();
  }

  void set_header(std::string_view name, std::string value) {
    require_mutable();
    frame_.headers.set(name, std::move(value));
  }

  void remove_header(std::string_view name) {
    require_mutable();
    frame_.headers.remove(name);
  }

  void set_target(std::string target) {
    require_mutable();
    frame_.start.target = std::move(target);
  }

  void set_route(Route route) {
    require_mutable();
    route_ = std::move(route);
  }

  void stamp_enqueue(Timestamp t) noexcept { enqueue_time_ = t; }

  // Bumped on every payload replacement; lets readers cache parsed views.
  std::uint64_t payload_version() const noexcept { return payload_version_; }

  const std::shared_ptr<MessageSink>& sink() const noexcept { return sink_; }
  void set_sink(std::shared_ptr<MessageSink> sink) { sink_ = std::move(sink); }

  // Queue currently holding the message, maintained by RouteQueue under its lock.
  RouteQueue* owner() const noexcept { return owner_.load(std::memory_order_acquire); }
  void set_owner(RouteQueue* q) noexcept { owner_.store(q, std::memory_order_release); }

  // Opaque per-message cache slot for derived views (parsed JSON and the like).
  struct Annotation {
    std::uint64_t version = 0;
    std::shared_ptr<const void> value;
  };
  Annotation& annotation() const noexcept { return annotation_; }

  // Fresh Queued copy with a new id, used by insert(msg). The copy has no
  // sink; the queue manager's fallback sink observes it.
  MessagePtr clone(MessageId id) const { return std::make_shared<Message>(id, route_, frame_); }

 private:
  void require_mutable() const {
    if (!is_mutable())
      throw std::logic_error("message " + std::to_string(id_) + " is immutable in state " +
                             std::string(to_string(state())));
  }

  void sync_content_length() {
    if (frame_.headers.contains("Content-Length"))
      frame_.headers.set("Content-Length", std::to_string(frame_.body.size()));
  }

  MessageId id_;
  Route route_;
  HttpFrame frame_;
  std::size_t original_size_;
  std::atomic<MessageState> state_{MessageState::Queued};
  Timestamp enqueue_time_{};
  std::uint64_t payload_version_ = 0;
  std::shared_ptr<MessageSink> sink_;
  std::atomic<RouteQueue*> owner_{nullptr};
  mutable Annotation annotation_;
};

}  // namespace hivegate
