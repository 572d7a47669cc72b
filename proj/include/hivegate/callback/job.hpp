#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>

#include "hivegate/core/time.hpp"
#include "hivegate/message/message.hpp"

namespace hivegate {

enum class CallbackKind { Notify, Transform };

inline std::string_view to_string(CallbackKind k) {
  return k == CallbackKind::Notify ? "notify" : "transform";
}

struct MessageRef {
  std::string queue_key;
  MessageId id = 0;
};

struct CallbackJob {
  CallbackKind kind = CallbackKind::Notify;
  std::string endpoint;
  std::string body;
  std::string args;  // X-Transform-Args
  std::optional<MessageRef> message_ref;
  Timestamp deadline{};
  int attempt = 0;
  std::uint64_t job_id = 0;  // assigned by the dispatcher
  // The in-progress message itself, so completion does not need a queue scan
  // to find it. Only meaningful for Transform jobs.
  MessagePtr message;
};

inline constexpr Millis kDefaultTransformTimeout{5000};
inline constexpr Millis kDefaultNotifyTimeout{2000};

struct CallbackConfig {
  Millis transform_timeout = kDefaultTransformTimeout;
  Millis notify_timeout = kDefaultNotifyTimeout;
  int notify_retries = 0;
  int transform_retries = 0;
};

}  // namespace hivegate
