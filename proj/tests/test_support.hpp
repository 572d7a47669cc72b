#pragma once

#include <string>

#include "hivegate/message/framing.hpp"
#include "hivegate/message/message.hpp"

namespace hivegate::test {

inline HttpFrame request_frame(std::string target, std::string body = {}, Headers extra = {}) {
  HttpFrame f;
  f.start.method = body.empty() ? "GET" : "POST";
  f.start.target = std::move(target);
  f.headers = std::move(extra);
  if (!body.empty()) f.headers.add("Content-Length", std::to_string(body.size()));
  f.body = std::move(body);
  return f;
}

inline HttpFrame response_frame(std::string body = {}, Headers extra = {}) {
  HttpFrame f;
  f.start.is_response = true;
  f.start.status = 200;
  f.start.reason = "OK";
  f.headers = std::move(extra);
  f.headers.add("Content-Length", std::to_string(body.size()));
  f.body = std::move(body);
  return f;
}

inline MessagePtr make_message(MessageId id, const Route& route, std::size_t bytes = 0,
                               Headers extra = {}) {
  auto frame = route.direction() == Direction::Request
                   ? request_frame("/m" + std::to_string(id), std::string(bytes, 'x'), std::move(extra))
                   : response_frame(std::string(bytes, 'x'), std::move(extra));
  return std::make_shared<Message>(id, route, std::move(frame));
}

inline std::vector<MessageId> ids(const std::deque<MessagePtr>& items) {
  std::vector<MessageId> out;
  for (const auto& m : items) out.push_back(m->id());
  return out;
}

}  // namespace hivegate::test
