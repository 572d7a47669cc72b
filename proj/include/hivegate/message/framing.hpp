#pragma once

#include <charconv>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hivegate/core/errors.hpp"
#include "hivegate/message/message.hpp"

namespace hivegate {

struct FramingLimits {
  std::size_t max_payload = std::size_t{64} << 20;
  std::size_t max_head = std::size_t{64} << 10;
};

namespace detail {

inline bool is_tchar(char c) {
  if ((c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z')) return true;
  switch (c) {
    case '!': case '#': case '$': case '%': case '&': case '\'': case '*': case '+':
    case '-': case '.': case '^': case '_': case '`': case '|': case '~':
      return true;
    default:
      return false;
  }
}

inline bool is_token(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s)
    if (!is_tchar(c)) return false;
  return true;
}

inline std::string_view trim_ows(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

[[noreturn]] inline void malformed(const std::string& why) {
  throw FramingError(FramingError::Kind::Malformed, why);
}

inline bool valid_version(std::string_view v) {
  return v.size() == 8 && v.substr(0, 7) == "HTTP/1." && v[7] >= '0' && v[7] <= '9';
}

inline StartLine parse_start_line(std::string_view line) {
  StartLine sl;
  if (line.substr(0, 5) == "HTTP/") {
    sl.is_response = true;
    auto sp = line.find(' ');
    if (sp == std::string_view::npos) malformed("status line without status code");
    sl.version = std::string(line.substr(0, sp));
    if (!valid_version(sl.version)) malformed("unsupported protocol version");
    auto rest = line.substr(sp + 1);
    auto code = rest.substr(0, rest.find(' '));
    if (code.size() != 3) malformed("status code must be three digits");
    int status = 0;
    auto [p, ec] = std::from_chars(code.data(), code.data() + code.size(), status);
    if (ec != std::errc{} || p != code.data() + code.size() || status < 100)
      malformed("non-numeric status code");
    sl.status = status;
    if (rest.size() > 3) {
      if (rest[3] != ' ') malformed("bad status line");
      sl.reason = std::string(rest.substr(4));
    }
    return sl;
  }
  auto sp1 = line.find(' ');
  if (sp1 == std::string_view::npos) malformed("request line without target");
  auto sp2 = line.find(' ', sp1 + 1);
  if (sp2 == std::string_view::npos) malformed("request line without version");
  auto method = line.substr(0, sp1);
  auto target = line.substr(sp1 + 1, sp2 - sp1 - 1);
  auto version = line.substr(sp2 + 1);
  if (!is_token(method)) malformed("bad request method");
  if (target.empty() || target.find(' ') != std::string_view::npos) malformed("bad request target");
  if (!valid_version(version)) malformed("unsupported protocol version");
  sl.method = std::string(method);
  sl.target = std::string(target);
  sl.version = std::string(version);
  return sl;
}

}  // namespace detail

// Per-connection HTTP/1.1 framing: bytes in, complete Content-Length framed
// messages out. After a FramingError the state stays failed; the caller is
// expected to drop the connection.
class FramingState {
 public:
  explicit FramingState(FramingLimits limits = {}) : limits_(limits) {}

  std::vector<HttpFrame> feed(std::string_view fragment) {
    if (failed_) throw FramingError(FramingError::Kind::Malformed, "connection already rejected");
    buf_.append(fragment);
    std::vector<HttpFrame> out;
    try {
      while (true) {
        if (!pending_) {
          if (!parse_head()) break;
        }
        if (buf_.size() - pos_ < body_needed_) break;
        pending_->body.assign(buf_, pos_, body_needed_);
        pos_ += body_needed_;
        body_needed_ = 0;
        out.push_back(std::move(*pending_));
        pending_.reset();
      }
    } catch (const FramingError&) {
      failed_ = true;
      throw;
    }
    compact();
    return out;
  }

  // Bytes received but not yet part of an emitted message.
  std::size_t buffered() const noexcept { return buf_.size() - pos_; }
  bool failed() const noexcept { return failed_; }

 private:
  bool parse_head() {
    // Tolerate stray line breaks between messages.
    while (pos_ < buf_.size() && (buf_[pos_] == '\r' || buf_[pos_] == '\n')) ++pos_;
    std::size_t cursor = pos_;
    std::vector<std::string_view> lines;
    while (true) {
      auto nl = buf_.find('\n', cursor);
      if (nl == std::string::npos) {
        if (buf_.size() - pos_ > limits_.max_head) detail::malformed("header section too large");
        return false;
      }
      std::string_view line(buf_.data() + cursor, nl - cursor);
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      cursor = nl + 1;
      if (cursor - pos_ > limits_.max_head) detail::malformed("header section too large");
      if (line.empty()) break;
      lines.push_back(line);
    }

    HttpFrame frame;
    frame.start = detail::parse_start_line(lines.front());
    std::optional<std::size_t> length;
    for (std::size_t i = 1; i < lines.size(); ++i) {
      auto line = lines[i];
      if (line.front() == ' ' || line.front() == '\t') detail::malformed("obsolete line folding");
      auto colon = line.find(':');
      if (colon == std::string_view::npos) detail::malformed("header line without colon");
      auto name = line.substr(0, colon);
      if (!detail::is_token(name)) detail::malformed("bad header name");
      auto value = detail::trim_ows(line.substr(colon + 1));
      if (iequals(name, "Transfer-Encoding"))
        detail::malformed("transfer encodings are not supported");
      if (iequals(name, "Content-Length")) {
        std::size_t n = 0;
        auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), n);
        if (value.empty() || ec != std::errc{} || p != value.data() + value.size())
          detail::malformed("non-numeric Content-Length");
        if (length && *length != n) detail::malformed("conflicting Content-Length values");
        length = n;
      }
      frame.headers.add(std::string(name), std::string(value));
    }
    if (length && *length > limits_.max_payload)
      throw FramingError(FramingError::Kind::BodyTooLarge,
                         "payload of " + std::to_string(*length) + " bytes exceeds limit");
    pos_ = cursor;
    body_needed_ = length.value_or(0);
    pending_ = std::move(frame);
    return true;
  }

  void compact() {
    if (pos_ == 0) return;
    if (pos_ == buf_.size()) {
      buf_.clear();
      pos_ = 0;
    } else if (pos_ > 4096 && pos_ * 2 > buf_.size()) {
      buf_.erase(0, pos_);
      pos_ = 0;
    }
  }

  FramingLimits limits_;
  std::string buf_;
  std::size_t pos_ = 0;
  std::optional<HttpFrame> pending_;
  std::size_t body_needed_ = 0;
  bool failed_ = false;
};

inline std::vector<HttpFrame> assemble(std::string_view fragment, FramingState& state) {
  return state.feed(fragment);
}

// Content-Length is rewritten to the payload length where present, and added
// when absent for a non-empty payload.
inline std::string serialize(const HttpFrame& frame) {
  std::string out;
  out.reserve(frame.body.size() + 256);
  const auto& sl = frame.start;
  if (sl.is_response) {
    out.append(sl.version).append(" ").append(std::to_string(sl.status));
    out.append(" ").append(sl.reason);
  } else {
    out.append(sl.method).append(" ").append(sl.target).append(" ").append(sl.version);
  }
  out.append("\r\n");
  bool wrote_length = false;
  for (const auto& [name, value] : frame.headers) {
    if (iequals(name, "Content-Length")) {
      if (wrote_length) continue;
      out.append(name).append(": ").append(std::to_string(frame.body.size())).append("\r\n");
      wrote_length = true;
      continue;
    }
    out.append(name).append(": ").append(value).append("\r\n");
  }
  if (!wrote_length && !frame.body.empty())
    out.append("Content-Length: ").append(std::to_string(frame.body.size())).append("\r\n");
  out.append("\r\n");
  out.append(frame.body);
  return out;
}

inline std::string serialize(const Message& m) {
  if (m.state() != MessageState::Forwarding)
    throw std::logic_error("serialize requires a message in state forwarding");
  return serialize(m.frame());
}

}  // namespace hivegate
