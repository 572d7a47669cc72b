#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hivegate {

enum class Direction { Request, Response };

inline std::string_view to_string(Direction d) {
  return d == Direction::Request ? "request" : "response";
}

// One (source, destination, direction) flow between logical endpoints.
class Route {
 public:
  Route(std::string source, std::string destination, Direction direction)
      : source_(std::move(source)), destination_(std::move(destination)), direction_(direction) {
    if (source_.empty() || destination_.empty())
      throw std::invalid_argument("route endpoints must be non-empty");
    if (source_ == destination_)
      throw std::invalid_argument("route source and destination must differ: " + source_);
  }

  const std::string& source() const noexcept { return source_; }
  const std::string& destination() const noexcept { return destination_; }
  Direction direction() const noexcept { return direction_; }

  // "camera->cloud-detector/request"
  std::string key() const {
    std::string k;
    k.reserve(source_.size() + destination_.size() + 12);
    k.append(source_).append("->").append(destination_).append("/").append(to_string(direction_));
    return k;
  }

  Route with_destination(std::string destination) const {
    return Route(source_, std::move(destination), direction_);
  }

  // The flow carrying replies to this one.
  Route reversed() const {
    return Route(destination_, source_,
                 direction_ == Direction::Request ? Direction::Response : Direction::Request);
  }

  bool operator==(const Route&) const = default;

 private:
  std::string source_;
  std::string destination_;
  Direction direction_;
};

}  // namespace hivegate
