#pragma once

#include <algorithm>
#include <cctype>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace hivegate {

inline bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           auto lx = static_cast<unsigned char>(x), ly = static_cast<unsigned char>(y);
           return std::tolower(lx) == std::tolower(ly);
         });
}

// Ordered multimap; lookups ignore case, storage keeps the sender's casing.
class Headers {
 public:
  using Field = std::pair<std::string, std::string>;

  Headers() = default;
  Headers(std::initializer_list<Field> fields) : fields_(fields) {}

  std::optional<std::string_view> get(std::string_view name) const {
    for (const auto& [k, v] : fields_)
      if (iequals(k, name)) return std::string_view(v);
    return std::nullopt;
  }

  std::vector<std::string_view> get_all(std::string_view name) const {
    std::vector<std::string_view> out;
    for (const auto& [k, v] : fields_)
      if (iequals(k, name)) out.emplace_back(v);
    return out;
  }

  bool contains(std::string_view name) const { return get(name).has_value(); }

  void add(std::string name, std::string value) {
    fields_.emplace_back(std::move(name), std::move(value));
  }

  // Replaces the first occurrence in place and removes the rest; appends if absent.
  void set(std::string_view name, std::string value) {
    auto it = std::find_if(fields_.begin(), fields_.end(),
                           [&](const Field& f) { return iequals(f.first, name); });
    if (it == fields_.end()) {
      fields_.emplace_back(std::string(name), std::move(value));
      return;
    }
    it->second = std::move(value);
    auto first = it - fields_.begin();
    fields_.erase(std::remove_if(fields_.begin() + first + 1, fields_.end(),
                                 [&](const Field& f) { return iequals(f.first, name); }),
                  fields_.end());
  }

  std::size_t remove(std::string_view name) {
    auto before = fields_.size();
    fields_.erase(std::remove_if(fields_.begin(), fields_.end(),
                                 [&](const Field& f) { return iequals(f.first, name); }),
                  fields_.end());
    return before - fields_.size();
  }

  std::size_t size() const noexcept { return fields_.size(); }
  bool empty() const noexcept { return fields_.empty(); }
  auto begin() const noexcept { return fields_.begin(); }
  auto end() const noexcept { return fields_.end(); }

  bool operator==(const Headers&) const = default;

 private:
  std::vector<Field> fields_;
};

}  // namespace hivegate
