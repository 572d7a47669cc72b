#pragma once

#include <charconv>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace hivegate {

// Resolution rungs ordered by nominal chunk size, smallest first.
class ResolutionLadder {
 public:
  struct Rung {
    std::string label;
    double nominal_bytes = 0;
  };

  ResolutionLadder() = default;

  explicit ResolutionLadder(std::vector<Rung> rungs) : rungs_(std::move(rungs)) {
    if (rungs_.empty()) throw std::invalid_argument("ladder needs at least one rung");
    for (std::size_t i = 0; i < rungs_.size(); ++i) {
      if (rungs_[i].label.empty()) throw std::invalid_argument("ladder label is empty");
      for (std::size_t j = 0; j < i; ++j)
        if (rungs_[j].label == rungs_[i].label)
          throw std::invalid_argument("duplicate ladder label " + rungs_[i].label);
      if (i > 0 && !(rungs_[i].nominal_bytes > rungs_[i - 1].nominal_bytes))
        throw std::invalid_argument("ladder sizes must be strictly increasing");
    }
  }

  // "180p=42000,360p=140000"
  static ResolutionLadder parse(std::string_view text) {
    std::vector<Rung> rungs;
    while (!text.empty()) {
      auto comma = text.find(',');
      auto item = text.substr(0, comma);
      auto eq = item.find('=');
      if (eq == std::string_view::npos) throw std::invalid_argument("ladder entry without '=': " + std::string(item));
      Rung r;
      r.label = std::string(item.substr(0, eq));
      auto num = item.substr(eq + 1);
      auto [p, ec] = std::from_chars(num.data(), num.data() + num.size(), r.nominal_bytes);
      if (ec != std::errc() || p != num.data() + num.size())
        throw std::invalid_argument("bad ladder size: " + std::string(num));
      rungs.push_back(std::move(r));
      if (comma == std::string_view::npos) break;
      text.remove_prefix(comma + 1);
    }
    return ResolutionLadder(std::move(rungs));
  }

  const std::vector<Rung>& rungs() const noexcept { return rungs_; }
  const Rung& lowest() const { return rungs_.front(); }
  const Rung& highest() const { return rungs_.back(); }

  std::optional<std::size_t> index_of(std::string_view label) const {
    for (std::size_t i = 0; i < rungs_.size(); ++i)
      if (rungs_[i].label == label) return i;
    return std::nullopt;
  }

  std::optional<double> nominal(std::string_view label) const {
    auto i = index_of(label);
    if (!i) return std::nullopt;
    return rungs_[*i].nominal_bytes;
  }

 private:
  std::vector<Rung> rungs_;
};

// Vertical resolution encoded in a label such as "720p"; 0 if none.
inline int label_height(std::string_view label) {
  int h = 0;
  std::from_chars(label.data(), label.data() + label.size(), h);
  return h;
}

}  // namespace hivegate
