//
// Copyright 2026 The dpfed Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

#ifndef DPFED_SCHEDULE_HPP_
#define DPFED_SCHEDULE_HPP_

#include <charconv>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include "dpfed/errors.hpp"

namespace dpfed {

// Piecewise-constant per-round value. Breakpoints are (first_round, value)
// pairs with strictly increasing rounds, the first at round 1. Text form is
// "1:30,6:60" or a bare "30" for a constant.
template <typename T>
class Schedule {
 public:
  Schedule() = default;
  Schedule(T constant) : steps_{{1, constant}} {}  // NOLINT: implicit by intent
  explicit Schedule(std::vector<std::pair<std::size_t, T>> steps) : steps_(std::move(steps)) {
    Validate();
  }

  T At(std::size_t round) const {
    if (steps_.empty()) throw ConfigError("schedule is empty");
    T v = steps_.front().second;
    for (const auto& [first, value] : steps_) {
      if (round >= first) v = value;
    }
    return v;
  }

  // Sum of At(1..rounds).
  double SumThrough(std::size_t rounds) const {
    double s = 0.0;
    for (std::size_t t = 1; t <= rounds; ++t) s += static_cast<double>(At(t));
    return s;
  }

  bool empty() const { return steps_.empty(); }
  const std::vector<std::pair<std::size_t, T>>& steps() const { return steps_; }

  std::string ToString() const {
    std::ostringstream out;
    for (std::size_t i = 0; i < steps_.size(); ++i) {
      if (i) out << ',';
      if (steps_.size() > 1) out << steps_[i].first << ':';
      // Shortest text that parses back to the same value.
      char buf[32];
      const auto res = std::to_chars(buf, buf + sizeof(buf), steps_[i].second);
      out << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
    }
    return out.str();
  }

  static Schedule Parse(const std::string& text) {
    std::vector<std::pair<std::size_t, T>> steps;
    std::stringstream ss(text);
    for (std::string item; std::getline(ss, item, ',');) {
      const auto colon = item.find(':');
      try {
        if (colon == std::string::npos) {
          steps.emplace_back(steps.empty() ? 1 : 0, ParseValue(item));
        } else {
          steps.emplace_back(std::stoull(item.substr(0, colon)),
                             ParseValue(item.substr(colon + 1)));
        }
      } catch (const std::logic_error&) {
        throw ConfigError("bad schedule entry '" + item + "' in '" + text + "'");
      }
    }
    return Schedule(std::move(steps));
  }

  friend bool operator==(const Schedule&, const Schedule&) = default;

 private:
  static T ParseValue(const std::string& s) {
    std::size_t used = 0;
    T v{};
    if constexpr (std::is_integral_v<T>) {
      if (!s.empty() && s.find('-') != std::string::npos) {
        throw ConfigError("schedule value must be non-negative: " + s);
      }
      v = static_cast<T>(std::stoull(s, &used));
    } else {
      v = static_cast<T>(std::stod(s, &used));
    }
    if (used != s.size()) throw ConfigError("trailing characters in schedule value: " + s);
    return v;
  }

  void Validate() const {
    if (steps_.empty()) throw ConfigError("schedule needs at least one entry");
    if (steps_.front().first != 1) throw ConfigError("schedule must start at round 1");
    for (std::size_t i = 1; i < steps_.size(); ++i) {
      if (steps_[i].first <= steps_[i - 1].first) {
        throw ConfigError("schedule rounds must be strictly increasing");
      }
    }
  }

  std::vector<std::pair<std::size_t, T>> steps_;
};

}  // namespace dpfed

#endif  // DPFED_SCHEDULE_HPP_
