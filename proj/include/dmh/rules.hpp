/*
 * Copyright 2026 The dmh-bench Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dmh/layout.hpp"
#include "dmh/util.hpp"

namespace dmh {

/// Dispatching rules. The numeric values are the rule half of the flat
/// action encoding and must not change.
enum class Rule : int { FCFS = 0, EDD = 1, NVF = 2, STD = 3 };

inline constexpr int kRuleCount = 4;
inline constexpr std::array<Rule, kRuleCount> kAllRules = {Rule::FCFS, Rule::EDD, Rule::NVF, Rule::STD};

inline std::string_view to_string(Rule r) {
  switch (r) {
    case Rule::FCFS: return "fcfs";
    case Rule::EDD: return "edd";
    case Rule::NVF: return "nvf";
    case Rule::STD: return "std";
  }
  return "?";
}

inline std::optional<Rule> parse_rule(std::string_view text) {
  std::string lower(text);
  for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  for (Rule r : kAllRules)
    if (lower == to_string(r)) return r;
  return std::nullopt;
}

/// A staged task with its sites resolved against the layout.
struct TaskView {
  SiteIndex pickup = 0;
  SiteIndex delivery = 0;
  double arrival = 0.0;
  double expiry = 0.0;
};

struct RuleOptions {
  // EDD keyed on expiry - arrival as printed in the original rule table,
  // instead of the absolute due date arrival + expiry.
  bool edd_literal = false;
};

inline double rule_key(Rule rule, const TaskView& task, const Position& vehicle, const Layout& layout,
                       const RuleOptions& opts = {}) {
  switch (rule) {
    case Rule::FCFS: return task.arrival;
    case Rule::EDD: return opts.edd_literal ? task.expiry - task.arrival : task.arrival + task.expiry;
    case Rule::NVF: return layout.distance(vehicle, task.pickup);
    case Rule::STD: return layout.distance(vehicle, task.pickup) + layout.distance(task.pickup, task.delivery);
  }
  return 0.0;
}

/// Keys this close are treated as a tie.
inline bool keys_tied(double a, double b) { return std::abs(a - b) <= 1e-9 * (1.0 + std::abs(a) + std::abs(b)); }

/// Index into `staging` of the task the rule assigns to a vehicle at
/// `vehicle`. Ties are broken uniformly at random; `rng` is only consumed
/// when a tie actually occurs.
inline std::size_t select_task(Rule rule, const Position& vehicle, std::span<const TaskView> staging,
                               const Layout& layout, Rng& rng, const RuleOptions& opts = {}) {
  if (staging.empty()) throw PreconditionError("select_task: staging list is empty");
  // Keys are recomputed rather than stored so the hot path never allocates.
  auto key = [&](std::size_t i) { return rule_key(rule, staging[i], vehicle, layout, opts); };
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < staging.size(); ++i) best = std::min(best, key(i));
  std::size_t tied = 0, first = 0;
  for (std::size_t i = 0; i < staging.size(); ++i)
    if (keys_tied(key(i), best) && tied++ == 0) first = i;
  if (tied == 1) return first;
  std::size_t k = uniform_index(rng, tied);
  for (std::size_t i = 0; i < staging.size(); ++i)
    if (keys_tied(key(i), best) && k-- == 0) return i;
  return first;
}

}  // namespace dmh
