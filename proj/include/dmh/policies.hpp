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

#include <memory>
#include <string>
#include <vector>

#include "dmh/engine.hpp"
#include "dmh/rules.hpp"

namespace dmh {

/// Fixed dispatching rule on a uniformly drawn idle vehicle.
class RulePolicy final : public Policy {
 public:
  explicit RulePolicy(Rule rule, std::uint64_t seed = 0) : rule_(rule), rng_(mix_seed(seed)) {}

  std::string name() const override { return std::string(to_string(rule_)); }
  void seed(std::uint64_t s) override { rng_.seed(mix_seed(s)); }

  Action act(const Observation& obs) override {
    if (obs.valid_actions.empty()) throw PreconditionError(name() + ": no valid action");
    const int r = static_cast<int>(rule_);
    std::size_t idle = 0;
    for (const Action& a : obs.valid_actions) idle += a.rule == r;
    std::size_t k = idle > 1 ? uniform_index(rng_, idle) : 0;
    for (const Action& a : obs.valid_actions)
      if (a.rule == r && k-- == 0) return a;
    throw PreconditionError(name() + ": no valid action for its rule");
  }

 private:
  Rule rule_;
  Rng rng_;
};

/// Uniform over the epoch's valid actions.
class RandomPolicy final : public Policy {
 public:
  explicit RandomPolicy(std::uint64_t seed = 0) : rng_(mix_seed(seed)) {}

  std::string name() const override { return "random"; }
  void seed(std::uint64_t s) override { rng_.seed(mix_seed(s)); }

  Action act(const Observation& obs) override {
    if (obs.valid_actions.empty()) throw PreconditionError("random: no valid action");
    return obs.valid_actions[uniform_index(rng_, obs.valid_actions.size())];
  }

 private:
  Rng rng_;
};

inline std::unique_ptr<Policy> rule_baseline_policy(Rule rule, std::uint64_t seed = 0) {
  return std::make_unique<RulePolicy>(rule, seed);
}

inline std::unique_ptr<Policy> random_policy(std::uint64_t seed = 0) { return std::make_unique<RandomPolicy>(seed); }

/// `fcfs | edd | nvf | std | random`, case-insensitive; nullptr otherwise.
inline std::unique_ptr<Policy> make_baseline(std::string_view name, std::uint64_t seed = 0) {
  if (auto r = parse_rule(name)) return rule_baseline_policy(*r, seed);
  std::string lower(name);
  for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (lower == "random") return random_policy(seed);
  return nullptr;
}

}  // namespace dmh
