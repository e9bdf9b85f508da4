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
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "dmh/crl.hpp"
#include "dmh/engine.hpp"
#include "dmh/policies.hpp"
#include "dmh/util.hpp"

namespace dmh::bench {

/// A named way of producing fresh policy objects.
struct PolicySpec {
  std::string name;
  std::function<std::unique_ptr<Policy>()> make;
};

/// Baseline name (fcfs, edd, nvf, std, random) or a policy artifact path.
inline PolicySpec policy_spec(const std::string& ref) {
  std::string lower = ref;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (make_baseline(lower, 0)) return {lower, [lower] { return make_baseline(lower, 0); }};
  if (!std::filesystem::exists(ref)) throw ParseError("no such policy or artifact '" + ref + "'");
  auto art = std::make_shared<const crl::PolicyArtifact>(crl::load_artifact(ref));
  const std::string name = std::filesystem::path(ref).stem().string();
  return {name, [art, name] { return std::make_unique<crl::NeuralPolicy>(art->actor, name); }};
}

struct TrialRecord {
  std::string policy;
  std::string instance;
  std::size_t trial = 0;
  EpisodeMetrics metrics;
};

struct ReportRow {
  std::string policy;
  std::string instance;
  double mean_makespan = 0.0;
  double mean_tardiness = 0.0;
  double satisfaction_pct = 0.0;
  double mean_decision_ms = std::numeric_limits<double>::quiet_NaN();
  std::size_t trials = 0;
};

struct BenchmarkResult {
  std::vector<ReportRow> rows;       // sorted by (instance, policy)
  std::vector<TrialRecord> details;  // same order, trials ascending
};

inline std::uint64_t benchmark_trial_seed(std::uint64_t seed, const std::string& policy, const std::string& instance,
                                          std::size_t trial) {
  return combine_seed(combine_seed(combine_seed(seed, fnv1a(policy)), fnv1a(instance)), trial);
}

inline ReportRow aggregate(const std::string& policy, const std::string& instance,
                           const std::vector<EpisodeMetrics>& trials) {
  if (trials.empty()) throw PreconditionError("aggregate: no trials for " + policy + " on " + instance);
  const crl::TrialSummary s = crl::summarize(trials);
  return {policy, instance, s.mean_makespan, s.mean_tardiness, s.satisfaction_pct, s.mean_decision_ms, s.trials};
}

inline void sort_rows(std::vector<ReportRow>& rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
    return std::tie(a.instance, a.policy) < std::tie(b.instance, b.policy);
  });
}

inline BenchmarkResult run_benchmark(const std::vector<PolicySpec>& policies, const std::vector<Instance>& instances,
                                     const Layout& layout, std::size_t trials, std::uint64_t seed,
                                     double epsilon = 50.0, const EngineOptions& opts = {}) {
  if (trials == 0) throw PreconditionError("trials must be >= 1");
  BenchmarkResult out;
  std::vector<std::pair<ReportRow, std::vector<TrialRecord>>> cells;
  for (const auto& inst : instances)
    for (const auto& spec : policies) {
      auto policy = spec.make();
      std::vector<EpisodeMetrics> ms;
      std::vector<TrialRecord> recs;
      for (std::size_t t = 0; t < trials; ++t) {
        ms.push_back(rollout(*policy, inst, layout, benchmark_trial_seed(seed, spec.name, inst.name, t), opts, epsilon));
        recs.push_back({spec.name, inst.name, t, ms.back()});
      }
      cells.emplace_back(aggregate(spec.name, inst.name, ms), std::move(recs));
    }
  std::stable_sort(cells.begin(), cells.end(), [](const auto& a, const auto& b) {
    return std::tie(a.first.instance, a.first.policy) < std::tie(b.first.instance, b.first.policy);
  });
  for (auto& [row, recs] : cells) {
    out.rows.push_back(row);
    out.details.insert(out.details.end(), recs.begin(), recs.end());
  }
  return out;
}

inline std::string fixed(double v, int decimals) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

inline constexpr const char* kReportHeader =
    "policy,instance,mean_makespan,mean_tardiness,satisfaction_pct,mean_decision_ms,trials";
inline constexpr const char* kDetailHeader = "policy,instance,trial,makespan,tardiness,satisfied,decisions";

inline std::string emit_report(const std::vector<ReportRow>& rows, std::string_view format = "csv") {
  if (format != "csv") throw PreconditionError("unsupported report format '" + std::string(format) + "'");
  if (rows.empty()) throw PreconditionError("report has no rows");
  std::string out = std::string(kReportHeader) + "\n";
  for (const auto& r : rows) {
    out += r.policy + "," + r.instance + "," + fixed(r.mean_makespan, 1) + "," + fixed(r.mean_tardiness, 1) + "," +
           fixed(r.satisfaction_pct, 1) + "," + fixed(r.mean_decision_ms, 4) + "," + std::to_string(r.trials) + "\n";
  }
  return out;
}

inline std::string emit_details(const std::vector<TrialRecord>& recs) {
  std::string out = std::string(kDetailHeader) + "\n";
  for (const auto& r : recs) {
    out += r.policy + "," + r.instance + "," + std::to_string(r.trial) + "," + fixed(r.metrics.makespan, 6) + "," +
           fixed(r.metrics.tardiness, 6) + "," + (r.metrics.constraint_satisfied ? "1" : "0") + "," +
           std::to_string(r.metrics.decisions) + "\n";
  }
  return out;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline double parse_number(const std::string& s, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError("line " + std::to_string(line_no) + ": expected a number, got '" + s + "'");
  }
}

}  // namespace detail

/// Per-trial metrics of an agent run elsewhere, in the detail CSV layout.
/// `satisfied` and `decisions` may be empty; satisfaction is then recomputed
/// from tardiness and epsilon.
inline std::vector<TrialRecord> parse_external(const std::string& text, double epsilon = 50.0) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("external metrics: empty file");
  const auto header = detail::split_csv_line(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const char* need : {"policy", "instance", "trial", "makespan", "tardiness"})
    if (!col.count(need)) throw ParseError(std::string("external metrics: missing column '") + need + "'");
  std::vector<TrialRecord> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw ParseError("external metrics line " + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " cells");
    TrialRecord r;
    r.policy = cells[col["policy"]];
    r.instance = cells[col["instance"]];
    if (r.policy.empty() || r.instance.empty())
      throw ParseError("external metrics line " + std::to_string(line_no) + ": empty policy or instance");
    const double trial = detail::parse_number(cells[col["trial"]], line_no);
    if (trial < 0 || trial != std::floor(trial))
      throw ParseError("external metrics line " + std::to_string(line_no) + ": trial must be a non-negative integer");
    r.trial = static_cast<std::size_t>(trial);
    r.metrics.makespan = detail::parse_number(cells[col["makespan"]], line_no);
    r.metrics.tardiness = detail::parse_number(cells[col["tardiness"]], line_no);
    if (r.metrics.makespan < 0 || r.metrics.tardiness < 0)
      throw ParseError("external metrics line " + std::to_string(line_no) + ": negative metric");
    r.metrics.constraint_satisfied = r.metrics.tardiness <= epsilon;
    if (col.count("decisions") && !cells[col["decisions"]].empty())
      r.metrics.decisions = static_cast<std::size_t>(detail::parse_number(cells[col["decisions"]], line_no));
    r.metrics.decision_ms = std::numeric_limits<double>::quiet_NaN();
    out.push_back(std::move(r));
  }
  if (out.empty()) throw ParseError("external metrics: no data rows");
  return out;
}

inline std::vector<ReportRow> aggregate_records(const std::vector<TrialRecord>& recs) {
  std::map<std::pair<std::string, std::string>, std::vector<EpisodeMetrics>> groups;
  for (const auto& r : recs) groups[{r.instance, r.policy}].push_back(r.metrics);
  std::vector<ReportRow> rows;
  for (const auto& [key, ms] : groups) rows.push_back(aggregate(key.second, key.first, ms));
  sort_rows(rows);
  return rows;
}

/// Mean wall time of policy decisions (act plus rule resolution) over at
/// least `epochs` decision epochs, replaying episodes of `instance` as needed.
inline double measure_decision_time(Policy& policy, const Instance& instance, const Layout& layout,
                                    std::size_t epochs, std::uint64_t seed = 1, const EngineOptions& opts = {}) {
  if (epochs < 100) throw PreconditionError("measure_decision_time: epochs must be >= 100");
  rollout(policy, instance, layout, combine_seed(seed, ~0ULL), opts);  // warm-up, not timed
  double total_ms = 0.0;
  std::size_t decisions = 0;
  for (std::uint64_t episode = 0; decisions < epochs; ++episode) {
    const auto m = rollout(policy, instance, layout, combine_seed(seed, episode), opts);
    if (m.decisions == 0) throw PreconditionError("measure_decision_time: instance has no decision epochs");
    total_ms += m.decision_ms * static_cast<double>(m.decisions);
    decisions += m.decisions;
  }
  return total_ms / static_cast<double>(decisions);
}

}  // namespace dmh::bench
