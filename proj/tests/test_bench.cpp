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

#include <gtest/gtest.h>

#include "dmh/bench.hpp"

using namespace dmh;
using namespace dmh::bench;

namespace {

std::vector<Instance> two_instances() {
  GeneratorParams gp;
  gp.task_count = 10;
  gp.name = "alpha";
  Instance a = generate_instance(gp, Layout::bundled_default(), 3);
  gp.name = "beta";
  Instance b = generate_instance(gp, Layout::bundled_default(), 4);
  return {b, a};
}

std::vector<PolicySpec> baselines() {
  std::vector<PolicySpec> out;
  for (const char* p : {"random", "fcfs", "edd", "nvf", "std"}) out.push_back(policy_spec(p));
  return out;
}

// Report without the timing column.
std::string strip_timing(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) {
    auto cells = bench::detail::split_csv_line(line);
    cells.erase(cells.begin() + 5);
    for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + cells[i];
    out += "\n";
  }
  return out;
}

}  // namespace

TEST(Report, RoundsToOneDecimal) {
  ReportRow r{"fcfs", "instance01", 1840.04, 12.26, 93.333, 0.01234567, 30};
  EXPECT_EQ(emit_report({r}), std::string(kReportHeader) + "\nfcfs,instance01,1840.0,12.3,93.3,0.0123,30\n");
  r.mean_decision_ms = std::numeric_limits<double>::quiet_NaN();
  EXPECT_NE(emit_report({r}).find(",NA,30"), std::string::npos);
}

TEST(Report, RejectsEmptyAndUnknownFormat) {
  EXPECT_THROW(emit_report({}), PreconditionError);
  ReportRow r{"fcfs", "x", 1, 1, 100, 0, 1};
  EXPECT_THROW(emit_report({r}, "json"), PreconditionError);
}

TEST(Benchmark, RowsSortedAndComplete) {
  const auto res = run_benchmark(baselines(), two_instances(), Layout::bundled_default(), 4, 7);
  ASSERT_EQ(res.rows.size(), 10u);
  EXPECT_EQ(res.details.size(), 40u);
  EXPECT_EQ(res.rows.front().instance, "alpha");
  EXPECT_EQ(res.rows.front().policy, "edd");
  for (std::size_t i = 1; i < res.rows.size(); ++i)
    EXPECT_LE(std::tie(res.rows[i - 1].instance, res.rows[i - 1].policy),
              std::tie(res.rows[i].instance, res.rows[i].policy));
  for (const auto& r : res.rows) EXPECT_EQ(r.trials, 4u);
}

TEST(Benchmark, DeterministicApartFromTiming) {
  const auto a = run_benchmark(baselines(), two_instances(), Layout::bundled_default(), 5, 11);
  const auto b = run_benchmark(baselines(), two_instances(), Layout::bundled_default(), 5, 11);
  EXPECT_EQ(strip_timing(emit_report(a.rows)), strip_timing(emit_report(b.rows)));
  EXPECT_EQ(emit_details(a.details), emit_details(b.details));
  const auto c = run_benchmark(baselines(), two_instances(), Layout::bundled_default(), 5, 12);
  EXPECT_NE(emit_details(a.details), emit_details(c.details));
}

TEST(Benchmark, SeedsIndependentOfPolicyOrder) {
  auto p = baselines();
  const auto a = run_benchmark(p, two_instances(), Layout::bundled_default(), 3, 2);
  std::reverse(p.begin(), p.end());
  const auto b = run_benchmark(p, two_instances(), Layout::bundled_default(), 3, 2);
  EXPECT_EQ(emit_details(a.details), emit_details(b.details));
}

TEST(Benchmark, SatisfactionMatchesDetails) {
  const auto res = run_benchmark(baselines(), two_instances(), Layout::bundled_default(), 6, 3, 20.0);
  for (const auto& row : res.rows) {
    std::size_t ok = 0, n = 0;
    double ms = 0;
    for (const auto& d : res.details)
      if (d.policy == row.policy && d.instance == row.instance) {
        ++n;
        ms += d.metrics.makespan;
        ok += d.metrics.tardiness <= 20.0;
        EXPECT_EQ(d.metrics.constraint_satisfied, d.metrics.tardiness <= 20.0);
      }
    ASSERT_EQ(n, 6u);
    EXPECT_NEAR(row.satisfaction_pct, 100.0 * double(ok) / 6.0, 1e-12);
    EXPECT_NEAR(row.mean_makespan, ms / 6.0, 1e-9);
  }
}

TEST(Benchmark, RejectsZeroTrialsAndUnknownPolicy) {
  EXPECT_THROW(run_benchmark(baselines(), two_instances(), Layout::bundled_default(), 0, 1), PreconditionError);
  EXPECT_THROW(policy_spec("no-such-policy.bin"), ParseError);
}

TEST(External, ParsesAndAggregates) {
  const std::string text =
      "policy,instance,trial,makespan,tardiness\n"
      "ga,i2,0,100,10\n"
      "ga,i2,1,200,70\n"
      "ga,i1,0,50.5,0\n";
  const auto recs = parse_external(text);
  ASSERT_EQ(recs.size(), 3u);
  EXPECT_TRUE(recs[0].metrics.constraint_satisfied);
  EXPECT_FALSE(recs[1].metrics.constraint_satisfied);
  const auto rows = aggregate_records(recs);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].instance, "i1");
  EXPECT_EQ(rows[1].mean_makespan, 150.0);
  EXPECT_EQ(rows[1].mean_tardiness, 40.0);
  EXPECT_EQ(rows[1].satisfaction_pct, 50.0);
  EXPECT_NE(emit_report(rows).find("ga,i2,150.0,40.0,50.0,NA,2"), std::string::npos);
}

TEST(External, RejectsMalformedInput) {
  EXPECT_THROW(parse_external(""), ParseError);
  EXPECT_THROW(parse_external("policy,instance,trial,makespan\nga,i,0,1\n"), ParseError);
  EXPECT_THROW(parse_external("policy,instance,trial,makespan,tardiness\nga,i,0,abc,1\n"), ParseError);
  EXPECT_THROW(parse_external("policy,instance,trial,makespan,tardiness\nga,i,0,1\n"), ParseError);
  EXPECT_THROW(parse_external("policy,instance,trial,makespan,tardiness\nga,i,0,-1,1\n"), ParseError);
  EXPECT_THROW(parse_external("policy,instance,trial,makespan,tardiness\n"), ParseError);
}

TEST(Timing, MeasuresEnoughEpochs) {
  const Instance inst = two_instances()[0];
  auto fcfs = make_baseline("fcfs", 1);
  const double ms = measure_decision_time(*fcfs, inst, Layout::bundled_default(), 200);
  EXPECT_GT(ms, 0.0);
  EXPECT_LT(ms, 10.0);
  EXPECT_THROW(measure_decision_time(*fcfs, inst, Layout::bundled_default(), 99), PreconditionError);
}
