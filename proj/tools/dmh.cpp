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

// dmh: instance generation, benchmarking, training and evaluation.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dmh/bench.hpp"
#include "dmh/crl.hpp"
#include "dmh/instance.hpp"
#include "dmh/layout.hpp"
#include "dmh/policies.hpp"

namespace fs = std::filesystem;
using namespace dmh;

namespace {

struct UsageError : Error {
  using Error::Error;
};

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream in(text);
  std::string part;
  auto number = [&](const std::string& s) -> std::uint64_t {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (s.empty() || used != s.size()) throw UsageError("bad seed '" + s + "'");
    return v;
  };
  while (std::getline(in, part, ',')) {
    if (const auto dots = part.find(".."); dots != std::string::npos) {
      const auto lo = number(part.substr(0, dots)), hi = number(part.substr(dots + 2));
      if (hi < lo) throw UsageError("empty seed range '" + part + "'");
      for (auto s = lo; s <= hi; ++s) out.push_back(s);
    } else {
      out.push_back(number(part));
    }
  }
  if (out.empty()) throw UsageError("no seeds given");
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& text) {
  if (const auto dir = fs::path(path).parent_path(); !dir.empty()) fs::create_directories(dir);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out << text;
}

std::string numbered(const std::string& prefix, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%02zu", index);
  return prefix + buf;
}

struct LoadedInstances {
  std::vector<Instance> instances;
  Layout layout;
};

// All instances of one invocation must share a layout.
LoadedInstances load_instances(const std::vector<std::string>& paths) {
  if (paths.empty()) throw UsageError("no instance files given");
  LoadedInstances out;
  std::string ref;
  for (const auto& p : paths) {
    Instance inst = load_instance_file(p);
    if (out.instances.empty()) {
      ref = inst.layout_ref;
    } else if (inst.layout_ref != ref) {
      throw ValidationError("instances reference different layouts ('" + ref + "' vs '" + inst.layout_ref + "')");
    }
    out.instances.push_back(std::move(inst));
  }
  out.layout = Layout::resolve(ref);
  for (const auto& inst : out.instances)
    if (auto vs = validate(inst, out.layout); !vs.empty())
      throw ValidationError("instance '" + inst.name + "': " + describe(vs));
  return out;
}

void write_report(const bench::BenchmarkResult& res, const std::string& out, const std::string& details) {
  const std::string report = bench::emit_report(res.rows);
  if (out.empty() || out == "-") {
    std::cout << report;
  } else {
    write_file(out, report);
  }
  if (!details.empty()) write_file(details, bench::emit_details(res.details));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic material handling simulator, dispatching baselines and constrained RL trainer"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "Generate instances from seeds");
  std::string gen_seeds, gen_dir = "data", gen_prefix = "instance", gen_layout = "bundled-default";
  std::size_t gen_start = 1;
  GeneratorParams gp;
  gen->add_option("--seeds", gen_seeds, "Seeds, e.g. 1..8 or 1,4,9")->required();
  gen->add_option("--out-dir", gen_dir, "Output directory")->capture_default_str();
  gen->add_option("--prefix", gen_prefix, "File and instance name prefix")->capture_default_str();
  gen->add_option("--start-index", gen_start, "Number of the first file")->capture_default_str();
  gen->add_option("--layout", gen_layout, "Layout file or bundled-default")->capture_default_str();
  gen->add_option("--tasks", gp.task_count, "Tasks per instance")->capture_default_str();
  gen->add_option("--vehicles", gp.vehicle_count, "Vehicle count")->capture_default_str();
  gen->add_option("--velocity", gp.velocity, "Vehicle velocity")->capture_default_str();
  gen->add_option("--gap-mean", gp.gap_mean, "Mean release interval")->capture_default_str();
  gen->add_option("--gap-std", gp.gap_std, "Release interval deviation")->capture_default_str();
  gen->add_option("--repair-time", gp.repair_time, "Breakdown repair time")->capture_default_str();
  gen->add_option("--breakdowns-min", gp.breakdowns_min)->capture_default_str();
  gen->add_option("--breakdowns-max", gp.breakdowns_max)->capture_default_str();

  // mutate
  auto* mut = app.add_subcommand("mutate", "Derive unseen instances by mutating existing ones");
  std::string mut_seeds, mut_dir = "data", mut_prefix = "instance";
  std::vector<std::string> mut_from;
  std::size_t mut_start = 9;
  MutationParams mp;
  mut->add_option("--from", mut_from, "Source instance files (one per seed, or one for all)")->required();
  mut->add_option("--seeds", mut_seeds, "Seeds, e.g. 101..108")->required();
  mut->add_option("--out-dir", mut_dir)->capture_default_str();
  mut->add_option("--prefix", mut_prefix)->capture_default_str();
  mut->add_option("--start-index", mut_start)->capture_default_str();
  mut->add_option("--arrival-fraction", mp.arrival_fraction)->capture_default_str();
  mut->add_option("--arrival-sigma", mp.arrival_sigma)->capture_default_str();
  mut->add_option("--site-fraction", mp.site_fraction)->capture_default_str();
  mut->add_option("--breakdown-fraction", mp.breakdown_fraction)->capture_default_str();

  // run
  auto* run = app.add_subcommand("run", "Evaluate policies on instances");
  std::vector<std::string> run_policies, run_instances;
  std::size_t run_trials = 30;
  std::uint64_t run_seed = 1;
  std::string run_out, run_details, run_external;
  double run_eps = 50.0;
  run->add_option("--policy", run_policies, "fcfs | edd | nvf | std | random | artifact path")->delimiter(',');
  run->add_option("--instances", run_instances, "Instance files")->delimiter(',');
  run->add_option("--trials", run_trials)->capture_default_str();
  run->add_option("--seed", run_seed)->capture_default_str();
  run->add_option("--epsilon", run_eps, "Tardiness threshold")->capture_default_str();
  run->add_option("--out", run_out, "Report CSV (stdout when omitted)");
  run->add_option("--details", run_details, "Per-trial detail CSV");
  run->add_option("--external", run_external, "Per-trial metrics of external agents to merge");

  // train
  auto* tr = app.add_subcommand("train", "Train a masked Lagrangian SAC agent");
  std::string tr_config, tr_variant = "rcpom", tr_out, tr_log;
  std::vector<std::string> tr_instances;
  std::optional<std::size_t> tr_steps;
  std::optional<std::uint64_t> tr_seed;
  tr->add_option("--config", tr_config, "JSON file with trainer fields");
  tr->add_option("--variant", tr_variant, "rcpom | rcpo-ns | l-sac | sac")->capture_default_str();
  tr->add_option("--instances", tr_instances, "Training instance files")->delimiter(',')->required();
  tr->add_option("--steps", tr_steps, "Total environment steps");
  tr->add_option("--seed", tr_seed, "Training seed");
  tr->add_option("--out", tr_out, "Policy artifact path")->required();
  tr->add_option("--log", tr_log, "Training log CSV");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a policy artifact");
  std::string ev_artifact, ev_out, ev_details;
  std::vector<std::string> ev_instances;
  std::size_t ev_trials = 30;
  std::uint64_t ev_seed = 1;
  double ev_eps = 50.0;
  ev->add_option("--artifact", ev_artifact)->required();
  ev->add_option("--instances", ev_instances)->delimiter(',')->required();
  ev->add_option("--trials", ev_trials)->capture_default_str();
  ev->add_option("--seed", ev_seed)->capture_default_str();
  ev->add_option("--epsilon", ev_eps)->capture_default_str();
  ev->add_option("--out", ev_out);
  ev->add_option("--details", ev_details);

  // inspect
  auto* ins = app.add_subcommand("inspect", "Describe an instance or layout file");
  std::string ins_path;
  ins->add_option("path", ins_path, "Instance/layout JSON, or bundled-default")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) {
      const Layout layout = Layout::resolve(gen_layout);
      gp.layout_ref = gen_layout;
      std::size_t index = gen_start;
      for (auto seed : parse_seeds(gen_seeds)) {
        gp.name = numbered(gen_prefix, index++);
        const Instance inst = generate_instance(gp, layout, seed);
        const std::string path = (fs::path(gen_dir) / (inst.name + ".json")).string();
        write_file(path, save_instance(inst));
        std::cout << path << "\n";
      }
    } else if (*mut) {
      const auto seeds = parse_seeds(mut_seeds);
      if (mut_from.size() != 1 && mut_from.size() != seeds.size())
        throw UsageError("--from needs one file or one per seed");
      std::size_t index = mut_start;
      for (std::size_t i = 0; i < seeds.size(); ++i) {
        auto loaded = load_instances({mut_from[mut_from.size() == 1 ? 0 : i]});
        Instance inst = mutate_instance(loaded.instances[0], loaded.layout, seeds[i], mp);
        inst.name = numbered(mut_prefix, index++);
        const std::string path = (fs::path(mut_dir) / (inst.name + ".json")).string();
        write_file(path, save_instance(inst));
        std::cout << path << "\n";
      }
    } else if (*run) {
      if (run_trials == 0) throw UsageError("--trials must be >= 1");
      bench::BenchmarkResult res;
      if (!run_policies.empty()) {
        auto loaded = load_instances(run_instances);
        std::vector<bench::PolicySpec> specs;
        for (const auto& p : run_policies) specs.push_back(bench::policy_spec(p));
        res = bench::run_benchmark(specs, loaded.instances, loaded.layout, run_trials, run_seed, run_eps);
      } else if (run_external.empty()) {
        throw UsageError("run needs --policy or --external");
      }
      if (!run_external.empty()) {
        auto ext = bench::parse_external(read_file(run_external), run_eps);
        for (auto& r : bench::aggregate_records(ext)) res.rows.push_back(r);
        res.details.insert(res.details.end(), ext.begin(), ext.end());
        bench::sort_rows(res.rows);
      }
      write_report(res, run_out, run_details);
    } else if (*tr) {
      crl::TrainerConfig cfg;
      if (!tr_config.empty()) {
        nlohmann::json doc;
        try {
          doc = nlohmann::json::parse(read_file(tr_config));
          crl::from_json(doc, cfg);
        } catch (const nlohmann::json::exception& e) {
          throw ParseError("config '" + tr_config + "': " + e.what());
        }
      }
      cfg = crl::apply_variant(cfg, tr_variant);
      if (tr_steps) cfg.total_steps = *tr_steps;
      if (tr_seed) cfg.seed = *tr_seed;
      if (auto vs = crl::check(cfg); !vs.empty()) throw UsageError("trainer config: " + describe(vs));
      auto loaded = load_instances(tr_instances);
      crl::DmhEnv env(loaded.instances, loaded.layout);
      auto evaluator = crl::instance_evaluator(loaded.instances, loaded.layout, cfg.eval_trials, crl::selection_seed(cfg.seed), cfg.epsilon,
                                               cfg.greedy_eval);
      std::ofstream log;
      if (!tr_log.empty()) {
        log.open(tr_log);
        if (!log) throw Error("cannot write '" + tr_log + "'");
        log << crl::format_log_header() << "\n";
      }
      std::cerr << crl::format_log_header() << "\n";
      auto result = crl::train(cfg, env, evaluator, [&](const crl::LogRecord& r) {
        std::cerr << crl::format_log(r) << "\n";
        if (log) log << crl::format_log(r) << "\n" << std::flush;
      });
      const double lambda = result.lambda_history.empty() ? cfg.lambda0 : result.lambda_history.back();
      crl::save_artifact(crl::make_artifact(result.best, cfg, lambda, loaded.instances[0].vehicles.size()), tr_out);
      std::cout << tr_out << "\n";
    } else if (*ev) {
      if (ev_trials == 0) throw UsageError("--trials must be >= 1");
      auto loaded = load_instances(ev_instances);
      const auto art = crl::load_artifact(ev_artifact);
      const std::string name = fs::path(ev_artifact).stem().string();
      bench::BenchmarkResult res;
      for (const auto& inst : loaded.instances) {
        auto s = crl::evaluate(art, inst, loaded.layout, ev_trials, ev_seed, ev_eps);
        res.rows.push_back(bench::aggregate(name, inst.name, s.episodes));
        for (std::size_t t = 0; t < s.episodes.size(); ++t) res.details.push_back({name, inst.name, t, s.episodes[t]});
      }
      write_report(res, ev_out, ev_details);
    } else if (*ins) {
      if (ins_path == "bundled-default") {
        std::cout << Layout::bundled_default().to_json().dump(2) << "\n";
        return 0;
      }
      const auto doc = nlohmann::json::parse(read_file(ins_path), nullptr, false);
      if (doc.is_discarded()) throw ParseError("'" + ins_path + "' is not JSON");
      if (doc.contains("sites")) {
        const Layout layout = Layout::load_file(ins_path);
        std::cout << "layout " << ins_path << ": " << layout.size() << " sites, " << layout.edges().size()
                  << " edges\n";
        for (auto kind : {SiteKind::Workstation, SiteKind::Warehouse, SiteKind::Carport, SiteKind::Junction})
          std::cout << "  " << to_string(kind) << ": " << layout.sites_of_kind(kind).size() << "\n";
      } else {
        const auto loaded = load_instances({ins_path});
        const Instance& inst = loaded.instances[0];
        std::cout << "instance " << inst.name << " (layout " << inst.layout_ref << ", seed " << inst.seed_of_origin
                  << ")\n  tasks: " << inst.tasks.size() << "\n  vehicles: " << inst.vehicles.size()
                  << "\n  breakdowns: " << inst.breakdowns.size() << "\n";
        for (std::size_t i = 0; i < inst.tasks.size(); ++i) {
          const Task& t = inst.tasks[i];
          std::printf("  task %2zu  %-10s -> %-10s  arrival %9.2f  expiry %8.2f\n", i, t.pickup.c_str(),
                      t.delivery.c_str(), t.arrival, t.expiry);
        }
        for (std::size_t v = 0; v < inst.vehicles.size(); ++v)
          std::printf("  vehicle %zu  velocity %.3f  repair %.1f  parking %s\n", v, inst.vehicles[v].velocity,
                      inst.vehicles[v].repair_time, inst.vehicles[v].parking.c_str());
        for (const auto& b : inst.breakdowns)
          std::printf("  breakdown vehicle %zu at %.2f for %.1f\n", b.vehicle, b.time, inst.repair_duration(b));
      }
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const PreconditionError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
