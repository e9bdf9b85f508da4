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
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dmh/layout.hpp"
#include "dmh/util.hpp"

namespace dmh {

struct Task {
  std::string pickup;
  std::string delivery;
  double arrival = 0.0;
  double expiry = 0.0;  // window length after arrival

  bool operator==(const Task&) const = default;
};

struct VehicleSpec {
  double velocity = 1.0;
  double repair_time = 0.0;
  std::string parking;

  bool operator==(const VehicleSpec&) const = default;
};

/// Scheduled breakdown. `duration` overrides the vehicle's repair time.
struct BreakdownEvent {
  std::size_t vehicle = 0;
  double time = 0.0;
  std::optional<double> duration;

  bool operator==(const BreakdownEvent&) const = default;
};

struct Instance {
  std::string name;
  std::string layout_ref = "bundled-default";
  std::vector<Task> tasks;
  std::vector<VehicleSpec> vehicles;
  std::vector<BreakdownEvent> breakdowns;
  std::uint64_t seed_of_origin = 0;

  bool operator==(const Instance&) const = default;

  double repair_duration(const BreakdownEvent& e) const {
    return e.duration ? *e.duration : vehicles.at(e.vehicle).repair_time;
  }
};

struct Violation {
  std::string path;  // e.g. "tasks[3].delivery"
  std::string message;
};

namespace detail {

inline void structural_violations(const Instance& inst, std::vector<Violation>& out) {
  if (inst.vehicles.empty()) out.push_back({"vehicles", "at least one vehicle is required"});
  for (std::size_t i = 0; i < inst.tasks.size(); ++i) {
    const Task& t = inst.tasks[i];
    const std::string p = "tasks[" + std::to_string(i) + "]";
    if (t.pickup == t.delivery) out.push_back({p + ".delivery", "pickup and delivery must differ"});
    if (!(t.arrival >= 0.0) || !std::isfinite(t.arrival)) out.push_back({p + ".arrival", "arrival must be >= 0"});
    if (!(t.expiry > 0.0) || !std::isfinite(t.expiry)) out.push_back({p + ".expiry", "expiry must be > 0"});
  }
  for (std::size_t i = 0; i < inst.vehicles.size(); ++i) {
    const VehicleSpec& v = inst.vehicles[i];
    const std::string p = "vehicles[" + std::to_string(i) + "]";
    if (!(v.velocity > 0.0) || !std::isfinite(v.velocity)) out.push_back({p + ".velocity", "velocity must be > 0"});
    if (!(v.repair_time >= 0.0) || !std::isfinite(v.repair_time))
      out.push_back({p + ".repair_time", "repair_time must be >= 0"});
  }
  for (std::size_t i = 0; i < inst.breakdowns.size(); ++i) {
    const BreakdownEvent& b = inst.breakdowns[i];
    const std::string p = "breakdowns[" + std::to_string(i) + "]";
    if (b.vehicle >= inst.vehicles.size())
      out.push_back({p + ".vehicle", "vehicle index " + std::to_string(b.vehicle) + " out of range"});
    if (!(b.time >= 0.0) || !std::isfinite(b.time)) out.push_back({p + ".time", "time must be >= 0"});
    if (b.duration && (!(*b.duration > 0.0) || !std::isfinite(*b.duration)))
      out.push_back({p + ".duration", "duration must be > 0"});
  }
}

// Quanta like 0.01 are not exact in binary; dividing by the integer
// reciprocal gives the closest double to the decimal value.
inline double snap(double steps, double quantum) {
  const double inv = std::round(1.0 / quantum);
  if (inv >= 1.0 && std::abs(inv * quantum - 1.0) < 1e-12) return steps / inv;
  return steps * quantum;
}
inline double round_to(double x, double quantum) { return snap(std::round(x / quantum), quantum); }
inline double ceil_to(double x, double quantum) { return snap(std::ceil(x / quantum - 1e-9), quantum); }

}  // namespace detail

/// All invariant violations of `inst` against `layout`; empty means valid.
inline std::vector<Violation> validate(const Instance& inst, const Layout& layout) {
  std::vector<Violation> out;
  detail::structural_violations(inst, out);
  for (std::size_t i = 0; i < inst.tasks.size(); ++i) {
    const Task& t = inst.tasks[i];
    const std::string p = "tasks[" + std::to_string(i) + "]";
    if (!layout.contains(t.pickup)) {
      out.push_back({p + ".pickup", "unknown site '" + t.pickup + "'"});
    } else if (layout.site(layout.index_of(t.pickup)).kind != SiteKind::Workstation) {
      out.push_back({p + ".pickup", "pickup must be a workstation"});
    }
    if (!layout.contains(t.delivery)) {
      out.push_back({p + ".delivery", "unknown site '" + t.delivery + "'"});
    } else {
      const SiteKind k = layout.site(layout.index_of(t.delivery)).kind;
      if (k != SiteKind::Workstation && k != SiteKind::Warehouse)
        out.push_back({p + ".delivery", "delivery must be a workstation or the warehouse"});
    }
  }
  for (std::size_t i = 0; i < inst.vehicles.size(); ++i) {
    const VehicleSpec& v = inst.vehicles[i];
    const std::string p = "vehicles[" + std::to_string(i) + "].parking";
    if (!layout.contains(v.parking)) {
      out.push_back({p, "unknown site '" + v.parking + "'"});
    } else if (layout.site(layout.index_of(v.parking)).kind != SiteKind::Carport) {
      out.push_back({p, "parking must be a carport"});
    }
  }
  return out;
}

inline std::string describe(const std::vector<Violation>& vs) {
  std::string s;
  for (const auto& v : vs) {
    if (!s.empty()) s += "; ";
    s += v.path + ": " + v.message;
  }
  return s;
}

// ---------------------------------------------------------------------------
// File format

inline nlohmann::json to_json(const Instance& inst) {
  nlohmann::json doc;
  doc["version"] = 1;
  doc["name"] = inst.name;
  doc["layout_ref"] = inst.layout_ref;
  doc["vehicles"] = nlohmann::json::array();
  for (const auto& v : inst.vehicles)
    doc["vehicles"].push_back({{"velocity", v.velocity}, {"repair_time", v.repair_time}, {"parking", v.parking}});
  doc["tasks"] = nlohmann::json::array();
  for (const auto& t : inst.tasks)
    doc["tasks"].push_back(
        {{"pickup", t.pickup}, {"delivery", t.delivery}, {"arrival", t.arrival}, {"expiry", t.expiry}});
  doc["breakdowns"] = nlohmann::json::array();
  for (const auto& b : inst.breakdowns) {
    nlohmann::json e = {{"vehicle", b.vehicle}, {"time", b.time}};
    if (b.duration) e["duration"] = *b.duration;
    doc["breakdowns"].push_back(std::move(e));
  }
  doc["seed_of_origin"] = inst.seed_of_origin;
  return doc;
}

inline std::string save_instance(const Instance& inst) { return to_json(inst).dump(2) + "\n"; }

inline Instance instance_from_json(const nlohmann::json& doc) {
  Instance inst;
  std::string where = "document";
  try {
    if (!doc.is_object()) throw ParseError("instance document must be an object");
    if (doc.contains("version") && doc.at("version").get<int>() != 1)
      throw ParseError("version: unsupported instance version " + doc.at("version").dump());
    inst.name = doc.value("name", std::string{});
    inst.layout_ref = doc.value("layout_ref", std::string("bundled-default"));
    inst.seed_of_origin = doc.value("seed_of_origin", std::uint64_t{0});
    const auto& vehicles = doc.at("vehicles");
    for (std::size_t i = 0; i < vehicles.size(); ++i) {
      where = "vehicles[" + std::to_string(i) + "]";
      const auto& v = vehicles.at(i);
      inst.vehicles.push_back(
          {v.at("velocity").get<double>(), v.at("repair_time").get<double>(), v.at("parking").get<std::string>()});
    }
    const auto& tasks = doc.at("tasks");
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      where = "tasks[" + std::to_string(i) + "]";
      const auto& t = tasks.at(i);
      inst.tasks.push_back({t.at("pickup").get<std::string>(), t.at("delivery").get<std::string>(),
                            t.at("arrival").get<double>(), t.at("expiry").get<double>()});
    }
    if (doc.contains("breakdowns")) {
      const auto& bds = doc.at("breakdowns");
      for (std::size_t i = 0; i < bds.size(); ++i) {
        where = "breakdowns[" + std::to_string(i) + "]";
        const auto& b = bds.at(i);
        BreakdownEvent e;
        e.vehicle = b.at("vehicle").get<std::size_t>();
        e.time = b.at("time").get<double>();
        if (b.contains("duration") && !b.at("duration").is_null()) e.duration = b.at("duration").get<double>();
        inst.breakdowns.push_back(e);
      }
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError("instance: " + where + ": " + ex.what());
  }
  std::vector<Violation> vs;
  detail::structural_violations(inst, vs);
  if (!vs.empty()) throw ValidationError("instance '" + inst.name + "': " + describe(vs));
  return inst;
}

inline Instance load_instance(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(std::string("instance: ") + ex.what());
  }
  return instance_from_json(doc);
}

inline Instance load_instance_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open instance file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return load_instance(buf.str());
}

// ---------------------------------------------------------------------------
// Generation and mutation

struct GeneratorParams {
  std::string name = "instance";
  std::string layout_ref = "bundled-default";
  std::size_t task_count = 40;
  std::size_t max_tasks_per_epoch = 6;
  double gap_mean = 60.0;  // release interval ~ N(gap_mean, gap_std), clamped at 0
  double gap_std = 50.0;
  double handling_min = 20.0;  // due-time allowance ~ U(handling_min, handling_max)
  double handling_max = 70.0;
  double slack = 1.5;  // multiplier on the pickup->delivery travel time
  std::size_t vehicle_count = 2;
  double velocity = 1.25;
  double repair_time = 60.0;
  std::size_t breakdowns_min = 1;
  std::size_t breakdowns_max = 2;
  double time_quantum = 0.01;  // generated times are rounded to this grid
};

inline std::vector<Violation> check(const GeneratorParams& p) {
  std::vector<Violation> out;
  auto bad = [&](bool cond, const char* field, const char* msg) {
    if (cond) out.push_back({field, msg});
  };
  bad(p.max_tasks_per_epoch == 0, "max_tasks_per_epoch", "must be >= 1");
  bad(!(p.gap_mean >= 0.0), "gap_mean", "must be >= 0");
  bad(!(p.gap_std >= 0.0), "gap_std", "must be >= 0");
  bad(!(p.handling_min >= 0.0) || !(p.handling_max >= p.handling_min), "handling_min",
      "need 0 <= handling_min <= handling_max");
  bad(!(p.slack >= 1.0), "slack", "must be >= 1");
  bad(p.vehicle_count == 0, "vehicle_count", "must be >= 1");
  bad(!(p.velocity > 0.0), "velocity", "must be > 0");
  bad(!(p.repair_time > 0.0), "repair_time", "must be > 0");
  bad(p.breakdowns_max < p.breakdowns_min, "breakdowns_max", "must be >= breakdowns_min");
  bad(!(p.time_quantum > 0.0), "time_quantum", "must be > 0");
  return out;
}

namespace detail {

struct SitePools {
  std::vector<SiteIndex> workstations;
  std::vector<SiteIndex> destinations;  // workstations and warehouses
  std::vector<SiteIndex> carports;
};

inline SitePools site_pools(const Layout& layout) {
  SitePools p;
  p.workstations = layout.sites_of_kind(SiteKind::Workstation);
  p.destinations = p.workstations;
  for (SiteIndex w : layout.sites_of_kind(SiteKind::Warehouse)) p.destinations.push_back(w);
  p.carports = layout.sites_of_kind(SiteKind::Carport);
  if (p.workstations.empty()) throw ValidationError("layout has no workstation");
  if (p.destinations.size() < 2) throw ValidationError("layout needs at least two possible delivery sites");
  if (p.carports.empty()) throw ValidationError("layout has no carport");
  return p;
}

inline std::pair<SiteIndex, SiteIndex> draw_sites(const SitePools& pools, Rng& rng) {
  const SiteIndex s = pools.workstations[uniform_index(rng, pools.workstations.size())];
  SiteIndex e = s;
  while (e == s) e = pools.destinations[uniform_index(rng, pools.destinations.size())];
  return {s, e};
}

inline double slowest_velocity(const Instance& inst) {
  double v = std::numeric_limits<double>::infinity();
  for (const auto& spec : inst.vehicles) v = std::min(v, spec.velocity);
  return v;
}

inline double draw_expiry(const Layout& layout, SiteIndex s, SiteIndex e, double velocity, double slack,
                          double handling_min, double handling_max, double quantum, Rng& rng) {
  std::uniform_real_distribution<double> handling(handling_min, handling_max);
  const double window = layout.travel_time(s, e, velocity) * slack + handling(rng);
  return ceil_to(window, quantum);
}

inline void draw_breakdown_times(Instance& inst, std::vector<std::size_t> which, double quantum, Rng& rng) {
  double horizon = 0.0;
  for (const auto& t : inst.tasks) horizon = std::max(horizon, t.arrival);
  std::uniform_real_distribution<double> when(0.0, std::max(horizon, quantum));
  for (std::size_t k : which) inst.breakdowns[k].time = round_to(when(rng), quantum);
}

}  // namespace detail

/// Random instance; a pure function of (params, layout, seed).
inline Instance generate_instance(const GeneratorParams& params, const Layout& layout, std::uint64_t seed) {
  if (auto vs = check(params); !vs.empty()) throw PreconditionError("generator: " + describe(vs));
  const auto pools = detail::site_pools(layout);
  Rng rng(mix_seed(seed));

  Instance inst;
  inst.name = params.name;
  inst.layout_ref = params.layout_ref;
  inst.seed_of_origin = seed;
  for (std::size_t i = 0; i < params.vehicle_count; ++i)
    inst.vehicles.push_back({params.velocity, params.repair_time, layout.site(pools.carports.front()).id});

  // Release gaps are drawn per task; a gap clamped to zero puts the task in
  // the previous task's epoch, capped at max_tasks_per_epoch.
  std::normal_distribution<double> gap(params.gap_mean, params.gap_std);
  double clock = std::max(gap(rng), 0.0);
  std::size_t in_epoch = 0;
  while (inst.tasks.size() < params.task_count) {
    if (!inst.tasks.empty()) {
      double g = std::max(gap(rng), 0.0);
      while (g == 0.0 && in_epoch >= params.max_tasks_per_epoch) g = std::max(gap(rng), 0.0);
      clock += g;
      in_epoch = g == 0.0 ? in_epoch : 0;
    }
    ++in_epoch;
    auto [s, e] = detail::draw_sites(pools, rng);
    const double expiry = detail::draw_expiry(layout, s, e, params.velocity, params.slack, params.handling_min,
                                              params.handling_max, params.time_quantum, rng);
    inst.tasks.push_back({layout.site(s).id, layout.site(e).id, detail::round_to(clock, params.time_quantum), expiry});
  }

  if (!inst.tasks.empty()) {
    std::uniform_int_distribution<std::size_t> count(params.breakdowns_min, params.breakdowns_max);
    const std::size_t nb = count(rng);
    std::vector<std::size_t> idx;
    for (std::size_t k = 0; k < nb; ++k) {
      inst.breakdowns.push_back({uniform_index(rng, inst.vehicles.size()), 0.0, std::nullopt});
      idx.push_back(k);
    }
    detail::draw_breakdown_times(inst, idx, params.time_quantum, rng);
    std::sort(inst.breakdowns.begin(), inst.breakdowns.end(),
              [](const auto& a, const auto& b) { return a.time < b.time; });
  }
  return inst;
}

struct MutationParams {
  double arrival_fraction = 0.3;
  double arrival_sigma = 20.0;
  double site_fraction = 0.2;
  double breakdown_fraction = 1.0;
  double slack = 1.5;
  double handling_min = 20.0;
  double handling_max = 70.0;
  double time_quantum = 0.01;
};

/// Perturbed copy of `inst` for unseen-instance evaluation. Task and
/// vehicle counts are preserved; name and seed_of_origin are left to the
/// caller. Pure in (inst, layout, seed, params).
inline Instance mutate_instance(const Instance& inst, const Layout& layout, std::uint64_t seed,
                                const MutationParams& params = {}) {
  if (auto vs = validate(inst, layout); !vs.empty()) throw ValidationError("mutate: " + describe(vs));
  Instance out = inst;
  Rng rng(mix_seed(seed ^ 0x6d75746174696f6eULL));
  const std::size_t m = out.tasks.size();

  auto choose = [&](double fraction) {
    const std::size_t k = std::min<std::size_t>(m, static_cast<std::size_t>(std::ceil(fraction * m - 1e-12)));
    std::vector<std::size_t> all(m);
    std::iota(all.begin(), all.end(), 0);
    for (std::size_t i = 0; i < k; ++i) std::swap(all[i], all[i + uniform_index(rng, m - i)]);
    all.resize(k);
    std::sort(all.begin(), all.end());
    return all;
  };

  std::normal_distribution<double> jitter(0.0, params.arrival_sigma);
  for (std::size_t i : choose(params.arrival_fraction)) {
    Task& t = out.tasks[i];
    double moved = t.arrival;
    for (int attempt = 0; attempt < 1000 && moved == t.arrival; ++attempt)
      moved = detail::round_to(std::max(t.arrival + jitter(rng), 0.0), params.time_quantum);
    if (moved == t.arrival) moved = t.arrival + params.time_quantum;
    t.arrival = moved;
  }

  if (params.site_fraction > 0.0) {
    const auto pools = detail::site_pools(layout);
    const double velocity = detail::slowest_velocity(out);
    for (std::size_t i : choose(params.site_fraction)) {
      Task& t = out.tasks[i];
      auto [s, e] = detail::draw_sites(pools, rng);
      t.pickup = layout.site(s).id;
      t.delivery = layout.site(e).id;
      t.expiry = detail::draw_expiry(layout, s, e, velocity, params.slack, params.handling_min, params.handling_max,
                                     params.time_quantum, rng);
    }
  }

  if (params.breakdown_fraction > 0.0 && !out.breakdowns.empty()) {
    const std::size_t nb = out.breakdowns.size();
    const std::size_t k =
        std::min<std::size_t>(nb, static_cast<std::size_t>(std::ceil(params.breakdown_fraction * nb - 1e-12)));
    std::vector<std::size_t> which(k);
    std::iota(which.begin(), which.end(), 0);
    detail::draw_breakdown_times(out, which, params.time_quantum, rng);
  }
  return out;
}

}  // namespace dmh
