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
#include <limits>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <vector>

#include "dmh/instance.hpp"
#include "dmh/layout.hpp"
#include "dmh/rules.hpp"
#include "dmh/util.hpp"

namespace dmh {

enum class VehicleStatus { Idle = 0, Working = 1, Broken = 2 };

inline std::string_view to_string(VehicleStatus s) {
  switch (s) {
    case VehicleStatus::Idle: return "idle";
    case VehicleStatus::Working: return "working";
    case VehicleStatus::Broken: return "broken";
  }
  return "?";
}

/// A (rule, vehicle) pair. Flat encoding is `rule * n + vehicle`.
struct Action {
  int rule = 0;
  std::size_t vehicle = 0;

  std::size_t flat(std::size_t n) const { return static_cast<std::size_t>(rule) * n + vehicle; }
  static Action from_flat(std::size_t index, std::size_t n) { return {static_cast<int>(index / n), index % n}; }
  bool operator==(const Action&) const = default;
};

/// One finished task in a vehicle's history. `task` is empty for the
/// starting entry (leaving the parking site at time 0).
struct HistoryEntry {
  std::optional<std::size_t> task;
  double finish_time = 0.0;
};

struct VehicleState {
  VehicleSpec spec;
  VehicleStatus status = VehicleStatus::Idle;
  Position position;
  std::optional<std::size_t> current_task;
  std::vector<HistoryEntry> history;
  std::optional<double> repair_until;
};

struct Observation {
  std::vector<double> features;
  std::vector<Action> valid_actions;
  std::vector<std::uint8_t> mask;  // length kRuleCount * n, indexed by Action::flat
  double time = 0.0;
  bool terminal = false;
};

struct StepInfo {
  Action action;
  std::size_t task = 0;  // index into Instance::tasks of the assigned task
  std::size_t events_processed = 0;
};

struct StepOutcome {
  Observation observation;
  double reward = 0.0;
  double cost = 0.0;
  bool terminal = false;
  StepInfo info;
};

struct EpisodeMetrics {
  double makespan = 0.0;
  double tardiness = 0.0;
  std::vector<double> per_task_delay;
  bool constraint_satisfied = true;
  std::size_t decisions = 0;
  double decision_ms = 0.0;  // mean wall time per decision
  bool truncated = false;
};

struct EngineOptions {
  std::size_t k_max = 6;         // task slots in the feature vector
  double feature_scale = 1000.0;  // divisor for every time/distance feature
  RuleOptions rules;
  bool log_events = false;
  double horizon_factor = 100.0;
};

inline std::size_t feature_size(std::size_t n, const EngineOptions& opts = {}) { return 1 + 3 * opts.k_max + 4 * n; }

/// Stable identifier of the feature layout, stored in policy artifacts.
inline std::uint64_t feature_layout_hash(std::size_t n, const EngineOptions& opts = {}) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "dmh-features:v1;kmax=%zu;n=%zu;scale=%.17g", opts.k_max, n, opts.feature_scale);
  return fnv1a(buf);
}

// ---------------------------------------------------------------------------
// Free functions over a simulation snapshot

/// {(d, v) : v idle} when anything is staged, ordered by flat index.
inline std::vector<Action> valid_actions(std::span<const VehicleState> vehicles, std::size_t staged) {
  std::vector<Action> out;
  if (staged == 0) return out;
  for (int d = 0; d < kRuleCount; ++d)
    for (std::size_t v = 0; v < vehicles.size(); ++v)
      if (vehicles[v].status == VehicleStatus::Idle) out.push_back({d, v});
  return out;
}

/// State encoding: [|U|] ++ k_max task slots [remaining, waiting, d(s,e)]
/// ++ per vehicle [one-hot status, min over U of time to pickup then
/// delivery]. `staged` must be in arrival order.
inline std::vector<double> featurize(std::span<const TaskView> staged, std::span<const VehicleState> vehicles,
                                     const Layout& layout, double now, const EngineOptions& opts = {}) {
  std::vector<double> f;
  f.reserve(feature_size(vehicles.size(), opts));
  const double scale = opts.feature_scale;
  f.push_back(static_cast<double>(staged.size()));
  for (std::size_t k = 0; k < opts.k_max; ++k) {
    if (k < staged.size()) {
      const TaskView& t = staged[k];
      f.push_back((t.arrival + t.expiry - now) / scale);
      f.push_back((now - t.arrival) / scale);
      f.push_back(layout.distance(t.pickup, t.delivery) / scale);
    } else {
      f.insert(f.end(), 3, 0.0);
    }
  }
  for (const VehicleState& v : vehicles) {
    for (int s = 0; s < 3; ++s) f.push_back(static_cast<int>(v.status) == s ? 1.0 : 0.0);
    double best = 0.0;
    if (!staged.empty()) {
      best = std::numeric_limits<double>::infinity();
      for (const TaskView& t : staged) {
        const double d = layout.distance(v.position, t.pickup) + layout.distance(t.pickup, t.delivery);
        best = std::min(best, d / v.spec.velocity);
      }
    }
    f.push_back(best / scale);
  }
  return f;
}

/// Latest finish time over all vehicle histories (0 when nothing was served).
inline double makespan(std::span<const VehicleState> vehicles) {
  double fm = 0.0;
  for (const auto& v : vehicles)
    if (!v.history.empty()) fm = std::max(fm, v.history.back().finish_time);
  return fm;
}

/// Mean clamped lateness over all `tasks`; the starting entries contribute 0.
inline double tardiness(std::span<const VehicleState> vehicles, std::span<const TaskView> tasks) {
  if (tasks.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& v : vehicles)
    for (const auto& h : v.history)
      if (h.task) {
        const TaskView& t = tasks[*h.task];
        sum += std::max(h.finish_time - t.expiry - t.arrival, 0.0);
      }
  return sum / static_cast<double>(tasks.size());
}

// ---------------------------------------------------------------------------

/// Discrete-event DMH simulator with a reset/step interface. The layout
/// must outlive the engine.
class Engine {
 public:
  enum class TaskState { Pending, Staged, Carried, Delivered };

  struct TaskCounts {
    std::size_t pending = 0, staged = 0, carried = 0, delivered = 0;
  };

  explicit Engine(const Layout& layout, EngineOptions opts = {}) : layout_(&layout), opts_(opts) {}

  Observation reset(const Instance& instance, std::uint64_t seed);

  /// Assign then advance to the next decision epoch or the end.
  StepOutcome step(Action action) {
    StepInfo info = assign(action);
    StepOutcome out = advance();
    out.info.action = info.action;
    out.info.task = info.task;
    return out;
  }

  /// Resolve the rule and start the vehicle's trip. Rejects actions outside
  /// the current valid set.
  StepInfo assign(Action action) { return commit(action, resolve(action)); }

  /// Validate `action` and pick the staged task its rule selects, returned
  /// as a position in staging(). Consumes tie-break randomness only.
  std::size_t resolve(const Action& action);

  /// Start the vehicle's trip for the staged task at `pick`.
  StepInfo commit(Action action, std::size_t pick);

  /// Run events until a decision is required or the episode ends.
  StepOutcome advance();

  const Observation& observation() const { return obs_; }
  bool terminal() const { return terminal_; }
  bool truncated() const { return truncated_; }
  double now() const { return now_; }
  double horizon() const { return horizon_; }
  std::size_t task_count() const { return tasks_.size(); }
  std::size_t vehicle_count() const { return vehicles_.size(); }
  const std::vector<VehicleState>& vehicles() const { return vehicles_; }
  const std::vector<std::size_t>& staging() const { return staging_; }
  TaskState task_state(std::size_t i) const { return task_state_.at(i); }
  const TaskView& task(std::size_t i) const { return tasks_.at(i); }
  const std::vector<std::string>& event_log() const { return log_; }
  const EngineOptions& options() const { return opts_; }
  const Layout& layout() const { return *layout_; }

  TaskCounts task_counts() const {
    TaskCounts c;
    for (TaskState s : task_state_) {
      switch (s) {
        case TaskState::Pending: ++c.pending; break;
        case TaskState::Staged: ++c.staged; break;
        case TaskState::Carried: ++c.carried; break;
        case TaskState::Delivered: ++c.delivered; break;
      }
    }
    return c;
  }

  double makespan() const {
    if (!terminal_) throw PreconditionError("makespan requested before the episode ended");
    return dmh::makespan(vehicles_);
  }

  double tardiness() const {
    if (tasks_.empty()) return 0.0;
    return dmh::tardiness(vehicles_, tasks_) + truncation_delay_ / static_cast<double>(tasks_.size());
  }

  /// Per-task clamped lateness, including truncation charges.
  std::vector<double> task_delays() const {
    std::vector<double> out(tasks_.size(), 0.0);
    for (const auto& v : vehicles_)
      for (const auto& h : v.history)
        if (h.task) out[*h.task] = std::max(h.finish_time - tasks_[*h.task].expiry - tasks_[*h.task].arrival, 0.0);
    if (truncated_)
      for (std::size_t i = 0; i < tasks_.size(); ++i)
        if (task_state_[i] != TaskState::Delivered)
          out[i] = std::max(horizon_ - tasks_[i].arrival - tasks_[i].expiry, 0.0);
    return out;
  }

  EpisodeMetrics metrics(double epsilon = 50.0) const {
    EpisodeMetrics m;
    m.makespan = makespan();
    m.tardiness = tardiness();
    m.per_task_delay = task_delays();
    m.constraint_satisfied = m.tardiness <= epsilon;
    m.truncated = truncated_;
    return m;
  }

 private:
  enum class EventKind { Delivery = 0, Pickup = 1, Repair = 2, Breakdown = 3, Arrival = 4 };

  struct Event {
    double time;
    EventKind kind;
    std::uint64_t seq;
    std::size_t subject;  // task, vehicle or breakdown index depending on kind
    std::uint64_t token;  // trip / repair generation for stale detection
  };

  struct EventLater {
    bool operator()(const Event& a, const Event& b) const {
      if (a.time != b.time) return a.time > b.time;
      if (a.kind != b.kind) return static_cast<int>(a.kind) > static_cast<int>(b.kind);
      return a.seq > b.seq;
    }
  };

  struct Trip {
    std::vector<SiteIndex> waypoints;
    std::vector<double> cumulative;  // distance from trip start to each waypoint
    std::size_t pickup_index = 0;
    double start = 0.0;
  };

  void push(double time, EventKind kind, std::size_t subject, std::uint64_t token = 0) {
    events_.push({time, kind, seq_++, subject, token});
  }

  void stage(std::size_t task) {
    task_state_[task] = TaskState::Staged;
    auto pos = std::upper_bound(staging_.begin(), staging_.end(), task, [this](std::size_t a, std::size_t b) {
      if (tasks_[a].arrival != tasks_[b].arrival) return tasks_[a].arrival < tasks_[b].arrival;
      return a < b;
    });
    staging_.insert(pos, task);
  }

  bool decision_pending() const {
    if (staging_.empty()) return false;
    for (const auto& v : vehicles_)
      if (v.status == VehicleStatus::Idle) return true;
    return false;
  }

  Position position_at(std::size_t vehicle, double t) const {
    const Trip& trip = trips_[vehicle];
    const double travelled = (t - trip.start) * vehicles_[vehicle].spec.velocity;
    for (std::size_t i = 0; i < trip.waypoints.size(); ++i) {
      const double left = trip.cumulative[i] - travelled;
      if (left > 1e-9) return {trip.waypoints[i], left};
      if (left >= -1e-9) return Position::at_site(trip.waypoints[i]);
    }
    return Position::at_site(trip.waypoints.back());
  }

  void process(const Event& e, double& cost);
  void truncate(double& cost);
  void refresh_observation();
  void log(const char* kind, std::optional<std::size_t> vehicle, std::optional<std::size_t> task,
           const std::string& detail = {});

  const Layout* layout_;
  EngineOptions opts_;
  Instance instance_;
  std::vector<TaskView> tasks_;
  std::vector<TaskState> task_state_;
  std::vector<VehicleState> vehicles_;
  std::vector<Trip> trips_;
  std::vector<std::uint64_t> trip_token_;
  std::vector<std::uint64_t> repair_token_;
  std::vector<std::size_t> staging_;
  std::vector<TaskView> views_;  // scratch for rule resolution
  std::priority_queue<Event, std::vector<Event>, EventLater> events_;
  std::uint64_t seq_ = 0;
  std::size_t delivered_ = 0;
  double now_ = 0.0;
  double horizon_ = 0.0;
  double truncation_delay_ = 0.0;
  bool terminal_ = true;
  bool truncated_ = false;
  Rng rng_;
  Observation obs_;
  std::vector<std::string> log_;
};

inline Observation Engine::reset(const Instance& instance, std::uint64_t seed) {
  if (auto vs = validate(instance, *layout_); !vs.empty())
    throw ValidationError("instance '" + instance.name + "': " + describe(vs));
  instance_ = instance;
  rng_.seed(mix_seed(seed));
  now_ = 0.0;
  seq_ = 0;
  delivered_ = 0;
  truncation_delay_ = 0.0;
  terminal_ = false;
  truncated_ = false;
  log_.clear();
  staging_.clear();
  events_ = {};

  const std::size_t m = instance.tasks.size();
  tasks_.clear();
  for (const Task& t : instance.tasks)
    tasks_.push_back({layout_->index_of(t.pickup), layout_->index_of(t.delivery), t.arrival, t.expiry});
  task_state_.assign(m, TaskState::Pending);

  const std::size_t n = instance.vehicles.size();
  vehicles_.clear();
  for (const VehicleSpec& spec : instance.vehicles) {
    VehicleState v;
    v.spec = spec;
    v.position = Position::at_site(layout_->index_of(spec.parking));
    v.history.push_back({std::nullopt, 0.0});
    vehicles_.push_back(std::move(v));
  }
  trips_.assign(n, Trip{});
  trip_token_.assign(n, 0);
  repair_token_.assign(n, 0);

  double first = std::numeric_limits<double>::infinity(), last = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    push(tasks_[i].arrival, EventKind::Arrival, i);
    first = std::min(first, tasks_[i].arrival);
    last = std::max(last, tasks_[i].arrival);
  }
  const double mean_gap = m > 1 ? (last - first) / static_cast<double>(m - 1) : 0.0;
  horizon_ = last + opts_.horizon_factor * std::max(mean_gap, 1.0) * static_cast<double>(std::max<std::size_t>(m, 1));
  for (std::size_t k = 0; k < instance.breakdowns.size(); ++k) push(instance.breakdowns[k].time, EventKind::Breakdown, k);

  StepOutcome first_epoch = advance();
  return first_epoch.observation;
}

inline std::size_t Engine::resolve(const Action& action) {
  if (terminal_) throw PreconditionError("step called on a finished episode");
  const std::size_t n = vehicles_.size();
  if (action.rule < 0 || action.rule >= kRuleCount || action.vehicle >= n)
    throw PreconditionError("action out of range");
  if (staging_.empty()) throw PreconditionError("no unassigned task to dispatch");
  VehicleState& v = vehicles_[action.vehicle];
  if (v.status != VehicleStatus::Idle)
    throw PreconditionError("vehicle " + std::to_string(action.vehicle) + " is " + std::string(to_string(v.status)) +
                            ", only idle vehicles can be assigned");

  views_.clear();
  for (std::size_t i : staging_) views_.push_back(tasks_[i]);
  return select_task(static_cast<Rule>(action.rule), v.position, views_, *layout_, rng_, opts_.rules);
}

inline StepInfo Engine::commit(Action action, std::size_t pick) {
  if (pick >= staging_.size()) throw PreconditionError("commit: staging position out of range");
  if (action.vehicle >= vehicles_.size() || vehicles_[action.vehicle].status != VehicleStatus::Idle)
    throw PreconditionError("commit: vehicle is not idle");
  VehicleState& v = vehicles_[action.vehicle];
  const std::size_t task = staging_[pick];
  staging_.erase(staging_.begin() + static_cast<std::ptrdiff_t>(pick));
  task_state_[task] = TaskState::Carried;

  Trip trip;
  trip.start = now_;
  trip.waypoints.push_back(v.position.next);
  trip.cumulative.push_back(v.position.remaining);
  auto extend = [&](SiteIndex from, SiteIndex to) {
    const auto path = layout_->shortest_path(from, to);
    for (std::size_t i = 1; i < path.size(); ++i) {
      trip.cumulative.push_back(trip.cumulative.back() + layout_->edge_length(path[i - 1], path[i]));
      trip.waypoints.push_back(path[i]);
    }
  };
  extend(v.position.next, tasks_[task].pickup);
  trip.pickup_index = trip.waypoints.size() - 1;
  extend(tasks_[task].pickup, tasks_[task].delivery);

  v.status = VehicleStatus::Working;
  v.current_task = task;
  const std::uint64_t token = ++trip_token_[action.vehicle];
  const double vel = v.spec.velocity;
  push(now_ + trip.cumulative[trip.pickup_index] / vel, EventKind::Pickup, action.vehicle, token);
  push(now_ + trip.cumulative.back() / vel, EventKind::Delivery, action.vehicle, token);
  trips_[action.vehicle] = std::move(trip);
  log("assign", action.vehicle, task, std::string(to_string(static_cast<Rule>(action.rule))));
  return {action, task, 0};
}

inline StepOutcome Engine::advance() {
  StepOutcome out;
  double cost = 0.0;
  std::size_t processed = 0;
  while (!terminal_) {
    if (delivered_ == tasks_.size()) {
      terminal_ = true;
      log("end", std::nullopt, std::nullopt);
      break;
    }
    if (decision_pending()) break;
    if (events_.empty()) throw std::logic_error("engine: no pending events but episode unfinished");
    const double next = events_.top().time;
    if (next > horizon_) {
      truncate(cost);
      break;
    }
    now_ = next;
    while (!events_.empty() && events_.top().time == now_) {
      Event e = events_.top();
      events_.pop();
      process(e, cost);
      ++processed;
    }
  }
  refresh_observation();
  out.observation = obs_;
  out.cost = cost;
  out.terminal = terminal_;
  out.reward = terminal_ ? -dmh::makespan(vehicles_) : 0.0;
  out.info.events_processed = processed;
  return out;
}

inline void Engine::process(const Event& e, double& cost) {
  switch (e.kind) {
    case EventKind::Arrival: {
      stage(e.subject);
      log("arrival", std::nullopt, e.subject);
      break;
    }
    case EventKind::Pickup: {
      if (trip_token_[e.subject] != e.token) break;
      const VehicleState& v = vehicles_[e.subject];
      log("pickup", e.subject, v.current_task, layout_->site(tasks_[*v.current_task].pickup).id);
      break;
    }
    case EventKind::Delivery: {
      if (trip_token_[e.subject] != e.token) break;
      VehicleState& v = vehicles_[e.subject];
      const std::size_t task = *v.current_task;
      v.history.push_back({task, now_});
      v.status = VehicleStatus::Idle;
      v.current_task.reset();
      v.position = Position::at_site(tasks_[task].delivery);
      task_state_[task] = TaskState::Delivered;
      ++delivered_;
      const double delay = std::max(now_ - tasks_[task].expiry - tasks_[task].arrival, 0.0);
      cost += delay / static_cast<double>(tasks_.size());
      log("delivery", e.subject, task, layout_->site(tasks_[task].delivery).id);
      break;
    }
    case EventKind::Breakdown: {
      const BreakdownEvent& b = instance_.breakdowns[e.subject];
      VehicleState& v = vehicles_[b.vehicle];
      const double duration = instance_.repair_duration(b);
      if (v.status == VehicleStatus::Working) {
        v.position = position_at(b.vehicle, now_);
        const std::size_t task = *v.current_task;
        v.current_task.reset();
        ++trip_token_[b.vehicle];
        stage(task);
        log("release", b.vehicle, task);
      }
      const double until = std::max(v.repair_until.value_or(now_), now_ + duration);
      v.status = VehicleStatus::Broken;
      v.repair_until = until;
      push(until, EventKind::Repair, b.vehicle, ++repair_token_[b.vehicle]);
      char buf[32];
      std::snprintf(buf, sizeof buf, "until=%.6g", until);
      log("breakdown", b.vehicle, std::nullopt, buf);
      break;
    }
    case EventKind::Repair: {
      if (repair_token_[e.subject] != e.token) break;
      VehicleState& v = vehicles_[e.subject];
      v.status = VehicleStatus::Idle;
      v.repair_until.reset();
      log("repair", e.subject, std::nullopt);
      break;
    }
  }
}

inline void Engine::truncate(double& cost) {
  now_ = horizon_;
  const double m = static_cast<double>(tasks_.size());
  for (std::size_t i = 0; i < tasks_.size(); ++i) {
    if (task_state_[i] == TaskState::Delivered) continue;
    const double delay = std::max(horizon_ - tasks_[i].arrival - tasks_[i].expiry, 0.0);
    truncation_delay_ += delay;
    cost += delay / m;
  }
  terminal_ = true;
  truncated_ = true;
  log("truncate", std::nullopt, std::nullopt);
}

inline void Engine::refresh_observation() {
  std::vector<TaskView> staged;
  staged.reserve(staging_.size());
  for (std::size_t i : staging_) staged.push_back(tasks_[i]);
  obs_.features = featurize(staged, vehicles_, *layout_, now_, opts_);
  obs_.time = now_;
  obs_.terminal = terminal_;
  obs_.valid_actions = terminal_ ? std::vector<Action>{} : valid_actions(vehicles_, staging_.size());
  obs_.mask.assign(kRuleCount * vehicles_.size(), 0);
  for (const Action& a : obs_.valid_actions) obs_.mask[a.flat(vehicles_.size())] = 1;
}

inline void Engine::log(const char* kind, std::optional<std::size_t> vehicle, std::optional<std::size_t> task,
                        const std::string& detail) {
  if (!opts_.log_events) return;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", now_);
  std::string line = buf;
  line += ',';
  line += kind;
  line += ',';
  if (vehicle) line += std::to_string(*vehicle);
  line += ',';
  if (task) line += std::to_string(*task);
  line += ',';
  line += detail;
  log_.push_back(std::move(line));
}

// ---------------------------------------------------------------------------
// Policies and rollouts

class Policy {
 public:
  virtual ~Policy() = default;
  virtual std::string name() const = 0;
  /// Reseed any internal randomness; called once per episode by rollout().
  virtual void seed(std::uint64_t) {}
  virtual Action act(const Observation& obs) = 0;
};

/// Play one episode. Decision time covers the policy call plus the rule
/// resolution in Engine::assign; event processing is excluded.
inline EpisodeMetrics rollout(Policy& policy, const Instance& instance, const Layout& layout, std::uint64_t seed,
                              const EngineOptions& opts = {}, double epsilon = 50.0) {
  Engine engine(layout, opts);
  engine.reset(instance, seed);
  policy.seed(combine_seed(seed, 0x706f6c696379ULL));
  using Clock = std::chrono::steady_clock;
  Clock::duration spent{};
  std::size_t decisions = 0;
  while (!engine.terminal()) {
    const auto t0 = Clock::now();
    const Action a = policy.act(engine.observation());
    const std::size_t pick = engine.resolve(a);
    spent += Clock::now() - t0;
    engine.commit(a, pick);
    ++decisions;
    engine.advance();
  }
  EpisodeMetrics m = engine.metrics(epsilon);
  m.decisions = decisions;
  m.decision_ms =
      decisions ? std::chrono::duration<double, std::milli>(spent).count() / static_cast<double>(decisions) : 0.0;
  return m;
}

}  // namespace dmh
