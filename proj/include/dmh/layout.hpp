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
#include <fstream>
#include <limits>
#include <queue>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dmh/util.hpp"

namespace dmh {

enum class SiteKind { Workstation, Warehouse, Carport, Junction };

inline std::string_view to_string(SiteKind kind) {
  switch (kind) {
    case SiteKind::Workstation: return "workstation";
    case SiteKind::Warehouse: return "warehouse";
    case SiteKind::Carport: return "carport";
    case SiteKind::Junction: return "junction";
  }
  return "junction";
}

inline SiteKind site_kind_from_string(std::string_view text) {
  if (text == "workstation") return SiteKind::Workstation;
  if (text == "warehouse") return SiteKind::Warehouse;
  if (text == "carport") return SiteKind::Carport;
  if (text == "junction") return SiteKind::Junction;
  throw ParseError("unknown site kind '" + std::string(text) + "'");
}

struct Site {
  std::string id;
  SiteKind kind = SiteKind::Junction;
  double x = 0.0;  // display only
  double y = 0.0;
};

struct Edge {
  std::string a;
  std::string b;
  double length = 0.0;
};

struct PathResult {
  std::vector<std::string> nodes;
  double length = 0.0;
};

using SiteIndex = std::size_t;

/// Where a vehicle is: at a site (`remaining == 0`, `next == at`), or on the
/// edge towards `next` with `remaining` distance left to cover.
struct Position {
  SiteIndex next = 0;
  double remaining = 0.0;

  static Position at_site(SiteIndex s) { return {s, 0.0}; }
  bool on_site() const { return remaining == 0.0; }
  bool operator==(const Position&) const = default;
};

/// Shop-floor graph with an immutable all-pairs distance cache built at load.
class Layout {
 public:
  Layout() = default;

  Layout(std::vector<Site> sites, std::vector<Edge> edges) : sites_(std::move(sites)), edges_(std::move(edges)) {
    build();
  }

  static Layout from_json(const nlohmann::json& doc) {
    std::vector<Site> sites;
    std::vector<Edge> edges;
    try {
      if (!doc.is_object()) throw ParseError("layout document must be an object");
      if (!doc.contains("sites") || !doc.at("sites").is_array()) throw ParseError("layout: missing 'sites' array");
      if (!doc.contains("edges") || !doc.at("edges").is_array()) throw ParseError("layout: missing 'edges' array");
      for (const auto& s : doc.at("sites")) {
        Site site;
        site.id = s.at("id").get<std::string>();
        site.kind = site_kind_from_string(s.at("kind").get<std::string>());
        site.x = s.value("x", 0.0);
        site.y = s.value("y", 0.0);
        sites.push_back(std::move(site));
      }
      for (const auto& e : doc.at("edges")) {
        edges.push_back({e.at("a").get<std::string>(), e.at("b").get<std::string>(), e.at("length").get<double>()});
      }
    } catch (const nlohmann::json::exception& ex) {
      throw ParseError(std::string("layout: ") + ex.what());
    }
    return Layout(std::move(sites), std::move(edges));
  }

  static Layout parse(std::string_view text) {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& ex) {
      throw ParseError(std::string("layout: ") + ex.what());
    }
    return from_json(doc);
  }

  static Layout load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open layout file '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
  }

  /// The shop floor shipped with the library (eight workstations, a
  /// warehouse and a carport joined by a junction corridor).
  static const Layout& bundled_default();

  /// Resolves an instance's `layout_ref`.
  static Layout resolve(const std::string& ref) {
    if (ref.empty() || ref == "bundled-default") return bundled_default();
    return load_file(ref);
  }

  nlohmann::json to_json() const {
    nlohmann::json doc;
    doc["version"] = 1;
    doc["sites"] = nlohmann::json::array();
    for (const auto& s : sites_) {
      doc["sites"].push_back({{"id", s.id}, {"kind", std::string(to_string(s.kind))}, {"x", s.x}, {"y", s.y}});
    }
    doc["edges"] = nlohmann::json::array();
    for (const auto& e : edges_) doc["edges"].push_back({{"a", e.a}, {"b", e.b}, {"length", e.length}});
    return doc;
  }

  std::size_t size() const { return sites_.size(); }
  const std::vector<Site>& sites() const { return sites_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const Site& site(SiteIndex i) const { return sites_.at(i); }
  bool heuristic_enabled() const { return euclid_admissible_; }

  bool contains(std::string_view id) const { return index_.find(std::string(id)) != index_.end(); }

  SiteIndex index_of(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) throw PreconditionError("unknown site '" + std::string(id) + "'");
    return it->second;
  }

  std::vector<SiteIndex> sites_of_kind(SiteKind kind) const {
    std::vector<SiteIndex> out;
    for (SiteIndex i = 0; i < sites_.size(); ++i)
      if (sites_[i].kind == kind) out.push_back(i);
    return out;
  }

  const std::vector<std::pair<SiteIndex, double>>& neighbors(SiteIndex i) const { return adjacency_.at(i); }

  double edge_length(SiteIndex a, SiteIndex b) const {
    for (const auto& [n, len] : adjacency_.at(a))
      if (n == b) return len;
    throw PreconditionError("no edge between '" + sites_.at(a).id + "' and '" + sites_.at(b).id + "'");
  }

  bool reachable(SiteIndex a, SiteIndex b) const { return std::isfinite(dist_.at(a * sites_.size() + b)); }

  /// Cached shortest-path distance. Throws when the pair is disconnected.
  double distance(SiteIndex a, SiteIndex b) const {
    double d = dist_.at(a * sites_.size() + b);
    if (!std::isfinite(d)) throw PreconditionError("'" + sites_[b].id + "' unreachable from '" + sites_[a].id + "'");
    return d;
  }

  double distance(std::string_view a, std::string_view b) const { return distance(index_of(a), index_of(b)); }

  /// Distance from a possibly in-transit position: finish the current
  /// segment, then follow the cached site distance.
  double distance(const Position& p, SiteIndex b) const { return p.remaining + distance(p.next, b); }

  double travel_time(SiteIndex a, SiteIndex b, double velocity) const {
    if (!(velocity > 0.0)) throw PreconditionError("velocity must be positive");
    return distance(a, b) / velocity;
  }

  double travel_time(std::string_view a, std::string_view b, double velocity) const {
    return travel_time(index_of(a), index_of(b), velocity);
  }

  PathResult shortest_path(std::string_view from, std::string_view to) const {
    auto nodes = shortest_path(index_of(from), index_of(to));
    PathResult out;
    out.nodes.reserve(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      out.nodes.push_back(sites_[nodes[i]].id);
      if (i > 0) out.length += edge_length(nodes[i - 1], nodes[i]);
    }
    return out;
  }

  /// A* over site indices. Among minimal-length paths the one whose id
  /// sequence is lexicographically smallest is returned.
  std::vector<SiteIndex> shortest_path(SiteIndex from, SiteIndex to) const;

 private:
  void build();

  double heuristic(SiteIndex a, SiteIndex b) const {
    if (!euclid_admissible_) return 0.0;
    return std::hypot(sites_[a].x - sites_[b].x, sites_[a].y - sites_[b].y);
  }

  bool lex_less(const std::vector<SiteIndex>& a, const std::vector<SiteIndex>& b) const {
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end(),
                                        [this](SiteIndex x, SiteIndex y) { return rank_[x] < rank_[y]; });
  }

  static bool same_length(double a, double b) {
    if (!std::isfinite(a) || !std::isfinite(b)) return a == b;
    return std::abs(a - b) <= 1e-9 * (1.0 + std::abs(a) + std::abs(b));
  }

  std::vector<Site> sites_;
  std::vector<Edge> edges_;
  std::unordered_map<std::string, SiteIndex> index_;
  std::vector<std::size_t> rank_;  // position of each id in sorted id order
  std::vector<std::vector<std::pair<SiteIndex, double>>> adjacency_;
  std::vector<double> dist_;
  bool euclid_admissible_ = false;
};

inline void Layout::build() {
  const std::size_t n = sites_.size();
  index_.clear();
  for (SiteIndex i = 0; i < n; ++i) {
    if (sites_[i].id.empty()) throw ValidationError("layout: site " + std::to_string(i) + " has an empty id");
    if (!index_.emplace(sites_[i].id, i).second) throw ValidationError("layout: duplicate site id '" + sites_[i].id + "'");
  }
  std::vector<SiteIndex> order(n);
  for (SiteIndex i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [this](SiteIndex a, SiteIndex b) { return sites_[a].id < sites_[b].id; });
  rank_.assign(n, 0);
  for (std::size_t r = 0; r < n; ++r) rank_[order[r]] = r;

  adjacency_.assign(n, {});
  euclid_admissible_ = true;
  for (std::size_t k = 0; k < edges_.size(); ++k) {
    const Edge& e = edges_[k];
    auto ia = index_.find(e.a);
    auto ib = index_.find(e.b);
    if (ia == index_.end() || ib == index_.end())
      throw ValidationError("layout: edges[" + std::to_string(k) + "] references unknown site '" +
                            (ia == index_.end() ? e.a : e.b) + "'");
    if (!(e.length > 0.0) || !std::isfinite(e.length))
      throw ValidationError("layout: edges[" + std::to_string(k) + "] length must be positive and finite");
    if (ia->second == ib->second) throw ValidationError("layout: edges[" + std::to_string(k) + "] is a self-loop");
    const SiteIndex a = ia->second, b = ib->second;
    // Parallel edges collapse to the shortest one.
    auto upsert = [&](SiteIndex from, SiteIndex to) {
      for (auto& [nb, len] : adjacency_[from]) {
        if (nb == to) {
          len = std::min(len, e.length);
          return;
        }
      }
      adjacency_[from].emplace_back(to, e.length);
    };
    upsert(a, b);
    upsert(b, a);
    const double straight = std::hypot(sites_[a].x - sites_[b].x, sites_[a].y - sites_[b].y);
    if (e.length + 1e-9 < straight) euclid_admissible_ = false;
  }
  for (auto& adj : adjacency_)
    std::sort(adj.begin(), adj.end(), [this](const auto& l, const auto& r) { return rank_[l.first] < rank_[r.first]; });

  // All-pairs distances by repeated Dijkstra.
  const double inf = std::numeric_limits<double>::infinity();
  dist_.assign(n * n, inf);
  using Item = std::pair<double, SiteIndex>;
  for (SiteIndex src = 0; src < n; ++src) {
    double* row = dist_.data() + src * n;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> open;
    row[src] = 0.0;
    open.emplace(0.0, src);
    while (!open.empty()) {
      auto [d, u] = open.top();
      open.pop();
      if (d > row[u]) continue;
      for (const auto& [v, len] : adjacency_[u]) {
        if (d + len < row[v]) {
          row[v] = d + len;
          open.emplace(row[v], v);
        }
      }
    }
  }

  std::vector<SiteIndex> required;
  for (SiteIndex i = 0; i < n; ++i)
    if (sites_[i].kind != SiteKind::Junction) required.push_back(i);
  for (SiteIndex b : required) {
    if (!required.empty() && !std::isfinite(dist_[required.front() * n + b]))
      throw ValidationError("layout: site '" + sites_[b].id + "' is disconnected from '" + sites_[required.front()].id + "'");
  }
}

inline std::vector<SiteIndex> Layout::shortest_path(SiteIndex from, SiteIndex to) const {
  const std::size_t n = sites_.size();
  if (from >= n || to >= n) throw PreconditionError("shortest_path: site index out of range");
  if (from == to) return {from};
  if (!reachable(from, to)) throw PreconditionError("'" + sites_[to].id + "' unreachable from '" + sites_[from].id + "'");

  // Labels carry the best cost and, among equal costs, the lexicographically
  // smallest node sequence. A label improved after expansion is re-queued so
  // the tie-break propagates to its successors.
  struct Label {
    double g = std::numeric_limits<double>::infinity();
    std::vector<SiteIndex> path;
  };
  struct Entry {
    double f;
    double g;
    SiteIndex node;
    std::vector<SiteIndex> path;
  };
  auto worse = [this](const Entry& l, const Entry& r) {
    if (!same_length(l.f, r.f)) return l.f > r.f;
    if (!same_length(l.g, r.g)) return l.g > r.g;
    return lex_less(r.path, l.path);
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(worse)> open(worse);
  std::vector<Label> label(n);
  label[from] = {0.0, {from}};
  open.push({heuristic(from, to), 0.0, from, {from}});

  while (!open.empty()) {
    Entry cur = open.top();
    open.pop();
    const Label& best = label[cur.node];
    if (!same_length(cur.g, best.g) || cur.path != best.path) continue;  // stale
    if (cur.node == to) continue;
    // Any path through this node is at least g + h; nothing left can improve
    // the goal label once the goal's cost is strictly below that bound.
    if (std::isfinite(label[to].g) && cur.g + heuristic(cur.node, to) > label[to].g &&
        !same_length(cur.g + heuristic(cur.node, to), label[to].g))
      continue;
    for (const auto& [next, len] : adjacency_[cur.node]) {
      if (std::find(cur.path.begin(), cur.path.end(), next) != cur.path.end()) continue;
      const double g = cur.g + len;
      Label& lab = label[next];
      std::vector<SiteIndex> path = cur.path;
      path.push_back(next);
      const bool better = (g < lab.g && !same_length(g, lab.g)) || (same_length(g, lab.g) && lex_less(path, lab.path));
      if (!better) continue;
      lab.g = g;
      lab.path = path;
      open.push({g + heuristic(next, to), g, next, std::move(path)});
    }
  }
  return label[to].path;
}

namespace detail {

inline constexpr std::string_view kBundledLayoutJson = R"json({
  "version": 1,
  "sites": [
    {"id": "carport",   "kind": "carport",     "x": 0,  "y": 20},
    {"id": "j1",        "kind": "junction",    "x": 10, "y": 20},
    {"id": "j2",        "kind": "junction",    "x": 30, "y": 20},
    {"id": "j3",        "kind": "junction",    "x": 50, "y": 20},
    {"id": "j4",        "kind": "junction",    "x": 70, "y": 20},
    {"id": "j5",        "kind": "junction",    "x": 90, "y": 20},
    {"id": "st1",       "kind": "workstation", "x": 10, "y": 40},
    {"id": "st2",       "kind": "workstation", "x": 30, "y": 40},
    {"id": "st3",       "kind": "workstation", "x": 50, "y": 40},
    {"id": "st4",       "kind": "workstation", "x": 70, "y": 40},
    {"id": "st5",       "kind": "workstation", "x": 70, "y": 0},
    {"id": "st6",       "kind": "workstation", "x": 50, "y": 0},
    {"id": "st7",       "kind": "workstation", "x": 30, "y": 0},
    {"id": "st8",       "kind": "workstation", "x": 10, "y": 0},
    {"id": "warehouse", "kind": "warehouse",   "x": 90, "y": 40}
  ],
  "edges": [
    {"a": "carport", "b": "j1", "length": 10},
    {"a": "j1", "b": "j2", "length": 20},
    {"a": "j2", "b": "j3", "length": 20},
    {"a": "j3", "b": "j4", "length": 20},
    {"a": "j4", "b": "j5", "length": 20},
    {"a": "st1", "b": "j1", "length": 20},
    {"a": "st2", "b": "j2", "length": 20},
    {"a": "st3", "b": "j3", "length": 20},
    {"a": "st4", "b": "j4", "length": 20},
    {"a": "st5", "b": "j4", "length": 20},
    {"a": "st6", "b": "j3", "length": 20},
    {"a": "st7", "b": "j2", "length": 20},
    {"a": "st8", "b": "j1", "length": 20},
    {"a": "warehouse", "b": "j5", "length": 20}
  ]
})json";

}  // namespace detail

inline const Layout& Layout::bundled_default() {
  static const Layout layout = Layout::parse(detail::kBundledLayoutJson);
  return layout;
}

}  // namespace dmh
