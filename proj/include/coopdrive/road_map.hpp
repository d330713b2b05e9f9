#pragma once

// Directed road graph with per-segment waypoints, named regions, Dijkstra
// routing and the polyline queries used by planning and HV identification.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "coopdrive/geometry.hpp"
#include "coopdrive/text_io.hpp"

namespace coopdrive {

/// Raised when a map violates a structural invariant; names the element.
class MapError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NoPathError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Node {
  int id{0};
  Vec2 position;
};

struct Segment {
  int id{0};
  int from_node{0};
  int to_node{0};
  std::vector<Vec2> waypoints;
};

struct Region {
  std::string name;
  std::vector<Vec2> polygon;
};

inline constexpr double kJoinTolerance = 0.01;  // 1 cm

/// A route over the graph: segment ids plus the concatenated polyline.
struct PathRef {
  std::vector<int> segment_ids;
  std::vector<Vec2> polyline;
  std::vector<double> cumulative_arclength;

  bool empty() const { return polyline.empty(); }
  double total_length() const { return cumulative_arclength.empty() ? 0.0 : cumulative_arclength.back(); }

  friend bool operator==(const PathRef&, const PathRef&) = default;
};

struct PathPose {
  Vec2 position;
  double heading{0.0};
};

struct PathProjection {
  double arclength{0.0};
  double distance{0.0};
  Vec2 point;
};

inline bool in_region(Vec2 position, const Region& region) { return point_in_polygon(position, region.polygon); }

class RoadGraph {
 public:
  RoadGraph() = default;

  /// Builds and validates; throws MapError on any invariant violation.
  RoadGraph(std::vector<Node> nodes, std::vector<Segment> segments, std::vector<Region> regions)
      : nodes_(std::move(nodes)), segments_(std::move(segments)) {
    for (auto& r : regions) {
      const std::string name = r.name;
      if (!regions_.emplace(name, std::move(r)).second) throw MapError("duplicate region '" + name + "'");
    }
    validate();
    for (std::size_t i = 0; i < nodes_.size(); ++i) node_index_[nodes_[i].id] = i;
    for (std::size_t i = 0; i < segments_.size(); ++i) {
      segment_index_[segments_[i].id] = i;
      outgoing_[segments_[i].from_node].push_back(segments_[i].id);
      incoming_[segments_[i].to_node].push_back(segments_[i].id);
      segment_length_[segments_[i].id] = polyline_length(segments_[i].waypoints);
    }
    for (auto& [_, ids] : outgoing_) std::sort(ids.begin(), ids.end());
    for (auto& [_, ids] : incoming_) std::sort(ids.begin(), ids.end());
  }

  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<Segment>& segments() const { return segments_; }
  const std::map<std::string, Region>& regions() const { return regions_; }

  bool has_node(int id) const { return node_index_.count(id) != 0; }
  bool has_segment(int id) const { return segment_index_.count(id) != 0; }

  const Node& node(int id) const {
    const auto it = node_index_.find(id);
    if (it == node_index_.end()) throw std::out_of_range("unknown node " + std::to_string(id));
    return nodes_[it->second];
  }

  const Segment& segment(int id) const {
    const auto it = segment_index_.find(id);
    if (it == segment_index_.end()) throw std::out_of_range("unknown segment " + std::to_string(id));
    return segments_[it->second];
  }

  double segment_length(int id) const { return segment_length_.at(id); }

  const Region& region(const std::string& name) const {
    const auto it = regions_.find(name);
    if (it == regions_.end()) throw MapError("map has no region '" + name + "'");
    return it->second;
  }

  bool has_region(const std::string& name) const { return regions_.count(name) != 0; }

  const std::vector<int>& outgoing(int node_id) const { return lookup(outgoing_, node_id); }
  const std::vector<int>& incoming(int node_id) const { return lookup(incoming_, node_id); }

  /// Axis-aligned extent over nodes, waypoints and region vertices.
  std::pair<Vec2, Vec2> bounding_box() const {
    Vec2 lo{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
    Vec2 hi{-lo.x, -lo.y};
    const auto grow = [&](Vec2 p) {
      lo = {std::min(lo.x, p.x), std::min(lo.y, p.y)};
      hi = {std::max(hi.x, p.x), std::max(hi.y, p.y)};
    };
    for (const auto& n : nodes_) grow(n.position);
    for (const auto& s : segments_)
      for (const auto p : s.waypoints) grow(p);
    for (const auto& [_, r] : regions_)
      for (const auto p : r.polygon) grow(p);
    return {lo, hi};
  }

  static double polyline_length(const std::vector<Vec2>& pts) {
    double len = 0.0;
    for (std::size_t i = 1; i < pts.size(); ++i) len += distance(pts[i - 1], pts[i]);
    return len;
  }

 private:
  static const std::vector<int>& lookup(const std::unordered_map<int, std::vector<int>>& m, int id) {
    static const std::vector<int> none;
    const auto it = m.find(id);
    return it == m.end() ? none : it->second;
  }

  void validate() const {
    if (nodes_.empty()) throw MapError("map has no nodes");
    std::unordered_map<int, Vec2> pos;
    for (const auto& n : nodes_) {
      if (!is_finite(n.position)) throw MapError("node " + std::to_string(n.id) + " has a non-finite position");
      if (!pos.emplace(n.id, n.position).second) throw MapError("duplicate node id " + std::to_string(n.id));
    }
    std::set<int> seg_ids;
    for (const auto& s : segments_) {
      const std::string tag = "segment " + std::to_string(s.id);
      if (!seg_ids.insert(s.id).second) throw MapError("duplicate " + tag);
      const auto from = pos.find(s.from_node);
      const auto to = pos.find(s.to_node);
      if (from == pos.end()) throw MapError(tag + " references missing node " + std::to_string(s.from_node));
      if (to == pos.end()) throw MapError(tag + " references missing node " + std::to_string(s.to_node));
      if (s.waypoints.size() < 2) throw MapError(tag + " needs at least two waypoints");
      for (const auto p : s.waypoints)
        if (!is_finite(p)) throw MapError(tag + " has a non-finite waypoint");
      if (distance(s.waypoints.front(), from->second) > kJoinTolerance)
        throw MapError(tag + " does not start at node " + std::to_string(s.from_node));
      if (distance(s.waypoints.back(), to->second) > kJoinTolerance)
        throw MapError(tag + " does not end at node " + std::to_string(s.to_node));
      for (std::size_t i = 1; i < s.waypoints.size(); ++i)
        if (s.waypoints[i] == s.waypoints[i - 1]) throw MapError(tag + " repeats waypoint " + std::to_string(i));
    }
    for (const auto& [name, r] : regions_) {
      if (r.polygon.size() < 3) throw MapError("region '" + name + "' needs at least 3 vertices");
      if (!polygon_is_simple(r.polygon)) throw MapError("region '" + name + "' is not a simple polygon");
    }
    // Weak connectivity over all nodes.
    std::unordered_map<int, std::vector<int>> undirected;
    for (const auto& s : segments_) {
      undirected[s.from_node].push_back(s.to_node);
      undirected[s.to_node].push_back(s.from_node);
    }
    std::set<int> seen{nodes_.front().id};
    std::vector<int> stack{nodes_.front().id};
    while (!stack.empty()) {
      const int v = stack.back();
      stack.pop_back();
      for (const int w : undirected[v])
        if (seen.insert(w).second) stack.push_back(w);
    }
    if (seen.size() != pos.size()) {
      for (const auto& n : nodes_)
        if (!seen.count(n.id)) throw MapError("node " + std::to_string(n.id) + " is disconnected from the graph");
    }
  }

  std::vector<Node> nodes_;
  std::vector<Segment> segments_;
  std::map<std::string, Region> regions_;
  std::unordered_map<int, std::size_t> node_index_;
  std::unordered_map<int, std::size_t> segment_index_;
  std::unordered_map<int, std::vector<int>> outgoing_;
  std::unordered_map<int, std::vector<int>> incoming_;
  std::unordered_map<int, double> segment_length_;
};

// ---------------------------------------------------------------------------
// Map file
//
//   roadmap 1
//   [nodes]
//   <id> <x> <y>
//   [segments]
//   <id> <from> <to> <count> <x1> <y1> ... <xn> <yn>
//   [regions]
//   <name> <count> <x1> <y1> ... <xn> <yn>
//
// '#' starts a comment. Units are meters.
// ---------------------------------------------------------------------------

inline RoadGraph parse_map(const std::string& text, const std::string& source = "<map>") {
  std::vector<Node> nodes;
  std::vector<Segment> segments;
  std::vector<Region> regions;
  enum class Section { none, nodes, segments, regions } section = Section::none;
  bool header_seen = false;

  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = trim(strip_comment(raw));
    if (line.empty()) continue;
    TokenCursor cur(source, line_no, split_ws(line));
    if (!header_seen) {
      if (cur.word("header") != "roadmap") cur.fail("expected 'roadmap <version>' header");
      if (cur.integer("version") != 1) cur.fail("unsupported map version");
      cur.expect_end();
      header_seen = true;
      continue;
    }
    if (line == "[nodes]") {
      section = Section::nodes;
    } else if (line == "[segments]") {
      section = Section::segments;
    } else if (line == "[regions]") {
      section = Section::regions;
    } else if (line.front() == '[') {
      cur.fail("unknown section " + std::string(line));
    } else if (section == Section::nodes) {
      Node n;
      n.id = static_cast<int>(cur.integer("node id"));
      n.position.x = cur.number("x");
      n.position.y = cur.number("y");
      cur.expect_end();
      nodes.push_back(n);
    } else if (section == Section::segments) {
      Segment s;
      s.id = static_cast<int>(cur.integer("segment id"));
      s.from_node = static_cast<int>(cur.integer("from node"));
      s.to_node = static_cast<int>(cur.integer("to node"));
      const auto count = cur.integer("waypoint count");
      if (count < 0 || static_cast<std::size_t>(count) * 2 != cur.remaining())
        cur.fail("segment " + std::to_string(s.id) + " waypoint count does not match coordinates");
      for (long long i = 0; i < count; ++i) {
        const double x = cur.number("waypoint x");
        s.waypoints.push_back({x, cur.number("waypoint y")});
      }
      segments.push_back(std::move(s));
    } else if (section == Section::regions) {
      Region r;
      r.name = std::string(cur.word("region name"));
      const auto count = cur.integer("vertex count");
      if (count < 0 || static_cast<std::size_t>(count) * 2 != cur.remaining())
        cur.fail("region '" + r.name + "' vertex count does not match coordinates");
      for (long long i = 0; i < count; ++i) {
        const double x = cur.number("vertex x");
        r.polygon.push_back({x, cur.number("vertex y")});
      }
      regions.push_back(std::move(r));
    } else {
      cur.fail("data outside of a section");
    }
  }
  if (!header_seen) throw ParseError(source, line_no, "missing 'roadmap 1' header");
  return RoadGraph(std::move(nodes), std::move(segments), std::move(regions));
}

inline RoadGraph load_map(const std::string& map_file) { return parse_map(read_file(map_file), map_file); }

// ---------------------------------------------------------------------------
// Paths
// ---------------------------------------------------------------------------

/// Concatenates segment polylines. Joins closer than 1 cm are merged.
inline PathRef make_path(const RoadGraph& graph, const std::vector<int>& segment_ids) {
  PathRef path;
  path.segment_ids = segment_ids;
  for (std::size_t k = 0; k < segment_ids.size(); ++k) {
    const Segment& seg = graph.segment(segment_ids[k]);
    if (k > 0 && seg.from_node != graph.segment(segment_ids[k - 1]).to_node)
      throw MapError("segment " + std::to_string(seg.id) + " does not continue the path");
    for (const Vec2 p : seg.waypoints) {
      if (path.polyline.empty()) {
        path.polyline.push_back(p);
        path.cumulative_arclength.push_back(0.0);
        continue;
      }
      const double d = distance(path.polyline.back(), p);
      if (d == 0.0 || (d < kJoinTolerance && p == seg.waypoints.front())) continue;
      path.polyline.push_back(p);
      path.cumulative_arclength.push_back(path.cumulative_arclength.back() + d);
    }
  }
  return path;
}

namespace detail {

struct RouteLabel {
  double cost;
  std::vector<int> seq;
  int node;
};

inline constexpr double kCostTieTolerance = 1e-9;

/// Strictly better: lower cost, or equal cost and lexicographically smaller ids.
inline bool better_route(double cost_a, const std::vector<int>& seq_a, double cost_b, const std::vector<int>& seq_b) {
  if (cost_a < cost_b - kCostTieTolerance) return true;
  if (cost_b < cost_a - kCostTieTolerance) return false;
  return seq_a < seq_b;
}

}  // namespace detail

/// Minimum-arclength route; equal-cost routes resolve to the
/// lexicographically smallest segment-id sequence.
inline PathRef shortest_path(const RoadGraph& graph, int start, int goal) {
  if (!graph.has_node(start)) throw std::out_of_range("unknown start node " + std::to_string(start));
  if (!graph.has_node(goal)) throw std::out_of_range("unknown goal node " + std::to_string(goal));
  if (start == goal) return {};

  using detail::RouteLabel;
  const auto worse = [](const RouteLabel& a, const RouteLabel& b) {
    return detail::better_route(b.cost, b.seq, a.cost, a.seq);
  };
  std::priority_queue<RouteLabel, std::vector<RouteLabel>, decltype(worse)> open(worse);
  std::unordered_map<int, RouteLabel> best;
  std::set<int> settled;
  best[start] = {0.0, {}, start};
  open.push({0.0, {}, start});
  while (!open.empty()) {
    RouteLabel cur = open.top();
    open.pop();
    if (settled.count(cur.node)) continue;
    const auto& b = best.at(cur.node);
    if (b.cost != cur.cost || b.seq != cur.seq) continue;
    settled.insert(cur.node);
    if (cur.node == goal) return make_path(graph, cur.seq);
    for (const int sid : graph.outgoing(cur.node)) {
      const Segment& seg = graph.segment(sid);
      if (settled.count(seg.to_node)) continue;
      RouteLabel next{cur.cost + graph.segment_length(sid), cur.seq, seg.to_node};
      next.seq.push_back(sid);
      const auto it = best.find(seg.to_node);
      if (it == best.end() || detail::better_route(next.cost, next.seq, it->second.cost, it->second.seq)) {
        best[seg.to_node] = next;
        open.push(std::move(next));
      }
    }
  }
  throw NoPathError("no path from node " + std::to_string(start) + " to node " + std::to_string(goal));
}

/// Nearest point of the polyline; ties resolve to the smallest arclength.
inline PathProjection project_to_path(Vec2 position, const PathRef& path) {
  if (path.empty()) throw std::invalid_argument("projection onto an empty path");
  PathProjection best{0.0, distance(position, path.polyline.front()), path.polyline.front()};
  for (std::size_t i = 1; i < path.polyline.size(); ++i) {
    const Vec2 a = path.polyline[i - 1];
    const Vec2 b = path.polyline[i];
    const double t = closest_param_on_segment(position, a, b);
    const Vec2 q = a + t * (b - a);
    const double d = distance(position, q);
    if (d < best.distance) {
      const double s0 = path.cumulative_arclength[i - 1];
      best = {s0 + t * (path.cumulative_arclength[i] - s0), d, q};
    }
  }
  return best;
}

inline double distance_to_path(Vec2 position, const PathRef& path) { return project_to_path(position, path).distance; }

/// Linear interpolation along the polyline. At an interior waypoint the
/// heading comes from the following polyline segment.
inline PathPose pose_at_arclength(const PathRef& path, double s) {
  if (path.polyline.size() < 2) throw std::invalid_argument("pose query on a path without length");
  const double total = path.total_length();
  constexpr double eps = 1e-12;
  if (!(s >= -eps && s <= total + eps)) throw std::out_of_range("arclength " + format_double(s) + " outside path");
  s = std::clamp(s, 0.0, total);
  const auto& cum = path.cumulative_arclength;
  // First index with cum[i] > s, so that s == cum[i] selects the following piece.
  auto it = std::upper_bound(cum.begin(), cum.end(), s);
  std::size_t i = static_cast<std::size_t>(it - cum.begin());
  if (i >= cum.size()) i = cum.size() - 1;
  if (i == 0) i = 1;
  const Vec2 a = path.polyline[i - 1];
  const Vec2 b = path.polyline[i];
  const double seg = cum[i] - cum[i - 1];
  const double t = std::clamp((s - cum[i - 1]) / seg, 0.0, 1.0);
  const Vec2 d = b - a;
  const Vec2 p = t == 0.0 ? a : (t == 1.0 ? b : a + t * d);
  return {p, std::atan2(d.y, d.x)};
}

inline int nearest_node(const RoadGraph& graph, Vec2 position) {
  int best_id = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (const auto& n : graph.nodes()) {
    const double d = distance(position, n.position);
    if (d < best_d || (d == best_d && n.id < best_id)) {
      best_d = d;
      best_id = n.id;
    }
  }
  return best_id;
}

namespace detail {

inline bool segment_touches_region(const Segment& s, const Region& region) {
  return std::any_of(s.waypoints.begin(), s.waypoints.end(), [&](Vec2 p) { return in_region(p, region); });
}

/// Non-internal segments allowed before a route reaches the region.
inline constexpr int kMaxApproachSegments = 2;

}  // namespace detail

/// Every route from `node_id` that crosses `intersection` and ends at the
/// node where it leaves it. Each route may be prefixed by one of the node's
/// incoming segments, so a vehicle that has not yet reached the node still
/// lies on its candidates. Unfiltered; see candidate_paths_from_entry.
inline std::vector<std::vector<int>> routes_through_region(const RoadGraph& graph, int node_id,
                                                           const Region& intersection) {
  std::unordered_map<int, bool> internal;
  for (const auto& s : graph.segments()) internal[s.id] = detail::segment_touches_region(s, intersection);
  const auto ends_route = [&](const std::vector<int>& seq) {
    if (seq.empty() || !internal.at(seq.back())) return false;
    const int end = graph.segment(seq.back()).to_node;
    const auto& out = graph.outgoing(end);
    return std::none_of(out.begin(), out.end(), [&](int sid) { return internal.at(sid); });
  };

  std::set<std::vector<int>> routes;
  std::vector<int> seq;
  std::set<int> visited;
  const auto extend = [&](const auto& self, int node, bool entered, int approach) -> void {
    if (ends_route(seq)) {
      routes.insert(seq);
      return;
    }
    for (const int sid : graph.outgoing(node)) {
      const int next = graph.segment(sid).to_node;
      if (visited.count(next)) continue;
      const bool inside = internal.at(sid);
      if (entered && !inside) continue;
      if (!inside && approach >= detail::kMaxApproachSegments) continue;
      seq.push_back(sid);
      visited.insert(next);
      self(self, next, entered || inside, inside || entered ? approach : approach + 1);
      visited.erase(next);
      seq.pop_back();
    }
  };

  std::vector<std::optional<int>> prefixes{std::nullopt};
  for (const int sid : graph.incoming(node_id)) prefixes.emplace_back(sid);
  for (const auto& prefix : prefixes) {
    seq.clear();
    visited = {node_id};
    bool entered = false;
    int approach = 0;
    if (prefix) {
      seq.push_back(*prefix);
      visited.insert(graph.segment(*prefix).from_node);
      entered = internal.at(*prefix);
      approach = entered ? 0 : 1;
    }
    extend(extend, node_id, entered, approach);
  }
  return {routes.begin(), routes.end()};
}

/// Candidate routes for a vehicle at `position`: routes through the
/// intersection from the nearest node, minus those farther than `tau_p`
/// from the position, minus routes that are a trailing part of another
/// surviving candidate. Sorted by segment-id sequence; may be empty.
inline std::vector<PathRef> candidate_paths_from_entry(const RoadGraph& graph, Vec2 position, double tau_p,
                                                       const Region& intersection) {
  const int start = nearest_node(graph, position);
  std::vector<std::vector<int>> kept;
  for (auto& seq : routes_through_region(graph, start, intersection)) {
    if (distance_to_path(position, make_path(graph, seq)) <= tau_p) kept.push_back(std::move(seq));
  }
  const auto is_suffix_of = [](const std::vector<int>& a, const std::vector<int>& b) {
    return a.size() < b.size() && std::equal(a.rbegin(), a.rend(), b.rbegin());
  };
  std::vector<PathRef> out;
  for (const auto& seq : kept) {
    const bool shadowed = std::any_of(kept.begin(), kept.end(), [&](const auto& other) { return is_suffix_of(seq, other); });
    if (!shadowed) out.push_back(make_path(graph, seq));
  }
  return out;
}

inline std::vector<PathRef> candidate_paths_from_entry(const RoadGraph& graph, Vec2 position, double tau_p) {
  return candidate_paths_from_entry(graph, position, tau_p, graph.region("intersection"));
}

}  // namespace coopdrive
