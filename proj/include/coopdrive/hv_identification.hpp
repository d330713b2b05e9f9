#pragma once

// Three-step HV identification: drop detections explained by CAV messages,
// drop detections not near a remembered HV, then attach route hypotheses
// and update memory.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <tuple>
#include <vector>

#include "coopdrive/perception_oracle.hpp"
#include "coopdrive/road_map.hpp"
#include "coopdrive/v2x_bus.hpp"

namespace coopdrive {

struct HvThresholds {
  double tau_cav{0.135};
  double tau_fp{0.135};
  double tau_p{0.20};

  void validate() const {
    if (!(tau_cav > 0 && tau_fp > 0 && tau_p > 0)) throw std::invalid_argument("HV thresholds must be positive");
  }
};

struct HvEstimate {
  int track_id{0};
  double x_hat{0.0};
  double y_hat{0.0};
  double psi_hat{0.0};
  std::vector<PathRef> candidate_paths;
  double first_seen{0.0};
  double last_seen{0.0};

  Vec2 position() const { return {x_hat, y_hat}; }
  friend bool operator==(const HvEstimate&, const HvEstimate&) = default;
};

/// Detection seen once and not yet confirmed as an HV.
struct PendingHv {
  double x_hat{0.0};
  double y_hat{0.0};
  double psi_hat{0.0};
  double t{0.0};

  Vec2 position() const { return {x_hat, y_hat}; }
  friend bool operator==(const PendingHv&, const PendingHv&) = default;
};

struct HvMemory {
  std::vector<HvEstimate> estimates;
  std::vector<PendingHv> pending;
  int next_track_id{1};

  bool empty() const { return estimates.empty() && pending.empty(); }
  friend bool operator==(const HvMemory&, const HvMemory&) = default;
};

struct HvIdentificationConfig {
  HvThresholds thresholds;
  double grace_period{0.5};  // unmatched estimates survive this long
  bool bootstrap{true};      // admit new HVs seen in two consecutive frames

  void validate() const {
    thresholds.validate();
    if (grace_period < 0) throw std::invalid_argument("grace_period must be non-negative");
  }
};

inline double min_distance(Vec2 p, const std::vector<Vec2>& others) {
  double best = std::numeric_limits<double>::infinity();
  for (const Vec2 q : others) best = std::min(best, distance(p, q));
  return best;
}

/// Step 1. Drops detections closer than tau_cav to a CAV message position.
inline std::vector<Detection> filter_cavs(const std::vector<Detection>& detections,
                                          const std::vector<CavMessage>& cav_messages, double tau_cav) {
  std::vector<Vec2> cavs;
  for (const auto& m : cav_messages) cavs.push_back(m.position());
  std::vector<Detection> out;
  for (const auto& d : detections)
    if (!(min_distance(d.position(), cavs) < tau_cav)) out.push_back(d);
  return out;
}

/// Result of step 2. `kept[k]` was associated with memory row `row[k]`:
/// rows [0, estimates.size()) are confirmed HVs, the rest index pending rows.
struct FpRejection {
  std::vector<Detection> kept;
  std::vector<std::size_t> row;
  std::vector<Detection> removed;
};

/// Step 2. One-to-one greedy association by ascending distance over pairs
/// closer than tau_fp (ties: lower detection index, confirmed rows before
/// pending ones, lower row index). Unassociated detections are removed.
inline FpRejection reject_fps(const std::vector<Detection>& detections, const HvMemory& memory, double tau_fp) {
  std::vector<Vec2> rows;
  for (const auto& e : memory.estimates) rows.push_back(e.position());
  for (const auto& p : memory.pending) rows.push_back(p.position());

  std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < detections.size(); ++i)
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const double d = distance(detections[i].position(), rows[r]);
      if (d < tau_fp) pairs.emplace_back(d, i, r);
    }
  std::sort(pairs.begin(), pairs.end());

  std::vector<long> det_row(detections.size(), -1);
  std::vector<bool> row_used(rows.size(), false);
  for (const auto& [d, i, r] : pairs) {
    if (det_row[i] >= 0 || row_used[r]) continue;
    det_row[i] = static_cast<long>(r);
    row_used[r] = true;
  }
  FpRejection out;
  for (std::size_t i = 0; i < detections.size(); ++i) {
    if (det_row[i] < 0) {
      out.removed.push_back(detections[i]);
    } else {
      out.kept.push_back(detections[i]);
      out.row.push_back(static_cast<std::size_t>(det_row[i]));
    }
  }
  return out;
}

/// Conservative hypotheses for an HV whose candidates all vanished: every
/// route through the intersection from the nearest node, unfiltered. When
/// there are none (the HV has left the junction), a straight ray along its
/// heading.
inline std::vector<PathRef> fallback_paths(const RoadGraph& graph, Vec2 position, double heading,
                                           const Region& intersection, double ray_length) {
  std::vector<PathRef> out;
  for (const auto& seq : routes_through_region(graph, nearest_node(graph, position), intersection))
    out.push_back(make_path(graph, seq));
  if (out.empty()) {
    PathRef ray;
    ray.polyline = {position, position + ray_length * unit_from_angle(heading)};
    ray.cumulative_arclength = {0.0, ray_length};
    out.push_back(std::move(ray));
  }
  return out;
}

/// Step 3. Tracked HVs keep their previous candidates minus those now
/// farther than tau_p; when nothing survives the HV is re-seeded from its
/// position. New HVs are seeded from their position.
inline std::vector<HvEstimate> predict_paths(const FpRejection& matched, const RoadGraph& graph,
                                             const HvMemory& memory, double tau_p, const Region& intersection,
                                             double t) {
  std::vector<HvEstimate> out;
  int next_id = memory.next_track_id;
  for (std::size_t k = 0; k < matched.kept.size(); ++k) {
    const Detection& d = matched.kept[k];
    HvEstimate e;
    e.x_hat = d.x_hat;
    e.y_hat = d.y_hat;
    e.psi_hat = d.psi_hat;
    e.last_seen = t;
    const std::size_t r = matched.row[k];
    if (r < memory.estimates.size()) {
      const HvEstimate& prev = memory.estimates[r];
      e.track_id = prev.track_id;
      e.first_seen = prev.first_seen;
      for (const auto& path : prev.candidate_paths)
        if (!(distance_to_path(d.position(), path) > tau_p)) e.candidate_paths.push_back(path);
    } else {
      e.track_id = next_id++;
      e.first_seen = memory.pending[r - memory.estimates.size()].t;
    }
    if (e.candidate_paths.empty()) e.candidate_paths = candidate_paths_from_entry(graph, d.position(), tau_p, intersection);
    out.push_back(std::move(e));
  }
  return out;
}

struct IdentificationResult {
  std::vector<HvEstimate> hvs;
  HvMemory memory;
  std::vector<Detection> removed_as_cav;
  std::vector<Detection> removed_as_fp;
};

inline IdentificationResult identify_hvs(const std::vector<Detection>& detections,
                                         const std::vector<CavMessage>& cav_messages, const HvMemory& memory,
                                         const HvIdentificationConfig& config, const RoadGraph& graph,
                                         const Region& intersection, double t) {
  config.validate();
  const auto& th = config.thresholds;
  IdentificationResult res;

  const auto survivors = filter_cavs(detections, cav_messages, th.tau_cav);
  for (const auto& d : detections)
    if (std::find(survivors.begin(), survivors.end(), d) == survivors.end()) res.removed_as_cav.push_back(d);

  HvMemory effective = memory;
  if (!config.bootstrap) effective.pending.clear();
  const auto matched = reject_fps(survivors, effective, th.tau_fp);
  res.removed_as_fp = matched.removed;
  res.hvs = predict_paths(matched, graph, effective, th.tau_p, intersection, t);

  // Memory update: this frame's HVs, unmatched estimates still in grace,
  // and unmatched detections on an entry route as pending rows.
  HvMemory& next = res.memory;
  next.next_track_id = effective.next_track_id;
  for (const auto& e : res.hvs) next.next_track_id = std::max(next.next_track_id, e.track_id + 1);
  next.estimates = res.hvs;
  std::vector<bool> row_used(effective.estimates.size(), false);
  for (const std::size_t r : matched.row)
    if (r < row_used.size()) row_used[r] = true;
  for (std::size_t r = 0; r < effective.estimates.size(); ++r)
    if (!row_used[r] && t - effective.estimates[r].last_seen <= config.grace_period + 1e-9)
      next.estimates.push_back(effective.estimates[r]);
  if (config.bootstrap) {
    for (const auto& d : matched.removed)
      if (!candidate_paths_from_entry(graph, d.position(), th.tau_p, intersection).empty())
        next.pending.push_back({d.x_hat, d.y_hat, d.psi_hat, t});
  }
  return res;
}

inline IdentificationResult identify_hvs(const std::vector<Detection>& detections,
                                         const std::vector<CavMessage>& cav_messages, const HvMemory& memory,
                                         const HvIdentificationConfig& config, const RoadGraph& graph, double t) {
  return identify_hvs(detections, cav_messages, memory, config, graph, graph.region("intersection"), t);
}

}  // namespace coopdrive
