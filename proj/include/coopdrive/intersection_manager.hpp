#pragma once

// Entry-ordered priority assignment with HVs first, occupied-region
// prediction and the velocity-ladder yielding loop run by the
// infrastructure at every management tick.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "coopdrive/hv_identification.hpp"
#include "coopdrive/road_map.hpp"
#include "coopdrive/v2x_bus.hpp"
#include "coopdrive/vehicle_dynamics.hpp"

namespace coopdrive {

struct ManagerConfig {
  double v_max{0.5};
  double dv_step{0.1};
  int horizon{30};
  double dt{0.1};  // one management tick per prediction step
  double b_safe{0.30};
  double tick_rate_hz{10.0};
  bool any_time_conflicts{false};  // compare every step pair, not just equal steps
  // A CAV's region, as a constraint on lower-priority CAVs, covers every
  // rung from its command up to v_max, so it may speed back up safely.
  bool reserve_faster_rungs{true};
  // A moving rung is also refused when the ground the CAV would cover before
  // it could stop touches what a higher-priority agent still has to drive
  // through inside the intersection, so nobody waits in another's path.
  // Rung 0 is always available.
  bool keep_clear{true};

  void validate() const {
    if (!(v_max > 0 && dv_step > 0 && horizon > 0 && dt > 0 && b_safe >= 0 && tick_rate_hz > 0))
      throw std::invalid_argument("manager parameters must be positive");
    if (dv_step > v_max) throw std::invalid_argument("dv_step exceeds v_max");
  }

  /// v_max, v_max - dv, ... down to 0 inclusive; rounded to 1e-9 so the
  /// rungs print as the decimal values they stand for.
  std::vector<double> ladder() const {
    std::vector<double> out;
    for (int k = 0;; ++k) {
      const double v = std::round((v_max - k * dv_step) * 1e9) / 1e9;
      if (v <= 0.0) break;
      out.push_back(v);
    }
    out.push_back(0.0);
    return out;
  }
};

struct Footprint {
  double length{0.30};
  double width{0.15};
  double speed_lag{0.25};  // 1/alpha: distance to stop is about v * speed_lag
};

/// Inflated footprints per prediction step; an HV has one per candidate.
struct OccupiedRegion {
  std::vector<std::vector<OrientedRect>> steps;
  std::vector<OrientedRect> sweep;  // remaining route inside the intersection, for keep-clear

  std::size_t horizon() const { return steps.size(); }
};

enum class AgentKind { cav, hv };

inline const char* to_string(AgentKind k) { return k == AgentKind::cav ? "cav" : "hv"; }

struct PriorityEntry {
  int id{0};  // CAV id, or HV track id
  AgentKind kind{AgentKind::cav};
  double entry_time{0.0};  // HVs: first_seen

  friend bool operator==(const PriorityEntry&, const PriorityEntry&) = default;
};

using PriorityTable = std::vector<PriorityEntry>;
using VelocityCommandSet = std::map<int, double>;

/// Records the first time each CAV's reference point is seen inside the
/// intersection. Existing entries are never overwritten.
inline void update_entry_log(std::map<int, double>& entry_log, const std::vector<CavMessage>& cav_messages,
                             const Region& intersection, double t) {
  for (const auto& m : cav_messages)
    if (in_region(m.position(), intersection)) entry_log.emplace(m.sender_id, t);
}

inline PriorityTable assign_priorities(const std::vector<CavMessage>& cav_messages, const std::vector<HvEstimate>& hvs,
                                       const std::map<int, double>& entry_log, const Region& intersection) {
  PriorityTable hv_rows, cav_rows;
  for (const auto& h : hvs)
    if (in_region(h.position(), intersection)) hv_rows.push_back({h.track_id, AgentKind::hv, h.first_seen});
  for (const auto& m : cav_messages) {
    if (!in_region(m.position(), intersection)) continue;
    const auto it = entry_log.find(m.sender_id);
    if (it == entry_log.end()) throw std::invalid_argument("CAV " + std::to_string(m.sender_id) + " has no entry time");
    cav_rows.push_back({m.sender_id, AgentKind::cav, it->second});
  }
  const auto by_entry = [](const PriorityEntry& a, const PriorityEntry& b) {
    return a.entry_time != b.entry_time ? a.entry_time < b.entry_time : a.id < b.id;
  };
  std::sort(hv_rows.begin(), hv_rows.end(), by_entry);
  std::sort(cav_rows.begin(), cav_rows.end(), by_entry);
  hv_rows.insert(hv_rows.end(), cav_rows.begin(), cav_rows.end());
  return hv_rows;
}

inline OrientedRect inflated_footprint(const PathPose& pose, const Footprint& fp, double b_safe) {
  return OrientedRect{pose.position, pose.heading, fp.length, fp.width}.inflated(b_safe);
}

inline OccupiedRegion predict_occupied_region(const VehicleState& state, const PathRef& path, double v_const,
                                              const ManagerConfig& cfg, const Footprint& fp) {
  OccupiedRegion out;
  for (const auto& pose : predict_trajectory(state, path, v_const, cfg.horizon, cfg.dt))
    out.steps.push_back({inflated_footprint(pose, fp, cfg.b_safe)});
  return out;
}

/// Inflated footprints every 0.1 m from the projection of `position` until
/// the route leaves the intersection.
inline std::vector<OrientedRect> remaining_sweep(Vec2 position, const PathRef& path, const Region& intersection,
                                                 const Footprint& fp, double inflate) {
  std::vector<OrientedRect> out;
  if (path.polyline.size() < 2) return out;
  const double total = path.total_length();
  for (double s = project_to_path(position, path).arclength;; s += 0.1) {
    const auto pose = pose_at_arclength(path, std::min(s, total));
    if (!in_region(pose.position, intersection)) break;
    out.push_back(inflated_footprint(pose, fp, inflate));
    if (s >= total) break;
  }
  return out;
}

/// Union over the HV's candidate routes, each followed at v_max.
inline OccupiedRegion hv_occupied_union(const HvEstimate& hv, const ManagerConfig& cfg, const Footprint& fp,
                                        const RoadGraph& graph, const Region& intersection) {
  const auto paths = hv.candidate_paths.empty()
                         ? fallback_paths(graph, hv.position(), hv.psi_hat, intersection, cfg.v_max * cfg.horizon * cfg.dt)
                         : hv.candidate_paths;
  const VehicleState state{hv.x_hat, hv.y_hat, hv.psi_hat, cfg.v_max};
  OccupiedRegion out;
  out.steps.resize(static_cast<std::size_t>(cfg.horizon));
  for (const auto& path : paths) {
    const auto branch = predict_occupied_region(state, path, cfg.v_max, cfg, fp);
    for (std::size_t h = 0; h < branch.steps.size(); ++h)
      out.steps[h].insert(out.steps[h].end(), branch.steps[h].begin(), branch.steps[h].end());
    const auto sweep = remaining_sweep(hv.position(), path, intersection, fp, cfg.b_safe);
    out.sweep.insert(out.sweep.end(), sweep.begin(), sweep.end());
  }
  return out;
}

namespace detail {

inline void flatten_into(const OccupiedRegion& r, std::vector<OrientedRect>& out) {
  for (const auto& step : r.steps) out.insert(out.end(), step.begin(), step.end());
  out.insert(out.end(), r.sweep.begin(), r.sweep.end());
}

/// Footprints swept from the current pose to where a CAV commanded `v`
/// would come to rest if told to stop at the next tick.
inline std::vector<OrientedRect> stopping_envelope(const CavMessage& msg, double v, const ManagerConfig& cfg,
                                                   const Footprint& fp, double margin) {
  const double reach = v * cfg.dt + std::max(msg.v, v) * fp.speed_lag;
  const double s0 = project_to_path(msg.position(), msg.path).arclength;
  const double total = msg.path.total_length();
  const int n = std::max(1, static_cast<int>(std::ceil(reach / 0.05)));
  std::vector<OrientedRect> out;
  for (int k = 1; k <= n; ++k)
    out.push_back(inflated_footprint(pose_at_arclength(msg.path, std::min(total, s0 + reach * k / n)), fp,
                                     cfg.b_safe + margin));
  return out;
}

inline bool step_sets_overlap(const std::vector<OrientedRect>& a, const std::vector<OrientedRect>& b) {
  for (const auto& ra : a)
    for (const auto& rb : b)
      if (rects_overlap(ra, rb)) return true;
  return false;
}

}  // namespace detail

/// True when some rectangle of step h in `a` meets some rectangle of step h
/// in `b`. With any_time, steps need not match.
inline bool regions_conflict(const OccupiedRegion& a, const OccupiedRegion& b, bool any_time = false) {
  if (a.horizon() != b.horizon()) throw std::invalid_argument("occupied regions have different horizons");
  for (std::size_t h = 0; h < a.horizon(); ++h) {
    if (!any_time) {
      if (detail::step_sets_overlap(a.steps[h], b.steps[h])) return true;
      continue;
    }
    for (std::size_t k = 0; k < b.horizon(); ++k)
      if (detail::step_sets_overlap(a.steps[h], b.steps[k])) return true;
  }
  return false;
}

struct CavResolution {
  int id{0};
  double v_ref{0.0};
  int iterations{0};  // ladder rungs tried
  bool floored{false};  // even v = 0 conflicted
  std::vector<std::string> blockers;  // whose regions conflicted on some rung tried, e.g. "hv:1", "cav:3"
  std::vector<std::string> held_by;   // whose path kept a faster, otherwise clear rung off
};

struct ResolutionResult {
  VelocityCommandSet commands;
  std::vector<CavResolution> log;  // priority order
  std::map<int, OccupiedRegion> accepted;  // at the commanded velocity
  std::map<int, OccupiedRegion> reserved;  // what lower-priority CAVs had to avoid
};

/// Ladder descent in priority order. Each CAV takes the fastest rung whose
/// region clears every HV region and every higher-priority CAV's reserved
/// region; otherwise 0. Keep-clear sweeps of CAVs need `intersection`.
inline ResolutionResult resolve_velocities(const PriorityTable& table, const std::vector<CavMessage>& cav_messages,
                                           const std::vector<OccupiedRegion>& hv_regions, const ManagerConfig& cfg,
                                           const std::map<int, Footprint>& footprints = {},
                                           const Region* intersection = nullptr) {
  cfg.validate();
  std::map<int, const CavMessage*> by_id;
  for (const auto& m : cav_messages) by_id[m.sender_id] = &m;
  const auto ladder = cfg.ladder();

  struct Constraint {
    std::string name;
    const OccupiedRegion* region;
  };
  std::vector<Constraint> constraints;
  for (std::size_t k = 0; k < hv_regions.size(); ++k) constraints.push_back({"hv#" + std::to_string(k), &hv_regions[k]});
  // Everything each higher-priority agent may cover within the horizon or
  // still has to drive through; the extra margin absorbs one tick of that
  // reach moving forward.
  std::vector<std::pair<std::string, std::vector<OrientedRect>>> keep_out;
  if (cfg.keep_clear)
    for (std::size_t k = 0; k < hv_regions.size(); ++k) {
      keep_out.emplace_back(constraints[k].name, std::vector<OrientedRect>{});
      detail::flatten_into(hv_regions[k], keep_out.back().second);
    }
  const double margin = cfg.v_max * cfg.dt;
  const auto holders = [&](const CavMessage& msg, double v, const Footprint& fp) {
    std::vector<std::string> out;
    if (!cfg.keep_clear || v == 0.0 || msg.path.polyline.size() < 2) return out;
    const auto envelope = detail::stopping_envelope(msg, v, cfg, fp, margin);
    for (const auto& [name, rects] : keep_out)
      if (detail::step_sets_overlap(envelope, rects)) out.push_back(name);
    return out;
  };

  ResolutionResult res;
  for (const auto& entry : table) {
    if (entry.kind != AgentKind::cav) continue;
    const auto it = by_id.find(entry.id);
    if (it == by_id.end()) continue;
    const CavMessage& msg = *it->second;
    const auto fp_it = footprints.find(entry.id);
    const Footprint fp = fp_it == footprints.end() ? Footprint{} : fp_it->second;
    const VehicleState state{msg.x, msg.y, msg.psi, msg.v};

    CavResolution r;
    r.id = entry.id;
    OccupiedRegion region;
    const auto note = [](std::vector<std::string>& names, const std::string& n) {
      if (std::find(names.begin(), names.end(), n) == names.end()) names.push_back(n);
    };
    for (const double v : ladder) {
      ++r.iterations;
      region = predict_occupied_region(state, msg.path, v, cfg, fp);
      r.v_ref = v;
      r.floored = false;
      for (const auto& c : constraints)
        if (regions_conflict(region, *c.region, cfg.any_time_conflicts)) {
          note(r.blockers, c.name);
          r.floored = true;
        }
      if (r.floored) continue;
      const auto held = holders(msg, v, fp);
      if (held.empty()) break;
      for (const auto& h : held) note(r.held_by, h);
    }
    res.commands[entry.id] = r.v_ref;
    res.log.push_back(r);
    OccupiedRegion reserved = region;
    if (cfg.reserve_faster_rungs) {
      for (const double v : ladder) {
        if (v <= r.v_ref) break;
        const auto faster = predict_occupied_region(state, msg.path, v, cfg, fp);
        for (std::size_t h = 0; h < reserved.steps.size(); ++h)
          reserved.steps[h].insert(reserved.steps[h].end(), faster.steps[h].begin(), faster.steps[h].end());
      }
    }
    if (cfg.keep_clear && intersection)
      reserved.sweep = remaining_sweep(msg.position(), msg.path, *intersection, fp, cfg.b_safe);
    if (cfg.keep_clear) {
      keep_out.emplace_back("cav:" + std::to_string(entry.id), std::vector<OrientedRect>{});
      detail::flatten_into(reserved, keep_out.back().second);
    }
    res.accepted.emplace(entry.id, std::move(region));
    const auto [pos, _] = res.reserved.emplace(entry.id, std::move(reserved));
    constraints.push_back({"cav:" + std::to_string(entry.id), &pos->second});
  }
  return res;
}

}  // namespace coopdrive
