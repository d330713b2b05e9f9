#pragma once

// Fixed-step orchestrator. Physics runs at 100 Hz, sensing every 5th tick,
// messaging + HV identification + management every 10th. Within a
// management tick the phases are: sense, CAV publish, infrastructure
// deliver/identify/manage, infrastructure publish, CAV deliver and plan,
// then ten physics steps.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "coopdrive/hv_identification.hpp"
#include "coopdrive/intersection_manager.hpp"
#include "coopdrive/perception_oracle.hpp"
#include "coopdrive/road_map.hpp"
#include "coopdrive/scenario.hpp"
#include "coopdrive/text_io.hpp"
#include "coopdrive/v2x_bus.hpp"
#include "coopdrive/vehicle_dynamics.hpp"

namespace coopdrive {

inline constexpr double kPhysicsDt = 0.01;
inline constexpr double kPhysicsRateHz = 100.0;  // tick -> seconds by division, so times print cleanly
inline constexpr long long kSenseEvery = 5;
inline constexpr long long kManageEvery = 10;
inline constexpr int kInfraId = 0;
inline constexpr double kArrivalTolerance = 0.02;  // finished when this close to the route end

struct AgentSnapshot {
  int id{0};
  AgentKind kind{AgentKind::cav};
  VehicleState state;
  double length{0.30};
  double width{0.15};

  OrientedRect box() const { return {state.position(), state.psi, length, width}; }
  friend bool operator==(const AgentSnapshot&, const AgentSnapshot&) = default;
};

struct PhysicsSample {
  long long tick{0};
  std::vector<AgentSnapshot> agents;  // ascending id
};

/// What a vehicle decided to track at a management tick.
struct ControlRecord {
  int id{0};
  double v_ref{0.0};
  std::string source;  // "cmd", "idm" or "script"
  int leader{-1};      // IDM leader heard over V2V, -1 for none
};

struct TraceRecord {
  long long tick{0};  // management tick index
  double t{0.0};
  std::vector<AgentSnapshot> agents;
  std::vector<Detection> detections;
  std::vector<CavMessage> infra_inbox;
  std::vector<HvEstimate> hvs;      // matched this tick
  std::vector<HvEstimate> tracked;  // matched plus those coasting in memory; what the manager sees
  std::size_t removed_as_cav{0};
  std::vector<Detection> removed_as_fp;
  PriorityTable priorities;
  std::vector<CavResolution> resolutions;
  VelocityCommandSet commands;
  std::vector<ControlRecord> controls;
};

struct Trace {
  long long physics_ticks{0};
  std::vector<PhysicsSample> samples;  // one per physics tick, 0..physics_ticks
  std::vector<TraceRecord> records;    // one per management tick
};

struct CollisionEvent {
  long long tick{0};
  double t{0.0};
  int a{0};
  int b{0};
  friend bool operator==(const CollisionEvent&, const CollisionEvent&) = default;
};

struct YieldEvent {
  long long tick{0};
  int id{0};
  double v_ref{0.0};
};

struct FloorEvent {
  long long tick{0};
  int id{0};
  std::vector<std::string> blockers;
};

struct TimingStats {
  double min_ms{0.0};
  double max_ms{0.0};
  double mean_ms{0.0};
  std::size_t samples{0};

  static TimingStats of(const std::vector<double>& v) {
    TimingStats s;
    if (v.empty()) return s;
    s.min_ms = *std::min_element(v.begin(), v.end());
    s.max_ms = *std::max_element(v.begin(), v.end());
    s.mean_ms = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    s.samples = v.size();
    return s;
  }
};

struct Metrics {
  std::vector<CollisionEvent> collisions;
  std::vector<double> detection_ms;  // per management tick, both sensing frames of the tick
  std::vector<double> identification_ms;
  std::vector<double> management_ms;
  std::map<int, double> travel_times;
  std::vector<YieldEvent> yields;
  std::vector<FloorEvent> floors;

  std::vector<double> total_ms() const {
    std::vector<double> out(detection_ms.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = detection_ms[i] + identification_ms[i] + management_ms[i];
    return out;
  }
  std::vector<double> management_side_ms() const {
    std::vector<double> out(identification_ms.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = identification_ms[i] + management_ms[i];
    return out;
  }
};

struct RunOptions {
  bool concurrent{false};
  bool record_bus{false};
};

struct RunResult {
  Trace trace;
  Metrics metrics;
  std::vector<BusEvent> bus_events;
  std::vector<DetectionFrame> detection_log;
  std::vector<DetectionFrame> truth_log;
};

/// Contact episodes between actual (uninflated) footprints. A pair that
/// stays in contact over consecutive ticks is reported once.
inline std::vector<CollisionEvent> check_collisions(const Trace& trace) {
  std::vector<CollisionEvent> out;
  std::set<std::pair<int, int>> touching;
  for (const auto& s : trace.samples) {
    std::set<std::pair<int, int>> now;
    for (std::size_t i = 0; i < s.agents.size(); ++i)
      for (std::size_t j = i + 1; j < s.agents.size(); ++j)
        if (rects_overlap(s.agents[i].box(), s.agents[j].box())) now.emplace(s.agents[i].id, s.agents[j].id);
    for (const auto& p : now)
      if (!touching.count(p)) out.push_back({s.tick, static_cast<double>(s.tick) / kPhysicsRateHz, p.first, p.second});
    touching = std::move(now);
  }
  return out;
}

namespace detail {

template <class Fn>
void for_each_parallel(std::size_t n, bool concurrent, Fn&& fn) {
  if (!concurrent || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  {
    std::vector<std::jthread> workers;
    workers.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
      workers.emplace_back([&, i] {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

}  // namespace detail

class Simulation {
 public:
  Simulation(Scenario scenario, RunOptions options)
      : sc_(std::move(scenario)), opt_(options), bus_(sc_.bus) {
    sc_.validate();
    bus_.enable_event_log(opt_.record_bus);
    bus_.register_agent(kInfraId, AgentRole::infrastructure);
    for (const auto& spec : sc_.vehicles) {
      Agent a;
      a.spec = spec;
      a.path = sc_.route_of(spec);
      a.spawn_tick = static_cast<long long>(std::ceil(spec.spawn_time / (kPhysicsDt * kManageEvery) - 1e-9)) * kManageEvery;
      const auto pose = pose_at_arclength(a.path, spec.spawn_offset);
      a.state = {pose.position.x, pose.position.y, pose.heading, spec.initial_speed};
      agents_.push_back(std::move(a));
      bus_.register_agent(spec.id, AgentRole::vehicle);
      footprints_[spec.id] = {spec.params.length, spec.params.width, 1.0 / spec.params.alpha};
    }
    std::sort(agents_.begin(), agents_.end(), [](const Agent& a, const Agent& b) { return a.spec.id < b.spec.id; });
    const auto& poly = sc_.intersection().polygon;
    for (const Vec2 p : poly) infra_position_ = infra_position_ + (1.0 / static_cast<double>(poly.size())) * p;
  }

  RunResult run() {
    RunResult out;
    const long long periods = std::llround(sc_.duration * sc_.manager.tick_rate_hz);
    const long long n_ticks = periods * kManageEvery;
    out.trace.physics_ticks = n_ticks;

    for (long long m = 0; m < periods; ++m) {
      const long long k0 = m * kManageEvery;
      const double t = static_cast<double>(m) / sc_.manager.tick_rate_hz;
      activate_spawns(k0);
      out.trace.samples.push_back(snapshot(k0));

      TraceRecord rec;
      rec.tick = m;
      rec.t = t;
      rec.agents = out.trace.samples.back().agents;
      double sense_ms = 0.0;
      rec.detections = sense_frame(out.trace.samples.back(), out, sense_ms);

      bus_.begin_tick(m);
      const auto active = active_agents();
      // CAV publish.
      detail::for_each_parallel(active.size(), opt_.concurrent, [&](std::size_t i) {
        Agent& a = *active[i];
        if (a.spec.kind != AgentKind::cav) return;
        const CavMessage msg = make_cav_message(a.state, a.path, a.spec.id, t);
        bus_.publish({msg, a.state.position(), t});
      });
      manage(m, t, rec, out.metrics);
      // CAV deliver and plan; HVs follow their script.
      rec.controls.resize(active.size());
      detail::for_each_parallel(active.size(), opt_.concurrent, [&](std::size_t i) {
        rec.controls[i] = plan(*active[i], t);
      });
      // Physics.
      detail::for_each_parallel(active.size(), opt_.concurrent, [&](std::size_t i) { advance(*active[i], k0); });
      for (long long j = 1; j < kManageEvery; ++j) {
        out.trace.samples.push_back(buffered_snapshot(k0 + j));
        if (j == kSenseEvery) {
          double ms = 0.0;
          sense_frame(out.trace.samples.back(), out, ms);
          sense_ms += ms;
        }
      }
      for (auto* a : active) {
        a->buffer.clear();
        if (a->finished && a->active) {
          a->active = false;
          out.metrics.travel_times[a->spec.id] =
              static_cast<double>(a->finish_tick - a->spawn_tick) / kPhysicsRateHz;
        }
      }
      out.metrics.detection_ms.push_back(sense_ms);
      out.trace.records.push_back(std::move(rec));
    }
    out.trace.samples.push_back(snapshot(n_ticks));
    out.metrics.collisions = check_collisions(out.trace);
    if (opt_.record_bus) out.bus_events = bus_.events();
    return out;
  }

 private:
  struct Agent {
    VehicleSpec spec;
    PathRef path;
    VehicleState state;
    long long spawn_tick{0};
    long long finish_tick{-1};
    bool active{false};
    bool finished{false};
    double v_ref{0.0};
    std::vector<std::pair<long long, VehicleState>> buffer;  // intermediate physics states
  };

  /// Due vehicles enter unless their footprint, grown by the IDM minimum
  /// gap, touches a vehicle already on the road; blocked ones retry at the
  /// next management tick.
  void activate_spawns(long long k0) {
    for (auto& a : agents_) {
      if (a.active || a.finished || a.spawn_tick > k0) continue;
      const auto box = snap(a, a.state).box().inflated(0.5 * a.spec.idm.min_gap);
      const bool blocked = std::any_of(agents_.begin(), agents_.end(), [&](const Agent& o) {
        return o.active && rects_overlap(box, snap(o, o.state).box());
      });
      if (blocked) continue;
      a.active = true;
      a.spawn_tick = k0;
    }
  }

  std::vector<Agent*> active_agents() {
    std::vector<Agent*> out;
    for (auto& a : agents_)
      if (a.active) out.push_back(&a);
    return out;
  }

  static AgentSnapshot snap(const Agent& a, const VehicleState& s) {
    return {a.spec.id, a.spec.kind, s, a.spec.params.length, a.spec.params.width};
  }

  PhysicsSample snapshot(long long tick) const {
    PhysicsSample s{tick, {}};
    for (const auto& a : agents_)
      if (a.active && !(a.finished && a.finish_tick < tick)) s.agents.push_back(snap(a, a.state));
    return s;
  }

  PhysicsSample buffered_snapshot(long long tick) const {
    PhysicsSample s{tick, {}};
    for (const auto& a : agents_) {
      if (!a.active) continue;
      for (const auto& [k, st] : a.buffer)
        if (k == tick) s.agents.push_back(snap(a, st));
    }
    return s;
  }

  std::vector<Detection> sense_frame(const PhysicsSample& sample, RunResult& out, double& ms) {
    const auto start = std::chrono::steady_clock::now();
    const double t = static_cast<double>(sample.tick) / kPhysicsRateHz;
    GroundTruthFrame frame{t, {}};
    for (const auto& a : sample.agents) frame.vehicles.push_back({a.id, a.state, a.length, a.width, a.kind == AgentKind::cav});
    auto dets = sense(frame, sc_.noise, sc_.coverage());
    for (const auto& d : sc_.faults.dropouts) {
      if (t + 1e-9 < d.t_from || t > d.t_to + 1e-9) continue;
      std::erase_if(dets, [&](const Detection& x) { return x.source_id == d.vehicle_id; });
    }
    const double frame_period = kSenseEvery * kPhysicsDt;
    for (const auto& f : sc_.faults.false_positives) {
      if (f.t < t - 1e-9 || f.t >= t + frame_period - 1e-9) continue;
      Detection d;
      d.x_hat = f.x;
      d.y_hat = f.y;
      d.psi_hat = f.psi;
      d.t = t;
      d.score = 0.5;
      dets.push_back(d);
    }
    ms = detail::elapsed_ms(start);
    if (opt_.record_bus) {
      out.detection_log.push_back({t, dets});
      DetectionFrame truth{t, {}};
      for (const auto& v : frame.vehicles)
        if (in_region(v.state.position(), sc_.coverage()))
          truth.detections.push_back({v.state.x, v.state.y, v.state.psi, v.length, v.width, t, 1.0, v.id});
      out.truth_log.push_back(std::move(truth));
    }
    return dets;
  }

  void manage(long long m, double t, TraceRecord& rec, Metrics& metrics) {
    std::vector<CavMessage> inbox;
    for (const auto& p : bus_.deliver(kInfraId, infra_position_, LinkKind::v2i))
      if (const auto* c = std::get_if<CavMessage>(&p)) inbox.push_back(*c);
    rec.infra_inbox = inbox;

    auto start = std::chrono::steady_clock::now();
    const auto& region = sc_.intersection();
    auto ident = identify_hvs(rec.detections, inbox, memory_, sc_.hv, sc_.graph, region, t);
    memory_ = std::move(ident.memory);
    metrics.identification_ms.push_back(detail::elapsed_ms(start));
    rec.hvs = std::move(ident.hvs);
    rec.removed_as_cav = ident.removed_as_cav.size();
    rec.removed_as_fp = std::move(ident.removed_as_fp);
    rec.tracked = memory_.estimates;

    start = std::chrono::steady_clock::now();
    update_entry_log(entry_log_, inbox, region, t);
    rec.priorities = assign_priorities(inbox, rec.tracked, entry_log_, region);
    std::vector<OccupiedRegion> hv_regions;
    for (const auto& h : rec.tracked)
      hv_regions.push_back(hv_occupied_union(h, sc_.manager, Footprint{}, sc_.graph, region));
    auto res = resolve_velocities(rec.priorities, inbox, hv_regions, sc_.manager, footprints_, &region);
    metrics.management_ms.push_back(detail::elapsed_ms(start));
    // Name HV blockers by track id rather than list position.
    const auto rename = [&](std::vector<std::string>& names) {
      for (auto& b : names)
        if (b.rfind("hv#", 0) == 0) b = "hv:" + std::to_string(rec.tracked[std::stoul(b.substr(3))].track_id);
    };
    for (auto& r : res.log) {
      rename(r.blockers);
      rename(r.held_by);
    }
    rec.resolutions = res.log;
    rec.commands = res.commands;

    for (const auto& r : res.log) {
      if (r.v_ref < sc_.manager.v_max) metrics.yields.push_back({m, r.id, r.v_ref});
      if (r.floored) metrics.floors.push_back({m, r.id, r.blockers});
    }
    for (const auto& [id, v] : res.commands) bus_.publish({InfraMessage{kInfraId, t, id, v}, infra_position_, t});
  }

  ControlRecord plan(Agent& a, double t) {
    ControlRecord c{a.spec.id, 0.0, "script", -1};
    if (a.spec.kind == AgentKind::hv) {
      a.v_ref = a.spec.scripted_speed(t - static_cast<double>(a.spawn_tick) / kPhysicsRateHz);
      c.v_ref = a.v_ref;
      return c;
    }
    const Vec2 pos = a.state.position();
    std::optional<double> command;
    for (const auto& p : bus_.deliver(a.spec.id, pos, LinkKind::v2i))
      if (const auto* im = std::get_if<InfraMessage>(&p)) command = im->v_ref;
    if (command) {
      a.v_ref = std::clamp(*command, 0.0, a.spec.params.v_max);
      c.v_ref = a.v_ref;
      c.source = "cmd";
      // Drain V2V so the bus trace shows what the vehicle heard.
      bus_.deliver(a.spec.id, pos, LinkKind::v2v);
      return c;
    }
    // IDM behind the nearest vehicle heard over V2V that is ahead on our route.
    const double s_ego = project_to_path(pos, a.path).arclength;
    double gap = kNoLeader, leader_v = 0.0;
    for (const auto& p : bus_.deliver(a.spec.id, pos, LinkKind::v2v)) {
      const auto* other = std::get_if<CavMessage>(&p);
      if (!other) continue;
      const auto proj = project_to_path(other->position(), a.path);
      if (proj.distance > sc_.hv.thresholds.tau_p || proj.arclength <= s_ego) continue;
      const auto lane = pose_at_arclength(a.path, proj.arclength);
      if (std::abs(wrap_angle(other->psi - lane.heading)) > std::numbers::pi / 4) continue;
      const double g = proj.arclength - s_ego - a.spec.params.length;
      if (g < gap) {
        gap = g;
        leader_v = other->v;
        c.leader = other->sender_id;
      }
    }
    a.v_ref = std::min(idm_velocity(a.state.v, gap, leader_v, a.spec.idm, sc_.manager.dt), a.spec.params.v_max);
    c.v_ref = a.v_ref;
    c.source = "idm";
    return c;
  }

  void advance(Agent& a, long long k0) {
    for (long long j = 1; j <= kManageEvery; ++j) {
      const auto steer = pure_pursuit_steer(a.state, a.path, a.spec.lookahead, a.spec.params);
      const bool arrived = steer.end_of_path ||
                           project_to_path(a.state.position(), a.path).arclength >= a.path.total_length() - kArrivalTolerance;
      if (arrived) {
        a.finished = true;
        a.finish_tick = k0 + j - 1;
        return;
      }
      a.state = step_bicycle(a.state, {a.v_ref, steer.delta}, a.spec.params, kPhysicsDt);
      if (j < kManageEvery) a.buffer.emplace_back(k0 + j, a.state);
    }
  }

  Scenario sc_;
  RunOptions opt_;
  V2xBus bus_;
  std::vector<Agent> agents_;
  std::map<int, Footprint> footprints_;
  Vec2 infra_position_;
  HvMemory memory_;
  std::map<int, double> entry_log_;
};

inline RunResult run_scenario(const Scenario& scenario, RunOptions options = {}) {
  return Simulation(scenario, options).run();
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

namespace detail {

inline std::string route_label(const PathRef& p) {
  if (p.segment_ids.empty()) return "ray";
  std::string out;
  for (const int s : p.segment_ids) out += (out.empty() ? "" : "-") + std::to_string(s);
  return out;
}

inline std::string join_or_dash(const std::vector<std::string>& v) {
  if (v.empty()) return "-";
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : ",") + s;
  return out;
}

}  // namespace detail

/// Text trace, one block per management tick. Byte-identical across runs
/// with the same scenario and seed; wall-clock timings are kept out.
inline std::string format_trace(const Trace& trace) {
  std::string out = "trace 1\n";
  out += "physics_ticks " + std::to_string(trace.physics_ticks) + "\n";
  const auto f = [](double v) { return format_double(v); };
  for (const auto& r : trace.records) {
    out += "tick " + std::to_string(r.tick) + " " + f(r.t) + "\n";
    for (const auto& a : r.agents)
      out += "state " + std::to_string(a.id) + " " + to_string(a.kind) + " " + f(a.state.x) + " " + f(a.state.y) + " " +
             f(a.state.psi) + " " + f(a.state.v) + "\n";
    for (const auto& d : r.detections)
      out += "det " + f(d.x_hat) + " " + f(d.y_hat) + " " + f(d.psi_hat) + " " + f(d.score) + "\n";
    out += "ident " + std::to_string(r.detections.size()) + " " + std::to_string(r.removed_as_cav) + " " +
           std::to_string(r.removed_as_fp.size()) + " " + std::to_string(r.hvs.size()) + "\n";
    for (const auto& d : r.removed_as_fp) out += "fp " + f(d.x_hat) + " " + f(d.y_hat) + "\n";
    for (const auto& h : r.tracked) {
      const bool seen = h.last_seen == r.t;
      out += "hv " + std::to_string(h.track_id) + (seen ? " seen " : " coast ") + f(h.x_hat) + " " + f(h.y_hat) + " " +
             f(h.psi_hat) + " " + f(h.first_seen) + " " + std::to_string(h.candidate_paths.size());
      for (const auto& p : h.candidate_paths) out += " " + detail::route_label(p);
      out += "\n";
    }
    for (std::size_t i = 0; i < r.priorities.size(); ++i)
      out += "prio " + std::to_string(i + 1) + " " + to_string(r.priorities[i].kind) + " " +
             std::to_string(r.priorities[i].id) + " " + f(r.priorities[i].entry_time) + "\n";
    for (const auto& c : r.resolutions)
      out += "cmd " + std::to_string(c.id) + " " + f(c.v_ref) + " " + std::to_string(c.iterations) + " " +
             (c.floored ? "floor" : "ok") + " " + detail::join_or_dash(c.blockers) + " " + detail::join_or_dash(c.held_by) +
             "\n";
    for (const auto& c : r.controls)
      out += "ctl " + std::to_string(c.id) + " " + c.source + " " + f(c.v_ref) + " " + std::to_string(c.leader) + "\n";
  }
  return out;
}

inline std::string format_timing_table(const Metrics& m) {
  const auto row = [](const std::string& name, const TimingStats& s) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%-26s %10.3f %10.3f %12.3f\n", name.c_str(), s.min_ms, s.max_ms, s.mean_ms);
    return std::string(buf);
  };
  char head[128];
  std::snprintf(head, sizeof head, "%-26s %10s %10s %12s\n", "Module", "Min.", "Max.", "Average");
  std::string out = "# computation time per management tick (ms)\n";
  out += head;
  out += row("Object Detection", TimingStats::of(m.detection_ms));
  out += row("HV Identification", TimingStats::of(m.identification_ms));
  out += row("Intersection Management", TimingStats::of(m.management_ms));
  out += row("Total", TimingStats::of(m.total_ms()));
  return out;
}

inline std::string format_commands_csv(const Trace& trace) {
  std::string out = "t,id,v_ref\n";
  for (const auto& r : trace.records)
    for (const auto& [id, v] : r.commands) out += format_double(r.t) + "," + std::to_string(id) + "," + format_double(v) + "\n";
  return out;
}

inline std::string format_decisions(const Trace& trace) {
  std::string out;
  for (const auto& r : trace.records) {
    if (r.priorities.empty()) continue;
    out += "tick " + std::to_string(r.tick) + " t=" + format_double(r.t) + "\n";
    out += "  priority:";
    for (const auto& p : r.priorities) out += " " + std::string(to_string(p.kind)) + ":" + std::to_string(p.id);
    out += "\n";
    for (const auto& c : r.resolutions)
      out += "  cav " + std::to_string(c.id) + " v_ref=" + format_double(c.v_ref) + " iterations=" +
             std::to_string(c.iterations) + (c.floored ? " floored" : "") +
             (c.blockers.empty() ? "" : " blockers=" + detail::join_or_dash(c.blockers)) +
             (c.held_by.empty() ? "" : " held_by=" + detail::join_or_dash(c.held_by)) + "\n";
  }
  return out;
}

inline std::string format_collisions(const std::vector<CollisionEvent>& events) {
  if (events.empty()) return "no collisions\n";
  std::string out;
  for (const auto& e : events)
    out += "tick " + std::to_string(e.tick) + " t=" + format_double(e.t) + " vehicles " + std::to_string(e.a) + " " +
           std::to_string(e.b) + "\n";
  return out;
}

inline std::string format_summary(const RunResult& r) {
  std::ostringstream out;
  out << "management_ticks " << r.trace.records.size() << "\n";
  out << "collisions " << r.metrics.collisions.size() << "\n";
  out << "yield_events " << r.metrics.yields.size() << "\n";
  out << "floor_events " << r.metrics.floors.size() << "\n";
  for (const auto& [id, t] : r.metrics.travel_times) out << "travel_time " << id << " " << format_double(t) << "\n";
  return out.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

inline void emit_reports(const RunResult& r, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("cannot create " + out_dir.string() + ": " + ec.message());
  write_text(out_dir / "trace.txt", format_trace(r.trace));
  write_text(out_dir / "timing.txt", format_timing_table(r.metrics));
  write_text(out_dir / "commands.csv", format_commands_csv(r.trace));
  write_text(out_dir / "collisions.txt", format_collisions(r.metrics.collisions));
  write_text(out_dir / "decisions.txt", format_decisions(r.trace));
  write_text(out_dir / "summary.txt", format_summary(r));
  if (!r.bus_events.empty()) {
    std::string bus = std::string(kBusTraceHeader) + "\n";
    for (const auto& e : r.bus_events) bus += e.to_line() + "\n";
    write_text(out_dir / "bus.csv", bus);
  }
  if (!r.detection_log.empty()) {
    write_text(out_dir / "detections.log", format_detection_log(r.detection_log));
    write_text(out_dir / "truth.log", format_detection_log(r.truth_log));
  }
}

// ---------------------------------------------------------------------------
// Replay
// ---------------------------------------------------------------------------

struct TraceSummary {
  std::size_t ticks{0};
  double last_t{0.0};
  std::set<int> vehicles;
  std::size_t max_hvs{0};
  std::map<std::string, std::size_t> command_histogram;  // v_ref text -> count
  std::size_t floors{0};
  std::size_t fps_removed{0};
};

inline TraceSummary summarize_trace(const std::string& text, const std::string& source = "<trace>") {
  TraceSummary s;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0, hvs_this_tick = 0;
  bool header = false;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = trim(raw);
    if (line.empty()) continue;
    TokenCursor cur(source, line_no, split_ws(line));
    const auto kind = cur.word("record kind");
    if (!header) {
      if (kind != "trace" || cur.integer("version") != 1) cur.fail("not a trace file");
      header = true;
      continue;
    }
    if (kind == "tick") {
      const auto tick = cur.integer("tick");
      if (static_cast<std::size_t>(tick) != s.ticks) cur.fail("tick out of sequence");
      s.last_t = cur.number("t");
      ++s.ticks;
      hvs_this_tick = 0;
    } else if (kind == "state") {
      s.vehicles.insert(static_cast<int>(cur.integer("id")));
    } else if (kind == "hv") {
      s.max_hvs = std::max(s.max_hvs, ++hvs_this_tick);
    } else if (kind == "cmd") {
      cur.integer("id");
      const std::string v(cur.word("v_ref"));
      ++s.command_histogram[v];
      cur.integer("iterations");
      if (cur.word("status") == "floor") ++s.floors;
    } else if (kind == "fp") {
      ++s.fps_removed;
    } else if (kind != "physics_ticks" && kind != "det" && kind != "ident" && kind != "prio" && kind != "ctl") {
      cur.fail("unknown record '" + std::string(kind) + "'");
    }
  }
  if (!header) throw ParseError(source, line_no, "empty trace");
  return s;
}

inline std::string format_trace_summary(const TraceSummary& s) {
  std::ostringstream out;
  out << "ticks " << s.ticks << "\n";
  out << "last_t " << format_double(s.last_t) << "\n";
  out << "vehicles " << s.vehicles.size() << "\n";
  out << "max_tracked_hvs " << s.max_hvs << "\n";
  out << "false_positives_removed " << s.fps_removed << "\n";
  out << "floor_events " << s.floors << "\n";
  for (const auto& [v, n] : s.command_histogram) out << "commands v_ref=" << v << " " << n << "\n";
  return out.str();
}

}  // namespace coopdrive
