#pragma once

// Scenario files: INI-like sections of key = value pairs.
//
//   scenario 1
//   [general]            name, map, duration, seed, intersection, coverage
//   [bus]                v2v_range, publish_rate_hz, latency_ticks, drop_probability
//   [manager]            v_max, dv_step, horizon, dt, b_safe, any_time_conflicts
//   [noise]              preset (zero | testbed), sigma_pos, sigma_psi_deg, p_fn, fp_rate
//   [hv_identification]  tau_cav, tau_fp, tau_p, grace_period, bootstrap
//   [faults]             false_positive = t x y psi ; drop_detection = id t_from t_to
//   [vehicle NAME]       id, kind, start, goal | route, spawn_time, spawn_offset,
//                        initial_speed, speed_profile, lookahead, vehicle and idm_* params
//
// Paths are relative to the scenario file. Units are SI, angles in radians
// unless the key says otherwise.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "coopdrive/hv_identification.hpp"
#include "coopdrive/intersection_manager.hpp"
#include "coopdrive/perception_oracle.hpp"
#include "coopdrive/road_map.hpp"
#include "coopdrive/text_io.hpp"
#include "coopdrive/v2x_bus.hpp"
#include "coopdrive/vehicle_dynamics.hpp"

namespace coopdrive {

struct VehicleSpec {
  std::string name;
  int id{0};
  AgentKind kind{AgentKind::cav};
  int start_node{0};
  int goal_node{0};
  std::vector<int> route;  // overrides start/goal when set
  double spawn_time{0.0};
  double spawn_offset{0.0};  // arclength along the route
  double initial_speed{0.0};
  std::vector<std::pair<double, double>> speed_profile;  // (seconds since spawn, v_ref), HVs only
  double lookahead{0.3};
  VehicleParams params;
  IdmParams idm;

  /// Scripted speed at `elapsed` seconds after spawn: the last profile
  /// point not after `elapsed`, v_max before the first.
  double scripted_speed(double elapsed) const {
    double v = params.v_max;
    for (const auto& [t, s] : speed_profile)
      if (t <= elapsed + 1e-9) v = s;
    return std::clamp(v, 0.0, params.v_max);
  }
};

struct InjectedFalsePositive {
  double t{0.0};
  double x{0.0};
  double y{0.0};
  double psi{0.0};
};

struct DetectionDropout {
  int vehicle_id{0};
  double t_from{0.0};
  double t_to{0.0};
};

struct FaultConfig {
  std::vector<InjectedFalsePositive> false_positives;
  std::vector<DetectionDropout> dropouts;
};

struct Scenario {
  std::string name{"scenario"};
  std::string map_file;
  RoadGraph graph;
  std::string intersection_region{"intersection"};
  std::string coverage_region{"v2i_coverage"};
  BusConfig bus;
  ManagerConfig manager;
  NoiseModel noise;
  HvIdentificationConfig hv;
  FaultConfig faults;
  std::vector<VehicleSpec> vehicles;
  double duration{10.0};
  std::uint64_t seed{0};

  const Region& intersection() const { return graph.region(intersection_region); }
  const Region& coverage() const { return graph.region(coverage_region); }

  PathRef route_of(const VehicleSpec& v) const {
    return v.route.empty() ? shortest_path(graph, v.start_node, v.goal_node) : make_path(graph, v.route);
  }

  /// Rebinds the seed everywhere randomness is drawn.
  void reseed(std::uint64_t s) {
    seed = s;
    noise.seed = s;
    bus.seed = s;
  }

  void validate() const {
    if (!(duration > 0)) throw std::invalid_argument("duration must be positive");
    bus.validate();
    manager.validate();
    noise.validate();
    hv.validate();
    std::set<int> ids;
    for (const auto& v : vehicles) {
      if (v.id < 1) throw std::invalid_argument("vehicle '" + v.name + "' needs an id >= 1");
      if (!ids.insert(v.id).second) throw std::invalid_argument("duplicate vehicle id " + std::to_string(v.id));
      v.params.validate();
      v.idm.validate();
      if (v.spawn_time < 0) throw std::invalid_argument("vehicle '" + v.name + "' spawns before t = 0");
      if (!(v.lookahead > 0)) throw std::invalid_argument("vehicle '" + v.name + "' lookahead must be positive");
      if (v.initial_speed < 0 || v.initial_speed > v.params.v_max)
        throw std::invalid_argument("vehicle '" + v.name + "' initial_speed out of range");
      const auto path = route_of(v);
      if (path.polyline.size() < 2) throw std::invalid_argument("vehicle '" + v.name + "' has an empty route");
      if (v.spawn_offset < 0 || v.spawn_offset >= path.total_length())
        throw std::invalid_argument("vehicle '" + v.name + "' spawn_offset is off its route");
    }
  }
};

namespace detail {

inline bool parse_bool(TokenCursor& cur, const std::string& what) {
  const auto w = cur.word(what);
  if (w == "true" || w == "1" || w == "yes") return true;
  if (w == "false" || w == "0" || w == "no") return false;
  cur.fail(what + " must be true or false");
}

}  // namespace detail

/// Parses scenario text. `base_dir` resolves the map path; pass the
/// directory of the scenario file.
inline Scenario parse_scenario(const std::string& text, const std::filesystem::path& base_dir,
                               const std::string& source = "<scenario>") {
  Scenario sc;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  bool header_seen = false;
  std::string section;
  VehicleSpec* vehicle = nullptr;
  std::string noise_preset = "zero";
  std::map<std::string, double> noise_overrides;
  std::size_t map_line = 0;

  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (!header_seen) {
      TokenCursor cur(source, line_no, split_ws(line));
      if (cur.word("header") != "scenario") cur.fail("expected 'scenario <version>' header");
      if (cur.integer("version") != 1) cur.fail("unsupported scenario version");
      cur.expect_end();
      header_seen = true;
      continue;
    }
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError(source, line_no, "unterminated section header");
      TokenCursor cur(source, line_no, split_ws(line.substr(1, line.size() - 2)));
      section = std::string(cur.word("section name"));
      vehicle = nullptr;
      if (section == "vehicle") {
        sc.vehicles.emplace_back();
        vehicle = &sc.vehicles.back();
        vehicle->name = std::string(cur.word("vehicle name"));
      } else if (section != "general" && section != "bus" && section != "manager" && section != "noise" &&
                 section != "hv_identification" && section != "faults") {
        cur.fail("unknown section '" + section + "'");
      }
      cur.expect_end();
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(source, line_no, "expected 'key = value'");
    const std::string key(trim(line.substr(0, eq)));
    TokenCursor cur(source, line_no, split_ws(trim(line.substr(eq + 1))));
    const auto unknown = [&] { cur.fail("unknown key '" + key + "' in [" + section + "]"); };
    const auto num = [&] {
      const double v = cur.number(key);
      cur.expect_end();
      return v;
    };
    const auto integer = [&] {
      const auto v = cur.integer(key);
      cur.expect_end();
      return v;
    };
    const auto boolean = [&] {
      const bool v = detail::parse_bool(cur, key);
      cur.expect_end();
      return v;
    };

    if (section.empty()) {
      cur.fail("key outside of a section");
    } else if (section == "general") {
      if (key == "name") sc.name = std::string(cur.word(key));
      else if (key == "map") {
        sc.map_file = (base_dir / std::string(cur.word(key))).lexically_normal().string();
        map_line = line_no;
      } else if (key == "duration") sc.duration = num();
      else if (key == "seed") sc.seed = static_cast<std::uint64_t>(integer());
      else if (key == "intersection") sc.intersection_region = std::string(cur.word(key));
      else if (key == "coverage") sc.coverage_region = std::string(cur.word(key));
      else unknown();
    } else if (section == "bus") {
      if (key == "v2v_range") sc.bus.v2v_range = num();
      else if (key == "publish_rate_hz") sc.bus.publish_rate_hz = num();
      else if (key == "latency_ticks") sc.bus.latency_ticks = static_cast<int>(integer());
      else if (key == "drop_probability") sc.bus.drop_probability = num();
      else unknown();
    } else if (section == "manager") {
      if (key == "v_max") sc.manager.v_max = num();
      else if (key == "dv_step") sc.manager.dv_step = num();
      else if (key == "horizon") sc.manager.horizon = static_cast<int>(integer());
      else if (key == "dt") sc.manager.dt = num();
      else if (key == "b_safe") sc.manager.b_safe = num();
      else if (key == "tick_rate_hz") sc.manager.tick_rate_hz = num();
      else if (key == "any_time_conflicts") sc.manager.any_time_conflicts = boolean();
      else unknown();
    } else if (section == "noise") {
      if (key == "preset") {
        noise_preset = std::string(cur.word(key));
        if (noise_preset != "zero" && noise_preset != "testbed") cur.fail("noise preset must be zero or testbed");
      } else if (key == "sigma_pos" || key == "sigma_psi_deg" || key == "p_fn" || key == "fp_rate") {
        noise_overrides[key] = num();
      } else {
        unknown();
      }
    } else if (section == "hv_identification") {
      if (key == "tau_cav") sc.hv.thresholds.tau_cav = num();
      else if (key == "tau_fp") sc.hv.thresholds.tau_fp = num();
      else if (key == "tau_p") sc.hv.thresholds.tau_p = num();
      else if (key == "grace_period") sc.hv.grace_period = num();
      else if (key == "bootstrap") sc.hv.bootstrap = boolean();
      else unknown();
    } else if (section == "faults") {
      if (key == "false_positive") {
        InjectedFalsePositive f;
        f.t = cur.number("t");
        f.x = cur.number("x");
        f.y = cur.number("y");
        f.psi = cur.number("psi");
        cur.expect_end();
        sc.faults.false_positives.push_back(f);
      } else if (key == "drop_detection") {
        DetectionDropout d;
        d.vehicle_id = static_cast<int>(cur.integer("vehicle id"));
        d.t_from = cur.number("t_from");
        d.t_to = cur.number("t_to");
        cur.expect_end();
        sc.faults.dropouts.push_back(d);
      } else {
        unknown();
      }
    } else {  // vehicle
      VehicleSpec& v = *vehicle;
      if (key == "id") v.id = static_cast<int>(integer());
      else if (key == "kind") {
        const auto k = cur.word(key);
        cur.expect_end();
        if (k == "cav") v.kind = AgentKind::cav;
        else if (k == "hv") v.kind = AgentKind::hv;
        else cur.fail("kind must be cav or hv");
      } else if (key == "start") v.start_node = static_cast<int>(integer());
      else if (key == "goal") v.goal_node = static_cast<int>(integer());
      else if (key == "route") {
        while (cur.remaining() > 0) v.route.push_back(static_cast<int>(cur.integer("segment id")));
        if (v.route.empty()) cur.fail("route needs at least one segment");
      } else if (key == "spawn_time") v.spawn_time = num();
      else if (key == "spawn_offset") v.spawn_offset = num();
      else if (key == "initial_speed") v.initial_speed = num();
      else if (key == "lookahead") v.lookahead = num();
      else if (key == "speed_profile") {
        if (cur.remaining() == 0 || cur.remaining() % 2 != 0) cur.fail("speed_profile needs (time, speed) pairs");
        while (cur.remaining() > 0) {
          const double t = cur.number("profile time");
          v.speed_profile.emplace_back(t, cur.number("profile speed"));
        }
      } else if (key == "wheelbase") v.params.wheelbase = num();
      else if (key == "alpha") v.params.alpha = num();
      else if (key == "length") v.params.length = num();
      else if (key == "width") v.params.width = num();
      else if (key == "v_max") v.params.v_max = num();
      else if (key == "delta_max") v.params.delta_max = num();
      else if (key == "idm_desired_speed") v.idm.desired_speed = num();
      else if (key == "idm_time_headway") v.idm.time_headway = num();
      else if (key == "idm_min_gap") v.idm.min_gap = num();
      else if (key == "idm_max_accel") v.idm.max_accel = num();
      else if (key == "idm_comfort_decel") v.idm.comfort_decel = num();
      else if (key == "idm_exponent") v.idm.exponent = num();
      else unknown();
    }
  }
  if (!header_seen) throw ParseError(source, line_no, "missing 'scenario 1' header");
  if (sc.map_file.empty()) throw ParseError(source, line_no, "[general] needs a map");

  try {
    sc.graph = load_map(sc.map_file);
  } catch (const std::runtime_error& e) {
    throw ParseError(source, map_line, std::string("cannot load map: ") + e.what());
  }
  sc.bus.seed = sc.seed;
  sc.bus.v2i_region = sc.coverage();
  sc.noise = noise_preset == "testbed" ? NoiseModel::testbed_like(sc.coverage(), sc.seed) : NoiseModel{};
  sc.noise.fp_region = sc.coverage();
  sc.noise.seed = sc.seed;
  for (const auto& [k, v] : noise_overrides) {
    if (k == "sigma_pos") sc.noise.sigma_pos = v;
    else if (k == "sigma_psi_deg") sc.noise.sigma_psi = v * std::numbers::pi / 180.0;
    else if (k == "p_fn") sc.noise.p_fn = v;
    else sc.noise.fp_rate = v;
  }
  for (auto& v : sc.vehicles) {
    if (v.kind == AgentKind::cav && !v.speed_profile.empty())
      throw std::invalid_argument("vehicle '" + v.name + "': speed_profile is for HVs only");
  }
  sc.validate();
  return sc;
}

inline Scenario load_scenario(const std::string& file) {
  const std::filesystem::path p(file);
  return parse_scenario(read_file(file), p.parent_path(), file);
}

}  // namespace coopdrive
