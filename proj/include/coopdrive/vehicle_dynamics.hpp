#pragma once

// Kinematic bicycle model, pure-pursuit lateral control, IDM longitudinal
// planning and constant-speed trajectory prediction along a path.

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "coopdrive/geometry.hpp"
#include "coopdrive/road_map.hpp"

namespace coopdrive {

struct VehicleState {
  double x{0.0};
  double y{0.0};
  double psi{0.0};  // heading, (-pi, pi]
  double v{0.0};    // longitudinal speed, never negative

  Vec2 position() const { return {x, y}; }
  bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(psi) && std::isfinite(v); }
  friend bool operator==(const VehicleState&, const VehicleState&) = default;
};

struct VehicleParams {
  double wheelbase{0.175};
  double alpha{4.0};  // inverse time constant of the speed lag, 1/s
  double length{0.30};
  double width{0.15};
  double v_max{0.5};
  double delta_max{0.6};

  void validate() const {
    if (!(wheelbase > 0 && alpha > 0 && length > 0 && width > 0 && v_max > 0 && delta_max > 0))
      throw std::invalid_argument("vehicle parameters must be positive");
  }
};

struct ControlInput {
  double v_ref{0.0};
  double delta{0.0};
};

struct IdmParams {
  double desired_speed{0.5};
  double time_headway{1.0};
  double min_gap{0.3};
  double max_accel{0.5};
  double comfort_decel{0.5};
  double exponent{4.0};

  void validate() const {
    if (!(desired_speed > 0 && time_headway > 0 && min_gap > 0 && max_accel > 0 && comfort_decel > 0 && exponent > 0))
      throw std::invalid_argument("IDM parameters must be positive");
  }
};

inline constexpr double kPhysicsSubstep = 0.01;

/// Explicit Euler integration of the kinematic bicycle model with a fixed
/// 0.01 s internal sub-step.
inline VehicleState step_bicycle(const VehicleState& state, const ControlInput& input, const VehicleParams& params,
                                 double dt) {
  if (!state.finite()) throw std::invalid_argument("non-finite vehicle state");
  if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
  if (std::abs(input.delta) > params.delta_max + 1e-12 || input.v_ref < 0.0 || input.v_ref > params.v_max + 1e-12)
    throw std::invalid_argument("control input out of bounds");
  const int steps = std::max(1, static_cast<int>(std::ceil(dt / kPhysicsSubstep - 1e-9)));
  const double h = dt / steps;
  const double yaw_gain = std::tan(input.delta) / params.wheelbase;
  VehicleState s = state;
  for (int i = 0; i < steps; ++i) {
    const double c = std::cos(s.psi);
    const double sn = std::sin(s.psi);
    const double v = s.v;
    s.x += v * c * h;
    s.y += v * sn * h;
    s.psi = wrap_angle(s.psi + v * yaw_gain * h);
    s.v = std::max(0.0, v + params.alpha * (input.v_ref - v) * h);
  }
  return s;
}

struct SteeringCommand {
  double delta{0.0};
  bool end_of_path{false};
};

/// Pure pursuit toward the first path point (ahead of the vehicle's
/// projection) at `lookahead` distance. Positive delta turns left.
inline SteeringCommand pure_pursuit_steer(const VehicleState& state, const PathRef& path, double lookahead,
                                          const VehicleParams& params) {
  if (path.polyline.size() < 2) throw std::invalid_argument("pure pursuit needs a path with length");
  if (!(lookahead > 0.0)) throw std::invalid_argument("lookahead must be positive");
  const Vec2 p = state.position();
  const auto proj = project_to_path(p, path);
  const double total = path.total_length();
  const Vec2 end = path.polyline.back();
  const Vec2 end_dir = end - path.polyline[path.polyline.size() - 2];
  if (proj.arclength >= total - 1e-12 && dot(p - end, end_dir) > 0.0) return {0.0, true};

  // Walk forward from the projection to the first crossing of the lookahead circle.
  Vec2 goal = end;
  const auto& cum = path.cumulative_arclength;
  std::size_t i = 1;
  while (i < cum.size() && cum[i] <= proj.arclength) ++i;
  Vec2 a = proj.point;
  for (; i < path.polyline.size(); ++i) {
    const Vec2 b = path.polyline[i];
    if (distance(p, b) >= lookahead) {
      // Solve |a + t (b - a) - p| = lookahead for the largest root in [0, 1].
      const Vec2 d = b - a;
      const Vec2 f = a - p;
      const double qa = dot(d, d);
      const double qb = 2.0 * dot(f, d);
      const double qc = dot(f, f) - lookahead * lookahead;
      const double disc = std::max(0.0, qb * qb - 4.0 * qa * qc);
      const double t = std::clamp((-qb + std::sqrt(disc)) / (2.0 * qa), 0.0, 1.0);
      goal = a + t * d;
      break;
    }
    a = b;
  }
  const Vec2 to_goal = goal - p;
  const double dist = norm(to_goal);
  if (dist < 1e-12) return {0.0, false};
  const double eta = wrap_angle(std::atan2(to_goal.y, to_goal.x) - state.psi);
  const double delta = std::atan(2.0 * params.wheelbase * std::sin(eta) / dist);
  return {std::clamp(delta, -params.delta_max, params.delta_max), false};
}

inline constexpr double kNoLeader = std::numeric_limits<double>::infinity();

/// IDM acceleration integrated over dt; result clamped to [0, desired_speed].
/// Pass gap = kNoLeader when there is no leader.
inline double idm_velocity(double ego_v, double gap, double leader_v, const IdmParams& p, double dt) {
  const double free_term = std::pow(ego_v / p.desired_speed, p.exponent);
  double interaction = 0.0;
  if (std::isfinite(gap)) {
    const double dv = ego_v - leader_v;
    const double s_star = p.min_gap + ego_v * p.time_headway + ego_v * dv / (2.0 * std::sqrt(p.max_accel * p.comfort_decel));
    const double ratio = std::max(0.0, s_star) / std::max(gap, 1e-9);
    interaction = ratio * ratio;
  }
  const double accel = p.max_accel * (1.0 - free_term - interaction);
  return std::clamp(ego_v + accel * dt, 0.0, p.desired_speed);
}

/// H future poses at spacing v_const * dt along the path, starting from the
/// state's projection onto the path; holds the final pose past the end.
inline std::vector<PathPose> predict_trajectory(const VehicleState& state, const PathRef& path, double v_const,
                                                int horizon, double dt) {
  if (horizon < 1) throw std::invalid_argument("horizon must be at least 1");
  if (v_const < 0.0) throw std::invalid_argument("negative prediction speed");
  if (path.empty()) throw std::invalid_argument("prediction on an empty path");
  std::vector<PathPose> out;
  out.reserve(static_cast<std::size_t>(horizon));
  if (path.polyline.size() < 2) {
    out.assign(static_cast<std::size_t>(horizon), PathPose{path.polyline.front(), state.psi});
    return out;
  }
  const double s0 = project_to_path(state.position(), path).arclength;
  const double total = path.total_length();
  for (int h = 1; h <= horizon; ++h) {
    const double s = std::min(total, s0 + v_const * dt * h);
    out.push_back(pose_at_arclength(path, s));
  }
  return out;
}

}  // namespace coopdrive
