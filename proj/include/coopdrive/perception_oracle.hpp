#pragma once

// Parametric stand-in for the infrastructure LiDAR detector. Produces noisy
// 2D pose detections from simulation ground truth, and provides the box
// utilities and AP scoring used to judge detection quality.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "coopdrive/geometry.hpp"
#include "coopdrive/road_map.hpp"
#include "coopdrive/text_io.hpp"
#include "coopdrive/vehicle_dynamics.hpp"

namespace coopdrive {

struct Detection {
  double x_hat{0.0};
  double y_hat{0.0};
  double psi_hat{0.0};
  double length{0.30};
  double width{0.15};
  double t{0.0};
  double score{1.0};
  int source_id{-1};  // ground-truth id for bookkeeping, -1 for false positives

  Vec2 position() const { return {x_hat, y_hat}; }
  OrientedRect box() const { return {{x_hat, y_hat}, psi_hat, length, width}; }
  friend bool operator==(const Detection&, const Detection&) = default;
};

struct TruthVehicle {
  int id{0};
  VehicleState state;
  double length{0.30};
  double width{0.15};
  bool is_cav{true};

  OrientedRect box() const { return {state.position(), state.psi, length, width}; }
};

struct GroundTruthFrame {
  double t{0.0};
  std::vector<TruthVehicle> vehicles;
};

struct NoiseModel {
  double sigma_pos{0.0};
  double sigma_psi{0.0};
  double p_fn{0.0};
  double fp_rate{0.0};
  Region fp_region;
  std::uint64_t seed{0};
  double fp_length{0.30};
  double fp_width{0.15};

  void validate() const {
    if (sigma_pos < 0 || sigma_psi < 0) throw std::invalid_argument("noise sigmas must be non-negative");
    if (!(p_fn >= 0 && p_fn <= 1)) throw std::invalid_argument("p_fn outside [0, 1]");
    if (fp_rate < 0) throw std::invalid_argument("fp_rate must be non-negative");
    if (fp_rate > 0 && fp_region.polygon.size() < 3) throw std::invalid_argument("fp_rate > 0 needs an fp_region");
  }

  /// Calibrated so AP lands near the physical detector's figures; a repo
  /// choice, not a measured property of any detector.
  static NoiseModel testbed_like(Region region, std::uint64_t seed) {
    NoiseModel n;
    n.sigma_pos = 0.02;
    n.sigma_psi = 3.0 * std::numbers::pi / 180.0;
    n.p_fn = 0.02;
    n.fp_rate = 0.05;
    n.fp_region = std::move(region);
    n.seed = seed;
    return n;
  }
};

inline constexpr double kNoiseClipSigmas = 6.0;

namespace detail {

inline std::mt19937_64 frame_rng(std::uint64_t seed, double t) {
  const auto tb = std::bit_cast<std::uint64_t>(t);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tb), static_cast<std::uint32_t>(tb >> 32)};
  return std::mt19937_64(seq);
}

inline double clipped_normal(std::mt19937_64& rng, double sigma) {
  if (sigma <= 0.0) return 0.0;
  const double z = std::normal_distribution<double>(0.0, 1.0)(rng);
  return sigma * std::clamp(z, -kNoiseClipSigmas, kNoiseClipSigmas);
}

}  // namespace detail

/// One sensing frame. Deterministic in (frame, noise, coverage).
inline std::vector<Detection> sense(const GroundTruthFrame& frame, const NoiseModel& noise, const Region& coverage) {
  noise.validate();
  auto rng = detail::frame_rng(noise.seed, frame.t);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  auto vehicles = frame.vehicles;
  std::sort(vehicles.begin(), vehicles.end(), [](const auto& a, const auto& b) { return a.id < b.id; });

  std::vector<Detection> out;
  for (const auto& v : vehicles) {
    if (!in_region(v.state.position(), coverage)) continue;
    const double u = unit(rng);
    const double dx = detail::clipped_normal(rng, noise.sigma_pos);
    const double dy = detail::clipped_normal(rng, noise.sigma_pos);
    const double dpsi = detail::clipped_normal(rng, noise.sigma_psi);
    if (u < noise.p_fn) continue;
    Detection d;
    d.x_hat = v.state.x + dx;
    d.y_hat = v.state.y + dy;
    d.psi_hat = wrap_angle(v.state.psi + dpsi);
    d.length = v.length;
    d.width = v.width;
    d.t = frame.t;
    d.source_id = v.id;
    const double max_err = kNoiseClipSigmas * noise.sigma_pos * std::numbers::sqrt2;
    d.score = max_err > 0.0 ? 1.0 - std::min(1.0, std::hypot(dx, dy) / max_err) : 1.0;
    out.push_back(d);
  }

  if (noise.fp_rate > 0.0) {
    const int count = std::poisson_distribution<int>(noise.fp_rate)(rng);
    const auto& poly = noise.fp_region.polygon;
    Vec2 lo = poly.front(), hi = poly.front();
    for (const Vec2 p : poly) {
      lo = {std::min(lo.x, p.x), std::min(lo.y, p.y)};
      hi = {std::max(hi.x, p.x), std::max(hi.y, p.y)};
    }
    for (int k = 0; k < count; ++k) {
      Vec2 p = lo;
      for (int attempt = 0; attempt < 1000; ++attempt) {
        p = {lo.x + unit(rng) * (hi.x - lo.x), lo.y + unit(rng) * (hi.y - lo.y)};
        if (in_region(p, noise.fp_region)) break;
      }
      Detection d;
      d.x_hat = p.x;
      d.y_hat = p.y;
      d.psi_hat = wrap_angle((2.0 * unit(rng) - 1.0) * std::numbers::pi);
      d.length = noise.fp_length;
      d.width = noise.fp_width;
      d.t = frame.t;
      d.score = unit(rng);
      out.push_back(d);
    }
  }
  return out;
}

struct BoxPose {
  double x_hat{0.0};
  double y_hat{0.0};
  double psi_hat{0.0};  // (-pi/2, pi/2]
  double length{0.0};
  double width{0.0};
};

/// Converts the four ordered corners of a (near-)rectangle to center,
/// long-axis heading and side lengths. When both sides are equal the edge
/// from corner 0 to corner 1 defines the heading.
inline BoxPose corners_to_pose(std::span<const Vec2, 4> c) {
  const Vec2 e01 = c[1] - c[0];
  const Vec2 e12 = c[2] - c[1];
  const Vec2 e23 = c[3] - c[2];
  const Vec2 e30 = c[0] - c[3];
  const double area = std::abs(polygon_signed_area(std::span<const Vec2>(c.data(), 4)));
  const double a = norm(e01), b = norm(e12);
  if (area < 1e-12 || a < 1e-9 || b < 1e-9) throw std::invalid_argument("degenerate corner set");
  const auto close = [](double p, double q) { return std::abs(p - q) <= 0.05 * std::max(p, q); };
  if (!close(a, norm(e23)) || !close(b, norm(e30)) || !close(norm(c[2] - c[0]), norm(c[3] - c[1])))
    throw std::invalid_argument("corners do not form a rectangle");

  BoxPose out;
  const Vec2 center = 0.25 * (c[0] + c[1] + c[2] + c[3]);
  out.x_hat = center.x;
  out.y_hat = center.y;
  // Average opposite sides so small corner noise does not bias the dims.
  const double side_a = 0.5 * (a + norm(e23));
  const double side_b = 0.5 * (b + norm(e30));
  const Vec2 axis = side_a >= side_b ? e01 : e12;
  out.length = std::max(side_a, side_b);
  out.width = std::min(side_a, side_b);
  double psi = std::atan2(axis.y, axis.x);
  if (psi <= -std::numbers::pi / 2) psi += std::numbers::pi;
  if (psi > std::numbers::pi / 2) psi -= std::numbers::pi;
  out.psi_hat = psi;
  return out;
}

inline double oriented_iou(const OrientedRect& a, const OrientedRect& b) {
  const double inter = rect_intersection_area(a, b);
  const double uni = rect_area(a) + rect_area(b) - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

inline double oriented_iou(const Detection& a, const Detection& b) { return oriented_iou(a.box(), b.box()); }

struct ApResult {
  std::vector<double> thresholds;
  std::vector<double> ap;
  bool empty_truth{false};  // truth had no objects; every AP reported as 0
};

/// Single-class AP per IoU threshold. Detections are matched greedily by
/// descending score (ties: earlier frame, then lower index) to the unmatched
/// truth box of highest IoU in the same frame; AP is the area under the
/// all-point interpolated precision-recall curve.
inline ApResult evaluate_ap(const std::vector<std::vector<Detection>>& detections,
                            const std::vector<std::vector<OrientedRect>>& truth,
                            const std::vector<double>& iou_thresholds) {
  if (detections.size() != truth.size()) throw std::invalid_argument("detection and truth frame counts differ");
  ApResult result;
  result.thresholds = iou_thresholds;
  std::size_t n_truth = 0;
  for (const auto& f : truth) n_truth += f.size();
  if (n_truth == 0) {
    result.empty_truth = true;
    result.ap.assign(iou_thresholds.size(), 0.0);
    return result;
  }

  struct Ranked {
    double score;
    std::size_t frame;
    std::size_t index;
  };
  std::vector<Ranked> ranked;
  for (std::size_t f = 0; f < detections.size(); ++f)
    for (std::size_t i = 0; i < detections[f].size(); ++i) ranked.push_back({detections[f][i].score, f, i});
  std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) { return a.score > b.score; });

  for (const double thr : iou_thresholds) {
    std::vector<std::vector<bool>> used(truth.size());
    for (std::size_t f = 0; f < truth.size(); ++f) used[f].assign(truth[f].size(), false);
    std::vector<double> precision, recall;
    std::size_t tp = 0, fp = 0;
    for (const auto& r : ranked) {
      const auto det = detections[r.frame][r.index].box();
      double best = -1.0;
      std::size_t best_j = 0;
      for (std::size_t j = 0; j < truth[r.frame].size(); ++j) {
        if (used[r.frame][j]) continue;
        const double iou = oriented_iou(det, truth[r.frame][j]);
        if (iou > best) {
          best = iou;
          best_j = j;
        }
      }
      if (best >= thr && best > 0.0) {
        used[r.frame][best_j] = true;
        ++tp;
      } else {
        ++fp;
      }
      precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
      recall.push_back(static_cast<double>(tp) / static_cast<double>(n_truth));
    }
    // Precision envelope from the right, then sum over recall steps.
    for (std::size_t k = precision.size(); k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);
    double ap = 0.0, prev_recall = 0.0;
    for (std::size_t k = 0; k < precision.size(); ++k) {
      ap += (recall[k] - prev_recall) * precision[k];
      prev_recall = recall[k];
    }
    result.ap.push_back(ap);
  }
  return result;
}

inline ApResult evaluate_ap(const std::vector<std::vector<Detection>>& detections,
                            const std::vector<GroundTruthFrame>& truth, const std::vector<double>& iou_thresholds) {
  std::vector<std::vector<OrientedRect>> boxes;
  boxes.reserve(truth.size());
  for (const auto& f : truth) {
    auto& row = boxes.emplace_back();
    for (const auto& v : f.vehicles) row.push_back(v.box());
  }
  return evaluate_ap(detections, boxes, iou_thresholds);
}

// ---------------------------------------------------------------------------
// Detection log
//
//   frame <t> <count>
//   <x> <y> <psi> <length> <width> <score>      (count lines)
//
// SI units, radians. Frames strictly increase in time; gaps are allowed.
// ---------------------------------------------------------------------------

struct DetectionFrame {
  double t{0.0};
  std::vector<Detection> detections;
};

inline std::string format_detection_log(const std::vector<DetectionFrame>& frames) {
  std::string out;
  for (const auto& f : frames) {
    out += "frame " + format_double(f.t) + " " + std::to_string(f.detections.size()) + "\n";
    for (const auto& d : f.detections) {
      out += format_double(d.x_hat) + " " + format_double(d.y_hat) + " " + format_double(d.psi_hat) + " " +
             format_double(d.length) + " " + format_double(d.width) + " " + format_double(d.score) + "\n";
    }
  }
  return out;
}

inline void write_detection_log(const std::string& path, const std::vector<DetectionFrame>& frames) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << format_detection_log(frames);
}

inline std::vector<DetectionFrame> parse_detection_log(const std::string& text, const std::string& source = "<log>") {
  std::vector<DetectionFrame> frames;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  long long expected = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = trim(strip_comment(raw));
    if (line.empty()) continue;
    TokenCursor cur(source, line_no, split_ws(line));
    if (expected == 0) {
      if (cur.word("frame keyword") != "frame") cur.fail("expected 'frame <t> <count>'");
      DetectionFrame f;
      f.t = cur.number("frame time");
      expected = cur.integer("detection count");
      cur.expect_end();
      if (!std::isfinite(f.t) || expected < 0) cur.fail("bad frame header");
      if (!frames.empty() && !(f.t > frames.back().t)) cur.fail("frame time out of order");
      frames.push_back(std::move(f));
      continue;
    }
    Detection d;
    d.x_hat = cur.number("x");
    d.y_hat = cur.number("y");
    d.psi_hat = cur.number("psi");
    d.length = cur.number("length");
    d.width = cur.number("width");
    d.score = cur.number("score");
    cur.expect_end();
    if (!(d.length > 0 && d.width > 0)) cur.fail("box dimensions must be positive");
    d.t = frames.back().t;
    frames.back().detections.push_back(d);
    --expected;
  }
  if (expected != 0) throw ParseError(source, line_no, "log ended inside a frame");
  return frames;
}

inline std::vector<DetectionFrame> replay_log(const std::string& file) {
  return parse_detection_log(read_file(file), file);
}

}  // namespace coopdrive
