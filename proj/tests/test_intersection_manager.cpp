#include <gtest/gtest.h>

#include <numbers>
#include <random>

#include "coopdrive/intersection_manager.hpp"

using namespace coopdrive;

namespace {

constexpr double kPi = std::numbers::pi;

const RoadGraph& testbed() {
  static const RoadGraph g = load_map(std::string(COOPDRIVE_SOURCE_DIR) + "/data/testbed_map.txt");
  return g;
}

const Region& junction() { return testbed().region("intersection"); }

PathRef line(Vec2 a, Vec2 b) {
  PathRef p;
  p.polyline = {a, b};
  p.cumulative_arclength = {0.0, distance(a, b)};
  return p;
}

ManagerConfig literal() {
  ManagerConfig c;
  c.reserve_faster_rungs = false;
  c.keep_clear = false;
  return c;
}

// Time-aligned overlap, written directly against the rectangles.
bool stepwise_conflict(const OccupiedRegion& a, const OccupiedRegion& b) {
  for (std::size_t h = 0; h < a.steps.size(); ++h)
    for (const auto& ra : a.steps[h])
      for (const auto& rb : b.steps[h])
        if (rects_overlap(ra, rb)) return true;
  return false;
}

// The ladder loop as stated: start at v_max, step down while any
// higher-priority region conflicts, stop at 0.
std::map<int, double> literal_ladder(const std::vector<CavMessage>& msgs, const std::vector<OccupiedRegion>& hvs,
                                     const ManagerConfig& cfg) {
  std::vector<OccupiedRegion> higher = hvs;
  std::map<int, double> out;
  for (const auto& m : msgs) {
    double v = cfg.v_max;
    OccupiedRegion region;
    for (int k = 0;; ++k) {
      v = std::max(0.0, std::round((cfg.v_max - k * cfg.dv_step) * 1e9) / 1e9);
      region = predict_occupied_region({m.x, m.y, m.psi, m.v}, m.path, v, cfg, Footprint{});
      const bool hit = std::any_of(higher.begin(), higher.end(), [&](const auto& r) { return stepwise_conflict(region, r); });
      if (!hit || v == 0.0) break;
    }
    out[m.sender_id] = v;
    higher.push_back(region);
  }
  return out;
}

struct Route {
  int start, goal;
};
const std::vector<Route> kRoutes{{30, 42}, {30, 43}, {31, 43}, {31, 40}, {32, 40}, {32, 41}, {33, 41}, {33, 42}};

// CAVs on random routes at random points near or inside the junction, one per arm.
std::vector<CavMessage> random_cavs(std::mt19937_64& rng, int n) {
  std::vector<CavMessage> out;
  std::vector<int> arms{0, 1, 2, 3};
  std::shuffle(arms.begin(), arms.end(), rng);
  for (int i = 0; i < n && i < 4; ++i) {
    const auto& r = kRoutes[static_cast<std::size_t>(2 * arms[static_cast<std::size_t>(i)] + std::uniform_int_distribution<int>(0, 1)(rng))];
    const auto path = shortest_path(testbed(), r.start, r.goal);
    const double s = std::uniform_real_distribution<double>(0.6, 2.2)(rng);
    const auto pose = pose_at_arclength(path, s);
    out.push_back(make_cav_message({pose.position.x, pose.position.y, pose.heading, 0.5}, path, i + 1, 0.0));
  }
  return out;
}

PriorityTable table_for(const std::vector<CavMessage>& msgs) {
  PriorityTable t;
  for (std::size_t i = 0; i < msgs.size(); ++i) t.push_back({msgs[i].sender_id, AgentKind::cav, 0.1 * static_cast<double>(i)});
  return t;
}

HvEstimate hv_at(Vec2 p, double psi, std::vector<PathRef> paths) {
  HvEstimate e;
  e.track_id = 1;
  e.x_hat = p.x;
  e.y_hat = p.y;
  e.psi_hat = psi;
  e.candidate_paths = std::move(paths);
  return e;
}

// Three-car moment: white (W to E) and purple (E to W) run on parallel
// lanes, orange comes up from the south across white's lane.
std::vector<CavMessage> fig7_scene() {
  const auto& g = testbed();
  return {make_cav_message({3.3, 2.3, 0.0, 0.5}, shortest_path(g, 32, 40), 1, 1.6),
          make_cav_message({4.4, 3.2, kPi, 0.5}, shortest_path(g, 30, 42), 2, 1.6),
          make_cav_message({3.45, 0.65, kPi / 2, 0.5}, shortest_path(g, 33, 41), 3, 1.6)};
}

}  // namespace

TEST(Ladder, DefaultRungs) {
  EXPECT_EQ(ManagerConfig{}.ladder(), (std::vector<double>{0.5, 0.4, 0.3, 0.2, 0.1, 0.0}));
  ManagerConfig c;
  c.dv_step = 0.15;
  EXPECT_EQ(c.ladder(), (std::vector<double>{0.5, 0.35, 0.2, 0.05, 0.0}));
  c.dv_step = 0.6;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Priorities, EntryOrderHvFirstAndTies) {
  std::vector<CavMessage> msgs;
  const std::vector<Vec2> inside{{2.0, 2.3}, {3.0, 3.2}, {2.55, 3.8}, {3.45, 1.6}, {4.2, 3.2}};
  for (int i = 0; i < 5; ++i) msgs.push_back(make_cav_message({inside[i].x, inside[i].y, 0, 0.5}, {}, 10 + i, 1.0));
  std::map<int, double> log{{13, 0.4}, {10, 0.8}, {12, 1.1}, {14, 0.2}, {11, 0.6}};
  auto t = assign_priorities(msgs, {}, log, junction());
  std::vector<int> order;
  for (const auto& e : t) order.push_back(e.id);
  EXPECT_EQ(order, (std::vector<int>{14, 13, 11, 10, 12}));

  const auto hv = hv_at({3.0, 2.3}, 0.0, {});
  t = assign_priorities(msgs, {hv}, log, junction());
  EXPECT_EQ(t.front().kind, AgentKind::hv);
  EXPECT_EQ(t.size(), 6u);

  log[11] = log[10] = 0.5;
  t = assign_priorities(msgs, {}, log, junction());
  EXPECT_EQ(t[2].id, 10);
  EXPECT_EQ(t[3].id, 11);

  // Outside the box: no priority at all, and no entry time needed.
  msgs.push_back(make_cav_message({0.5, 2.3, 0, 0.5}, {}, 20, 1.0));
  EXPECT_EQ(assign_priorities(msgs, {hv_at({0.5, 3.2}, kPi, {})}, log, junction()).size(), 5u);
}

TEST(Priorities, EntryLogKeepsFirstTime) {
  std::map<int, double> log;
  const auto m = make_cav_message({2.0, 2.3, 0, 0.5}, {}, 1, 0.0);
  const auto out = make_cav_message({0.5, 2.3, 0, 0.5}, {}, 2, 0.0);
  update_entry_log(log, {m, out}, junction(), 1.2);
  update_entry_log(log, {m, out}, junction(), 1.3);
  EXPECT_EQ(log, (std::map<int, double>{{1, 1.2}}));
}

TEST(OccupiedRegion, StationaryInflatedAndSpaced) {
  const ManagerConfig cfg;
  const auto path = line({0, 0}, {5, 0});
  const auto still = predict_occupied_region({1.0, 0.02, 0.0, 0.0}, path, 0.0, cfg, Footprint{});
  ASSERT_EQ(still.horizon(), 30u);
  for (const auto& step : still.steps) {
    ASSERT_EQ(step.size(), 1u);
    EXPECT_EQ(step[0].center, (Vec2{1.0, 0.0}));
    EXPECT_NEAR(step[0].length - 0.30, 0.60, 1e-12);
    EXPECT_NEAR(step[0].width - 0.15, 0.60, 1e-12);
  }
  const auto moving = predict_occupied_region({1.0, 0.0, 0.0, 0.5}, path, 0.5, cfg, Footprint{});
  for (std::size_t h = 1; h < moving.horizon(); ++h)
    EXPECT_NEAR(moving.steps[h][0].center.x - moving.steps[h - 1][0].center.x, 0.05, 1e-12);
}

TEST(HvUnion, OneTwoAndPrunedCandidates) {
  const ManagerConfig cfg;
  const auto straight = make_path(testbed(), {102, 302});
  const auto left = make_path(testbed(), {102, 402});
  const Vec2 p{2.4, 2.3};
  const auto one = hv_occupied_union(hv_at(p, 0.0, {straight}), cfg, Footprint{}, testbed(), junction());
  const auto direct = predict_occupied_region({p.x, p.y, 0.0, 0.5}, straight, cfg.v_max, cfg, Footprint{});
  ASSERT_EQ(one.horizon(), direct.horizon());
  for (std::size_t h = 0; h < one.horizon(); ++h) {
    ASSERT_EQ(one.steps[h].size(), 1u);
    EXPECT_EQ(one.steps[h][0].center, direct.steps[h][0].center);
  }
  const auto two = hv_occupied_union(hv_at(p, 0.0, {straight, left}), cfg, Footprint{}, testbed(), junction());
  for (const auto& step : two.steps) EXPECT_EQ(step.size(), 2u);
  // The branches separate late in the horizon.
  EXPECT_GT(distance(two.steps.back()[0].center, two.steps.back()[1].center), 0.3);
  // A CAV stopped on the north exit lane is only threatened by the left branch.
  const auto cav = predict_occupied_region({3.45, 3.7, kPi / 2, 0.0}, line({3.45, 3.7}, {3.45, 5.0}), 0.0, cfg, Footprint{});
  EXPECT_TRUE(regions_conflict(two, cav));
  EXPECT_TRUE(regions_conflict(hv_occupied_union(hv_at(p, 0.0, {left}), cfg, Footprint{}, testbed(), junction()), cav));
  EXPECT_FALSE(regions_conflict(one, cav));
}

TEST(HvUnion, NoCandidatesFallsBack) {
  const ManagerConfig cfg;
  const auto u = hv_occupied_union(hv_at({1.2, 2.3}, 0.0, {}), cfg, Footprint{}, testbed(), junction());
  EXPECT_GE(u.steps.front().size(), 2u);
  // No route through the box from the nearest node: a straight ray along the heading.
  const auto stub = parse_map("roadmap 1\n[nodes]\n1 0 0\n2 0.1 0\n[segments]\n5 1 2 2 0 0 0.1 0\n"
                              "[regions]\nintersection 4 5 5 6 5 6 6 5 6\n");
  const auto ray = hv_occupied_union(hv_at({0.5, 0.0}, 0.0, {}), cfg, Footprint{}, stub, stub.region("intersection"));
  ASSERT_EQ(ray.steps.front().size(), 1u);
  EXPECT_NEAR(ray.steps[9][0].center.x - 0.5, 0.5, 1e-9);
}

TEST(Conflict, IdenticalFarAndTimeAligned) {
  ManagerConfig cfg;
  cfg.b_safe = 0.0;
  const Footprint fp{0.3, 0.15};
  // A reaches the crossing point at about step 20, B at about step 10.
  const auto a = predict_occupied_region({-1.0, 0, 0, 0.5}, line({-1, 0}, {3, 0}), 0.5, cfg, fp);
  const auto b = predict_occupied_region({0, -0.5, kPi / 2, 0.5}, line({0, -0.5}, {0, 3}), 0.5, cfg, fp);
  EXPECT_TRUE(regions_conflict(a, a));
  EXPECT_FALSE(regions_conflict(a, b));
  EXPECT_EQ(regions_conflict(a, b), stepwise_conflict(a, b));
  EXPECT_TRUE(regions_conflict(a, b, true));
  const auto far = predict_occupied_region({10, 10, 0, 0.5}, line({10, 10}, {14, 10}), 0.5, cfg, fp);
  EXPECT_FALSE(regions_conflict(a, far, true));
  cfg.horizon = 10;
  EXPECT_THROW(regions_conflict(a, predict_occupied_region({}, line({0, 0}, {1, 0}), 0.5, cfg, fp)), std::invalid_argument);
}

TEST(Conflict, MatchesStepwiseOracle) {
  const ManagerConfig cfg;
  std::mt19937_64 rng(55);
  int hits = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const auto msgs = random_cavs(rng, 2);
    const auto ra = predict_occupied_region({msgs[0].x, msgs[0].y, msgs[0].psi, 0.5}, msgs[0].path, 0.1 * (trial % 6), cfg, {});
    const auto rb = predict_occupied_region({msgs[1].x, msgs[1].y, msgs[1].psi, 0.5}, msgs[1].path, 0.5, cfg, {});
    const bool got = regions_conflict(ra, rb);
    EXPECT_EQ(got, stepwise_conflict(ra, rb));
    hits += got;
  }
  EXPECT_GT(hits, 20);
  EXPECT_LT(hits, 280);
}

TEST(Resolve, Fig7LadderBothModes) {
  const auto msgs = fig7_scene();
  const PriorityTable t{{1, AgentKind::cav, 0.1}, {2, AgentKind::cav, 0.2}, {3, AgentKind::cav, 0.3}};
  for (const auto& cfg : {ManagerConfig{}, literal()}) {
    const auto r = resolve_velocities(t, msgs, {}, cfg, {}, &junction());
    EXPECT_EQ(r.commands, (VelocityCommandSet{{1, 0.5}, {2, 0.5}, {3, 0.4}}));
    EXPECT_EQ(r.log[2].blockers, std::vector<std::string>{"cav:1"});
    EXPECT_EQ(r.log[2].iterations, 2);
    EXPECT_FALSE(r.log[2].floored);
  }
}

TEST(Resolve, FloorWhenHvSweepsOverStoppedCav) {
  const ManagerConfig cfg;
  const auto hv = hv_at({2.55, 3.0}, -kPi / 2, {make_path(testbed(), {301, 203})});
  const auto hv_region = hv_occupied_union(hv, cfg, Footprint{}, testbed(), junction());
  const auto m = make_cav_message({2.2, 2.3, 0.0, 0.3}, shortest_path(testbed(), 32, 40), 1, 0.0);
  const PriorityTable t{{1, AgentKind::hv, 0.0}, {1, AgentKind::cav, 0.1}};
  const auto r = resolve_velocities(t, {m}, {hv_region}, cfg, {}, &junction());
  EXPECT_EQ(r.commands.at(1), 0.0);
  EXPECT_TRUE(r.log[0].floored);
  EXPECT_EQ(r.log[0].iterations, 6);
  EXPECT_EQ(r.log[0].blockers, std::vector<std::string>{"hv#0"});
}

TEST(Resolve, LiteralModeMatchesReferenceLoop) {
  const auto cfg = literal();
  std::mt19937_64 rng(8);
  int slowed = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const auto msgs = random_cavs(rng, std::uniform_int_distribution<int>(2, 4)(rng));
    std::vector<OccupiedRegion> hvs;
    if (trial % 3 == 0) {
      const auto path = make_path(testbed(), {103, 403});
      hvs.push_back(hv_occupied_union(hv_at({3.45, 1.0}, kPi / 2, {path}), cfg, Footprint{}, testbed(), junction()));
    }
    const auto got = resolve_velocities(table_for(msgs), msgs, hvs, cfg);
    const auto want = literal_ladder(msgs, hvs, cfg);
    EXPECT_EQ(got.commands, want) << "trial " << trial;
    for (const auto& [id, v] : got.commands) slowed += v < 0.5;
  }
  EXPECT_GT(slowed, 50);
}

TEST(Resolve, Properties) {
  for (const auto& cfg : {ManagerConfig{}, literal()}) {
    std::mt19937_64 rng(77);
    const auto ladder = cfg.ladder();
    for (int trial = 0; trial < 300; ++trial) {
      const auto msgs = random_cavs(rng, std::uniform_int_distribution<int>(1, 4)(rng));
      const auto table = table_for(msgs);
      const auto r = resolve_velocities(table, msgs, {}, cfg, {}, &junction());
      // Top priority runs free without HVs.
      EXPECT_EQ(r.commands.at(table.front().id), cfg.v_max);
      for (const auto& res : r.log) {
        EXPECT_NE(std::find(ladder.begin(), ladder.end(), res.v_ref), ladder.end());
        EXPECT_LE(res.iterations, static_cast<int>(std::ceil(cfg.v_max / cfg.dv_step)) + 1);
      }
      // Pairwise clear at the commanded speeds unless the lower one was floored.
      for (std::size_t i = 0; i < r.log.size(); ++i)
        for (std::size_t j = i + 1; j < r.log.size(); ++j) {
          if (r.log[j].floored) continue;
          EXPECT_FALSE(regions_conflict(r.accepted.at(r.log[i].id), r.accepted.at(r.log[j].id)));
        }
    }
  }
}

TEST(Resolve, AddingAnHvNeverSpeedsAnyoneUp) {
  const ManagerConfig cfg;
  std::mt19937_64 rng(101);
  const std::vector<std::vector<int>> hv_routes{{102, 302}, {102, 402}, {100, 300}, {100, 400},
                                                {101, 301}, {101, 401}, {103, 303}, {103, 403}};
  int lowered = 0;
  for (int trial = 0; trial < 400; ++trial) {
    const auto msgs = random_cavs(rng, std::uniform_int_distribution<int>(1, 4)(rng));
    auto table = table_for(msgs);
    const auto before = resolve_velocities(table, msgs, {}, cfg, {}, &junction());
    const auto& route = hv_routes[std::uniform_int_distribution<std::size_t>(0, hv_routes.size() - 1)(rng)];
    const auto path = make_path(testbed(), route);
    const auto pose = pose_at_arclength(path, std::uniform_real_distribution<double>(0.5, 2.5)(rng));
    const auto region = hv_occupied_union(hv_at(pose.position, pose.heading, {path}), cfg, Footprint{}, testbed(), junction());
    table.insert(table.begin(), {1, AgentKind::hv, 0.0});
    const auto after = resolve_velocities(table, msgs, {region}, cfg, {}, &junction());
    for (const auto& [id, v] : before.commands) {
      EXPECT_LE(after.commands.at(id), v) << "trial " << trial << " cav " << id;
      lowered += after.commands.at(id) < v;
    }
  }
  EXPECT_GT(lowered, 50);
}

TEST(Resolve, KeepClearHoldsBackOfAnotherPath) {
  // Orange, low priority, is near white's lane; white has to drive through
  // there. Orange must not roll forward into it even if time-aligned
  // prediction says white arrives later.
  const auto& g = testbed();
  const auto white = make_cav_message({1.6, 2.3, 0.0, 0.2}, shortest_path(g, 32, 40), 1, 0.0);
  const auto orange = make_cav_message({3.45, 1.75, kPi / 2, 0.5}, shortest_path(g, 33, 41), 2, 0.0);
  const PriorityTable t{{1, AgentKind::cav, 0.0}, {2, AgentKind::cav, 0.1}};
  const auto def = resolve_velocities(t, {white, orange}, {}, ManagerConfig{}, {}, &junction());
  const auto lit = resolve_velocities(t, {white, orange}, {}, literal(), {}, &junction());
  EXPECT_LE(def.commands.at(2), lit.commands.at(2));
  if (def.commands.at(2) < lit.commands.at(2)) {
    EXPECT_FALSE(def.log[1].held_by.empty());
  }
}
