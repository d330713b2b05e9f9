#pragma once

// Publish-subscribe fabric standing in for the Wi-Fi V2X layer: typed CAV and
// infrastructure messages, per-stream publication cadence, a V2V range cap
// and V2I gating on a coverage polygon.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <variant>
#include <vector>

#include "coopdrive/geometry.hpp"
#include "coopdrive/road_map.hpp"
#include "coopdrive/text_io.hpp"
#include "coopdrive/vehicle_dynamics.hpp"

namespace coopdrive {

struct CavMessage {
  double x{0.0};
  double y{0.0};
  double psi{0.0};
  PathRef path;
  double v{0.0};
  int sender_id{0};
  double t_stamp{0.0};

  Vec2 position() const { return {x, y}; }
  friend bool operator==(const CavMessage&, const CavMessage&) = default;
};

struct InfraMessage {
  int infra_id{0};
  double t_stamp{0.0};
  int target_id{0};
  double v_ref{0.0};

  friend bool operator==(const InfraMessage&, const InfraMessage&) = default;
};

using Payload = std::variant<CavMessage, InfraMessage>;

struct Envelope {
  Payload payload;
  Vec2 sender_position;
  double publish_time{0.0};
};

struct BusConfig {
  double v2v_range{3.0};
  Region v2i_region;
  double publish_rate_hz{10.0};
  int latency_ticks{0};
  double drop_probability{0.0};
  std::uint64_t seed{0};

  void validate() const {
    if (!(v2v_range > 0.0)) throw std::invalid_argument("v2v_range must be positive");
    if (!(publish_rate_hz > 0.0)) throw std::invalid_argument("publish_rate_hz must be positive");
    if (latency_ticks < 0) throw std::invalid_argument("latency_ticks must be non-negative");
    if (!(drop_probability >= 0.0 && drop_probability <= 1.0)) throw std::invalid_argument("drop_probability outside [0, 1]");
  }
};

enum class LinkKind { v2v, v2i };
enum class AgentRole { vehicle, infrastructure };
enum class PublishResult { accepted, rate_limited, dropped };

inline CavMessage make_cav_message(const VehicleState& state, const PathRef& path, int id, double t) {
  return {state.x, state.y, state.psi, path, state.v, id, t};
}

inline int sender_of(const Payload& p) {
  return std::visit([](const auto& m) {
    if constexpr (std::is_same_v<std::decay_t<decltype(m)>, CavMessage>) return m.sender_id;
    else return m.infra_id;
  }, p);
}

// ---------------------------------------------------------------------------
// Wire text. Doubles use shortest round-trip decimal, so decode(encode(m))
// reproduces every field bit for bit.
//   cav <sender> <t> <x> <y> <psi> <v> <nseg> <seg...> <npts> <x y ...>
//   infra <infra_id> <t> <target> <v_ref>
// ---------------------------------------------------------------------------

inline std::string encode(const CavMessage& m) {
  std::string out = "cav " + std::to_string(m.sender_id) + " " + format_double(m.t_stamp) + " " + format_double(m.x) +
                    " " + format_double(m.y) + " " + format_double(m.psi) + " " + format_double(m.v) + " " +
                    std::to_string(m.path.segment_ids.size());
  for (const int s : m.path.segment_ids) out += " " + std::to_string(s);
  out += " " + std::to_string(m.path.polyline.size());
  for (std::size_t i = 0; i < m.path.polyline.size(); ++i) {
    out += " " + format_double(m.path.polyline[i].x) + " " + format_double(m.path.polyline[i].y) + " " +
           format_double(m.path.cumulative_arclength[i]);
  }
  return out;
}

inline std::string encode(const InfraMessage& m) {
  return "infra " + std::to_string(m.infra_id) + " " + format_double(m.t_stamp) + " " + std::to_string(m.target_id) +
         " " + format_double(m.v_ref);
}

inline std::string encode(const Payload& p) {
  return std::visit([](const auto& m) { return encode(m); }, p);
}

inline Payload decode(const std::string& line) {
  TokenCursor cur("<message>", 1, split_ws(line));
  const auto kind = cur.word("kind");
  if (kind == "cav") {
    CavMessage m;
    m.sender_id = static_cast<int>(cur.integer("sender"));
    m.t_stamp = cur.number("t_stamp");
    m.x = cur.number("x");
    m.y = cur.number("y");
    m.psi = cur.number("psi");
    m.v = cur.number("v");
    const auto nseg = cur.integer("segment count");
    for (long long i = 0; i < nseg; ++i) m.path.segment_ids.push_back(static_cast<int>(cur.integer("segment")));
    const auto npts = cur.integer("point count");
    for (long long i = 0; i < npts; ++i) {
      const double x = cur.number("x");
      const double y = cur.number("y");
      m.path.polyline.push_back({x, y});
      m.path.cumulative_arclength.push_back(cur.number("arclength"));
    }
    cur.expect_end();
    return m;
  }
  if (kind == "infra") {
    InfraMessage m;
    m.infra_id = static_cast<int>(cur.integer("infra id"));
    m.t_stamp = cur.number("t_stamp");
    m.target_id = static_cast<int>(cur.integer("target"));
    m.v_ref = cur.number("v_ref");
    cur.expect_end();
    return m;
  }
  cur.fail("unknown message kind '" + std::string(kind) + "'");
}

inline std::string payload_digest(const Payload& p) { return hex64(fnv1a(encode(p))); }

/// One line per publish or delivery: tick,event,sender,receiver,kind,digest.
/// The receiver column is -1 for publish events.
struct BusEvent {
  long long tick{0};
  std::string event;  // "publish", "deliver", "reject", "drop"
  int sender{0};
  int receiver{-1};
  std::string message_kind;  // "cav" | "infra"
  std::string digest;

  std::string to_line() const {
    return std::to_string(tick) + "," + event + "," + std::to_string(sender) + "," + std::to_string(receiver) + "," +
           message_kind + "," + digest;
  }
};

inline constexpr const char* kBusTraceHeader = "tick,event,sender,receiver,message_kind,digest";

class V2xBus {
 public:
  explicit V2xBus(BusConfig config) : config_(std::move(config)) { config_.validate(); }

  const BusConfig& config() const { return config_; }

  void register_agent(int id, AgentRole role) {
    std::lock_guard lock(mutex_);
    roles_[id] = role;
  }

  /// Starts management tick `tick`; anything not deliverable at this tick expires.
  void begin_tick(long long tick) {
    std::lock_guard lock(mutex_);
    tick_ = tick;
    std::erase_if(pending_, [&](const Stored& s) { return s.deliver_tick < tick; });
  }

  long long tick() const { return tick_; }

  PublishResult publish(const Envelope& env) {
    if (!std::isfinite(env.publish_time)) throw std::invalid_argument("non-finite publish time");
    const int sender = sender_of(env.payload);
    const int target = std::holds_alternative<InfraMessage>(env.payload) ? std::get<InfraMessage>(env.payload).target_id : -1;
    const long long window = static_cast<long long>(std::floor(env.publish_time * config_.publish_rate_hz + 1e-9));
    const char* kind = std::holds_alternative<CavMessage>(env.payload) ? "cav" : "infra";

    std::lock_guard lock(mutex_);
    if (const auto* cav = std::get_if<CavMessage>(&env.payload)) {
      auto [it, fresh] = last_stamp_.emplace(sender, cav->t_stamp);
      if (!fresh) {
        if (cav->t_stamp < it->second) throw std::invalid_argument("t_stamp went backwards for sender " + std::to_string(sender));
        it->second = cav->t_stamp;
      }
    }
    const auto key = std::make_pair(sender, target);
    const auto last = last_window_.find(key);
    if (last != last_window_.end() && last->second == window) {
      log(tick_, "reject", sender, -1, kind, env.payload);
      return PublishResult::rate_limited;
    }
    last_window_[key] = window;
    log(tick_, "publish", sender, -1, kind, env.payload);
    if (config_.drop_probability > 0.0 && dropped(sender, target)) {
      log(tick_, "drop", sender, -1, kind, env.payload);
      return PublishResult::dropped;
    }
    pending_.push_back({env, tick_ + config_.latency_ticks});
    return PublishResult::accepted;
  }

  /// Messages deliverable to `receiver_id` at the current tick, ordered by
  /// (publish_time, sender_id).
  std::vector<Payload> deliver(int receiver_id, Vec2 receiver_position, LinkKind kind) {
    std::lock_guard lock(mutex_);
    const auto role_it = roles_.find(receiver_id);
    if (role_it == roles_.end()) throw std::invalid_argument("receiver " + std::to_string(receiver_id) + " not registered");
    const AgentRole role = role_it->second;
    std::vector<const Stored*> picked;
    for (const auto& s : pending_) {
      if (s.deliver_tick != tick_) continue;
      if (kind == LinkKind::v2v) {
        const auto* m = std::get_if<CavMessage>(&s.env.payload);
        if (!m || m->sender_id == receiver_id) continue;
        if (distance(s.env.sender_position, receiver_position) <= config_.v2v_range) picked.push_back(&s);
      } else if (role == AgentRole::infrastructure) {
        const auto* m = std::get_if<CavMessage>(&s.env.payload);
        if (m && in_region(s.env.sender_position, config_.v2i_region)) picked.push_back(&s);
      } else {
        const auto* m = std::get_if<InfraMessage>(&s.env.payload);
        if (m && m->target_id == receiver_id && in_region(receiver_position, config_.v2i_region)) picked.push_back(&s);
      }
    }
    std::sort(picked.begin(), picked.end(), [](const Stored* a, const Stored* b) {
      const int sa = sender_of(a->env.payload);
      const int sb = sender_of(b->env.payload);
      if (a->env.publish_time != b->env.publish_time) return a->env.publish_time < b->env.publish_time;
      if (sa != sb) return sa < sb;
      return encode(a->env.payload) < encode(b->env.payload);
    });
    std::vector<Payload> out;
    out.reserve(picked.size());
    for (const Stored* s : picked) {
      out.push_back(s->env.payload);
      log(tick_, "deliver", sender_of(s->env.payload), receiver_id,
          std::holds_alternative<CavMessage>(s->env.payload) ? "cav" : "infra", s->env.payload);
    }
    return out;
  }

  void enable_event_log(bool on) {
    std::lock_guard lock(mutex_);
    logging_ = on;
  }

  /// Logged events sorted into a canonical order, independent of call order.
  std::vector<BusEvent> events() const {
    std::lock_guard lock(mutex_);
    auto out = events_;
    std::sort(out.begin(), out.end(), [](const BusEvent& a, const BusEvent& b) {
      return std::tie(a.tick, a.event, a.sender, a.receiver, a.message_kind, a.digest) <
             std::tie(b.tick, b.event, b.sender, b.receiver, b.message_kind, b.digest);
    });
    return out;
  }

 private:
  struct Stored {
    Envelope env;
    long long deliver_tick;
  };

  bool dropped(int sender, int target) const {
    std::seed_seq seq{static_cast<std::uint32_t>(config_.seed), static_cast<std::uint32_t>(config_.seed >> 32),
                      static_cast<std::uint32_t>(tick_), static_cast<std::uint32_t>(sender),
                      static_cast<std::uint32_t>(target)};
    std::mt19937_64 rng(seq);
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < config_.drop_probability;
  }

  void log(long long tick, const char* event, int sender, int receiver, const char* kind, const Payload& p) {
    if (!logging_) return;
    events_.push_back({tick, event, sender, receiver, kind, payload_digest(p)});
  }

  BusConfig config_;
  mutable std::mutex mutex_;
  std::map<int, AgentRole> roles_;
  std::map<std::pair<int, int>, long long> last_window_;
  std::map<int, double> last_stamp_;
  std::vector<Stored> pending_;
  std::vector<BusEvent> events_;
  long long tick_{0};
  bool logging_{false};
};

}  // namespace coopdrive
