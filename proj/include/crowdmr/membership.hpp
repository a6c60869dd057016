#pragma once

// Failure detection, connectivity degree, leader eligibility and the role
// state machine. A node may lead only while it hears from at least
// ceil(2N/3) nodes (itself included); an eligible incumbent keeps the role.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "crowdmr/domain.hpp"

namespace crowdmr {

class SelfHeartbeat : public Error {
 public:
  explicit SelfHeartbeat(NodeId n)
      : Error("node " + std::to_string(n.value) + " cannot record a heartbeat from itself") {}
};

class InvalidConfig : public Error {
 public:
  using Error::Error;
};

struct Term {
  std::uint64_t number = 0;

  constexpr Term next() const { return Term{number + 1}; }
  friend constexpr auto operator<=>(Term, Term) = default;
};

inline std::ostream& operator<<(std::ostream& os, Term t) { return os << t.number; }

enum class Role : std::uint8_t { Master, Worker, Candidate };

inline constexpr std::string_view role_name(Role r) {
  switch (r) {
    case Role::Master:
      return "Master";
    case Role::Worker:
      return "Worker";
    case Role::Candidate:
      return "Candidate";
  }
  return "?";
}

struct ClusterConfig {
  std::uint32_t node_count = 1;
  std::map<NodeId, std::string> endpoints;  // "host:port"
  NodeId initial_master{0};
  Millis heartbeat_period{1000};
  Millis heartbeat_timeout{5000};
  Millis check_period{60000};
  Millis cycle_period{300000};
  std::uint32_t reducer_count = 1;

  /// N nodes on 127.0.0.1 starting at `base_port`, node 0 as first master.
  static ClusterConfig local(std::uint32_t n, std::uint16_t base_port = 47000) {
    ClusterConfig cfg;
    cfg.node_count = n;
    for (std::uint32_t i = 0; i < n; ++i) {
      cfg.endpoints[NodeId{i}] = "127.0.0.1:" + std::to_string(base_port + i);
    }
    return cfg;
  }

  std::vector<NodeId> node_ids() const {
    std::vector<NodeId> ids;
    for (const auto& [id, addr] : endpoints) ids.push_back(id);
    return ids;
  }

  bool contains(NodeId n) const { return endpoints.count(n) != 0; }

  void validate() const {
    if (node_count == 0) throw InvalidConfig("node_count must be positive");
    if (endpoints.size() != node_count) {
      throw InvalidConfig("node_count " + std::to_string(node_count) + " but " +
                          std::to_string(endpoints.size()) + " endpoints");
    }
    if (!contains(initial_master)) throw InvalidConfig("initial_master is not a cluster node");
    if (heartbeat_period.count() <= 0) throw InvalidConfig("heartbeat_period must be positive");
    if (heartbeat_timeout <= heartbeat_period) {
      throw InvalidConfig("heartbeat_timeout must exceed heartbeat_period");
    }
    if (cycle_period <= heartbeat_timeout) {
      throw InvalidConfig("cycle_period must exceed heartbeat_timeout");
    }
    if (check_period.count() <= 0) throw InvalidConfig("check_period must be positive");
    if (reducer_count == 0) throw InvalidConfig("reducer_count must be positive");
  }
};

/// What one node knows about who it has heard from recently.
struct ConnectivityView {
  NodeId observer;
  std::map<NodeId, Millis> last_heard;
  Millis now{0};
  Millis timeout{5000};

  bool is_live(NodeId peer) const {
    if (peer == observer) return true;
    auto it = last_heard.find(peer);
    return it != last_heard.end() && now - it->second <= timeout;
  }

  /// Live nodes including the observer, ascending.
  std::vector<NodeId> live_nodes() const {
    std::vector<NodeId> out{observer};
    for (const auto& [peer, at] : last_heard) {
      if (peer != observer && now - at <= timeout) out.push_back(peer);
    }
    std::sort(out.begin(), out.end());
    return out;
  }
};

inline ConnectivityView record_heartbeat(ConnectivityView view, NodeId peer, Millis at) {
  if (peer == view.observer) throw SelfHeartbeat(peer);
  auto [it, inserted] = view.last_heard.emplace(peer, at);
  if (!inserted) it->second = std::max(it->second, at);
  return view;
}

inline std::size_t degree(const ConnectivityView& view) {
  std::size_t d = 1;
  for (const auto& [peer, at] : view.last_heard) {
    if (peer != view.observer && view.now - at <= view.timeout) ++d;
  }
  return d;
}

/// ceil(2N/3)
constexpr std::size_t eligibility_threshold(std::size_t node_count) {
  return (2 * node_count + 2) / 3;
}

constexpr bool is_eligible(std::size_t degree_incl_self, std::size_t node_count) {
  return degree_incl_self >= eligibility_threshold(node_count);
}

inline bool is_eligible(const ConnectivityView& view, std::size_t node_count) {
  return is_eligible(degree(view), node_count);
}

struct LeaderCandidate {
  NodeId node;
  std::size_t degree = 0;
};

/// Incumbent wins if eligible; otherwise the lowest eligible id.
inline std::optional<NodeId> select_leader(const std::vector<LeaderCandidate>& candidates,
                                           std::optional<NodeId> current_leader,
                                           std::size_t node_count) {
  std::optional<NodeId> best;
  for (const auto& c : candidates) {
    if (!is_eligible(c.degree, node_count)) continue;
    if (current_leader && c.node == *current_leader) return c.node;
    if (!best || c.node < *best) best = c.node;
  }
  return best;
}

struct RoleState {
  NodeId node;
  Role role = Role::Worker;
  Term term;
  std::optional<NodeId> known_master;
  // Candidate this node acked in `term`, if any. A candidate votes for itself.
  std::optional<NodeId> voted_for;

  friend bool operator==(const RoleState&, const RoleState&) = default;
};

namespace role_event {

struct HeartbeatTimeoutOnMaster {
  std::size_t self_degree = 0;
};

struct LeaderClaimReceived {
  Term term;
  NodeId from;
  std::size_t degree = 0;
  // The master this node still hears within the timeout, with the degree it
  // last advertised. Empty when the master is silent or unknown.
  std::optional<LeaderCandidate> incumbent;
};

struct LeaderAckQuorum {
  Term term;
  std::size_t acks = 0;  // including self
};

struct HigherTermObserved {
  Term term;
  std::optional<NodeId> master;
};

/// A LEADER_ANNOUNCE, or a heartbeat from a node that says it is master.
struct MasterObserved {
  Term term;
  NodeId master;
};

struct AbdicateObserved {
  Term term;
  NodeId from;
};

struct ConnectivityCheckDue {
  std::size_t self_degree = 0;
};

/// No ack quorum within the election window.
struct ElectionTimedOut {
  Term term;
};

}  // namespace role_event

using RoleEvent =
    std::variant<role_event::HeartbeatTimeoutOnMaster, role_event::LeaderClaimReceived,
                 role_event::LeaderAckQuorum, role_event::HigherTermObserved,
                 role_event::MasterObserved, role_event::AbdicateObserved,
                 role_event::ConnectivityCheckDue, role_event::ElectionTimedOut>;

struct RoleAction {
  enum class Kind : std::uint8_t { BroadcastClaim, BroadcastAnnounce, BroadcastAbdicate, SendAck };
  Kind kind;
  Term term;
  std::size_t degree = 0;     // BroadcastClaim
  NodeId to;                  // SendAck
  bool granted = false;       // SendAck

  friend bool operator==(const RoleAction&, const RoleAction&) = default;
};

struct RoleTransition {
  RoleState state;
  std::vector<RoleAction> actions;
  bool stale = false;  // event carried a term below ours and was ignored
};

namespace detail {

inline RoleState adopt_term(RoleState s, Term t, std::optional<NodeId> master) {
  s.role = Role::Worker;
  s.term = t;
  s.known_master = master;
  s.voted_for.reset();
  return s;
}

}  // namespace detail

/// Deterministic role transition. Pure; the caller owns timers and I/O.
inline RoleTransition step_role(const RoleState& state, const RoleEvent& event,
                                std::size_t node_count) {
  using namespace role_event;
  RoleTransition out{state, {}, false};
  auto& s = out.state;

  std::visit(
      [&](const auto& ev) {
        using E = std::decay_t<decltype(ev)>;
        if constexpr (std::is_same_v<E, HeartbeatTimeoutOnMaster>) {
          if (s.role == Role::Master) return;
          if (is_eligible(ev.self_degree, node_count)) {
            s.role = Role::Candidate;
            s.term = s.term.next();
            s.known_master.reset();
            s.voted_for = s.node;
            out.actions.push_back({RoleAction::Kind::BroadcastClaim, s.term, ev.self_degree, NodeId{}, false});
          } else {
            s.role = Role::Worker;
            s.known_master.reset();
          }
        } else if constexpr (std::is_same_v<E, LeaderClaimReceived>) {
          if (ev.term < s.term) {
            out.stale = true;
            return;
          }
          // A worker that still hears an eligible master other than the
          // claimant refuses without adopting the term.
          bool incumbent_holds =
              s.role == Role::Worker && ev.incumbent && ev.incumbent->node != ev.from &&
              ev.incumbent->node != s.node &&
              select_leader({{ev.from, ev.degree}, *ev.incumbent}, ev.incumbent->node,
                            node_count) == ev.incumbent->node;
          if (incumbent_holds) {
            out.actions.push_back({RoleAction::Kind::SendAck, ev.term, 0, ev.from, false});
            return;
          }
          if (ev.term > s.term) s = detail::adopt_term(s, ev.term, std::nullopt);
          bool grant = s.role == Role::Worker && (!s.voted_for || *s.voted_for == ev.from) &&
                       select_leader({{ev.from, ev.degree}}, std::nullopt, node_count) == ev.from;
          if (grant) s.voted_for = ev.from;
          out.actions.push_back({RoleAction::Kind::SendAck, ev.term, 0, ev.from, grant});
        } else if constexpr (std::is_same_v<E, LeaderAckQuorum>) {
          if (ev.term < s.term) {
            out.stale = true;
            return;
          }
          if (s.role == Role::Candidate && ev.term == s.term &&
              ev.acks >= eligibility_threshold(node_count)) {
            s.role = Role::Master;
            s.known_master = s.node;
            out.actions.push_back({RoleAction::Kind::BroadcastAnnounce, s.term, 0, NodeId{}, false});
          }
        } else if constexpr (std::is_same_v<E, HigherTermObserved>) {
          if (ev.term <= s.term) {
            out.stale = ev.term < s.term;
            return;
          }
          s = detail::adopt_term(s, ev.term, ev.master);
        } else if constexpr (std::is_same_v<E, MasterObserved>) {
          if (ev.term < s.term) {
            out.stale = true;
            return;
          }
          if (ev.term > s.term) {
            s = detail::adopt_term(s, ev.term, ev.master);
            return;
          }
          if (s.role == Role::Master) return;  // same-term rival: never legitimately reached
          s.role = Role::Worker;
          s.known_master = ev.master;
        } else if constexpr (std::is_same_v<E, AbdicateObserved>) {
          if (ev.term < s.term) {
            out.stale = true;
            return;
          }
          if (ev.term > s.term) {
            s = detail::adopt_term(s, ev.term, std::nullopt);
            return;
          }
          if (s.known_master == ev.from && s.role != Role::Master) s.known_master.reset();
        } else if constexpr (std::is_same_v<E, ConnectivityCheckDue>) {
          if (s.role == Role::Master && !is_eligible(ev.self_degree, node_count)) {
            s.role = Role::Worker;
            s.known_master.reset();
            out.actions.push_back({RoleAction::Kind::BroadcastAbdicate, s.term, 0, NodeId{}, false});
          }
        } else if constexpr (std::is_same_v<E, ElectionTimedOut>) {
          if (ev.term < s.term) {
            out.stale = true;
            return;
          }
          if (s.role == Role::Candidate && ev.term == s.term) s.role = Role::Worker;
        }
      },
      event);
  return out;
}

}  // namespace crowdmr
