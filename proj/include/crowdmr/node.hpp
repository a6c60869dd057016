#pragma once

// One cluster member: room mapper, reducer, and (when elected) the master
// that drives task cycles. Transport- and clock-agnostic: the driver feeds
// frames, ticks and sensor reads in, and drains encoded frames out.
//
// Cycle protocol, all steps idempotent and re-driven by the master's tick:
//
//   master   TASK(c, attempt, reducers, rooms[room:from])  -> participants
//   mapper   MAP_OUT(room, part, counts)                   -> reducer[part]
//   reducer  RED_OUT(part, fragment, counts)               -> master
//   master   commit to the sink, then CYCLE_DONE(c, rooms)  -> all
//
// `from` is the first cycle window not yet committed for that room, read
// from the sink, so a new master resumes without any handed-over state.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "crowdmr/mapreduce.hpp"
#include "crowdmr/membership.hpp"
#include "crowdmr/storage.hpp"
#include "crowdmr/wire.hpp"

namespace crowdmr {

/// Which node hosts which room: room r lives on the (r mod N)-th node id.
struct RoomLayout {
  std::uint32_t room_count = 0;
  std::vector<NodeId> nodes;  // ascending

  NodeId host_of(RoomId room) const { return nodes[room.index % nodes.size()]; }

  std::vector<RoomId> rooms_of(NodeId node) const {
    std::vector<RoomId> out;
    for (std::uint32_t r = 0; r < room_count; ++r) {
      if (host_of(RoomId{r}) == node) out.push_back(RoomId{r});
    }
    return out;
  }
};

struct Envelope {
  NodeId to;
  std::string frame;
};

struct NodeCounters {
  std::uint64_t sent = 0;
  std::uint64_t data_sent = 0;
  std::uint64_t data_bytes = 0;
  std::uint64_t received = 0;
  std::uint64_t malformed = 0;
  std::uint64_t duplicates = 0;
  std::map<MsgType, std::uint64_t> sent_by_type;
};

namespace detail {

inline std::vector<std::uint32_t> parse_u32_list(std::string_view s) {
  std::vector<std::uint32_t> out;
  if (s.empty() || s == "-") return out;
  std::size_t pos = 0;
  while (true) {
    auto comma = s.find(',', pos);
    auto item = s.substr(pos, comma == std::string_view::npos ? s.npos : comma - pos);
    std::uint64_t v = 0;
    if (!parse_u64(item, v) || v > UINT32_MAX) throw MalformedKey(s);
    out.push_back(static_cast<std::uint32_t>(v));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

inline std::string join_u32(const std::vector<std::uint32_t>& v) {
  if (v.empty()) return "-";
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

inline std::uint64_t require_u64(const Message& m, std::string_view key) {
  auto v = m.get(key);
  std::uint64_t out = 0;
  if (!v || !parse_u64(*v, out)) {
    throw WireError(WireError::Code::MalformedField, "payload",
                    "missing or bad '" + std::string(key) + "'");
  }
  return out;
}

/// Composite-key entries of a payload; metadata pairs are skipped.
inline std::vector<IntermediateCount> payload_counts(const Message& m) {
  std::vector<IntermediateCount> out;
  for (const auto& [k, v] : m.payload) {
    if (k.find("-room") == std::string::npos) continue;
    std::uint64_t n = 0;
    if (!parse_u64(v, n)) {
      throw WireError(WireError::Code::MalformedField, "payload", "bad count for " + k);
    }
    try {
      out.push_back({parse_composite_key(k), n});
    } catch (const MalformedKey&) {
      throw WireError(WireError::Code::MalformedField, "payload", "bad key " + k);
    }
  }
  return out;
}

}  // namespace detail

/// Splits `entries` across as many payloads as needed so that every frame
/// built from `header` plus `f`/`nf` plus its share stays within budget.
inline std::vector<Payload> fragment_payload(const Message& header_msg,
                                             const std::vector<IntermediateCount>& entries) {
  constexpr std::size_t kSlack = 24;  // room for the f/nf digits
  std::vector<Payload> out;
  Message probe = header_msg;
  probe.payload.emplace_back("f", "0");
  probe.payload.emplace_back("nf", "0");
  const std::size_t base = encode_unchecked(probe).size();
  Payload current;
  std::size_t size = base;
  for (const auto& e : entries) {
    auto text = composite_key_text(e.key);
    auto extra = text.size() + 2 + std::to_string(e.count).size();
    if (!current.empty() && size + extra + kSlack > kMaxFrameBytes) {
      out.push_back(std::move(current));
      current.clear();
      size = base;
    }
    current.emplace_back(std::move(text), std::to_string(e.count));
    size += extra;
  }
  out.push_back(std::move(current));
  return out;
}

class Node {
 public:
  struct Options {
    std::string scenario_id = "scenario";
    RoomLayout layout;
    bool first_boot = true;  // false: restarted after a crash, holds nothing
  };

  Node(NodeId self, ClusterConfig cfg, Options opts, ReportSink& sink, Millis now)
      : self_(self),
        cfg_(std::move(cfg)),
        opts_(std::move(opts)),
        sink_(sink),
        seq_base_(static_cast<std::uint64_t>(now.count()) << 20) {
    role_.node = self_;
    view_.observer = self_;
    view_.now = now;
    view_.timeout = cfg_.heartbeat_timeout;
    no_master_since_ = now;
    if (opts_.first_boot) {
      role_.known_master = cfg_.initial_master;
      if (self_ == cfg_.initial_master) {
        role_.role = Role::Master;
        next_check_ = now + cfg_.check_period;
      } else {
        view_.last_heard[cfg_.initial_master] = now;
      }
    } else {
      quarantine_until_ = now + 2 * cfg_.heartbeat_timeout;
    }
    broadcast(MsgType::HELLO, heartbeat_payload());
  }

  NodeId id() const { return self_; }
  const RoleState& role() const { return role_; }
  const ConnectivityView& view() const { return view_; }
  const NodeCounters& counters() const { return counters_; }
  bool quarantined(Millis now) const { return now < quarantine_until_; }

  std::vector<Envelope> take_outbox() { return std::exchange(outbox_, {}); }
  std::vector<MeasurementRecord> take_commits() { return std::exchange(commits_, {}); }

  /// Events buffered for hosted rooms and not yet covered by a commit.
  std::size_t pending_events() const {
    std::size_t n = 0;
    for (const auto& [room, windows] : pending_) {
      for (const auto& [w, evs] : windows) n += evs.size();
    }
    return n;
  }

  void on_sensor(const VisitorEvent& e) {
    if (opts_.layout.host_of(e.room) != self_) return;
    if (!seen_events_.insert(e.event_id).second) return;
    auto window = static_cast<std::uint64_t>(e.timestamp / cfg_.cycle_period);
    pending_[e.room][window].push_back(e);
  }

  void on_tick(Millis now) {
    view_.now = now;
    broadcast(MsgType::HB, heartbeat_payload());
    if (quarantined(now)) return;
    if (role_.term < vote_floor_) {
      apply(role_event::HigherTermObserved{vote_floor_, role_.known_master}, now);
    }
    switch (role_.role) {
      case Role::Master:
        master_tick(now);
        break;
      case Role::Candidate:
        if (now - election_started_ > cfg_.heartbeat_timeout) {
          apply(role_event::ElectionTimedOut{role_.term}, now);
          no_master_since_ = now;
        } else {
          broadcast(MsgType::LEADER_CLAIM, {{"deg", std::to_string(degree(view_))}});
        }
        break;
      case Role::Worker:
        worker_tick(now);
        break;
    }
  }

  /// Handles one datagram. Malformed frames are counted and dropped.
  void on_frame(std::string_view frame, Millis now) {
    view_.now = now;
    Message m;
    try {
      m = decode(frame);
    } catch (const WireError&) {
      ++counters_.malformed;
      return;
    }
    if (!cfg_.contains(m.sender)) {
      ++counters_.malformed;
      return;
    }
    if (!dedup_.check(m.sender, m.seq)) {
      ++counters_.duplicates;
      return;
    }
    ++counters_.received;
    if (quarantined(now)) vote_floor_ = std::max(vote_floor_, m.term);
    if (m.sender != self_) view_ = record_heartbeat(std::move(view_), m.sender, now);
    try {
      dispatch(m, now);
    } catch (const WireError&) {
      ++counters_.malformed;
    } catch (const MalformedKey&) {
      ++counters_.malformed;
    }
  }

 private:
  struct TaskKey {
    Term term;
    std::uint64_t cycle = 0;
    std::uint64_t attempt = 0;
    friend auto operator<=>(const TaskKey&, const TaskKey&) = default;
  };

  struct TaskSpec {
    TaskKey key;
    NodeId master;
    std::uint32_t reducers = 1;
    std::vector<NodeId> reducer_nodes;              // part -> node
    std::vector<std::pair<RoomId, std::uint64_t>> rooms;  // room -> first window
  };

  struct ReduceState {
    std::optional<TaskSpec> spec;
    std::map<std::uint32_t, std::map<RoomId, std::vector<IntermediateCount>>> received;
    std::set<std::uint32_t> emitted;
  };

  struct MasterTask {
    TaskSpec spec;
    std::vector<NodeId> participants;
    Millis started{0};
    std::map<std::uint32_t, std::map<std::uint64_t, std::vector<IntermediateCount>>> fragments;
    std::map<std::uint32_t, std::uint64_t> fragment_count;
    bool ready = false;
  };

  // ---- plumbing ----------------------------------------------------------

  void send(NodeId to, MsgType type, Payload payload) {
    Message m{type, self_, role_.term, seq_base_ + ++seq_, std::move(payload)};
    auto frame = encode(m);
    ++counters_.sent;
    ++counters_.sent_by_type[type];
    if (is_data_message(type)) {
      ++counters_.data_sent;
      counters_.data_bytes += frame.size();
    }
    outbox_.push_back({to, std::move(frame)});
  }

  void broadcast(MsgType type, const Payload& payload) {
    for (const auto& [id, addr] : cfg_.endpoints) {
      if (id != self_) send(id, type, payload);
    }
  }

  Payload heartbeat_payload() const {
    return {{"deg", std::to_string(degree(view_))},
            {"m", role_.known_master ? std::to_string(role_.known_master->value) : "-"}};
  }

  std::size_t node_count() const { return cfg_.node_count; }

  // ---- role handling -----------------------------------------------------

  void apply(const RoleEvent& ev, Millis now) {
    auto before = role_;
    auto tr = step_role(role_, ev, node_count());
    role_ = tr.state;
    for (const auto& a : tr.actions) {
      switch (a.kind) {
        case RoleAction::Kind::BroadcastClaim:
          broadcast(MsgType::LEADER_CLAIM, {{"deg", std::to_string(a.degree)}});
          break;
        case RoleAction::Kind::BroadcastAnnounce:
          broadcast(MsgType::LEADER_ANNOUNCE, {{"deg", std::to_string(degree(view_))}});
          break;
        case RoleAction::Kind::BroadcastAbdicate:
          broadcast(MsgType::ABDICATE, {});
          break;
        case RoleAction::Kind::SendAck:
          send(a.to, MsgType::LEADER_ACK,
               {{"to", std::to_string(a.to.value)}, {"grant", a.granted ? "1" : "0"}});
          break;
      }
    }
    on_role_change(before, now);
  }

  void on_role_change(const RoleState& before, Millis now) {
    if (role_.role == Role::Candidate &&
        (before.role != Role::Candidate || before.term != role_.term)) {
      acks_ = {self_};
      election_started_ = now;
      claim_at_.reset();
      if (acks_.size() >= eligibility_threshold(node_count())) {
        apply(role_event::LeaderAckQuorum{role_.term, acks_.size()}, now);
        return;
      }
    }
    if (role_.role == Role::Master && before.role != Role::Master) {
      next_check_ = now + cfg_.check_period;
      task_.reset();
    }
    if (role_.role != Role::Master && before.role == Role::Master) task_.reset();
    if (!role_.known_master && (before.known_master || before.role != role_.role)) {
      no_master_since_ = now;
      claim_at_.reset();
    }
    if (role_.known_master) claim_at_.reset();
  }

  void worker_tick(Millis now) {
    bool silent = role_.known_master ? !view_.is_live(*role_.known_master)
                                     : now - no_master_since_ > cfg_.heartbeat_timeout;
    if (!silent) {
      claim_at_.reset();
      return;
    }
    if (!claim_at_) {
      // Lower ids claim first, so the lowest eligible live node usually wins.
      auto live = view_.live_nodes();
      auto rank = std::find(live.begin(), live.end(), self_) - live.begin();
      claim_at_ = now + rank * cfg_.heartbeat_period;
    }
    if (now >= *claim_at_) {
      claim_at_.reset();
      apply(role_event::HeartbeatTimeoutOnMaster{degree(view_)}, now);
      if (role_.role == Role::Worker) no_master_since_ = now;
    }
  }

  void dispatch(const Message& m, Millis now) {
    switch (m.type) {
      case MsgType::HELLO:
        on_heartbeat(m, now);
        if (m.sender != self_) send(m.sender, MsgType::HB_ACK, heartbeat_payload());
        break;
      case MsgType::HB:
      case MsgType::HB_ACK:
        on_heartbeat(m, now);
        break;
      case MsgType::LEADER_CLAIM: {
        if (quarantined(now) || m.sender == self_) break;
        advertised_degree_[m.sender] = detail::require_u64(m, "deg");
        if (m.term <= vote_floor_) {
          // A restarted node may have voted in these terms before it crashed.
          send(m.sender, MsgType::LEADER_ACK,
               {{"to", std::to_string(m.sender.value)}, {"grant", "0"}});
          break;
        }
        std::optional<LeaderCandidate> incumbent;
        if (auto km = role_.known_master;
            km && *km != self_ && *km != m.sender && view_.is_live(*km)) {
          incumbent = LeaderCandidate{*km, advertised_degree_[*km]};
        }
        apply(role_event::LeaderClaimReceived{m.term, m.sender, advertised_degree_[m.sender],
                                              incumbent},
              now);
        break;
      }
      case MsgType::LEADER_ACK:
        if (role_.role == Role::Candidate && m.term == role_.term &&
            m.get("to") == std::to_string(self_.value) && m.get("grant") == "1") {
          acks_.insert(m.sender);
          apply(role_event::LeaderAckQuorum{role_.term, acks_.size()}, now);
        }
        break;
      case MsgType::LEADER_ANNOUNCE:
        if (m.get("deg")) advertised_degree_[m.sender] = detail::require_u64(m, "deg");
        apply(role_event::MasterObserved{m.term, m.sender}, now);
        break;
      case MsgType::ABDICATE:
        apply(role_event::AbdicateObserved{m.term, m.sender}, now);
        break;
      case MsgType::TASK:
        on_task(m, now);
        break;
      case MsgType::MAP_OUT:
        on_map_out(m);
        break;
      case MsgType::RED_OUT:
        on_red_out(m, now);
        break;
      case MsgType::CYCLE_DONE:
        on_cycle_done(m);
        break;
    }
  }

  void on_heartbeat(const Message& m, Millis now) {
    if (m.sender == self_) return;
    if (m.get("deg")) advertised_degree_[m.sender] = detail::require_u64(m, "deg");
    if (m.get("m") == std::to_string(m.sender.value)) {
      apply(role_event::MasterObserved{m.term, m.sender}, now);
    }
  }

  // ---- master ------------------------------------------------------------

  Millis cycle_end(std::uint64_t cycle) const {
    return cfg_.cycle_period * static_cast<Millis::rep>(cycle + 1);
  }

  Millis task_deadline() const { return 3 * cfg_.heartbeat_timeout; }

  void master_tick(Millis now) {
    if (now >= next_check_) {
      next_check_ = now + cfg_.check_period;
      apply(role_event::ConnectivityCheckDue{degree(view_)}, now);
      if (role_.role != Role::Master) return;
    }
    if (!task_) {
      maybe_start_task(now);
      return;
    }
    if (task_->ready) {
      try_commit(now);
      return;
    }
    bool lost_participant = std::any_of(task_->participants.begin(), task_->participants.end(),
                                        [&](NodeId p) { return !view_.is_live(p); });
    if (lost_participant || now - task_->started > task_deadline()) {
      task_.reset();
      maybe_start_task(now);
      return;
    }
    send_task();
  }

  void maybe_start_task(Millis now) {
    CommitState cs;
    try {
      cs = commit_state(sink_.export_records(opts_.scenario_id));
    } catch (const UnknownScenario&) {
      try {
        sink_.open_scenario(opts_.scenario_id);
      } catch (const SinkUnavailable&) {
      }
      return;
    } catch (const SinkUnavailable&) {
      return;
    }
    if (cs.newest_term > role_.term) {
      apply(role_event::HigherTermObserved{cs.newest_term, std::nullopt}, now);
      return;
    }
    if (now < cycle_end(cs.next_cycle)) return;
    if (!is_eligible(view_, node_count())) return;

    MasterTask t;
    t.participants = view_.live_nodes();
    t.started = now;
    t.spec.key = TaskKey{role_.term, cs.next_cycle, ++attempt_};
    t.spec.master = self_;
    t.spec.reducers = cfg_.reducer_count;
    for (std::uint32_t k = 0; k < cfg_.reducer_count; ++k) {
      t.spec.reducer_nodes.push_back(t.participants[k % t.participants.size()]);
    }
    for (auto p : t.participants) {
      for (auto room : opts_.layout.rooms_of(p)) {
        auto wm = cs.room_watermark.find(room);
        t.spec.rooms.emplace_back(room, wm == cs.room_watermark.end() ? 0 : wm->second + 1);
      }
    }
    std::sort(t.spec.rooms.begin(), t.spec.rooms.end());
    task_ = std::move(t);
    send_task();
  }

  void send_task() {
    const auto& s = task_->spec;
    std::vector<std::uint32_t> red;
    for (auto n : s.reducer_nodes) red.push_back(n.value);
    std::string rooms;
    for (const auto& [room, from] : s.rooms) {
      if (!rooms.empty()) rooms += ',';
      rooms += std::to_string(room.index) + ':' + std::to_string(from);
    }
    Payload p{{"c", std::to_string(s.key.cycle)},
              {"a", std::to_string(s.key.attempt)},
              {"r", std::to_string(s.reducers)},
              {"red", detail::join_u32(red)},
              {"rooms", rooms.empty() ? "-" : rooms}};
    for (auto n : task_->participants) send(n, MsgType::TASK, p);
  }

  void on_red_out(const Message& m, Millis now) {
    if (role_.role != Role::Master || !task_ || task_->ready || m.term != role_.term) return;
    TaskKey key{m.term, detail::require_u64(m, "c"), detail::require_u64(m, "a")};
    if (key != task_->spec.key) return;
    auto part = detail::require_u64(m, "p");
    auto frag = detail::require_u64(m, "f");
    auto nfrag = detail::require_u64(m, "nf");
    if (part >= task_->spec.reducers || nfrag == 0 || frag >= nfrag) return;
    auto p = static_cast<std::uint32_t>(part);
    task_->fragment_count[p] = nfrag;
    task_->fragments[p][frag] = detail::payload_counts(m);

    for (std::uint32_t k = 0; k < task_->spec.reducers; ++k) {
      auto nf = task_->fragment_count.find(k);
      auto fr = task_->fragments.find(k);
      if (nf == task_->fragment_count.end() || fr == task_->fragments.end() ||
          fr->second.size() != nf->second) {
        return;
      }
    }
    task_->ready = true;
    try_commit(now);
  }

  void try_commit(Millis now) {
    ReducedCounts reduced;
    for (const auto& [part, frags] : task_->fragments) {
      for (const auto& [f, entries] : frags) merge_into(reduced, reduce_partition(entries));
    }
    MeasurementRecord rec;
    rec.scenario_id = opts_.scenario_id;
    rec.cycle_index = task_->spec.key.cycle;
    rec.master = self_;
    rec.term = role_.term;
    rec.case1 = aggregate_case1(reduced);
    rec.case2 = aggregate_case2(reduced);
    for (const auto& [room, from] : task_->spec.rooms) rec.rooms.push_back(room);
    rec.ingest = now;
    try {
      sink_.append_report(rec);
    } catch (const SinkUnavailable&) {
      return;  // keep the reduced result, retry on the next tick
    } catch (const StaleTerm& e) {
      task_.reset();
      apply(role_event::HigherTermObserved{e.newest(), std::nullopt}, now);
      return;
    } catch (const CycleConflict&) {
      task_.reset();
      return;
    }
    std::vector<std::uint32_t> rooms;
    for (auto r : rec.rooms) rooms.push_back(r.index);
    Payload done{{"c", std::to_string(rec.cycle_index)}, {"rooms", detail::join_u32(rooms)}};
    for (const auto& [id, addr] : cfg_.endpoints) send(id, MsgType::CYCLE_DONE, done);
    commits_.push_back(std::move(rec));
    task_.reset();
  }

  // ---- mapper / reducer --------------------------------------------------

  static TaskSpec parse_task(const Message& m) {
    TaskSpec s;
    s.key = TaskKey{m.term, detail::require_u64(m, "c"), detail::require_u64(m, "a")};
    s.master = m.sender;
    auto r = detail::require_u64(m, "r");
    if (r == 0 || r > 4096) {
      throw WireError(WireError::Code::MalformedField, "payload", "bad reducer count");
    }
    s.reducers = static_cast<std::uint32_t>(r);
    for (auto n : detail::parse_u32_list(m.get("red").value_or(""))) {
      s.reducer_nodes.push_back(NodeId{n});
    }
    if (s.reducer_nodes.size() != s.reducers) {
      throw WireError(WireError::Code::MalformedField, "payload", "reducer list size");
    }
    auto rooms = m.get("rooms").value_or("-");
    if (rooms != "-") {
      std::size_t pos = 0;
      while (true) {
        auto comma = rooms.find(',', pos);
        auto item = rooms.substr(pos, comma == std::string_view::npos ? rooms.npos : comma - pos);
        auto colon = item.find(':');
        std::uint64_t room = 0, from = 0;
        if (colon == std::string_view::npos || !detail::parse_u64(item.substr(0, colon), room) ||
            !detail::parse_u64(item.substr(colon + 1), from) || room > UINT32_MAX) {
          throw WireError(WireError::Code::MalformedField, "payload", "bad rooms list");
        }
        s.rooms.emplace_back(RoomId{static_cast<std::uint32_t>(room)}, from);
        if (comma == std::string_view::npos) break;
        pos = comma + 1;
      }
    }
    return s;
  }

  void on_task(const Message& m, Millis now) {
    if (m.term < role_.term) return;
    if (m.sender != self_ && (role_.known_master != m.sender || role_.term != m.term)) {
      apply(role_event::MasterObserved{m.term, m.sender}, now);
    }
    if (role_.known_master != m.sender || role_.term != m.term) return;
    auto spec = parse_task(m);

    for (const auto& [room, from] : spec.rooms) {
      if (room.index >= opts_.layout.room_count || opts_.layout.host_of(room) != self_) continue;
      auto& windows = pending_[room];
      windows.erase(windows.begin(), windows.lower_bound(from));
      std::vector<VisitorEvent> batch;
      for (auto it = windows.begin(); it != windows.end() && it->first <= spec.key.cycle; ++it) {
        batch.insert(batch.end(), it->second.begin(), it->second.end());
      }
      std::vector<std::vector<IntermediateCount>> by_part(spec.reducers);
      for (const auto& ic : map_batch(batch, room)) {
        by_part[reducer_for(ic.key, spec.reducers)].push_back(ic);
      }
      for (std::uint32_t k = 0; k < spec.reducers; ++k) {
        Payload p{{"c", std::to_string(spec.key.cycle)},
                  {"a", std::to_string(spec.key.attempt)},
                  {"room", std::to_string(room.index)},
                  {"p", std::to_string(k)}};
        for (const auto& ic : by_part[k]) {
          p.emplace_back(composite_key_text(ic.key), std::to_string(ic.count));
        }
        send(spec.reducer_nodes[k], MsgType::MAP_OUT, std::move(p));
      }
    }

    // Reducer bookkeeping: only the newest task is kept.
    reductions_.erase(reductions_.begin(), reductions_.lower_bound(spec.key));
    auto& rs = reductions_[spec.key];
    bool first_sight = !rs.spec.has_value();
    rs.spec = spec;
    for (std::uint32_t k = 0; k < spec.reducers; ++k) {
      if (spec.reducer_nodes[k] == self_) maybe_emit(rs, k, /*force=*/!first_sight);
    }
  }

  void on_map_out(const Message& m) {
    TaskKey key{m.term, detail::require_u64(m, "c"), detail::require_u64(m, "a")};
    if (!reductions_.empty() && key < reductions_.begin()->first) return;
    auto room = detail::require_u64(m, "room");
    auto part = detail::require_u64(m, "p");
    if (room > UINT32_MAX || part > UINT32_MAX) return;
    if (reductions_.size() >= 16 && !reductions_.count(key)) reductions_.erase(reductions_.begin());
    auto& rs = reductions_[key];
    rs.received[static_cast<std::uint32_t>(part)][RoomId{static_cast<std::uint32_t>(room)}] =
        detail::payload_counts(m);
    if (rs.spec && part < rs.spec->reducers && rs.spec->reducer_nodes[part] == self_) {
      maybe_emit(rs, static_cast<std::uint32_t>(part), false);
    }
  }

  void maybe_emit(ReduceState& rs, std::uint32_t part, bool force) {
    if (rs.emitted.count(part) && !force) return;
    const auto& spec = *rs.spec;
    auto& got = rs.received[part];
    for (const auto& [room, from] : spec.rooms) {
      if (!got.count(room)) return;
    }
    std::vector<IntermediateCount> all;
    for (const auto& [room, counts] : got) {
      bool expected = std::any_of(spec.rooms.begin(), spec.rooms.end(),
                                  [&](const auto& rf) { return rf.first == room; });
      if (expected) all.insert(all.end(), counts.begin(), counts.end());
    }
    std::vector<IntermediateCount> reduced;
    for (const auto& [k, n] : reduce_partition(all)) reduced.push_back({k, n});

    Message header{MsgType::RED_OUT, self_, role_.term, 0,
                   {{"c", std::to_string(spec.key.cycle)},
                    {"a", std::to_string(spec.key.attempt)},
                    {"p", std::to_string(part)}}};
    auto frags = fragment_payload(header, reduced);
    for (std::size_t f = 0; f < frags.size(); ++f) {
      Payload p = header.payload;
      p.emplace_back("f", std::to_string(f));
      p.emplace_back("nf", std::to_string(frags.size()));
      p.insert(p.end(), frags[f].begin(), frags[f].end());
      send(spec.master, MsgType::RED_OUT, std::move(p));
    }
    rs.emitted.insert(part);
  }

  void on_cycle_done(const Message& m) {
    auto cycle = detail::require_u64(m, "c");
    for (auto r : detail::parse_u32_list(m.get("rooms").value_or("-"))) {
      RoomId room{r};
      auto it = pending_.find(room);
      if (it == pending_.end()) continue;
      it->second.erase(it->second.begin(), it->second.upper_bound(cycle));
    }
  }

  NodeId self_;
  ClusterConfig cfg_;
  Options opts_;
  ReportSink& sink_;

  RoleState role_;
  ConnectivityView view_;
  std::map<NodeId, std::size_t> advertised_degree_;
  Millis no_master_since_{0};
  std::optional<Millis> claim_at_;
  Millis election_started_{0};
  std::set<NodeId> acks_;
  Millis quarantine_until_{0};
  Term vote_floor_;  // no votes at or below this term after a restart
  Millis next_check_{0};

  std::uint64_t seq_base_;
  std::uint64_t seq_ = 0;
  DedupWindow dedup_;

  std::map<RoomId, std::map<std::uint64_t, std::vector<VisitorEvent>>> pending_;
  std::unordered_set<std::uint64_t> seen_events_;
  std::map<TaskKey, ReduceState> reductions_;

  std::optional<MasterTask> task_;
  std::uint64_t attempt_ = 0;

  std::vector<Envelope> outbox_;
  std::vector<MeasurementRecord> commits_;
  NodeCounters counters_;
};

}  // namespace crowdmr
