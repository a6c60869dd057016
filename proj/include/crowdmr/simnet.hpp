#pragma once

// Deterministic discrete-event harness. One virtual clock, one seeded
// generator, a lossy link model and scripted faults drive a whole cluster
// of Node instances in a single thread. Equal ScenarioSpecs give equal runs.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "crowdmr/mapreduce.hpp"
#include "crowdmr/membership.hpp"
#include "crowdmr/node.hpp"
#include "crowdmr/report.hpp"
#include "crowdmr/storage.hpp"
#include "crowdmr/wire.hpp"

namespace crowdmr {

class MatrixMismatch : public Error {
 public:
  MatrixMismatch(Count matrix_total, Count visitors)
      : Error("visitor matrix totals " + std::to_string(matrix_total) + " but visitors = " +
              std::to_string(visitors)) {}
};

class UnknownNode : public Error {
 public:
  explicit UnknownNode(NodeId n) : Error("unknown node " + std::to_string(n.value)) {}
};

class InvalidScenario : public Error {
 public:
  using Error::Error;
};

/// std::mt19937_64's output sequence is fixed by the standard; the
/// distributions are not, so the few we need are written out here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, n); n == 0 yields 0.
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  /// Uniform in [0, 1) with 53 bits.
  double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  bool chance(double p) {
    if (p <= 0.0) return false;
    if (p >= 1.0) return true;
    return unit() < p;
  }

  /// Index drawn proportionally to non-negative weights (all-zero: uniform).
  std::size_t weighted(const std::vector<double>& weights) {
    double total = 0;
    for (double w : weights) total += w;
    if (total <= 0) return static_cast<std::size_t>(below(weights.size()));
    double x = unit() * total;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (x < weights[i]) return i;
      x -= weights[i];
    }
    return weights.size() - 1;
  }

 private:
  std::mt19937_64 engine_;
};

struct LinkModel {
  Millis base_delay{2};
  Millis jitter{1};
  double drop_probability = 0.0;
  double duplicate_probability = 0.0;

  void validate() const {
    if (base_delay.count() < 0 || jitter.count() < 0) {
      throw InvalidScenario("link delays must be non-negative");
    }
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob(drop_probability) || !prob(duplicate_probability)) {
      throw InvalidScenario("link probabilities must lie in [0,1]");
    }
  }
};

namespace fault {
struct CrashNode {
  NodeId node;
};
struct RecoverNode {
  NodeId node;
};
struct Partition {
  std::set<NodeId> a;
  std::set<NodeId> b;
};
struct Heal {};
/// Overrides the drop probability of one undirected link, or of all links.
struct DropRate {
  std::optional<std::pair<NodeId, NodeId>> link;
  double probability = 0.0;
};
}  // namespace fault

struct FaultEvent {
  Millis at{0};
  std::variant<fault::CrashNode, fault::RecoverNode, fault::Partition, fault::Heal,
               fault::DropRate>
      kind;
};


using VisitorMatrix = std::map<CompositeKey, Count>;

struct ScenarioSpec {
  std::string id = "scenario";
  std::uint64_t seed = 1;
  ClusterConfig cluster = ClusterConfig::local(1);
  std::uint32_t rooms = 1;
  std::optional<Count> visitors;
  VisitorMatrix matrix;
  std::vector<double> room_weights;      // empty: uniform
  std::vector<double> category_weights;  // Man, Woman, Other; empty: uniform
  Millis tour{300000};                   // visitor timestamps fall in [0, tour)
  Millis duration{360000};               // simulated run length
  std::vector<FaultEvent> faults;
  LinkModel link;
  std::vector<ReferenceValue> references;

  Count visitor_total() const {
    if (matrix.empty()) return visitors.value_or(0);
    Count n = 0;
    for (const auto& [k, c] : matrix) n += c;
    return n;
  }

  void validate() const {
    cluster.validate();
    link.validate();
    if (!valid_scenario_id(id)) throw InvalidScenario("invalid scenario id '" + id + "'");
    if (rooms == 0 || rooms > 64) throw InvalidScenario("rooms must be in [1, 64]");
    if (tour.count() <= 0) throw InvalidScenario("tour must be positive");
    if (duration < tour) throw InvalidScenario("duration must cover the tour");
    for (const auto& [key, n] : matrix) {
      if (key.room.index >= rooms) {
        throw InvalidScenario(composite_key_text(key) + " is outside the declared rooms");
      }
    }
    if (!matrix.empty() && visitors && *visitors != visitor_total()) {
      throw MatrixMismatch(visitor_total(), *visitors);
    }
    if (!room_weights.empty() && room_weights.size() != rooms) {
      throw InvalidScenario("room_weights needs one weight per room");
    }
    if (!category_weights.empty() && category_weights.size() != 3) {
      throw InvalidScenario("category_weights needs three weights");
    }
    for (double w : room_weights) {
      if (!(w >= 0)) throw InvalidScenario("weights must be non-negative");
    }
    for (double w : category_weights) {
      if (!(w >= 0)) throw InvalidScenario("weights must be non-negative");
    }
    for (const auto& f : faults) {
      if (f.at.count() < 0) throw InvalidScenario("fault time must be non-negative");
      auto check = [&](NodeId n) {
        if (!cluster.contains(n)) throw UnknownNode(n);
      };
      std::visit(
          [&](const auto& k) {
            using K = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<K, fault::CrashNode> ||
                          std::is_same_v<K, fault::RecoverNode>) {
              check(k.node);
            } else if constexpr (std::is_same_v<K, fault::Partition>) {
              for (auto n : k.a) check(n);
              for (auto n : k.b) check(n);
            } else if constexpr (std::is_same_v<K, fault::DropRate>) {
              if (k.link) {
                check(k.link->first);
                check(k.link->second);
              }
              if (!(k.probability >= 0.0 && k.probability <= 1.0)) {
                throw InvalidScenario("drop rate must lie in [0,1]");
              }
            }
          },
          f.kind);
    }
  }

  RoomLayout layout() const { return RoomLayout{rooms, cluster.node_ids()}; }
};

/// The visitor reads of a scenario, ordered by timestamp, ids 1..L.
inline std::vector<VisitorEvent> generate_stream(const ScenarioSpec& spec) {
  if (!spec.matrix.empty() && spec.visitors && *spec.visitors != spec.visitor_total()) {
    throw MatrixMismatch(spec.visitor_total(), *spec.visitors);
  }
  Rng rng(spec.seed ^ 0x5eed'57e4'0000'0001ULL);
  const auto tour = static_cast<std::uint64_t>(spec.tour.count());
  std::vector<VisitorEvent> events;
  events.reserve(spec.visitor_total());
  auto stamp = [&] { return Millis{static_cast<Millis::rep>(rng.below(tour))}; };

  if (!spec.matrix.empty()) {
    for (const auto& [key, n] : spec.matrix) {
      for (Count i = 0; i < n; ++i) events.push_back({0, key.category, key.room, stamp()});
    }
  } else {
    std::vector<double> rw = spec.room_weights;
    if (rw.empty()) rw.assign(spec.rooms, 1.0);
    std::vector<double> cw = spec.category_weights;
    if (cw.empty()) cw.assign(3, 1.0);
    for (Count i = 0; i < spec.visitors.value_or(0); ++i) {
      RoomId room{static_cast<std::uint32_t>(rng.weighted(rw))};
      auto cat = kAllCategories[rng.weighted(cw)];
      events.push_back({0, cat, room, stamp()});
    }
  }
  std::stable_sort(events.begin(), events.end(),
                   [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
  for (std::size_t i = 0; i < events.size(); ++i) events[i].event_id = i + 1;
  return events;
}

struct CycleReport {
  std::uint64_t cycle_index = 0;
  Term term;
  NodeId master;
  Case1Result case1;
  Case2Result case2;
  Count events_processed = 0;
  std::uint64_t trace_digest = 0;  // FNV-1a over every delivery and fault so far
  Millis committed_at{0};
  std::vector<RoomId> rooms;

  friend bool operator==(const CycleReport&, const CycleReport&) = default;
};

struct SafetyViolation {
  Millis at{0};
  Term term;
  NodeId first;
  NodeId second;
};

struct SimStats {
  std::uint64_t messages_sent = 0;  // every frame a node emitted, loopback included
  std::uint64_t data_messages = 0;  // MAP_OUT + RED_OUT
  std::uint64_t data_bytes = 0;
  std::uint64_t delivered = 0;
  std::uint64_t dropped = 0;
  std::uint64_t duplicated = 0;
  std::uint64_t malformed = 0;
};

struct ScenarioOutcome {
  std::vector<CycleReport> reports;
  bool all_nodes_dead = false;
  std::optional<Millis> died_at;
  Millis ended_at{0};
  SimStats stats;
  std::vector<SafetyViolation> violations;
};

inline std::string describe(const FaultEvent& f) {
  std::string out = "at=" + std::to_string(f.at.count()) + "ms ";
  auto ids = [](const std::set<NodeId>& s) {
    std::string r;
    for (auto n : s) r += (r.empty() ? "" : ",") + std::to_string(n.value);
    return r;
  };
  std::visit(
      [&](const auto& k) {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, fault::CrashNode>) {
          out += "crash=" + std::to_string(k.node.value);
        } else if constexpr (std::is_same_v<K, fault::RecoverNode>) {
          out += "recover=" + std::to_string(k.node.value);
        } else if constexpr (std::is_same_v<K, fault::Partition>) {
          out += "partition=" + ids(k.a) + "|" + ids(k.b);
        } else if constexpr (std::is_same_v<K, fault::Heal>) {
          out += "heal";
        } else {
          out += "droprate=";
          out += k.link ? std::to_string(k.link->first.value) + "-" +
                              std::to_string(k.link->second.value)
                        : std::string("all");
          out += ":" + std::to_string(k.probability);
        }
      },
      f.kind);
  return out;
}

class Simulation {
 public:
  /// Hook run after every processed event; used by tests to probe state.
  using Observer = std::function<void(const Simulation&)>;

  Simulation(ScenarioSpec spec, ReportSink& sink)
      : spec_(std::move(spec)), sink_(sink), rng_(spec_.seed) {
    spec_.validate();
    events_ = generate_stream(spec_);
    sink_.open_scenario(spec_.id);
    layout_ = spec_.layout();
    const auto ids = spec_.cluster.node_ids();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      slots_[ids[i]].phase = spec_.cluster.heartbeat_period *
                             static_cast<Millis::rep>(i + 1) /
                             static_cast<Millis::rep>(ids.size() + 1);
    }
    for (auto id : ids) boot(id, /*first_boot=*/true);
    for (std::size_t i = 0; i < events_.size(); ++i) {
      push(events_[i].timestamp, SensorRead{i});
    }
    for (const auto& f : spec_.faults) inject_fault(f);
  }

  const ScenarioSpec& spec() const { return spec_; }
  const std::vector<VisitorEvent>& events() const { return events_; }
  Millis now() const { return now_; }

  /// Schedules a fault at its virtual timestamp; same-time events keep
  /// insertion order.
  void inject_fault(const FaultEvent& f) {
    if (f.at < now_) throw InvalidScenario("fault scheduled in the past: " + describe(f));
    std::visit(
        [&](const auto& k) {
          using K = std::decay_t<decltype(k)>;
          auto check = [&](NodeId n) {
            if (!spec_.cluster.contains(n)) throw UnknownNode(n);
          };
          if constexpr (std::is_same_v<K, fault::CrashNode> ||
                        std::is_same_v<K, fault::RecoverNode>) {
            check(k.node);
          } else if constexpr (std::is_same_v<K, fault::Partition>) {
            for (auto n : k.a) check(n);
            for (auto n : k.b) check(n);
          } else if constexpr (std::is_same_v<K, fault::DropRate>) {
            if (k.link) {
              check(k.link->first);
              check(k.link->second);
            }
          }
          if constexpr (std::is_same_v<K, fault::RecoverNode>) ++pending_recoveries_;
        },
        f.kind);
    push(f.at, f);
  }

  /// Processes every queued event with time <= t (bounded by the duration).
  void run_until(Millis t) {
    t = std::min(t, spec_.duration);
    while (!queue_.empty() && !all_dead_) {
      if (queue_.top().at > t) break;
      auto item = queue_.top();
      queue_.pop();
      now_ = item.at;
      process(item);
      check_safety();
      if (observer_) observer_(*this);
    }
    if (!all_dead_) now_ = std::max(now_, t);
  }

  ScenarioOutcome run() {
    run_until(spec_.duration);
    return outcome();
  }

  ScenarioOutcome outcome() const {
    ScenarioOutcome out;
    out.reports = reports_;
    out.all_nodes_dead = all_dead_;
    out.died_at = died_at_;
    out.ended_at = now_;
    out.stats = stats_;
    out.violations = violations_;
    return out;
  }

  void set_observer(Observer obs) { observer_ = std::move(obs); }

  bool alive(NodeId n) const {
    auto it = slots_.find(n);
    return it != slots_.end() && it->second.node != nullptr;
  }

  const Node* node(NodeId n) const {
    auto it = slots_.find(n);
    return it == slots_.end() ? nullptr : it->second.node.get();
  }

  /// Live nodes currently holding the Master role.
  std::vector<NodeId> masters() const {
    std::vector<NodeId> out;
    for (const auto& [id, slot] : slots_) {
      if (slot.node && slot.node->role().role == Role::Master) out.push_back(id);
    }
    return out;
  }

  const std::vector<CycleReport>& reports() const { return reports_; }
  const std::vector<SafetyViolation>& violations() const { return violations_; }
  const SimStats& stats() const { return stats_; }
  bool all_nodes_dead() const { return all_dead_; }
  std::uint64_t trace_digest() const { return digest_; }

  /// Ids of events read while their room's node was up.
  const std::vector<std::uint64_t>& observed_events() const { return observed_; }

  /// Last time `observer` heard from `peer`, if ever.
  std::optional<Millis> last_heard(NodeId observer, NodeId peer) const {
    auto* n = node(observer);
    if (!n) return std::nullopt;
    auto it = n->view().last_heard.find(peer);
    if (it == n->view().last_heard.end()) return std::nullopt;
    return it->second;
  }

 private:
  struct Deliver {
    NodeId from;
    NodeId to;
    std::string frame;
  };
  struct Tick {
    NodeId node;
    std::uint64_t incarnation;
  };
  struct SensorRead {
    std::size_t index;
  };
  struct Item {
    Millis at;
    std::uint64_t order;
    std::variant<Deliver, Tick, SensorRead, FaultEvent> what;
  };
  struct Later {
    bool operator()(const Item& a, const Item& b) const {
      return a.at != b.at ? a.at > b.at : a.order > b.order;
    }
  };
  struct Slot {
    std::unique_ptr<Node> node;
    std::uint64_t incarnation = 0;
    Millis phase{0};
  };

  template <typename T>
  void push(Millis at, T&& what) {
    queue_.push(Item{at, next_order_++, std::forward<T>(what)});
  }

  void boot(NodeId id, bool first_boot) {
    auto& slot = slots_[id];
    ++slot.incarnation;
    Node::Options opts{spec_.id, layout_, first_boot};
    slot.node = std::make_unique<Node>(id, spec_.cluster, opts, sink_, now_);
    push(now_ + slot.phase, Tick{id, slot.incarnation});
    flush(id);
  }

  void trace(std::string_view line) {
    digest_ = fnv1a64(line, digest_);
    digest_ = fnv1a64("\n", digest_);
  }

  void process(Item& item) {
    std::visit(
        [&](auto& w) {
          using W = std::decay_t<decltype(w)>;
          if constexpr (std::is_same_v<W, Deliver>) {
            auto& slot = slots_[w.to];
            if (!slot.node) {
              ++stats_.dropped;
              return;
            }
            ++stats_.delivered;
            trace(std::to_string(now_.count()) + " " + std::to_string(w.from.value) + ">" +
                  std::to_string(w.to.value) + " " + w.frame);
            auto before = slot.node->counters().malformed;
            slot.node->on_frame(w.frame, now_);
            stats_.malformed += slot.node->counters().malformed - before;
            flush(w.to);
          } else if constexpr (std::is_same_v<W, Tick>) {
            auto& slot = slots_[w.node];
            if (!slot.node || slot.incarnation != w.incarnation) return;
            slot.node->on_tick(now_);
            flush(w.node);
            push(now_ + spec_.cluster.heartbeat_period, Tick{w.node, w.incarnation});
          } else if constexpr (std::is_same_v<W, SensorRead>) {
            const auto& e = events_[w.index];
            auto host = layout_.host_of(e.room);
            auto& slot = slots_[host];
            if (!slot.node) return;
            slot.node->on_sensor(e);
            observed_.push_back(e.event_id);
          } else {
            apply_fault(w);
          }
        },
        item.what);
  }

  void apply_fault(const FaultEvent& f) {
    trace(describe(f));
    std::visit(
        [&](const auto& k) {
          using K = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<K, fault::CrashNode>) {
            auto& slot = slots_[k.node];
            if (slot.node) {
              slot.node.reset();
              ++slot.incarnation;
            }
            bool any_alive = false;
            for (const auto& [id, s] : slots_) any_alive = any_alive || s.node != nullptr;
            if (!any_alive && pending_recoveries_ == 0) {
              all_dead_ = true;
              died_at_ = now_;
            }
          } else if constexpr (std::is_same_v<K, fault::RecoverNode>) {
            --pending_recoveries_;
            if (!slots_[k.node].node) boot(k.node, /*first_boot=*/false);
          } else if constexpr (std::is_same_v<K, fault::Partition>) {
            partitions_.push_back(k);
          } else if constexpr (std::is_same_v<K, fault::Heal>) {
            partitions_.clear();
          } else {
            if (k.link) {
              auto [a, b] = *k.link;
              drop_override_[{std::min(a, b), std::max(a, b)}] = k.probability;
            } else {
              drop_override_.clear();
              drop_all_ = k.probability;
            }
          }
        },
        f.kind);
  }

  bool cut(NodeId x, NodeId y) const {
    for (const auto& p : partitions_) {
      if ((p.a.count(x) && p.b.count(y)) || (p.b.count(x) && p.a.count(y))) return true;
    }
    return false;
  }

  double drop_probability(NodeId x, NodeId y) const {
    auto it = drop_override_.find({std::min(x, y), std::max(x, y)});
    if (it != drop_override_.end()) return it->second;
    if (drop_all_) return *drop_all_;
    return spec_.link.drop_probability;
  }

  Millis link_delay() {
    auto jitter = static_cast<std::uint64_t>(spec_.link.jitter.count());
    return spec_.link.base_delay + Millis{static_cast<Millis::rep>(rng_.below(jitter + 1))};
  }

  void flush(NodeId from) {
    auto& slot = slots_[from];
    if (!slot.node) return;
    for (auto& rec : slot.node->take_commits()) {
      CycleReport r;
      r.cycle_index = rec.cycle_index;
      r.term = rec.term;
      r.master = rec.master;
      r.case1 = rec.case1;
      r.case2 = rec.case2;
      r.events_processed = rec.case1.total();
      r.trace_digest = digest_;
      r.committed_at = now_;
      r.rooms = rec.rooms;
      reports_.push_back(std::move(r));
    }
    for (auto& env : slot.node->take_outbox()) {
      ++stats_.messages_sent;
      auto type_end = env.frame.find(' ', 5);
      auto type = parse_msg_type(std::string_view(env.frame).substr(5, type_end - 5));
      if (type && is_data_message(*type)) {
        ++stats_.data_messages;
        stats_.data_bytes += env.frame.size();
      }
      if (env.to == from) {
        push(now_, Deliver{from, env.to, std::move(env.frame)});
        continue;
      }
      if (cut(from, env.to) || rng_.chance(drop_probability(from, env.to))) {
        ++stats_.dropped;
        continue;
      }
      bool dup = rng_.chance(spec_.link.duplicate_probability);
      if (dup) {
        ++stats_.duplicated;
        push(now_ + link_delay(), Deliver{from, env.to, env.frame});
      }
      push(now_ + link_delay(), Deliver{from, env.to, std::move(env.frame)});
    }
  }

  void check_safety() {
    std::map<Term, NodeId> holder;
    for (const auto& [id, slot] : slots_) {
      if (!slot.node || slot.node->role().role != Role::Master) continue;
      auto [it, fresh] = holder.emplace(slot.node->role().term, id);
      if (!fresh) violations_.push_back({now_, slot.node->role().term, it->second, id});
    }
  }

  ScenarioSpec spec_;
  ReportSink& sink_;
  Rng rng_;
  RoomLayout layout_;
  std::vector<VisitorEvent> events_;
  std::map<NodeId, Slot> slots_;
  std::priority_queue<Item, std::vector<Item>, Later> queue_;
  std::uint64_t next_order_ = 0;
  Millis now_{0};

  std::vector<fault::Partition> partitions_;
  std::map<std::pair<NodeId, NodeId>, double> drop_override_;
  std::optional<double> drop_all_;
  int pending_recoveries_ = 0;
  bool all_dead_ = false;
  std::optional<Millis> died_at_;

  std::vector<CycleReport> reports_;
  std::vector<SafetyViolation> violations_;
  std::vector<std::uint64_t> observed_;
  SimStats stats_;
  std::uint64_t digest_ = 0xcbf29ce484222325ULL;
  Observer observer_;
};

inline ScenarioOutcome run_scenario(const ScenarioSpec& spec, ReportSink& sink) {
  Simulation sim(spec, sink);
  return sim.run();
}

}  // namespace crowdmr
