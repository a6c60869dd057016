#pragma once

// Counting pipeline: room batches -> keyed partial counts -> partitions ->
// reduced totals -> the per-visitor (case 1) and per-room (case 2) views.
// Everything here is a pure function over values.

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "crowdmr/domain.hpp"

namespace crowdmr {

using Count = std::uint64_t;

class ForeignRoomEvent : public Error {
 public:
  ForeignRoomEvent(std::uint64_t event_id, RoomId expected, RoomId actual)
      : Error("event " + std::to_string(event_id) + " belongs to room" +
              std::to_string(actual.index) + ", batch is room" +
              std::to_string(expected.index)) {}
};

class ZeroReducers : public Error {
 public:
  ZeroReducers() : Error("reducer_count must be at least 1") {}
};

class DuplicateEventId : public Error {
 public:
  explicit DuplicateEventId(std::uint64_t id)
      : Error("duplicate event id " + std::to_string(id)) {}
};

struct IntermediateCount {
  CompositeKey key;
  Count count = 0;

  friend bool operator==(const IntermediateCount&, const IntermediateCount&) = default;
};

using ReducedCounts = std::map<CompositeKey, Count>;

struct Case1Result {
  std::map<TagCategory, Count> per_category_totals;
  ReducedCounts composite_breakdown;

  Count total() const {
    Count sum = 0;
    for (const auto& [cat, n] : per_category_totals) sum += n;
    return sum;
  }
  friend bool operator==(const Case1Result&, const Case1Result&) = default;
};

struct Case2Result {
  std::map<RoomId, Count> per_room_totals;
  std::map<RoomId, std::map<TagCategory, Count>> per_room_breakdown;

  Count total() const {
    Count sum = 0;
    for (const auto& [room, n] : per_room_totals) sum += n;
    return sum;
  }
  friend bool operator==(const Case2Result&, const Case2Result&) = default;
};

struct PartitionPlan {
  std::uint32_t reducer_count = 1;
  std::map<CompositeKey, std::uint32_t> assignment;

  std::vector<CompositeKey> keys_for(std::uint32_t ordinal) const {
    std::vector<CompositeKey> out;
    for (const auto& [key, ord] : assignment) {
      if (ord == ordinal) out.push_back(key);
    }
    return out;
  }
  friend bool operator==(const PartitionPlan&, const PartitionPlan&) = default;
};

/// FNV-1a, 64-bit, over raw bytes.
constexpr std::uint64_t fnv1a64(std::string_view bytes,
                                std::uint64_t hash = 0xcbf29ce484222325ULL) {
  for (unsigned char b : bytes) {
    hash ^= b;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

inline std::uint32_t reducer_for(const CompositeKey& key, std::uint32_t reducer_count) {
  if (reducer_count == 0) throw ZeroReducers();
  return static_cast<std::uint32_t>(fnv1a64(composite_key_text(key)) % reducer_count);
}

/// Tallies one room's batch. Output is ordered Man, Woman, Other and omits
/// categories with no reads.
inline std::vector<IntermediateCount> map_batch(std::span<const VisitorEvent> events,
                                                RoomId room) {
  std::array<Count, 3> tally{};
  for (const auto& e : events) {
    if (e.room != room) throw ForeignRoomEvent(e.event_id, room, e.room);
    ++tally[static_cast<std::size_t>(e.category)];
  }
  std::vector<IntermediateCount> out;
  for (auto c : kAllCategories) {
    if (auto n = tally[static_cast<std::size_t>(c)]; n > 0) {
      out.push_back({CompositeKey{c, room}, n});
    }
  }
  return out;
}

inline PartitionPlan partition(const std::set<CompositeKey>& keys, std::uint32_t reducer_count) {
  if (reducer_count == 0) throw ZeroReducers();
  PartitionPlan plan;
  plan.reducer_count = reducer_count;
  for (const auto& k : keys) plan.assignment.emplace(k, reducer_for(k, reducer_count));
  return plan;
}

inline ReducedCounts reduce_partition(std::span<const IntermediateCount> shards) {
  ReducedCounts out;
  for (const auto& s : shards) out[s.key] += s.count;
  return out;
}

/// Merges already-reduced maps. Used by the master to join disjoint reducer
/// outputs; overlapping keys are summed.
inline void merge_into(ReducedCounts& into, const ReducedCounts& from) {
  for (const auto& [k, n] : from) into[k] += n;
}

inline Case1Result aggregate_case1(const ReducedCounts& reduced) {
  Case1Result r;
  for (auto c : kAllCategories) r.per_category_totals[c] = 0;
  r.composite_breakdown = reduced;
  for (const auto& [key, n] : reduced) r.per_category_totals[key.category] += n;
  return r;
}

inline Case2Result aggregate_case2(const ReducedCounts& reduced) {
  Case2Result r;
  for (const auto& [key, n] : reduced) {
    auto& row = r.per_room_breakdown[key.room];
    if (row.empty()) {
      for (auto c : kAllCategories) row[c] = 0;
    }
    row[key.category] += n;
    r.per_room_totals[key.room] += n;
  }
  return r;
}

struct OracleResult {
  Case1Result case1;
  Case2Result case2;
  ReducedCounts reduced;
};

/// Single-pass reference tally. Every distributed path is checked against it.
inline OracleResult sequential_oracle(std::span<const VisitorEvent> events) {
  std::unordered_set<std::uint64_t> seen;
  seen.reserve(events.size());
  OracleResult out;
  for (const auto& e : events) {
    if (!seen.insert(e.event_id).second) throw DuplicateEventId(e.event_id);
    ++out.reduced[CompositeKey{e.category, e.room}];
  }
  out.case1 = aggregate_case1(out.reduced);
  out.case2 = aggregate_case2(out.reduced);
  return out;
}

}  // namespace crowdmr
