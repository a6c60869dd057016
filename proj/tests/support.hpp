#pragma once

// Fixtures shared by the test binaries.

#include <string>
#include <vector>

#include "crowdmr/mapreduce.hpp"
#include "crowdmr/simnet.hpp"

namespace crowdmr::testing {

inline constexpr TagCategory kMan = TagCategory::Man;
inline constexpr TagCategory kWoman = TagCategory::Woman;
inline constexpr TagCategory kOther = TagCategory::Other;

inline CompositeKey key(TagCategory c, std::uint32_t room) { return {c, RoomId{room}}; }

/// The 500-visitor reference tally, rows Man / Woman / Other, rooms 0..5.
inline ReducedCounts table1() {
  const Count rows[3][6] = {{27, 22, 28, 30, 22, 28},
                            {28, 31, 36, 23, 23, 28},
                            {31, 31, 16, 31, 37, 28}};
  ReducedCounts out;
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::uint32_t r = 0; r < 6; ++r) out[key(kAllCategories[c], r)] = rows[c][r];
  }
  return out;
}

/// The 500-visitor tally as a concrete event stream, rooms interleaved.
inline std::vector<VisitorEvent> table1_events() {
  std::vector<VisitorEvent> out;
  std::uint64_t id = 1;
  for (const auto& [k, n] : table1()) {
    for (Count i = 0; i < n; ++i) {
      out.push_back({id, k.category, k.room, Millis{static_cast<Millis::rep>(id * 7 % 900)}});
      ++id;
    }
  }
  return out;
}

inline ClusterConfig cluster(std::uint32_t n, Millis cycle = Millis{60000}) {
  auto cfg = ClusterConfig::local(n);
  cfg.cycle_period = cycle;
  return cfg;
}

/// N nodes, `rooms` rooms, random visitors spread over one cycle.
inline ScenarioSpec small_spec(std::uint32_t nodes, std::uint32_t rooms, Count visitors,
                               std::uint64_t seed) {
  ScenarioSpec s;
  s.id = "t";
  s.seed = seed;
  s.cluster = cluster(nodes);
  s.rooms = rooms;
  s.visitors = visitors;
  s.tour = Millis{60000};
  s.duration = Millis{240000};
  return s;
}

}  // namespace crowdmr::testing
