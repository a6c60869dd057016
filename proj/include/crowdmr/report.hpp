#pragma once

// Terminal and CSV renderings of the two aggregate views.
//
//   >>Sum: { Man : 157, Woman : 169, Other : 174 }
//   { Man-room0=27, Man-room1=22, ... }
//
//   >>Sum: { Room0 : 86, Room1 : 84, ... }
//   0: { Man: 27, Woman: 28, Other: 31 }
//
// CSV schema is `case,key,count`; case-2 breakdown keys are `Room<i>/<Category>`.

#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "crowdmr/mapreduce.hpp"

namespace crowdmr {

inline std::string render_case1_text(const Case1Result& r) {
  std::ostringstream os;
  os << ">>Sum: {";
  bool first = true;
  for (auto c : kAllCategories) {
    auto it = r.per_category_totals.find(c);
    os << (first ? " " : ", ") << category_name(c) << " : "
       << (it == r.per_category_totals.end() ? 0 : it->second);
    first = false;
  }
  os << " }\n{";
  first = true;
  for (const auto& [key, n] : r.composite_breakdown) {
    os << (first ? " " : ", ") << composite_key_text(key) << '=' << n;
    first = false;
  }
  os << " }\n";
  return os.str();
}

inline std::string render_case2_text(const Case2Result& r) {
  std::ostringstream os;
  os << ">>Sum: {";
  bool first = true;
  for (const auto& [room, n] : r.per_room_totals) {
    os << (first ? " " : ", ") << "Room" << room.index << " : " << n;
    first = false;
  }
  os << " }\n";
  for (const auto& [room, row] : r.per_room_breakdown) {
    os << room.index << ": {";
    bool f = true;
    for (const auto& [cat, n] : row) {
      os << (f ? " " : ", ") << category_name(cat) << ": " << n;
      f = false;
    }
    os << " }\n";
  }
  return os.str();
}

/// Composite counts summed over committed cycles (anything with a `case1`).
template <typename Range>
ReducedCounts committed_counts(const Range& cycles) {
  ReducedCounts out;
  for (const auto& c : cycles) merge_into(out, c.case1.composite_breakdown);
  return out;
}

inline std::string csv_header() { return "case,key,count\n"; }

inline std::string render_csv_rows(const Case1Result& c1, const Case2Result& c2) {
  std::ostringstream os;
  for (auto c : kAllCategories) {
    auto it = c1.per_category_totals.find(c);
    os << "case1," << category_name(c) << ','
       << (it == c1.per_category_totals.end() ? 0 : it->second) << '\n';
  }
  for (const auto& [key, n] : c1.composite_breakdown) {
    os << "case1," << composite_key_text(key) << ',' << n << '\n';
  }
  for (const auto& [room, n] : c2.per_room_totals) {
    os << "case2,Room" << room.index << ',' << n << '\n';
  }
  for (const auto& [room, row] : c2.per_room_breakdown) {
    for (const auto& [cat, n] : row) {
      os << "case2,Room" << room.index << '/' << category_name(cat) << ',' << n << '\n';
    }
  }
  return os.str();
}

/// An externally supplied total to compare against, keyed by label:
/// a category (`Man`), a room (`Room4`) or a composite key (`Man-room0`).
struct ReferenceValue {
  std::string label;
  Count value = 0;
};

/// One line per reference that disagrees with the computed aggregates. A
/// room mismatch spells out the breakdown that produced the computed total.
inline std::vector<std::string> reference_deviations(const Case1Result& c1,
                                                     const Case2Result& c2,
                                                     const std::vector<ReferenceValue>& refs) {
  std::vector<std::string> notes;
  for (const auto& ref : refs) {
    std::optional<Count> computed;
    std::string detail;
    if (ref.label.rfind("Room", 0) == 0) {
      std::uint64_t idx = 0;
      if (detail::parse_u64(std::string_view(ref.label).substr(4), idx)) {
        RoomId room{static_cast<std::uint32_t>(idx)};
        auto it = c2.per_room_totals.find(room);
        computed = it == c2.per_room_totals.end() ? 0 : it->second;
        if (auto row = c2.per_room_breakdown.find(room); row != c2.per_room_breakdown.end()) {
          std::ostringstream d;
          bool first = true;
          for (const auto& [cat, n] : row->second) {
            d << (first ? "" : " + ") << n;
            first = false;
          }
          detail = " = " + d.str();
        }
      }
    } else if (ref.label.find("-room") != std::string::npos) {
      try {
        auto key = parse_composite_key(ref.label);
        auto it = c1.composite_breakdown.find(key);
        computed = it == c1.composite_breakdown.end() ? 0 : it->second;
      } catch (const MalformedKey&) {
      }
    } else {
      try {
        auto cat = parse_category(ref.label);
        auto it = c1.per_category_totals.find(cat);
        computed = it == c1.per_category_totals.end() ? 0 : it->second;
      } catch (const UnknownCategory&) {
      }
    }
    if (!computed) {
      notes.push_back("note: reference label '" + ref.label + "' matches no aggregate");
    } else if (*computed != ref.value) {
      notes.push_back("note: " + ref.label + " computed " + std::to_string(*computed) + detail +
                      ", reference prints " + std::to_string(ref.value) +
                      "; the computed value is reported");
    }
  }
  return notes;
}

}  // namespace crowdmr
