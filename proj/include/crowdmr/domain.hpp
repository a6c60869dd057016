#pragma once

#include <array>
#include <chrono>
#include <compare>
#include <cstdint>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace crowdmr {

// Base of every error this library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnknownCategory : public Error {
 public:
  explicit UnknownCategory(std::string_view label)
      : Error("unknown tag category '" + std::string(label) + "'") {}
};

class MalformedKey : public Error {
 public:
  explicit MalformedKey(std::string_view text)
      : Error("malformed composite key '" + std::string(text) + "'") {}
};

/// Simulated or wall-clock time, in milliseconds since scenario start.
using Millis = std::chrono::milliseconds;

/// The three RFID tag kinds handed out at the entrance. Animals (e.g.
/// service dogs) carry the Other tag.
enum class TagCategory : std::uint8_t { Man = 0, Woman = 1, Other = 2 };

inline constexpr std::array<TagCategory, 3> kAllCategories = {
    TagCategory::Man, TagCategory::Woman, TagCategory::Other};

inline constexpr std::string_view category_name(TagCategory c) {
  switch (c) {
    case TagCategory::Man:
      return "Man";
    case TagCategory::Woman:
      return "Woman";
    case TagCategory::Other:
      return "Other";
  }
  return "?";
}

namespace detail {

inline bool iequals(std::string_view a, std::string_view b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    char x = a[i], y = b[i];
    if (x >= 'A' && x <= 'Z') x = static_cast<char>(x - 'A' + 'a');
    if (y >= 'A' && y <= 'Z') y = static_cast<char>(y - 'A' + 'a');
    if (x != y) return false;
  }
  return true;
}

// Strict unsigned decimal; no sign, no whitespace, no overflow.
inline bool parse_u64(std::string_view s, std::uint64_t& out) {
  if (s.empty()) return false;
  std::uint64_t v = 0;
  for (char ch : s) {
    if (ch < '0' || ch > '9') return false;
    auto d = static_cast<std::uint64_t>(ch - '0');
    if (v > (UINT64_MAX - d) / 10) return false;
    v = v * 10 + d;
  }
  out = v;
  return true;
}

}  // namespace detail

/// Case-insensitive match against Man / Woman / Other.
inline TagCategory parse_category(std::string_view label) {
  for (auto c : kAllCategories) {
    if (detail::iequals(label, category_name(c))) return c;
  }
  throw UnknownCategory(label);
}

inline std::ostream& operator<<(std::ostream& os, TagCategory c) {
  return os << category_name(c);
}

struct NodeId {
  std::uint32_t value = 0;
  friend constexpr auto operator<=>(NodeId, NodeId) = default;
};

struct RoomId {
  std::uint32_t index = 0;
  friend constexpr auto operator<=>(RoomId, RoomId) = default;
};

inline std::ostream& operator<<(std::ostream& os, NodeId n) { return os << n.value; }
inline std::ostream& operator<<(std::ostream& os, RoomId r) { return os << "room" << r.index; }

/// One simulated RFID read.
struct VisitorEvent {
  std::uint64_t event_id = 0;
  TagCategory category = TagCategory::Man;
  RoomId room;
  Millis timestamp{0};

  friend bool operator==(const VisitorEvent&, const VisitorEvent&) = default;
};

/// (category, room) counting key, rendered as `Woman-room0`.
struct CompositeKey {
  TagCategory category = TagCategory::Man;
  RoomId room;

  friend constexpr auto operator<=>(const CompositeKey&, const CompositeKey&) = default;
};

inline std::string composite_key_text(const CompositeKey& key) {
  std::string out(category_name(key.category));
  out += "-room";
  out += std::to_string(key.room.index);
  return out;
}

inline CompositeKey parse_composite_key(std::string_view text) {
  auto dash = text.find("-room");
  if (dash == std::string_view::npos) throw MalformedKey(text);
  CompositeKey key;
  try {
    key.category = parse_category(text.substr(0, dash));
  } catch (const UnknownCategory&) {
    throw MalformedKey(text);
  }
  auto digits = text.substr(dash + 5);
  std::uint64_t idx = 0;
  if (!detail::parse_u64(digits, idx) || idx > UINT32_MAX ||
      (digits.size() > 1 && digits.front() == '0')) {
    throw MalformedKey(text);
  }
  key.room = RoomId{static_cast<std::uint32_t>(idx)};
  return key;
}

inline std::ostream& operator<<(std::ostream& os, const CompositeKey& k) {
  return os << composite_key_text(k);
}

}  // namespace crowdmr

template <>
struct std::hash<crowdmr::NodeId> {
  std::size_t operator()(crowdmr::NodeId n) const noexcept { return n.value; }
};
