#pragma once

// Datagram frames. One UTF-8 line per datagram:
//
//   CMR1 <TYPE> <sender> <term> <seq> <k=v;k=v...>\n
//
// An empty payload is rendered as `-`. Keys and values are percent-escaped
// (%20 space, %0A newline, %25 percent, %3B ';', %3D '=', plus any other
// control byte) so the frame stays a single space-delimited line. Frames are
// capped at 1200 bytes.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "crowdmr/domain.hpp"
#include "crowdmr/membership.hpp"

namespace crowdmr {

inline constexpr std::string_view kWireMagic = "CMR1";
inline constexpr std::size_t kMaxFrameBytes = 1200;
inline constexpr std::uint64_t kDedupWindow = 1024;

enum class MsgType : std::uint8_t {
  HELLO,
  HB,
  HB_ACK,
  LEADER_CLAIM,
  LEADER_ACK,
  LEADER_ANNOUNCE,
  ABDICATE,
  TASK,
  MAP_OUT,
  RED_OUT,
  CYCLE_DONE,
};

inline constexpr std::array<std::pair<MsgType, std::string_view>, 11> kMsgTypeNames = {{
    {MsgType::HELLO, "HELLO"},
    {MsgType::HB, "HB"},
    {MsgType::HB_ACK, "HB_ACK"},
    {MsgType::LEADER_CLAIM, "LEADER_CLAIM"},
    {MsgType::LEADER_ACK, "LEADER_ACK"},
    {MsgType::LEADER_ANNOUNCE, "LEADER_ANNOUNCE"},
    {MsgType::ABDICATE, "ABDICATE"},
    {MsgType::TASK, "TASK"},
    {MsgType::MAP_OUT, "MAP_OUT"},
    {MsgType::RED_OUT, "RED_OUT"},
    {MsgType::CYCLE_DONE, "CYCLE_DONE"},
}};

inline constexpr std::string_view msg_type_name(MsgType t) {
  for (const auto& [type, name] : kMsgTypeNames) {
    if (type == t) return name;
  }
  return "?";
}

inline std::optional<MsgType> parse_msg_type(std::string_view s) {
  for (const auto& [type, name] : kMsgTypeNames) {
    if (name == s) return type;
  }
  return std::nullopt;
}

/// Frames that carry counting data rather than control traffic.
constexpr bool is_data_message(MsgType t) {
  return t == MsgType::MAP_OUT || t == MsgType::RED_OUT;
}

class WireError : public Error {
 public:
  enum class Code : std::uint8_t { BadMagic, UnknownType, MalformedField, OversizeMessage };

  WireError(Code code, std::string field, const std::string& what)
      : Error(what), code_(code), field_(std::move(field)) {}

  Code code() const { return code_; }
  // Name of the offending field: magic, type, sender, term, seq, payload, frame.
  const std::string& field() const { return field_; }

 private:
  Code code_;
  std::string field_;
};

using Payload = std::vector<std::pair<std::string, std::string>>;

struct Message {
  MsgType type = MsgType::HB;
  NodeId sender;
  Term term;
  std::uint64_t seq = 0;
  Payload payload;

  /// First value stored under `key`.
  std::optional<std::string_view> get(std::string_view key) const {
    for (const auto& [k, v] : payload) {
      if (k == key) return v;
    }
    return std::nullopt;
  }

  friend bool operator==(const Message&, const Message&) = default;
};

namespace detail {

inline bool needs_escape(unsigned char c) {
  return c == ' ' || c == '\n' || c == '%' || c == ';' || c == '=' || c < 0x20 || c == 0x7f;
}

inline void append_escaped(std::string& out, std::string_view raw) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  for (unsigned char c : raw) {
    if (needs_escape(c)) {
      out += '%';
      out += kHex[c >> 4];
      out += kHex[c & 0xF];
    } else {
      out += static_cast<char>(c);
    }
  }
}

inline int hex_digit(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  return -1;
}

inline std::optional<std::string> unescape(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '%') {
      out += s[i];
      continue;
    }
    if (i + 2 >= s.size()) return std::nullopt;
    int hi = hex_digit(s[i + 1]);
    int lo = hex_digit(s[i + 2]);
    if (hi < 0 || lo < 0) return std::nullopt;
    out += static_cast<char>((hi << 4) | lo);
    i += 2;
  }
  return out;
}

inline std::string encode_payload(const Payload& payload) {
  if (payload.empty()) return "-";
  std::string out;
  for (std::size_t i = 0; i < payload.size(); ++i) {
    if (i) out += ';';
    append_escaped(out, payload[i].first);
    out += '=';
    append_escaped(out, payload[i].second);
  }
  return out;
}

}  // namespace detail

/// Renders the frame without checking the size budget.
inline std::string encode_unchecked(const Message& msg) {
  std::string out;
  out.reserve(64);
  out += kWireMagic;
  out += ' ';
  out += msg_type_name(msg.type);
  out += ' ';
  out += std::to_string(msg.sender.value);
  out += ' ';
  out += std::to_string(msg.term.number);
  out += ' ';
  out += std::to_string(msg.seq);
  out += ' ';
  out += detail::encode_payload(msg.payload);
  out += '\n';
  return out;
}

inline std::string encode(const Message& msg) {
  auto out = encode_unchecked(msg);
  if (out.size() > kMaxFrameBytes) {
    throw WireError(WireError::Code::OversizeMessage, "frame",
                    std::string(msg_type_name(msg.type)) + " frame is " +
                        std::to_string(out.size()) + " bytes, budget is " +
                        std::to_string(kMaxFrameBytes));
  }
  return out;
}

inline Message decode(std::string_view line) {
  auto malformed = [](const char* field, std::string_view why) {
    return WireError(WireError::Code::MalformedField, field,
                     std::string("malformed ") + field + ": " + std::string(why));
  };
  if (line.size() > kMaxFrameBytes) {
    throw WireError(WireError::Code::OversizeMessage, "frame", "frame exceeds 1200 bytes");
  }
  if (!line.empty() && line.back() == '\n') line.remove_suffix(1);

  std::array<std::string_view, 6> fields{};
  std::size_t n = 0;
  std::size_t start = 0;
  while (n < 6) {
    auto sp = n < 5 ? line.find(' ', start) : std::string_view::npos;
    if (sp == std::string_view::npos) {
      fields[n++] = line.substr(start);
      break;
    }
    fields[n++] = line.substr(start, sp - start);
    start = sp + 1;
  }

  if (fields[0] != kWireMagic) {
    throw WireError(WireError::Code::BadMagic, "magic",
                    "bad magic '" + std::string(fields[0].substr(0, 8)) + "'");
  }
  static constexpr const char* kNames[] = {"magic", "type", "sender", "term", "seq", "payload"};
  if (n < 6) throw malformed(kNames[n], "missing");

  Message msg;
  auto type = parse_msg_type(fields[1]);
  if (!type) {
    throw WireError(WireError::Code::UnknownType, "type",
                    "unknown message type '" + std::string(fields[1].substr(0, 32)) + "'");
  }
  msg.type = *type;

  std::uint64_t v = 0;
  if (!detail::parse_u64(fields[2], v) || v > UINT32_MAX) throw malformed("sender", fields[2]);
  msg.sender = NodeId{static_cast<std::uint32_t>(v)};
  if (!detail::parse_u64(fields[3], v)) throw malformed("term", fields[3]);
  msg.term = Term{v};
  if (!detail::parse_u64(fields[4], v)) throw malformed("seq", fields[4]);
  msg.seq = v;

  auto body = fields[5];
  if (body.empty()) throw malformed("payload", "empty");
  if (body.find(' ') != std::string_view::npos) throw malformed("payload", "embedded space");
  if (body != "-") {
    std::size_t pos = 0;
    while (true) {
      auto semi = body.find(';', pos);
      auto pair = body.substr(pos, semi == std::string_view::npos ? body.npos : semi - pos);
      auto eq = pair.find('=');
      if (eq == std::string_view::npos) throw malformed("payload", "pair without '='");
      auto key = detail::unescape(pair.substr(0, eq));
      auto val = detail::unescape(pair.substr(eq + 1));
      if (!key || !val) throw malformed("payload", "bad percent escape");
      msg.payload.emplace_back(std::move(*key), std::move(*val));
      if (semi == std::string_view::npos) break;
      pos = semi + 1;
    }
  }
  return msg;
}

/// Per-sender duplicate filter: everything below `floor` has been seen, plus
/// a sparse set of out-of-order sequence numbers at or above it. Sequence
/// numbers more than W behind the newest one are treated as already seen.
class DedupWindow {
 public:
  explicit DedupWindow(std::uint64_t window = kDedupWindow) : window_(window) {}

  /// True when (sender, seq) has not been seen before; records it.
  bool check(NodeId sender, std::uint64_t seq) {
    auto& st = senders_[sender];
    if (seq < st.floor) return false;
    if (!st.seen.insert(seq).second) return false;
    if (seq >= st.floor + window_) {
      st.floor = seq - window_ + 1;
      st.seen.erase(st.seen.begin(), st.seen.lower_bound(st.floor));
    }
    while (!st.seen.empty() && *st.seen.begin() == st.floor) {
      st.seen.erase(st.seen.begin());
      ++st.floor;
    }
    return true;
  }

  std::uint64_t window() const { return window_; }

  std::size_t tracked(NodeId sender) const {
    auto it = senders_.find(sender);
    return it == senders_.end() ? 0 : it->second.seen.size();
  }

 private:
  struct PerSender {
    std::uint64_t floor = 0;
    std::set<std::uint64_t> seen;
  };
  std::uint64_t window_;
  std::map<NodeId, PerSender> senders_;
};

struct DedupResult {
  DedupWindow window;
  bool fresh = false;
};

inline DedupResult check_duplicate(DedupWindow window, NodeId sender, std::uint64_t seq) {
  bool fresh = window.check(sender, seq);
  return {std::move(window), fresh};
}

}  // namespace crowdmr
