#pragma once

// Scenario files. Line-oriented, `#` starts a comment, blank lines ignored.
//
//   [scenario]   id, seed, rooms, tour, duration
//   [cluster]    nodes, initial_master, heartbeat_period, heartbeat_timeout,
//                check_period, cycle_period, reducers, base_port
//   [visitors]   total, Man.room0=27 (one per matrix cell), room_weights,
//                category_weights (Man,Woman,Other)
//   [faults]     at=30s crash=0 | recover=0 | partition=0,1|2,3 | heal |
//                droprate=all:0.3 | droprate=0-1:0.5
//   [link]       base_delay, jitter, drop, duplicate
//   [reference]  Man=157, Room4=92, Man-room0=27 ...
//
// Durations take a unit suffix: ms, s or m (bare numbers are milliseconds).

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "crowdmr/simnet.hpp"

namespace crowdmr {

class ScenarioParseError : public Error {
 public:
  ScenarioParseError(std::size_t line, std::string field, const std::string& why)
      : Error("line " + std::to_string(line) + ": " + (field.empty() ? "" : field + ": ") + why),
        line_(line),
        field_(std::move(field)) {}

  std::size_t line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  auto ws = [](char c) { return c == ' ' || c == '\t' || c == '\r'; };
  while (!s.empty() && ws(s.front())) s.remove_prefix(1);
  while (!s.empty() && ws(s.back())) s.remove_suffix(1);
  return s;
}

inline std::optional<Millis> parse_duration(std::string_view s) {
  std::uint64_t scale = 1;
  if (s.size() > 2 && s.substr(s.size() - 2) == "ms") {
    s.remove_suffix(2);
  } else if (!s.empty() && s.back() == 's') {
    scale = 1000;
    s.remove_suffix(1);
  } else if (!s.empty() && s.back() == 'm') {
    scale = 60000;
    s.remove_suffix(1);
  } else {
    return std::nullopt;
  }
  std::uint64_t v = 0;
  if (!parse_u64(s, v) || v > (UINT64_MAX / 2) / scale) return std::nullopt;
  return Millis{static_cast<Millis::rep>(v * scale)};
}

inline std::optional<double> parse_probability(std::string_view s) {
  if (s.empty() || s.size() > 32) return std::nullopt;
  std::string buf(s);
  char* end = nullptr;
  double v = std::strtod(buf.c_str(), &end);
  if (end != buf.c_str() + buf.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    auto at = s.find(sep, pos);
    out.push_back(trim(s.substr(pos, at == std::string_view::npos ? s.npos : at - pos)));
    if (at == std::string_view::npos) break;
    pos = at + 1;
  }
  return out;
}

class ScenarioParser {
 public:
  ScenarioSpec parse(std::string_view text) {
    std::size_t lineno = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      auto nl = text.find('\n', pos);
      auto raw = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
      pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
      ++lineno;
      line_ = lineno;
      if (auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
      auto line = trim(raw);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') fail("", "unterminated section header");
        section_ = std::string(trim(line.substr(1, line.size() - 2)));
        static const std::set<std::string> kKnown{"scenario", "cluster", "visitors",
                                                  "faults",   "link",    "reference"};
        if (!kKnown.count(section_)) fail(section_, "unknown section");
        continue;
      }
      if (section_.empty()) fail("", "entry outside any section");
      if (section_ == "faults") {
        fault_line(line);
        continue;
      }
      auto eq = line.find('=');
      if (eq == std::string_view::npos) fail(std::string(line), "expected key = value");
      auto key = std::string(trim(line.substr(0, eq)));
      auto value = trim(line.substr(eq + 1));
      if (key.empty()) fail("", "empty key");
      if (!seen_.insert(section_ + "." + key).second) fail(key, "duplicate entry");
      entry(key, value);
    }
    finish();
    return spec_;
  }

 private:
  [[noreturn]] void fail(const std::string& field, const std::string& why) const {
    throw ScenarioParseError(line_, field, why);
  }

  std::uint64_t u64(const std::string& key, std::string_view v) const {
    std::uint64_t out = 0;
    if (!parse_u64(v, out)) fail(key, "expected a non-negative integer, got '" + std::string(v) + "'");
    return out;
  }

  std::uint32_t u32(const std::string& key, std::string_view v) const {
    auto out = u64(key, v);
    if (out > UINT32_MAX) fail(key, "value out of range");
    return static_cast<std::uint32_t>(out);
  }

  Millis duration(const std::string& key, std::string_view v) const {
    auto d = parse_duration(v);
    if (!d) fail(key, "expected a duration such as 500ms, 30s or 15m, got '" + std::string(v) + "'");
    return *d;
  }

  double probability(const std::string& key, std::string_view v) const {
    auto p = parse_probability(v);
    if (!p || *p < 0.0 || *p > 1.0) fail(key, "expected a probability in [0,1]");
    return *p;
  }

  std::vector<double> weights(const std::string& key, std::string_view v) const {
    std::vector<double> out;
    for (auto item : split(v, ',')) {
      auto w = parse_probability(item);
      if (!w || *w < 0.0) fail(key, "weights must be non-negative numbers");
      out.push_back(*w);
    }
    return out;
  }

  NodeId node(const std::string& key, std::string_view v) const { return NodeId{u32(key, v)}; }

  std::set<NodeId> node_set(const std::string& key, std::string_view v) const {
    std::set<NodeId> out;
    for (auto item : split(v, ',')) {
      if (!item.empty()) out.insert(node(key, item));
    }
    if (out.empty()) fail(key, "empty node set");
    return out;
  }

  void entry(const std::string& key, std::string_view v) {
    if (section_ == "scenario") {
      if (key == "id") {
        spec_.id = std::string(v);
        if (!valid_scenario_id(spec_.id)) fail(key, "ids use letters, digits, '-', '_' and '.'");
      } else if (key == "seed") {
        spec_.seed = u64(key, v);
      } else if (key == "rooms") {
        spec_.rooms = u32(key, v);
        rooms_given_ = true;
      } else if (key == "tour") {
        spec_.tour = duration(key, v);
        tour_given_ = true;
      } else if (key == "duration") {
        spec_.duration = duration(key, v);
        duration_given_ = true;
      } else {
        fail(key, "unknown key");
      }
    } else if (section_ == "cluster") {
      auto& c = spec_.cluster;
      if (key == "nodes") {
        nodes_ = u32(key, v);
        if (nodes_ == 0) fail(key, "a cluster needs at least one node");
      } else if (key == "initial_master") {
        initial_master_ = node(key, v);
      } else if (key == "heartbeat_period") {
        c.heartbeat_period = duration(key, v);
      } else if (key == "heartbeat_timeout") {
        c.heartbeat_timeout = duration(key, v);
      } else if (key == "check_period") {
        c.check_period = duration(key, v);
      } else if (key == "cycle_period") {
        c.cycle_period = duration(key, v);
        cycle_given_ = true;
      } else if (key == "reducers") {
        c.reducer_count = u32(key, v);
      } else if (key == "base_port") {
        auto p = u64(key, v);
        if (p == 0 || p > 65535 - 256) fail(key, "port out of range");
        base_port_ = static_cast<std::uint16_t>(p);
      } else {
        fail(key, "unknown key");
      }
    } else if (section_ == "visitors") {
      if (key == "total") {
        spec_.visitors = u64(key, v);
      } else if (key == "room_weights") {
        spec_.room_weights = weights(key, v);
      } else if (key == "category_weights") {
        spec_.category_weights = weights(key, v);
      } else if (auto dot = key.find('.'); dot != std::string::npos) {
        CompositeKey ck;
        try {
          ck.category = parse_category(std::string_view(key).substr(0, dot));
        } catch (const UnknownCategory&) {
          fail(key, "unknown category");
        }
        auto room = std::string_view(key).substr(dot + 1);
        std::uint64_t idx = 0;
        if (room.rfind("room", 0) != 0 || !parse_u64(room.substr(4), idx) || idx > 63) {
          fail(key, "matrix cells are written Category.roomN");
        }
        ck.room = RoomId{static_cast<std::uint32_t>(idx)};
        spec_.matrix[ck] = u64(key, v);
      } else {
        fail(key, "unknown key");
      }
    } else if (section_ == "link") {
      auto& l = spec_.link;
      if (key == "base_delay") {
        l.base_delay = duration(key, v);
      } else if (key == "jitter") {
        l.jitter = duration(key, v);
      } else if (key == "drop") {
        l.drop_probability = probability(key, v);
      } else if (key == "duplicate") {
        l.duplicate_probability = probability(key, v);
      } else {
        fail(key, "unknown key");
      }
    } else if (section_ == "reference") {
      spec_.references.push_back({key, u64(key, v)});
    }
  }

  void fault_line(std::string_view line) {
    FaultEvent f;
    bool have_at = false;
    bool have_kind = false;
    std::istringstream words{std::string(line)};
    std::string word;
    while (words >> word) {
      auto eq = word.find('=');
      auto key = word.substr(0, eq);
      std::string_view v = eq == std::string::npos ? std::string_view{}
                                                   : std::string_view(word).substr(eq + 1);
      if (key == "at") {
        f.at = duration(key, v);
        have_at = true;
        continue;
      }
      if (have_kind) fail(key, "one fault per line");
      have_kind = true;
      if (key == "crash") {
        f.kind = fault::CrashNode{node(key, v)};
      } else if (key == "recover") {
        f.kind = fault::RecoverNode{node(key, v)};
      } else if (key == "heal") {
        if (eq != std::string::npos) fail(key, "heal takes no value");
        f.kind = fault::Heal{};
      } else if (key == "partition") {
        auto bar = v.find('|');
        if (bar == std::string_view::npos) fail(key, "expected partition=A|B");
        f.kind = fault::Partition{node_set(key, v.substr(0, bar)), node_set(key, v.substr(bar + 1))};
      } else if (key == "droprate") {
        auto colon = v.rfind(':');
        if (colon == std::string_view::npos) fail(key, "expected droprate=all:P or droprate=A-B:P");
        fault::DropRate d;
        d.probability = probability(key, v.substr(colon + 1));
        auto target = v.substr(0, colon);
        if (target != "all") {
          auto dash = target.find('-');
          if (dash == std::string_view::npos) fail(key, "link is written A-B");
          d.link = std::make_pair(node(key, target.substr(0, dash)), node(key, target.substr(dash + 1)));
        }
        f.kind = d;
      } else {
        fail(key, "unknown fault kind");
      }
    }
    if (!have_at) fail("at", "fault needs at=<time>");
    if (!have_kind) fail("", "fault needs a kind");
    spec_.faults.push_back(std::move(f));
  }

  void finish() {
    line_ = 0;
    auto cfg = ClusterConfig::local(nodes_, base_port_);
    auto& c = spec_.cluster;
    cfg.initial_master = initial_master_;
    cfg.heartbeat_period = c.heartbeat_period;
    cfg.heartbeat_timeout = c.heartbeat_timeout;
    cfg.check_period = c.check_period;
    cfg.cycle_period = c.cycle_period;
    cfg.reducer_count = c.reducer_count;
    c = cfg;
    if (!rooms_given_) {
      std::uint32_t max_room = 0;
      for (const auto& [k, n] : spec_.matrix) max_room = std::max(max_room, k.room.index + 1);
      spec_.rooms = std::max<std::uint32_t>(1, max_room);
    }
    // One cycle per tour unless told otherwise, with room for a few retries.
    if (!tour_given_ && cycle_given_) spec_.tour = c.cycle_period;
    if (!cycle_given_) c.cycle_period = spec_.tour;
    if (!duration_given_) spec_.duration = spec_.tour + c.cycle_period;
    try {
      spec_.validate();
    } catch (const Error& e) {
      fail("", e.what());
    }
  }

  ScenarioSpec spec_;
  std::string section_;
  std::set<std::string> seen_;
  std::size_t line_ = 0;
  std::uint32_t nodes_ = 1;
  NodeId initial_master_{0};
  std::uint16_t base_port_ = 47000;
  bool rooms_given_ = false;
  bool tour_given_ = false;
  bool duration_given_ = false;
  bool cycle_given_ = false;
};

}  // namespace detail

inline ScenarioSpec parse_scenario(std::string_view text) {
  return detail::ScenarioParser{}.parse(text);
}

inline ScenarioSpec load_scenario(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ScenarioParseError(0, "", "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str());
}

}  // namespace crowdmr
