#pragma once

// Append-only persistence of committed cycle results, one scenario per log.
//
// Record line, version 1 (tab separated, newline terminated):
//
//   CMRLOG1 <scenario> <cycle> <term> <master> <ingest_ms> <rooms> <counts> <check>
//
//   rooms   comma list of room indices whose counts the record covers, or `-`
//   counts  comma list of `Man-room0=27` composite entries, or `-`
//   check   16 hex digits, FNV-1a 64 of every byte before the final tab
//
// A line without its newline or with a bad check is a torn write and is
// skipped on read. Both aggregate views are rebuilt from the composite counts.

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "crowdmr/mapreduce.hpp"
#include "crowdmr/membership.hpp"

namespace crowdmr {

class SinkUnavailable : public Error {
 public:
  using Error::Error;
};

class UnknownScenario : public Error {
 public:
  explicit UnknownScenario(const std::string& id) : Error("unknown scenario '" + id + "'") {}
};

/// A newer master has already written to this scenario.
class StaleTerm : public Error {
 public:
  StaleTerm(Term attempted, Term newest)
      : Error("term " + std::to_string(attempted.number) + " is behind stored term " +
              std::to_string(newest.number)),
        newest_(newest) {}
  Term newest() const { return newest_; }

 private:
  Term newest_;
};

/// The cycle was already committed under a different term.
class CycleConflict : public Error {
 public:
  CycleConflict(std::uint64_t cycle, Term stored)
      : Error("cycle " + std::to_string(cycle) + " already committed in term " +
              std::to_string(stored.number)) {}
};

class BadRecord : public Error {
 public:
  using Error::Error;
};

struct MeasurementRecord {
  std::string scenario_id;
  std::uint64_t cycle_index = 0;
  NodeId master;
  Term term;
  Case1Result case1;
  Case2Result case2;
  std::vector<RoomId> rooms;
  Millis ingest{0};

  friend bool operator==(const MeasurementRecord&, const MeasurementRecord&) = default;
};

enum class AppendStatus { Appended, Duplicate };

inline bool valid_scenario_id(std::string_view id) {
  if (id.empty() || id.size() > 128) return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
           c == '_' || c == '-' || c == '.';
  });
}

inline std::string serialize_record(const MeasurementRecord& r) {
  std::ostringstream os;
  os << "CMRLOG1\t" << r.scenario_id << '\t' << r.cycle_index << '\t' << r.term.number << '\t'
     << r.master.value << '\t' << r.ingest.count() << '\t';
  if (r.rooms.empty()) os << '-';
  for (std::size_t i = 0; i < r.rooms.size(); ++i) os << (i ? "," : "") << r.rooms[i].index;
  os << '\t';
  if (r.case1.composite_breakdown.empty()) os << '-';
  bool first = true;
  for (const auto& [key, n] : r.case1.composite_breakdown) {
    os << (first ? "" : ",") << composite_key_text(key) << '=' << n;
    first = false;
  }
  auto body = os.str();
  char check[17];
  std::snprintf(check, sizeof check, "%016llx",
                static_cast<unsigned long long>(fnv1a64(body)));
  return body + '\t' + check + '\n';
}

/// Parses one complete line (newline optional). Throws BadRecord.
inline MeasurementRecord parse_record(std::string_view line) {
  if (!line.empty() && line.back() == '\n') line.remove_suffix(1);
  auto last_tab = line.rfind('\t');
  if (last_tab == std::string_view::npos) throw BadRecord("no check field");
  auto body = line.substr(0, last_tab);
  auto check = line.substr(last_tab + 1);
  char want[17];
  std::snprintf(want, sizeof want, "%016llx", static_cast<unsigned long long>(fnv1a64(body)));
  if (check != want) throw BadRecord("check mismatch");

  std::vector<std::string_view> f;
  std::size_t pos = 0;
  while (true) {
    auto tab = body.find('\t', pos);
    f.push_back(body.substr(pos, tab == std::string_view::npos ? body.npos : tab - pos));
    if (tab == std::string_view::npos) break;
    pos = tab + 1;
  }
  if (f.size() != 8 || f[0] != "CMRLOG1") throw BadRecord("unsupported record layout");

  MeasurementRecord r;
  r.scenario_id = std::string(f[1]);
  std::uint64_t v = 0;
  if (!detail::parse_u64(f[2], r.cycle_index)) throw BadRecord("cycle");
  if (!detail::parse_u64(f[3], v)) throw BadRecord("term");
  r.term = Term{v};
  if (!detail::parse_u64(f[4], v) || v > UINT32_MAX) throw BadRecord("master");
  r.master = NodeId{static_cast<std::uint32_t>(v)};
  if (!detail::parse_u64(f[5], v)) throw BadRecord("ingest");
  r.ingest = Millis{static_cast<Millis::rep>(v)};

  auto split_commas = [](std::string_view s) {
    std::vector<std::string_view> out;
    if (s == "-") return out;
    std::size_t p = 0;
    while (true) {
      auto c = s.find(',', p);
      out.push_back(s.substr(p, c == std::string_view::npos ? s.npos : c - p));
      if (c == std::string_view::npos) break;
      p = c + 1;
    }
    return out;
  };
  for (auto room : split_commas(f[6])) {
    if (!detail::parse_u64(room, v) || v > UINT32_MAX) throw BadRecord("rooms");
    r.rooms.push_back(RoomId{static_cast<std::uint32_t>(v)});
  }
  ReducedCounts counts;
  for (auto entry : split_commas(f[7])) {
    auto eq = entry.find('=');
    if (eq == std::string_view::npos) throw BadRecord("counts");
    std::uint64_t n = 0;
    if (!detail::parse_u64(entry.substr(eq + 1), n)) throw BadRecord("counts");
    try {
      counts[parse_composite_key(entry.substr(0, eq))] = n;
    } catch (const MalformedKey&) {
      throw BadRecord("counts");
    }
  }
  r.case1 = aggregate_case1(counts);
  r.case2 = aggregate_case2(counts);
  return r;
}

/// Persistence backend for committed cycles. The master is the only writer
/// of a scenario; any node may read.
class ReportSink {
 public:
  virtual ~ReportSink() = default;

  /// Creates the scenario if absent. Existing records are kept.
  virtual void open_scenario(const std::string& scenario_id) = 0;

  /// Same (scenario, cycle, term) again is a no-op. A record from an older
  /// term than anything stored throws StaleTerm; a cycle already stored
  /// under another term throws CycleConflict.
  virtual AppendStatus append_report(const MeasurementRecord& record) = 0;

  /// All records for the scenario in (cycle, term) order.
  virtual std::vector<MeasurementRecord> export_records(const std::string& scenario_id) const = 0;
};

namespace detail {

inline AppendStatus check_append(const std::vector<MeasurementRecord>& existing,
                                 const MeasurementRecord& rec) {
  Term newest{0};
  for (const auto& r : existing) {
    if (r.cycle_index == rec.cycle_index) {
      if (r.term == rec.term) return AppendStatus::Duplicate;
      throw CycleConflict(rec.cycle_index, r.term);
    }
    newest = std::max(newest, r.term);
  }
  if (rec.term < newest) throw StaleTerm(rec.term, newest);
  return AppendStatus::Appended;
}

inline void sort_records(std::vector<MeasurementRecord>& recs) {
  std::stable_sort(recs.begin(), recs.end(), [](const auto& a, const auto& b) {
    return std::tie(a.cycle_index, a.term) < std::tie(b.cycle_index, b.term);
  });
}

}  // namespace detail

class MemorySink final : public ReportSink {
 public:
  void open_scenario(const std::string& id) override {
    std::lock_guard lock(mu_);
    if (!available_) throw SinkUnavailable("memory sink offline");
    logs_[id];
  }

  AppendStatus append_report(const MeasurementRecord& record) override {
    std::lock_guard lock(mu_);
    if (!available_) throw SinkUnavailable("memory sink offline");
    auto& log = logs_[record.scenario_id];
    auto status = detail::check_append(log, record);
    if (status == AppendStatus::Appended) {
      log.push_back(record);
      lines_[record.scenario_id] += serialize_record(record);
    }
    return status;
  }

  std::vector<MeasurementRecord> export_records(const std::string& id) const override {
    std::lock_guard lock(mu_);
    if (!available_) throw SinkUnavailable("memory sink offline");
    auto it = logs_.find(id);
    if (it == logs_.end()) throw UnknownScenario(id);
    auto out = it->second;
    detail::sort_records(out);
    return out;
  }

  /// The bytes a file sink would hold for this scenario.
  std::string log_text(const std::string& id) const {
    std::lock_guard lock(mu_);
    auto it = lines_.find(id);
    return it == lines_.end() ? std::string() : it->second;
  }

  void set_available(bool up) {
    std::lock_guard lock(mu_);
    available_ = up;
  }

 private:
  mutable std::mutex mu_;
  bool available_ = true;
  std::map<std::string, std::vector<MeasurementRecord>> logs_;
  std::map<std::string, std::string> lines_;
};

/// One `<scenario>.log` file per scenario under a directory. Each record is
/// a single O_APPEND write followed by fsync.
class FileSink final : public ReportSink {
 public:
  explicit FileSink(std::filesystem::path dir, bool sync = true)
      : dir_(std::move(dir)), sync_(sync) {}

  std::filesystem::path path_for(const std::string& id) const { return dir_ / (id + ".log"); }

  void open_scenario(const std::string& id) override {
    if (!valid_scenario_id(id)) throw SinkUnavailable("invalid scenario id '" + id + "'");
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    int fd = ::open(path_for(id).c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd < 0) throw SinkUnavailable(path_for(id).string() + ": " + std::strerror(errno));
    ::close(fd);
  }

  AppendStatus append_report(const MeasurementRecord& record) override {
    std::lock_guard lock(mu_);
    if (!valid_scenario_id(record.scenario_id)) {
      throw SinkUnavailable("invalid scenario id '" + record.scenario_id + "'");
    }
    std::vector<MeasurementRecord> existing;
    if (std::filesystem::exists(path_for(record.scenario_id))) {
      existing = read_file(path_for(record.scenario_id));
    }
    auto status = detail::check_append(existing, record);
    if (status == AppendStatus::Duplicate) return status;

    auto line = serialize_record(record);
    int fd = ::open(path_for(record.scenario_id).c_str(),
                    O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd < 0) throw SinkUnavailable(std::strerror(errno));
    auto n = ::write(fd, line.data(), line.size());
    bool ok = n == static_cast<ssize_t>(line.size()) && (!sync_ || ::fsync(fd) == 0);
    ::close(fd);
    if (!ok) throw SinkUnavailable("short write to " + path_for(record.scenario_id).string());
    return status;
  }

  std::vector<MeasurementRecord> export_records(const std::string& id) const override {
    auto path = path_for(id);
    if (!valid_scenario_id(id) || !std::filesystem::exists(path)) throw UnknownScenario(id);
    auto recs = read_file(path);
    detail::sort_records(recs);
    return recs;
  }

  /// Reads any log file; torn or corrupt lines are skipped.
  static std::vector<MeasurementRecord> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw SinkUnavailable("cannot read " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::vector<MeasurementRecord> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
      auto nl = text.find('\n', pos);
      if (nl == std::string::npos) break;  // torn tail
      try {
        out.push_back(parse_record(std::string_view(text).substr(pos, nl - pos)));
      } catch (const BadRecord&) {
      }
      pos = nl + 1;
    }
    return out;
  }

 private:
  std::filesystem::path dir_;
  bool sync_;
  std::mutex mu_;
};

inline AppendStatus append_report(ReportSink& sink, const MeasurementRecord& record) {
  return sink.append_report(record);
}

inline std::vector<MeasurementRecord> export_records(const ReportSink& sink,
                                                     const std::string& scenario_id) {
  return sink.export_records(scenario_id);
}

/// What a new master needs from the log to continue without checkpoints:
/// the next cycle to run, and per room the last cycle that covered it.
struct CommitState {
  std::uint64_t next_cycle = 0;
  std::map<RoomId, std::uint64_t> room_watermark;  // absent: never committed
  Term newest_term;
};

inline CommitState commit_state(const std::vector<MeasurementRecord>& records) {
  CommitState st;
  for (const auto& r : records) {
    st.next_cycle = std::max(st.next_cycle, r.cycle_index + 1);
    st.newest_term = std::max(st.newest_term, r.term);
    for (auto room : r.rooms) {
      auto [it, inserted] = st.room_watermark.emplace(room, r.cycle_index);
      if (!inserted) it->second = std::max(it->second, r.cycle_index);
    }
  }
  return st;
}

}  // namespace crowdmr
