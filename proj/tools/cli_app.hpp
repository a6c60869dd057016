#pragma once

// The crowdmr command line: run, replay, report and bench.
//
// Exit codes: 0 success, 1 runtime failure (I/O, replay divergence),
// 2 bad scenario file or bad usage, 3 every node died before a cycle
// committed.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "crowdmr/live.hpp"
#include "crowdmr/report.hpp"
#include "crowdmr/scenario.hpp"
#include "crowdmr/simnet.hpp"
#include "crowdmr/storage.hpp"

namespace crowdmr::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kBadInput = 2, kAllDead = 3 };

struct Options {
  std::string scenario;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  std::string format = "text";
  bool wall = false;
  bool live = false;
  int verbosity = 0;
  std::vector<std::uint64_t> counts{50, 250, 500, 1000};
};

/// Terminal report over every committed cycle.
inline std::string render_text(const ScenarioSpec& spec, const std::vector<CycleReport>& reports) {
  auto reduced = committed_counts(reports);
  auto c1 = aggregate_case1(reduced);
  auto c2 = aggregate_case2(reduced);
  std::ostringstream os;
  os << "scenario " << spec.id << " seed " << spec.seed << ": " << reports.size()
     << " cycle(s) committed, " << c1.total() << " events\n";
  os << "Case 1 (visitor, value)\n" << render_case1_text(c1);
  os << "Case 2 (room, value)\n" << render_case2_text(c2);
  for (const auto& note : reference_deviations(c1, c2, spec.references)) os << note << '\n';
  return os.str();
}

inline std::string render_csv(const std::vector<CycleReport>& reports) {
  auto reduced = committed_counts(reports);
  return csv_header() + render_csv_rows(aggregate_case1(reduced), aggregate_case2(reduced));
}

inline std::string render_cycles(const std::vector<CycleReport>& reports) {
  std::ostringstream os;
  for (const auto& r : reports) {
    os << "cycle " << r.cycle_index << " term " << r.term << " master " << r.master
       << " committed " << r.committed_at.count() << "ms events " << r.events_processed
       << " rooms";
    if (r.rooms.empty()) os << " -";
    for (std::size_t i = 0; i < r.rooms.size(); ++i) os << (i ? "," : " ") << r.rooms[i].index;
    os << '\n';
  }
  return os.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f || !(f << text)) throw SinkUnavailable("cannot write " + path.string());
}

/// Largest-remainder rescaling of a visitor matrix to `total` events.
inline VisitorMatrix scale_matrix(const VisitorMatrix& m, Count total) {
  Count sum = 0;
  for (const auto& [k, n] : m) sum += n;
  VisitorMatrix out;
  if (sum == 0) return out;
  std::vector<std::pair<Count, CompositeKey>> remainders;
  Count assigned = 0;
  for (const auto& [k, n] : m) {
    auto exact = static_cast<unsigned __int128>(n) * total;
    out[k] = static_cast<Count>(exact / sum);
    assigned += out[k];
    remainders.emplace_back(static_cast<Count>(exact % sum), k);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < total; ++i, ++assigned) ++out[remainders[i].second];
  return out;
}

class App {
 public:
  App(std::ostream& out, std::ostream& err) : out_(out), err_(err) {}

  int main(int argc, const char* const* argv) {
    CLI::App app{"Fault-tolerant crowd-counting map-reduce cluster, simulated or live", "crowdmr"};
    app.require_subcommand(1, 1);
    app.set_help_all_flag("--help-all", "Show help for every subcommand");

    auto common = [&](CLI::App* sub) {
      sub->add_option("--seed", opts_.seed, "Override the scenario seed");
      sub->add_option("--out", opts_.out_dir, "Directory for the report, CSV and storage log")
          ->capture_default_str();
      sub->add_option("--format", opts_.format, "What to print: text, csv or both")
          ->check(CLI::IsMember({"text", "csv", "both"}))
          ->capture_default_str();
      sub->add_flag("--wall", "Also print local wall-clock time");
      sub->add_flag("-v,--verbose", "More detail (repeatable)");
    };

    auto* run = app.add_subcommand("run", "Run a scenario and write its reports");
    run->add_option("scenario", opts_.scenario, "Scenario file")->required();
    run->add_flag("--live", opts_.live, "Use real UDP sockets on localhost and the wall clock");
    common(run);

    auto* replay = app.add_subcommand("replay", "Re-run a scenario and compare with its stored log");
    replay->add_option("scenario", opts_.scenario, "Scenario file")->required();
    common(replay);

    auto* report = app.add_subcommand("report", "Render the report held in a storage log");
    report->add_option("log", opts_.scenario, "Storage log file (<out>/<id>.log)")->required();
    report->add_option("--format", opts_.format, "What to print: text, csv or both")
        ->check(CLI::IsMember({"text", "csv", "both"}))
        ->capture_default_str();
    report->add_flag("-v,--verbose", "List every cycle");

    auto* bench = app.add_subcommand("bench", "Message counts and simulated latency per visitor count");
    bench->add_option("scenario", opts_.scenario, "Scenario file")->required();
    bench->add_option("--counts", opts_.counts, "Visitor counts")
        ->delimiter(',')
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    bench->add_option("--seed", opts_.seed, "Override the scenario seed");
    bench->add_flag("--wall", "Add a wall-clock column");

    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e, out_, err_);
    } catch (const CLI::CallForAllHelp& e) {
      return app.exit(e, out_, err_);
    } catch (const CLI::ParseError& e) {
      app.exit(e, out_, err_);
      return kBadInput;
    }

    // Flags shared between subcommands are read back from the one that ran.
    for (auto* sub : app.get_subcommands()) {
      auto given = [&](const char* name) {
        auto* o = sub->get_option_no_throw(name);
        return o ? o->count() : std::size_t{0};
      };
      opts_.verbosity = static_cast<int>(given("--verbose"));
      opts_.wall = given("--wall") > 0;
    }

    try {
      if (*run) return cmd_run();
      if (*replay) return cmd_replay();
      if (*report) return cmd_report();
      return cmd_bench();
    } catch (const ScenarioParseError& e) {
      err_ << opts_.scenario << ":" << e.what() << '\n';
      return kBadInput;
    } catch (const Error& e) {
      err_ << "error: " << e.what() << '\n';
      return kFailure;
    } catch (const std::exception& e) {
      err_ << "error: " << e.what() << '\n';
      return kFailure;
    }
  }

 private:
  ScenarioSpec load() const {
    auto spec = load_scenario(opts_.scenario);
    if (opts_.seed) spec.seed = *opts_.seed;
    return spec;
  }

  void print(const ScenarioSpec& spec, const std::vector<CycleReport>& reports) {
    if (opts_.format != "csv") out_ << render_text(spec, reports);
    if (opts_.format != "text") out_ << render_csv(reports);
    if (opts_.verbosity > 0) out_ << render_cycles(reports);
  }

  int cmd_run() {
    auto spec = load();
    std::filesystem::path dir(opts_.out_dir);
    std::filesystem::create_directories(dir);
    FileSink sink(dir);
    std::filesystem::remove(sink.path_for(spec.id));  // a run starts a fresh log

    auto t0 = std::chrono::steady_clock::now();
    std::vector<CycleReport> reports;
    ScenarioOutcome outcome;
    if (opts_.live) {
      reports = run_live(spec, sink).reports;
    } else {
      outcome = run_scenario(spec, sink);
      reports = outcome.reports;
    }
    auto wall = std::chrono::steady_clock::now() - t0;

    write_file(dir / (spec.id + ".txt"), render_text(spec, reports));
    write_file(dir / (spec.id + ".csv"), render_csv(reports));
    print(spec, reports);
    if (opts_.verbosity > 0 && !opts_.live) {
      const auto& s = outcome.stats;
      out_ << "messages " << s.messages_sent << " data " << s.data_messages << " data_bytes "
           << s.data_bytes << " dropped " << s.dropped << " duplicated " << s.duplicated
           << " malformed " << s.malformed << '\n';
    }
    if (opts_.wall) {
      out_ << "wall " << std::chrono::duration_cast<Millis>(wall).count() << "ms\n";
    }
    if (outcome.all_nodes_dead && reports.empty()) {
      err_ << "all nodes dead at " << outcome.died_at->count()
           << "ms before the first cycle committed\n";
      return kAllDead;
    }
    return kOk;
  }

  int cmd_replay() {
    auto spec = load();
    FileSink stored(opts_.out_dir);
    auto path = stored.path_for(spec.id);
    std::ifstream in(path, std::ios::binary);
    if (!in) {
      err_ << "error: no stored log at " << path.string() << '\n';
      return kFailure;
    }
    std::string before((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    MemorySink sink;
    auto outcome = run_scenario(spec, sink);
    auto after = sink.log_text(spec.id);
    if (before != after) {
      std::size_t line = 1;
      for (std::size_t i = 0; i < std::min(before.size(), after.size()) && before[i] == after[i];
           ++i) {
        if (before[i] == '\n') ++line;
      }
      err_ << "replay diverges from " << path.string() << " at line " << line << '\n';
      return kFailure;
    }
    print(spec, outcome.reports);
    out_ << "replay matches " << path.string() << " (" << outcome.reports.size()
         << " records)\n";
    return kOk;
  }

  int cmd_report() {
    auto records = FileSink::read_file(opts_.scenario);
    detail::sort_records(records);
    std::vector<CycleReport> reports;
    for (const auto& r : records) {
      CycleReport c;
      c.cycle_index = r.cycle_index;
      c.term = r.term;
      c.master = r.master;
      c.case1 = r.case1;
      c.case2 = r.case2;
      c.events_processed = r.case1.total();
      c.committed_at = r.ingest;
      c.rooms = r.rooms;
      reports.push_back(std::move(c));
    }
    ScenarioSpec spec;
    spec.id = records.empty() ? std::filesystem::path(opts_.scenario).stem().string()
                              : records.front().scenario_id;
    spec.seed = 0;
    if (opts_.format != "csv") {
      auto text = render_text(spec, reports);
      out_ << text.substr(text.find('\n') + 1);  // the seed is not in the log
    }
    if (opts_.format != "text") out_ << render_csv(reports);
    if (opts_.verbosity > 0) out_ << render_cycles(reports);
    return kOk;
  }

  int cmd_bench() {
    auto base = load();
    out_ << "visitors,cycles,commit_latency_ms,messages,data_messages,data_bytes,oracle_match"
         << (opts_.wall ? ",wall_ms" : "") << '\n';
    for (auto count : opts_.counts) {
      auto spec = base;
      spec.faults.clear();
      if (spec.matrix.empty()) {
        spec.visitors = count;
      } else {
        spec.matrix = scale_matrix(spec.matrix, count);
        spec.visitors = count;
      }
      auto t0 = std::chrono::steady_clock::now();
      MemorySink sink;
      Simulation sim(spec, sink);
      auto outcome = sim.run();
      auto wall = std::chrono::steady_clock::now() - t0;

      auto oracle = sequential_oracle(sim.events());
      bool match = committed_counts(outcome.reports) == oracle.reduced;
      long long latency = -1;
      if (!outcome.reports.empty()) {
        const auto& r = outcome.reports.front();
        latency = (r.committed_at - spec.cluster.cycle_period *
                                        static_cast<Millis::rep>(r.cycle_index + 1))
                      .count();
      }
      out_ << count << ',' << outcome.reports.size() << ',' << latency << ','
           << outcome.stats.messages_sent << ',' << outcome.stats.data_messages << ','
           << outcome.stats.data_bytes << ',' << (match ? "yes" : "no");
      if (opts_.wall) out_ << ',' << std::chrono::duration_cast<Millis>(wall).count();
      out_ << '\n';
    }
    return kOk;
  }

  std::ostream& out_;
  std::ostream& err_;
  Options opts_;
};

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  return App(out, err).main(argc, argv);
}

}  // namespace crowdmr::cli
