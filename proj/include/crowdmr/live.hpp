#pragma once

// Live mode: the same Node logic on real UDP sockets and the wall clock.
// Every node runs its own event loop on its own thread and socket; nothing
// mutable is shared between nodes except the report sink and the link
// filter that stands in for scripted partitions and drop rates.

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "crowdmr/node.hpp"
#include "crowdmr/simnet.hpp"

namespace crowdmr {

class TransportError : public Error {
 public:
  using Error::Error;
};

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;
};

inline Endpoint parse_endpoint(const std::string& text) {
  auto colon = text.rfind(':');
  std::uint64_t port = 0;
  if (colon == std::string::npos ||
      !detail::parse_u64(std::string_view(text).substr(colon + 1), port) || port == 0 ||
      port > 65535) {
    throw TransportError("bad endpoint '" + text + "', expected host:port");
  }
  return {text.substr(0, colon), static_cast<std::uint16_t>(port)};
}

/// A bound, non-blocking IPv4 datagram socket.
class UdpSocket {
 public:
  explicit UdpSocket(const Endpoint& local) {
    fd_ = ::socket(AF_INET, SOCK_DGRAM | SOCK_CLOEXEC, 0);
    if (fd_ < 0) throw TransportError(std::string("socket: ") + std::strerror(errno));
    auto addr = to_sockaddr(local);
    if (::bind(fd_, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0) {
      int err = errno;
      ::close(fd_);
      throw TransportError("bind " + local.host + ":" + std::to_string(local.port) + ": " +
                           std::strerror(err));
    }
  }

  UdpSocket(const UdpSocket&) = delete;
  UdpSocket& operator=(const UdpSocket&) = delete;
  ~UdpSocket() { ::close(fd_); }

  /// Best effort, like the network underneath.
  void send_to(const Endpoint& to, std::string_view frame) const {
    auto addr = to_sockaddr(to);
    (void)::sendto(fd_, frame.data(), frame.size(), 0, reinterpret_cast<const sockaddr*>(&addr),
                   sizeof addr);
  }

  /// Waits up to `timeout` for one datagram.
  std::optional<std::string> receive(Millis timeout) const {
    pollfd p{fd_, POLLIN, 0};
    int r = ::poll(&p, 1, static_cast<int>(std::max<Millis::rep>(0, timeout.count())));
    if (r <= 0) return std::nullopt;
    char buf[kMaxFrameBytes + 64];
    auto n = ::recv(fd_, buf, sizeof buf, MSG_DONTWAIT);
    if (n < 0) return std::nullopt;
    return std::string(buf, static_cast<std::size_t>(n));
  }

 private:
  static sockaddr_in to_sockaddr(const Endpoint& e) {
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(e.port);
    if (::inet_pton(AF_INET, e.host.c_str(), &addr.sin_addr) != 1) {
      throw TransportError("not an IPv4 address: " + e.host);
    }
    return addr;
  }

  int fd_ = -1;
};

struct LiveOutcome {
  std::vector<CycleReport> reports;
  std::uint64_t messages_sent = 0;
  std::uint64_t data_messages = 0;
  Millis ran_for{0};
};

/// Runs a scenario against the wall clock. Partitions and drop rates are
/// applied on the sending side; link delays are whatever the host gives.
class LiveCluster {
 public:
  LiveCluster(ScenarioSpec spec, ReportSink& sink) : spec_(std::move(spec)), sink_(sink) {
    spec_.validate();
    sink_.open_scenario(spec_.id);
    layout_ = spec_.layout();
    for (const auto& [id, text] : spec_.cluster.endpoints) endpoints_[id] = parse_endpoint(text);
    for (const auto& e : generate_stream(spec_)) events_[layout_.host_of(e.room)].push_back(e);
    for (auto id : spec_.cluster.node_ids()) {
      control_[id] = std::make_unique<Control>();
      events_[id];
    }
  }

  LiveOutcome run() {
    start_ = std::chrono::steady_clock::now();
    std::vector<std::unique_ptr<UdpSocket>> sockets;
    for (const auto& [id, ep] : endpoints_) sockets.push_back(std::make_unique<UdpSocket>(ep));
    std::vector<std::thread> threads;
    std::size_t i = 0;
    for (const auto& [id, ep] : endpoints_) {
      threads.emplace_back([this, id = id, sock = sockets[i++].get()] { node_loop(id, *sock); });
    }
    auto faults = spec_.faults;
    std::stable_sort(faults.begin(), faults.end(),
                     [](const auto& a, const auto& b) { return a.at < b.at; });
    for (const auto& f : faults) {
      if (f.at >= spec_.duration) break;
      std::this_thread::sleep_until(start_ + f.at);
      apply_fault(f);
    }
    for (auto& t : threads) t.join();
    LiveOutcome out;
    std::lock_guard lock(mu_);
    out.reports = reports_;
    std::stable_sort(out.reports.begin(), out.reports.end(),
                     [](const auto& a, const auto& b) { return a.cycle_index < b.cycle_index; });
    out.messages_sent = sent_;
    out.data_messages = data_sent_;
    out.ran_for = elapsed();
    return out;
  }

 private:
  struct Control {
    std::atomic<bool> crash{false};
    std::atomic<bool> recover{false};
  };

  Millis elapsed() const {
    return std::chrono::duration_cast<Millis>(std::chrono::steady_clock::now() - start_);
  }

  void apply_fault(const FaultEvent& f) {
    std::visit(
        [&](const auto& k) {
          using K = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<K, fault::CrashNode>) {
            control_.at(k.node)->crash = true;
          } else if constexpr (std::is_same_v<K, fault::RecoverNode>) {
            control_.at(k.node)->recover = true;
          } else {
            std::lock_guard lock(mu_);
            if constexpr (std::is_same_v<K, fault::Partition>) {
              partitions_.push_back(k);
            } else if constexpr (std::is_same_v<K, fault::Heal>) {
              partitions_.clear();
            } else {
              drop_all_ = k.probability;  // per-link rates apply cluster-wide here
            }
          }
        },
        f.kind);
  }

  bool blocked(NodeId from, NodeId to, Rng& rng) {
    std::lock_guard lock(mu_);
    for (const auto& p : partitions_) {
      if ((p.a.count(from) && p.b.count(to)) || (p.b.count(from) && p.a.count(to))) return true;
    }
    if (from == to) return false;
    return rng.chance(drop_all_.value_or(spec_.link.drop_probability));
  }

  void node_loop(NodeId id, const UdpSocket& sock) {
    Rng rng(spec_.seed ^ (0x9e3779b97f4a7c15ULL * (id.value + 1)));
    auto& ctl = *control_.at(id);
    const auto& mine = events_.at(id);
    std::size_t next_event = 0;
    auto boot = [&](bool first) {
      return std::make_unique<Node>(id, spec_.cluster, Node::Options{spec_.id, layout_, first},
                                    sink_, elapsed());
    };
    auto node = boot(true);
    Millis next_tick = elapsed();

    auto flush = [&] {
      for (auto& rec : node->take_commits()) {
        CycleReport r;
        r.cycle_index = rec.cycle_index;
        r.term = rec.term;
        r.master = rec.master;
        r.case1 = rec.case1;
        r.case2 = rec.case2;
        r.events_processed = rec.case1.total();
        r.committed_at = rec.ingest;
        r.rooms = rec.rooms;
        std::lock_guard lock(mu_);
        reports_.push_back(std::move(r));
      }
      auto out = node->take_outbox();
      std::uint64_t data = 0;
      for (const auto& env : out) {
        if (env.frame.find(" MAP_OUT ") != std::string::npos ||
            env.frame.find(" RED_OUT ") != std::string::npos) {
          ++data;
        }
        if (!blocked(id, env.to, rng)) sock.send_to(endpoints_.at(env.to), env.frame);
      }
      std::lock_guard lock(mu_);
      sent_ += out.size();
      data_sent_ += data;
    };
    flush();

    while (true) {
      auto now = elapsed();
      if (now >= spec_.duration) break;
      if (ctl.crash.exchange(false)) node.reset();
      if (ctl.recover.exchange(false) && !node) {
        node = boot(false);
        next_tick = now;
        flush();
      }
      while (next_event < mine.size() && mine[next_event].timestamp <= now) {
        if (node) node->on_sensor(mine[next_event]);
        ++next_event;
      }
      if (!node) {
        (void)sock.receive(Millis{5});  // a dead node hears nothing
        continue;
      }
      if (now >= next_tick) {
        node->on_tick(now);
        next_tick += spec_.cluster.heartbeat_period;
        flush();
      }
      auto wait = std::min<Millis>(next_tick - elapsed(), Millis{5});
      if (auto frame = sock.receive(wait)) {
        node->on_frame(*frame, elapsed());
        flush();
      }
    }
  }

  ScenarioSpec spec_;
  ReportSink& sink_;
  RoomLayout layout_;
  std::map<NodeId, Endpoint> endpoints_;
  std::map<NodeId, std::vector<VisitorEvent>> events_;
  std::map<NodeId, std::unique_ptr<Control>> control_;
  std::chrono::steady_clock::time_point start_;

  std::mutex mu_;
  std::vector<fault::Partition> partitions_;
  std::optional<double> drop_all_;
  std::vector<CycleReport> reports_;
  std::uint64_t sent_ = 0;
  std::uint64_t data_sent_ = 0;
};

inline LiveOutcome run_live(const ScenarioSpec& spec, ReportSink& sink) {
  return LiveCluster(spec, sink).run();
}

}  // namespace crowdmr
