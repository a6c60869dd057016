#include <gtest/gtest.h>

#include "crowdmr/live.hpp"
#include "support.hpp"

namespace crowdmr {
namespace {

using namespace std::chrono_literals;

ScenarioSpec live_spec(std::uint32_t nodes, std::uint16_t port) {
  ScenarioSpec s;
  s.id = "live";
  s.seed = 3;
  s.cluster = ClusterConfig::local(nodes, port);
  s.cluster.heartbeat_period = 50ms;
  s.cluster.heartbeat_timeout = 250ms;
  s.cluster.check_period = 100ms;
  s.cluster.cycle_period = 1500ms;
  s.cluster.reducer_count = 2;
  s.rooms = nodes;
  s.visitors = 200;
  s.tour = 1500ms;
  s.duration = 4000ms;
  return s;
}

TEST(Endpoint, Parse) {
  auto e = parse_endpoint("127.0.0.1:47001");
  EXPECT_EQ(e.host, "127.0.0.1");
  EXPECT_EQ(e.port, 47001);
  EXPECT_THROW(parse_endpoint("127.0.0.1"), TransportError);
  EXPECT_THROW(parse_endpoint("127.0.0.1:0"), TransportError);
  EXPECT_THROW(parse_endpoint("127.0.0.1:99999"), TransportError);
}

TEST(UdpSocket, LoopbackRoundTrip) {
  Endpoint a{"127.0.0.1", 53611}, b{"127.0.0.1", 53612};
  UdpSocket sa(a), sb(b);
  sa.send_to(b, "CMR1 hello");
  auto got = sb.receive(500ms);
  ASSERT_TRUE(got);
  EXPECT_EQ(*got, "CMR1 hello");
  EXPECT_FALSE(sb.receive(10ms));
  EXPECT_THROW(UdpSocket{a}, TransportError);
  EXPECT_THROW(UdpSocket(Endpoint{"not-an-ip", 1}), TransportError);
}

TEST(LiveCluster, OneCycleMatchesTheOracle) {
  auto spec = live_spec(3, 53620);
  MemorySink sink;
  auto out = run_live(spec, sink);
  ASSERT_FALSE(out.reports.empty());
  EXPECT_EQ(out.reports[0].master, NodeId{0});
  EXPECT_EQ(committed_counts(out.reports), sequential_oracle(generate_stream(spec)).reduced);
  EXPECT_GT(out.data_messages, 0u);
  EXPECT_EQ(sink.export_records("live").size(), out.reports.size());
}

TEST(LiveCluster, MasterCrashFailsOver) {
  auto spec = live_spec(4, 53640);
  spec.faults.push_back({700ms, fault::CrashNode{NodeId{0}}});
  MemorySink sink;
  auto out = run_live(spec, sink);
  ASSERT_FALSE(out.reports.empty());
  EXPECT_NE(out.reports[0].master, NodeId{0});
  EXPECT_GT(out.reports[0].term, Term{0});
  std::vector<VisitorEvent> surviving;
  auto layout = spec.layout();
  for (const auto& e : generate_stream(spec)) {
    if (layout.host_of(e.room) != NodeId{0}) surviving.push_back(e);
  }
  EXPECT_EQ(committed_counts(out.reports), sequential_oracle(surviving).reduced);
}

}  // namespace
}  // namespace crowdmr
